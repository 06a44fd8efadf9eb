//! Synthetic event logs with a planted outcome signal.
//!
//! Every case starts with `register`, then takes `triage_fast` or
//! `triage_full`. The triage branch decides whether the case finishes in a
//! few hours or in most of a day, so the outcome "duration at most the mean"
//! is readable from the second event. A small fraction of cases gets the
//! opposite duration as label noise. The remaining activities, resources and
//! attributes are independent of the outcome.

use std::collections::BTreeMap;

use ppm_core::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RESOURCES: [&str; 4] = ["ann", "bob", "cyd", "dee"];
const CHANNELS: [&str; 3] = ["web", "phone", "branch"];
/// 2021-01-01T00:00:00Z
const ORIGIN_SECS: i64 = 1_609_459_200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub traces: usize,
    pub seed: u64,
    /// Fraction of cases whose duration contradicts their triage branch.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(traces: usize, seed: u64) -> Self {
        SynthSpec { traces, seed, noise: 0.05 }
    }
}

pub fn planted_log(spec: &SynthSpec) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut traces = Vec::with_capacity(spec.traces);
    for i in 0..spec.traces {
        let fast = rng.random_bool(0.5);
        let slow_time = fast == rng.random_bool(spec.noise);
        // cases start 20 minutes apart so many of them overlap
        let start = ORIGIN_SECS + i as i64 * 1200 + rng.random_range(0..600);
        let mut steps: Vec<&str> = vec!["register", if fast { "triage_fast" } else { "triage_full" }];
        for _ in 0..rng.random_range(0..3) {
            steps.push("review");
        }
        steps.push(if rng.random_bool(0.5) { "assess" } else { "inspect" });
        steps.push("decide");
        steps.push("close");
        let total = if slow_time { rng.random_range(8.0..12.0) } else { rng.random_range(2.0..4.0) } * 3600.0;
        let gap = total / (steps.len() - 1) as f64;
        let events = steps
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let at = start + (gap * k as f64).round() as i64;
                Event::new(*a, Timestamp::from_secs(at))
                    .with_resource(RESOURCES[rng.random_range(0..RESOURCES.len())])
                    .with_attr("amount", AttributeValue::Integer(rng.random_range(10..500)))
            })
            .collect();
        let mut attributes = BTreeMap::new();
        attributes.insert("channel".to_string(), AttributeValue::String(CHANNELS[rng.random_range(0..3)].into()));
        attributes.insert("priority".to_string(), AttributeValue::Integer(rng.random_range(1..4)));
        // present on only some cases
        if rng.random_bool(0.5) {
            attributes.insert("survey".to_string(), AttributeValue::String(if rng.random_bool(0.5) { "yes" } else { "no" }.into()));
        }
        traces.push(Trace { id: format!("case-{i:04}"), events, attributes });
    }
    EventLog::new(format!("planted-{}-{}", spec.traces, spec.seed), traces).expect("generated traces are valid")
}
