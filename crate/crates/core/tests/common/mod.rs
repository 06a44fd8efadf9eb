#![allow(dead_code)]

use ppm_core::encode::{FeatureMatrix, RowMeta};
use ppm_core::label::Label;
use ppm_core::prelude::*;
use proptest::prelude::*;

pub fn ts(secs: i64) -> Timestamp {
    Timestamp::from_secs(secs)
}

/// Traces of 1..=6 events over activities A..E with increasing times.
pub fn arb_log() -> impl Strategy<Value = EventLog> {
    let trace = (0i64..50_000, prop::collection::vec((0usize..5, 1i64..7_200), 1..=6), 0i64..100);
    prop::collection::vec(trace, 1..12).prop_map(|traces| {
        let traces = traces
            .into_iter()
            .enumerate()
            .map(|(i, (start, steps, amount))| {
                let mut t = start;
                let events = steps
                    .into_iter()
                    .map(|(a, gap)| {
                        t += gap;
                        Event::new(["A", "B", "C", "D", "E"][a], ts(t))
                    })
                    .collect();
                Trace::new(format!("c{i:02}"), events).with_attr("amount", AttributeValue::Integer(amount))
            })
            .collect();
        EventLog::new("generated", traces).unwrap()
    })
}

pub fn matrix(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> FeatureMatrix {
    let width = rows.first().map_or(0, Vec::len);
    let row_meta = (0..rows.len())
        .map(|i| RowMeta { trace_id: format!("t{i:04}"), prefix_length: 1, bucket: None, prefix_end: None })
        .collect();
    FeatureMatrix { feature_names: (0..width).map(|i| format!("x{i}")).collect(), rows, labels, row_meta }
}

pub fn class(s: &str) -> Label {
    Label::Class(s.to_string())
}
