use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::math::{exp, ln};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(i64),
    Real(f64),
    Text(String),
}

impl HpValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HpValue::Int(i) => Some(*i as f64),
            HpValue::Real(r) => Some(*r),
            HpValue::Text(_) => None,
        }
    }
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpValue::Int(i) => write!(f, "{i}"),
            HpValue::Real(r) => write!(f, "{r}"),
            HpValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for HpValue {
    fn from(v: i64) -> Self {
        HpValue::Int(v)
    }
}

impl From<f64> for HpValue {
    fn from(v: f64) -> Self {
        HpValue::Real(v)
    }
}

impl From<&str> for HpValue {
    fn from(v: &str) -> Self {
        HpValue::Text(v.to_string())
    }
}

pub type Assignment = BTreeMap<String, HpValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    /// Inclusive integer range.
    IntRange { lo: i64, hi: i64 },
    /// Continuous range, sampled uniformly or log-uniformly.
    RealRange {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log_scale: bool,
    },
    Choice { values: Vec<HpValue> },
}

impl Domain {
    pub fn int(lo: i64, hi: i64) -> Self {
        Domain::IntRange { lo, hi }
    }

    pub fn real(lo: f64, hi: f64) -> Self {
        Domain::RealRange { lo, hi, log_scale: false }
    }

    pub fn log_real(lo: f64, hi: f64) -> Self {
        Domain::RealRange { lo, hi, log_scale: true }
    }

    pub fn choice<T: Into<HpValue>>(values: impl IntoIterator<Item = T>) -> Self {
        Domain::Choice { values: values.into_iter().map(Into::into).collect() }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Domain::IntRange { lo, hi } => lo <= hi,
            Domain::RealRange { lo, hi, log_scale } => lo.is_finite() && hi.is_finite() && lo <= hi && (!log_scale || *lo > 0.0),
            Domain::Choice { values } => !values.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("hyperparameter `{name}` has an empty or malformed domain")))
        }
    }

    pub fn contains(&self, value: &HpValue) -> bool {
        match (self, value) {
            (Domain::IntRange { lo, hi }, HpValue::Int(v)) => lo <= v && v <= hi,
            (Domain::RealRange { lo, hi, .. }, v) => v.as_f64().is_some_and(|x| *lo <= x && x <= *hi),
            (Domain::Choice { values }, v) => values.contains(v),
            _ => false,
        }
    }

    /// Finite enumeration, or `None` for continuous ranges.
    pub fn enumerate(&self) -> Option<Vec<HpValue>> {
        match self {
            Domain::IntRange { lo, hi } => Some((*lo..=*hi).map(HpValue::Int).collect()),
            Domain::RealRange { .. } => None,
            Domain::Choice { values } => Some(values.clone()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> HpValue {
        match self {
            Domain::IntRange { lo, hi } => HpValue::Int(rng.random_range(*lo..=*hi)),
            Domain::RealRange { lo, hi, log_scale: false } => HpValue::Real(lo + (hi - lo) * rng.random::<f64>()),
            Domain::RealRange { lo, hi, log_scale: true } => {
                let (a, b) = (ln(*lo), ln(*hi));
                HpValue::Real(exp(a + (b - a) * rng.random::<f64>()))
            }
            Domain::Choice { values } => values[rng.random_range(0..values.len())].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperparameterSpace(pub BTreeMap<String, Domain>);

impl HyperparameterSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, domain: Domain) -> Self {
        self.0.insert(name.to_string(), domain);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Domain> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Domain)> {
        self.0.iter()
    }
}

impl Algorithm {
    /// Declared hyperparameters and their legal domains.
    pub fn space(self) -> HyperparameterSpace {
        let s = HyperparameterSpace::new();
        match self {
            Algorithm::DecisionTree => s
                .with("max_depth", Domain::int(1, 32))
                .with("min_samples_split", Domain::int(2, 1000))
                .with("min_samples_leaf", Domain::int(1, 500)),
            Algorithm::RandomForest => s
                .with("n_trees", Domain::int(1, 500))
                .with("max_depth", Domain::int(1, 32))
                .with("min_samples_leaf", Domain::int(1, 500))
                .with("max_features", Domain::choice(["sqrt", "all"]))
                .with("bootstrap", Domain::choice(["true", "false"])),
            Algorithm::GradientBoostedTrees => s
                .with("n_estimators", Domain::int(1, 1000))
                .with("learning_rate", Domain::log_real(1e-3, 1.0))
                .with("max_depth", Domain::int(1, 8)),
            Algorithm::LogisticOrLinearSgd => s
                .with("epochs", Domain::int(1, 10_000))
                .with("learning_rate", Domain::log_real(1e-4, 10.0))
                .with("l2", Domain::real(0.0, 1.0)),
            Algorithm::Knn => s.with("k", Domain::int(1, 1000)),
        }
    }

    pub fn defaults(self) -> Assignment {
        let pairs: Vec<(&str, HpValue)> = match self {
            Algorithm::DecisionTree => {
                vec![("max_depth", 8.into()), ("min_samples_split", 2.into()), ("min_samples_leaf", 1.into())]
            }
            Algorithm::RandomForest => vec![
                ("n_trees", 30.into()),
                ("max_depth", 8.into()),
                ("min_samples_leaf", 1.into()),
                ("max_features", "sqrt".into()),
                ("bootstrap", "true".into()),
            ],
            Algorithm::GradientBoostedTrees => {
                vec![("n_estimators", 50.into()), ("learning_rate", 0.1.into()), ("max_depth", 3.into())]
            }
            Algorithm::LogisticOrLinearSgd => {
                vec![("epochs", 200.into()), ("learning_rate", 1.0.into()), ("l2", 1e-4.into())]
            }
            Algorithm::Knn => vec![("k", 5.into())],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Small finite space used by grid and random search when the caller
    /// supplies none.
    pub fn default_search_space(self) -> HyperparameterSpace {
        let s = HyperparameterSpace::new();
        match self {
            Algorithm::DecisionTree => {
                s.with("max_depth", Domain::choice([2i64, 4, 6, 8])).with("min_samples_leaf", Domain::choice([1i64, 5]))
            }
            Algorithm::RandomForest => {
                s.with("n_trees", Domain::choice([10i64, 30])).with("max_depth", Domain::choice([4i64, 8]))
            }
            Algorithm::GradientBoostedTrees => s
                .with("n_estimators", Domain::choice([20i64, 50]))
                .with("learning_rate", Domain::choice([0.05, 0.2])),
            Algorithm::LogisticOrLinearSgd => {
                s.with("learning_rate", Domain::choice([0.1, 1.0])).with("l2", Domain::choice([1e-4, 1e-2]))
            }
            Algorithm::Knn => s.with("k", Domain::choice([3i64, 5, 9])),
        }
    }

    /// Checks an assignment against the declared space and fills defaults.
    pub fn resolve(self, assignment: &Assignment) -> Result<Assignment> {
        let space = self.space();
        let mut out = self.defaults();
        for (name, value) in assignment {
            let domain = space
                .get(name)
                .ok_or_else(|| Error::validation(format!("{} has no hyperparameter `{name}`", self.name())))?;
            if !domain.contains(value) {
                return Err(Error::validation(format!("hyperparameter `{name}` = {value} lies outside its domain")));
            }
            out.insert(name.clone(), value.clone());
        }
        Ok(out)
    }
}

/// Typed reads from a resolved assignment.
pub(crate) struct Params<'a>(pub &'a Assignment);

impl Params<'_> {
    pub fn int(&self, name: &str) -> usize {
        match self.0.get(name) {
            Some(HpValue::Int(v)) => (*v).max(0) as usize,
            Some(HpValue::Real(v)) => *v as usize,
            _ => 0,
        }
    }

    pub fn real(&self, name: &str) -> f64 {
        self.0.get(name).and_then(HpValue::as_f64).unwrap_or(0.0)
    }

    pub fn text(&self, name: &str) -> &str {
        match self.0.get(name) {
            Some(HpValue::Text(s)) => s,
            _ => "",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_lie_in_declared_space() {
        for alg in Algorithm::ALL {
            let space = alg.space();
            for (name, value) in alg.defaults() {
                assert!(space.get(&name).unwrap().contains(&value), "{alg:?} {name}");
            }
            for (name, domain) in alg.default_search_space().iter() {
                for v in domain.enumerate().unwrap() {
                    assert!(space.get(name).unwrap().contains(&v), "{alg:?} {name}={v}");
                }
            }
        }
    }

    #[test]
    fn resolve_rejects_unknown_and_out_of_range() {
        let mut a = Assignment::new();
        a.insert("depth".into(), 3.into());
        assert!(Algorithm::DecisionTree.resolve(&a).is_err());
        let mut a = Assignment::new();
        a.insert("max_depth".into(), 0.into());
        assert!(Algorithm::DecisionTree.resolve(&a).is_err());
        let mut a = Assignment::new();
        a.insert("max_depth".into(), 3.into());
        assert_eq!(Algorithm::DecisionTree.resolve(&a).unwrap()["max_depth"], HpValue::Int(3));
    }

    #[test]
    fn samples_stay_in_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [Domain::int(2, 4), Domain::real(0.5, 0.7), Domain::log_real(1e-3, 1.0), Domain::choice(["a", "b"])] {
            for _ in 0..200 {
                assert!(d.contains(&d.sample(&mut rng)));
            }
        }
    }

    #[test]
    fn hp_values_parse_untagged() {
        let v: Vec<HpValue> = serde_json::from_str(r#"[3, 0.5, "sqrt"]"#).unwrap();
        assert_eq!(v, [HpValue::Int(3), HpValue::Real(0.5), HpValue::Text("sqrt".into())]);
    }
}
