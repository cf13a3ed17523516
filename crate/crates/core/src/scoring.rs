//! Multi-metric scalarization.
//!
//! A task declares each metric's preferred direction and weight plus the
//! direction of its headline score. The reported score is computed in the
//! task's display orientation; the combined score used inside the engine is
//! the reported score flipped to higher-is-better.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDirection {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTransform {
    WeightedSum,
    WeightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDecl {
    pub name: String,
    pub direction: MetricDirection,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl MetricDecl {
    pub fn new(name: &str, direction: MetricDirection, weight: f64) -> Self {
        MetricDecl { name: name.into(), direction, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub metrics: Vec<MetricDecl>,
    pub transform: ScoreTransform,
    /// Orientation of the reported score.
    pub score_direction: MetricDirection,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("metric `{0}` is missing")]
    MissingMetric(String),
    #[error("metric `{0}` is not finite")]
    NonFiniteMetric(String),
    #[error("invalid scoring rule: {0}")]
    InvalidRule(&'static str),
}

impl ScoringRule {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.metrics.is_empty() {
            return Err(ScoringError::InvalidRule("at least one metric is required"));
        }
        if self.metrics.iter().any(|m| !m.weight.is_finite() || m.weight < 0.0) {
            return Err(ScoringError::InvalidRule("weights must be finite and non-negative"));
        }
        if self.metrics.iter().map(|m| m.weight).sum::<f64>() <= 0.0 {
            return Err(ScoringError::InvalidRule("weights must not sum to zero"));
        }
        Ok(())
    }

    pub fn metric_names(&self) -> impl Iterator<Item = &str> {
        self.metrics.iter().map(|m| m.name.as_str())
    }
}

/// Returns `(reported_score, combined_score)`.
///
/// Metrics whose direction opposes the score direction enter with a negative
/// sign, so improving any single metric always moves the combined score up.
pub fn combine(metrics: &BTreeMap<String, f64>, rule: &ScoringRule) -> Result<(f64, f64), ScoringError> {
    rule.validate()?;
    let mut acc = 0.0;
    let mut weight_sum = 0.0;
    for decl in &rule.metrics {
        let value = *metrics.get(&decl.name).ok_or_else(|| ScoringError::MissingMetric(decl.name.clone()))?;
        if !value.is_finite() {
            return Err(ScoringError::NonFiniteMetric(decl.name.clone()));
        }
        let sign = if decl.direction == rule.score_direction { 1.0 } else { -1.0 };
        acc += sign * decl.weight * value;
        weight_sum += decl.weight;
    }
    let reported = match rule.transform {
        ScoreTransform::WeightedSum => acc,
        ScoreTransform::WeightedMean => acc / weight_sum,
    };
    let combined = match rule.score_direction {
        MetricDirection::Maximize => reported,
        MetricDirection::Minimize => -reported,
    };
    Ok((reported, combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn metrics(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn sak() -> ScoringRule {
        ScoringRule {
            metrics: vec![
                MetricDecl::new("density", MetricDirection::Minimize, 1.0),
                MetricDecl::new("error", MetricDirection::Minimize, 1.0),
            ],
            transform: ScoreTransform::WeightedMean,
            score_direction: MetricDirection::Minimize,
        }
    }

    #[test]
    fn mean_of_two_minimize_metrics() {
        let (reported, combined) = combine(&metrics(&[("density", 0.676), ("error", 0.496)]), &sak()).unwrap();
        assert!((reported - 0.586).abs() < 5e-4);
        assert_eq!(combined, -reported);
    }

    #[test]
    fn sum_of_two_maximize_metrics() {
        let rule = ScoringRule {
            metrics: vec![
                MetricDecl::new("pressure", MetricDirection::Maximize, 1.0),
                MetricDecl::new("success", MetricDirection::Maximize, 1.0),
            ],
            transform: ScoreTransform::WeightedSum,
            score_direction: MetricDirection::Maximize,
        };
        let (reported, combined) = combine(&metrics(&[("pressure", 23.02), ("success", 1.0)]), &rule).unwrap();
        assert!((reported - 24.02).abs() < 5e-4);
        assert_eq!(combined, reported);
    }

    #[test]
    fn single_metric_identity() {
        let rule = ScoringRule {
            metrics: vec![MetricDecl::new("q", MetricDirection::Maximize, 1.0)],
            transform: ScoreTransform::WeightedSum,
            score_direction: MetricDirection::Maximize,
        };
        assert_eq!(combine(&metrics(&[("q", 0.37)]), &rule).unwrap(), (0.37, 0.37));
    }

    #[test]
    fn missing_and_non_finite_metrics() {
        assert_eq!(
            combine(&metrics(&[("density", 0.5)]), &sak()),
            Err(ScoringError::MissingMetric("error".into()))
        );
        assert_eq!(
            combine(&metrics(&[("density", 0.5), ("error", f64::NAN)]), &sak()),
            Err(ScoringError::NonFiniteMetric("error".into()))
        );
    }

    #[test]
    fn invalid_rules() {
        let mut r = sak();
        r.metrics.iter_mut().for_each(|m| m.weight = 0.0);
        assert!(matches!(r.validate(), Err(ScoringError::InvalidRule(_))));
        r.metrics.clear();
        assert!(matches!(r.validate(), Err(ScoringError::InvalidRule(_))));
    }

    fn direction() -> impl Strategy<Value = MetricDirection> {
        prop_oneof![Just(MetricDirection::Maximize), Just(MetricDirection::Minimize)]
    }

    proptest! {
        // improving one metric in its own direction strictly raises the combined score
        #[test]
        fn direction_soundness(
            values in proptest::collection::vec(-100.0f64..100.0, 1..5),
            dirs in proptest::collection::vec(direction(), 5),
            weights in proptest::collection::vec(0.1f64..3.0, 5),
            score_dir in direction(),
            mean in any::<bool>(),
            which in 0usize..5,
            step in 0.01f64..10.0,
        ) {
            let n = values.len();
            let which = which % n;
            let rule = ScoringRule {
                metrics: (0..n).map(|i| MetricDecl { name: alloc::format!("m{i}"), direction: dirs[i], weight: weights[i] }).collect(),
                transform: if mean { ScoreTransform::WeightedMean } else { ScoreTransform::WeightedSum },
                score_direction: score_dir,
            };
            let base: BTreeMap<String, f64> = (0..n).map(|i| (alloc::format!("m{i}"), values[i])).collect();
            let mut better = base.clone();
            let v = better.get_mut(&alloc::format!("m{which}")).unwrap();
            *v += if dirs[which] == MetricDirection::Maximize { step } else { -step };
            let (_, before) = combine(&base, &rule).unwrap();
            let (_, after) = combine(&better, &rule).unwrap();
            prop_assert!(after > before);
        }
    }
}
