//! Parent→child score deltas, trajectory categories and category-weighted
//! trajectory sampling.
//!
//! Deltas follow the `parent - child` convention: with higher-is-better
//! scores an improving step has a negative delta.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::RecordId;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("non-finite score in step classification")]
    NonFiniteScore,
    #[error("category weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("no trajectories to sample from")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDirection {
    Improve,
    Decline,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryCategory {
    ConsistentImprovement,
    MixedFluctuation,
    ConsistentDecline,
}

impl TrajectoryCategory {
    pub const ALL: [TrajectoryCategory; 3] = [
        TrajectoryCategory::ConsistentImprovement,
        TrajectoryCategory::MixedFluctuation,
        TrajectoryCategory::ConsistentDecline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryCategory::ConsistentImprovement => "consistent improvement",
            TrajectoryCategory::MixedFluctuation => "mixed fluctuation",
            TrajectoryCategory::ConsistentDecline => "consistent decline",
        }
    }

    fn index(self) -> usize {
        match self {
            TrajectoryCategory::ConsistentImprovement => 0,
            TrajectoryCategory::MixedFluctuation => 1,
            TrajectoryCategory::ConsistentDecline => 2,
        }
    }

    /// Category of a non-empty direction sequence. Neutral steps are neither
    /// improving nor declining, so any neutral step makes the chain mixed.
    pub fn of_directions<I: IntoIterator<Item = StepDirection>>(directions: I) -> Self {
        let (mut all_improve, mut all_decline) = (true, true);
        for d in directions {
            all_improve &= d == StepDirection::Improve;
            all_decline &= d == StepDirection::Decline;
        }
        match (all_improve, all_decline) {
            (true, false) => TrajectoryCategory::ConsistentImprovement,
            (false, true) => TrajectoryCategory::ConsistentDecline,
            _ => TrajectoryCategory::MixedFluctuation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub parent_record: RecordId,
    pub child_record: RecordId,
    pub delta: f64,
    pub direction: StepDirection,
}

/// Delta (`parent - child`) and direction of one lineage edge.
pub fn classify_step(parent_score: f64, child_score: f64) -> Result<(f64, StepDirection), TrajectoryError> {
    if !parent_score.is_finite() || !child_score.is_finite() {
        return Err(TrajectoryError::NonFiniteScore);
    }
    let delta = parent_score - child_score;
    let direction = if delta < 0.0 {
        StepDirection::Improve
    } else if delta > 0.0 {
        StepDirection::Decline
    } else {
        StepDirection::Neutral
    };
    Ok((delta, direction))
}

/// A chain of lineage edges, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub category: TrajectoryCategory,
}

impl Trajectory {
    /// Builds a trajectory from connected steps; `None` if empty or broken.
    pub fn from_steps(steps: Vec<TrajectoryStep>) -> Option<Self> {
        if steps.is_empty() || steps.windows(2).any(|w| w[0].child_record != w[1].parent_record) {
            return None;
        }
        let category = TrajectoryCategory::of_directions(steps.iter().map(|s| s.direction));
        Some(Trajectory { steps, category })
    }

    /// Ordered record ids along the chain, e.g. `[0, 1, 2]`.
    pub fn fingerprint(&self) -> Vec<RecordId> {
        let mut ids = Vec::with_capacity(self.steps.len() + 1);
        ids.push(self.steps[0].parent_record);
        ids.extend(self.steps.iter().map(|s| s.child_record));
        ids
    }
}

/// Relative sampling mass of the three trajectory categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct CategoryWeights {
    improve: f64,
    mixed: f64,
    decline: f64,
}

impl CategoryWeights {
    pub fn new(improve: f64, mixed: f64, decline: f64) -> Result<Self, TrajectoryError> {
        let all = [improve, mixed, decline];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|w| *w == 0.0) {
            return Err(TrajectoryError::InvalidWeights);
        }
        Ok(CategoryWeights { improve, mixed, decline })
    }

    /// Weights scaled to sum to 1, ordered improvement, mixed, decline.
    pub fn normalized(&self) -> [f64; 3] {
        let sum = self.improve + self.mixed + self.decline;
        [self.improve / sum, self.mixed / sum, self.decline / sum]
    }

    pub fn weight(&self, category: TrajectoryCategory) -> f64 {
        self.normalized()[category.index()]
    }
}

impl Default for CategoryWeights {
    fn default() -> Self {
        CategoryWeights { improve: 0.5, mixed: 0.3, decline: 0.2 }
    }
}

impl TryFrom<[f64; 3]> for CategoryWeights {
    type Error = TrajectoryError;
    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        CategoryWeights::new(w[0], w[1], w[2])
    }
}

impl From<CategoryWeights> for [f64; 3] {
    fn from(w: CategoryWeights) -> Self {
        [w.improve, w.mixed, w.decline]
    }
}

/// Two-stage sampling: pick a category by weight, then a trajectory uniformly
/// without replacement inside it. Exhausted categories drop out and the
/// remaining weights are renormalized; if every remaining category has zero
/// weight they are treated as equally likely.
pub fn sample_by_category(
    trajectories: &[Trajectory],
    weights: &CategoryWeights,
    m: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    if m == 0 {
        return Err(TrajectoryError::ZeroSampleSize);
    }
    if trajectories.is_empty() {
        return Err(TrajectoryError::EmptyPool);
    }
    let mut pools: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, t) in trajectories.iter().enumerate() {
        pools[t.category.index()].push(i);
    }
    let base = weights.normalized();
    let mut rng = rng_from_seed(seed);
    let target = m.min(trajectories.len());
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let live: Vec<usize> = (0..3).filter(|&c| !pools[c].is_empty()).collect();
        let mut w: Vec<f64> = live.iter().map(|&c| base[c]).collect();
        if w.iter().all(|x| *x == 0.0) {
            w.iter_mut().for_each(|x| *x = 1.0);
        }
        let total: f64 = w.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = *live.last().expect("non-empty pool remains");
        for (&c, &wc) in live.iter().zip(&w) {
            if wc > 0.0 && u < wc {
                chosen = c;
                break;
            }
            u -= wc;
        }
        let pool = &mut pools[chosen];
        let pick = rng.gen_range(0..pool.len());
        let idx = pool.swap_remove(pick);
        out.push(trajectories[idx].clone());
    }
    Ok(out)
}
