use serde::{Deserialize, Serialize};

use crate::buffer::BufferError;

/// How the next parent is drawn from the `ok` records of the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParentSelectionPolicy {
    GreedyBest,
    /// Uniform over all `ok` records with probability `epsilon`, otherwise greedy.
    EpsilonGreedy { epsilon: f64 },
    /// Probability proportional to `exp(score / temperature)`.
    SoftmaxScore { temperature: f64 },
    UniformTopK { k: usize },
}

impl ParentSelectionPolicy {
    pub fn epsilon_greedy(epsilon: f64) -> Result<Self, BufferError> {
        let p = ParentSelectionPolicy::EpsilonGreedy { epsilon };
        p.validate().map(|_| p)
    }

    pub fn softmax(temperature: f64) -> Result<Self, BufferError> {
        let p = ParentSelectionPolicy::SoftmaxScore { temperature };
        p.validate().map(|_| p)
    }

    pub fn uniform_top_k(k: usize) -> Result<Self, BufferError> {
        let p = ParentSelectionPolicy::UniformTopK { k };
        p.validate().map(|_| p)
    }

    pub fn validate(&self) -> Result<(), BufferError> {
        match *self {
            ParentSelectionPolicy::GreedyBest => Ok(()),
            ParentSelectionPolicy::EpsilonGreedy { epsilon } if (0.0..=1.0).contains(&epsilon) => Ok(()),
            ParentSelectionPolicy::EpsilonGreedy { .. } => Err(BufferError::InvalidPolicy("epsilon must lie in [0, 1]")),
            ParentSelectionPolicy::SoftmaxScore { temperature } if temperature.is_finite() && temperature > 0.0 => {
                Ok(())
            }
            ParentSelectionPolicy::SoftmaxScore { .. } => {
                Err(BufferError::InvalidPolicy("temperature must be finite and > 0"))
            }
            ParentSelectionPolicy::UniformTopK { k } if k >= 1 => Ok(()),
            ParentSelectionPolicy::UniformTopK { .. } => Err(BufferError::InvalidPolicy("k must be >= 1")),
        }
    }
}

impl Default for ParentSelectionPolicy {
    fn default() -> Self {
        ParentSelectionPolicy::EpsilonGreedy { epsilon: 0.2 }
    }
}
