//! Declarative per-variable state distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{EnterpriseState, ScenarioId};
use crate::expr::Value;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Const {
        value: Value,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    LogUniform {
        lo: f64,
        hi: f64,
    },
    /// Weighted choice; weights need not sum to one.
    Choice {
        options: Vec<Value>,
        weights: Vec<f64>,
    },
    Bernoulli {
        p: f64,
    },
}

impl Distribution {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Value {
        match self {
            Distribution::Const { value } => value.clone(),
            Distribution::Uniform { lo, hi } => Value::Num(lo + (hi - lo) * rng.gen::<f64>()),
            Distribution::LogUniform { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                Value::Num((a + (b - a) * rng.gen::<f64>()).exp().clamp(*lo, *hi))
            }
            Distribution::Choice { options, weights } => {
                let total: f64 = weights.iter().sum();
                let mut x = rng.gen::<f64>() * total;
                for (o, w) in options.iter().zip(weights) {
                    if x < *w {
                        return o.clone();
                    }
                    x -= w;
                }
                options.last().cloned().unwrap_or(Value::Null)
            }
            Distribution::Bernoulli { p } => Value::Bool(rng.gen::<f64>() < *p),
        }
    }
}

/// Ordered list of state variables and their distributions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateSampler {
    pub variables: Vec<(String, Distribution)>,
}

impl StateSampler {
    pub fn var(mut self, name: &str, dist: Distribution) -> Self {
        self.variables.push((name.to_string(), dist));
        self
    }

    /// Deterministic in `(seed, episode)`; each variable draws from its own stream.
    pub fn sample(&self, scenario: ScenarioId, seed: u64, episode: u64) -> EnterpriseState {
        let mut state = EnterpriseState::new(scenario, derive_seed(seed, episode, 0, u64::MAX));
        for (i, (name, dist)) in self.variables.iter().enumerate() {
            let mut rng = stream_rng(seed, episode, 0, i as u64);
            state.variables.insert(name.clone(), dist.sample(&mut rng));
        }
        state
    }
}
