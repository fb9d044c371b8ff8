//! Learning strategies `π_t(a)` and their exploration floors.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{QTable, PROB_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplorationError {
    #[error("epsilon must lie in (0,1], got {0}")]
    BadEpsilon(f64),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("decaying floor needs c0 > 0 and gamma >= 0, got c0={c0}, gamma={gamma}")]
    BadFloor { c0: f64, gamma: f64 },
    #[error("decaying floor c(1) = {floor} exceeds 1/|A| = {max}")]
    FloorTooLarge { floor: f64, max: f64 },
    #[error("state clock must be at least 1")]
    ZeroStateClock,
    #[error("q row for state {0} has a non-finite entry")]
    NonFiniteQ(usize),
    #[error("probabilities do not form a distribution")]
    InvalidDistribution,
}

/// Per-action floor `c(j) = c0 / (1 + j)^gamma` as a function of the state clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFloor {
    pub c0: f64,
    pub gamma: f64,
}

impl PowerFloor {
    pub fn at(&self, state_clock: u64) -> f64 {
        self.c0 / (1.0 + state_clock as f64).powf(self.gamma)
    }
}

/// How actions are drawn at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Uniform,
    EpsGreedy { epsilon: f64 },
    Boltzmann { temperature: f64 },
    DecayingEps { floor: PowerFloor },
}

impl PolicySpec {
    /// Checks parameter ranges against an action count.
    pub fn validate(&self, num_actions: usize) -> Result<(), ExplorationError> {
        match *self {
            PolicySpec::Uniform => Ok(()),
            PolicySpec::EpsGreedy { epsilon } => {
                if epsilon > 0.0 && epsilon <= 1.0 {
                    Ok(())
                } else {
                    Err(ExplorationError::BadEpsilon(epsilon))
                }
            }
            PolicySpec::Boltzmann { temperature } => {
                if temperature > 0.0 && temperature.is_finite() {
                    Ok(())
                } else {
                    Err(ExplorationError::BadTemperature(temperature))
                }
            }
            PolicySpec::DecayingEps { floor } => {
                if !(floor.c0 > 0.0 && floor.c0.is_finite() && floor.gamma >= 0.0 && floor.gamma.is_finite()) {
                    return Err(ExplorationError::BadFloor { c0: floor.c0, gamma: floor.gamma });
                }
                let max = 1.0 / num_actions as f64;
                let first = floor.at(1);
                if first > max + PROB_TOL {
                    return Err(ExplorationError::FloorTooLarge { floor: first, max });
                }
                Ok(())
            }
        }
    }

    /// Whether the strategy keeps a fixed positive floor.
    pub fn is_persistent(&self) -> bool {
        !matches!(self, PolicySpec::DecayingEps { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ExplorationError> {
        let ok = !probs.is_empty()
            && probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (probs.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL;
        if ok {
            Ok(ActionDistribution { probs })
        } else {
            Err(ExplorationError::InvalidDistribution)
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Writes `π(·)` for `state` into `out` (length `|A|`).
pub(crate) fn fill_distribution(
    spec: &PolicySpec,
    q: &QTable,
    state: usize,
    state_clock: u64,
    out: &mut [f64],
) -> Result<(), ExplorationError> {
    let row = q.row(state);
    if row.iter().any(|v| !v.is_finite()) {
        return Err(ExplorationError::NonFiniteQ(state));
    }
    let k = out.len() as f64;
    let eps_greedy = |eps: f64, out: &mut [f64]| {
        let greedy = q.greedy_action(state);
        out.fill(eps / k);
        out[greedy] += 1.0 - eps;
    };
    match *spec {
        PolicySpec::Uniform => out.fill(1.0 / k),
        PolicySpec::EpsGreedy { epsilon } => eps_greedy(epsilon, out),
        PolicySpec::Boltzmann { temperature } => {
            let max = q.max_row(state);
            let mut total = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                *o = ((v - max) / temperature).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        PolicySpec::DecayingEps { floor } => {
            if state_clock == 0 {
                return Err(ExplorationError::ZeroStateClock);
            }
            eps_greedy((floor.at(state_clock) * k).min(1.0), out);
        }
    }
    Ok(())
}

/// `π_t(·)` at `state` given the current table and the state's visit count.
pub fn action_distribution(
    spec: &PolicySpec,
    q: &QTable,
    state: usize,
    state_clock: u64,
) -> Result<ActionDistribution, ExplorationError> {
    let mut probs = vec![0.0; q.num_actions()];
    fill_distribution(spec, q, state, state_clock, &mut probs)?;
    Ok(ActionDistribution { probs })
}

/// Certified floor `c` with `π_t(a) ≥ c` for all `t, a`, given a bound
/// `q_range` on `max Q − min Q` over the run. Decaying strategies have no
/// uniform floor and return 0.
pub fn persistent_lower_bound(spec: &PolicySpec, q_range: f64, num_actions: usize) -> f64 {
    let k = num_actions as f64;
    match *spec {
        PolicySpec::Uniform => 1.0 / k,
        PolicySpec::EpsGreedy { epsilon } => epsilon / k,
        PolicySpec::Boltzmann { temperature } => (-q_range / temperature).exp() / k,
        PolicySpec::DecayingEps { .. } => 0.0,
    }
}

/// Inverse-CDF lookup for a uniform draw `u ∈ [0,1)`.
pub fn sample_with_uniform(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws an action by inverse-CDF sampling in action-index order.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> usize {
    sample_with_uniform(&dist.probs, rng.gen::<f64>())
}
