//! Learning-rate schedules driven by the global clock `t`, the state clock
//! `N_t(x)` and the pair clock `n_t(x,a)`, with analytic Robbins-Monro
//! verdicts for each parametric family.
//!
//! The rate is the primitive here. The monotonicity condition on the step
//! function `φ` is read on `φ = 1/rate`, so "φ non-decreasing" is the same
//! as "rate non-increasing" in every clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exploration::PowerFloor;

/// Slack used when comparing exponent sums against the series thresholds
/// 1/2 and 1, so that decimal inputs like `0.7 + 0.3` land on the boundary.
pub const EXPONENT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule parameter `{name}` = {value} is out of range ({reason})")]
    BadParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("schedule rate at the first update is {0}, must lie in (0,1]")]
    InitialRateOutOfRange(f64),
    #[error("inconsistent clocks: need 1 <= pair_clock ({pair}) <= state_clock ({state}) <= t+1 ({next})")]
    InconsistentClocks { t: u64, state: u64, pair: u64, next: u64 },
    #[error("the pair-clock schedule is outside the scope of the (t, N_t) conditions")]
    PairClockNotCovered,
    #[error("decaying compatibility needs a state-clock power schedule")]
    NonParametric,
}

/// A parametric learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `a / (b + n_t(x,a))^p`
    LocalPairClock { a: f64, b: f64, p: f64 },
    /// `a / (b + N_t(x))^p`
    StateClock { a: f64, b: f64, p: f64 },
    /// `a / (b + t)^p`
    GlobalClock { a: f64, b: f64, p: f64 },
    /// `[a1 / (b1 + t)^alpha] · [a2 / (b2 + N_t)^beta]`
    PowerProduct { a1: f64, b1: f64, alpha: f64, a2: f64, b2: f64, beta: f64 },
    /// `[a1 / (b1 + ln max(t,1))^alpha] · [a2 / (b2 + N_t)^beta]`
    LogPowerProduct { a1: f64, b1: f64, alpha: f64, a2: f64, b2: f64, beta: f64 },
}

/// Whether a series verdict was derived analytically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictBasis {
    Analytic,
    Unknown,
}

/// Verdict on `Σ γ = ∞` and `Σ γ² < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RmVerdict {
    pub sum_diverges: bool,
    pub sum_sq_converges: bool,
    pub basis: VerdictBasis,
}

impl RmVerdict {
    fn analytic(sum_diverges: bool, sum_sq_converges: bool) -> Self {
        RmVerdict { sum_diverges, sum_sq_converges, basis: VerdictBasis::Analytic }
    }

    pub fn holds(&self) -> bool {
        self.sum_diverges && self.sum_sq_converges
    }
}

fn check_scale(name: &'static str, value: f64) -> Result<(), ScheduleError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ScheduleError::BadParameter { name, value, reason: "must be positive" })
    }
}

fn check_nonneg(name: &'static str, value: f64) -> Result<(), ScheduleError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ScheduleError::BadParameter { name, value, reason: "must be nonnegative" })
    }
}

#[inline]
fn power_factor(a: f64, b: f64, clock: f64, p: f64) -> f64 {
    a / (b + clock).powf(p)
}

impl ScheduleSpec {
    pub fn local_pair_clock(a: f64, b: f64, p: f64) -> Result<Self, ScheduleError> {
        Self::LocalPairClock { a, b, p }.validated()
    }

    pub fn state_clock(a: f64, b: f64, p: f64) -> Result<Self, ScheduleError> {
        Self::StateClock { a, b, p }.validated()
    }

    pub fn global_clock(a: f64, b: f64, p: f64) -> Result<Self, ScheduleError> {
        Self::GlobalClock { a, b, p }.validated()
    }

    pub fn power_product(a1: f64, b1: f64, alpha: f64, a2: f64, b2: f64, beta: f64) -> Result<Self, ScheduleError> {
        Self::PowerProduct { a1, b1, alpha, a2, b2, beta }.validated()
    }

    pub fn log_power_product(a1: f64, b1: f64, alpha: f64, a2: f64, b2: f64, beta: f64) -> Result<Self, ScheduleError> {
        Self::LogPowerProduct { a1, b1, alpha, a2, b2, beta }.validated()
    }

    fn validated(self) -> Result<Self, ScheduleError> {
        self.validate()?;
        Ok(self)
    }

    /// Checks parameter signs and that the largest rate, reached at
    /// `t = 0, N = 1, n = 1`, lies in `(0,1]`.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            ScheduleSpec::LocalPairClock { a, b, p }
            | ScheduleSpec::StateClock { a, b, p }
            | ScheduleSpec::GlobalClock { a, b, p } => {
                check_scale("a", a)?;
                check_nonneg("b", b)?;
                check_nonneg("p", p)?;
            }
            ScheduleSpec::PowerProduct { a1, b1, alpha, a2, b2, beta }
            | ScheduleSpec::LogPowerProduct { a1, b1, alpha, a2, b2, beta } => {
                check_scale("a1", a1)?;
                check_nonneg("b1", b1)?;
                check_nonneg("alpha", alpha)?;
                check_scale("a2", a2)?;
                check_nonneg("b2", b2)?;
                check_nonneg("beta", beta)?;
            }
        }
        let first = self.eval(0, 1, 1);
        if first > 0.0 && first <= 1.0 {
            Ok(())
        } else {
            Err(ScheduleError::InitialRateOutOfRange(first))
        }
    }

    /// Whether the rate depends on the pair clock `n_t(x,a)`.
    pub fn uses_pair_clock(&self) -> bool {
        matches!(self, ScheduleSpec::LocalPairClock { .. })
    }

    #[inline]
    pub(crate) fn eval(&self, t: u64, state_clock: u64, pair_clock: u64) -> f64 {
        let t = t as f64;
        match *self {
            ScheduleSpec::LocalPairClock { a, b, p } => power_factor(a, b, pair_clock as f64, p),
            ScheduleSpec::StateClock { a, b, p } => power_factor(a, b, state_clock as f64, p),
            ScheduleSpec::GlobalClock { a, b, p } => power_factor(a, b, t, p),
            ScheduleSpec::PowerProduct { a1, b1, alpha, a2, b2, beta } => {
                power_factor(a1, b1, t, alpha) * power_factor(a2, b2, state_clock as f64, beta)
            }
            ScheduleSpec::LogPowerProduct { a1, b1, alpha, a2, b2, beta } => {
                power_factor(a1, b1, t.max(1.0).ln(), alpha) * power_factor(a2, b2, state_clock as f64, beta)
            }
        }
    }

    /// The step function `φ = 1/rate` is non-decreasing in every clock.
    pub fn reciprocal_is_monotone(&self) -> bool {
        match *self {
            ScheduleSpec::LocalPairClock { p, .. }
            | ScheduleSpec::StateClock { p, .. }
            | ScheduleSpec::GlobalClock { p, .. } => p >= 0.0,
            ScheduleSpec::PowerProduct { alpha, beta, b1, .. }
            | ScheduleSpec::LogPowerProduct { alpha, beta, b1, .. } => alpha >= 0.0 && beta >= 0.0 && b1 >= 0.0,
        }
    }
}

/// The rate at global step `t` for a visit with the given inclusive clocks.
pub fn rate(spec: &ScheduleSpec, t: u64, state_clock: u64, pair_clock: u64) -> Result<f64, ScheduleError> {
    if pair_clock < 1 || pair_clock > state_clock || state_clock > t + 1 {
        return Err(ScheduleError::InconsistentClocks { t, state: state_clock, pair: pair_clock, next: t + 1 });
    }
    Ok(spec.eval(t, state_clock, pair_clock))
}

/// Classification of `Σ 1/k^s`.
fn p_series(s: f64) -> RmVerdict {
    RmVerdict::analytic(s <= 1.0 + EXPONENT_TOL, 2.0 * s > 1.0 + EXPONENT_TOL)
}

/// Analytic verdict along the diagonal `t = N_t = n_t`.
pub fn diagonal_rm_verdict(spec: &ScheduleSpec) -> RmVerdict {
    match *spec {
        ScheduleSpec::LocalPairClock { p, .. }
        | ScheduleSpec::StateClock { p, .. }
        | ScheduleSpec::GlobalClock { p, .. } => p_series(p),
        ScheduleSpec::PowerProduct { alpha, beta, .. } => p_series(alpha + beta),
        ScheduleSpec::LogPowerProduct { alpha, beta, .. } => {
            // Diagonal term behaves like 1 / ((ln t)^alpha · t^beta).
            let near = |x: f64, y: f64| (x - y).abs() <= EXPONENT_TOL;
            let diverges = beta < 1.0 - EXPONENT_TOL || (near(beta, 1.0) && alpha <= 1.0 + EXPONENT_TOL);
            let sq_converges =
                beta > 0.5 + EXPONENT_TOL || (near(beta, 0.5) && 2.0 * alpha > 1.0 + EXPONENT_TOL);
            RmVerdict::analytic(diverges, sq_converges)
        }
    }
}

/// Monotone reciprocal plus the Robbins-Monro conditions on the diagonal.
pub fn theorem2_admissible(spec: &ScheduleSpec) -> Result<bool, ScheduleError> {
    if spec.uses_pair_clock() {
        return Err(ScheduleError::PairClockNotCovered);
    }
    Ok(spec.reciprocal_is_monotone() && diagonal_rm_verdict(spec).holds())
}

/// Series verdict for a decaying floor `c(j) = c0/(1+j)^γ` paired with a
/// state-clock rate `a/(b+j)^p`: `Σ c(j)·rate(j) = ∞` iff `γ + p ≤ 1`, and
/// `Σ rate(j)² < ∞` iff `p > 1/2`.
pub fn decaying_compatibility(floor: &PowerFloor, schedule: &ScheduleSpec) -> Result<RmVerdict, ScheduleError> {
    match *schedule {
        ScheduleSpec::StateClock { p, .. } => {
            let divergence = p_series(floor.gamma + p);
            let squares = p_series(p);
            Ok(RmVerdict::analytic(divergence.sum_diverges, squares.sum_sq_converges))
        }
        _ => Err(ScheduleError::NonParametric),
    }
}
