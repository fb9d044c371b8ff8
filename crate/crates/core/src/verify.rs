//! Finite-horizon Monte Carlo checks of the asymptotic claims: the visit-rate
//! lower bound, Robbins-Monro partial-sum behaviour, and convergence of
//! `Q_T` to the exact Q-function.
//!
//! Almost-sure statements become quantile checks over seeds. Thresholds live
//! in [`Tolerances`]; the defaults are conventions of this harness.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{communication_certificate, is_communicating, ChainError, CommunicationCertificate};
use crate::exploration::{persistent_lower_bound, PolicySpec};
use crate::mdp::{solve_q, MdpError, QTable};
use crate::qlearn::{default_checkpoints, run, QLearnConfig, QLearnError, RunResult};
use crate::schedules::{diagonal_rm_verdict, theorem2_admissible, RmVerdict, ScheduleSpec, EXPONENT_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("mdp is not communicating")]
    NotCommunicating,
    #[error("policy {0:?} has no persistent exploration floor")]
    NonPersistentPolicy(PolicySpec),
    #[error("schedule not certified for convergence: {0}")]
    InadmissibleSchedule(String),
    #[error("experiment needs at least one seed")]
    NoSeeds,
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    QLearn(#[from] QLearnError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    VisitBound,
    RmSeries,
    Convergence,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::VisitBound => "visit_bound",
            Check::RmSeries => "rm_series",
            Check::Convergence => "convergence",
        }
    }
}

/// Pass thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// A seed passes the visit check if `min_x N_T(x)/T ≥ (1 − slack)·bound`.
    pub visit_slack: f64,
    /// Fraction of seeds that must pass the visit check.
    pub visit_pass_fraction: f64,
    /// Required `S₁(T) / S₁(T/4)`.
    pub s1_growth: f64,
    /// Largest allowed `(S₂(T) − S₂(T/2)) / S₂(T)`.
    pub s2_saturation: f64,
    /// Largest allowed mean `‖Q_T − Q*‖∞ / ‖Q*‖∞`.
    pub convergence_rel: f64,
    /// Fraction of seeds whose late error sequence must be non-increasing.
    pub trend_fraction: f64,
    /// Relative increase between consecutive late checkpoints still counted
    /// as non-increasing.
    pub trend_slack: f64,
    /// Tolerance used to compute `Q*`.
    pub solve_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            visit_slack: 0.1,
            visit_pass_fraction: 0.95,
            s1_growth: 1.5,
            s2_saturation: 0.1,
            convergence_rel: 0.05,
            trend_fraction: 0.8,
            trend_slack: 0.0,
            solve_tol: 1e-8,
        }
    }
}

/// A batch of seeded runs of one configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub base: QLearnConfig,
    pub seed_count: usize,
    pub base_seed: u64,
    pub checks: Vec<Check>,
    pub tolerances: Tolerances,
    /// Run schedules and policies outside the certified set, without certifying.
    pub exploratory: bool,
}

impl ExperimentSpec {
    pub fn new(base: QLearnConfig, seed_count: usize, base_seed: u64) -> Self {
        ExperimentSpec {
            base,
            seed_count,
            base_seed,
            checks: vec![Check::VisitBound, Check::RmSeries, Check::Convergence],
            tolerances: Tolerances::default(),
            exploratory: false,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seed_count as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }

    pub fn horizon(&self) -> u64 {
        self.base.horizon
    }

    /// `2·max(‖Q₀‖∞, R_max/(1−β))`, a bound on `max Q_t − min Q_t`.
    pub fn q_range_bound(&self) -> f64 {
        let mdp = &self.base.mdp;
        let r = mdp.max_abs_reward() / (1.0 - mdp.discount());
        2.0 * self.base.initial_q.sup_norm().max(r)
    }

    /// The checkpoints every run records: `T/4`, `T/2` and the geometric grid.
    pub fn checkpoints(&self) -> Vec<u64> {
        let t = self.horizon();
        let mut points = default_checkpoints(t);
        points.extend([t / 4, t / 2]);
        points.sort_unstable();
        points.dedup();
        points
    }
}

/// Whether convergence of a schedule is certified: the `(t, N_t)` admissibility
/// conditions, or a pair-clock power rate with exponent in `(1/2, 1]`.
pub fn certification(schedule: &ScheduleSpec) -> Result<(), String> {
    match *schedule {
        ScheduleSpec::LocalPairClock { p, .. } => {
            if 2.0 * p > 1.0 + EXPONENT_TOL && p <= 1.0 + EXPONENT_TOL {
                Ok(())
            } else {
                Err(format!("pair-clock exponent {p} outside (1/2, 1]"))
            }
        }
        _ => match theorem2_admissible(schedule) {
            Ok(true) => Ok(()),
            Ok(false) => {
                let v = diagonal_rm_verdict(schedule);
                Err(format!(
                    "diagonal series: sum diverges = {}, sum of squares converges = {}",
                    v.sum_diverges, v.sum_sq_converges
                ))
            }
            Err(e) => Err(e.to_string()),
        },
    }
}

/// Q* and seeded runs shared by the checks.
#[derive(Debug, Clone)]
pub struct RunBatch {
    pub q_star: QTable,
    pub runs: Vec<RunResult>,
}

/// Runs every seed concurrently; results are in seed order.
pub fn run_batch(spec: &ExperimentSpec) -> Result<RunBatch, VerifyError> {
    if spec.seed_count == 0 {
        return Err(VerifyError::NoSeeds);
    }
    let q_star = solve_q(&spec.base.mdp, spec.tolerances.solve_tol)?;
    let checkpoints = spec.checkpoints();
    let runs = spec
        .seeds()
        .into_par_iter()
        .map(|seed| run(&spec.base.with_seed(seed), &q_star, &checkpoints))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunBatch { q_star, runs })
}

fn require_communicating(spec: &ExperimentSpec) -> Result<(), VerifyError> {
    if is_communicating(&spec.base.mdp)? {
        Ok(())
    } else {
        Err(VerifyError::NotCommunicating)
    }
}

fn require_persistent(spec: &ExperimentSpec) -> Result<(), VerifyError> {
    if spec.base.policy.is_persistent() || spec.exploratory {
        Ok(())
    } else {
        Err(VerifyError::NonPersistentPolicy(spec.base.policy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedVisit {
    pub seed: u64,
    pub min_freq: f64,
    pub running_min_last_half: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitBoundReport {
    pub floor: f64,
    pub certificate: CommunicationCertificate,
    pub bound: f64,
    pub threshold: f64,
    pub seeds: Vec<SeedVisit>,
    pub pass_fraction: f64,
    pub passed: bool,
}

/// Compares `min_x N_T(x)/T` with `(1 − slack)·cⁿ|A|ⁿδ/n` for every seed.
pub fn verify_visit_bound(spec: &ExperimentSpec) -> Result<VisitBoundReport, VerifyError> {
    let batch = visit_preconditions(spec).and_then(|_| run_batch(spec))?;
    evaluate_visit_bound(spec, &batch)
}

fn visit_preconditions(spec: &ExperimentSpec) -> Result<(), VerifyError> {
    require_communicating(spec)?;
    if !spec.base.policy.is_persistent() {
        return Err(VerifyError::NonPersistentPolicy(spec.base.policy));
    }
    Ok(())
}

pub fn evaluate_visit_bound(spec: &ExperimentSpec, batch: &RunBatch) -> Result<VisitBoundReport, VerifyError> {
    visit_preconditions(spec)?;
    let mdp = &spec.base.mdp;
    let certificate = communication_certificate(mdp)?;
    let floor = persistent_lower_bound(&spec.base.policy, spec.q_range_bound(), mdp.num_actions());
    let bound = crate::chain::visit_rate_lower_bound(&certificate, floor, mdp.num_actions())?;
    let threshold = (1.0 - spec.tolerances.visit_slack) * bound;
    let seeds: Vec<SeedVisit> = batch
        .runs
        .iter()
        .map(|r| {
            let min_freq = r.min_visit_frequency();
            SeedVisit {
                seed: r.seed,
                min_freq,
                running_min_last_half: r.running_min_freq_last_half,
                passed: min_freq >= threshold,
            }
        })
        .collect();
    let pass_fraction = seeds.iter().filter(|s| s.passed).count() as f64 / seeds.len() as f64;
    Ok(VisitBoundReport {
        floor,
        certificate,
        bound,
        threshold,
        passed: pass_fraction >= spec.tolerances.visit_pass_fraction,
        seeds,
        pass_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRm {
    pub seed: u64,
    /// Pair with the smallest `S₁(T)/S₁(T/4)` and that ratio.
    pub worst_growth: ((usize, usize), f64),
    /// Pair with the largest `(S₂(T) − S₂(T/2))/S₂(T)` and that fraction.
    pub worst_saturation: ((usize, usize), f64),
    pub unvisited: Vec<(usize, usize)>,
    pub growth_passed: bool,
    pub saturation_passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmSeriesReport {
    pub verdict: RmVerdict,
    pub growth_threshold: f64,
    pub saturation_threshold: f64,
    pub seeds: Vec<SeedRm>,
    pub growth_passed: bool,
    pub saturation_passed: bool,
    /// Both partial-sum checks match the analytic diagonal verdict.
    pub agrees_with_verdict: bool,
    pub passed: bool,
}

/// Per-pair growth of `S₁` and saturation of `S₂` over the run.
pub fn verify_rm_series(spec: &ExperimentSpec) -> Result<RmSeriesReport, VerifyError> {
    require_communicating(spec)?;
    require_persistent(spec)?;
    let batch = run_batch(spec)?;
    evaluate_rm_series(spec, &batch)
}

pub fn evaluate_rm_series(spec: &ExperimentSpec, batch: &RunBatch) -> Result<RmSeriesReport, VerifyError> {
    let t = spec.horizon();
    let k = spec.base.mdp.num_actions();
    let tol = &spec.tolerances;
    let mut seeds = Vec::with_capacity(batch.runs.len());
    for r in &batch.runs {
        let quarter = &r.checkpoint(t / 4).expect("T/4 checkpoint recorded").s1;
        let half = &r.checkpoint(t / 2).expect("T/2 checkpoint recorded").s2;
        let mut worst_growth = ((0, 0), f64::INFINITY);
        let mut worst_saturation = ((0, 0), f64::NEG_INFINITY);
        let mut unvisited = Vec::new();
        for (i, (&s1, &s2)) in r.s1.iter().zip(&r.s2).enumerate() {
            let pair = (i / k, i % k);
            if s1 == 0.0 {
                unvisited.push(pair);
                worst_growth = (pair, 0.0);
                worst_saturation = (pair, f64::INFINITY);
                continue;
            }
            let growth = if quarter[i] > 0.0 { s1 / quarter[i] } else { f64::INFINITY };
            if growth < worst_growth.1 {
                worst_growth = (pair, growth);
            }
            let saturation = (s2 - half[i]) / s2;
            if saturation > worst_saturation.1 {
                worst_saturation = (pair, saturation);
            }
        }
        seeds.push(SeedRm {
            seed: r.seed,
            growth_passed: unvisited.is_empty() && worst_growth.1 >= tol.s1_growth,
            saturation_passed: unvisited.is_empty() && worst_saturation.1 <= tol.s2_saturation,
            worst_growth,
            worst_saturation,
            unvisited,
        });
    }
    let verdict = diagonal_rm_verdict(&spec.base.schedule);
    let growth_passed = seeds.iter().all(|s| s.growth_passed);
    let saturation_passed = seeds.iter().all(|s| s.saturation_passed);
    Ok(RmSeriesReport {
        verdict,
        growth_threshold: tol.s1_growth,
        saturation_threshold: tol.s2_saturation,
        agrees_with_verdict: growth_passed == verdict.sum_diverges && saturation_passed == verdict.sum_sq_converges,
        passed: growth_passed && saturation_passed,
        growth_passed,
        saturation_passed,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedConvergence {
    pub seed: u64,
    pub final_error: f64,
    /// `(t, ‖Q_t − Q*‖∞)` at geometric checkpoints with `t ≥ T/4`.
    pub late_errors: Vec<(u64, f64)>,
    pub trend_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub certified: bool,
    pub q_star_norm: f64,
    pub seeds: Vec<SeedConvergence>,
    pub mean_error: f64,
    pub mean_relative_error: f64,
    /// Allowed mean relative error.
    pub tolerance: f64,
    pub error_passed: bool,
    pub trend_fraction: f64,
    pub trend_passed: bool,
    pub passed: bool,
}

/// Mean `‖Q_T − Q*‖∞` over seeds against `tolerance·‖Q*‖∞`, plus a
/// trend check on the late checkpoints.
pub fn verify_convergence(spec: &ExperimentSpec) -> Result<ConvergenceReport, VerifyError> {
    let certified = convergence_preconditions(spec)?;
    let batch = run_batch(spec)?;
    Ok(convergence_report(spec, &batch, certified))
}

fn convergence_preconditions(spec: &ExperimentSpec) -> Result<bool, VerifyError> {
    require_communicating(spec)?;
    require_persistent(spec)?;
    match certification(&spec.base.schedule) {
        Ok(()) => Ok(spec.base.policy.is_persistent()),
        Err(_) if spec.exploratory => Ok(false),
        Err(reason) => Err(VerifyError::InadmissibleSchedule(reason)),
    }
}

pub fn evaluate_convergence(spec: &ExperimentSpec, batch: &RunBatch) -> Result<ConvergenceReport, VerifyError> {
    let certified = convergence_preconditions(spec)?;
    Ok(convergence_report(spec, batch, certified))
}

fn convergence_report(spec: &ExperimentSpec, batch: &RunBatch, certified: bool) -> ConvergenceReport {
    let tol = &spec.tolerances;
    let t = spec.horizon();
    let grid = default_checkpoints(t);
    let seeds: Vec<SeedConvergence> = batch
        .runs
        .iter()
        .map(|r| {
            let late_errors: Vec<(u64, f64)> = r
                .checkpoints
                .iter()
                .filter(|c| c.t >= t / 4 && grid.contains(&c.t))
                .map(|c| (c.t, c.sup_error))
                .collect();
            let trend_ok = late_errors.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + tol.trend_slack));
            SeedConvergence { seed: r.seed, final_error: r.final_error(), late_errors, trend_ok }
        })
        .collect();
    let q_star_norm = batch.q_star.sup_norm();
    let mean_error = seeds.iter().map(|s| s.final_error).sum::<f64>() / seeds.len() as f64;
    let mean_relative_error = if q_star_norm > 0.0 { mean_error / q_star_norm } else { mean_error };
    let trend_fraction = seeds.iter().filter(|s| s.trend_ok).count() as f64 / seeds.len() as f64;
    let error_passed = mean_relative_error <= tol.convergence_rel;
    let trend_passed = trend_fraction >= tol.trend_fraction;
    ConvergenceReport {
        certified,
        q_star_norm,
        seeds,
        mean_error,
        mean_relative_error,
        tolerance: tol.convergence_rel,
        error_passed,
        trend_fraction,
        trend_passed,
        passed: error_passed && trend_passed,
    }
}

/// All requested checks over one shared batch of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub certified: bool,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub visit_bound: Option<VisitBoundReport>,
    pub rm_series: Option<RmSeriesReport>,
    pub convergence: Option<ConvergenceReport>,
}

impl VerificationReport {
    /// Every requested check passed.
    pub fn passed(&self) -> bool {
        self.visit_bound.as_ref().is_none_or(|r| r.passed)
            && self.rm_series.as_ref().is_none_or(|r| r.passed)
            && self.convergence.as_ref().is_none_or(|r| r.passed)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "horizon: {}, seeds: {}", self.horizon, self.seeds.len());
        if self.certified {
            let _ = writeln!(out, "mode: certified");
        } else {
            let _ = writeln!(out, "exploratory: not certified");
        }
        if let Some(v) = &self.visit_bound {
            let _ = writeln!(
                out,
                "[{}] visit_bound: floor c={:?}, n={}, delta={:?}, bound={:?}, threshold={:?}, pass fraction={:?}",
                mark(v.passed), v.floor, v.certificate.n, v.certificate.delta, v.bound, v.threshold, v.pass_fraction
            );
            for s in &v.seeds {
                let _ = writeln!(
                    out,
                    "    seed {}: min N_T(x)/T={:?}, running inf over last half={:?}",
                    s.seed, s.min_freq, s.running_min_last_half
                );
            }
        }
        if let Some(r) = &self.rm_series {
            let _ = writeln!(
                out,
                "[{}] rm_series: diagonal verdict (diverges={}, squares converge={}), growth={}, saturation={}, agrees with verdict={}",
                mark(r.passed),
                r.verdict.sum_diverges,
                r.verdict.sum_sq_converges,
                mark(r.growth_passed),
                mark(r.saturation_passed),
                r.agrees_with_verdict
            );
            for s in &r.seeds {
                let ((gx, ga), g) = s.worst_growth;
                let ((sx, sa), f) = s.worst_saturation;
                let _ = writeln!(
                    out,
                    "    seed {}: worst S1 growth {:?} at (x={gx},a={ga}), worst S2 late share {:?} at (x={sx},a={sa}), unvisited pairs {}",
                    s.seed,
                    g,
                    f,
                    s.unvisited.len()
                );
            }
        }
        if let Some(c) = &self.convergence {
            let _ = writeln!(
                out,
                "[{}] convergence: mean error={:?}, |Q*|={:?}, relative={:?}, trend fraction={:?}{}",
                mark(c.passed),
                c.mean_error,
                c.q_star_norm,
                c.mean_relative_error,
                c.trend_fraction,
                if c.certified { "" } else { " (not certified)" }
            );
        }
        let _ = writeln!(out, "overall: {}", mark(self.passed()));
        out
    }

    /// CSV with one row per seed per check.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,seed,value,threshold,passed\n");
        if let Some(v) = &self.visit_bound {
            for s in &v.seeds {
                let _ = writeln!(out, "visit_bound,{},{:?},{:?},{}", s.seed, s.min_freq, v.threshold, s.passed);
            }
        }
        if let Some(r) = &self.rm_series {
            for s in &r.seeds {
                let _ = writeln!(out, "rm_s1_growth,{},{:?},{:?},{}", s.seed, s.worst_growth.1, r.growth_threshold, s.growth_passed);
                let _ = writeln!(
                    out,
                    "rm_s2_saturation,{},{:?},{:?},{}",
                    s.seed, s.worst_saturation.1, r.saturation_threshold, s.saturation_passed
                );
            }
        }
        if let Some(c) = &self.convergence {
            for s in &c.seeds {
                let _ = writeln!(
                    out,
                    "convergence,{},{:?},{:?},{}",
                    s.seed,
                    s.final_error,
                    c.q_star_norm * c.tolerance,
                    s.trend_ok && s.final_error <= c.q_star_norm * c.tolerance
                );
            }
        }
        out
    }
}

/// Runs the requested checks on one shared batch.
pub fn verify_all(spec: &ExperimentSpec) -> Result<VerificationReport, VerifyError> {
    require_communicating(spec)?;
    require_persistent(spec)?;
    let wants = |c: Check| spec.checks.contains(&c);
    let mut certified = spec.base.policy.is_persistent();
    if wants(Check::Convergence) {
        certified &= convergence_preconditions(spec)?;
    } else if certification(&spec.base.schedule).is_err() {
        if !spec.exploratory {
            return Err(VerifyError::InadmissibleSchedule(certification(&spec.base.schedule).unwrap_err()));
        }
        certified = false;
    }
    if wants(Check::VisitBound) {
        visit_preconditions(spec)?;
    }
    let batch = run_batch(spec)?;
    Ok(VerificationReport {
        certified,
        horizon: spec.horizon(),
        seeds: spec.seeds(),
        visit_bound: wants(Check::VisitBound).then(|| evaluate_visit_bound(spec, &batch)).transpose()?,
        rm_series: wants(Check::RmSeries).then(|| evaluate_rm_series(spec, &batch)).transpose()?,
        convergence: wants(Check::Convergence)
            .then(|| Ok::<_, VerifyError>(convergence_report(spec, &batch, certified)))
            .transpose()?,
    })
}
