//! Trajectory simulation with online Q-learning updates.
//!
//! Clock convention: at step `t` the current state's clock `N(x_t)` and the
//! pair clock `n(x_t,a_t)` are incremented before the rate is evaluated, so
//! the `j`-th update of a pair sees `pair_clock = j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exploration::{fill_distribution, sample_with_uniform, ExplorationError, PolicySpec};
use crate::mdp::{Mdp, MdpError, QTable};
use crate::schedules::{ScheduleError, ScheduleSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QLearnError {
    #[error("learning rate {0} outside (0,1]")]
    RateOutOfRange(f64),
    #[error("initial state {state} out of range for {num_states} states")]
    BadInitialState { state: usize, num_states: usize },
    #[error("initial q table does not match the mdp")]
    TableMismatch,
    #[error("clock invariant violated at t={t}: {detail}")]
    ClockInvariant { t: u64, detail: String },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Applies `Q(x,a) ← (1−α)Q(x,a) + α(r + β max_a' Q(y,a'))` in place.
pub fn q_update(
    q: &mut QTable,
    x: usize,
    a: usize,
    y: usize,
    reward: f64,
    alpha: f64,
    beta: f64,
) -> Result<(), QLearnError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(QLearnError::RateOutOfRange(alpha));
    }
    let target = reward + beta * q.max_row(y);
    let old = q.get(x, a);
    q.set(x, a, (1.0 - alpha) * old + alpha * target);
    Ok(())
}

/// Visit counters for the three clocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockState {
    /// Index of the next step; equals the number of processed steps.
    pub t: u64,
    pub state_counts: Vec<u64>,
    pub pair_counts: Vec<u64>,
    num_actions: usize,
    /// `τ_j(x)`: times of the `j`-th visit of each state, when recorded.
    pub state_visit_times: Option<Vec<Vec<u64>>>,
    /// `t_j(x,a)`: times of the `j`-th visit of each pair, when recorded.
    pub pair_visit_times: Option<Vec<Vec<u64>>>,
}

impl ClockState {
    pub fn new(num_states: usize, num_actions: usize, record_visits: bool) -> Self {
        ClockState {
            t: 0,
            state_counts: vec![0; num_states],
            pair_counts: vec![0; num_states * num_actions],
            num_actions,
            state_visit_times: record_visits.then(|| vec![Vec::new(); num_states]),
            pair_visit_times: record_visits.then(|| vec![Vec::new(); num_states * num_actions]),
        }
    }

    #[inline]
    pub fn state_clock(&self, x: usize) -> u64 {
        self.state_counts[x]
    }

    #[inline]
    pub fn pair_clock(&self, x: usize, a: usize) -> u64 {
        self.pair_counts[x * self.num_actions + a]
    }

    /// Verifies `Σ N = t`, `Σ_a n(x,a) = N(x)` and the visit-log identities.
    pub fn check_invariants(&self) -> Result<(), QLearnError> {
        let fail = |detail: String| Err(QLearnError::ClockInvariant { t: self.t, detail });
        let total: u64 = self.state_counts.iter().sum();
        if total != self.t {
            return fail(format!("sum of state clocks {total} != steps {}", self.t));
        }
        for (x, &n) in self.state_counts.iter().enumerate() {
            let pairs: u64 = self.pair_counts[x * self.num_actions..(x + 1) * self.num_actions].iter().sum();
            if pairs != n {
                return fail(format!("pair clocks at state {x} sum to {pairs}, state clock is {n}"));
            }
        }
        let logs = [(&self.state_visit_times, &self.state_counts), (&self.pair_visit_times, &self.pair_counts)];
        for (log, counts) in logs {
            let Some(log) = log else { continue };
            for (i, times) in log.iter().enumerate() {
                if times.len() as u64 != counts[i] {
                    return fail(format!("visit log {i} has {} entries, clock is {}", times.len(), counts[i]));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return fail(format!("visit log {i} is not strictly increasing"));
                }
            }
        }
        Ok(())
    }
}

/// What happened at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    pub alpha: f64,
}

/// Inputs of a single Q-learning run.
#[derive(Debug, Clone)]
pub struct QLearnConfig {
    pub mdp: Mdp,
    pub policy: PolicySpec,
    pub schedule: ScheduleSpec,
    pub initial_state: usize,
    pub initial_q: QTable,
    pub horizon: u64,
    pub seed: u64,
    pub record_visit_times: bool,
}

impl QLearnConfig {
    /// A config with a zero initial table, starting in state 0.
    pub fn new(mdp: Mdp, policy: PolicySpec, schedule: ScheduleSpec, horizon: u64, seed: u64) -> Self {
        let initial_q = QTable::for_mdp(&mdp);
        QLearnConfig { mdp, policy, schedule, initial_state: 0, initial_q, horizon, seed, record_visit_times: false }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        QLearnConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), QLearnError> {
        self.mdp.ensure_valid()?;
        self.policy.validate(self.mdp.num_actions())?;
        self.schedule.validate()?;
        if self.initial_state >= self.mdp.num_states() {
            return Err(QLearnError::BadInitialState {
                state: self.initial_state,
                num_states: self.mdp.num_states(),
            });
        }
        if self.initial_q.num_states() != self.mdp.num_states()
            || self.initial_q.num_actions() != self.mdp.num_actions()
        {
            return Err(QLearnError::TableMismatch);
        }
        if !self.initial_q.is_finite() {
            return Err(MdpError::NonFiniteTable.into());
        }
        Ok(())
    }
}

/// Mutable state of a trajectory in progress.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub state: usize,
    pub q: QTable,
    pub clocks: ClockState,
    /// `Σ γ_t` per pair, row-major by `(x,a)`.
    pub s1: Vec<f64>,
    /// `Σ γ_t²` per pair.
    pub s2: Vec<f64>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

impl Simulation {
    pub fn new(config: &QLearnConfig) -> Result<Self, QLearnError> {
        config.validate()?;
        let (s, a) = (config.mdp.num_states(), config.mdp.num_actions());
        Ok(Simulation {
            state: config.initial_state,
            q: config.initial_q.clone(),
            clocks: ClockState::new(s, a, config.record_visit_times),
            s1: vec![0.0; s * a],
            s2: vec![0.0; s * a],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            probs: vec![0.0; a],
        })
    }

    /// Advances the trajectory by one step. The RNG is consumed once for the
    /// action and once for the next state, in that order.
    pub fn step(&mut self, config: &QLearnConfig) -> Result<StepRecord, QLearnError> {
        let mdp = &config.mdp;
        let t = self.clocks.t;
        let x = self.state;

        self.clocks.state_counts[x] += 1;
        let state_clock = self.clocks.state_counts[x];
        fill_distribution(&config.policy, &self.q, x, state_clock, &mut self.probs)?;
        let a = sample_with_uniform(&self.probs, self.rng.gen::<f64>());
        let pair = x * mdp.num_actions() + a;
        self.clocks.pair_counts[pair] += 1;
        let pair_clock = self.clocks.pair_counts[pair];
        if let Some(log) = self.clocks.state_visit_times.as_mut() {
            log[x].push(t);
        }
        if let Some(log) = self.clocks.pair_visit_times.as_mut() {
            log[pair].push(t);
        }

        let y = sample_with_uniform(mdp.transitions(x, a), self.rng.gen::<f64>());
        let reward = mdp.reward(x, a, y);
        let alpha = config.schedule.eval(t, state_clock, pair_clock);
        q_update(&mut self.q, x, a, y, reward, alpha, mdp.discount())?;
        self.s1[pair] += alpha;
        self.s2[pair] += alpha * alpha;

        self.clocks.t = t + 1;
        self.state = y;
        Ok(StepRecord { t, state: x, action: a, next_state: y, reward, alpha })
    }

    /// `N_t(x)/t` with the pending current state counted, i.e. visits of
    /// `x_0..x_t` over `t`. At `t = 0` the denominator is taken as 1.
    pub fn visit_frequencies(&self) -> Vec<f64> {
        let t = self.clocks.t.max(1) as f64;
        self.clocks
            .state_counts
            .iter()
            .enumerate()
            .map(|(x, &n)| (n + u64::from(x == self.state)) as f64 / t)
            .collect()
    }

    pub fn min_visit_frequency(&self) -> f64 {
        self.visit_frequencies().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Snapshot taken after `t` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: u64,
    pub sup_error: f64,
    pub min_state_freq: f64,
    pub min_pair_s1: f64,
    pub max_pair_s2: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

/// Result of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub horizon: u64,
    pub final_q: QTable,
    pub initial_error: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub clocks: ClockState,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    /// `N_T(x)/T`, counting visits of `x_0..x_T`.
    pub visit_frequencies: Vec<f64>,
    /// Infimum of `min_x N_t(x)/t` over `t ∈ [T/2, T]`.
    pub running_min_freq_last_half: f64,
    /// Largest `‖Q_t‖∞` seen along the trajectory.
    pub max_q_norm: f64,
}

impl RunResult {
    pub fn final_error(&self) -> f64 {
        self.checkpoints.last().map_or(self.initial_error, |c| c.sup_error)
    }

    pub fn min_visit_frequency(&self) -> f64 {
        self.visit_frequencies.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The checkpoint at exactly step `t`, if recorded.
    pub fn checkpoint(&self, t: u64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.t == t)
    }
}

/// Powers of two below `horizon`, plus `horizon` itself.
pub fn default_checkpoints(horizon: u64) -> Vec<u64> {
    let mut points: Vec<u64> = std::iter::successors(Some(1u64), |p| p.checked_mul(2))
        .take_while(|&p| p < horizon)
        .collect();
    points.push(horizon);
    points
}

fn snapshot(sim: &Simulation, q_star: &QTable) -> Checkpoint {
    Checkpoint {
        t: sim.clocks.t,
        sup_error: sim.q.sup_distance(q_star),
        min_state_freq: sim.min_visit_frequency(),
        min_pair_s1: sim.s1.iter().copied().fold(f64::INFINITY, f64::min),
        max_pair_s2: sim.s2.iter().copied().fold(0.0, f64::max),
        s1: sim.s1.clone(),
        s2: sim.s2.clone(),
    }
}

/// Runs `config.horizon` steps and records the requested checkpoints
/// (values above the horizon are ignored). Deterministic given the seed.
pub fn run(config: &QLearnConfig, q_star: &QTable, checkpoints: &[u64]) -> Result<RunResult, QLearnError> {
    let mut sim = Simulation::new(config)?;
    if q_star.num_states() != config.mdp.num_states() || q_star.num_actions() != config.mdp.num_actions() {
        return Err(QLearnError::TableMismatch);
    }
    let mut marks: Vec<u64> = checkpoints.iter().copied().filter(|&c| c <= config.horizon).collect();
    marks.sort_unstable();
    marks.dedup();
    let mut marks = marks.into_iter().peekable();

    let initial_error = sim.q.sup_distance(q_star);
    let mut recorded = Vec::new();
    let half = config.horizon / 2;
    let mut running_min = f64::INFINITY;
    let mut max_q_norm = sim.q.sup_norm();

    loop {
        let t = sim.clocks.t;
        if marks.peek() == Some(&t) {
            marks.next();
            recorded.push(snapshot(&sim, q_star));
            sim.clocks.check_invariants()?;
        }
        if t >= half && t > 0 {
            let inv_t = 1.0 / t as f64;
            let min = sim
                .clocks
                .state_counts
                .iter()
                .enumerate()
                .map(|(x, &n)| (n + u64::from(x == sim.state)) as f64 * inv_t)
                .fold(f64::INFINITY, f64::min);
            running_min = running_min.min(min);
        }
        if t == config.horizon {
            break;
        }
        let record = sim.step(config)?;
        max_q_norm = max_q_norm.max(sim.q.get(record.state, record.action).abs());
        if cfg!(debug_assertions) {
            sim.clocks.check_invariants()?;
        }
    }

    Ok(RunResult {
        seed: config.seed,
        horizon: config.horizon,
        visit_frequencies: sim.visit_frequencies(),
        final_q: sim.q,
        initial_error,
        checkpoints: recorded,
        clocks: sim.clocks,
        s1: sim.s1,
        s2: sim.s2,
        running_min_freq_last_half: running_min,
        max_q_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::solve_q;
    use crate::mdp::tests::{arb_mdp, single_state, two_cycle};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn harmonic() -> ScheduleSpec {
        ScheduleSpec::local_pair_clock(1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn update_examples() {
        let mut q = QTable::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        q_update(&mut q, 0, 0, 1, 1.0, 1.0, 0.9).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 2.8, epsilon = 1e-15);

        let mut q = QTable::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        q_update(&mut q, 0, 0, 1, 1.0, 0.5, 0.9).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 1.4, epsilon = 1e-15);
        assert_eq!(q.get(1, 0), 2.0);

        let mut q = QTable::zeros(2, 2);
        q_update(&mut q, 1, 1, 0, 0.0, 0.3, 0.9).unwrap();
        assert_eq!(q, QTable::zeros(2, 2));

        assert!(matches!(q_update(&mut q, 0, 0, 0, 0.0, 0.0, 0.9), Err(QLearnError::RateOutOfRange(_))));
        assert!(matches!(q_update(&mut q, 0, 0, 0, 0.0, 1.5, 0.9), Err(QLearnError::RateOutOfRange(_))));
    }

    #[test]
    fn first_step_clocks() {
        let mdp = two_cycle(0.9);
        let config = QLearnConfig::new(mdp, PolicySpec::Uniform, harmonic(), 10, 3);
        let mut sim = Simulation::new(&config).unwrap();
        let rec = sim.step(&config).unwrap();
        assert_eq!(rec.t, 0);
        assert_eq!(rec.state, 0);
        assert_eq!(rec.next_state, 1);
        assert_eq!(sim.clocks.state_clock(0), 1);
        assert_eq!(sim.clocks.pair_clock(0, 0), 1);
        assert_eq!(rec.alpha, 1.0);
    }

    #[test]
    fn deterministic_successor_under_point_mass() {
        // a0: 0 -> 1, a1: 0 -> 0; eps-greedy with eps=1 on a single action still a point mass.
        let mdp = Mdp::from_flat(2, 1, 0.5, vec![0.0, 1.0, 1.0, 0.0], vec![0.0; 4]).unwrap();
        let config = QLearnConfig::new(mdp, PolicySpec::EpsGreedy { epsilon: 1.0 }, harmonic(), 5, 1);
        let mut sim = Simulation::new(&config).unwrap();
        for expected in [1, 0, 1, 0] {
            assert_eq!(sim.step(&config).unwrap().next_state, expected);
        }
    }

    #[test]
    fn harmonic_partial_sums_on_two_cycle() {
        let mut config = QLearnConfig::new(two_cycle(0.9), PolicySpec::Uniform, harmonic(), 40, 0);
        config.record_visit_times = true;
        let mut sim = Simulation::new(&config).unwrap();
        let mut harmonic_number = 0.0;
        for j in 1..=20u64 {
            sim.step(&config).unwrap();
            sim.step(&config).unwrap();
            harmonic_number += 1.0 / j as f64;
            assert_abs_diff_eq!(sim.s1[0], harmonic_number, epsilon = 1e-12);
            assert_abs_diff_eq!(sim.s1[1], harmonic_number, epsilon = 1e-12);
        }
        sim.clocks.check_invariants().unwrap();
        // N_{τ_j}(x) = j: the j-th logged visit of state 0 happened at time 2(j-1).
        let log = &sim.clocks.state_visit_times.as_ref().unwrap()[0];
        assert!(log.iter().enumerate().all(|(j, &tau)| tau == 2 * j as u64));
    }

    #[test]
    fn zero_horizon_run() {
        let mdp = single_state(1.0, 0.5);
        let q_star = solve_q(&mdp, 1e-10).unwrap();
        let config = QLearnConfig::new(mdp, PolicySpec::Uniform, harmonic(), 0, 1);
        let result = run(&config, &q_star, &default_checkpoints(0)).unwrap();
        assert_eq!(result.final_q, config.initial_q);
        assert_abs_diff_eq!(result.final_error(), 2.0, epsilon = 1e-9);
        assert_eq!(result.checkpoints.len(), 1);
        assert_eq!(result.checkpoints[0].t, 0);
    }

    /// With `Q₀ = 0` the error obeys `e_j = e_{j-1}(1 − 1/(2j))`, so
    /// `Q_T − 2 = −2·C(2T,T)/4^T`.
    #[test]
    fn single_state_harmonic_matches_closed_form() {
        let mdp = single_state(1.0, 0.5);
        let q_star = solve_q(&mdp, 1e-12).unwrap();
        let horizon = 10_000u64;
        let config = QLearnConfig::new(mdp, PolicySpec::Uniform, harmonic(), horizon, 1);
        let result = run(&config, &q_star, &default_checkpoints(horizon)).unwrap();
        // C(2T,T)/4^T via a running product to avoid overflow.
        let central = (1..=horizon).fold(1.0f64, |acc, j| acc * (2 * j - 1) as f64 / (2 * j) as f64);
        assert_abs_diff_eq!(result.final_q.get(0, 0) - 2.0, -2.0 * central, epsilon = 1e-12);
        assert!((result.final_q.get(0, 0) - 2.0).abs() < 0.0115);
    }

    #[test]
    fn two_cycle_frequencies() {
        let mdp = two_cycle(0.9);
        let q_star = solve_q(&mdp, 1e-10).unwrap();
        for horizon in [999u64, 1000] {
            let config = QLearnConfig::new(mdp.clone(), PolicySpec::Uniform, harmonic(), horizon, 1);
            let result = run(&config, &q_star, &[]).unwrap();
            for f in &result.visit_frequencies {
                assert!((f - 0.5).abs() <= 1.0 / horizon as f64 + 1e-12);
            }
            let total: f64 = result.visit_frequencies.iter().sum();
            assert_abs_diff_eq!(total, (horizon + 1) as f64 / horizon as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(default_checkpoints(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(default_checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(default_checkpoints(0), vec![0]);
    }

    #[test]
    fn bad_initial_state() {
        let config = QLearnConfig { initial_state: 5, ..QLearnConfig::new(two_cycle(0.5), PolicySpec::Uniform, harmonic(), 1, 1) };
        assert!(matches!(Simulation::new(&config), Err(QLearnError::BadInitialState { .. })));
    }

    #[test]
    fn square_sums_saturate_late() {
        let mdp = crate::reference::reference4();
        let q_star = solve_q(&mdp, 1e-8).unwrap();
        let horizon = 100_000;
        let schedules = [
            ScheduleSpec::local_pair_clock(1.0, 1.0, 0.6).unwrap(),
            ScheduleSpec::local_pair_clock(1.0, 1.0, 1.0).unwrap(),
            ScheduleSpec::state_clock(1.0, 1.0, 0.7).unwrap(),
            ScheduleSpec::global_clock(1.0, 1.0, 0.8).unwrap(),
            ScheduleSpec::power_product(1.0, 1.0, 0.4, 1.0, 1.0, 0.4).unwrap(),
            ScheduleSpec::log_power_product(1.0, 1.0, 1.0, 1.0, 1.0, 0.6).unwrap(),
        ];
        for schedule in schedules {
            let verdict = crate::schedules::diagonal_rm_verdict(&schedule);
            assert!(verdict.sum_sq_converges);
            let config = QLearnConfig::new(mdp.clone(), PolicySpec::Uniform, schedule, horizon, 3);
            let result = run(&config, &q_star, &[horizon * 9 / 10, horizon]).unwrap();
            let late = &result.checkpoint(horizon * 9 / 10).unwrap().s2;
            for (before, total) in late.iter().zip(&result.s2) {
                assert!((total - before) / total < 0.05, "{schedule:?}: {before} -> {total}");
            }
        }
    }

    fn arb_run() -> impl Strategy<Value = (QLearnConfig, u64)> {
        (arb_mdp(4, 3), -10.0..10.0f64, 0.05..1.0f64, 0.0..1.2f64, any::<u64>()).prop_map(
            |(mdp, q0, eps, p, seed)| {
                let schedule = ScheduleSpec::local_pair_clock(1.0, 1.0, p).unwrap();
                let mut config = QLearnConfig::new(mdp, PolicySpec::EpsGreedy { epsilon: eps }, schedule, 300, seed);
                config.initial_q = QTable::constant(config.mdp.num_states(), config.mdp.num_actions(), q0);
                config.record_visit_times = true;
                (config, seed)
            },
        )
    }

    proptest! {
        #[test]
        fn run_invariants((config, seed) in arb_run()) {
            let q_star = solve_q(&config.mdp, 1e-6).unwrap();
            let a = run(&config, &q_star, &default_checkpoints(config.horizon)).unwrap();
            let b = run(&config.with_seed(seed), &q_star, &default_checkpoints(config.horizon)).unwrap();
            prop_assert_eq!(&a, &b);
            a.clocks.check_invariants().unwrap();

            let r_max = config.mdp.max_abs_reward();
            let bound = config.initial_q.sup_norm().max(r_max / (1.0 - config.mdp.discount()));
            prop_assert!(a.max_q_norm <= bound * (1.0 + 1e-12) + 1e-12);
            for (s1, s2) in a.s1.iter().zip(&a.s2) {
                prop_assert!(s2 <= s1);
            }
            for w in a.checkpoints.windows(2) {
                for (lo, hi) in w[0].s2.iter().zip(&w[1].s2) {
                    prop_assert!(lo <= hi);
                }
            }
        }
    }
}
