//! Python bindings: MDPs, schedules, exploration policies, Q-learning runs
//! and the verification harness.

use std::path::PathBuf;

use clockwork_core::qlearn::default_checkpoints;
use clockwork_core::verify::{verify_all, Check};
use clockwork_core::{
    action_distribution, brute_force_communicating, communication_certificate, diagonal_rm_verdict, induced_chain,
    is_communicating, lemma1_exact_check, persistent_lower_bound, q_backup, rate, reference, run as run_q,
    solve_q, theorem2_admissible, value_from_q, visit_rate_lower_bound, ExperimentSpec, Mdp, MdpFile, PolicySpec,
    PowerFloor, QLearnConfig, QTable, ScheduleSpec, StationaryStrategy,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn table(rows: &[Vec<f64>]) -> PyResult<QTable> {
    QTable::from_rows(rows).map_err(value_error)
}

/// A finite discounted MDP with kernel and reward indexed `[x][a][y]`.
#[pyclass(name = "Mdp", module = "clockwork", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMdp {
    inner: Mdp,
}

#[pymethods]
impl PyMdp {
    #[new]
    fn new(kernel: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<Vec<f64>>>, discount: f64) -> PyResult<Self> {
        let inner = Mdp::from_nested(discount, &kernel, &reward).map_err(value_error)?;
        Ok(PyMdp { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: MdpFile = serde_json::from_str(text).map_err(value_error)?;
        Ok(PyMdp { inner: file.into_mdp().map_err(value_error)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_json(&text)
    }

    /// Bundled instance: `reference4`, `reference3`, `two_cycle`,
    /// `absorbing` or `single_state`.
    #[staticmethod]
    fn reference(name: &str) -> PyResult<Self> {
        let inner = match name {
            "reference4" => reference::reference4(),
            "reference3" => reference::reference3(),
            "two_cycle" => reference::two_cycle(),
            "absorbing" => reference::absorbing(),
            "single_state" => reference::single_state(),
            _ => return Err(PyValueError::new_err(format!("unknown reference instance {name:?}"))),
        };
        Ok(PyMdp { inner })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    fn kernel(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.to_nested().0
    }

    fn reward(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.to_nested().1
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Violated invariants as messages; empty when valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().violations.iter().map(ToString::to_string).collect()
    }

    #[pyo3(signature = (tol = 1e-8))]
    fn solve_q(&self, py: Python<'_>, tol: f64) -> PyResult<Vec<Vec<f64>>> {
        let q = py.detach(|| solve_q(&self.inner, tol)).map_err(value_error)?;
        Ok(q.to_rows())
    }

    #[pyo3(signature = (tol = 1e-8))]
    fn solve_v(&self, py: Python<'_>, tol: f64) -> PyResult<Vec<f64>> {
        let q = py.detach(|| solve_q(&self.inner, tol)).map_err(value_error)?;
        Ok(value_from_q(&q).values)
    }

    /// One application of the Bellman map to a Q table.
    fn bellman(&self, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(q_backup(&self.inner, &table(&q)?).map_err(value_error)?.to_rows())
    }

    fn is_communicating(&self) -> PyResult<bool> {
        is_communicating(&self.inner).map_err(value_error)
    }

    fn brute_force_communicating(&self) -> PyResult<bool> {
        brute_force_communicating(&self.inner).map_err(value_error)
    }

    /// `(n, delta)` for the uniform strategy.
    fn certificate(&self) -> PyResult<(usize, f64)> {
        let cert = communication_certificate(&self.inner).map_err(value_error)?;
        Ok((cert.n, cert.delta))
    }

    fn visit_rate_bound(&self, c: f64) -> PyResult<f64> {
        let cert = communication_certificate(&self.inner).map_err(value_error)?;
        visit_rate_lower_bound(&cert, c, self.inner.num_actions()).map_err(value_error)
    }

    /// Transition matrix of the chain induced by a stationary strategy.
    fn induced_chain(&self, strategy: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = StationaryStrategy::from_rows(&strategy).map_err(value_error)?;
        Ok(induced_chain(&self.inner, &g).map_err(value_error)?.to_rows())
    }

    /// Exact check of the occupation inequality for strategy `g`, floor `c`
    /// and nonnegative `f`.
    fn lemma1_check<'py>(
        &self,
        py: Python<'py>,
        strategy: Vec<Vec<f64>>,
        c: f64,
        f: Vec<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let g = StationaryStrategy::from_rows(&strategy).map_err(value_error)?;
        let cert = communication_certificate(&self.inner).map_err(value_error)?;
        let report = lemma1_exact_check(&self.inner, &g, c, &f, &cert).map_err(value_error)?;
        let d = PyDict::new(py);
        d.set_item("lhs", report.lhs)?;
        d.set_item("rhs", report.rhs)?;
        d.set_item("min_slack", report.min_slack)?;
        d.set_item("passed", report.passed)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(states={}, actions={}, discount={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.discount()
        )
    }
}

/// A parametric learning-rate schedule.
#[pyclass(name = "Schedule", module = "clockwork", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PySchedule {
    inner: ScheduleSpec,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (p, a = 1.0, b = 1.0))]
    fn local_pair_clock(p: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: ScheduleSpec::local_pair_clock(a, b, p).map_err(value_error)? })
    }

    #[staticmethod]
    #[pyo3(signature = (p, a = 1.0, b = 1.0))]
    fn state_clock(p: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: ScheduleSpec::state_clock(a, b, p).map_err(value_error)? })
    }

    #[staticmethod]
    #[pyo3(signature = (p, a = 1.0, b = 1.0))]
    fn global_clock(p: f64, a: f64, b: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: ScheduleSpec::global_clock(a, b, p).map_err(value_error)? })
    }

    #[staticmethod]
    #[pyo3(signature = (alpha, beta, a1 = 1.0, b1 = 1.0, a2 = 1.0, b2 = 1.0))]
    fn power_product(alpha: f64, beta: f64, a1: f64, b1: f64, a2: f64, b2: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: ScheduleSpec::power_product(a1, b1, alpha, a2, b2, beta).map_err(value_error)? })
    }

    #[staticmethod]
    #[pyo3(signature = (alpha, beta, a1 = 1.0, b1 = 1.0, a2 = 1.0, b2 = 1.0))]
    fn log_power_product(alpha: f64, beta: f64, a1: f64, b1: f64, a2: f64, b2: f64) -> PyResult<Self> {
        Ok(PySchedule { inner: ScheduleSpec::log_power_product(a1, b1, alpha, a2, b2, beta).map_err(value_error)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ScheduleSpec = serde_json::from_str(text).map_err(value_error)?;
        inner.validate().map_err(value_error)?;
        Ok(PySchedule { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("schedule serializes")
    }

    fn rate(&self, t: u64, state_clock: u64, pair_clock: u64) -> PyResult<f64> {
        rate(&self.inner, t, state_clock, pair_clock).map_err(value_error)
    }

    /// `(sum diverges, sum of squares converges)` along the diagonal.
    fn verdict(&self) -> (bool, bool) {
        let v = diagonal_rm_verdict(&self.inner);
        (v.sum_diverges, v.sum_sq_converges)
    }

    /// Raises `ValueError` for pair-clock schedules, which the `(t, N_t)`
    /// conditions do not cover.
    fn theorem2_admissible(&self) -> PyResult<bool> {
        theorem2_admissible(&self.inner).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!("Schedule({})", self.to_json())
    }
}

/// How actions are drawn at each step.
#[pyclass(name = "Policy", module = "clockwork", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPolicy {
    inner: PolicySpec,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn uniform() -> Self {
        PyPolicy { inner: PolicySpec::Uniform }
    }

    #[staticmethod]
    fn eps_greedy(epsilon: f64) -> Self {
        PyPolicy { inner: PolicySpec::EpsGreedy { epsilon } }
    }

    #[staticmethod]
    fn boltzmann(temperature: f64) -> Self {
        PyPolicy { inner: PolicySpec::Boltzmann { temperature } }
    }

    /// ε-greedy with floor `c0 / (1 + N)^gamma` per action.
    #[staticmethod]
    fn decaying_eps(c0: f64, gamma: f64) -> Self {
        PyPolicy { inner: PolicySpec::DecayingEps { floor: PowerFloor { c0, gamma } } }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPolicy { inner: serde_json::from_str(text).map_err(value_error)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("policy serializes")
    }

    #[getter]
    fn is_persistent(&self) -> bool {
        self.inner.is_persistent()
    }

    /// Action probabilities at `state` for table `q` after `state_clock` visits.
    #[pyo3(signature = (q, state, state_clock = 1))]
    fn distribution(&self, q: Vec<Vec<f64>>, state: usize, state_clock: u64) -> PyResult<Vec<f64>> {
        let dist = action_distribution(&self.inner, &table(&q)?, state, state_clock).map_err(value_error)?;
        Ok(dist.probs().to_vec())
    }

    fn lower_bound(&self, q_range: f64, num_actions: usize) -> f64 {
        persistent_lower_bound(&self.inner, q_range, num_actions)
    }

    fn __repr__(&self) -> String {
        format!("Policy({})", self.to_json())
    }
}

#[allow(clippy::too_many_arguments)]
fn config(
    mdp: &PyMdp,
    policy: &PyPolicy,
    schedule: &PySchedule,
    horizon: u64,
    seed: u64,
    initial_state: usize,
    initial_q: Option<Vec<Vec<f64>>>,
) -> PyResult<QLearnConfig> {
    let mut cfg = QLearnConfig::new(mdp.inner.clone(), policy.inner, schedule.inner, horizon, seed);
    cfg.initial_state = initial_state;
    if let Some(rows) = initial_q {
        cfg.initial_q = table(&rows)?;
    }
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// One seeded Q-learning trajectory. Returns a dict with the final table,
/// per-checkpoint errors, partial sums and visit frequencies.
#[pyfunction]
#[pyo3(signature = (mdp, policy, schedule, horizon, seed = 0, initial_state = 0, initial_q = None, checkpoints = None, tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    policy: &PyPolicy,
    schedule: &PySchedule,
    horizon: u64,
    seed: u64,
    initial_state: usize,
    initial_q: Option<Vec<Vec<f64>>>,
    checkpoints: Option<Vec<u64>>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(mdp, policy, schedule, horizon, seed, initial_state, initial_q)?;
    let marks = checkpoints.unwrap_or_else(|| default_checkpoints(horizon));
    let result = py
        .detach(|| {
            let q_star = solve_q(&cfg.mdp, tol).map_err(|e| e.to_string())?;
            run_q(&cfg, &q_star, &marks).map_err(|e| e.to_string())
        })
        .map_err(PyValueError::new_err)?;

    let d = PyDict::new(py);
    d.set_item("seed", result.seed)?;
    d.set_item("horizon", result.horizon)?;
    d.set_item("final_q", result.final_q.to_rows())?;
    d.set_item("initial_error", result.initial_error)?;
    d.set_item("final_error", result.final_error())?;
    let rows: Vec<(u64, f64, f64, f64, f64)> = result
        .checkpoints
        .iter()
        .map(|c| (c.t, c.sup_error, c.min_state_freq, c.min_pair_s1, c.max_pair_s2))
        .collect();
    d.set_item("checkpoints", rows)?;
    d.set_item("s1", result.s1)?;
    d.set_item("s2", result.s2)?;
    d.set_item("state_counts", result.clocks.state_counts)?;
    d.set_item("pair_counts", result.clocks.pair_counts)?;
    d.set_item("visit_frequencies", result.visit_frequencies)?;
    d.set_item("max_q_norm", result.max_q_norm)?;
    Ok(d)
}

fn parse_check(name: &str) -> PyResult<Check> {
    match name {
        "visit_bound" => Ok(Check::VisitBound),
        "rm_series" => Ok(Check::RmSeries),
        "convergence" => Ok(Check::Convergence),
        _ => Err(PyValueError::new_err(format!("unknown check {name:?}"))),
    }
}

/// Runs the requested checks over `seeds` runs and returns the report as a
/// dict with `passed`, `certified`, `text` and `csv`.
#[pyfunction]
#[pyo3(signature = (mdp, policy, schedule, horizon, seeds = 4, base_seed = 0, checks = None, exploratory = false))]
#[allow(clippy::too_many_arguments)]
fn verify<'py>(
    py: Python<'py>,
    mdp: &PyMdp,
    policy: &PyPolicy,
    schedule: &PySchedule,
    horizon: u64,
    seeds: usize,
    base_seed: u64,
    checks: Option<Vec<String>>,
    exploratory: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(mdp, policy, schedule, horizon, base_seed, 0, None)?;
    let mut spec = ExperimentSpec::new(cfg, seeds, base_seed);
    if let Some(names) = checks {
        spec.checks = names.iter().map(|n| parse_check(n)).collect::<PyResult<_>>()?;
    }
    spec.exploratory = exploratory;
    let report = py.detach(|| verify_all(&spec)).map_err(value_error)?;
    let d = PyDict::new(py);
    d.set_item("passed", report.passed())?;
    d.set_item("certified", report.certified)?;
    d.set_item("text", report.to_text())?;
    d.set_item("csv", report.to_csv())?;
    Ok(d)
}

#[pymodule]
fn clockwork(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
