//! Experiment and MDP file loading.

use std::fs;
use std::path::{Path, PathBuf};

use clockwork_core::verify::{Check, ExperimentSpec, Tolerances};
use clockwork_core::{Mdp, MdpFile, PolicySpec, QLearnConfig, QTable, ScheduleSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const SEED_OVERRIDE_VAR: &str = "CLOCKWORK_SEED_OVERRIDE";

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MdpSource {
    /// Path relative to the config file.
    Path(PathBuf),
    Inline(MdpFile),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub base: u64,
}

fn one() -> usize {
    1
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { count: 1, base: 0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialQ {
    Constant(f64),
    Table(Vec<Vec<f64>>),
}

fn all_checks() -> Vec<Check> {
    vec![Check::VisitBound, Check::RmSeries, Check::Convergence]
}

/// On-disk experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfigFile {
    pub mdp: MdpSource,
    pub policy: PolicySpec,
    pub schedule: ScheduleSpec,
    pub horizon: u64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub initial_state: usize,
    #[serde(default)]
    pub initial_q: Option<InitialQ>,
    #[serde(default = "all_checks")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub record_visit_times: bool,
    #[serde(default)]
    pub exploratory: bool,
}

/// The parts of a config that `schedule-check` reads. Other keys are ignored.
#[derive(Debug, Clone, Deserialize)]
pub struct ScheduleCheckFile {
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
}

/// A loaded and validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Parses JSON, reporting line and column on failure.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })
}

fn mdp_from_file(path: &Path, file: MdpFile) -> CliResult<Mdp> {
    let mdp = file.into_mdp().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    mdp.ensure_valid().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(mdp)
}

pub fn load_mdp(path: &Path) -> CliResult<Mdp> {
    let file: MdpFile = parse_json(path, &read(path)?)?;
    mdp_from_file(path, file)
}

pub fn load_schedule_check(path: &Path) -> CliResult<ScheduleCheckFile> {
    let file: ScheduleCheckFile = parse_json(path, &read(path)?)?;
    file.schedule.validate().map_err(|e| CliError::Input(format!("{}: schedule: {e}", path.display())))?;
    Ok(file)
}

fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_OVERRIDE_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Input(format!("{SEED_OVERRIDE_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn load_experiment(path: &Path) -> CliResult<Experiment> {
    let file: ExperimentConfigFile = parse_json(path, &read(path)?)?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let invalid = |what: &str, e: &dyn std::fmt::Display| CliError::Input(format!("{}: {what}: {e}", path.display()));

    let mdp = match file.mdp {
        MdpSource::Path(p) => load_mdp(&base_dir.join(p))?,
        MdpSource::Inline(m) => mdp_from_file(path, m)?,
    };
    file.schedule.validate().map_err(|e| invalid("schedule", &e))?;
    file.policy.validate(mdp.num_actions()).map_err(|e| invalid("policy", &e))?;
    if file.seeds.count == 0 {
        return Err(CliError::Input(format!("{}: seeds.count must be at least 1", path.display())));
    }

    let (states, actions) = (mdp.num_states(), mdp.num_actions());
    let initial_q = match file.initial_q {
        None => QTable::zeros(states, actions),
        Some(InitialQ::Constant(v)) => QTable::constant(states, actions, v),
        Some(InitialQ::Table(rows)) => QTable::from_rows(&rows).map_err(|e| invalid("initial_q", &e))?,
    };
    let mut base = QLearnConfig::new(mdp, file.policy, file.schedule, file.horizon, 0);
    base.initial_state = file.initial_state;
    base.initial_q = initial_q;
    base.record_visit_times = file.record_visit_times;
    base.validate().map_err(|e| invalid("config", &e))?;

    let base_seed = seed_override()?.unwrap_or(file.seeds.base);
    let mut spec = ExperimentSpec::new(base, file.seeds.count, base_seed);
    spec.checks = file.checks;
    spec.tolerances = file.tolerances;
    spec.exploratory = file.exploratory;
    Ok(Experiment { spec, output_dir: file.output_dir.map(|d| base_dir.join(d)) })
}
