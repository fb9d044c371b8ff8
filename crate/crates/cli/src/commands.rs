use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clockwork_core::qlearn::{default_checkpoints, run, RunResult};
use clockwork_core::verify::{verify_all, VerifyError};
use clockwork_core::{
    communication_certificate, decaying_compatibility, diagonal_rm_verdict, is_communicating, solve_q,
    theorem2_admissible, value_from_q, visit_rate_lower_bound, PolicySpec, ScheduleError,
};
use rayon::prelude::*;

use crate::config::{load_experiment, load_mdp, load_schedule_check};
use crate::error::{CliError, CliResult};

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Verification ran but a certified check failed.
    ChecksFailed,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn verify_error(err: VerifyError) -> CliError {
    match err {
        VerifyError::InadmissibleSchedule(reason) => CliError::Gate(reason),
        VerifyError::NoSeeds => CliError::Input(err.to_string()),
        VerifyError::Chain(e) => CliError::component("chain_analysis", e),
        VerifyError::QLearn(e) => CliError::component("qlearn", e),
        VerifyError::Mdp(e) => CliError::component("mdp_core", e),
        e @ (VerifyError::NotCommunicating | VerifyError::NonPersistentPolicy(_)) => {
            CliError::component("verify_harness", e)
        }
    }
}

pub fn analyze(mdp_path: &Path, out: Option<&Path>) -> CliResult<Outcome> {
    let mdp = load_mdp(mdp_path)?;
    let mut text = String::new();
    let communicating = is_communicating(&mdp).map_err(|e| CliError::component("chain_analysis", e))?;
    if communicating {
        let cert = communication_certificate(&mdp).map_err(|e| CliError::component("chain_analysis", e))?;
        let _ = writeln!(text, "communicating: true, n={}, delta={:?}", cert.n, cert.delta);
        let k = mdp.num_actions();
        for scale in [1.0, 0.1] {
            let c = scale / k as f64;
            let bound = visit_rate_lower_bound(&cert, c, k).map_err(|e| CliError::component("chain_analysis", e))?;
            let _ = writeln!(text, "visit-rate bound (c={c:?}): {bound:?}");
        }
    } else {
        let _ = writeln!(text, "communicating: false");
    }
    print!("{text}");
    if let Some(dir) = out {
        write_file(dir, "analysis.txt", &text)?;
    }
    Ok(Outcome::Success)
}

pub fn solve(mdp_path: &Path, tol: f64, out: Option<&Path>) -> CliResult<Outcome> {
    let mdp = load_mdp(mdp_path)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Input(format!("tolerance must be positive, got {tol}")));
    }
    let q = solve_q(&mdp, tol).map_err(|e| CliError::component("mdp_core", e))?;
    let v = value_from_q(&q);

    let mut qcsv = String::from("state,action,q\n");
    for x in 0..q.num_states() {
        for a in 0..q.num_actions() {
            let _ = writeln!(qcsv, "{x},{a},{:?}", q.get(x, a));
        }
    }
    let mut vcsv = String::from("state,v\n");
    for (x, value) in v.values.iter().enumerate() {
        let _ = writeln!(vcsv, "{x},{value:?}");
    }
    let dir = out.unwrap_or(Path::new("."));
    let qpath = write_file(dir, "qstar.csv", &qcsv)?;
    let vpath = write_file(dir, "vstar.csv", &vcsv)?;
    println!("wrote {} and {}", qpath.display(), vpath.display());
    Ok(Outcome::Success)
}

pub fn schedule_check(config_path: &Path, out: Option<&Path>) -> CliResult<Outcome> {
    let file = load_schedule_check(config_path)?;
    let schedule = file.schedule;
    let verdict = diagonal_rm_verdict(&schedule);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "schedule: {}",
        serde_json::to_string(&schedule).map_err(|e| CliError::component("schedules", e))?
    );
    let _ = writeln!(
        text,
        "diagonal verdict: sum diverges = {}, sum of squares converges = {} ({:?})",
        verdict.sum_diverges, verdict.sum_sq_converges, verdict.basis
    );
    let _ = writeln!(text, "reciprocal non-decreasing: {}", schedule.reciprocal_is_monotone());
    match theorem2_admissible(&schedule) {
        Ok(ok) => {
            let _ = writeln!(text, "admissible (t, N_t): {ok}");
        }
        Err(ScheduleError::PairClockNotCovered) => {
            let _ = writeln!(text, "admissible (t, N_t): not applicable (pair clock not covered)");
        }
        Err(e) => return Err(CliError::component("schedules", e)),
    }
    if let Some(PolicySpec::DecayingEps { floor }) = file.policy {
        match decaying_compatibility(&floor, &schedule) {
            Ok(v) => {
                let _ = writeln!(
                    text,
                    "decaying exploration: sum diverges = {}, sum of squares converges = {}",
                    v.sum_diverges, v.sum_sq_converges
                );
            }
            Err(e) => {
                let _ = writeln!(text, "decaying exploration: {e}");
            }
        }
    }
    print!("{text}");
    if let Some(dir) = out {
        write_file(dir, "schedule_check.txt", &text)?;
    }
    Ok(Outcome::Success)
}

fn run_csv(result: &RunResult) -> String {
    let mut csv = String::from("checkpoint_t,sup_error,min_state_freq,min_pair_S1,max_pair_S2\n");
    for c in &result.checkpoints {
        let _ = writeln!(
            csv,
            "{},{:?},{:?},{:?},{:?}",
            c.t, c.sup_error, c.min_state_freq, c.min_pair_s1, c.max_pair_s2
        );
    }
    csv
}

pub fn simulate(config_path: &Path, require_theorem2: bool, out: Option<&Path>) -> CliResult<Outcome> {
    let experiment = load_experiment(config_path)?;
    let spec = &experiment.spec;
    if require_theorem2 {
        match theorem2_admissible(&spec.base.schedule) {
            Ok(true) => {}
            Ok(false) => {
                let v = diagonal_rm_verdict(&spec.base.schedule);
                return Err(CliError::Gate(format!(
                    "schedule not admissible: sum diverges = {}, sum of squares converges = {}",
                    v.sum_diverges, v.sum_sq_converges
                )));
            }
            Err(e) => return Err(CliError::Gate(format!("{e:?}: {e}"))),
        }
    }
    let q_star = solve_q(&spec.base.mdp, spec.tolerances.solve_tol).map_err(|e| CliError::component("mdp_core", e))?;
    let checkpoints = default_checkpoints(spec.horizon());
    let runs = spec
        .seeds()
        .into_par_iter()
        .map(|seed| run(&spec.base.with_seed(seed), &q_star, &checkpoints))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::component("qlearn", e))?;

    let dir = out.map(Path::to_path_buf).or_else(|| experiment.output_dir.clone()).unwrap_or_else(|| ".".into());
    let mut summary = String::from("seed,horizon,initial_error,final_error\n");
    for r in &runs {
        write_file(&dir, &format!("run_seed_{}.csv", r.seed), &run_csv(r))?;
        if r.horizon == 0 {
            let _ = writeln!(summary, "{},0,{:?},", r.seed, r.initial_error);
        } else {
            let _ = writeln!(summary, "{},{},{:?},{:?}", r.seed, r.horizon, r.initial_error, r.final_error());
        }
    }
    write_file(&dir, "summary.csv", &summary)?;
    let mean = runs.iter().map(RunResult::final_error).sum::<f64>() / runs.len() as f64;
    println!("{} runs, horizon {}, mean final error {mean:?}", runs.len(), spec.horizon());
    println!("wrote {}", dir.display());
    Ok(Outcome::Success)
}

pub fn verify(config_path: &Path, exploratory: bool, out: Option<&Path>) -> CliResult<Outcome> {
    let mut experiment = load_experiment(config_path)?;
    experiment.spec.exploratory |= exploratory;
    let report = verify_all(&experiment.spec).map_err(verify_error)?;
    let text = report.to_text();
    let dir = out.map(Path::to_path_buf).or(experiment.output_dir).unwrap_or_else(|| ".".into());
    write_file(&dir, "report.txt", &text)?;
    write_file(&dir, "report.csv", &report.to_csv())?;
    print!("{text}");
    if report.certified && !report.passed() {
        Ok(Outcome::ChecksFailed)
    } else {
        Ok(Outcome::Success)
    }
}
