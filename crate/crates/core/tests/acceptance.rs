//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the evidence it was judged on.

use std::io::Write;
use std::time::{Duration, Instant};

use clockwork_core::chain::{
    brute_force_communicating, communication_certificate, induced_chain, is_communicating, lemma1_exact_check,
    uniform_strategy,
};
use clockwork_core::mdp::{q_backup, solve_q, Mdp, QTable};
use clockwork_core::qlearn::{default_checkpoints, run, QLearnConfig};
use clockwork_core::reference;
use clockwork_core::schedules::{diagonal_rm_verdict, theorem2_admissible, ScheduleSpec};
use clockwork_core::verify::{evaluate_rm_series, run_batch, verify_convergence, verify_visit_bound, ExperimentSpec};
use clockwork_core::PolicySpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written to the raw stderr handle so the line shows even when output is captured.
fn report(id: u32, passed: bool, detail: String) {
    let line = format!("criterion {id}: {} | {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

/// Kernel rows with each entry zeroed with probability 1/2, then re-normalized.
fn sparse_mdp(rng: &mut ChaCha8Rng, states: usize, actions: usize) -> Mdp {
    let mut kernel = Vec::with_capacity(states * actions * states);
    for _ in 0..states * actions {
        let mut row: Vec<f64> = (0..states)
            .map(|_| if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        if row.iter().all(|&p| p == 0.0) {
            row[rng.gen_range(0..states)] = 1.0;
        }
        let sum: f64 = row.iter().sum();
        kernel.extend(row.into_iter().map(|p| p / sum));
    }
    let reward = (0..states * actions * states).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Mdp::from_flat(states, actions, 0.9, kernel, reward).unwrap()
}

fn criterion1_instances() -> Vec<Mdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    (0..100).map(|_| sparse_mdp(&mut rng, 3, 2)).collect()
}

/// Plain `Σ_{j=1..m} P^j` for every m up to `max`, written without the library's matrix code.
fn power_sums(p: &[Vec<f64>], max: usize) -> Vec<Vec<Vec<f64>>> {
    let n = p.len();
    let mut power = p.to_vec();
    let mut sum = p.to_vec();
    let mut sums = vec![sum.clone()];
    for _ in 1..max {
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = (0..n).map(|k| power[i][k] * p[k][j]).sum();
            }
        }
        power = next;
        for i in 0..n {
            for j in 0..n {
                sum[i][j] += power[i][j];
            }
        }
        sums.push(sum.clone());
    }
    sums
}

#[test]
fn criterion_1_communicating_oracle_equivalence() {
    let start = Instant::now();
    let instances = criterion1_instances();
    let mut mismatches = 0;
    let mut communicating = 0;
    for mdp in &instances {
        let fast = is_communicating(mdp).unwrap();
        let brute = brute_force_communicating(mdp).unwrap();
        mismatches += usize::from(fast != brute);
        communicating += usize::from(fast);
    }
    let elapsed = start.elapsed();
    let passed = mismatches == 0 && elapsed < Duration::from_secs(10);
    report(
        1,
        passed,
        format!("{} instances, {communicating} communicating, {mismatches} mismatches, {elapsed:?}", instances.len()),
    );
    assert!(passed);
}

#[test]
fn criterion_2_certificate_soundness() {
    let start = Instant::now();
    let mut checked = 0;
    let mut failures = Vec::new();
    for (i, mdp) in criterion1_instances().iter().enumerate() {
        if !is_communicating(mdp).unwrap() {
            continue;
        }
        checked += 1;
        let cert = communication_certificate(mdp).unwrap();
        let p = induced_chain(mdp, &uniform_strategy(mdp)).unwrap().to_rows();
        let sums = power_sums(&p, cert.n);
        let at_n = &sums[cert.n - 1];
        let min = at_n.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let sound = at_n.iter().flatten().all(|&v| v >= cert.delta - 1e-12) && (min - cert.delta).abs() <= 1e-12;
        let minimal = cert.n == 1 || sums[cert.n - 2].iter().flatten().any(|&v| v == 0.0);
        if !(sound && minimal) {
            failures.push(i);
        }
    }
    let elapsed = start.elapsed();
    let passed = failures.is_empty() && checked > 0 && elapsed < Duration::from_secs(5);
    report(2, passed, format!("{checked} certificates checked, failures {failures:?}, {elapsed:?}"));
    assert!(passed);
}

#[test]
fn criterion_3_occupation_inequality_exact() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut cases = 0;
    let mut worst_slack = f64::INFINITY;
    let mut oracle_gap: f64 = 0.0;
    let mut mdps = 0;
    while mdps < 50 {
        let states = rng.gen_range(1..=4);
        let actions = rng.gen_range(1..=3);
        let mdp = sparse_mdp(&mut rng, states, actions);
        if !is_communicating(&mdp).unwrap() {
            continue;
        }
        mdps += 1;
        let cert = communication_certificate(&mdp).unwrap();
        let g = uniform_strategy(&mdp);
        let c = 1.0 / actions as f64;
        let p = induced_chain(&mdp, &g).unwrap().to_rows();
        for _ in 0..5 {
            let f: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
            let result = lemma1_exact_check(&mdp, &g, c, &f, &cert).unwrap();
            cases += 1;
            worst_slack = worst_slack.min(result.min_slack);
            // Independent evaluation of Σ_j Σ_z q(z|x,a) (P^j f)(z).
            let sums = power_sums(&p, cert.n);
            let h: Vec<f64> = (0..states).map(|z| (0..states).map(|y| sums[cert.n - 1][z][y] * f[y]).sum()).collect();
            for x in 0..states {
                for a in 0..actions {
                    let lhs: f64 = (0..states).map(|z| mdp.prob(x, a, z) * h[z]).sum();
                    oracle_gap = oracle_gap.max((lhs - result.lhs[x * actions + a]).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = cases == 250 && worst_slack >= -1e-10 && oracle_gap <= 1e-12 && elapsed < Duration::from_secs(10);
    report(
        3,
        passed,
        format!("{cases} cases, worst slack {worst_slack:e}, oracle gap {oracle_gap:e}, {elapsed:?}"),
    );
    assert!(passed);
}

#[test]
fn criterion_4_visit_rate_bound() {
    let start = Instant::now();
    let schedule = ScheduleSpec::local_pair_clock(1.0, 1.0, 0.7).unwrap();
    let base = QLearnConfig::new(reference::reference4(), PolicySpec::Uniform, schedule, 200_000, 0);
    let spec = ExperimentSpec::new(base, 32, 1000);
    let visit = verify_visit_bound(&spec).unwrap();

    let horizon = 100_001u64;
    let cycle = reference::two_cycle();
    let q_star = solve_q(&cycle, 1e-8).unwrap();
    let cycle_config = QLearnConfig::new(cycle.clone(), PolicySpec::Uniform, schedule, horizon, 5);
    let cycle_run = run(&cycle_config, &q_star, &[]).unwrap();
    let cert = communication_certificate(&cycle).unwrap();
    let cycle_bound = clockwork_core::visit_rate_lower_bound(&cert, 1.0, 1).unwrap();
    let cycle_gap = (cycle_run.min_visit_frequency() - cycle_bound).abs();

    let elapsed = start.elapsed();
    let passed = visit.passed && cycle_gap <= 2.0 / horizon as f64 && elapsed < Duration::from_secs(120);
    let worst = visit.seeds.iter().map(|s| s.min_freq).fold(f64::INFINITY, f64::min);
    report(
        4,
        passed,
        format!(
            "n={}, delta={:.6}, bound={:.6}, threshold={:.6}, worst seed min freq={worst:.6}, pass fraction={}, 2-cycle gap={cycle_gap:e}, {elapsed:?}",
            visit.certificate.n, visit.certificate.delta, visit.bound, visit.threshold, visit.pass_fraction
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_5_schedule_verdicts() {
    let grid: Vec<u32> = (1..=10).collect();
    let mut mismatches = Vec::new();
    for &i in &grid {
        for &j in &grid {
            let (alpha, beta) = (i as f64 / 10.0, j as f64 / 10.0);
            let pp = ScheduleSpec::power_product(1.0, 1.0, alpha, 1.0, 1.0, beta).unwrap();
            // α+β ∈ (1/2, 1] in exact decimal arithmetic.
            let expected = i + j > 5 && i + j <= 10;
            if theorem2_admissible(&pp).unwrap() != expected {
                mismatches.push(format!("power({alpha},{beta})"));
            }
            let lpp = ScheduleSpec::log_power_product(1.0, 1.0, alpha, 1.0, 1.0, beta).unwrap();
            let admissible = theorem2_admissible(&lpp).unwrap();
            if i > 5 && j >= 5 && !admissible {
                mismatches.push(format!("log-power({alpha},{beta}) in the stated family but rejected"));
            }
            // Exact verdict for the log family: 1/((ln t)^α t^β).
            let v = diagonal_rm_verdict(&lpp);
            let diverges = j < 10 || i <= 10;
            let squares = j > 5 || (j == 5 && i > 5);
            if v.sum_diverges != diverges || v.sum_sq_converges != squares || admissible != (diverges && squares) {
                mismatches.push(format!("log-power({alpha},{beta}) verdict {v:?}"));
            }
        }
    }
    let passed = mismatches.is_empty();
    report(5, passed, format!("200 grid points, mismatches {mismatches:?}"));
    assert!(passed);
}

#[test]
fn criterion_6_rm_partial_sums() {
    let start = Instant::now();
    let schedule = ScheduleSpec::power_product(1.0, 1.0, 0.4, 1.0, 1.0, 0.4).unwrap();
    let base = QLearnConfig::new(
        reference::reference4(),
        PolicySpec::EpsGreedy { epsilon: 0.2 },
        schedule,
        1_000_000,
        0,
    );
    let spec = ExperimentSpec::new(base, 4, 2000);
    let batch = run_batch(&spec).unwrap();
    let rm = evaluate_rm_series(&spec, &batch).unwrap();
    let elapsed = start.elapsed();
    let worst_growth = rm.seeds.iter().map(|s| s.worst_growth.1).fold(f64::INFINITY, f64::min);
    let worst_saturation = rm.seeds.iter().map(|s| s.worst_saturation.1).fold(f64::NEG_INFINITY, f64::max);
    let passed = worst_growth >= 1.5 && worst_saturation < 0.10 && elapsed < Duration::from_secs(120);
    report(
        6,
        passed,
        format!(
            "min S1(T)/S1(T/4) = {worst_growth:.4} (need >= 1.5), max S2 late share = {worst_saturation:.5} (need < 0.10), {elapsed:?}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_7_convergence_pipeline() {
    let start = Instant::now();
    let schedule = ScheduleSpec::local_pair_clock(1.0, 1.0, 0.7).unwrap();
    let base = QLearnConfig::new(
        reference::reference3(),
        PolicySpec::EpsGreedy { epsilon: 0.2 },
        schedule,
        500_000,
        0,
    );
    let spec = ExperimentSpec::new(base, 8, 3000);
    let conv = verify_convergence(&spec).unwrap();
    let elapsed = start.elapsed();
    let passed = conv.mean_relative_error <= 0.05 && elapsed < Duration::from_secs(180);
    report(
        7,
        passed,
        format!(
            "mean |Q_T - Q*| = {:.5}, |Q*| = {:.4}, relative = {:.5} (need <= 0.05), trend fraction {}, {elapsed:?}",
            conv.mean_error, conv.q_star_norm, conv.mean_relative_error, conv.trend_fraction
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_8_scalar_oracle() {
    let start = Instant::now();
    let mdp = reference::single_state();
    let q_star = solve_q(&mdp, 1e-12).unwrap();
    let schedule = ScheduleSpec::local_pair_clock(1.0, 0.0, 1.0).unwrap();
    let horizon = 10_000u64;
    let config = QLearnConfig::new(mdp, PolicySpec::Uniform, schedule, horizon, 8);
    let result = run(&config, &q_star, &default_checkpoints(horizon)).unwrap();
    let learned = result.final_q.get(0, 0);

    // Q_j = (1 − 1/j) Q_{j−1} + (1/j)(1 + 0.5 Q_{j−1}), Q_0 = 0.
    let mut scalar = 0.0f64;
    for j in 1..=horizon {
        let step = 1.0 / j as f64;
        scalar = (1.0 - step) * scalar + step * (1.0 + 0.5 * scalar);
    }
    let error = (learned - 2.0).abs();
    let agreement = (learned - scalar).abs();
    let elapsed = start.elapsed();
    let passed = error < 0.01 && agreement <= 1e-12 && elapsed < Duration::from_secs(1);
    report(
        8,
        passed,
        format!("Q_T = {learned:.6}, |Q_T - 2| = {error:.6} (need < 0.01), |Q_T - scalar recursion| = {agreement:e}, {elapsed:?}"),
    );
    assert!(passed);
}

#[test]
fn criterion_9_contraction_and_boundedness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut contraction_failures = 0;
    let mut monotone_failures = 0;
    for _ in 0..1000 {
        let states = rng.gen_range(1..=5);
        let actions = rng.gen_range(1..=3);
        let mut mdp = sparse_mdp(&mut rng, states, actions);
        let beta = rng.gen_range(0.0..0.99);
        let (k, r) = mdp.to_nested();
        mdp = Mdp::from_nested(beta, &k, &r).unwrap();
        let q1 = QTable::from_rows(
            &(0..states).map(|_| (0..actions).map(|_| rng.gen_range(-20.0..20.0)).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let q2 = QTable::from_rows(
            &(0..states).map(|_| (0..actions).map(|_| rng.gen_range(-20.0..20.0)).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let (t1, t2) = (q_backup(&mdp, &q1).unwrap(), q_backup(&mdp, &q2).unwrap());
        if t1.sup_distance(&t2) > beta * q1.sup_distance(&q2) + 1e-12 {
            contraction_failures += 1;
        }
        let hi = QTable::from_rows(
            &q1.to_rows().iter().map(|row| row.iter().map(|v| v + rng.gen_range(0.0..3.0)).collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let t_hi = q_backup(&mdp, &hi).unwrap();
        if t1.values().iter().zip(t_hi.values()).any(|(a, b)| *a > b + 1e-12) {
            monotone_failures += 1;
        }
    }

    let mut bound_failures = 0;
    let mut clock_failures = 0;
    for case in 0..1000u64 {
        let states = rng.gen_range(1..=4);
        let actions = rng.gen_range(1..=3);
        let mdp = sparse_mdp(&mut rng, states, actions);
        let q0 = rng.gen_range(-15.0..15.0);
        let p = rng.gen_range(0.0..1.2);
        let schedule = ScheduleSpec::local_pair_clock(1.0, 1.0, p).unwrap();
        let policy = match case % 3 {
            0 => PolicySpec::Uniform,
            1 => PolicySpec::EpsGreedy { epsilon: rng.gen_range(0.05..1.0) },
            _ => PolicySpec::Boltzmann { temperature: rng.gen_range(0.1..5.0) },
        };
        let mut config = QLearnConfig::new(mdp, policy, schedule, 500, case);
        config.initial_q = QTable::constant(states, actions, q0);
        config.initial_state = rng.gen_range(0..states);
        let q_star = solve_q(&config.mdp, 1e-6).unwrap();
        let result = run(&config, &q_star, &default_checkpoints(500)).unwrap();
        let bound = q0.abs().max(config.mdp.max_abs_reward() / (1.0 - config.mdp.discount()));
        if result.max_q_norm > bound * (1.0 + 1e-12) + 1e-12 {
            bound_failures += 1;
        }
        if result.clocks.check_invariants().is_err() {
            clock_failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let passed = contraction_failures + monotone_failures + bound_failures + clock_failures == 0
        && elapsed < Duration::from_secs(30);
    report(
        9,
        passed,
        format!(
            "contraction failures {contraction_failures}/1000, monotonicity failures {monotone_failures}/1000, boundedness failures {bound_failures}/1000, clock failures {clock_failures}/1000, {elapsed:?}"
        ),
    );
    assert!(passed);
}
