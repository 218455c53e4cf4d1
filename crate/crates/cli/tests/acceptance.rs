//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails. Built with `harness = false` so
//! the report is printed even when the run succeeds.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use kbnet::centrality::{debt_rank, debt_rank_on_impacts, ImpactMode, LeontiefKernel};
use kbnet::inference::{CovMode, KbVarianceEngine};
use kbnet::normal::{cdf, ks_critical_value, ks_statistic};
use kbnet::panel::{ReturnPanel, WeightVector, WindowSpec};
use kbnet::rolling::{rolling_analysis, RollingOptions};
use kbnet::simulation::{run_monte_carlo, size_power_study, taylor_remainder_study, SimulationConfig};
use kbnet::spectral::spectral_radius;
use kbnet::var::{EstimatedNetwork, VarOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix rescaled to a random spectral radius in `(0.04, max_radius]`.
fn stable_matrix(rng: &mut ChaCha8Rng, m: usize, max_radius: f64) -> DMatrix<f64> {
    loop {
        let a = uniform_matrix(rng, m);
        let r = spectral_radius(&a, 0.0).unwrap().spectral_radius;
        if r > 1e-3 {
            let target = max_radius * rng.random_range(0.05..=1.0);
            return a * (target / r);
        }
    }
}

fn decoupled_config(n_reps: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        a_true: nalgebra::dmatrix![
            0.0, 0.0, 0.0;
            0.0, 0.3, 0.3;
            0.0, 0.25, 0.35
        ],
        noise_sd: vec![1.0; 3],
        noise_corr: DMatrix::identity(3, 3),
        t_len: 600,
        n_reps,
        seed,
        burn_in: 100,
        weights: Vec::new(),
        confidence: 0.975,
        qq_points: 10,
        var_options: VarOptions::default(),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=6);
        let a = stable_matrix(&mut rng, m, 0.8);
        let rho = spectral_radius(&a, 0.0).unwrap().spectral_radius;
        let k = ((1e-12f64).ln() / rho.ln()).ceil() as usize + 1;
        let mut power = DMatrix::identity(m, m);
        let mut series = DMatrix::zeros(m, m);
        for _ in 0..k {
            power = &power * &a;
            series += &power;
        }
        let kernel = LeontiefKernel::new(&a, 1.0).unwrap();
        worst = worst.max((kernel.pair_kb() - series).amax());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("max |pair KB - series| = {worst:.2e} over 200 matrices, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let cfg = SimulationConfig::reference();
    let s = run_monte_carlo(&cfg).unwrap();
    let elapsed = start.elapsed();
    let bound = 5.0 / (cfg.n_reps as f64).sqrt();
    let mut pass = s.n_failed == 0 && elapsed < Duration::from_secs(120);
    let mut parts = Vec::new();
    for node in &s.nodes {
        let qq = node.qq.max_deviation() / node.theoretical_variance.sqrt();
        let ok_a = (0.93..=0.97).contains(&node.coverage);
        let ok_b = (0.85..=1.15).contains(&node.variance_ratio());
        let ok_c = qq < bound;
        pass &= ok_a && ok_b && ok_c;
        parts.push(format!(
            "{}: coverage {:.4}{} var ratio {:.3}{} qq {:.3} sd{}",
            node.label,
            node.coverage,
            if ok_a { "" } else { " (a FAIL)" },
            node.variance_ratio(),
            if ok_b { "" } else { " (b FAIL)" },
            qq,
            if ok_c { "" } else { " (c FAIL)" },
        ));
    }
    outcome(
        pass,
        format!("{}; qq bound {bound:.3} sd; {elapsed:.2?}", parts.join("; ")),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let sp = size_power_study(&decoupled_config(2000, 31), 0, 1, 0.05).unwrap();
    let elapsed = start.elapsed();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut all_zero = true;
    for _ in 0..50 {
        let (a, b) = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let s = rng.random_range(0.2..3.0);
        let r = rng.random_range(-0.9..0.9);
        let (q, c) = (rng.random_range(0.5..4.0), rng.random_range(-0.4..0.4));
        let net = EstimatedNetwork::new(
            labels(2),
            nalgebra::dmatrix![a, b; b, a],
            DVector::from_element(2, s),
            nalgebra::dmatrix![1.0, r; r, 1.0],
            nalgebra::dmatrix![q, c * q; c * q, q],
            rng.random_range(50..5000),
        )
        .unwrap();
        let engine = KbVarianceEngine::new(&net).unwrap();
        let w = DVector::from_element(2, 1.0);
        for mode in [CovMode::Standard, CovMode::Paper] {
            let t = engine.test_pairwise(0, 1, &w, 0.05, mode).unwrap();
            all_zero &= t.statistic == 0.0 && t.p_value == 1.0;
        }
    }
    outcome(
        (0.035..=0.065).contains(&sp.size) && sp.power >= 0.9 && all_zero && elapsed < Duration::from_secs(120),
        format!(
            "size {:.4}, power {:.4}, symmetric pairs Z = 0 exactly: {all_zero}; {elapsed:.2?}",
            sp.size, sp.power
        ),
    )
}

fn criterion_4() -> Outcome {
    let n = 1000;
    let crit = ks_critical_value(n, 0.01);
    let mut passed = 0;
    let mut worst = 0.0f64;
    for meta in 0..20u64 {
        let sp = size_power_study(&decoupled_config(n, 4000 + meta), 0, 1, 0.05).unwrap();
        assert_eq!(sp.null_statistics.len(), n);
        let d = ks_statistic(&sp.null_statistics, cdf);
        worst = worst.max(d);
        passed += (d < crit) as usize;
    }
    outcome(
        passed >= 19,
        format!("{passed}/20 meta-runs below the 1% KS critical value {crit:.4} (largest D {worst:.4})"),
    )
}

fn criterion_5() -> Outcome {
    let mut cfg = SimulationConfig::reference();
    cfg.n_reps = 500;
    let short = taylor_remainder_study(&cfg).unwrap();
    cfg.t_len = 2400;
    let long = taylor_remainder_study(&cfg).unwrap();
    let ratio = short / long;
    outcome(
        (3.0..=5.0).contains(&ratio),
        format!("mean remainder {short:.3e} at T=600, {long:.3e} at T=2400, ratio {ratio:.3}"),
    )
}

fn criterion_6() -> Outcome {
    let tol = 4.0 * f64::EPSILON;
    let v2 = WeightVector::new(vec![0.5, 0.5]).unwrap();
    let zero = debt_rank(&DMatrix::zeros(2, 2), 0, &v2, ImpactMode::Abs).unwrap();
    let two = debt_rank(&nalgebra::dmatrix![0.0, 0.4; 0.0, 0.0], 0, &v2, ImpactMode::Abs).unwrap();
    let chain = nalgebra::dmatrix![0.0, 0.5, 0.0; 0.0, 0.0, 0.5; 0.0, 0.0, 0.0];
    let three = debt_rank(&chain, 0, &WeightVector::ones(3), ImpactMode::Abs).unwrap();
    let hand = zero.value == 0.0
        && two.trajectory.last().unwrap().as_slice() == [1.0, 0.4]
        && (two.value - 0.2).abs() <= tol
        && three.trajectory.last().unwrap().as_slice() == [1.0, 0.5, 0.25]
        && (three.value - 0.25).abs() <= tol;

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut monotone = true;
    for _ in 0..100 {
        let m = rng.random_range(2..=8);
        let mut w = DMatrix::from_fn(m, m, |_, _| {
            if rng.random_bool(0.5) {
                rng.random_range(0.0..1.0)
            } else {
                0.0
            }
        });
        w.fill_diagonal(0.0);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let v = WeightVector::new(raw).unwrap().normalized();
        let shocked = rng.random_range(0..m);
        let out = debt_rank_on_impacts(&w, shocked, &v).unwrap();
        monotone &= out.converged
            && out.trajectory.windows(2).all(|p| p[0].iter().zip(p[1].iter()).all(|(a, b)| b >= a))
            && out.value >= 0.0
            && out.value <= 1.0 - v[shocked] + tol;
    }
    outcome(
        hand && monotone,
        format!(
            "hand values ({}, {}, {}) match: {hand}; monotone h on 100 random instances: {monotone}",
            zero.value, two.value, three.value
        ),
    )
}

fn compare_table(text: &str) -> Vec<(String, f64)> {
    csv_rows(text)
        .into_iter()
        .map(|r| (r[0].clone(), r[6].parse().unwrap()))
        .collect()
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let a = DMatrix::from_element(4, 4, 0.1);
    let b = &a * 1.5;
    let values = simulate_returns(&[(&a, 1500), (&b, 1500)], 707);
    let input = write_returns(dir.path(), "shift.csv", &values);
    let p = input.to_str().unwrap();
    let base = ["compare", "-i", p, "--levels-are-returns", "--window", "250", "--step", "50", "--split", "1500"];
    let mut lines = Vec::new();
    let mut pass = true;
    for threshold in ["p95", "0.1"] {
        let mut args = base.to_vec();
        args.extend(["--degree-threshold", threshold]);
        let out = kbnet(&args);
        if !out.status.success() {
            return outcome(false, format!("compare failed: {}", stderr(&out)));
        }
        let table = compare_table(&stdout(&out));
        let get = |name: &str| table.iter().find(|(n, _)| n == name).unwrap().1;
        let (kb, degree, eig) = (get("system_kb"), get("degree_system"), get("leading_eigenvalue"));
        pass &= kb > degree && kb > eig;
        lines.push(format!(
            "threshold {threshold}: relative change KB {kb:+.3}, degree {degree:+.3}, leading eigenvalue {eig:+.3}"
        ));
    }
    outcome(pass, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let m = 4;
    let values = simulate_returns(&[(&DMatrix::zeros(m, m), 250 + 49 * 50)], 808);
    let panel = ReturnPanel::from_matrix(labels(m), values).unwrap();
    let res = rolling_analysis(
        &panel,
        WindowSpec::new(250, 50).unwrap(),
        &WeightVector::ones(m),
        &RollingOptions::default(),
    )
    .unwrap();
    let n = res.records.len() as f64;
    let raw = res.records.iter().map(|r| r.system_kb).sum::<f64>() / n;
    let abs_raw = res.records.iter().map(|r| r.system_kb.abs()).sum::<f64>() / n;
    let validated = res.records.iter().map(|r| r.validated_system_kb).sum::<f64>() / n;
    outcome(
        res.records.len() == 50 && validated <= 0.1 * raw,
        format!(
            "{} windows: mean validated {validated:.4}, mean unvalidated {raw:.4} (mean |unvalidated| {abs_raw:.4}), \
             validated / unvalidated {:.3}",
            res.records.len(),
            validated / raw
        ),
    )
}

fn random_network(rng: &mut ChaCha8Rng, m: usize) -> EstimatedNetwork {
    let a = stable_matrix(rng, m, 0.7);
    let sigma = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
    let b = DMatrix::from_fn(m, m + 2, |_, _| rng.random_range(-1.0..1.0));
    let s: DMatrix<f64> = &b * b.transpose();
    let mut rho = DMatrix::identity(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let r = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
            rho[(i, j)] = r;
            rho[(j, i)] = r;
        }
    }
    let c = DMatrix::from_fn(m, m + 2, |_, _| rng.random_range(-1.0..1.0));
    let q = &c * c.transpose() / (m + 2) as f64 + DMatrix::identity(m, m) * 0.1;
    let q = (&q + q.transpose()) * 0.5;
    EstimatedNetwork::new(labels(m), a, sigma, rho, q, 500).unwrap()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(2..=8);
        let engine = KbVarianceEngine::new(&random_network(&mut rng, m)).unwrap();
        let w = DVector::from_fn(m, |_, _| rng.random_range(0.0..2.0));
        for i in 0..m {
            for j in 0..m {
                let d1 = engine.pair_kb_variance(i, j).unwrap() - engine.pair_kb_variance_naive(i, j).unwrap();
                let d2 = engine.node_kb_covariance(i, j, &w).unwrap()
                    - engine.node_kb_covariance_naive(i, j, &w).unwrap();
                worst = worst.max(d1.abs()).max(d2.abs());
            }
            let d3 = engine.node_kb_variance(i, &w).unwrap() - engine.node_kb_variance_naive(i, &w).unwrap();
            worst = worst.max(d3.abs());
        }
    }

    let m = 40;
    let net = random_network(&mut rng, m);
    let w = DVector::from_element(m, 1.0);
    let reps = 20;
    let start = Instant::now();
    let mut fast_total = 0.0;
    for _ in 0..reps {
        // engine construction (the cached Gram matrix) is charged to the fast path
        let engine = KbVarianceEngine::new(&net).unwrap();
        fast_total += (0..m).map(|i| engine.node_kb_variance(i, &w).unwrap()).sum::<f64>();
    }
    let fast = start.elapsed() / reps;
    let engine = KbVarianceEngine::new(&net).unwrap();
    let start = Instant::now();
    let naive_total = (0..m).map(|i| engine.node_kb_variance_naive(i, &w).unwrap()).sum::<f64>();
    let naive = start.elapsed();
    let agree = (fast_total / reps as f64 - naive_total).abs() <= 1e-8 * naive_total.abs();
    let speedup = naive.as_secs_f64() / fast.as_secs_f64();
    outcome(
        worst <= 1e-10 && agree && speedup >= 10.0,
        format!(
            "max |fast - naive| {worst:.2e} on 50 instances; M=40 all node variances: fast {fast:.2?}, \
             naive {naive:.2?}, speedup {speedup:.0}x"
        ),
    )
}

fn read_all(dir: &std::path::Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| std::fs::read(dir.join(n)).unwrap()).collect()
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let files = ["summary.json", "qq.csv", "samples.csv"];
    let mut sim_runs = Vec::new();
    for (k, jobs) in ["1", "1", "4"].iter().enumerate() {
        let out_dir = dir.path().join(format!("sim{k}"));
        let out = kbnet(&[
            "simulate", "--seed", "1234", "--n-reps", "300", "--jobs", jobs, "-o", out_dir.to_str().unwrap(),
        ]);
        if !out.status.success() {
            return outcome(false, format!("simulate failed: {}", stderr(&out)));
        }
        sim_runs.push(read_all(&out_dir, &files));
    }
    let sim_same = sim_runs[0] == sim_runs[1] && sim_runs[0] == sim_runs[2];

    let input = write_returns(dir.path(), "r.csv", &reference_returns(1500));
    let mut roll_runs = Vec::new();
    for (k, jobs) in ["1", "1", "4"].iter().enumerate() {
        let out_file = dir.path().join(format!("rolling{k}.csv"));
        let out = kbnet(&[
            "rolling", "-i", input.to_str().unwrap(), "--levels-are-returns", "--window", "250", "--step", "25",
            "--seed", "1234", "--jobs", jobs, "-o", out_file.to_str().unwrap(),
        ]);
        if !out.status.success() {
            return outcome(false, format!("rolling failed: {}", stderr(&out)));
        }
        roll_runs.push(std::fs::read(out_file).unwrap());
    }
    let roll_same = roll_runs[0] == roll_runs[1] && roll_runs[0] == roll_runs[2];
    outcome(
        sim_same && roll_same,
        format!("simulate identical across runs and --jobs 1/4: {sim_same}; rolling: {roll_same}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "Leontief oracle equivalence", criterion_1),
        (2, "distribution validation", criterion_2),
        (3, "test size and power", criterion_3),
        (4, "null Z normality", criterion_4),
        (5, "Taylor remainder scaling", criterion_5),
        (6, "DebtRank hand oracle", criterion_6),
        (7, "crisis sensitivity", criterion_7),
        (8, "validation filter", criterion_8),
        (9, "fast-path equivalence", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let o = run();
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += (!o.pass) as usize;
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
