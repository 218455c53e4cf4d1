use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use kbnet::centrality::{debt_rank, degree_centrality, LeontiefKernel};
use kbnet::inference::{KbVarianceEngine, TestResult};
use kbnet::panel::{load_panel, load_weights, log_returns, ReturnPanel, Timestamp, WeightVector};
use kbnet::rolling::{rolling_analysis, RollingResult};
use kbnet::simulation::{run_monte_carlo, SimulationConfig, SimulationSummary};
use kbnet::spectral::DEFAULT_MARGIN;
use kbnet::var::{estimate_var1, EstimatedNetwork};
use serde::Serialize;

use crate::settings::{default_seed, Settings};
use crate::CliError;

fn open_file(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn load_returns(s: &Settings) -> Result<ReturnPanel, CliError> {
    let panel = load_panel(open_file(s.input_path()?)?, s.missing_policy()?)?;
    Ok(if s.levels_are_returns() {
        ReturnPanel::from_levels_as_returns(&panel)
    } else {
        log_returns(&panel)?
    })
}

fn weight_vector(s: &Settings, labels: &[String]) -> Result<WeightVector, CliError> {
    match &s.weights {
        Some(path) => Ok(load_weights(open_file(path)?, labels)?),
        None => Ok(WeightVector::ones(labels.len())),
    }
}

fn emit(s: &Settings, bytes: &[u8]) -> Result<(), CliError> {
    match &s.output {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

/// `body` preceded by the `#` stamp line.
fn stamped(s: &Settings, command: &str, body: &[u8]) -> Vec<u8> {
    let mut out = s.stamp(command).into_bytes();
    out.push(b'\n');
    out.extend_from_slice(body);
    out
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn full_sample_network(s: &Settings) -> Result<EstimatedNetwork, CliError> {
    let returns = load_returns(s)?;
    Ok(estimate_var1(returns.full(), &s.var_options()?)?)
}

pub fn estimate(s: &Settings) -> Result<(), CliError> {
    let net = full_sample_network(s)?;
    let certificate = net.stationarity(DEFAULT_MARGIN)?;
    if !certificate.pass {
        log::warn!(
            "estimated network is not stationary (spectral radius {})",
            certificate.spectral_radius
        );
    }
    let doc = serde_json::json!({
        "config": s.stamp_value(),
        "network": net,
        "certificate": certificate,
    });
    emit(s, &json_bytes(&doc)?)
}

pub fn centrality(s: &Settings) -> Result<(), CliError> {
    let net = full_sample_network(s)?;
    let labels = net.labels().to_vec();
    let weights = weight_vector(s, &labels)?;
    let kernel = LeontiefKernel::new(net.a_hat(), s.alpha())?;
    let kb = kernel.node_kb(weights.as_vector())?;
    let thr = s.degree_threshold()?.resolve(net.a_hat());
    let degree = degree_centrality(net.a_hat(), thr)?;
    let mode = s.impact_mode()?;
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["label", "node_kb", "degree", "debtrank"]).map_err(csv_err)?;
        let mut dr_total = 0.0;
        for (i, label) in labels.iter().enumerate() {
            let dr = debt_rank(net.a_hat(), i, &weights, mode)?.value;
            dr_total += dr;
            w.write_record([
                label.clone(),
                kb[i].to_string(),
                degree.node[i].to_string(),
                dr.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.write_record([
            "system".to_string(),
            kb.sum().to_string(),
            degree.system.to_string(),
            (dr_total / labels.len() as f64).to_string(),
        ])
        .map_err(csv_err)?;
        w.flush()?;
    }
    emit(s, &stamped(s, "centrality", &buf))
}

fn node_index(labels: &[String], token: &str) -> Result<usize, CliError> {
    let token = token.trim();
    if let Some(i) = labels.iter().position(|l| l == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if i < labels.len() => Ok(i),
        _ => Err(CliError::Input(format!("unknown node {token:?} in --pairs"))),
    }
}

/// Parse `a,b;c,d` into index pairs.
pub fn parse_pairs(text: &str, labels: &[String]) -> Result<Vec<(usize, usize)>, CliError> {
    text.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(',')
                .ok_or_else(|| CliError::Input(format!("pair {p:?} is not of the form a,b")))?;
            Ok((node_index(labels, a)?, node_index(labels, b)?))
        })
        .collect()
}

fn test_row(kind: &str, node: &str, other: &str, t: &TestResult, validated: &str) -> Vec<String> {
    vec![
        kind.to_string(),
        node.to_string(),
        other.to_string(),
        t.estimate.to_string(),
        t.std_error.to_string(),
        t.statistic.to_string(),
        t.p_value.to_string(),
        t.reject.to_string(),
        t.ci.0.to_string(),
        t.ci.1.to_string(),
        validated.to_string(),
    ]
}

fn degenerate_row(kind: &str, node: &str, other: &str, estimate: f64, validated: &str) -> Vec<String> {
    let mut row = vec![kind.to_string(), node.to_string(), other.to_string(), estimate.to_string()];
    row.extend(["0", "degenerate", "", "", "", ""].map(String::from));
    row.push(validated.to_string());
    row
}

/// Nonzero tests run one-sided at level `1 - confidence`; pairwise tests run
/// two-sided at level `2 (1 - confidence)`, so both report the band
/// `estimate -/+ z_confidence * se`.
pub fn test(s: &Settings) -> Result<(), CliError> {
    let net = full_sample_network(s)?;
    let labels = net.labels().to_vec();
    let weights = weight_vector(s, &labels)?;
    let w = weights.as_vector();
    let confidence = s.checked_confidence()?;
    let engine = KbVarianceEngine::with_kernel(&net, LeontiefKernel::new(net.a_hat(), s.alpha())?)?;
    let validated = engine.validated_node_kb(w, confidence)?;
    let mut pairs = match &s.pairs {
        Some(text) => parse_pairs(text, &labels)?,
        None => Vec::new(),
    };
    if s.all_pairs() {
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                pairs.push((i, j));
            }
        }
    }
    let mode = s.cov_mode()?;
    let node_kb = engine.node_kb(w)?;
    let mut buf = Vec::new();
    {
        let mut out = csv_writer(&mut buf);
        out.write_record([
            "test", "node", "other", "estimate", "std_error", "z", "p_value", "reject", "ci_lower", "ci_upper",
            "validated_kb",
        ])
        .map_err(csv_err)?;
        for (i, label) in labels.iter().enumerate() {
            let v = validated.validated[i].to_string();
            let row = match &validated.tests[i] {
                Some(t) => test_row("nonzero", label, "", t, &v),
                None => degenerate_row("nonzero", label, "", validated.raw[i], &v),
            };
            out.write_record(&row).map_err(csv_err)?;
        }
        for &(i, j) in &pairs {
            let row = match engine.test_pairwise(i, j, w, 2.0 * (1.0 - confidence), mode) {
                Ok(t) => test_row("pairwise", &labels[i], &labels[j], &t, ""),
                Err(kbnet::Error::Degenerate(msg)) => {
                    log::warn!("{msg}");
                    degenerate_row("pairwise", &labels[i], &labels[j], node_kb[i] - node_kb[j], "")
                }
                Err(e) => return Err(e.into()),
            };
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
    }
    emit(s, &stamped(s, "test", &buf))
}

fn rolling_result(s: &Settings) -> Result<RollingResult, CliError> {
    let returns = load_returns(s)?;
    let weights = weight_vector(s, returns.labels())?;
    let result = rolling_analysis(&returns, s.window_spec()?, &weights, &s.rolling_options()?)?;
    Ok(match s.smooth {
        Some(k) => result.smoothed(k)?,
        None => result,
    })
}

pub fn rolling(s: &Settings) -> Result<(), CliError> {
    let result = rolling_result(s)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    emit(s, &stamped(s, "rolling", &buf))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn compare(s: &Settings) -> Result<(), CliError> {
    let split_text = s
        .split
        .as_deref()
        .ok_or_else(|| CliError::Input("--split is required".into()))?;
    let split = Timestamp::parse(split_text)?;
    let result = rolling_result(s)?;
    let position = |text: &str| -> Result<std::cmp::Ordering, CliError> {
        Timestamp::parse(text)?
            .partial_cmp(&split)
            .ok_or_else(|| CliError::Input(format!("--split {split_text:?} is not comparable with {text:?}")))
    };
    let mut before = Vec::new();
    let mut after = Vec::new();
    for r in result.records.iter().filter(|r| r.error.is_none()) {
        if position(&r.window_end)?.is_lt() {
            before.push(r);
        } else if position(&r.window_start)?.is_ge() {
            after.push(r);
        }
    }
    if before.is_empty() || after.is_empty() {
        return Err(CliError::Input(format!(
            "--split leaves {} complete windows before and {} after; both must be nonempty",
            before.len(),
            after.len()
        )));
    }
    let measures: [(&str, fn(&kbnet::WindowRecord) -> f64); 5] = [
        ("system_kb", |r| r.system_kb),
        ("validated_system_kb", |r| r.validated_system_kb),
        ("degree_system", |r| r.degree_system),
        ("leading_eigenvalue", |r| r.leading_eigenvalue),
        ("debtrank_system", |r| r.debtrank_system),
    ];
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["measure", "windows_before", "windows_after", "before_mean", "after_mean", "ratio", "relative_change"])
            .map_err(csv_err)?;
        for (name, f) in measures {
            let b = mean(&before.iter().map(|r| f(r)).collect::<Vec<_>>());
            let a = mean(&after.iter().map(|r| f(r)).collect::<Vec<_>>());
            w.write_record([
                name.to_string(),
                before.len().to_string(),
                after.len().to_string(),
                b.to_string(),
                a.to_string(),
                (a / b).to_string(),
                (a / b - 1.0).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    emit(s, &stamped(s, "compare", &buf))
}

fn simulation_config(s: &Settings) -> Result<SimulationConfig, CliError> {
    let mut cfg = match &s.instance {
        Some(path) => serde_json::from_reader(open_file(path)?)
            .map_err(|e| CliError::Input(format!("bad instance {}: {e}", path.display())))?,
        None => SimulationConfig::reference(),
    };
    if s.instance.is_none() || s.seed.is_some() {
        cfg.seed = s.seed.unwrap_or_else(default_seed);
    }
    if let Some(n) = s.n_reps {
        cfg.n_reps = n;
    }
    if let Some(t) = s.t_len {
        cfg.t_len = t;
    }
    if let Some(b) = s.burn_in {
        cfg.burn_in = b;
    }
    if let Some(q) = s.qq_points {
        cfg.qq_points = q;
    }
    if s.confidence.is_some() {
        cfg.confidence = s.checked_confidence()?;
    }
    if s.demean.is_some() {
        cfg.var_options = s.var_options()?;
    }
    if s.weights.is_some() {
        cfg.weights = weight_vector(s, &cfg.labels())?.as_vector().iter().copied().collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SimulationDocument<'a> {
    config: serde_json::Value,
    instance: &'a SimulationConfig,
    summary: &'a SimulationSummary,
}

fn qq_csv(summary: &SimulationSummary) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["node", "k", "probability", "theoretical", "empirical"]).map_err(csv_err)?;
        for node in &summary.nodes {
            let n = node.qq.theoretical.len();
            for (k, (t, e)) in node.qq.theoretical.iter().zip(&node.qq.empirical).enumerate() {
                let p = (k as f64 + 0.5) / n as f64;
                w.write_record([node.label.clone(), (k + 1).to_string(), p.to_string(), t.to_string(), e.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    Ok(buf)
}

fn samples_csv(summary: &SimulationSummary) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        let mut header = vec!["draw".to_string()];
        header.extend(summary.nodes.iter().map(|n| n.label.clone()));
        w.write_record(&header).map_err(csv_err)?;
        let n = summary.samples.first().map_or(0, Vec::len);
        for r in 0..n {
            let mut row = vec![r.to_string()];
            row.extend(summary.samples.iter().map(|col| col[r].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    let cfg = simulation_config(s)?;
    let bounds = s.coverage_bounds()?;
    let summary = run_monte_carlo(&cfg)?;
    for (rep, msg) in &summary.failures {
        log::warn!("replication {rep} failed: {msg}");
    }
    let doc = SimulationDocument {
        config: s.stamp_value(),
        instance: &cfg,
        summary: &summary,
    };
    let json = json_bytes(&doc)?;
    match &s.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
            let write = |name: &str, bytes: &[u8]| {
                let path = dir.join(name);
                std::fs::write(&path, bytes)
                    .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
            };
            write("summary.json", &json)?;
            write("qq.csv", &stamped(s, "simulate", &qq_csv(&summary)?))?;
            write("samples.csv", &stamped(s, "simulate", &samples_csv(&summary)?))?;
        }
        None => std::io::stdout().write_all(&json)?,
    }
    if let Some((lo, hi)) = bounds {
        if !(summary.coverage >= lo && summary.coverage <= hi) {
            return Err(CliError::Assertion(format!(
                "coverage {} outside [{lo}, {hi}]",
                summary.coverage
            )));
        }
    }
    Ok(())
}
