#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kbnet::panel::{write_panel, ReturnPanel, TimeSeriesPanel, Timestamp};
use kbnet::simulation::{generate_piecewise, replication_rng, SimulationConfig};
use nalgebra::DMatrix;

pub fn kbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

pub fn labels(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("node{i}")).collect()
}

/// Returns simulated through consecutive `(A, length)` regimes with unit,
/// uncorrelated noise.
pub fn simulate_returns(segments: &[(&DMatrix<f64>, usize)], seed: u64) -> DMatrix<f64> {
    let m = segments[0].0.nrows();
    let mut rng = replication_rng(seed, 0);
    generate_piecewise(segments, &DMatrix::identity(m, m), 100, &mut rng).unwrap()
}

/// The reference instance, one replication.
pub fn reference_returns(t_len: usize) -> DMatrix<f64> {
    let mut cfg = SimulationConfig::reference();
    cfg.t_len = t_len;
    kbnet::simulation::generate_var1(&cfg, 0).unwrap().values().clone()
}

/// Write returns as a panel CSV meant for `--levels-are-returns`.
pub fn write_returns(dir: &Path, name: &str, values: &DMatrix<f64>) -> PathBuf {
    let path = dir.join(name);
    let panel = ReturnPanel::from_matrix(labels(values.ncols()), values.clone()).unwrap();
    panel.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path
}

/// Write price levels `100 exp(cumsum(scale * returns))` as a panel CSV.
pub fn write_levels(dir: &Path, name: &str, values: &DMatrix<f64>, scale: f64) -> PathBuf {
    let (t, m) = values.shape();
    let mut levels = DMatrix::from_element(t + 1, m, 100.0);
    for r in 0..t {
        for c in 0..m {
            levels[(r + 1, c)] = levels[(r, c)] * (scale * values[(r, c)]).exp();
        }
    }
    let ts = (0..=t as i64).map(Timestamp::index).collect();
    let panel = TimeSeriesPanel::new(labels(m), ts, levels).unwrap();
    let path = dir.join(name);
    write_panel(&panel, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

/// Data rows of a stamped CSV: skips the `#` line and the header.
pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# kbnet "));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

pub fn column(text: &str, name: &str) -> Vec<f64> {
    let header: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).expect("column present");
    csv_rows(text).iter().map(|r| r[idx].parse().unwrap()).collect()
}
