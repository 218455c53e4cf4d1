//! Windowed centrality series: estimate a network per rolling window and
//! record KB, validated KB and the comparison measures.

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centrality::{degree_centrality, system_debt_rank, DegreeThreshold, ImpactMode, LeontiefKernel};
use crate::error::{Error, Result};
use crate::inference::KbVarianceEngine;
use crate::panel::{make_windows, moving_average, ReturnPanel, ReturnWindow, WeightVector, WindowSpec};
use crate::spectral::{spectral_radius, DEFAULT_MARGIN};
use crate::var::{estimate_var1, VarOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingOptions {
    pub alpha: f64,
    pub confidence: f64,
    pub degree_threshold: DegreeThreshold,
    pub debtrank_impact: ImpactMode,
    pub var: VarOptions,
    /// Abort on the first failing window instead of emitting NaN rows.
    pub fail_fast: bool,
}

impl Default for RollingOptions {
    fn default() -> Self {
        RollingOptions {
            alpha: 1.0,
            confidence: 0.975,
            degree_threshold: DegreeThreshold::default(),
            debtrank_impact: ImpactMode::default(),
            var: VarOptions::default(),
            fail_fast: false,
        }
    }
}

/// Measures for one window. Every number is NaN when `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window_start: String,
    pub window_end: String,
    pub system_kb: f64,
    pub validated_system_kb: f64,
    pub degree_system: f64,
    pub leading_eigenvalue: f64,
    pub debtrank_system: f64,
    pub node_kb: Vec<f64>,
    pub validated: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub error: Option<String>,
}

impl WindowRecord {
    fn failed(window: &ReturnWindow<'_>, m: usize, message: String) -> Self {
        let (start, end) = bounds(window);
        WindowRecord {
            window_start: start,
            window_end: end,
            system_kb: f64::NAN,
            validated_system_kb: f64::NAN,
            degree_system: f64::NAN,
            leading_eigenvalue: f64::NAN,
            debtrank_system: f64::NAN,
            node_kb: vec![f64::NAN; m],
            validated: vec![f64::NAN; m],
            ci_lower: vec![f64::NAN; m],
            ci_upper: vec![f64::NAN; m],
            error: Some(message),
        }
    }
}

fn bounds(window: &ReturnWindow<'_>) -> (String, String) {
    let ts = window.timestamps();
    (ts[0].as_str().to_string(), ts[ts.len() - 1].as_str().to_string())
}

fn analyse_window(window: &ReturnWindow<'_>, weights: &WeightVector, opts: &RollingOptions) -> Result<WindowRecord> {
    let net = estimate_var1(window.clone(), &opts.var)?;
    let leading_eigenvalue = spectral_radius(net.a_hat(), DEFAULT_MARGIN)?.spectral_radius;
    let kernel = LeontiefKernel::with_margin(net.a_hat(), opts.alpha, DEFAULT_MARGIN)?;
    let engine = KbVarianceEngine::with_kernel(&net, kernel)?;
    let w = weights.as_vector();
    let v = engine.validated_node_kb(w, opts.confidence)?;
    let m = net.n_nodes();
    let mut ci_lower = Vec::with_capacity(m);
    let mut ci_upper = Vec::with_capacity(m);
    for (i, t) in v.tests.iter().enumerate() {
        let (lo, hi) = t.map_or((v.raw[i], v.raw[i]), |t| t.ci);
        ci_lower.push(lo);
        ci_upper.push(hi);
    }
    let thr = opts.degree_threshold.resolve(net.a_hat());
    let degree = degree_centrality(net.a_hat(), thr)?;
    let debtrank = system_debt_rank(net.a_hat(), weights, opts.debtrank_impact)?;
    let (start, end) = bounds(window);
    Ok(WindowRecord {
        window_start: start,
        window_end: end,
        system_kb: v.raw.iter().sum(),
        validated_system_kb: v.system(),
        degree_system: degree.system,
        leading_eigenvalue,
        debtrank_system: debtrank,
        node_kb: v.raw,
        validated: v.validated,
        ci_lower,
        ci_upper,
        error: None,
    })
}

/// Full rolling analysis, one record per window in window order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingResult {
    pub labels: Vec<String>,
    pub records: Vec<WindowRecord>,
}

pub fn rolling_analysis(
    panel: &ReturnPanel,
    spec: WindowSpec,
    weights: &WeightVector,
    opts: &RollingOptions,
) -> Result<RollingResult> {
    let m = panel.n_nodes();
    if weights.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {m} nodes",
            weights.len()
        )));
    }
    let windows = make_windows(panel, spec)?;
    let outcomes: Vec<Result<WindowRecord>> = windows
        .par_iter()
        .map(|w| analyse_window(w, weights, opts))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    for (k, (outcome, window)) in outcomes.into_iter().zip(&windows).enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if opts.fail_fast => return Err(e),
            Err(e) => {
                warn!("window {k} (offset {}) failed: {e}", window.start());
                records.push(WindowRecord::failed(window, m, e.to_string()));
            }
        }
    }
    Ok(RollingResult {
        labels: panel.labels().to_vec(),
        records,
    })
}

fn smooth_column(values: Vec<f64>, k: usize) -> Result<Vec<f64>> {
    moving_average(&values, k)
}

impl RollingResult {
    /// Apply a trailing moving average of width `k` to every numeric column.
    pub fn smoothed(&self, k: usize) -> Result<RollingResult> {
        // rejects k = 0 even when there are no records
        moving_average(&[], k)?;
        let m = self.labels.len();
        let mut out = self.clone();
        macro_rules! scalar {
            ($field:ident) => {{
                let s = smooth_column(self.records.iter().map(|r| r.$field).collect(), k)?;
                for (r, v) in out.records.iter_mut().zip(s) {
                    r.$field = v;
                }
            }};
        }
        macro_rules! per_node {
            ($field:ident) => {{
                for i in 0..m {
                    let s = smooth_column(self.records.iter().map(|r| r.$field[i]).collect(), k)?;
                    for (r, v) in out.records.iter_mut().zip(s) {
                        r.$field[i] = v;
                    }
                }
            }};
        }
        scalar!(system_kb);
        scalar!(validated_system_kb);
        scalar!(degree_system);
        scalar!(leading_eigenvalue);
        scalar!(debtrank_system);
        per_node!(node_kb);
        per_node!(validated);
        per_node!(ci_lower);
        per_node!(ci_upper);
        Ok(out)
    }

    pub fn column(&self, f: impl Fn(&WindowRecord) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.records.len(), self.records.iter().map(f))
    }

    /// Header: `window_start,window_end,system_kb,validated_system_kb,
    /// degree_system,leading_eigenvalue,debtrank_system`, then
    /// `<label>_node_kb,<label>_validated,<label>_ci_lower,<label>_ci_upper`
    /// per node.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        let mut header: Vec<String> = [
            "window_start",
            "window_end",
            "system_kb",
            "validated_system_kb",
            "degree_system",
            "leading_eigenvalue",
            "debtrank_system",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for l in &self.labels {
            for suffix in ["node_kb", "validated", "ci_lower", "ci_upper"] {
                header.push(format!("{l}_{suffix}"));
            }
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.window_start.clone(), r.window_end.clone()];
            for v in [
                r.system_kb,
                r.validated_system_kb,
                r.degree_system,
                r.leading_eigenvalue,
                r.debtrank_system,
            ] {
                row.push(v.to_string());
            }
            for i in 0..self.labels.len() {
                for v in [r.node_kb[i], r.validated[i], r.ci_lower[i], r.ci_upper[i]] {
                    row.push(v.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
