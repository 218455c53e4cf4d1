//! Katz-Bonacich centrality through the Leontief inverse, and the comparison
//! measures (thresholded degree, DebtRank).
//!
//! Pair-level KB is `sum_{t>=1} (alpha A)^t = (I - alpha A)^-1 - I`. Entry
//! `(i, j)` is the cumulative impact on node `j` of a unit shock hitting node
//! `i`. Node-level KB is the weighted row sum `c = [(I - A)^-1 - I] w`, and
//! system-level KB is `sum_i c_i`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::WeightVector;
use crate::spectral::{spectral_radius, StationarityCertificate, DEFAULT_MARGIN};

const INVERSE_CHECK_TOL: f64 = 1e-8;

/// Cached Leontief inverse `(I - alpha A)^-1` of a stationary adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LeontiefKernel {
    a: DMatrix<f64>,
    alpha: f64,
    inv: DMatrix<f64>,
    pair_kb: DMatrix<f64>,
    certificate: StationarityCertificate,
}

impl LeontiefKernel {
    pub fn new(a: &DMatrix<f64>, alpha: f64) -> Result<Self> {
        Self::with_margin(a, alpha, DEFAULT_MARGIN)
    }

    pub fn with_margin(a: &DMatrix<f64>, alpha: f64, margin: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let scaled = a * alpha;
        let certificate = spectral_radius(&scaled, margin)?;
        certificate.require()?;
        let m = a.nrows();
        let system = DMatrix::identity(m, m) - &scaled;
        let inv = system
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("I - alpha A is not invertible".into()))?;
        let residual = (&system * &inv - DMatrix::identity(m, m)).amax();
        if !(residual <= INVERSE_CHECK_TOL) {
            return Err(Error::Singular(format!(
                "Leontief inverse residual {residual:e} exceeds {INVERSE_CHECK_TOL:e}"
            )));
        }
        let pair_kb = &inv - DMatrix::identity(m, m);
        Ok(LeontiefKernel {
            a: a.clone(),
            alpha,
            inv,
            pair_kb,
            certificate,
        })
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(I - alpha A)^-1`
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }

    /// `(I - alpha A)^-1 - I`
    pub fn pair_kb(&self) -> &DMatrix<f64> {
        &self.pair_kb
    }

    pub fn certificate(&self) -> &StationarityCertificate {
        &self.certificate
    }

    pub fn n_nodes(&self) -> usize {
        self.a.nrows()
    }

    /// Node-level KB `[(I - alpha A)^-1 - I] w`.
    pub fn node_kb(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has {} entries for {} nodes",
                w.len(),
                self.n_nodes()
            )));
        }
        Ok(&self.pair_kb * w)
    }
}

pub fn node_level_kb(kernel: &LeontiefKernel, w: &DVector<f64>) -> Result<DVector<f64>> {
    kernel.node_kb(w)
}

pub fn system_level_kb(node: &DVector<f64>) -> f64 {
    node.sum()
}

/// KB at all three granularities for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityReport {
    pub labels: Vec<String>,
    #[serde(with = "row_major")]
    pub pair: DMatrix<f64>,
    pub node: Vec<f64>,
    pub system: f64,
    pub weights: WeightVector,
}

impl CentralityReport {
    pub fn compute(kernel: &LeontiefKernel, labels: &[String], weights: &WeightVector) -> Result<Self> {
        if labels.len() != kernel.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                kernel.n_nodes()
            )));
        }
        let node = kernel.node_kb(weights.as_vector())?;
        Ok(CentralityReport {
            labels: labels.to_vec(),
            pair: kernel.pair_kb().clone(),
            system: system_level_kb(&node),
            node: node.iter().copied().collect(),
            weights: weights.clone(),
        })
    }

    /// One row per node: `label,node_kb,system_kb`.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        w.write_record(["label", "node_kb", "system_kb"])?;
        for (label, v) in self.labels.iter().zip(&self.node) {
            w.write_record([label.clone(), v.to_string(), self.system.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) mod row_major {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

/// States `s_0 = eps, s_t = s_{t-1} A` and the running total `sum_{t=1}^{t_max} s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockPath {
    pub states: Vec<DVector<f64>>,
    pub cumulative: DVector<f64>,
}

pub fn propagate_shock(a: &DMatrix<f64>, eps: &DVector<f64>, t_max: usize) -> Result<ShockPath> {
    if !a.is_square() || a.nrows() != eps.len() {
        return Err(Error::DimensionMismatch(format!(
            "shock of length {} against a {}x{} matrix",
            eps.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let mut states = Vec::with_capacity(t_max + 1);
    states.push(eps.clone());
    let mut cumulative = DVector::zeros(eps.len());
    for _ in 0..t_max {
        // row vector times A, kept as a column
        let next = a.tr_mul(states.last().expect("seeded with eps"));
        cumulative += &next;
        states.push(next);
    }
    Ok(ShockPath { states, cumulative })
}

/// How to pick the degree-centrality edge threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeThreshold {
    Fixed(f64),
    /// Percentile (0-100) of the absolute off-diagonal entries.
    Percentile(f64),
}

impl Default for DegreeThreshold {
    fn default() -> Self {
        DegreeThreshold::Percentile(95.0)
    }
}

impl std::str::FromStr for DegreeThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix('p') {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad percentile threshold {s:?}")))?;
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::InvalidInput(format!("percentile {p} outside [0, 100]")));
            }
            return Ok(DegreeThreshold::Percentile(p));
        }
        let x: f64 = s
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad degree threshold {s:?}")))?;
        if !(x >= 0.0) {
            return Err(Error::InvalidInput("degree threshold must be nonnegative".into()));
        }
        Ok(DegreeThreshold::Fixed(x))
    }
}

impl DegreeThreshold {
    pub fn resolve(&self, a: &DMatrix<f64>) -> f64 {
        match *self {
            DegreeThreshold::Fixed(x) => x,
            DegreeThreshold::Percentile(p) => off_diagonal_percentile(a, p),
        }
    }
}

/// Linear-interpolation percentile of `|a_ij|`, `i != j`.
pub fn off_diagonal_percentile(a: &DMatrix<f64>, p: f64) -> f64 {
    let m = a.nrows();
    let mut vals: Vec<f64> = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)].abs())
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (vals.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    vals[lo] + (vals[hi] - vals[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeCentrality {
    pub node: Vec<f64>,
    pub system: f64,
    pub threshold: f64,
}

/// Binarise `|a_ij| > threshold` off the diagonal and score each node by
/// `(in + out) / (2 (M - 1))`; the system score is the node mean.
pub fn degree_centrality(a: &DMatrix<f64>, threshold: f64) -> Result<DegreeCentrality> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidInput("degree threshold must be nonnegative".into()));
    }
    let m = a.nrows();
    if m < 2 {
        return Ok(DegreeCentrality {
            node: vec![0.0; m],
            system: 0.0,
            threshold,
        });
    }
    let mut deg = vec![0usize; m];
    for i in 0..m {
        for j in 0..m {
            if i != j && a[(i, j)].abs() > threshold {
                deg[i] += 1;
                deg[j] += 1;
            }
        }
    }
    let denom = (2 * (m - 1)) as f64;
    let node: Vec<f64> = deg.iter().map(|&d| d as f64 / denom).collect();
    let system = node.iter().sum::<f64>() / m as f64;
    Ok(DegreeCentrality {
        node,
        system,
        threshold,
    })
}

/// How signed VAR coefficients become DebtRank impacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpactMode {
    /// `min(|a_ij|, 1)`
    #[default]
    Abs,
    /// `min(max(a_ij, 0), 1)`
    Relu,
}

impl std::str::FromStr for ImpactMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(ImpactMode::Abs),
            "relu" => Ok(ImpactMode::Relu),
            other => Err(Error::InvalidInput(format!(
                "unknown DebtRank impact mode {other:?} (expected abs|relu)"
            ))),
        }
    }
}

/// Impact matrix `W` from an adjacency matrix; self-loops are dropped.
pub fn impact_matrix(a: &DMatrix<f64>, mode: ImpactMode) -> DMatrix<f64> {
    let mut w = a.map(|v| match mode {
        ImpactMode::Abs => v.abs().min(1.0),
        ImpactMode::Relu => v.clamp(0.0, 1.0),
    });
    w.fill_diagonal(0.0);
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DistressState {
    Undistressed,
    Distressed,
    Inactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebtRankOutcome {
    pub value: f64,
    pub converged: bool,
    pub steps: usize,
    /// `h` after each propagation step, starting with the initial shock.
    pub trajectory: Vec<DVector<f64>>,
}

/// Single-node DebtRank on impact matrix `w` with economic weights `v` (sum 1).
pub fn debt_rank_on_impacts(w: &DMatrix<f64>, shocked: usize, v: &DVector<f64>) -> Result<DebtRankOutcome> {
    let m = w.nrows();
    if !w.is_square() || v.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} economic weights for a {}x{} impact matrix",
            v.len(),
            w.nrows(),
            w.ncols()
        )));
    }
    if shocked >= m {
        return Err(Error::InvalidInput(format!("shocked node {shocked} out of range")));
    }
    let mut h = DVector::zeros(m);
    h[shocked] = 1.0;
    let mut state = vec![DistressState::Undistressed; m];
    state[shocked] = DistressState::Distressed;
    let mut trajectory = vec![h.clone()];
    let cap = 10 * m;
    let mut steps = 0;
    let mut converged = false;
    while steps < cap {
        let distressed: Vec<usize> = (0..m)
            .filter(|&j| state[j] == DistressState::Distressed)
            .collect();
        if distressed.is_empty() {
            converged = true;
            break;
        }
        let next = DVector::from_fn(m, |i, _| {
            let inflow: f64 = distressed.iter().map(|&j| w[(j, i)] * h[j]).sum();
            (h[i] + inflow).min(1.0)
        });
        for i in 0..m {
            state[i] = match state[i] {
                DistressState::Distressed => DistressState::Inactive,
                DistressState::Undistressed if next[i] > 0.0 => DistressState::Distressed,
                s => s,
            };
        }
        h = next;
        trajectory.push(h.clone());
        steps += 1;
    }
    if !converged {
        warn!("DebtRank did not reach a fixed point within {cap} steps");
    }
    let value = h.dot(v) - v[shocked];
    Ok(DebtRankOutcome {
        value,
        converged,
        steps,
        trajectory,
    })
}

pub fn debt_rank(
    a: &DMatrix<f64>,
    shocked: usize,
    v: &WeightVector,
    mode: ImpactMode,
) -> Result<DebtRankOutcome> {
    debt_rank_on_impacts(&impact_matrix(a, mode), shocked, &v.normalized())
}

/// Mean single-node DebtRank over every choice of shocked node.
pub fn system_debt_rank(a: &DMatrix<f64>, v: &WeightVector, mode: ImpactMode) -> Result<f64> {
    let w = impact_matrix(a, mode);
    let v = v.normalized();
    let m = a.nrows();
    let mut total = 0.0;
    for s in 0..m {
        total += debt_rank_on_impacts(&w, s, &v)?.value;
    }
    Ok(total / m as f64)
}
