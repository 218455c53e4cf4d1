//! Synthetic VAR(1) data with known ground truth and the Monte Carlo studies
//! that check the asymptotic theory against brute force.
//!
//! Every replication draws from its own ChaCha stream, keyed by
//! `(seed, rep_index)`, so results do not depend on how replications are
//! scheduled across threads. Per-replication outcomes are collected in index
//! order and reduced sequentially.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centrality::{row_major, LeontiefKernel};
use crate::error::{Error, Result};
use crate::inference::KbVarianceEngine;
use crate::normal;
use crate::panel::ReturnPanel;
use crate::spectral::{spectral_radius, DEFAULT_MARGIN};
use crate::var::{estimate_var1, VarOptions};

/// Adjacency matrix of the fixed three-node reference instance (spectral
/// radius about 0.278).
pub const REFERENCE_A: [[f64; 3]; 3] = [[0.18, 0.12, 0.00], [0.06, 0.15, 0.09], [0.03, 0.06, 0.12]];
pub const REFERENCE_NOISE_SD: [f64; 3] = [1.0, 1.2, 0.8];
pub const REFERENCE_NOISE_CORR: [[f64; 3]; 3] = [[1.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.0]];
/// Unit-weight node KB of [`REFERENCE_A`], from exact rational inversion
/// (32091/75284, 62157/150568, 42357/150568).
pub const REFERENCE_TRUE_NODE_KB: [f64; 3] = [
    32091.0 / 75284.0,
    62157.0 / 150568.0,
    42357.0 / 150568.0,
];

fn matrix3(rows: [[f64; 3]; 3]) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| rows[i][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(with = "row_major")]
    pub a_true: DMatrix<f64>,
    pub noise_sd: Vec<f64>,
    #[serde(with = "row_major")]
    pub noise_corr: DMatrix<f64>,
    pub t_len: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub burn_in: usize,
    /// Node weights for node-level KB; empty means unit weights.
    #[serde(default)]
    pub weights: Vec<f64>,
    /// One-sided confidence; the symmetric interval has two-sided coverage
    /// `2 * confidence - 1`.
    pub confidence: f64,
    pub qq_points: usize,
    #[serde(default)]
    pub var_options: VarOptions,
}

impl SimulationConfig {
    /// The documented three-node reference instance: `T = 600`, 2,000
    /// replications, 95% two-sided intervals.
    pub fn reference() -> Self {
        SimulationConfig {
            a_true: matrix3(REFERENCE_A),
            noise_sd: REFERENCE_NOISE_SD.to_vec(),
            noise_corr: matrix3(REFERENCE_NOISE_CORR),
            t_len: 600,
            n_reps: 2000,
            seed: 20_240_917,
            burn_in: 100,
            weights: Vec::new(),
            confidence: 0.975,
            qq_points: 10,
            var_options: VarOptions::default(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.a_true.nrows()
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        if self.weights.is_empty() {
            DVector::from_element(self.n_nodes(), 1.0)
        } else {
            DVector::from_column_slice(&self.weights)
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (1..=self.n_nodes()).map(|i| format!("node{i}")).collect()
    }

    /// True node-level KB of `a_true`.
    pub fn true_node_kb(&self) -> Result<DVector<f64>> {
        LeontiefKernel::new(&self.a_true, 1.0)?.node_kb(&self.weight_vector())
    }

    fn noise_factor(&self) -> Result<DMatrix<f64>> {
        let m = self.n_nodes();
        let c = &self.noise_corr;
        if c.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!("noise_corr must be {m}x{m}")));
        }
        for i in 0..m {
            if c[(i, i)] != 1.0 {
                return Err(Error::InvalidInput("noise_corr must have a unit diagonal".into()));
            }
            for j in 0..m {
                if c[(i, j)] != c[(j, i)] {
                    return Err(Error::InvalidInput("noise_corr must be symmetric".into()));
                }
            }
        }
        let chol = c
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("noise_corr is not positive definite (Cholesky failed)".into()))?;
        let sd = DVector::from_column_slice(&self.noise_sd);
        Ok(DMatrix::from_diagonal(&sd) * chol.l())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n_nodes();
        if !self.a_true.is_square() || m < 2 {
            return Err(Error::InvalidInput("a_true must be square with at least 2 nodes".into()));
        }
        spectral_radius(&self.a_true, DEFAULT_MARGIN)?.require()?;
        if self.noise_sd.len() != m || self.noise_sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput(format!("noise_sd needs {m} nonnegative entries")));
        }
        self.noise_factor()?;
        if self.n_reps == 0 {
            return Err(Error::InvalidInput("n_reps must be at least 1".into()));
        }
        if self.t_len < m + 3 {
            return Err(Error::InvalidInput(format!("t_len must be at least {}", m + 3)));
        }
        if !self.weights.is_empty() && self.weights.len() != m {
            return Err(Error::DimensionMismatch(format!("weights need {m} entries")));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidInput("confidence must lie in (0, 1)".into()));
        }
        if self.qq_points == 0 {
            return Err(Error::InvalidInput("qq_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deterministic random stream for one replication.
pub fn replication_rng(seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index);
    rng
}

/// Simulate `x_t = x_{t-1} A_s + e_t` through consecutive segments
/// `(A_s, length_s)`, starting from `x_0 = 0` and discarding `burn_in` leading
/// rows driven by the first segment's matrix.
pub fn generate_piecewise(
    segments: &[(&DMatrix<f64>, usize)],
    noise_factor: &DMatrix<f64>,
    burn_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one segment is required".into()))?
        .0;
    let m = first.nrows();
    let total: usize = segments.iter().map(|s| s.1).sum();
    let mut out = DMatrix::zeros(total, m);
    let mut x = DVector::zeros(m);
    let mut z = DVector::zeros(m);
    let mut step = |a: &DMatrix<f64>, x: &mut DVector<f64>, rng: &mut ChaCha8Rng| {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        *x = a.tr_mul(x) + noise_factor * &z;
    };
    for _ in 0..burn_in {
        step(first, &mut x, rng);
    }
    let mut row = 0;
    for (a, len) in segments {
        if a.shape() != (m, m) {
            return Err(Error::DimensionMismatch("segment matrices differ in size".into()));
        }
        for _ in 0..*len {
            step(a, &mut x, rng);
            out.set_row(row, &x.transpose());
            row += 1;
        }
    }
    Ok(out)
}

/// One synthetic return panel for replication `rep_index`.
pub fn generate_var1(config: &SimulationConfig, rep_index: u64) -> Result<ReturnPanel> {
    config.validate()?;
    let factor = config.noise_factor()?;
    let mut rng = replication_rng(config.seed, rep_index);
    let values = generate_piecewise(&[(&config.a_true, config.t_len)], &factor, config.burn_in, &mut rng)?;
    ReturnPanel::from_matrix(config.labels(), values)
}

/// Paired quantiles for a QQ plot against `N(mean, sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    pub theoretical: Vec<f64>,
    pub empirical: Vec<f64>,
}

impl QqData {
    pub fn max_deviation(&self) -> f64 {
        self.theoretical
            .iter()
            .zip(&self.empirical)
            .map(|(t, e)| (t - e).abs())
            .fold(0.0, f64::max)
    }
}

/// Linear-interpolation sample quantile of sorted data.
fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// For `k = 1..n_points`, pair the `(k - 0.5) / n_points` sample quantile
/// with the same quantile of `N(mean, sd^2)`.
pub fn qq_points(sample: &[f64], mean: f64, sd: f64, n_points: usize) -> Result<QqData> {
    if sample.is_empty() {
        return Err(Error::InvalidInput("QQ data needs a non-empty sample".into()));
    }
    if n_points == 0 {
        return Err(Error::InvalidInput("QQ data needs at least one point".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (theoretical, empirical) = (1..=n_points)
        .map(|k| {
            let p = (k as f64 - 0.5) / n_points as f64;
            (mean + sd * normal::quantile(p), sample_quantile(&sorted, p))
        })
        .unzip();
    Ok(QqData {
        theoretical,
        empirical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub label: String,
    pub true_kb: f64,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    /// Average over replications of the estimated variance of the node KB estimate.
    pub theoretical_variance: f64,
    pub coverage: f64,
    pub qq: QqData,
}

impl NodeSummary {
    pub fn variance_ratio(&self) -> f64 {
        self.empirical_variance / self.theoretical_variance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub n_reps: usize,
    pub t_len: usize,
    pub confidence: f64,
    pub nodes: Vec<NodeSummary>,
    /// Fraction of (replication, node) pairs whose interval covers the truth.
    pub coverage: f64,
    pub n_failed: usize,
    pub failures: Vec<(usize, String)>,
    /// Per-node estimates, replication order; written to CSV rather than JSON.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

struct RepOutcome {
    estimate: Vec<f64>,
    variance: Vec<f64>,
    covered: Vec<bool>,
}

fn one_replication(
    config: &SimulationConfig,
    truth: &DVector<f64>,
    w: &DVector<f64>,
    rep: usize,
) -> Result<RepOutcome> {
    let panel = generate_var1(config, rep as u64)?;
    let net = estimate_var1(panel.full(), &config.var_options)?;
    let engine = KbVarianceEngine::new(&net)?;
    let estimate = engine.node_kb(w)?;
    let z = normal::quantile(config.confidence);
    let t = net.t_obs() as f64;
    let mut variance = Vec::with_capacity(truth.len());
    let mut covered = Vec::with_capacity(truth.len());
    for i in 0..truth.len() {
        let v = engine.node_kb_variance(i, w)? / t;
        let half = z * v.sqrt();
        covered.push((estimate[i] - truth[i]).abs() <= half);
        variance.push(v);
    }
    Ok(RepOutcome {
        estimate: estimate.iter().copied().collect(),
        variance,
        covered,
    })
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Simulate, estimate and compare against the asymptotic distribution.
pub fn run_monte_carlo(config: &SimulationConfig) -> Result<SimulationSummary> {
    config.validate()?;
    let truth = config.true_node_kb()?;
    let w = config.weight_vector();
    let outcomes: Vec<Result<RepOutcome>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| one_replication(config, &truth, &w, rep))
        .collect();

    let m = config.n_nodes();
    let mut samples = vec![Vec::with_capacity(config.n_reps); m];
    let mut variances = vec![Vec::with_capacity(config.n_reps); m];
    let mut hits = vec![0usize; m];
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                for i in 0..m {
                    samples[i].push(o.estimate[i]);
                    variances[i].push(o.variance[i]);
                    hits[i] += o.covered[i] as usize;
                }
            }
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let used = config.n_reps - failures.len();
    if used == 0 {
        return Err(Error::Numerical(format!(
            "all {} replications failed; first error: {}",
            config.n_reps, failures[0].1
        )));
    }
    let labels = config.labels();
    let mut nodes = Vec::with_capacity(m);
    for i in 0..m {
        let (empirical_mean, empirical_variance) = mean_and_variance(&samples[i]);
        let theoretical_variance = variances[i].iter().sum::<f64>() / used as f64;
        let qq = qq_points(&samples[i], truth[i], theoretical_variance.sqrt(), config.qq_points)?;
        nodes.push(NodeSummary {
            label: labels[i].clone(),
            true_kb: truth[i],
            empirical_mean,
            empirical_variance,
            theoretical_variance,
            coverage: hits[i] as f64 / used as f64,
            qq,
        });
    }
    let coverage = hits.iter().sum::<usize>() as f64 / (used * m) as f64;
    Ok(SimulationSummary {
        seed: config.seed,
        n_reps: config.n_reps,
        t_len: config.t_len,
        confidence: config.confidence,
        nodes,
        coverage,
        n_failed: failures.len(),
        failures,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePower {
    pub size: f64,
    pub power: f64,
    pub n_used: usize,
    pub n_failed: usize,
    /// Z statistics of the null node, replication order.
    #[serde(skip)]
    pub null_statistics: Vec<f64>,
}

/// Rejection rates of the one-sided nonzero test on a node with zero true KB
/// (`null_node`) and on one with positive true KB (`alt_node`).
pub fn size_power_study(
    config: &SimulationConfig,
    null_node: usize,
    alt_node: usize,
    level: f64,
) -> Result<SizePower> {
    config.validate()?;
    let m = config.n_nodes();
    if null_node >= m || alt_node >= m {
        return Err(Error::InvalidInput("node index out of range".into()));
    }
    let w = config.weight_vector();
    let outcomes: Vec<Result<(f64, bool, bool)>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| {
            let panel = generate_var1(config, rep as u64)?;
            let net = estimate_var1(panel.full(), &config.var_options)?;
            let engine = KbVarianceEngine::new(&net)?;
            let null = engine.test_nonzero(null_node, &w, level)?;
            let alt = engine.test_nonzero(alt_node, &w, level)?;
            Ok((null.statistic, null.reject, alt.reject))
        })
        .collect();
    let mut null_statistics = Vec::with_capacity(config.n_reps);
    let (mut size_hits, mut power_hits, mut failed) = (0usize, 0usize, 0usize);
    for o in outcomes {
        match o {
            Ok((z, a, b)) => {
                null_statistics.push(z);
                size_hits += a as usize;
                power_hits += b as usize;
            }
            Err(_) => failed += 1,
        }
    }
    let used = config.n_reps - failed;
    if used == 0 {
        return Err(Error::Numerical("every replication failed".into()));
    }
    Ok(SizePower {
        size: size_hits as f64 / used as f64,
        power: power_hits as f64 / used as f64,
        n_used: used,
        n_failed: failed,
        null_statistics,
    })
}

/// Mean absolute entrywise gap between `(I - A_hat)^-1` and its first-order
/// expansion `L + L Delta L` around the true `A`, averaged over replications.
pub fn taylor_remainder_study(config: &SimulationConfig) -> Result<f64> {
    config.validate()?;
    let m = config.n_nodes();
    let l = LeontiefKernel::new(&config.a_true, 1.0)?.inverse().clone();
    let errors: Vec<Result<f64>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| {
            let panel = generate_var1(config, rep as u64)?;
            let net = estimate_var1(panel.full(), &config.var_options)?;
            let delta = net.a_hat() - &config.a_true;
            let first_order = &l + &l * &delta * &l;
            let exact = (DMatrix::identity(m, m) - net.a_hat())
                .try_inverse()
                .ok_or_else(|| Error::Singular("I - A_hat".into()))?;
            Ok((exact - first_order).abs().mean())
        })
        .collect();
    let ok: Vec<f64> = errors.into_iter().filter_map(Result::ok).collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every replication failed".into()));
    }
    Ok(ok.iter().sum::<f64>() / ok.len() as f64)
}
