//! Asymptotic distribution of estimated KB centrality, significance tests and
//! validated (zero-clamped) centralities.
//!
//! Write `L = (I - A_hat)^-1` and `r_i` for its `i`-th row. To first order the
//! estimation error of row `i` of `L` is `r_i Delta L`, where `Delta = A_hat - A`
//! has column blocks with `Cov(sqrt(T) Delta_l, sqrt(T) Delta_k) = Sigma_lk =
//! rho_lk sigma_l sigma_k Q^-1`. For any vector `v` this gives
//!
//! ```text
//! T Var(r_i Delta v)            = v' B(i,i) v
//! T Cov(r_i Delta v, r_j Delta v) = v' B(i,j) v
//! B(i,j)[l,k] = r_i Sigma_lk r_j'
//! ```
//!
//! with `v = L e_j` for pair-level KB and `v = L w` for node-level KB. Since
//! every `Sigma_lk` is a multiple of the same `Q^-1`, `B(i,j)` factors as
//! `(r_i Q^-1 r_j') C` with `C[l,k] = rho_lk sigma_l sigma_k`; the engine caches
//! `G = L Q^-1 L'` and `C` so each variance costs O(M^2) instead of O(M^4).
//! The direct quadruple loop is kept (`*_naive`) as an independent check.
//!
//! Standard errors are reported on the scale of the unscaled estimate, i.e.
//! `sqrt(variance / T)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::centrality::LeontiefKernel;
use crate::error::{Error, Result};
use crate::normal;
use crate::var::EstimatedNetwork;

const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sides {
    One,
    Two,
}

/// Denominator of the pairwise difference test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMode {
    /// `Var_i + Var_j - Cov_ij`
    Paper,
    /// `Var_i + Var_j - 2 Cov_ij`, the variance of a difference.
    #[default]
    Standard,
}

impl std::str::FromStr for CovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(CovMode::Paper),
            "standard" => Ok(CovMode::Standard),
            other => Err(Error::InvalidInput(format!(
                "unknown covariance mode {other:?} (expected paper|standard)"
            ))),
        }
    }
}

/// Outcome of a Z test. `ci` is the acceptance region mapped onto the estimate:
/// `estimate -/+ z_{1-level} se` for one-sided tests (only the lower edge is
/// decisive) and `estimate -/+ z_{1-level/2} se` for two-sided tests, so
/// `reject` agrees with "the interval excludes zero".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
    pub sides: Sides,
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
}

impl TestResult {
    fn build(estimate: f64, variance: f64, t_obs: usize, level: f64, sides: Sides) -> Result<Self> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::InvalidInput(format!("test level must lie in (0, 1], got {level}")));
        }
        if !(variance > 0.0) {
            return Err(Error::Degenerate(format!(
                "asymptotic variance is {variance:e}; the Z statistic is undefined"
            )));
        }
        let std_error = (variance / t_obs as f64).sqrt();
        let statistic = estimate / std_error;
        let (p_value, z_crit) = match sides {
            Sides::One => (normal::sf(statistic), normal::quantile(1.0 - level)),
            Sides::Two => (
                (2.0 * normal::sf(statistic.abs())).min(1.0),
                normal::quantile(1.0 - level / 2.0),
            ),
        };
        let half = z_crit * std_error;
        Ok(TestResult {
            statistic,
            p_value,
            reject: p_value < level,
            level,
            sides,
            estimate,
            std_error,
            ci: (estimate - half, estimate + half),
        })
    }
}

/// Validated node-level KB: raw values zeroed unless the one-sided lower
/// confidence bound is strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedKb {
    pub confidence: f64,
    pub raw: Vec<f64>,
    pub validated: Vec<f64>,
    pub lower_bound: Vec<f64>,
    /// `None` where the asymptotic variance is zero.
    pub tests: Vec<Option<TestResult>>,
}

impl ValidatedKb {
    pub fn system(&self) -> f64 {
        self.validated.iter().sum()
    }
}

/// Variance machinery for one estimated network.
#[derive(Debug, Clone)]
pub struct KbVarianceEngine {
    kernel: LeontiefKernel,
    net: EstimatedNetwork,
    cov: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl KbVarianceEngine {
    /// Builds the `alpha = 1` kernel of `A_hat`; fails on non-stationary estimates.
    pub fn new(net: &EstimatedNetwork) -> Result<Self> {
        let kernel = LeontiefKernel::new(net.a_hat(), 1.0)?;
        Self::with_kernel(net, kernel)
    }

    pub fn with_kernel(net: &EstimatedNetwork, kernel: LeontiefKernel) -> Result<Self> {
        if kernel.adjacency() != net.a_hat() || kernel.alpha() != 1.0 {
            return Err(Error::InvalidInput(
                "kernel must be the alpha = 1 kernel of the network's A_hat".into(),
            ));
        }
        let l = kernel.inverse();
        let g = l * net.q_inv() * l.transpose();
        let gram = (&g + g.transpose()) * 0.5;
        Ok(KbVarianceEngine {
            cov: net.residual_covariance(),
            gram,
            kernel,
            net: net.clone(),
        })
    }

    pub fn kernel(&self) -> &LeontiefKernel {
        &self.kernel
    }

    pub fn network(&self) -> &EstimatedNetwork {
        &self.net
    }

    pub fn n_nodes(&self) -> usize {
        self.net.n_nodes()
    }

    pub fn t_obs(&self) -> usize {
        self.net.t_obs()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n_nodes() {
            return Err(Error::InvalidInput(format!(
                "node index {i} out of range for {} nodes",
                self.n_nodes()
            )));
        }
        Ok(())
    }

    fn leontief_times(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if w.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has {} entries for {} nodes",
                w.len(),
                self.n_nodes()
            )));
        }
        Ok(self.kernel.inverse() * w)
    }

    fn finish_variance(raw: f64, scale: f64) -> Result<f64> {
        if raw.is_nan() {
            return Err(Error::Numerical("variance evaluated to NaN".into()));
        }
        if raw < -NEGATIVE_VARIANCE_TOL * (1.0 + scale) {
            return Err(Error::Numerical(format!("negative asymptotic variance {raw:e}")));
        }
        Ok(raw.max(0.0))
    }

    /// `B(i,j)` via the factorisation `(r_i Q^-1 r_j') C`.
    pub fn inner_matrix(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(&self.cov * self.gram[(i, j)])
    }

    /// `B(i,j)[l,k] = r_i Sigma_lk r_j'` evaluated entry by entry.
    pub fn inner_matrix_naive(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        let m = self.n_nodes();
        let l = self.kernel.inverse();
        let r_i = l.row(i);
        let r_j = l.row(j).transpose();
        let mut b = DMatrix::zeros(m, m);
        for p in 0..m {
            for q in 0..m {
                let block = self.net.sigma_block(p, q)?;
                b[(p, q)] = (r_i * (block * &r_j))[(0, 0)];
            }
        }
        Ok(b)
    }

    fn quad(&self, i: usize, j: usize, v: &DVector<f64>) -> (f64, f64) {
        let cv = (v.transpose() * &self.cov * v)[(0, 0)];
        let g = self.gram[(i, j)];
        (g * cv, (g * cv).abs())
    }

    /// Asymptotic variance of `sqrt(T) [L_hat_ij - L_ij]`.
    pub fn pair_kb_variance(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        let col = self.kernel.inverse().column(j).into_owned();
        let (v, scale) = self.quad(i, i, &col);
        Self::finish_variance(v, scale)
    }

    pub fn pair_kb_variance_naive(&self, i: usize, j: usize) -> Result<f64> {
        let b = self.inner_matrix_naive(i, i)?;
        let col = self.kernel.inverse().column(j).into_owned();
        let v = (col.transpose() * &b * &col)[(0, 0)];
        Self::finish_variance(v, v.abs())
    }

    /// Asymptotic variance of `sqrt(T)` times the node-`i` KB estimation error.
    pub fn node_kb_variance(&self, i: usize, w: &DVector<f64>) -> Result<f64> {
        self.check_index(i)?;
        let v = self.leontief_times(w)?;
        let (var, scale) = self.quad(i, i, &v);
        Self::finish_variance(var, scale)
    }

    pub fn node_kb_variance_naive(&self, i: usize, w: &DVector<f64>) -> Result<f64> {
        let v = self.leontief_times(w)?;
        let b = self.inner_matrix_naive(i, i)?;
        let var = (v.transpose() * &b * &v)[(0, 0)];
        Self::finish_variance(var, var.abs())
    }

    /// Asymptotic covariance of the scaled node-`i` and node-`j` KB errors.
    pub fn node_kb_covariance(&self, i: usize, j: usize, w: &DVector<f64>) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        let v = self.leontief_times(w)?;
        Ok(self.quad(i, j, &v).0)
    }

    pub fn node_kb_covariance_naive(&self, i: usize, j: usize, w: &DVector<f64>) -> Result<f64> {
        let v = self.leontief_times(w)?;
        let b = self.inner_matrix_naive(i, j)?;
        Ok((v.transpose() * &b * &v)[(0, 0)])
    }

    /// Estimated node-level KB vector `(L - I) w`.
    pub fn node_kb(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.kernel.node_kb(w)
    }

    /// One-sided test of `H0: node-i KB = 0` against `H1: > 0`.
    pub fn test_nonzero(&self, i: usize, w: &DVector<f64>, level: f64) -> Result<TestResult> {
        self.check_index(i)?;
        let estimate = self.node_kb(w)?[i];
        let var = self.node_kb_variance(i, w)?;
        TestResult::build(estimate, var, self.t_obs(), level, Sides::One)
    }

    /// Two-sided test of `H0: node-i KB = node-j KB`.
    pub fn test_pairwise(
        &self,
        i: usize,
        j: usize,
        w: &DVector<f64>,
        level: f64,
        mode: CovMode,
    ) -> Result<TestResult> {
        self.check_index(i)?;
        self.check_index(j)?;
        let node = self.node_kb(w)?;
        let estimate = node[i] - node[j];
        let var_i = self.node_kb_variance(i, w)?;
        let var_j = self.node_kb_variance(j, w)?;
        let cov = self.node_kb_covariance(i, j, w)?;
        let var = match mode {
            CovMode::Paper => var_i + var_j - cov,
            CovMode::Standard => var_i + var_j - 2.0 * cov,
        };
        if !(var > NEGATIVE_VARIANCE_TOL * (var_i + var_j)) {
            return Err(Error::Degenerate(format!(
                "pairwise variance for nodes ({i}, {j}) is not positive ({var:e})"
            )));
        }
        TestResult::build(estimate, var, self.t_obs(), level, Sides::Two)
    }

    /// Zero every node whose one-sided lower bound at `confidence` is not positive.
    pub fn validated_node_kb(&self, w: &DVector<f64>, confidence: f64) -> Result<ValidatedKb> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence must lie in (0, 1), got {confidence}"
            )));
        }
        let raw = self.node_kb(w)?;
        let z = normal::quantile(confidence);
        let m = self.n_nodes();
        let mut out = ValidatedKb {
            confidence,
            raw: raw.iter().copied().collect(),
            validated: Vec::with_capacity(m),
            lower_bound: Vec::with_capacity(m),
            tests: Vec::with_capacity(m),
        };
        for i in 0..m {
            let var = self.node_kb_variance(i, w)?;
            let se = (var / self.t_obs() as f64).sqrt();
            let lower = raw[i] - z * se;
            out.lower_bound.push(lower);
            out.validated.push(if lower > 0.0 { raw[i] } else { 0.0 });
            out.tests.push(match self.test_nonzero(i, w, 1.0 - confidence) {
                Ok(t) => Some(t),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            });
        }
        Ok(out)
    }

    pub fn validated_system_kb(&self, w: &DVector<f64>, confidence: f64) -> Result<f64> {
        Ok(self.validated_node_kb(w, confidence)?.system())
    }
}

/// Per-node test rows as CSV:
/// `label,estimate,std_error,z,p_value,reject,ci_lower,ci_upper,validated_value`.
pub fn write_test_csv<W: std::io::Write>(
    labels: &[String],
    validated: &ValidatedKb,
    sink: W,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record([
        "label",
        "estimate",
        "std_error",
        "z",
        "p_value",
        "reject",
        "ci_lower",
        "ci_upper",
        "validated_value",
    ])?;
    for (i, label) in labels.iter().enumerate() {
        let row = match &validated.tests[i] {
            Some(t) => vec![
                label.clone(),
                t.estimate.to_string(),
                t.std_error.to_string(),
                t.statistic.to_string(),
                t.p_value.to_string(),
                t.reject.to_string(),
                t.ci.0.to_string(),
                t.ci.1.to_string(),
                validated.validated[i].to_string(),
            ],
            None => vec![
                label.clone(),
                validated.raw[i].to_string(),
                "0".into(),
                "degenerate".into(),
                String::new(),
                String::new(),
                validated.raw[i].to_string(),
                validated.raw[i].to_string(),
                validated.validated[i].to_string(),
            ],
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn labels(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("n{i}")).collect()
    }

    fn network(a: DMatrix<f64>, sigma: Vec<f64>, rho: DMatrix<f64>, q_inv: DMatrix<f64>, t: usize) -> EstimatedNetwork {
        let m = a.nrows();
        EstimatedNetwork::new(labels(m), a, DVector::from_vec(sigma), rho, q_inv, t).unwrap()
    }

    fn ones(m: usize) -> DVector<f64> {
        DVector::from_element(m, 1.0)
    }

    #[test]
    fn empty_network_pair_variance_is_sigma_squared() {
        let net = network(
            DMatrix::zeros(3, 3),
            vec![1.0, 2.0, 0.5],
            DMatrix::identity(3, 3),
            DMatrix::identity(3, 3),
            100,
        );
        let e = KbVarianceEngine::new(&net).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = net.sigma()[j].powi(2);
                assert!((e.pair_kb_variance(i, j).unwrap() - expected).abs() < 1e-15);
                assert!((e.pair_kb_variance_naive(i, j).unwrap() - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn doubling_sigma_quadruples_variance() {
        let a = dmatrix![0.2, 0.1; 0.05, 0.3];
        let rho = dmatrix![1.0, 0.3; 0.3, 1.0];
        let q = dmatrix![2.0, 0.4; 0.4, 1.0];
        let e1 = KbVarianceEngine::new(&network(a.clone(), vec![1.0, 0.5], rho.clone(), q.clone(), 50)).unwrap();
        let e2 = KbVarianceEngine::new(&network(a, vec![2.0, 1.0], rho, q, 50)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let v1 = e1.pair_kb_variance(i, j).unwrap();
                let v2 = e2.pair_kb_variance(i, j).unwrap();
                assert!((v2 - 4.0 * v1).abs() < 1e-12 * v2);
            }
        }
    }

    fn sample_engine() -> KbVarianceEngine {
        let a = dmatrix![0.2, 0.1, 0.0; 0.05, 0.25, 0.1; 0.1, 0.0, 0.15];
        let rho = dmatrix![1.0, 0.3, -0.2; 0.3, 1.0, 0.1; -0.2, 0.1, 1.0];
        let q = dmatrix![1.5, 0.2, 0.1; 0.2, 1.0, -0.3; 0.1, -0.3, 2.0];
        KbVarianceEngine::new(&network(a, vec![1.0, 0.7, 1.3], rho, q, 400)).unwrap()
    }

    #[test]
    fn node_variance_reduces_to_pair_and_scales() {
        let e = sample_engine();
        for i in 0..3 {
            for j in 0..3 {
                let mut basis = DVector::zeros(3);
                basis[j] = 1.0;
                let nv = e.node_kb_variance(i, &basis).unwrap();
                let pv = e.pair_kb_variance(i, j).unwrap();
                assert!((nv - pv).abs() < 1e-14 * (1.0 + pv));
            }
            let w = DVector::from_vec(vec![0.3, 1.0, 2.0]);
            let v = e.node_kb_variance(i, &w).unwrap();
            let v3 = e.node_kb_variance(i, &(&w * 3.0)).unwrap();
            assert!((v3 - 9.0 * v).abs() < 1e-12 * v3);
            let c = e.node_kb_covariance(i, i, &w).unwrap();
            assert!((c - v).abs() < 1e-14 * v);
        }
    }

    #[test]
    fn cauchy_schwarz_on_covariance() {
        let e = sample_engine();
        let w = ones(3);
        for i in 0..3 {
            for j in 0..3 {
                let c = e.node_kb_covariance(i, j, &w).unwrap();
                let vi = e.node_kb_variance(i, &w).unwrap();
                let vj = e.node_kb_variance(j, &w).unwrap();
                assert!(c.abs() <= (vi * vj).sqrt() + 1e-9);
            }
        }
    }

    #[test]
    fn empty_network_test_is_neutral() {
        let net = network(
            DMatrix::zeros(2, 2),
            vec![1.0, 1.0],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            100,
        );
        let e = KbVarianceEngine::new(&net).unwrap();
        let t = e.test_nonzero(0, &ones(2), 0.05).unwrap();
        assert_eq!(t.estimate, 0.0);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 0.5);
        assert!(!t.reject);
        assert_eq!(t.sides, Sides::One);
        let v = e.validated_node_kb(&ones(2), 0.975).unwrap();
        assert_eq!(v.validated, vec![0.0, 0.0]);
        assert_eq!(e.validated_system_kb(&ones(2), 0.975).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_pair_has_zero_statistic() {
        let net = network(
            dmatrix![0.2, 0.3; 0.3, 0.2],
            vec![1.0, 1.0],
            dmatrix![1.0, 0.4; 0.4, 1.0],
            dmatrix![1.0, 0.2; 0.2, 1.0],
            300,
        );
        let e = KbVarianceEngine::new(&net).unwrap();
        let t = e.test_pairwise(0, 1, &ones(2), 0.05, CovMode::Standard).unwrap();
        assert_eq!(t.estimate, 0.0);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.sides, Sides::Two);
        assert!(matches!(
            e.test_pairwise(1, 1, &ones(2), 0.05, CovMode::Standard),
            Err(Error::Degenerate(_))
        ));
        // the single-Cov denominator is positive even for i == j
        let same = e.test_pairwise(1, 1, &ones(2), 0.05, CovMode::Paper).unwrap();
        assert_eq!(same.statistic, 0.0);
    }

    #[test]
    fn paper_mode_uses_single_covariance() {
        let e = sample_engine();
        let w = ones(3);
        let vi = e.node_kb_variance(0, &w).unwrap();
        let vj = e.node_kb_variance(2, &w).unwrap();
        let c = e.node_kb_covariance(0, 2, &w).unwrap();
        let p = e.test_pairwise(0, 2, &w, 0.05, CovMode::Paper).unwrap();
        let s = e.test_pairwise(0, 2, &w, 0.05, CovMode::Standard).unwrap();
        let t = e.t_obs() as f64;
        assert!((p.std_error - ((vi + vj - c) / t).sqrt()).abs() < 1e-15);
        assert!((s.std_error - ((vi + vj - 2.0 * c) / t).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn test_result_interval_matches_level() {
        let e = sample_engine();
        let w = ones(3);
        let t = e.test_pairwise(0, 1, &w, 0.05, CovMode::Standard).unwrap();
        let width = t.ci.1 - t.ci.0;
        assert!((width - 2.0 * normal::quantile(0.975) * t.std_error).abs() < 1e-14);
        assert_eq!(t.reject, t.p_value < t.level);
        let one = e.test_nonzero(0, &w, 0.025).unwrap();
        assert_eq!(one.reject, one.ci.0 > 0.0);
    }

    #[test]
    fn tiny_noise_validates_everything_positive() {
        let a = dmatrix![0.2, 0.1; 0.05, 0.3];
        let net = network(a, vec![1.0, 1.0], DMatrix::identity(2, 2), DMatrix::identity(2, 2), 1 << 50);
        let e = KbVarianceEngine::new(&net).unwrap();
        let v = e.validated_node_kb(&ones(2), 0.975).unwrap();
        assert_eq!(v.validated, v.raw);
        assert!(v.raw.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn zero_sigma_is_degenerate() {
        let net = network(
            dmatrix![0.2, 0.1; 0.05, 0.3],
            vec![0.0, 0.0],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            100,
        );
        let e = KbVarianceEngine::new(&net).unwrap();
        assert!(matches!(e.test_nonzero(0, &ones(2), 0.05), Err(Error::Degenerate(_))));
        let v = e.validated_node_kb(&ones(2), 0.975).unwrap();
        assert!(v.tests.iter().all(Option::is_none));
        assert_eq!(v.validated, v.raw);
        let mut out = Vec::new();
        write_test_csv(&labels(2), &v, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("degenerate"));
    }

    #[test]
    fn refuses_non_stationary_network() {
        let net = network(
            dmatrix![1.1, 0.0; 0.0, 0.2],
            vec![1.0, 1.0],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            100,
        );
        assert!(matches!(KbVarianceEngine::new(&net), Err(Error::NotStationary { .. })));
    }

    #[test]
    fn json_rebuild_is_bit_identical() {
        let e = sample_engine();
        let back = EstimatedNetwork::from_json(&e.network().to_json().unwrap()).unwrap();
        let e2 = KbVarianceEngine::new(&back).unwrap();
        let w = ones(3);
        for i in 0..3 {
            assert_eq!(
                e.node_kb_variance(i, &w).unwrap().to_bits(),
                e2.node_kb_variance(i, &w).unwrap().to_bits()
            );
            for j in 0..3 {
                assert_eq!(
                    e.pair_kb_variance(i, j).unwrap().to_bits(),
                    e2.pair_kb_variance(i, j).unwrap().to_bits()
                );
            }
        }
    }

    fn random_engine() -> impl Strategy<Value = KbVarianceEngine> {
        (2usize..=5).prop_flat_map(|m| {
            (
                proptest::collection::vec(-1.0f64..1.0, m * m),
                proptest::collection::vec(0.1f64..2.0, m),
                proptest::collection::vec(-1.0f64..1.0, m * m),
                proptest::collection::vec(-1.0f64..1.0, m * m),
                0.1f64..0.9,
            )
                .prop_map(move |(a, s, r, q, radius)| {
                    let a = DMatrix::from_row_slice(m, m, &a);
                    let rad = crate::spectral::spectral_radius(&a, 0.0).unwrap().spectral_radius.max(1e-9);
                    let a = a * (radius / rad);
                    // correlation from a random Gram matrix
                    let f = DMatrix::from_row_slice(m, m, &r);
                    let g = &f * f.transpose() + DMatrix::identity(m, m) * 0.1;
                    let d = DVector::from_fn(m, |i, _| 1.0 / g[(i, i)].sqrt());
                    let mut rho = DMatrix::from_fn(m, m, |i, j| g[(i, j)] * d[i] * d[j]);
                    for i in 0..m {
                        rho[(i, i)] = 1.0;
                        for j in 0..i {
                            rho[(i, j)] = rho[(j, i)];
                        }
                    }
                    let h = DMatrix::from_row_slice(m, m, &q);
                    let q_inv = &h * h.transpose() + DMatrix::identity(m, m) * 0.5;
                    let q_inv = (&q_inv + q_inv.transpose()) * 0.5;
                    let net = EstimatedNetwork::new(labels(m), a, DVector::from_vec(s), rho, q_inv, 250).unwrap();
                    KbVarianceEngine::new(&net).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn factorised_inner_matrix_matches_definition(e in random_engine()) {
            let m = e.n_nodes();
            for i in 0..m {
                for j in 0..m {
                    let fast = e.inner_matrix(i, j).unwrap();
                    let slow = e.inner_matrix_naive(i, j).unwrap();
                    prop_assert!((&fast - &slow).amax() <= 1e-10 * (1.0 + slow.amax()));
                    prop_assert_eq!(&fast, &e.inner_matrix(j, i).unwrap().transpose());
                }
                let b = e.inner_matrix_naive(i, i).unwrap();
                let sym = (&b + b.transpose()) * 0.5;
                prop_assert!(nalgebra::SymmetricEigen::new(sym).eigenvalues.min() >= -1e-10 * (1.0 + b.amax()));
            }
        }

        #[test]
        fn validated_never_exceeds_raw(e in random_engine(), conf in 0.5f64..0.999) {
            let w = ones(e.n_nodes());
            let v = e.validated_node_kb(&w, conf).unwrap();
            for (val, raw) in v.validated.iter().zip(&v.raw) {
                prop_assert!(*val == 0.0 || val == raw);
                if *raw >= 0.0 {
                    prop_assert!(val <= raw);
                }
            }
        }
    }
}
