//! VAR(1) least-squares network estimation.
//!
//! Orientation: with `X` the lagged rows and `Y` the current rows of a return
//! panel, the model is `Y = X A + E`. Row `i` of `A` therefore holds node
//! `i`'s outgoing influence, and entry `(i, j)` is the effect of node `i`'s
//! lagged return on node `j`. The same convention is used by every
//! centrality and inference routine in this crate.

use log::warn;
use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ReturnWindow;
use crate::spectral::{spectral_radius, StationarityCertificate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarOptions {
    /// Subtract column means of the lagged and current blocks before the
    /// regression (equivalent to fitting an intercept).
    pub demean: bool,
    /// Largest accepted condition number of `X'X`.
    pub condition_cap: f64,
}

impl Default for VarOptions {
    fn default() -> Self {
        VarOptions {
            demean: true,
            condition_cap: 1e12,
        }
    }
}

/// Estimated adjacency matrix plus the residual structure used for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRecord", into = "NetworkRecord")]
pub struct EstimatedNetwork {
    labels: Vec<String>,
    a_hat: DMatrix<f64>,
    sigma: DVector<f64>,
    rho: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    t_obs: usize,
}

/// Wire form: matrices are row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRecord {
    labels: Vec<String>,
    a_hat: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    rho: Vec<Vec<f64>>,
    q_inv: Vec<Vec<f64>>,
    t_obs: usize,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], m: usize) -> Result<DMatrix<f64>> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch(format!("{name} must be {m}x{m}")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

impl From<EstimatedNetwork> for NetworkRecord {
    fn from(n: EstimatedNetwork) -> Self {
        NetworkRecord {
            a_hat: to_rows(&n.a_hat),
            sigma: n.sigma.iter().copied().collect(),
            rho: to_rows(&n.rho),
            q_inv: to_rows(&n.q_inv),
            t_obs: n.t_obs,
            labels: n.labels,
        }
    }
}

impl TryFrom<NetworkRecord> for EstimatedNetwork {
    type Error = Error;

    fn try_from(r: NetworkRecord) -> Result<Self> {
        let m = r.labels.len();
        EstimatedNetwork::new(
            r.labels,
            from_rows("a_hat", &r.a_hat, m)?,
            DVector::from_vec(r.sigma),
            from_rows("rho", &r.rho, m)?,
            from_rows("q_inv", &r.q_inv, m)?,
            r.t_obs,
        )
    }
}

const RHO_TOL: f64 = 1e-12;
const Q_INV_MIN_EIG: f64 = 1e-8;

impl EstimatedNetwork {
    /// Assemble a network from its parts, checking the structural invariants.
    pub fn new(
        labels: Vec<String>,
        a_hat: DMatrix<f64>,
        sigma: DVector<f64>,
        rho: DMatrix<f64>,
        q_inv: DMatrix<f64>,
        t_obs: usize,
    ) -> Result<Self> {
        let m = labels.len();
        for (name, mat) in [("a_hat", &a_hat), ("rho", &rho), ("q_inv", &q_inv)] {
            if mat.shape() != (m, m) {
                return Err(Error::DimensionMismatch(format!("{name} must be {m}x{m}")));
            }
        }
        if sigma.len() != m {
            return Err(Error::DimensionMismatch(format!("sigma must have {m} entries")));
        }
        if t_obs == 0 {
            return Err(Error::InvalidInput("t_obs must be positive".into()));
        }
        let all = a_hat.iter().chain(sigma.iter()).chain(rho.iter()).chain(q_inv.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if sigma.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidInput("sigma entries must be nonnegative".into()));
        }
        for i in 0..m {
            if rho[(i, i)] != 1.0 {
                return Err(Error::InvalidInput("rho must have a unit diagonal".into()));
            }
            for j in 0..m {
                let v = rho[(i, j)];
                if v != rho[(j, i)] || v.abs() > 1.0 + RHO_TOL {
                    return Err(Error::InvalidInput(
                        "rho must be symmetric with entries in [-1, 1]".into(),
                    ));
                }
            }
        }
        let sym = (&q_inv + q_inv.transpose()) * 0.5;
        if (&q_inv - &sym).amax() > 1e-8 * (1.0 + q_inv.amax()) {
            return Err(Error::InvalidInput("q_inv must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig <= Q_INV_MIN_EIG {
            return Err(Error::InvalidInput(format!(
                "q_inv must be positive definite (minimum eigenvalue {min_eig:e})"
            )));
        }
        Ok(EstimatedNetwork {
            labels,
            a_hat,
            sigma,
            rho,
            q_inv,
            t_obs,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn t_obs(&self) -> usize {
        self.t_obs
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Nodes whose residual standard deviation is exactly zero.
    pub fn degenerate_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&k| self.sigma[k] == 0.0).collect()
    }

    /// Residual covariance `C[l, k] = rho[l, k] * sigma[l] * sigma[k]`.
    pub fn residual_covariance(&self) -> DMatrix<f64> {
        let m = self.n_nodes();
        DMatrix::from_fn(m, m, |l, k| self.rho[(l, k)] * (self.sigma[l] * self.sigma[k]))
    }

    /// `Sigma_lk = rho_lk sigma_l sigma_k Q^-1`, the asymptotic covariance of
    /// `sqrt(T)` times the estimation error in columns `l` and `k` of `A`.
    pub fn sigma_block(&self, l: usize, k: usize) -> Result<DMatrix<f64>> {
        let m = self.n_nodes();
        if l >= m || k >= m {
            return Err(Error::InvalidInput(format!(
                "node index ({l}, {k}) out of range for {m} nodes"
            )));
        }
        let scale = self.rho[(l, k)] * (self.sigma[l] * self.sigma[k]);
        Ok(&self.q_inv * scale)
    }

    pub fn stationarity(&self, margin: f64) -> Result<StationarityCertificate> {
        spectral_radius(&self.a_hat, margin)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Least-squares coefficients `(X'X)^-1 X'Y`, with the condition number of `X'X`.
pub fn ols(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    condition_cap: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let xtx = x.tr_mul(x);
    let eig = SymmetricEigen::new(xtx.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= condition_cap) {
        return Err(Error::IllConditioned {
            condition,
            cap: condition_cap,
        });
    }
    let chol = xtx.clone().cholesky().ok_or(Error::IllConditioned {
        condition,
        cap: condition_cap,
    })?;
    let coef = chol.solve(&x.tr_mul(y));
    let xtx_inv = chol.inverse();
    let xtx_inv = (&xtx_inv + xtx_inv.transpose()) * 0.5;
    Ok((coef, xtx_inv))
}

fn demeaned(block: DMatrixView<'_, f64>) -> DMatrix<f64> {
    let mut out = block.into_owned();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Fit `x_t = x_{t-1} A + e_t` by least squares over a return window.
pub fn estimate_var1(returns: ReturnWindow<'_>, opts: &VarOptions) -> Result<EstimatedNetwork> {
    estimate_var1_matrix(returns.values(), returns.labels().to_vec(), opts)
}

/// As [`estimate_var1`], on a bare `T_r x M` matrix.
pub fn estimate_var1_matrix(
    values: DMatrixView<'_, f64>,
    labels: Vec<String>,
    opts: &VarOptions,
) -> Result<EstimatedNetwork> {
    let (t_r, m) = values.shape();
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {m} columns",
            labels.len()
        )));
    }
    if t_r < m + 2 {
        return Err(Error::InvalidInput(format!(
            "VAR(1) needs at least M + 2 = {} return rows, got {t_r}",
            m + 2
        )));
    }
    let t = t_r - 1;
    let (x, y) = if opts.demean {
        (demeaned(values.rows(0, t)), demeaned(values.rows(1, t)))
    } else {
        (values.rows(0, t).into_owned(), values.rows(1, t).into_owned())
    };
    let (a_hat, xtx_inv) = ols(&x, &y, opts.condition_cap)?;
    let resid = &y - &x * &a_hat;

    let means: Vec<f64> = resid.column_iter().map(|c| c.mean()).collect();
    let denom = (t - 1) as f64;
    let mut cov = DMatrix::zeros(m, m);
    for l in 0..m {
        for k in l..m {
            let s: f64 = resid
                .column(l)
                .iter()
                .zip(resid.column(k).iter())
                .map(|(a, b)| (a - means[l]) * (b - means[k]))
                .sum();
            cov[(l, k)] = s / denom;
            cov[(k, l)] = s / denom;
        }
    }
    let sigma = DVector::from_fn(m, |k, _| cov[(k, k)].max(0.0).sqrt());
    let mut rho = DMatrix::identity(m, m);
    for l in 0..m {
        for k in (l + 1)..m {
            let d = sigma[l] * sigma[k];
            let r = if d > 0.0 {
                (cov[(l, k)] / d).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            rho[(l, k)] = r;
            rho[(k, l)] = r;
        }
    }
    let q_inv = xtx_inv * t as f64;
    let net = EstimatedNetwork::new(labels, a_hat, sigma, rho, q_inv, t)?;
    let degenerate = net.degenerate_nodes();
    if !degenerate.is_empty() {
        warn!("zero residual variance for node(s) {degenerate:?}; tests involving them are undefined");
    }
    Ok(net)
}
