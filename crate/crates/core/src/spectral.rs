//! Spectral radius and the stationarity check on adjacency matrices.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default gap below 1 that a spectral radius must clear.
pub const DEFAULT_MARGIN: f64 = 1e-6;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;
const GELFAND_POWER_LOG2: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusMethod {
    /// All eigenvalues from a real Schur decomposition.
    Schur,
    /// `||A^k||_F^(1/k)` at k = 128, used when the QR sweep does not converge.
    Gelfand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub spectral_radius: f64,
    pub pass: bool,
    pub tolerance_used: f64,
    pub method: RadiusMethod,
}

impl StationarityCertificate {
    pub fn require(&self) -> Result<()> {
        if self.pass {
            Ok(())
        } else {
            Err(Error::NotStationary {
                radius: self.spectral_radius,
                margin: self.tolerance_used,
            })
        }
    }
}

/// `||A^k||_F^(1/k)` for `k = 2^log2_k`, computed by rescaled repeated squaring.
pub fn gelfand_estimate(a: &DMatrix<f64>, log2_k: u32) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut b = a / norm;
    let mut log_scale = norm.ln();
    for _ in 0..log2_k {
        b = &b * &b;
        let s = b.norm();
        if s == 0.0 {
            return 0.0;
        }
        b /= s;
        log_scale = 2.0 * log_scale + s.ln();
    }
    let k = 2f64.powi(log2_k as i32);
    (log_scale / k).exp()
}

fn schur_radius(a: &DMatrix<f64>) -> Option<f64> {
    let schur = a.clone().try_schur(SCHUR_EPS, SCHUR_MAX_ITER)?;
    let eig = schur.complex_eigenvalues();
    Some(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest eigenvalue modulus of `a`, with `pass` iff it is below `1 - margin`.
pub fn spectral_radius(a: &DMatrix<f64>, margin: f64) -> Result<StationarityCertificate> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let (radius, method) = match schur_radius(a) {
        Some(r) => (r, RadiusMethod::Schur),
        None => {
            warn!("Schur iteration did not converge; falling back to the Gelfand estimate");
            (gelfand_estimate(a, GELFAND_POWER_LOG2), RadiusMethod::Gelfand)
        }
    };
    Ok(StationarityCertificate {
        spectral_radius: radius,
        pass: radius < 1.0 - margin,
        tolerance_used: margin,
        method,
    })
}
