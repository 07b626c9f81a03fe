//! Positive-definite covariance handling and conditional/marginal Gaussian
//! computations.
//!
//! The covariance is never stored directly: it is parameterized by its
//! Cholesky factor `L` with `log_diag` holding the log of the diagonal, so
//! that `Sigma = L * L^T` is positive definite for any parameter values.
//! All solves against gathered `Sigma_OO` blocks go through a Cholesky
//! factorization of the block, with one deterministic jitter retry on
//! failure.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{QcompError, Result};
use crate::schema::MaskPartition;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Relative diagonal jitter added on a failed factorization before the
/// single retry.
pub const JITTER_REL: f64 = 1e-8;

/// Unconstrained parameterization of a p x p covariance via its Cholesky
/// factor.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovarianceFactor {
    /// log of L's diagonal entries, length p.
    pub log_diag: Vec<f64>,
    /// L's strictly-lower entries, row-major, length p(p-1)/2.
    pub strict_lower: Vec<f64>,
}

impl CovarianceFactor {
    pub fn identity(p: usize) -> Self {
        CovarianceFactor {
            log_diag: vec![0.0; p],
            strict_lower: vec![0.0; p * (p - 1) / 2],
        }
    }

    pub fn p(&self) -> usize {
        self.log_diag.len()
    }

    pub fn strict_lower_len(p: usize) -> usize {
        p * (p - 1) / 2
    }

    /// The lower-triangular factor L.
    pub fn lower(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut l = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j in 0..i {
                l[(i, j)] = self.strict_lower[k];
                k += 1;
            }
            l[(i, i)] = self.log_diag[i].exp();
        }
        l
    }

    /// Build a factor from a lower-triangular matrix with positive diagonal.
    pub fn from_lower(l: &DMatrix<f64>) -> Result<Self> {
        let p = l.nrows();
        let mut log_diag = Vec::with_capacity(p);
        let mut strict_lower = Vec::with_capacity(Self::strict_lower_len(p));
        for i in 0..p {
            for j in 0..i {
                strict_lower.push(l[(i, j)]);
            }
            if l[(i, i)] <= 0.0 {
                return Err(QcompError::InvalidInput(
                    "Cholesky factor needs a strictly positive diagonal".into(),
                ));
            }
            log_diag.push(l[(i, i)].ln());
        }
        Ok(CovarianceFactor {
            log_diag,
            strict_lower,
        })
    }

    /// Factor of a full covariance matrix (must be positive definite).
    pub fn from_covariance(sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| QcompError::Numerical("covariance is not positive definite".into()))?;
        Self::from_lower(&chol.l())
    }

    /// Materialize Sigma = L * L^T, mirrored to be exactly symmetric.
    pub fn materialize(&self) -> DMatrix<f64> {
        let l = self.lower();
        let p = self.p();
        let mut sigma = &l * l.transpose();
        for i in 0..p {
            for j in 0..i {
                sigma[(j, i)] = sigma[(i, j)];
            }
        }
        sigma
    }
}

/// Mean and covariance blocks gathered by a missing/observed partition.
#[derive(Debug, Clone)]
pub struct PartitionedGaussian {
    pub mu_o: DVector<f64>,
    pub mu_m: DVector<f64>,
    pub sigma_oo: DMatrix<f64>,
    pub sigma_mo: DMatrix<f64>,
    pub sigma_mm: DMatrix<f64>,
}

/// Gather the mean and covariance blocks selected by a partition.
pub fn extract_blocks(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    part: &MaskPartition,
) -> PartitionedGaussian {
    let obs = part.observed_idx();
    let mis = part.missing_idx();
    let mu_o = DVector::from_iterator(obs.len(), obs.iter().map(|&j| mu[j]));
    let mu_m = DVector::from_iterator(mis.len(), mis.iter().map(|&j| mu[j]));
    let gather = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| sigma[(rows[a], cols[b])])
    };
    PartitionedGaussian {
        mu_o,
        mu_m,
        sigma_oo: gather(obs, obs),
        sigma_mo: gather(mis, obs),
        sigma_mm: gather(mis, mis),
    }
}

/// Cholesky-factorize a symmetric matrix, retrying once with a small
/// diagonal jitter. Returns the factorization and whether jitter was used.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(chol) = mat.clone().cholesky() {
        return Ok((chol, false));
    }
    let n = mat.nrows();
    let mean_diag = (0..n).map(|i| mat[(i, i)]).sum::<f64>() / n as f64;
    let mut jittered = mat.clone();
    for i in 0..n {
        jittered[(i, i)] += JITTER_REL * mean_diag;
    }
    match jittered.cholesky() {
        Some(chol) => Ok((chol, true)),
        None => Err(QcompError::Numerical(
            "observed-block covariance is not positive definite (jitter retry failed)".into(),
        )),
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Log density of the observed sub-vector under its marginal Gaussian.
pub fn marginal_loglik(pg: &PartitionedGaussian, y_o: &DVector<f64>) -> Result<f64> {
    let p_o = y_o.len();
    assert!(p_o >= 1, "marginal_loglik requires at least one observation");
    let (chol, _) = cholesky_with_jitter(&pg.sigma_oo)?;
    let r = y_o - &pg.mu_o;
    let alpha = chol.solve(&r);
    let quad = r.dot(&alpha);
    Ok(-0.5 * (quad + log_det(&chol) + p_o as f64 * LN_2PI))
}

/// Conditional mean and covariance of the missing block given observations.
///
/// With no observations this is the identity on the prior.
pub fn conditional(
    pg: &PartitionedGaussian,
    y_o: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if y_o.is_empty() {
        return Ok((pg.mu_m.clone(), pg.sigma_mm.clone()));
    }
    let (chol, _) = cholesky_with_jitter(&pg.sigma_oo)?;
    let r = y_o - &pg.mu_o;
    let mu_tilde = &pg.mu_m + &pg.sigma_mo * chol.solve(&r);
    // Sigma_MO * Sigma_OO^{-1} * Sigma_MO^T
    let solved = chol.solve(&pg.sigma_mo.transpose());
    let mut reduction = &pg.sigma_mo * solved;
    // keep the result exactly symmetric
    for i in 0..reduction.nrows() {
        for j in 0..i {
            let avg = 0.5 * (reduction[(i, j)] + reduction[(j, i)]);
            reduction[(i, j)] = avg;
            reduction[(j, i)] = avg;
        }
    }
    let sigma_tilde = &pg.sigma_mm - reduction;
    Ok((mu_tilde, sigma_tilde))
}

/// Diagonal of Sigma_MO * Sigma_OO^{-1} * Sigma_MO^T, i.e. the per-assay
/// variance removed by conditioning. Returns whether jitter was needed.
pub fn certainty_gain(pg: &PartitionedGaussian) -> Result<(DVector<f64>, bool)> {
    let p_m = pg.sigma_mm.nrows();
    if pg.sigma_oo.nrows() == 0 {
        return Ok((DVector::zeros(p_m), false));
    }
    let (chol, jittered) = cholesky_with_jitter(&pg.sigma_oo)?;
    let solved = chol.solve(&pg.sigma_mo.transpose());
    let p_o = pg.sigma_oo.nrows();
    let mut gain = DVector::zeros(p_m);
    for j in 0..p_m {
        for k in 0..p_o {
            gain[j] += pg.sigma_mo[(j, k)] * solved[(k, j)];
        }
    }
    Ok((gain, jittered))
}
