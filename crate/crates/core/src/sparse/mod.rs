//! Sparse SPD storage and the precision-aware kernels every solver is built
//! from: matvec, residual, mixed-precision residual, the energy norm, and
//! cached spectral statistics.

mod chol;
mod csr;
mod eigs;
pub mod io;

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fpemu::{self, PrecisionSpec};

pub use chol::Envelope;
pub use csr::Csr;

/// Largest eigenvalue of a symmetric matrix (no SPD requirement).
pub(crate) fn sym_largest_eig(mat: &Csr) -> Result<f64> {
    eigs::largest_eig(mat)
}

/// `(lambda_min, lambda_max)` of an SPD matrix in CSR form.
pub(crate) fn spd_extreme_eigs(mat: &Csr) -> Result<(f64, f64)> {
    let lmax = eigs::largest_eig(mat)?;
    let ch = Envelope::factor(mat)?;
    let lmin = eigs::smallest_eig_spd(mat, &ch)?;
    Ok((lmin, lmax))
}

/// Spectral statistics of an SPD matrix, treated as exact parameters of the
/// rounding analysis. `psi` is the spectral norm of the entrywise absolute
/// value and `kappa_under` the corresponding skewed condition number.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectralStats {
    pub norm_a: f64,
    pub norm_ainv: f64,
    pub kappa: f64,
    pub psi: f64,
    pub kappa_under: f64,
}

/// Symmetric positive definite matrix in CSR form with the cached row-sparsity
/// constant `m_A`, a cached Cholesky factorization and cached spectral stats.
///
/// Immutable after construction; kernels are pure, so values can be shared
/// across threads freely.
#[derive(Debug)]
pub struct SparseSpd {
    mat: Csr,
    m_a: usize,
    chol: OnceLock<Arc<Envelope>>,
    stats: OnceLock<SpectralStats>,
}

impl Clone for SparseSpd {
    fn clone(&self) -> Self {
        let chol = OnceLock::new();
        if let Some(c) = self.chol.get() {
            let _ = chol.set(Arc::clone(c));
        }
        let stats = OnceLock::new();
        if let Some(s) = self.stats.get() {
            let _ = stats.set(*s);
        }
        SparseSpd {
            mat: self.mat.clone(),
            m_a: self.m_a,
            chol,
            stats,
        }
    }
}

impl SparseSpd {
    /// Wraps a CSR matrix after checking exact numerical symmetry and probing
    /// positive definiteness with a carrier Cholesky (probabilistic, not a
    /// proof).
    pub fn new(mat: Csr) -> Result<SparseSpd> {
        if mat.rows() != mat.cols() {
            return Err(Error::dim("SPD matrix must be square"));
        }
        for (i, j, v) in mat.triplets() {
            if mat.get(j, i) != v {
                return Err(Error::NotSymmetric { i, j });
            }
        }
        let m_a = mat.max_row_nnz();
        let spd = SparseSpd {
            mat,
            m_a,
            chol: OnceLock::new(),
            stats: OnceLock::new(),
        };
        spd.cholesky()?;
        Ok(spd)
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<SparseSpd> {
        SparseSpd::new(Csr::from_triplets(n, n, triplets)?)
    }

    pub fn n(&self) -> usize {
        self.mat.rows()
    }

    /// Maximum number of nonzeros in any row.
    pub fn m_a(&self) -> usize {
        self.m_a
    }

    pub fn csr(&self) -> &Csr {
        &self.mat
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.mat.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        self.mat.to_dense()
    }

    /// Cached carrier-precision factorization, also the SPD probe.
    pub fn cholesky(&self) -> Result<Arc<Envelope>> {
        if let Some(c) = self.chol.get() {
            return Ok(Arc::clone(c));
        }
        let ch = Arc::new(Envelope::factor(&self.mat)?);
        let _ = self.chol.set(Arc::clone(&ch));
        Ok(ch)
    }

    /// Carrier-precision solve `A x = b`.
    pub fn solve_carrier(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.cholesky()?.solve(b))
    }

    /// `A x` with each row accumulated left-to-right in `prec`.
    pub fn matvec(&self, x: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
        self.mat.matvec_prec(x, prec)
    }

    pub fn matvec_carrier(&self, x: &[f64]) -> Vec<f64> {
        self.mat.matvec_carrier(x)
    }

    /// Componentwise scale `|A||x|` used by the rounding-bound oracles.
    pub fn abs_matvec_carrier(&self, x: &[f64]) -> Vec<f64> {
        self.mat.abs_matvec_carrier(x)
    }

    /// Residual `A x - b` with every operation in `prec`.
    pub fn residual(&self, x: &[f64], b: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
        if x.len() != self.n() || b.len() != self.n() {
            return Err(Error::dim(format!(
                "residual: x {} b {} vs n {}",
                x.len(),
                b.len(),
                self.n()
            )));
        }
        let mut out = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let (cols, vals) = self.mat.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc = prec.add(acc, prec.mul(v, x[j])?)?;
            }
            out.push(prec.sub(acc, b[i])?);
        }
        Ok(out)
    }

    /// Residual computed entirely in `high` precision, then rounded entrywise
    /// to `work` precision.
    pub fn residual_mixed(
        &self,
        x: &[f64],
        b: &[f64],
        high: PrecisionSpec,
        work: PrecisionSpec,
    ) -> Result<Vec<f64>> {
        if high.bits() < work.bits() {
            return Err(Error::PrecisionInversion {
                hi_role: "high",
                hi: high.bits(),
                lo_role: "work",
                lo: work.bits(),
            });
        }
        let r = self.residual(x, b, high)?;
        fpemu::round_vec(&r, work)
    }

    /// Energy norm `sqrt(x^T A x)` in carrier precision. Instrumentation only;
    /// solver arithmetic never calls this.
    pub fn energy_norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::dim(format!(
                "energy_norm: {} vs n {}",
                x.len(),
                self.n()
            )));
        }
        let ax = self.matvec_carrier(x);
        let q: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
        if q >= 0.0 {
            return Ok(q.sqrt());
        }
        let scale: f64 = x
            .iter()
            .zip(&ax)
            .map(|(a, b)| (a * b).abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        if -q <= 1e-12 * scale {
            Ok(0.0)
        } else {
            Err(Error::NotSpd(format!("x^T A x = {q:e} < 0")))
        }
    }

    /// Carrier energy inner product `<A x, y>`.
    pub fn energy_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let ax = self.matvec_carrier(x);
        ax.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Spectral statistics, estimated once and cached. The extreme eigenvalues
    /// are found by (shifted) inverse iteration; `psi` runs the same estimator
    /// on the entrywise absolute value.
    pub fn estimate_stats(&self) -> Result<SpectralStats> {
        if let Some(s) = self.stats.get() {
            return Ok(*s);
        }
        let norm_a = eigs::largest_eig(&self.mat)?;
        let psi = eigs::largest_eig(&self.mat.abs())?;
        let ch = self.cholesky()?;
        let lambda_min = eigs::smallest_eig_spd(&self.mat, &ch)?;
        if lambda_min <= 0.0 {
            return Err(Error::NotSpd(format!(
                "estimated smallest eigenvalue {lambda_min:e}"
            )));
        }
        let norm_ainv = 1.0 / lambda_min;
        let stats = SpectralStats {
            norm_a,
            norm_ainv,
            kappa: norm_a * norm_ainv,
            psi,
            kappa_under: psi * norm_ainv,
        };
        let _ = self.stats.set(stats);
        Ok(stats)
    }
}
