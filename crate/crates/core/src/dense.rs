//! Dense reference oracles: energy norms of operators via the symmetric
//! similarity transform `A^{1/2} B A^{-1/2}`, and the exact error-propagation
//! matrices of two-grid and V-cycle passes. Everything here runs in carrier
//! precision and is capped at moderate sizes by the callers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::probgen::Interp;
use crate::smoothers::Smoother;
use crate::sparse::SparseSpd;

/// Largest dimension the dense oracles accept.
pub const DENSE_CAP: usize = 1023;

/// Factored `A^{1/2}` / `A^{-1/2}` for one SPD matrix.
pub struct EnergyOracle {
    a_half: DMatrix<f64>,
    a_inv_half: DMatrix<f64>,
}

impl EnergyOracle {
    pub fn new(a: DMatrix<f64>) -> Result<EnergyOracle> {
        let n = a.nrows();
        if n > DENSE_CAP {
            return Err(Error::invalid(format!(
                "dimension {n} exceeds the dense oracle cap {DENSE_CAP}; \
                 use the power-iteration fallback"
            )));
        }
        let eig = a.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::NotSpd("dense oracle eigenvalue <= 0".into()));
        }
        let q = &eig.eigenvectors;
        let half = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()));
        let inv_half = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Ok(EnergyOracle {
            a_half: q * half * q.transpose(),
            a_inv_half: q * inv_half * q.transpose(),
        })
    }

    /// `|B|_A` as the spectral norm of `A^{1/2} B A^{-1/2}`.
    pub fn operator_norm(&self, b: &DMatrix<f64>) -> f64 {
        let s = &self.a_half * b * &self.a_inv_half;
        s.svd(false, false).singular_values[0]
    }

    /// The norm together with the direction attaining it (right singular
    /// vector mapped back through `A^{-1/2}`).
    pub fn operator_norm_with_vector(&self, b: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let s = &self.a_half * b * &self.a_inv_half;
        let svd = s.svd(false, true);
        let sigma = svd.singular_values[0];
        let v_t = svd.v_t.expect("svd v_t requested");
        let worst = &self.a_inv_half * v_t.row(0).transpose();
        (sigma, worst.iter().copied().collect())
    }

    pub fn vector_norm(&self, v: &[f64]) -> f64 {
        (&self.a_half * DVector::from_column_slice(v)).norm()
    }
}

/// `G = I - M A` in dense form.
pub fn error_propagation(a: &SparseSpd, smoother: &Smoother) -> DMatrix<f64> {
    let ad = a.to_dense();
    let n = ad.nrows();
    DMatrix::identity(n, n) - smoother.dense(&ad) * ad
}

/// Energy-orthogonal projection `P A_c^{-1} P^t A` onto the range of `P`.
pub fn coarse_projection(a: &SparseSpd, interp: &Interp) -> Result<DMatrix<f64>> {
    let ad = a.to_dense();
    let p = interp.p().to_dense();
    let ac = p.transpose() * &ad * &p;
    let ac_chol = nalgebra::Cholesky::new(ac)
        .ok_or_else(|| Error::NotSpd("coarse Galerkin product".into()))?;
    let mut rhs = p.transpose() * &ad;
    for mut col in rhs.column_iter_mut() {
        let solved = ac_chol.solve(&col.clone_owned());
        col.copy_from(&solved);
    }
    Ok(p * rhs)
}

/// Exact per-level V-cycle error propagation matrices
/// `V_1 = G_1`, `V_j = (P_j V_{j-1} A_{j-1}^{-1} P_j^t A_j + T_j) G_j`.
/// With `exact_coarsest` the coarsest solve is treated as exact (`V_1 = 0`),
/// which reduces the two-level recursion to the plain two-grid operator.
pub fn v_cycle_operators(
    hier: &Hierarchy,
    up_to_level: usize,
    exact_coarsest: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let levels = hier.levels();
    if up_to_level == 0 || up_to_level > levels.len() {
        return Err(Error::invalid(format!("invalid level {up_to_level}")));
    }
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(up_to_level);
    for (idx, level) in levels.iter().take(up_to_level).enumerate() {
        let n = level.a.n();
        if n > DENSE_CAP {
            return Err(Error::invalid(format!(
                "level dimension {n} exceeds the dense oracle cap {DENSE_CAP}; \
                 use the power-iteration fallback"
            )));
        }
        let g = error_propagation(&level.a, &level.smoother);
        if idx == 0 {
            out.push(if exact_coarsest {
                DMatrix::zeros(n, n)
            } else {
                g
            });
            continue;
        }
        let interp = level
            .interp
            .as_ref()
            .ok_or_else(|| Error::invalid("missing interpolation"))?;
        let p = interp.p().to_dense();
        let a_fine = level.a.to_dense();
        let a_coarse = levels[idx - 1].a.to_dense();
        let chol = nalgebra::Cholesky::new(a_coarse)
            .ok_or_else(|| Error::NotSpd("coarse matrix in dense oracle".into()))?;
        // X = A_{j-1}^{-1} P^t A_j
        let mut x = p.transpose() * &a_fine;
        for mut col in x.column_iter_mut() {
            let solved = chol.solve(&col.clone_owned());
            col.copy_from(&solved);
        }
        let proj = &p * &x;
        let t = DMatrix::identity(n, n) - &proj;
        let v_prev = &out[idx - 1];
        let v = (&p * v_prev * &x + t) * g;
        out.push(v);
    }
    Ok(out)
}

/// Two-grid error propagation `(I - P B_c A_c^{-1} P^t A) G` for the level
/// pair `(fine_level - 1, fine_level)` of `hier`, with an optional dense
/// `B_c`.
pub fn tg_operator(
    hier: &Hierarchy,
    fine_level: usize,
    b_c: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let levels = hier.levels();
    if fine_level < 2 || fine_level > levels.len() {
        return Err(Error::invalid(format!(
            "two-grid operator needs a fine level in 2..={}, got {fine_level}",
            levels.len()
        )));
    }
    let fine = &levels[fine_level - 1];
    let coarse = &levels[fine_level - 2];
    let n = fine.a.n();
    if n > DENSE_CAP {
        return Err(Error::invalid(format!(
            "dimension {n} exceeds the dense oracle cap {DENSE_CAP}"
        )));
    }
    let interp = fine.interp.as_ref().unwrap();
    let p = interp.p().to_dense();
    let a_fine = fine.a.to_dense();
    let chol = nalgebra::Cholesky::new(coarse.a.to_dense())
        .ok_or_else(|| Error::NotSpd("coarse matrix in dense oracle".into()))?;
    let mut x = p.transpose() * &a_fine;
    for mut col in x.column_iter_mut() {
        let solved = chol.solve(&col.clone_owned());
        col.copy_from(&solved);
    }
    if let Some(bc) = b_c {
        x = bc * x;
    }
    let g = error_propagation(&fine.a, &fine.smoother);
    Ok((DMatrix::identity(n, n) - p * x) * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probgen;

    #[test]
    fn operator_norm_of_identity_scaling() {
        let prob = probgen::poisson1d(15, false).unwrap();
        let oracle = EnergyOracle::new(prob.a.to_dense()).unwrap();
        let half = DMatrix::identity(15, 15) * 0.5;
        assert!((oracle.operator_norm(&half) - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn worst_vector_attains_norm() {
        let prob = probgen::poisson1d(31, false).unwrap();
        let sm = crate::smoothers::make_richardson(&prob.a, 1.0).unwrap();
        let oracle = EnergyOracle::new(prob.a.to_dense()).unwrap();
        let g = error_propagation(&prob.a, &sm);
        let (norm, v) = oracle.operator_norm_with_vector(&g);
        let gv = &g * DVector::from_column_slice(&v);
        let attained = oracle.vector_norm(gv.as_slice()) / oracle.vector_norm(&v);
        assert!((attained - norm).abs() <= 1e-9 * norm);
    }

    #[test]
    fn zero_propagation_has_zero_norm() {
        let prob = probgen::poisson1d(7, false).unwrap();
        let oracle = EnergyOracle::new(prob.a.to_dense()).unwrap();
        let z = DMatrix::zeros(7, 7);
        assert_eq!(oracle.operator_norm(&z), 0.0);
    }

    #[test]
    fn projection_is_energy_orthogonal() {
        use rand::{Rng, SeedableRng};
        let prob = probgen::poisson1d(63, false).unwrap();
        let interp = probgen::linear_interpolation(63).unwrap();
        let proj = coarse_projection(&prob.a, &interp).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..63).map(|_| rng.random::<f64>() - 0.5).collect();
            let px = &proj * DVector::from_column_slice(&x);
            let qx = DVector::from_column_slice(&x) - &px;
            let apx = prob.a.matvec_carrier(px.as_slice());
            let inner: f64 = apx.iter().zip(qx.iter()).map(|(a, b)| a * b).sum();
            let xa = prob.a.energy_norm(&x).unwrap();
            assert!(inner.abs() <= 1e-8 * xa * xa);
        }
    }
}
