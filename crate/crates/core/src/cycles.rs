//! Inner solvers: the two-grid correction scheme and the recursive V(1,0)
//! cycle. Every stage runs in the visiting level's low precision except the
//! coarse solve of the two-grid scheme, which is a carrier-precision Cholesky
//! standing in for the exact step.
//!
//! Residuals restricted to the next-coarser level are computed in the fine
//! level's roundoff and stored rounded to the coarse one; corrections are
//! interpolated upward in the coarse level's roundoff. Both steps appear in
//! the trace.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fpemu::{self, ensure_finite, PrecisionSpec};
use crate::hierarchy::Hierarchy;
use crate::probgen::Interp;

/// Carrier-precision coarse operator applied after the exact solve, realizing
/// approximate coarse solves.
pub trait CoarseOperator {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Coarse-grid treatment of the two-grid scheme.
pub enum CoarseMode<'a> {
    /// Plain exact solve.
    Exact,
    /// Exact solve followed by a carrier-precision operator `B_c`.
    Operator(&'a dyn CoarseOperator),
}

/// Everything measured while visiting one level; norms are carrier-precision
/// Euclidean norms of the stage outputs.
#[derive(Debug, Clone, Serialize)]
pub struct LevelVisit {
    pub level: usize,
    pub low_bits: u32,
    pub rounded_rhs_norm: f64,
    pub post_relax_norm: f64,
    pub residual_norm: Option<f64>,
    pub correction_norm: Option<f64>,
}

/// One record per visited level per cycle, in completion order (coarsest
/// finishes first).
#[derive(Debug, Clone, Default, Serialize)]
pub struct CycleTrace {
    pub visits: Vec<LevelVisit>,
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Restriction `P^t v` with the dots in `dot_prec` and the stored result
/// rounded to `store_prec`.
fn restrict_prec(
    interp: &Interp,
    v: &[f64],
    dot_prec: PrecisionSpec,
    store_prec: PrecisionSpec,
) -> Result<Vec<f64>> {
    let raw = interp.pt().matvec_prec(v, dot_prec)?;
    fpemu::round_vec(&raw, store_prec)
}

/// Interpolation `P d` computed in `prec` (the sending level's roundoff).
fn interp_prec(interp: &Interp, d: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
    interp.p().matvec_prec(d, prec)
}

/// One two-grid correction cycle for `A y = r` from the zero initial guess.
///
/// Steps: round the RHS to low precision, relax once (`y = M r`), form the
/// cycle residual `A y - r`, restrict it, solve the coarse equation exactly
/// (optionally followed by `B_c`), interpolate and update.
pub fn tg_cycle(
    hier: &Hierarchy,
    r: &[f64],
    mode: CoarseMode<'_>,
) -> Result<(Vec<f64>, CycleTrace)> {
    if hier.num_levels() != 2 {
        return Err(Error::invalid(format!(
            "two-grid cycle needs exactly 2 levels, hierarchy has {}",
            hier.num_levels()
        )));
    }
    let fine = hier.level(2);
    let coarse = hier.level(1);
    let lp = fine.precisions.low;
    let lp_c = coarse.precisions.low;
    let interp = fine.interp.as_ref().expect("fine level has interpolation");

    let r0 = fpemu::round_vec(r, lp)?;
    let y = fine.smoother.apply(&fine.a, &r0, lp)?;
    ensure_finite(&y, "two-grid relaxation")?;
    let r_tg = fine.a.residual(&y, &r0, lp)?;
    ensure_finite(&r_tg, "two-grid residual")?;
    let b_c = restrict_prec(interp, &r_tg, lp, lp_c)?;
    let d_exact = coarse.a.solve_carrier(&b_c)?;
    let d_c = match mode {
        CoarseMode::Exact => d_exact,
        CoarseMode::Operator(op) => op.apply(&d_exact),
    };
    ensure_finite(&d_c, "two-grid coarse solve")?;
    let d = interp_prec(interp, &d_c, lp_c)?;
    let y_new = fpemu::sub_vec(&y, &d, lp)?;
    ensure_finite(&y_new, "two-grid update")?;

    let trace = CycleTrace {
        visits: vec![
            LevelVisit {
                level: 1,
                low_bits: lp_c.bits(),
                rounded_rhs_norm: euclid(&b_c),
                post_relax_norm: euclid(&d_c),
                residual_norm: None,
                correction_norm: None,
            },
            LevelVisit {
                level: 2,
                low_bits: lp.bits(),
                rounded_rhs_norm: euclid(&r0),
                post_relax_norm: euclid(&y),
                residual_norm: Some(euclid(&r_tg)),
                correction_norm: Some(euclid(&d)),
            },
        ],
    };
    Ok((y_new, trace))
}

/// One V(1,0) cycle for `A_j y = r` starting at `level` (1-based), recursing
/// to level 1 where only the relaxation sweep runs.
pub fn v_cycle(hier: &Hierarchy, r: &[f64], level: usize) -> Result<(Vec<f64>, CycleTrace)> {
    if level == 0 || level > hier.num_levels() {
        return Err(Error::invalid(format!(
            "invalid level {level} for a {}-level hierarchy",
            hier.num_levels()
        )));
    }
    let mut trace = CycleTrace::default();
    let y = v_rec(hier, r, level, &mut trace)?;
    Ok((y, trace))
}

fn v_rec(hier: &Hierarchy, r: &[f64], j: usize, trace: &mut CycleTrace) -> Result<Vec<f64>> {
    let lvl = hier.level(j);
    let lp = lvl.precisions.low;
    let r0 = fpemu::round_vec(r, lp)?;
    let mut y = lvl.smoother.apply(&lvl.a, &r0, lp)?;
    ensure_finite(&y, "v-cycle relaxation")?;
    let mut visit = LevelVisit {
        level: j,
        low_bits: lp.bits(),
        rounded_rhs_norm: euclid(&r0),
        post_relax_norm: euclid(&y),
        residual_norm: None,
        correction_norm: None,
    };
    if j > 1 {
        let interp = lvl.interp.as_ref().expect("non-coarsest level has interpolation");
        let r_v = lvl.a.residual(&y, &r0, lp)?;
        ensure_finite(&r_v, "v-cycle residual")?;
        let lp_c = hier.level(j - 1).precisions.low;
        let r_c = restrict_prec(interp, &r_v, lp, lp_c)?;
        let d_c = v_rec(hier, &r_c, j - 1, trace)?;
        let d = interp_prec(interp, &d_c, lp_c)?;
        y = fpemu::sub_vec(&y, &d, lp)?;
        ensure_finite(&y, "v-cycle update")?;
        visit.residual_norm = Some(euclid(&r_v));
        visit.correction_norm = Some(euclid(&d));
        visit.post_relax_norm = euclid(&y);
    }
    trace.visits.push(visit);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{self, EnergyOracle};
    use crate::fpemu::PrecisionSpec;
    use crate::hierarchy::{build_hierarchy, PrecisionPolicy, PrecisionTriple};
    use crate::probgen::poisson1d;
    use crate::smoothers::SmootherConfig;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple(bits: u32) -> PrecisionTriple {
        PrecisionTriple::new(
            PrecisionSpec::carrier(),
            PrecisionSpec::new(bits.max(24)).unwrap(),
            PrecisionSpec::new(bits).unwrap(),
        )
        .unwrap()
    }

    fn hierarchy(n: usize, levels: usize, low_bits: u32) -> Hierarchy {
        let prob = poisson1d(n, false).unwrap();
        build_hierarchy(
            &prob,
            levels,
            &PrecisionPolicy::Uniform,
            triple(low_bits),
            &SmootherConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_rhs_maps_to_zero() {
        let h2 = hierarchy(31, 2, 11);
        let (y, trace) = tg_cycle(&h2, &vec![0.0; 31], CoarseMode::Exact).unwrap();
        assert_eq!(y, vec![0.0; 31]);
        assert_eq!(trace.visits.len(), 2);

        let h4 = hierarchy(31, 4, 11);
        let (y, trace) = v_cycle(&h4, &vec![0.0; 31], 4).unwrap();
        assert_eq!(y, vec![0.0; 31]);
        assert_eq!(trace.visits.len(), 4);
    }

    #[test]
    fn single_level_v_cycle_is_one_relaxation() {
        let h = hierarchy(15, 1, 11);
        let lvl = h.level(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Vec<f64> = (0..15).map(|_| rng.random::<f64>() - 0.5).collect();
        let (y, trace) = v_cycle(&h, &r, 1).unwrap();
        let r0 = fpemu::round_vec(&r, lvl.precisions.low).unwrap();
        let expect = lvl.smoother.apply(&lvl.a, &r0, lvl.precisions.low).unwrap();
        assert_eq!(y, expect);
        assert_eq!(trace.visits.len(), 1);
    }

    #[test]
    fn tg_cycle_worst_case_matches_dense_oracle_at_carrier() {
        let h = hierarchy(31, 2, 53);
        let fine = h.level(2);
        let oracle = EnergyOracle::new(fine.a.to_dense()).unwrap();
        let tg = dense::tg_operator(&h, 2, None).unwrap();
        let (norm, worst) = oracle.operator_norm_with_vector(&tg);
        // Drive the cycle with the residual of the worst-case error direction.
        let r = fine.a.matvec_carrier(&worst);
        let (y, _) = tg_cycle(&h, &r, CoarseMode::Exact).unwrap();
        let err: Vec<f64> = y.iter().zip(&worst).map(|(a, b)| a - b).collect();
        let measured = fine.a.energy_norm(&err).unwrap() / fine.a.energy_norm(&worst).unwrap();
        assert!(
            (measured - norm).abs() <= 1e-8 * norm,
            "measured {measured} oracle {norm}"
        );
    }

    #[test]
    fn tg_cycle_with_scaled_coarse_operator() {
        struct Damp(f64);
        impl CoarseOperator for Damp {
            fn apply(&self, x: &[f64]) -> Vec<f64> {
                x.iter().map(|v| self.0 * v).collect()
            }
        }
        let h = hierarchy(31, 2, 53);
        let fine = h.level(2);
        let oracle = EnergyOracle::new(fine.a.to_dense()).unwrap();
        let bc = nalgebra::DMatrix::identity(15, 15) * 0.9;
        let tg = dense::tg_operator(&h, 2, Some(&bc)).unwrap();
        let bound = oracle.operator_norm(&tg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let e: Vec<f64> = (0..31).map(|_| rng.random::<f64>() - 0.5).collect();
            let r = fine.a.matvec_carrier(&e);
            let (y, _) = tg_cycle(&h, &r, CoarseMode::Operator(&Damp(0.9))).unwrap();
            let err: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
            let factor = fine.a.energy_norm(&err).unwrap() / fine.a.energy_norm(&e).unwrap();
            assert!(factor <= bound * (1.0 + 1e-8), "factor {factor} bound {bound}");
        }
    }

    #[test]
    fn two_level_v_cycle_matches_dense_recursion_at_carrier() {
        let h = hierarchy(31, 2, 53);
        let fine = h.level(2);
        let ops = dense::v_cycle_operators(&h, 2, false).unwrap();
        let v2 = &ops[1];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<f64> = (0..31).map(|_| rng.random::<f64>() - 0.5).collect();
        let r = fine.a.matvec_carrier(&e);
        let (y, _) = v_cycle(&h, &r, 2).unwrap();
        // y - e = -V e, so y should equal (I - V) e.
        let ve = v2 * DVector::from_column_slice(&e);
        let expect: Vec<f64> = e.iter().zip(ve.iter()).map(|(ei, vi)| ei - vi).collect();
        let scale = fine.a.energy_norm(&e).unwrap();
        let diff: Vec<f64> = y.iter().zip(&expect).map(|(a, b)| a - b).collect();
        assert!(fine.a.energy_norm(&diff).unwrap() <= 1e-8 * scale);
    }

    #[test]
    fn carrier_contraction_below_dense_norm() {
        let h = hierarchy(63, 3, 53);
        let fine = h.finest();
        let ops = dense::v_cycle_operators(&h, 3, false).unwrap();
        let oracle = EnergyOracle::new(fine.a.to_dense()).unwrap();
        let rho_star = ops
            .iter()
            .enumerate()
            .map(|(i, v)| {
                EnergyOracle::new(h.level(i + 1).a.to_dense())
                    .unwrap()
                    .operator_norm(v)
            })
            .fold(0.0f64, f64::max);
        let _ = oracle;
        // Power-style iteration through repeated cycles stays below the norm.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut e: Vec<f64> = (0..63).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut factor = 0.0;
        for _ in 0..50 {
            let before = fine.a.energy_norm(&e).unwrap();
            let r = fine.a.matvec_carrier(&e);
            let (y, _) = v_cycle(&h, &r, 3).unwrap();
            let err: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
            let after = fine.a.energy_norm(&err).unwrap();
            factor = after / before;
            let scale = 1.0 / after;
            e = err.iter().map(|v| v * scale).collect();
        }
        assert!(factor <= rho_star + 1e-6, "factor {factor} rho* {rho_star}");
    }

    #[test]
    fn lower_precision_contracts_no_better() {
        let worst = |bits: u32| {
            let h = hierarchy(63, 3, bits);
            let fine = h.finest();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let e: Vec<f64> = (0..63).map(|_| rng.random::<f64>() - 0.5).collect();
                let r = fine.a.matvec_carrier(&e);
                let (y, _) = v_cycle(&h, &r, 3).unwrap();
                let err: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
                let f = fine.a.energy_norm(&err).unwrap() / fine.a.energy_norm(&e).unwrap();
                worst = worst.max(f);
            }
            worst
        };
        let f11 = worst(11);
        let f24 = worst(24);
        let f53 = worst(53);
        assert!(f11 >= f24 - 1e-3, "f11 {f11} f24 {f24}");
        assert!(f24 >= f53 - 1e-3, "f24 {f24} f53 {f53}");
    }

    #[test]
    fn identical_inputs_are_bitwise_deterministic() {
        let h = hierarchy(63, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r: Vec<f64> = (0..63).map(|_| rng.random::<f64>() - 0.5).collect();
        let (y1, _) = v_cycle(&h, &r, 4).unwrap();
        let (y2, _) = v_cycle(&h, &r, 4).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn invalid_level_is_rejected() {
        let h = hierarchy(15, 2, 11);
        assert!(v_cycle(&h, &vec![0.0; 15], 3).is_err());
        assert!(v_cycle(&h, &vec![0.0; 15], 0).is_err());
        let h1 = hierarchy(15, 1, 11);
        assert!(tg_cycle(&h1, &vec![0.0; 15], CoarseMode::Exact).is_err());
    }
}
