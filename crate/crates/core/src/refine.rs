//! Outer solvers: three-precision iterative refinement and progressive-
//! precision full multigrid, plus the stagnation-floor detector.

use serde::Serialize;

use crate::cycles::{self, CoarseMode, CycleTrace};
use crate::error::{Error, Result};
use crate::fpemu::{self, ensure_finite};
use crate::hierarchy::{Hierarchy, PrecisionTriple};
use crate::sparse::SparseSpd;

/// The correction solver driven by iterative refinement. Implementations run
/// their own precision ladder internally.
pub trait InnerSolver {
    fn name(&self) -> &'static str;
    fn solve(&self, r: &[f64]) -> Result<(Vec<f64>, Option<CycleTrace>)>;
}

/// One V(1,0) cycle starting at `level` (defaults to the finest).
pub struct VCycleInner<'a> {
    pub hier: &'a Hierarchy,
    pub level: usize,
}

impl<'a> VCycleInner<'a> {
    pub fn finest(hier: &'a Hierarchy) -> Self {
        VCycleInner {
            hier,
            level: hier.num_levels(),
        }
    }
}

impl InnerSolver for VCycleInner<'_> {
    fn name(&self) -> &'static str {
        "v-cycle"
    }
    fn solve(&self, r: &[f64]) -> Result<(Vec<f64>, Option<CycleTrace>)> {
        let (y, trace) = cycles::v_cycle(self.hier, r, self.level)?;
        Ok((y, Some(trace)))
    }
}

/// One two-grid cycle with exact coarse solve.
pub struct TgInner<'a> {
    pub hier: &'a Hierarchy,
}

impl InnerSolver for TgInner<'_> {
    fn name(&self) -> &'static str {
        "two-grid"
    }
    fn solve(&self, r: &[f64]) -> Result<(Vec<f64>, Option<CycleTrace>)> {
        let (y, trace) = cycles::tg_cycle(self.hier, r, CoarseMode::Exact)?;
        Ok((y, Some(trace)))
    }
}

/// Carrier-precision direct solve; turns refinement into one Newton step.
pub struct ExactInner<'a> {
    pub a: &'a SparseSpd,
}

impl InnerSolver for ExactInner<'_> {
    fn name(&self) -> &'static str {
        "exact"
    }
    fn solve(&self, r: &[f64]) -> Result<(Vec<f64>, Option<CycleTrace>)> {
        Ok((self.a.solve_carrier(r)?, None))
    }
}

/// Options for one refinement run.
#[derive(Debug, Clone, Copy)]
pub struct IrOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_traces: bool,
}

/// Instrumented outcome of a refinement (or one FMG level). Energy errors are
/// relative to the carrier-precision reference solution.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub error_energy: Vec<f64>,
    pub residual_norms: Vec<f64>,
    /// Geometric-mean contraction over iterations with error above ten times
    /// the detected floor.
    pub measured_rho: f64,
    /// Median of the trailing error plateau; zero while still contracting.
    pub floor: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
}

impl SolveReport {
    fn from_history(
        error_energy: Vec<f64>,
        residual_norms: Vec<f64>,
        iterations: usize,
        converged: bool,
        tol: f64,
    ) -> SolveReport {
        let floor = if error_energy.len() >= 3 {
            detect_floor(&error_energy).unwrap_or(0.0)
        } else {
            0.0
        };
        let measured_rho = measured_contraction(&error_energy, floor);
        SolveReport {
            error_energy,
            residual_norms,
            measured_rho,
            floor,
            iterations,
            converged,
            tol,
        }
    }

    /// Error grew with no plateau: the outer iteration is not contracting.
    pub fn diverged(&self) -> bool {
        if self.converged || self.floor > 0.0 {
            return false;
        }
        match (self.error_energy.first(), self.error_energy.last()) {
            (Some(first), Some(last)) => *last > 1.5 * *first,
            _ => false,
        }
    }
}

fn measured_contraction(history: &[f64], floor: f64) -> f64 {
    let cutoff = 10.0 * floor;
    let active: Vec<f64> = history.iter().copied().take_while(|e| *e > cutoff).collect();
    if active.len() < 2 || active[0] == 0.0 {
        return 0.0;
    }
    let k = active.len() - 1;
    (active[k] / active[0]).powf(1.0 / k as f64)
}

/// Median of the trailing plateau of an error history: the tail where each
/// successive ratio exceeds 0.9. Returns 0 while the sequence is still
/// contracting at its end.
pub fn detect_floor(history: &[f64]) -> Result<f64> {
    if history.len() < 3 {
        return Err(Error::invalid(format!(
            "floor detection needs at least 3 iterations, got {}",
            history.len()
        )));
    }
    let mut start = history.len() - 1;
    while start >= 1 {
        let ratio = history[start] / history[start - 1];
        if ratio > 0.9 {
            start -= 1;
        } else {
            break;
        }
    }
    let plateau = &history[start..];
    if plateau.len() < 2 {
        return Ok(0.0);
    }
    let mut sorted = plateau.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

/// Iterative refinement: the residual is computed in high precision and
/// rounded to work precision, the inner solver supplies a correction, the
/// update runs in work precision, and the stored iterate stays a work-
/// precision vector throughout.
///
/// Returns the best iterate with `converged = false` when `max_iter` runs out.
pub fn ir_solve(
    a: &SparseSpd,
    b: &[f64],
    inner: &dyn InnerSolver,
    triple: PrecisionTriple,
    opts: IrOptions,
    x0: &[f64],
    reference: &[f64],
) -> Result<(Vec<f64>, SolveReport, Vec<CycleTrace>)> {
    if opts.tol <= 0.0 {
        return Err(Error::invalid(format!("tol must be > 0, got {}", opts.tol)));
    }
    triple.validate()?;
    let ref_norm = a.energy_norm(reference)?;
    let rel_err = |x: &[f64]| -> Result<f64> {
        let diff: Vec<f64> = x.iter().zip(reference).map(|(a, b)| a - b).collect();
        let e = a.energy_norm(&diff)?;
        Ok(if ref_norm > 0.0 { e / ref_norm } else { e })
    };

    let mut x = fpemu::round_vec(x0, triple.work)?;
    let mut errors = vec![rel_err(&x)?];
    let mut residuals = Vec::new();
    let mut traces = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let r = a.residual_mixed(&x, b, triple.high, triple.work)?;
        let rn = fpemu::norm(&r, triple.work)?;
        residuals.push(rn);
        if rn < opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        let (y, trace) = inner.solve(&r)?;
        if opts.record_traces {
            if let Some(t) = trace {
                traces.push(t);
            }
        }
        x = fpemu::sub_vec(&x, &y, triple.work)?;
        ensure_finite(&x, "refinement update")?;
        iterations += 1;
        errors.push(rel_err(&x)?);
    }

    let report = SolveReport::from_history(errors, residuals, iterations, converged, opts.tol);
    Ok((x, report, traces))
}

/// Full multigrid: solve the coarsest level with `n_cycles` refinement steps
/// from zero, then interpolate each result one level up in work precision and
/// run exactly `n_cycles` refinement steps there with one V-cycle per step.
///
/// Returns the finest iterate and one report per level (coarsest first).
pub fn fmg(
    hier: &Hierarchy,
    b_fine: &[f64],
    n_cycles: usize,
) -> Result<(Vec<f64>, Vec<SolveReport>)> {
    if n_cycles == 0 {
        return Err(Error::invalid("fmg needs at least one refinement cycle"));
    }
    let chain = hier.rhs_chain(b_fine)?;
    let mut reports = Vec::with_capacity(hier.num_levels());
    let mut x: Vec<f64> = Vec::new();
    for j in 1..=hier.num_levels() {
        let level = hier.level(j);
        let b_j = &chain[j - 1];
        let work = level.precisions.work;
        x = if j == 1 {
            vec![0.0; level.a.n()]
        } else {
            let interp = level.interp.as_ref().expect("interpolation present");
            interp.p().matvec_prec(&x, work)?
        };
        let reference = level.a.solve_carrier(b_j)?;
        let ref_norm = level.a.energy_norm(&reference)?;
        let mut errors = Vec::with_capacity(n_cycles + 1);
        let mut residuals = Vec::with_capacity(n_cycles);
        let rel = |x: &[f64]| -> Result<f64> {
            let diff: Vec<f64> = x.iter().zip(&reference).map(|(a, b)| a - b).collect();
            let e = level.a.energy_norm(&diff)?;
            Ok(if ref_norm > 0.0 { e / ref_norm } else { e })
        };
        errors.push(rel(&x)?);
        for _ in 0..n_cycles {
            let r = level
                .a
                .residual_mixed(&x, b_j, level.precisions.high, work)?;
            residuals.push(fpemu::norm(&r, work)?);
            let (y, _) = cycles::v_cycle(hier, &r, j)?;
            x = fpemu::sub_vec(&x, &y, work)?;
            ensure_finite(&x, "fmg update")?;
            errors.push(rel(&x)?);
        }
        reports.push(SolveReport::from_history(
            errors, residuals, n_cycles, true, 0.0,
        ));
    }
    Ok((x, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpemu::PrecisionSpec;
    use crate::hierarchy::{build_hierarchy, PrecisionPolicy};
    use crate::probgen::poisson1d;
    use crate::smoothers::SmootherConfig;

    fn triple(high: u32, work: u32, low: u32) -> PrecisionTriple {
        PrecisionTriple::new(
            PrecisionSpec::new(high).unwrap(),
            PrecisionSpec::new(work).unwrap(),
            PrecisionSpec::new(low).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let prob = poisson1d(15, false).unwrap();
        let inner = ExactInner { a: &prob.a };
        let b = vec![0.0; 15];
        let x0 = vec![0.0; 15];
        let (x, report, _) = ir_solve(
            &prob.a,
            &b,
            &inner,
            triple(53, 53, 53),
            IrOptions {
                tol: 1e-12,
                max_iter: 5,
                record_traces: false,
            },
            &x0,
            &x0,
        )
        .unwrap();
        assert_eq!(x, vec![0.0; 15]);
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn exact_inner_converges_in_one_iteration() {
        let prob = poisson1d(31, false).unwrap();
        let reference = prob.a.solve_carrier(&prob.b).unwrap();
        let inner = ExactInner { a: &prob.a };
        let (x, report, _) = ir_solve(
            &prob.a,
            &prob.b,
            &inner,
            triple(53, 53, 53),
            IrOptions {
                tol: 1e-9,
                max_iter: 3,
                record_traces: false,
            },
            &vec![0.0; 31],
            &reference,
        )
        .unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        let diff: Vec<f64> = x.iter().zip(&reference).map(|(a, b)| a - b).collect();
        let rel = prob.a.energy_norm(&diff).unwrap() / prob.a.energy_norm(&reference).unwrap();
        assert!(rel <= 1e-12, "relative error {rel}");
    }

    #[test]
    fn max_iter_returns_best_iterate_unconverged() {
        let prob = poisson1d(31, false).unwrap();
        let h = build_hierarchy(
            &prob,
            2,
            &PrecisionPolicy::Uniform,
            triple(53, 24, 11),
            &SmootherConfig::default(),
        )
        .unwrap();
        let inner = VCycleInner::finest(&h);
        let reference = prob.a.solve_carrier(&prob.b).unwrap();
        let (_, report, _) = ir_solve(
            &prob.a,
            &prob.b,
            &inner,
            triple(53, 24, 11),
            IrOptions {
                tol: 1e-300,
                max_iter: 4,
                record_traces: true,
            },
            &vec![0.0; 31],
            &reference,
        )
        .unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 4);
        assert_eq!(report.error_energy.len(), 5);
    }

    #[test]
    fn detect_floor_cases() {
        // Strictly geometric: no plateau.
        let geo: Vec<f64> = (0..20).map(|i| 0.1f64.powi(i)).collect();
        assert_eq!(detect_floor(&geo).unwrap(), 0.0);

        // Decay then flatline at 1e-5.
        let mut hist: Vec<f64> = (0..10).map(|i| 0.3f64.powi(i)).collect();
        hist.extend([1.1e-5, 0.95e-5, 1.05e-5, 1.0e-5]);
        let floor = detect_floor(&hist).unwrap();
        assert!((0.9e-5..=1.2e-5).contains(&floor), "floor {floor}");

        assert!(detect_floor(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn fmg_single_level_is_plain_refinement() {
        let prob = poisson1d(15, false).unwrap();
        let h = build_hierarchy(
            &prob,
            1,
            &PrecisionPolicy::Uniform,
            triple(53, 53, 53),
            &SmootherConfig::default(),
        )
        .unwrap();
        let (_, reports) = fmg(&h, &prob.b, 4).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].iterations, 4);
    }

    #[test]
    fn fmg_at_carrier_reaches_deep_accuracy() {
        let prob = poisson1d(63, false).unwrap();
        let h = build_hierarchy(
            &prob,
            4,
            &PrecisionPolicy::Uniform,
            triple(53, 53, 53),
            &SmootherConfig::default(),
        )
        .unwrap();
        let (_, reports) = fmg(&h, &prob.b, 20).unwrap();
        for (i, r) in reports.iter().enumerate() {
            let last = *r.error_energy.last().unwrap();
            assert!(last <= 1e-10, "level {} error {last}", i + 1);
        }
        // Work accounting: one V-cycle per refinement step per level.
        assert_eq!(reports.len(), 4);
        assert!(reports.iter().all(|r| r.iterations == 20));
    }

    #[test]
    fn ir_history_non_increasing_until_floor() {
        let prob = poisson1d(127, false).unwrap();
        let h = build_hierarchy(
            &prob,
            5,
            &PrecisionPolicy::Uniform,
            triple(53, 24, 11),
            &SmootherConfig::default(),
        )
        .unwrap();
        let inner = VCycleInner::finest(&h);
        let reference = prob.a.solve_carrier(&prob.b).unwrap();
        let (_, report, _) = ir_solve(
            &prob.a,
            &prob.b,
            &inner,
            triple(53, 24, 11),
            IrOptions {
                tol: 1e-300,
                max_iter: 120,
                record_traces: false,
            },
            &vec![0.0; 127],
            &reference,
        )
        .unwrap();
        assert!(report.floor > 0.0, "expected a stagnation floor");
        let cutoff = 10.0 * report.floor;
        for w in report.error_energy.windows(2) {
            if w[0] > cutoff && w[1] > cutoff {
                assert!(w[1] <= w[0] * (1.0 + 1e-3), "history grew: {w:?}");
            }
        }
        assert!(report.measured_rho < 1.0);
    }
}
