//! Closed-form evaluation of the rounding-error theory for a hierarchy:
//! refinement limiting accuracy and rate loss, two-grid and V-cycle rate
//! perturbations, and the full-multigrid per-level condition, alongside the
//! measured infinite-precision factors they are compared against.

use serde::Serialize;

use crate::cycles::{self, CoarseMode};
use crate::dense::{self, EnergyOracle};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

use crate::smoothers::Smoother;
use crate::sparse::{SparseSpd, SpectralStats};

/// Outer-loop (iterative refinement) bound set at one level.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IrBounds {
    pub gamma: f64,
    pub tau: f64,
    pub tau_bar: f64,
    pub m_a_bar_plus: f64,
    /// Rate loss added to the inner factor.
    pub delta_rho_ir: f64,
    /// Limiting accuracy of the relative energy error.
    pub chi: f64,
}

/// `gamma = (kappa^1/2 + kappa_under) / kappa`, order one for discrete
/// elliptic operators.
pub fn gamma(stats: &SpectralStats) -> f64 {
    (stats.kappa.sqrt() + stats.kappa_under) / stats.kappa
}

/// Single-level refinement bounds. `rho` is the inner solver's energy
/// contraction factor; `eps_work`/`eps_high` are raw unit roundoffs so the
/// zero-roundoff idealization is expressible.
pub fn eval_ir_bounds(
    stats: &SpectralStats,
    m_a: usize,
    rho: f64,
    eps_work: f64,
    eps_high: f64,
) -> Result<IrBounds> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho = {rho} must be in [0, 1)")));
    }
    let tau = stats.kappa.sqrt() * eps_work;
    if tau >= 1.0 {
        return Err(Error::WorkPrecisionTooCoarse(tau));
    }
    let tau_bar = stats.kappa * eps_high;
    let m = (m_a + 1) as f64;
    if m * eps_high >= 1.0 {
        return Err(Error::invalid(format!(
            "(m_A + 1) * eps_high = {} >= 1",
            m * eps_high
        )));
    }
    let m_bar = m / (1.0 - m * eps_high);
    let g = gamma(stats);
    let shared = g * (1.0 + rho) * (1.0 + eps_work) * m_bar * tau_bar;
    Ok(IrBounds {
        gamma: g,
        tau,
        tau_bar,
        m_a_bar_plus: m_bar,
        delta_rho_ir: ((1.0 + 2.0 * rho) * tau + shared) / (1.0 - tau),
        chi: (tau + shared) / (1.0 - tau),
    })
}

/// Two-grid bound set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TgBounds {
    pub tau_dot: f64,
    pub mu_dot: f64,
    pub sigma: f64,
    pub beta: f64,
    pub phi: f64,
    pub delta_rho_tg: f64,
}

fn tg_delta_from_parts(tau_dot: f64, mu_dot: f64, beta: f64) -> (f64, f64) {
    let phi = 2.0 * tau_dot * tau_dot
        + (4.0 + beta) * mu_dot * tau_dot
        + 2.0 * mu_dot * tau_dot * tau_dot;
    let delta = 4.0 * tau_dot + (2.0 + beta) * mu_dot + phi;
    (phi, delta)
}

fn sigma_for(smoother: &Smoother, stats: &SpectralStats, eps_low: f64) -> f64 {
    let alpha = smoother.alpha_m(eps_low);
    (1.0 + eps_low)
        * (alpha * stats.norm_a)
            .max(stats.psi * alpha)
            .max(stats.psi * smoother.norm_m())
}

/// Rate perturbation of one two-grid cycle whose coarse level runs at
/// roundoff `zeta * eps_low`.
pub fn eval_tg_bounds(
    stats: &SpectralStats,
    kappa_ptp: f64,
    m_p: usize,
    m_a: usize,
    smoother: &Smoother,
    zeta: f64,
    eps_low: f64,
) -> Result<TgBounds> {
    let tau_dot = stats.kappa.sqrt() * eps_low;
    if tau_dot >= 1.0 {
        return Err(Error::WorkPrecisionTooCoarse(tau_dot));
    }
    let mp = m_p as f64;
    let ma = (m_a + 1) as f64;
    if mp * eps_low >= 1.0 || ma * eps_low >= 1.0 {
        return Err(Error::invalid("sparsity times roundoff reaches 1"));
    }
    let m_p_dot = mp / (1.0 - mp * eps_low);
    let m_a_dot = ma / (1.0 - ma * eps_low);
    let sigma = sigma_for(smoother, stats, eps_low);
    let beta = 2.0 + 3.0 * sigma + 2.0 * m_a_dot * (1.0 + sigma);
    let mu_dot = 3.0 * zeta * kappa_ptp.sqrt() * m_p_dot * tau_dot;
    let (phi, delta) = tg_delta_from_parts(tau_dot, mu_dot, beta);
    Ok(TgBounds {
        tau_dot,
        mu_dot,
        sigma,
        beta,
        phi,
        delta_rho_tg: delta,
    })
}

/// Two-grid bounds for the finest pair of a hierarchy.
pub fn eval_tg_bounds_for(hier: &Hierarchy) -> Result<TgBounds> {
    let ell = hier.num_levels();
    if ell < 2 {
        return Err(Error::invalid("two-grid bounds need two levels"));
    }
    let fine = hier.level(ell);
    let stats = fine.a.estimate_stats()?;
    let interp = fine.interp.as_ref().unwrap();
    eval_tg_bounds(
        &stats,
        fine.kappa_ptp.unwrap_or(1.0),
        interp.m_p(),
        fine.a.m_a(),
        &fine.smoother,
        hier.zeta.last().copied().unwrap_or(1.0),
        fine.precisions.low.unit_roundoff(),
    )
}

/// V-cycle bound set: the finest-level two-grid perturbation amplified by the
/// geometric prefactor of the precision ladder.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct VBounds {
    pub vartheta: f64,
    pub prefactor: f64,
    pub tau_dot_finest: f64,
    pub mu_dot: f64,
    pub sigma: f64,
    pub beta: f64,
    pub delta_rho_tg_finest: f64,
    pub delta_rho_v: f64,
}

/// Multilevel rate perturbation with level-maxima parameters.
pub fn eval_v_bounds(hier: &Hierarchy) -> Result<VBounds> {
    let ell = hier.num_levels();
    let finest = hier.finest();
    let stats = finest.a.estimate_stats()?;
    let eps_low = finest.precisions.low.unit_roundoff();
    let tau_dot = stats.kappa.sqrt() * eps_low;
    if tau_dot >= 1.0 {
        return Err(Error::WorkPrecisionTooCoarse(tau_dot));
    }
    let vartheta = hier.vartheta;
    if ell > 1 && vartheta <= 1.0 {
        return Err(Error::ViolatedPrecisionLadder(vartheta));
    }
    let prefactor = if vartheta.is_infinite() {
        1.0
    } else {
        let t = vartheta.powi(hier.m as i32);
        t / (t - 1.0)
    };
    // sigma as a maximum over levels, each smoother at its own roundoff.
    let mut sigma = 0.0f64;
    for level in hier.levels() {
        let s = level.a.estimate_stats()?;
        sigma = sigma.max(sigma_for(
            &level.smoother,
            &s,
            level.precisions.low.unit_roundoff(),
        ));
    }
    let maxima = hier.maxima;
    let beta = 2.0 + 3.0 * sigma + 2.0 * maxima.m_a_dot_plus * (1.0 + sigma);
    let zeta_max = hier.zeta.iter().cloned().fold(1.0f64, f64::max);
    let mu_dot = if ell > 1 {
        3.0 * zeta_max * maxima.kappa_ptp.sqrt() * maxima.m_p_dot_plus * tau_dot
    } else {
        0.0
    };
    let (_, delta_tg) = tg_delta_from_parts(tau_dot, mu_dot, beta);
    Ok(VBounds {
        vartheta,
        prefactor,
        tau_dot_finest: tau_dot,
        mu_dot,
        sigma,
        beta,
        delta_rho_tg_finest: delta_tg,
        delta_rho_v: prefactor * delta_tg,
    })
}

/// One row of the full-multigrid per-level condition.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FmgRow {
    pub level: usize,
    pub h: f64,
    pub mu: f64,
    pub chi: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FmgCondition {
    pub rows: Vec<FmgRow>,
    /// Smallest cycle count from the asymptotic requirement
    /// `N > (0.5 + q log2 theta) / |log2 rho*_v|`.
    pub n_min: usize,
}

/// Smallest integer strictly beyond the asymptotic cycle requirement.
pub fn minimal_cycles(hier: &Hierarchy, q: f64, rho_star_v: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rho_star_v) {
        return Err(Error::invalid(format!(
            "rho*_v = {rho_star_v} must be in (0, 1) for the cycle requirement"
        )));
    }
    if rho_star_v == 0.0 {
        return Ok(1);
    }
    let denom = rho_star_v.log2().abs();
    let mut n_min = 1usize;
    for theta in &hier.theta {
        let bound = (0.5 + q * theta.log2()) / denom;
        let candidate = bound.max(0.0).floor() as usize + 1;
        n_min = n_min.max(candidate);
    }
    Ok(n_min)
}

/// Checks the per-level accuracy condition for `n` refinement cycles. The
/// coarsest row starts from relative error one (zero initial guess); finer
/// rows start from the interpolated coarse result.
pub fn eval_fmg_condition(
    hier: &Hierarchy,
    c: f64,
    q: f64,
    n: usize,
    rho_v: f64,
    ir_per_level: &[IrBounds],
    rho_star_v: f64,
) -> Result<FmgCondition> {
    if ir_per_level.len() != hier.num_levels() {
        return Err(Error::invalid("one IR bound set per level required"));
    }
    let mut rows = Vec::with_capacity(hier.num_levels());
    for (idx, level) in hier.levels().iter().enumerate() {
        let ir = &ir_per_level[idx];
        let rate = rho_v + ir.delta_rho_ir;
        if rate >= 1.0 {
            return Err(Error::OuterNotContracting(rate));
        }
        let floor_term = ir.chi / (1.0 - rate);
        let h = level.h;
        let rhs = c * h.powf(q);
        let (mu, lhs) = if idx == 0 {
            (0.0, rate.powi(n as i32) + floor_term)
        } else {
            let theta = hier.theta[idx - 1];
            let mu = level.kappa_ptp.unwrap_or(1.0).sqrt()
                * hier.maxima.m_p_work_plus
                * ir.tau;
            let initial = (2f64.sqrt() + mu) * theta.powf(q) * rhs + mu;
            (mu, rate.powi(n as i32) * initial + floor_term)
        };
        rows.push(FmgRow {
            level: idx + 1,
            h,
            mu,
            chi: ir.chi,
            lhs,
            rhs,
            holds: lhs <= rhs,
        });
    }
    let n_min = minimal_cycles(hier, q, rho_star_v)?;
    Ok(FmgCondition { rows, n_min })
}

/// Dense-oracle infinite-precision factors `(rho*_tg, rho*_v)`. Hierarchies
/// whose finest level exceeds the dense cap are measured on the finest
/// dense-capable sub-hierarchy.
pub fn measure_rho_star(hier: &Hierarchy) -> Result<(f64, f64)> {
    let mut top = 0usize;
    for (i, level) in hier.levels().iter().enumerate() {
        if level.a.n() <= dense::DENSE_CAP {
            top = i + 1;
        } else {
            break;
        }
    }
    if top == 0 {
        return Err(Error::invalid(format!(
            "coarsest level exceeds the dense oracle cap {}; use the \
             power-iteration fallback",
            dense::DENSE_CAP
        )));
    }
    let ops = dense::v_cycle_operators(hier, top, false)?;
    let mut rho_v = 0.0f64;
    for (i, v) in ops.iter().enumerate() {
        let oracle = EnergyOracle::new(hier.level(i + 1).a.to_dense())?;
        rho_v = rho_v.max(oracle.operator_norm(v));
    }
    let rho_tg = if top >= 2 {
        let oracle = EnergyOracle::new(hier.level(top).a.to_dense())?;
        oracle.operator_norm(&dense::tg_operator(hier, top, None)?)
    } else {
        rho_v
    };
    Ok((rho_tg, rho_v))
}

/// Measured accuracy constant `C`: the worst ratio of the coarse-to-fine
/// solution gap against `h_coarse^q` times the fine solution energy.
pub fn measure_c(hier: &Hierarchy, b_fine: &[f64], q: f64) -> Result<f64> {
    if hier.num_levels() < 2 {
        return Err(Error::invalid("measuring C needs at least two levels"));
    }
    let chain = hier.rhs_chain(b_fine)?;
    let mut solutions = Vec::with_capacity(hier.num_levels());
    for (idx, level) in hier.levels().iter().enumerate() {
        solutions.push(level.a.solve_carrier(&chain[idx])?);
    }
    let mut c = 0.0f64;
    for idx in 1..hier.num_levels() {
        let level = hier.level(idx + 1);
        let fine_norm = level.a.energy_norm(&solutions[idx])?;
        if fine_norm == 0.0 {
            return Err(Error::invalid("zero fine solution"));
        }
        let interp = level.interp.as_ref().unwrap();
        let lifted = interp.p().matvec_carrier(&solutions[idx - 1]);
        let gap: Vec<f64> = lifted
            .iter()
            .zip(&solutions[idx])
            .map(|(a, b)| a - b)
            .collect();
        let num = level.a.energy_norm(&gap)?;
        let h_coarse = hier.level(idx).h;
        c = c.max(num / (h_coarse.powf(q) * fine_norm));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    Tg,
    V,
}

/// Worst measured energy contraction of one cycle over seeded random right-
/// hand sides, at the hierarchy's configured precisions.
pub fn measure_cycle_factor(
    hier: &Hierarchy,
    kind: CycleKind,
    n_rhs: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let fine = hier.finest();
    let n = fine.a.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_rhs {
        let e: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let r = fine.a.matvec_carrier(&e);
        let y = match kind {
            CycleKind::Tg => cycles::tg_cycle(hier, &r, CoarseMode::Exact)?.0,
            CycleKind::V => cycles::v_cycle(hier, &r, hier.num_levels())?.0,
        };
        let err: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
        let factor = fine.a.energy_norm(&err)? / fine.a.energy_norm(&e)?;
        worst = worst.max(factor);
    }
    Ok(worst)
}

/// Largest observed ratio of the low-precision application error of `M` to
/// its certified bound; below one means the constant holds.
pub fn measure_smoother_alpha_ratio(
    a: &SparseSpd,
    smoother: &Smoother,
    low: crate::fpemu::PrecisionSpec,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let eps = low.unit_roundoff();
    let alpha = smoother.alpha_m(eps);
    let n = a.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut z: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nrm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        z.iter_mut().for_each(|v| *v /= nrm);
        let low_out = smoother.apply(a, &z, low)?;
        let exact = smoother.apply_carrier(a, &z);
        let err = low_out
            .iter()
            .zip(&exact)
            .map(|(l, e)| (l - e) * (l - e))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err / (alpha * eps));
    }
    Ok(worst)
}

/// Everything the `bounds` command reports: predicted quantities next to the
/// measured factors they bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub problem: String,
    pub levels: usize,
    pub vartheta: Option<f64>,
    pub gamma: f64,
    pub tau: Vec<f64>,
    pub tau_dot: Vec<f64>,
    pub tau_bar: Vec<f64>,
    pub rho_star_tg: f64,
    pub rho_star_v: f64,
    /// Refinement bounds at the finest level with the measured inner factor.
    pub ir: IrBounds,
    /// Same with the worst-case inner factor `rho*_v + delta_rho_v`.
    pub ir_worst: Option<IrBounds>,
    pub tg: Option<TgBounds>,
    pub v: Option<VBounds>,
    pub v_error: Option<String>,
    pub c_measured: Option<f64>,
    pub q: f64,
    pub fmg: Option<FmgCondition>,
    pub fmg_error: Option<String>,
    pub measured_tg_factor: Option<f64>,
    pub measured_v_factor: f64,
    pub measured_alpha_ratio: f64,
}

impl BoundReport {
    /// Full predicted-versus-measured evaluation on one hierarchy.
    pub fn evaluate(
        hier: &Hierarchy,
        b_fine: &[f64],
        n_cycles: Option<usize>,
        seed: u64,
    ) -> Result<BoundReport> {
        let finest = hier.finest();
        let stats = finest.a.estimate_stats()?;
        let (rho_star_tg, rho_star_v) = measure_rho_star(hier)?;
        let mut tau = Vec::new();
        let mut tau_dot = Vec::new();
        let mut tau_bar = Vec::new();
        for level in hier.levels() {
            let s = level.a.estimate_stats()?;
            tau.push(s.kappa.sqrt() * level.precisions.work.unit_roundoff());
            tau_dot.push(s.kappa.sqrt() * level.precisions.low.unit_roundoff());
            tau_bar.push(s.kappa * level.precisions.high.unit_roundoff());
        }
        let ir = eval_ir_bounds(
            &stats,
            finest.a.m_a(),
            rho_star_v.min(1.0 - 1e-12),
            finest.precisions.work.unit_roundoff(),
            finest.precisions.high.unit_roundoff(),
        )?;
        let tg = if hier.num_levels() >= 2 {
            Some(eval_tg_bounds_for(hier)?)
        } else {
            None
        };
        let (v, v_error) = match eval_v_bounds(hier) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let ir_worst = v.and_then(|vb| {
            let rho = rho_star_v + vb.delta_rho_v;
            if rho < 1.0 {
                eval_ir_bounds(
                    &stats,
                    finest.a.m_a(),
                    rho,
                    finest.precisions.work.unit_roundoff(),
                    finest.precisions.high.unit_roundoff(),
                )
                .ok()
            } else {
                None
            }
        });
        let q = hier.disc_q;
        let c_measured = if hier.num_levels() >= 2 {
            Some(measure_c(hier, b_fine, q)?)
        } else {
            None
        };
        let (fmg, fmg_error) = match (&v, c_measured) {
            (Some(vb), Some(c)) => {
                let rho_v = rho_star_v + vb.delta_rho_v;
                let per_level: Result<Vec<IrBounds>> = hier
                    .levels()
                    .iter()
                    .map(|l| {
                        let s = l.a.estimate_stats()?;
                        eval_ir_bounds(
                            &s,
                            l.a.m_a(),
                            rho_v.min(1.0 - 1e-12),
                            l.precisions.work.unit_roundoff(),
                            l.precisions.high.unit_roundoff(),
                        )
                    })
                    .collect();
                match per_level.and_then(|per| {
                    let n = match n_cycles {
                        Some(n) => n,
                        None => minimal_cycles(hier, q, rho_star_v)?,
                    };
                    eval_fmg_condition(hier, c, q, n, rho_v, &per, rho_star_v)
                }) {
                    Ok(f) => (Some(f), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            }
            _ => (None, None),
        };
        let measured_tg_factor = if hier.num_levels() == 2 {
            Some(measure_cycle_factor(hier, CycleKind::Tg, 20, seed)?)
        } else {
            None
        };
        let measured_v_factor = measure_cycle_factor(hier, CycleKind::V, 20, seed)?;
        let measured_alpha_ratio = measure_smoother_alpha_ratio(
            &finest.a,
            &finest.smoother,
            finest.precisions.low,
            200,
            seed,
        )?;
        Ok(BoundReport {
            problem: hier.problem_name.clone(),
            levels: hier.num_levels(),
            vartheta: if hier.vartheta.is_finite() {
                Some(hier.vartheta)
            } else {
                None
            },
            gamma: ir.gamma,
            tau,
            tau_dot,
            tau_bar,
            rho_star_tg,
            rho_star_v,
            ir,
            ir_worst,
            tg,
            v,
            v_error,
            c_measured,
            q,
            fmg,
            fmg_error,
            measured_tg_factor,
            measured_v_factor,
            measured_alpha_ratio,
        })
    }
}
