//! Multilevel structure: Galerkin coarse operators, per-level precision
//! triples, pseudo mesh sizes, and the coarsening-factor bookkeeping behind
//! the progressive-precision analysis.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fpemu::PrecisionSpec;
use crate::probgen::{self, GridShape, Interp, ModelProblem};
use crate::smoothers::{Smoother, SmootherConfig};
use crate::sparse::{self, Csr, SparseSpd};

/// The three roundoffs a level computes with: residuals in `high`, outer
/// updates in `work`, inner cycles in `low`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecisionTriple {
    pub high: PrecisionSpec,
    pub work: PrecisionSpec,
    pub low: PrecisionSpec,
}

impl PrecisionTriple {
    pub fn new(high: PrecisionSpec, work: PrecisionSpec, low: PrecisionSpec) -> Result<Self> {
        let t = PrecisionTriple { high, work, low };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.high.bits() < self.work.bits() {
            return Err(Error::PrecisionInversion {
                hi_role: "high",
                hi: self.high.bits(),
                lo_role: "work",
                lo: self.work.bits(),
            });
        }
        if self.work.bits() < self.low.bits() {
            return Err(Error::PrecisionInversion {
                hi_role: "work",
                hi: self.work.bits(),
                lo_role: "low",
                lo: self.low.bits(),
            });
        }
        Ok(())
    }
}

/// How low-precision roundoffs are distributed over the hierarchy. The triple
/// given to `build_hierarchy` always applies verbatim on the finest level.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionPolicy {
    /// Same triple on every level.
    Uniform,
    /// Smallest low-precision width with `kappa_j * 2^-p <= target` per level,
    /// floored at 8 bits and capped at the finest level's width.
    KappaMatched { target: f64 },
    /// Explicit low-precision widths, coarsest first.
    FixedLadder { low_bits: Vec<u32> },
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        PrecisionPolicy::Uniform
    }
}

/// One level of the hierarchy. Level 1 is the coarsest.
#[derive(Debug, Clone)]
pub struct GridLevel {
    pub index: usize,
    pub a: SparseSpd,
    /// Interpolation into this level from the next-coarser one; absent on the
    /// coarsest level.
    pub interp: Option<Interp>,
    pub precisions: PrecisionTriple,
    /// Pseudo mesh size `kappa(A_j)^(-1/(2m))`.
    pub h: f64,
    pub smoother: Smoother,
    /// Condition number of `P^t P` for the incoming interpolation.
    pub kappa_ptp: Option<f64>,
}

/// Level-maxima of the sparsity constants, with the matching roundoffs folded
/// in, shared by the multilevel bound evaluators.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SharedMaxima {
    pub kappa_ptp: f64,
    /// max_j m_Aj / (1 - m_Aj eps_high_j)
    pub m_a_bar_plus: f64,
    /// max_j m_Aj / (1 - m_Aj eps_low_j)
    pub m_a_dot_plus: f64,
    /// max_j m_Pj / (1 - m_Pj eps_low_j)
    pub m_p_dot_plus: f64,
    /// max_j m_Pj / (1 - m_Pj eps_work_j)
    pub m_p_work_plus: f64,
}

/// Immutable multilevel hierarchy; read-only solves may share it freely.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    levels: Vec<GridLevel>,
    /// Half the PDE-order analogue `2m`.
    pub m: u32,
    /// Discretization order `q` in the energy norm.
    pub disc_q: f64,
    pub problem_name: String,
    /// Pseudo mesh coarsening factors `h_{j-1}/h_j`, one per transition.
    pub theta: Vec<f64>,
    /// Precision coarsening factors `eps_low_{j-1}/eps_low_j`.
    pub zeta: Vec<f64>,
    /// `min_j theta_j * zeta_j^(-1/m)`; +inf for a single level.
    pub vartheta: f64,
    pub maxima: SharedMaxima,
}

impl Hierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[GridLevel] {
        &self.levels
    }

    /// 1-based access, level 1 = coarsest.
    pub fn level(&self, j: usize) -> &GridLevel {
        &self.levels[j - 1]
    }

    pub fn finest(&self) -> &GridLevel {
        self.levels.last().expect("hierarchy has at least one level")
    }

    /// Exact restricted right-hand sides `b_{j-1} = P_j^t b_j`, aligned with
    /// the level list (index 0 = coarsest).
    pub fn rhs_chain(&self, b_fine: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut chain = vec![b_fine.to_vec()];
        for level in self.levels.iter().rev() {
            if let Some(interp) = &level.interp {
                let b = restrict_rhs(interp, chain.last().unwrap())?;
                chain.push(b);
            }
        }
        chain.reverse();
        Ok(chain)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let levels: Vec<_> = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let stats = l.a.estimate_stats().ok();
                json!({
                    "level": l.index,
                    "n": l.a.n(),
                    "kappa": stats.map(|s| s.kappa),
                    "h": l.h,
                    "bits": {
                        "high": l.precisions.high.bits(),
                        "work": l.precisions.work.bits(),
                        "low": l.precisions.low.bits(),
                    },
                    "theta": if i > 0 { Some(self.theta[i - 1]) } else { None },
                    "zeta": if i > 0 { Some(self.zeta[i - 1]) } else { None },
                    "m_a": l.a.m_a(),
                    "kappa_ptp": l.kappa_ptp,
                    "smoother": l.smoother.kind_name(),
                })
            })
            .collect();
        json!({
            "problem": self.problem_name,
            "m": self.m,
            "q": self.disc_q,
            "vartheta": if self.vartheta.is_finite() { Some(self.vartheta) } else { None },
            "levels": levels,
        })
    }
}

/// Galerkin triple product `P^t A P` in carrier precision, mirrored to exact
/// symmetry. Rank deficiency in `P` surfaces as a singular coarse Cholesky.
pub fn galerkin_coarsen(a: &SparseSpd, interp: &Interp) -> Result<SparseSpd> {
    if interp.fine_dim() != a.n() {
        return Err(Error::dim(format!(
            "interpolation rows {} vs matrix dimension {}",
            interp.fine_dim(),
            a.n()
        )));
    }
    let ap = a.csr().mul(interp.p())?;
    let coarse = interp.pt().mul(&ap)?;
    // Mirror the upper triangle so symmetry is exact despite the different
    // summation orders of (i, j) and (j, i).
    let mut triplets = Vec::with_capacity(coarse.nnz());
    for (i, j, v) in coarse.triplets() {
        if i < j {
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        } else if i == j {
            triplets.push((i, j, v));
        }
    }
    SparseSpd::new(Csr::from_triplets(coarse.rows(), coarse.cols(), &triplets)?)
}

/// `P^t b` in carrier precision (assumed exact).
pub fn restrict_rhs(interp: &Interp, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != interp.fine_dim() {
        return Err(Error::dim(format!(
            "restrict: vector {} vs fine dimension {}",
            b.len(),
            interp.fine_dim()
        )));
    }
    Ok(interp.pt().matvec_carrier(b))
}

fn coarsenable(shape: GridShape) -> bool {
    match shape {
        GridShape::Line(n) => n >= 3 && n % 2 == 1,
        GridShape::Square(s) => s >= 3 && s % 2 == 1,
    }
}

fn coarse_shape(shape: GridShape) -> GridShape {
    match shape {
        GridShape::Line(n) => GridShape::Line((n - 1) / 2),
        GridShape::Square(s) => GridShape::Square((s - 1) / 2),
    }
}

fn dim_of(shape: GridShape) -> usize {
    match shape {
        GridShape::Line(n) => n,
        GridShape::Square(s) => s * s,
    }
}

fn make_interp(shape: GridShape) -> Result<Interp> {
    match shape {
        GridShape::Line(n) => probgen::linear_interpolation(n),
        GridShape::Square(s) => probgen::bilinear_interpolation(s),
    }
}

/// Builds interpolations and Galerkin coarse operators top-down, estimates
/// per-level statistics, assigns precisions per policy and installs one
/// smoother per level. `levels == 0` coarsens until at most 7 unknowns remain.
pub fn build_hierarchy(
    problem: &ModelProblem,
    levels: usize,
    policy: &PrecisionPolicy,
    triple: PrecisionTriple,
    smoother_cfg: &SmootherConfig,
) -> Result<Hierarchy> {
    triple.validate()?;
    if levels == 0 && dim_of(problem.grid) == 0 {
        return Err(Error::invalid("empty problem"));
    }
    let auto = levels == 0;

    // Fine-first chains of operators and the interpolation feeding each fine
    // matrix from its coarse neighbour.
    let mut mats: Vec<SparseSpd> = vec![problem.a.clone()];
    let mut interps: Vec<Interp> = Vec::new();
    let mut shape = problem.grid;
    loop {
        let built = mats.len();
        if !auto && built == levels {
            break;
        }
        if auto && dim_of(shape) <= 7 {
            break;
        }
        if !coarsenable(shape) {
            if auto {
                break;
            }
            return Err(Error::invalid(format!(
                "too many levels for grid size: cannot coarsen {shape:?} \
                 (built {built} of {levels})"
            )));
        }
        let interp = make_interp(shape)?;
        let coarse = galerkin_coarsen(mats.last().unwrap(), &interp)?;
        mats.push(coarse);
        interps.push(interp);
        shape = coarse_shape(shape);
    }

    let ell = mats.len();
    let m = (problem.order_2m / 2).max(1);

    // Coarse-first ordering from here on.
    mats.reverse();
    interps.reverse();

    let mut kappas = Vec::with_capacity(ell);
    for a in &mats {
        kappas.push(a.estimate_stats()?.kappa);
    }

    let low_bits = assign_low_bits(&kappas, policy, &triple)?;
    let mut grid_levels = Vec::with_capacity(ell);
    for (i, a) in mats.into_iter().enumerate() {
        let smoother = Smoother::build(smoother_cfg, &a)?;
        let interp = if i > 0 { Some(interps[i - 1].clone()) } else { None };
        let kappa_ptp = match &interp {
            Some(p) => {
                let ptp = p.pt().mul(p.p())?;
                let (lmin, lmax) = sparse::spd_extreme_eigs(&ptp)?;
                Some(lmax / lmin)
            }
            None => None,
        };
        let precisions = PrecisionTriple::new(
            triple.high,
            triple.work,
            PrecisionSpec::new(low_bits[i])?,
        )?;
        let h = kappas[i].powf(-1.0 / (2.0 * m as f64));
        grid_levels.push(GridLevel {
            index: i + 1,
            a,
            interp,
            precisions,
            h,
            smoother,
            kappa_ptp,
        });
    }

    let mut theta = Vec::new();
    let mut zeta = Vec::new();
    for i in 1..ell {
        theta.push(grid_levels[i - 1].h / grid_levels[i].h);
        zeta.push(
            grid_levels[i - 1].precisions.low.unit_roundoff()
                / grid_levels[i].precisions.low.unit_roundoff(),
        );
    }
    let vartheta = theta
        .iter()
        .zip(&zeta)
        .map(|(t, z)| t * z.powf(-1.0 / m as f64))
        .fold(f64::INFINITY, f64::min);
    if vartheta <= 1.0 {
        eprintln!(
            "warning: vartheta = {vartheta:.4} <= 1; the precision ladder coarsens \
             faster than the pseudo mesh and the V-cycle error bound does not apply"
        );
    }

    let maxima = shared_maxima(&grid_levels);
    Ok(Hierarchy {
        levels: grid_levels,
        m,
        disc_q: problem.disc_q,
        problem_name: problem.name.clone(),
        theta,
        zeta,
        vartheta,
        maxima,
    })
}

fn assign_low_bits(
    kappas: &[f64],
    policy: &PrecisionPolicy,
    triple: &PrecisionTriple,
) -> Result<Vec<u32>> {
    let ell = kappas.len();
    let finest = triple.low.bits();
    match policy {
        PrecisionPolicy::Uniform => Ok(vec![finest; ell]),
        PrecisionPolicy::KappaMatched { target } => {
            if !(*target > 0.0) {
                return Err(Error::Config(format!("kappa-matched target {target} must be > 0")));
            }
            let mut bits = vec![finest; ell];
            for i in 0..ell.saturating_sub(1) {
                let matched = (kappas[i] / target).log2().ceil().max(0.0) as u32;
                bits[i] = matched.clamp(8, finest);
            }
            // kappa grows toward the fine end, but keep zeta >= 1 exactly.
            for i in (0..ell.saturating_sub(1)).rev() {
                bits[i] = bits[i].min(bits[i + 1]);
            }
            Ok(bits)
        }
        PrecisionPolicy::FixedLadder { low_bits } => {
            if low_bits.len() != ell {
                return Err(Error::Config(format!(
                    "fixed ladder has {} entries for {ell} levels",
                    low_bits.len()
                )));
            }
            for w in low_bits.windows(2) {
                if w[0] > w[1] {
                    return Err(Error::Config(
                        "fixed ladder must be nondecreasing toward the fine level".into(),
                    ));
                }
            }
            for &b in low_bits {
                PrecisionSpec::new(b)?;
                if b > triple.work.bits() {
                    return Err(Error::PrecisionInversion {
                        hi_role: "work",
                        hi: triple.work.bits(),
                        lo_role: "low",
                        lo: b,
                    });
                }
            }
            Ok(low_bits.clone())
        }
    }
}

fn shared_maxima(levels: &[GridLevel]) -> SharedMaxima {
    let frac = |m: f64, eps: f64| m / (1.0 - m * eps);
    let mut out = SharedMaxima {
        kappa_ptp: 0.0,
        m_a_bar_plus: 0.0,
        m_a_dot_plus: 0.0,
        m_p_dot_plus: 0.0,
        m_p_work_plus: 0.0,
    };
    for l in levels {
        let m_a = l.a.m_a() as f64;
        out.m_a_bar_plus = out
            .m_a_bar_plus
            .max(frac(m_a, l.precisions.high.unit_roundoff()));
        out.m_a_dot_plus = out
            .m_a_dot_plus
            .max(frac(m_a, l.precisions.low.unit_roundoff()));
        if let Some(interp) = &l.interp {
            let m_p = interp.m_p() as f64;
            out.m_p_dot_plus = out
                .m_p_dot_plus
                .max(frac(m_p, l.precisions.low.unit_roundoff()));
            out.m_p_work_plus = out
                .m_p_work_plus
                .max(frac(m_p, l.precisions.work.unit_roundoff()));
        }
        if let Some(k) = l.kappa_ptp {
            out.kappa_ptp = out.kappa_ptp.max(k);
        }
    }
    out
}
