//! Relaxation operators `M` with precision-aware staged application and
//! certified constants `alpha_M` bounding the rounding error of computing
//! `M z` in low precision: `|computed - M z| <= alpha_M * eps_low * |z|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpemu::{self, PrecisionSpec};
use crate::sparse::{self, Csr, SparseSpd};

fn default_omega() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherKindName {
    #[default]
    Richardson,
    Jacobi,
    Double,
    Cheb2,
    Cheb2Jacobi,
}

/// Config-level description of a smoother; `double` combines two Richardson
/// sweeps with the same damping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    #[serde(default)]
    pub kind: SmootherKindName,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Lower end of the Chebyshev smoothing interval as a fraction of the
    /// upper spectrum: `[|A|/fraction, |A|]`.
    #[serde(default = "default_fraction")]
    pub interval_fraction: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            kind: SmootherKindName::Richardson,
            omega: 1.0,
            interval_fraction: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Richardson {
        s: f64,
    },
    Jacobi {
        coeff: Vec<f64>,
        kappa_d: f64,
    },
    DoubleSweep {
        first: Box<Smoother>,
        second: Box<Smoother>,
    },
    Chebyshev2 {
        w1: f64,
        w2: f64,
    },
    Chebyshev2Jacobi {
        m1: Vec<f64>,
        m2: Vec<f64>,
        w1: Vec<f64>,
        norm_m1: f64,
        norm_m2: f64,
        norm_w1: f64,
    },
}

/// A relaxation preconditioner together with the spectral data its certified
/// constants are built from. Immutable after construction; application is
/// pure given `(A, z, precision)`.
#[derive(Debug, Clone)]
pub struct Smoother {
    kind: Kind,
    norm_m: f64,
    norm_a: f64,
    psi: f64,
    m_a: usize,
}

impl Smoother {
    pub fn build(cfg: &SmootherConfig, a: &SparseSpd) -> Result<Smoother> {
        match cfg.kind {
            SmootherKindName::Richardson => make_richardson(a, cfg.omega),
            SmootherKindName::Jacobi => make_jacobi(a, cfg.omega),
            SmootherKindName::Double => {
                let s1 = make_richardson(a, cfg.omega)?;
                let s2 = make_richardson(a, cfg.omega)?;
                combine_double_sweep(s1, s2, a)
            }
            SmootherKindName::Cheb2 => make_chebyshev2(a, None, cfg.interval_fraction),
            SmootherKindName::Cheb2Jacobi => make_chebyshev2_jacobi(a, cfg.interval_fraction),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Richardson { .. } => "richardson",
            Kind::Jacobi { .. } => "jacobi",
            Kind::DoubleSweep { .. } => "double",
            Kind::Chebyshev2 { .. } => "cheb2",
            Kind::Chebyshev2Jacobi { .. } => "cheb2-jacobi",
        }
    }

    /// Upper bound on the Euclidean norm of `M`.
    pub fn norm_m(&self) -> f64 {
        self.norm_m
    }

    /// Certified application-error constant at low-precision roundoff
    /// `eps_dot`; monotone nondecreasing in `eps_dot`.
    pub fn alpha_m(&self, eps_dot: f64) -> f64 {
        let m_dot = self.m_a as f64 / (1.0 - self.m_a as f64 * eps_dot);
        match &self.kind {
            Kind::Richardson { .. } => 2.0 / self.norm_a,
            Kind::Jacobi { kappa_d, .. } => 2.0 * kappa_d / self.norm_a,
            Kind::Chebyshev2 { w1, w2 } => {
                self.norm_m
                    + (w1 + (1.0 + eps_dot) * w2 * self.psi * m_dot + w2 * self.norm_a)
                        * (1.0 + eps_dot)
            }
            Kind::Chebyshev2Jacobi {
                norm_m1,
                norm_m2,
                norm_w1,
                ..
            } => {
                let upsilon = norm_m2
                    * ((1.0 + eps_dot)
                        * (self.norm_a * norm_m1
                            + self.psi * m_dot * (1.0 + eps_dot) * norm_m1)
                        + self.norm_a * norm_m1);
                self.norm_m + (norm_w1 + upsilon) * (1.0 + eps_dot)
            }
            Kind::DoubleSweep { first, second } => {
                let a1 = first.alpha_m(eps_dot);
                let a2 = second.alpha_m(eps_dot);
                let n1 = first.norm_m;
                let n2 = second.norm_m;
                let upsilon = (n2 + a2 * eps_dot)
                    * (self.norm_a * a1
                        + self.psi * m_dot * a1 * eps_dot
                        + self.psi * m_dot * n1)
                    + self.norm_a * n1 * a2;
                self.norm_m
                    + (1.0 + eps_dot) * (upsilon + n1 + n2 + 2.0 * a1 + 2.0 * a2)
            }
        }
    }

    /// Applies `M z` with every stage in `prec`. Stage order is fixed; the
    /// certified constants are derived for exactly these orderings.
    pub fn apply(&self, a: &SparseSpd, z: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Richardson { s } => fpemu::scale_vec(z, *s, prec),
            Kind::Jacobi { coeff, .. } => mul_entrywise(coeff, z, prec),
            Kind::Chebyshev2 { w1, w2 } => {
                let t1 = fpemu::scale_vec(z, *w1, prec)?;
                let az = a.matvec(z, prec)?;
                let t3 = fpemu::scale_vec(&az, *w2, prec)?;
                fpemu::sub_vec(&t1, &t3, prec)
            }
            Kind::Chebyshev2Jacobi { m1, m2, w1, .. } => {
                let u = mul_entrywise(m1, z, prec)?;
                let v = a.matvec(&u, prec)?;
                let w = mul_entrywise(m2, &v, prec)?;
                let t = mul_entrywise(w1, z, prec)?;
                fpemu::sub_vec(&t, &w, prec)
            }
            Kind::DoubleSweep { first, second } => {
                // ((M2 z) + (M1 z) - (M2 (A (M1 z)))), each stage rounded.
                let w1 = first.apply(a, z, prec)?;
                let w2 = a.matvec(&w1, prec)?;
                let w3 = second.apply(a, &w2, prec)?;
                let w4 = second.apply(a, z, prec)?;
                let t = fpemu::add_vec(&w4, &w1, prec)?;
                fpemu::sub_vec(&t, &w3, prec)
            }
        }
    }

    /// Same stages in carrier precision; the reference for error measurement.
    pub fn apply_carrier(&self, a: &SparseSpd, z: &[f64]) -> Vec<f64> {
        self.apply(a, z, PrecisionSpec::carrier())
            .expect("carrier application of a smoother cannot fail on finite input")
    }

    /// Dense `M` for the reference oracles.
    pub fn dense(&self, a_dense: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
        let n = a_dense.nrows();
        match &self.kind {
            Kind::Richardson { s } => nalgebra::DMatrix::identity(n, n) * *s,
            Kind::Jacobi { coeff, .. } => {
                nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(coeff))
            }
            Kind::Chebyshev2 { w1, w2 } => {
                nalgebra::DMatrix::identity(n, n) * *w1 - a_dense * *w2
            }
            Kind::Chebyshev2Jacobi { m1, m2, w1, .. } => {
                let d1 = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(m1));
                let d2 = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(m2));
                let dw = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(w1));
                dw - d2 * a_dense * d1
            }
            Kind::DoubleSweep { first, second } => {
                let m1 = first.dense(a_dense);
                let m2 = second.dense(a_dense);
                &m1 + &m2 - &m2 * a_dense * &m1
            }
        }
    }
}

fn mul_entrywise(c: &[f64], z: &[f64], prec: PrecisionSpec) -> Result<Vec<f64>> {
    if c.len() != z.len() {
        return Err(Error::dim(format!(
            "smoother applied to vector of length {} (expected {})",
            z.len(),
            c.len()
        )));
    }
    c.iter().zip(z).map(|(&ci, &zi)| prec.mul(ci, zi)).collect()
}

/// Estimates `|I - M A|_A` by energy-norm power iteration (the smoothers here
/// are symmetric, so the iteration converges to the norm from below) and
/// rejects non-contractive constructions.
fn probe_contraction(a: &SparseSpd, sm: &Smoother) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let n = a.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x600d_5eed);
    let mut z: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let zn = a.energy_norm(&z)?;
    if zn > 0.0 {
        z.iter_mut().for_each(|v| *v /= zn);
    }
    let mut est = 0.0;
    for _ in 0..200 {
        let az = a.matvec_carrier(&z);
        let maz = sm.apply_carrier(a, &az);
        let gz: Vec<f64> = z.iter().zip(&maz).map(|(zi, mi)| zi - mi).collect();
        let gn = a.energy_norm(&gz)?;
        if gn == 0.0 {
            return Ok(0.0);
        }
        if (gn - est).abs() <= 1e-10 * gn {
            est = gn;
            break;
        }
        est = gn;
        z = gz.iter().map(|v| v / gn).collect();
    }
    if est >= 1.0 {
        return Err(Error::NotContractive(est));
    }
    Ok(est)
}

/// `M = (omega/|A|) I`, `0 < omega < 2`.
pub fn make_richardson(a: &SparseSpd, omega: f64) -> Result<Smoother> {
    if !(0.0..2.0).contains(&omega) || omega == 0.0 {
        return Err(Error::invalid(format!(
            "richardson damping must be in (0, 2), got {omega}"
        )));
    }
    let stats = a.estimate_stats()?;
    let s = omega / stats.norm_a;
    let sm = Smoother {
        kind: Kind::Richardson { s },
        norm_m: s,
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

/// Damped Jacobi `M = s D^{-1}` with `s = omega / |D^{-1/2} A D^{-1/2}|`.
/// The reciprocal diagonal is precomputed in carrier precision.
pub fn make_jacobi(a: &SparseSpd, omega: f64) -> Result<Smoother> {
    if !(0.0..2.0).contains(&omega) || omega == 0.0 {
        return Err(Error::invalid(format!(
            "jacobi damping must be in (0, 2), got {omega}"
        )));
    }
    let d = a.diag();
    if let Some((i, _)) = d.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NotSpd(format!("nonpositive diagonal entry at {i}")));
    }
    let stats = a.estimate_stats()?;
    let norm_scaled = scaled_operator_norm(a, &d)?;
    let s = omega / norm_scaled;
    let coeff: Vec<f64> = d.iter().map(|&di| s / di).collect();
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = d.iter().cloned().fold(0.0f64, f64::max);
    let sm = Smoother {
        kind: Kind::Jacobi {
            coeff,
            kappa_d: d_max / d_min,
        },
        norm_m: s / d_min,
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

fn scaled_operator_norm(a: &SparseSpd, d: &[f64]) -> Result<f64> {
    let scaled: Vec<(usize, usize, f64)> = a
        .csr()
        .triplets()
        .into_iter()
        .map(|(i, j, v)| (i, j, v / (d[i] * d[j]).sqrt()))
        .collect();
    let mat = Csr::from_triplets(a.n(), a.n(), &scaled)?;
    sparse::sym_largest_eig(&mat)
}

/// Folds two sweeps into the single preconditioner
/// `M = M1 + M2 - M2 A M1`, applied in the stage order
/// `((M2 z) + (M1 z) - (M2 (A (M1 z))))`.
pub fn combine_double_sweep(first: Smoother, second: Smoother, a: &SparseSpd) -> Result<Smoother> {
    let stats = a.estimate_stats()?;
    let norm_m = match (&first.kind, &second.kind) {
        // Two identical Richardson sweeps admit the sharp estimate 2 omega/|A|.
        (Kind::Richardson { s: s1 }, Kind::Richardson { s: s2 }) if s1 == s2 => 2.0 * s1,
        _ => {
            first.norm_m + second.norm_m + stats.norm_a * first.norm_m * second.norm_m
        }
    };
    let sm = Smoother {
        kind: Kind::DoubleSweep {
            first: Box::new(first),
            second: Box::new(second),
        },
        norm_m,
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

fn chebyshev_coefficients(lo: f64, hi: f64) -> (f64, f64) {
    // Degree-2 Chebyshev error polynomial on [lo, hi], folded into
    // M = w1 I - w2 A through I - M A = p2(A).
    let d = 0.5 * (hi + lo);
    let c = 0.5 * (hi - lo);
    let denom = 2.0 * d * d - c * c;
    (4.0 * d / denom, 2.0 / denom)
}

/// Second-order Chebyshev smoother `M = w1 I - w2 A` on the interval
/// `[|A|/fraction, |A|]` (or an explicit interval), applied as
/// `(w1 z) - (w2 (A z))`.
pub fn make_chebyshev2(
    a: &SparseSpd,
    interval: Option<(f64, f64)>,
    fraction: f64,
) -> Result<Smoother> {
    let stats = a.estimate_stats()?;
    let (lo, hi) = interval.unwrap_or((stats.norm_a / fraction, stats.norm_a));
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!(
            "degenerate smoothing interval [{lo}, {hi}]"
        )));
    }
    if hi < stats.norm_a * (1.0 - 1e-6) {
        return Err(Error::invalid(format!(
            "smoothing interval upper end {hi} does not cover |A| = {}",
            stats.norm_a
        )));
    }
    let (w1, w2) = chebyshev_coefficients(lo, hi);
    let sm = Smoother {
        kind: Kind::Chebyshev2 { w1, w2 },
        norm_m: w1.max(w2 * stats.norm_a),
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

/// Diagonally preconditioned second-order Chebyshev: matrix coefficients
/// `w1 = M2 + M1` and `w2 = M2 A M1` with diagonal `Mj = sj D^{-1}` formed
/// accurately in carrier precision during setup; `w2` is applied factored.
pub fn make_chebyshev2_jacobi(a: &SparseSpd, fraction: f64) -> Result<Smoother> {
    let d = a.diag();
    if let Some((i, _)) = d.iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NotSpd(format!("nonpositive diagonal entry at {i}")));
    }
    let stats = a.estimate_stats()?;
    let norm_scaled = scaled_operator_norm(a, &d)?;
    let lo = norm_scaled / fraction;
    let hi = norm_scaled;
    // Roots of the shifted degree-2 Chebyshev polynomial on [lo, hi].
    let mid = 0.5 * (hi + lo);
    let half = 0.5 * (hi - lo);
    let r1 = mid - half / 2f64.sqrt();
    let r2 = mid + half / 2f64.sqrt();
    let s1 = 1.0 / r1;
    let s2 = 1.0 / r2;
    let m1: Vec<f64> = d.iter().map(|&di| s1 / di).collect();
    let m2: Vec<f64> = d.iter().map(|&di| s2 / di).collect();
    let w1: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a + b).collect();
    let d_min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm_m1 = s1 / d_min;
    let norm_m2 = s2 / d_min;
    let norm_w1 = (s1 + s2) / d_min;
    let sm = Smoother {
        kind: Kind::Chebyshev2Jacobi {
            m1,
            m2,
            w1,
            norm_m1,
            norm_m2,
            norm_w1,
        },
        norm_m: norm_w1,
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

/// Direct construction from linear coefficients, for experiments probing the
/// `w2 -> 0` degeneration toward Richardson.
pub fn from_linear_coeffs(a: &SparseSpd, w1: f64, w2: f64) -> Result<Smoother> {
    let stats = a.estimate_stats()?;
    let sm = Smoother {
        kind: Kind::Chebyshev2 { w1, w2 },
        norm_m: w1.max(w2 * stats.norm_a),
        norm_a: stats.norm_a,
        psi: stats.psi,
        m_a: a.m_a(),
    };
    probe_contraction(a, &sm)?;
    Ok(sm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::EnergyOracle;
    use crate::probgen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(bits: u32) -> PrecisionSpec {
        PrecisionSpec::new(bits).unwrap()
    }

    fn unit_vectors(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / nrm).collect()
            })
            .collect()
    }

    fn check_alpha_bound(a: &SparseSpd, sm: &Smoother, bits: u32, trials: usize, seed: u64) {
        let prec = p(bits);
        let eps = prec.unit_roundoff();
        let alpha = sm.alpha_m(eps);
        for z in unit_vectors(a.n(), trials, seed) {
            let low = sm.apply(a, &z, prec).unwrap();
            let exact = sm.apply_carrier(a, &z);
            let err = low
                .iter()
                .zip(&exact)
                .map(|(l, e)| (l - e) * (l - e))
                .sum::<f64>()
                .sqrt();
            assert!(
                err <= alpha * eps,
                "{} application error {err:e} exceeds {:e} at p={bits}",
                sm.kind_name(),
                alpha * eps
            );
        }
    }

    #[test]
    fn richardson_identity_formula() {
        let a = SparseSpd::new(Csr::identity(4)).unwrap();
        let sm = make_richardson(&a, 1.0).unwrap();
        assert!((sm.norm_m() - 1.0).abs() <= 1e-9);
        assert!((sm.alpha_m(1e-3) - 2.0).abs() <= 1e-8);
        let z = vec![1.0, -2.0, 0.5, 4.0];
        let y = sm.apply(&a, &z, p(11)).unwrap();
        for (yi, zi) in y.iter().zip(&z) {
            assert!((yi - zi).abs() <= 1e-9 * zi.abs());
        }
        assert!(make_richardson(&a, 2.0).is_err());
        assert!(make_richardson(&a, 0.0).is_err());
    }

    #[test]
    fn richardson_contracts_in_energy() {
        let prob = probgen::poisson1d(15, false).unwrap();
        let sm = make_richardson(&prob.a, 1.0).unwrap();
        let oracle = EnergyOracle::new(prob.a.to_dense()).unwrap();
        let g = crate::dense::error_propagation(&prob.a, &sm);
        let norm = oracle.operator_norm(&g);
        assert!(norm < 1.0, "|G|_A = {norm}");
    }

    #[test]
    fn richardson_application_error_certified() {
        let prob = probgen::poisson1d(63, false).unwrap();
        let sm = make_richardson(&prob.a, 1.0).unwrap();
        check_alpha_bound(&prob.a, &sm, 11, 1000, 21);
    }

    #[test]
    fn jacobi_on_diagonal_matrix_damps_uniformly() {
        let a = SparseSpd::from_triplets(3, &[(0, 0, 2.0), (1, 1, 5.0), (2, 2, 9.0)]).unwrap();
        let omega = 0.7;
        let sm = make_jacobi(&a, omega).unwrap();
        // G = I - s D^{-1} A = (1 - omega) I for diagonal A.
        let g = crate::dense::error_propagation(&a, &sm);
        let expect = nalgebra::DMatrix::identity(3, 3) * (1.0 - omega);
        assert!((g - expect).norm() <= 1e-10);
    }

    #[test]
    fn jacobi_matches_richardson_on_constant_diagonal() {
        let prob = probgen::poisson1d(31, false).unwrap();
        let jac = make_jacobi(&prob.a, 1.0).unwrap();
        let ric = make_richardson(&prob.a, 1.0).unwrap();
        if let (Kind::Jacobi { coeff, .. }, Kind::Richardson { s }) = (&jac.kind, &ric.kind) {
            for c in coeff {
                assert!((c - s).abs() <= 1e-6 * s.abs());
            }
        } else {
            panic!("unexpected kinds");
        }
    }

    #[test]
    fn jacobi_application_error_certified() {
        let prob = probgen::poisson1d(63, true).unwrap();
        let sm = make_jacobi(&prob.a, 1.0).unwrap();
        check_alpha_bound(&prob.a, &sm, 11, 1000, 22);
    }

    #[test]
    fn double_sweep_norm_special_case() {
        let prob = probgen::poisson1d(31, false).unwrap();
        let s1 = make_richardson(&prob.a, 1.2).unwrap();
        let s_val = s1.norm_m();
        let s2 = make_richardson(&prob.a, 1.2).unwrap();
        let sm = combine_double_sweep(s1, s2, &prob.a).unwrap();
        assert!((sm.norm_m() - 2.0 * s_val).abs() <= 1e-12);
    }

    #[test]
    fn double_sweep_operator_identity_dense() {
        let prob = probgen::poisson1d(8, false).unwrap();
        let a_dense = prob.a.to_dense();
        for (first, second) in [
            (
                make_richardson(&prob.a, 1.0).unwrap(),
                make_richardson(&prob.a, 1.0).unwrap(),
            ),
            (
                make_richardson(&prob.a, 0.8).unwrap(),
                make_jacobi(&prob.a, 1.1).unwrap(),
            ),
        ] {
            let m1 = first.dense(&a_dense);
            let m2 = second.dense(&a_dense);
            let sm = combine_double_sweep(first, second, &prob.a).unwrap();
            let id = nalgebra::DMatrix::identity(8, 8);
            let lhs = &id - sm.dense(&a_dense) * &a_dense;
            let rhs = (&id - &m2 * &a_dense) * (&id - &m1 * &a_dense);
            assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn double_sweep_zero_maps_to_zero() {
        let prob = probgen::poisson1d(15, false).unwrap();
        let sm = Smoother::build(
            &SmootherConfig {
                kind: SmootherKindName::Double,
                ..Default::default()
            },
            &prob.a,
        )
        .unwrap();
        let y = sm.apply(&prob.a, &vec![0.0; 15], p(8)).unwrap();
        assert_eq!(y, vec![0.0; 15]);
    }

    #[test]
    fn double_sweep_equals_two_sweeps_in_carrier() {
        let prob = probgen::poisson1d(31, false).unwrap();
        let a = &prob.a;
        let first = make_richardson(a, 1.0).unwrap();
        let second = make_jacobi(a, 0.9).unwrap();
        let m1 = first.clone();
        let m2 = second.clone();
        let sm = combine_double_sweep(first, second, a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..31).map(|_| rng.random::<f64>() - 0.5).collect();
        // Two stationary sweeps on A y = r from zero.
        let y1 = m1.apply_carrier(a, &r);
        let res: Vec<f64> = a
            .matvec_carrier(&y1)
            .iter()
            .zip(&r)
            .map(|(ay, ri)| ay - ri)
            .collect();
        let corr = m2.apply_carrier(a, &res);
        let y2: Vec<f64> = y1.iter().zip(&corr).map(|(a, b)| a - b).collect();
        let combined = sm.apply_carrier(a, &r);
        let scale = y2.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = combined
            .iter()
            .zip(&y2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-12 * scale);
    }

    #[test]
    fn double_sweep_application_error_certified() {
        let prob = probgen::poisson1d(63, false).unwrap();
        let sm = Smoother::build(
            &SmootherConfig {
                kind: SmootherKindName::Double,
                ..Default::default()
            },
            &prob.a,
        )
        .unwrap();
        check_alpha_bound(&prob.a, &sm, 11, 1000, 23);
    }

    #[test]
    fn cheb2_degenerates_to_richardson_when_w2_is_zero() {
        let prob = probgen::poisson1d(15, false).unwrap();
        let ric = make_richardson(&prob.a, 1.0).unwrap();
        let s = ric.norm_m();
        let sm = from_linear_coeffs(&prob.a, s, 0.0).unwrap();
        let z: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        assert_eq!(
            sm.apply(&prob.a, &z, p(11)).unwrap(),
            ric.apply(&prob.a, &z, p(11)).unwrap()
        );
    }

    #[test]
    fn cheb2_exact_on_identity_with_power_of_two_coeffs() {
        let a = SparseSpd::new(Csr::identity(3)).unwrap();
        let sm = from_linear_coeffs(&a, 0.5, 0.25).unwrap();
        let z = vec![1.0, -2.0, 4.0];
        // (w1 - w2) z with exact powers of two stays exact at any precision.
        let y = sm.apply(&a, &z, p(8)).unwrap();
        assert_eq!(y, vec![0.25, -0.5, 1.0]);
    }

    #[test]
    fn cheb2_application_error_certified() {
        let prob = probgen::poisson1d(63, false).unwrap();
        let sm = make_chebyshev2(&prob.a, None, 30.0).unwrap();
        check_alpha_bound(&prob.a, &sm, 11, 1000, 24);
        assert!(make_chebyshev2(&prob.a, Some((1.0, 1.0)), 30.0).is_err());
    }

    #[test]
    fn cheb2_alpha_scales_with_sparsity_over_norm() {
        // alpha * |A| / m_dot stays bounded across sizes.
        let mut ratios = Vec::new();
        for n in [15usize, 63, 255, 1023] {
            let prob = probgen::poisson1d(n, false).unwrap();
            let sm = make_chebyshev2(&prob.a, None, 30.0).unwrap();
            let eps = p(11).unit_roundoff();
            let m_dot = 3.0 / (1.0 - 3.0 * eps);
            ratios.push(sm.alpha_m(eps) * prob.a.estimate_stats().unwrap().norm_a / m_dot);
        }
        let max = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(max <= 10.0, "ratios {ratios:?}");
    }

    #[test]
    fn cheb2_jacobi_matches_cheb2_on_constant_diagonal() {
        let prob = probgen::poisson1d(31, false).unwrap();
        let a = &prob.a;
        let cj = make_chebyshev2_jacobi(a, 30.0).unwrap();
        let c = make_chebyshev2(a, None, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z: Vec<f64> = (0..31).map(|_| rng.random::<f64>() - 0.5).collect();
        let yj = cj.apply_carrier(a, &z);
        let yc = c.apply_carrier(a, &z);
        let scale = yc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = yj
            .iter()
            .zip(&yc)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-6 * scale, "diff {diff:e} scale {scale:e}");
    }

    #[test]
    fn cheb2_jacobi_contracts_on_poisson2d() {
        let prob = probgen::poisson2d(7).unwrap();
        let sm = make_chebyshev2_jacobi(&prob.a, 30.0).unwrap();
        let oracle = EnergyOracle::new(prob.a.to_dense()).unwrap();
        let g = crate::dense::error_propagation(&prob.a, &sm);
        assert!(oracle.operator_norm(&g) < 1.0);
    }

    #[test]
    fn cheb2_jacobi_application_error_certified() {
        let prob = probgen::poisson2d(7).unwrap();
        let sm = make_chebyshev2_jacobi(&prob.a, 30.0).unwrap();
        check_alpha_bound(&prob.a, &sm, 11, 1000, 25);
    }

    #[test]
    fn alpha_bound_holds_across_tested_roundoffs() {
        let prob = probgen::poisson1d(31, false).unwrap();
        for cfg in [
            SmootherConfig::default(),
            SmootherConfig {
                kind: SmootherKindName::Jacobi,
                ..Default::default()
            },
            SmootherConfig {
                kind: SmootherKindName::Cheb2,
                ..Default::default()
            },
        ] {
            let sm = Smoother::build(&cfg, &prob.a).unwrap();
            for bits in [8, 11, 24] {
                check_alpha_bound(&prob.a, &sm, bits, 200, 30 + bits as u64);
            }
        }
    }
}
