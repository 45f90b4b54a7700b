//! Model problem generators: 1D and 2D Poisson operators, linear
//! interpolation stencils, manufactured right-hand sides, and the oscillatory
//! rounding case used by the limiting-accuracy study.

use crate::error::{Error, Result};
use crate::fpemu::PrecisionSpec;
use crate::sparse::{Csr, SparseSpd};

/// Topology of a generated problem, used to pick the interpolation stencil
/// when a hierarchy is coarsened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridShape {
    /// `n` interior points on a line.
    Line(usize),
    /// `n_side` x `n_side` interior points on the unit square.
    Square(usize),
}

/// Interpolation operator stored in both row orientations so that restriction
/// (`P^T r`) and prolongation (`P d`) are clean sequential row dots.
#[derive(Debug, Clone)]
pub struct Interp {
    p: Csr,
    pt: Csr,
    m_p: usize,
}

impl Interp {
    pub fn new(p: Csr) -> Interp {
        let pt = p.transpose();
        let m_p = p.max_row_nnz().max(pt.max_row_nnz());
        Interp { p, pt, m_p }
    }

    pub fn p(&self) -> &Csr {
        &self.p
    }

    pub fn pt(&self) -> &Csr {
        &self.pt
    }

    pub fn fine_dim(&self) -> usize {
        self.p.rows()
    }

    pub fn coarse_dim(&self) -> usize {
        self.p.cols()
    }

    /// Maximum nonzeros in any row or column.
    pub fn m_p(&self) -> usize {
        self.m_p
    }
}

/// A generated matrix equation together with the discretization parameters the
/// multilevel theory consumes.
#[derive(Debug, Clone)]
pub struct ModelProblem {
    pub name: String,
    pub grid: GridShape,
    pub a: SparseSpd,
    pub b: Vec<f64>,
    pub exact_solution: Option<Vec<f64>>,
    /// PDE order analogue `2m`.
    pub order_2m: u32,
    /// Discretization order `q` in the energy norm.
    pub disc_q: f64,
}

impl ModelProblem {
    pub fn by_name(name: &str, n: usize) -> Result<ModelProblem> {
        match name {
            "poisson1d" => poisson1d(n, false),
            "poisson1d-reaction" => poisson1d(n, true),
            "poisson2d" => poisson2d(n),
            other => Err(Error::invalid(format!("unknown problem {other:?}"))),
        }
    }
}

/// Standard 3-point stencil for `-u''` (plus a lumped reaction term when
/// requested) on `n` interior points of the unit interval, `h = 1/(n+1)`.
/// The stiffness carries a `1/h` scaling so Galerkin coarsening with the
/// `[1/2, 1, 1/2]` stencil reproduces the coarse-grid operator exactly.
pub fn poisson1d(n: usize, reaction: bool) -> Result<ModelProblem> {
    if n < 2 {
        return Err(Error::invalid(format!("poisson1d needs n >= 2, got {n}")));
    }
    let h = 1.0 / (n as f64 + 1.0);
    let inv_h = 1.0 / h;
    let diag = if reaction { 2.0 * inv_h + h } else { 2.0 * inv_h };
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        t.push((i, i, diag));
        if i + 1 < n {
            t.push((i, i + 1, -inv_h));
            t.push((i + 1, i, -inv_h));
        }
    }
    let a = SparseSpd::from_triplets(n, &t)?;
    let u: Vec<f64> = (1..=n)
        .map(|i| (std::f64::consts::PI * i as f64 * h).sin())
        .collect();
    let b = a.matvec_carrier(&u);
    Ok(ModelProblem {
        name: if reaction {
            "poisson1d-reaction".into()
        } else {
            "poisson1d".into()
        },
        grid: GridShape::Line(n),
        a,
        b,
        exact_solution: Some(u),
        order_2m: 2,
        disc_q: 1.0,
    })
}

/// 5-point Laplacian on `n_side^2` interior points of the unit square with
/// the conventional `1/h^2` scaling.
pub fn poisson2d(n_side: usize) -> Result<ModelProblem> {
    if n_side < 2 {
        return Err(Error::invalid(format!(
            "poisson2d needs n_side >= 2, got {n_side}"
        )));
    }
    let h = 1.0 / (n_side as f64 + 1.0);
    let s = 1.0 / (h * h);
    let k1 = unscaled_laplacian_1d(n_side);
    let eye = Csr::identity(n_side);
    let a2 = {
        let mut t = k1.kron(&eye).triplets();
        for (i, j, v) in eye.kron(&k1).triplets() {
            t.push((i, j, v));
        }
        // Merge the two Kronecker terms.
        let mut merged = std::collections::BTreeMap::new();
        for (i, j, v) in t {
            *merged.entry((i, j)).or_insert(0.0) += v;
        }
        let triplets: Vec<_> = merged.into_iter().map(|((i, j), v)| (i, j, v * s)).collect();
        Csr::from_triplets(n_side * n_side, n_side * n_side, &triplets)?
    };
    let a = SparseSpd::new(a2)?;
    let n = n_side * n_side;
    let mut u = vec![0.0; n];
    for iy in 0..n_side {
        for ix in 0..n_side {
            let x = (ix as f64 + 1.0) * h;
            let y = (iy as f64 + 1.0) * h;
            u[iy * n_side + ix] =
                (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
        }
    }
    let b = a.matvec_carrier(&u);
    Ok(ModelProblem {
        name: "poisson2d".into(),
        grid: GridShape::Square(n_side),
        a,
        b,
        exact_solution: Some(u),
        order_2m: 2,
        disc_q: 1.0,
    })
}

fn unscaled_laplacian_1d(n: usize) -> Csr {
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        t.push((i, i, 2.0));
        if i + 1 < n {
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
    }
    Csr::from_triplets(n, n, &t).expect("laplacian")
}

/// 1D linear interpolation with the positive column stencil `[1/2, 1, 1/2]`;
/// the coarse grid keeps every other fine point. Requires odd `n_fine >= 3`.
pub fn linear_interpolation(n_fine: usize) -> Result<Interp> {
    if n_fine < 3 || n_fine % 2 == 0 {
        return Err(Error::invalid(format!(
            "linear interpolation needs odd n_fine >= 3, got {n_fine}"
        )));
    }
    let n_coarse = (n_fine - 1) / 2;
    let mut t = Vec::with_capacity(3 * n_coarse);
    for c in 0..n_coarse {
        let center = 2 * c + 1;
        t.push((center - 1, c, 0.5));
        t.push((center, c, 1.0));
        t.push((center + 1, c, 0.5));
    }
    Ok(Interp::new(Csr::from_triplets(n_fine, n_coarse, &t)?))
}

/// Tensor-product (bilinear) interpolation for the square grid.
pub fn bilinear_interpolation(n_side_fine: usize) -> Result<Interp> {
    let p1 = linear_interpolation(n_side_fine)?;
    Ok(Interp::new(p1.p().kron(p1.p())))
}

/// No-flux (Neumann) Poisson-reaction operator on `n` points, `h = 1/(n+1)`:
/// the stiffness has `1/h` end entries instead of `2/h`, so constants carry
/// only the mass-term energy. This is the operator behind the rounding-floor
/// study, where a tiny oscillation must dominate the energy of the constant.
pub fn poisson1d_noflow_reaction(n: usize) -> Result<SparseSpd> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "no-flow operator needs n >= 3, got {n}"
        )));
    }
    let h = 1.0 / (n as f64 + 1.0);
    let inv_h = 1.0 / h;
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        let stiff = if i == 0 || i == n - 1 { inv_h } else { 2.0 * inv_h };
        t.push((i, i, stiff + h));
        if i + 1 < n {
            t.push((i, i + 1, -inv_h));
            t.push((i + 1, i, -inv_h));
        }
    }
    SparseSpd::from_triplets(n, &t)
}

/// The oscillatory iterate `x = 1 + y` with `y` alternating `±amplitude/2`,
/// together with the predicted relative energy error `sqrt(2) h^{-1} eps` of
/// rounding `x` toward zero at `work` precision.
#[derive(Debug, Clone)]
pub struct OscillatoryCase {
    pub x: Vec<f64>,
    pub predicted_rel_error: f64,
}

pub fn oscillatory_rounding_case(
    n: usize,
    amplitude: f64,
    work: PrecisionSpec,
) -> Result<OscillatoryCase> {
    if n < 3 {
        return Err(Error::invalid(format!(
            "oscillatory case needs n >= 3, got {n}"
        )));
    }
    let eps = work.unit_roundoff();
    if !(0.0..eps).contains(&amplitude) {
        return Err(Error::invalid(format!(
            "amplitude {amplitude:e} must satisfy 0 <= amplitude < {eps:e}"
        )));
    }
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            1.0 + sign * amplitude / 2.0
        })
        .collect();
    let predicted = if amplitude == 0.0 {
        0.0
    } else {
        2f64.sqrt() * (n as f64 + 1.0) * eps
    };
    Ok(OscillatoryCase {
        x,
        predicted_rel_error: predicted,
    })
}

/// Analytic 1D Poisson eigenvalues `(2 - 2 cos(k pi h))/h (+ h)` used as test
/// oracles against the numeric estimators.
pub fn poisson1d_eigenvalue(n: usize, k: usize, reaction: bool) -> f64 {
    let h = 1.0 / (n as f64 + 1.0);
    let lam = (2.0 - 2.0 * (k as f64 * std::f64::consts::PI * h).cos()) / h;
    if reaction {
        lam + h
    } else {
        lam
    }
}
