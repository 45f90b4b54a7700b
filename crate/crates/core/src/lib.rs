//! A mixed-precision multigrid laboratory for sparse symmetric positive
//! definite systems.
//!
//! Solvers run under software-emulated floating-point precisions (a p-bit
//! significand carried in `f64`), and every closed-form rounding-error bound
//! of the underlying convergence theory is evaluated next to the measured
//! behaviour it predicts: limiting accuracy of iterative refinement, rate
//! perturbations of two-grid and progressive-precision V-cycles, and the
//! per-level accuracy condition of full multigrid.

pub mod bounds;
pub mod cli;
pub mod cycles;
pub mod dense;
pub mod error;
pub mod fpemu;
pub mod hierarchy;
pub mod probgen;
pub mod refine;
pub mod smoothers;
pub mod sparse;

pub use error::{Error, Result};
pub use fpemu::{BinOp, PrecisionSpec, RoundingMode};
pub use hierarchy::{
    build_hierarchy, galerkin_coarsen, restrict_rhs, GridLevel, Hierarchy, PrecisionPolicy,
    PrecisionTriple,
};
pub use probgen::{GridShape, Interp, ModelProblem};
pub use refine::{detect_floor, fmg, ir_solve, InnerSolver, IrOptions, SolveReport};
pub use smoothers::{Smoother, SmootherConfig};
pub use sparse::{Csr, SparseSpd, SpectralStats};
