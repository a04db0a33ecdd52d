//! Nonlinear least squares for pose, structure, and pipe-shape refinement.
//!
//! One solver serves every optimization in the pipeline: pose-only refinement
//! after registration, landmark refinement after triangulation, cone and
//! cylinder shape fitting, windowed bundle adjustment, and the full
//! surface-constrained adjustment. Problems are declared as parameter blocks
//! ([`ParamSet`]) plus residual terms ([`Residual`]); landmark blocks are
//! eliminated with the Schur complement so the factored system stays at the
//! size of the poses and shared parameters.

mod lm;
mod params;
mod residuals;

pub use lm::{
    normal_matrix, solve, Loss, Residual, SolveOptions, SolveReport, TagCost, Termination,
    INVALID_RESIDUAL,
};
pub use params::{BlockId, BlockValue, ParamSet};
pub use residuals::{ConeSurface, CylinderSurface, Reprojection};
