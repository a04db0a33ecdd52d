//! Cone and cylinder geometry for pipe surfaces.
//!
//! A reconstructed pipe segment viewed by a forward-moving camera sweeps a
//! nearly cylindrical point cloud. We model it as a right circular cone so a
//! single extra parameter captures residual taper and scale drift: in the
//! cone's own frame the surface is `z' = ±c·ρ` with `ρ = √(x'² + y'²)`, and
//! as a projective quadric
//!
//! ```text
//! C ∝ [ Rᵀ D R   Rᵀ D t ]      D = diag(-c², -c², 1),   x' = R x + t.
//!     [ tᵀ D R   tᵀ D t ]
//! ```
//!
//! `c` is the axial slope: large `c` means a slowly tapering, pipe-like cone
//! and `1/c → 0` is an exact cylinder. Fits whose inverse slope falls below
//! [`MIN_INVERSE_SLOPE`] are rejected as [`ConicError::DegenerateCylinder`]
//! and re-fit with the direct cylinder model instead.
//!
//! The submodules provide, in pipeline order: the minimal 9-point quadric
//! solver used inside RANSAC ([`solver`]), quadric composition and splitting
//! plus geometric distances ([`cone`]), the degenerate-slope fallback
//! ([`cylinder`]), nonlinear shape refinement ([`refine`]), and the
//! incremental instance detector that runs alongside the reconstruction
//! ([`detect`]).

mod cone;
mod cylinder;
mod detect;
mod refine;
mod solver;

pub use cone::{
    compose_quadric, decompose_quadric, design_row, normalize_quadric, surface_distance,
    surface_residual_grad, unvech, vech, Cone,
};
pub use cylinder::{fit_cylinder, CylinderFit};
pub use detect::{DetectConfig, Detector, FrameObservations, PipeInstance, PipeShape};
pub use refine::refine_cone;
pub use solver::{algebraic_residuals, cone_from_nine_points, quadric_from_points};

use thiserror::Error;

/// Cones with inverse slope `1/c` below this are indistinguishable from
/// cylinders at the working precision and are handled by the cylinder path.
pub const MIN_INVERSE_SLOPE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    /// The design system has no unique null direction (relative second
    /// singular value `gap`), e.g. coplanar or collinear samples.
    #[error("degenerate point sample (nullspace gap {gap:.2e})")]
    DegenerateSample { gap: f64 },
    #[error("quadric is not a cone: {reason}")]
    NotACone { reason: String },
    /// Cone-like quadric whose slope exceeds the representable range.
    #[error("slope degenerates to a cylinder (1/c = {inverse_slope:.2e})")]
    DegenerateCylinder { inverse_slope: f64 },
    #[error("shape refinement failed: {0}")]
    RefineFailed(String),
}
