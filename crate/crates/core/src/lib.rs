//! Monocular reconstruction of pipe networks from fisheye video.
//!
//! The crate implements an incremental structure-from-motion pipeline that is
//! specialized for the inside of tube networks: while the model grows, right
//! circular cones are detected among the triangulated points and every point
//! assigned to a pipe contributes a soft cylinder constraint (the pipe radius
//! is known from the part drawing) to bundle adjustment. The constraint pins
//! the metric scale of the model and suppresses the scale drift that plain
//! reprojection-only SfM accumulates inside self-similar tubes.
//!
//! Pipeline stages:
//!
//! 1. [`sim`] — synthetic pipe networks, camera trajectories and noisy track
//!    generation (the built-in test bench; everything is deterministic per seed),
//! 2. [`sfm`] — two-view initialization, P3P registration, triangulation and
//!    the incremental driver,
//! 3. [`conic`] — 9-point minimal cone fitting, quadric decomposition and the
//!    incremental pipe-instance detector,
//! 4. [`ba`] — the Levenberg-Marquardt core with reprojection and cylinder
//!    residuals (used by calibration, refinement and bundle adjustment alike),
//! 5. [`eval`] — radius-rate error metrics, post-hoc baseline scaling and
//!    point-cloud export.

pub mod ba;
pub mod camera;
pub mod config;
pub mod conic;
pub mod eval;
pub mod geom;
pub mod io;
pub mod ransac;
pub mod sfm;
pub mod sim;

pub use camera::Intrinsics;
pub use geom::Pose;
