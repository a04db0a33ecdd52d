//! Incremental structure from motion over fisheye track observations.
//!
//! The submodules provide the geometric estimators (absolute pose from three
//! points, relative pose from ray correspondences, midpoint triangulation);
//! [`pipeline`] chains them into the full incremental reconstruction with
//! interleaved pipe detection and constrained refinement.

pub mod epipolar;
pub mod p3p;
pub mod triangulate;

pub use epipolar::{relative_pose_ransac, RelativePose};
pub use p3p::solve_p3p;
pub use triangulate::{triangulate_midpoint, Triangulated};

use thiserror::Error;

/// Failures surfaced by the reconstruction driver.
#[derive(Debug, Error)]
pub enum SfmError {
    /// No starting pair produced a usable two-view geometry.
    #[error("initialization failed after trying {attempts} frame pairs: {reason}")]
    InitFailed { attempts: usize, reason: String },
    /// A direct registration call lacked the minimum 2D-3D support.
    #[error("frame {frame} has {got} correspondences with triangulated points, need {need}")]
    TooFewCorrespondences { frame: usize, got: usize, need: usize },
    /// Pose consensus failed for a frame.
    #[error("no consensus pose for frame {frame} ({candidates} correspondences)")]
    RegistrationFailed { frame: usize, candidates: usize },
    /// Too many consecutive frames failed to register.
    #[error("tracking lost: {registered} of {total} frames registered, first permanent loss at frame {frame}")]
    TrackingLost { frame: usize, registered: usize, total: usize },
}
