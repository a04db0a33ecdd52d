//! Concrete residual terms used by the reconstruction.

use super::lm::{Loss, Residual};
use super::params::{BlockId, ParamSet};
use crate::camera::Intrinsics;
use crate::conic::surface_residual_grad;
use crate::geom::skew;
use nalgebra::{DMatrix, DVector, Vector2};

/// Pixel reprojection error of one track observation.
///
/// Blocks: `[camera pose (world→camera), landmark, intrinsics (6-vector)]`.
pub struct Reprojection {
    blocks: [BlockId; 3],
    pub measured: Vector2<f64>,
    pub loss: Loss,
}

impl Reprojection {
    pub fn new(
        pose: BlockId,
        point: BlockId,
        intrinsics: BlockId,
        measured: Vector2<f64>,
        loss: Loss,
    ) -> Self {
        Reprojection { blocks: [pose, point, intrinsics], measured, loss }
    }
}

impl Residual for Reprojection {
    fn blocks(&self) -> &[BlockId] {
        &self.blocks
    }

    fn dim(&self) -> usize {
        2
    }

    fn loss(&self) -> Loss {
        self.loss
    }

    fn tag(&self) -> &'static str {
        "reproj"
    }

    fn eval(&self, params: &ParamSet, jacobians: Option<&mut [DMatrix<f64>]>) -> Option<DVector<f64>> {
        let pose = params.pose(self.blocks[0]);
        let x = params.point(self.blocks[1]);
        let k = Intrinsics::from_slice(params.vec(self.blocks[2]).as_slice());
        let xc = pose.transform(x);
        let (pix, jp, jk) = k.project_with_jacobians(&xc).ok()?;
        if let Some(jacs) = jacobians {
            // δxc = δω × (R x) + δt, and R x = xc − t.
            let dxc_dw = -skew(&(xc - pose.t));
            let j_rot = jp * dxc_dw;
            jacs[0].view_mut((0, 0), (2, 3)).copy_from(&j_rot);
            jacs[0].view_mut((0, 3), (2, 3)).copy_from(&jp);
            jacs[1].copy_from(&(jp * pose.r.matrix()));
            jacs[2].copy_from(&jk);
        }
        Some(DVector::from_column_slice((pix - self.measured).as_slice()))
    }
}

/// Signed distance of a landmark from a cone surface, scaled by `weight`
/// (the induced cost is `weight²·d²/2`).
///
/// Blocks: `[cone pose (world→cone), shape (1-vector holding the slope c),
/// landmark]`. Fixing the shape block turns this into the constant-slope
/// constraint used in full bundle adjustment.
pub struct ConeSurface {
    blocks: [BlockId; 3],
    pub weight: f64,
    pub loss: Loss,
}

impl ConeSurface {
    pub fn new(pose: BlockId, shape: BlockId, point: BlockId, weight: f64, loss: Loss) -> Self {
        ConeSurface { blocks: [pose, shape, point], weight, loss }
    }
}

impl Residual for ConeSurface {
    fn blocks(&self) -> &[BlockId] {
        &self.blocks
    }

    fn dim(&self) -> usize {
        1
    }

    fn loss(&self) -> Loss {
        self.loss
    }

    fn tag(&self) -> &'static str {
        "pipe"
    }

    fn eval(&self, params: &ParamSet, jacobians: Option<&mut [DMatrix<f64>]>) -> Option<DVector<f64>> {
        let pose = params.pose(self.blocks[0]);
        let c = params.vec(self.blocks[1])[0];
        if !c.is_finite() || c <= 0.0 {
            return None;
        }
        let x = params.point(self.blocks[2]);
        let xl = pose.transform(x);
        let (res, dc, grad) = surface_residual_grad(c, &xl);
        if let Some(jacs) = jacobians {
            let g = self.weight * grad.transpose();
            jacs[0].view_mut((0, 0), (1, 3)).copy_from(&(g * -skew(&(xl - pose.t))));
            jacs[0].view_mut((0, 3), (1, 3)).copy_from(&g);
            jacs[1][(0, 0)] = self.weight * dc;
            jacs[2].copy_from(&(g * pose.r.matrix()));
        }
        Some(DVector::from_element(1, self.weight * res))
    }
}

/// Signed distance of a landmark from a cylinder surface, scaled by `weight`.
///
/// Blocks: `[cylinder pose (world→cylinder, axis along local z), radius
/// (1-vector), landmark]`. Translation along the axis and rotation about it
/// do not move the surface; mask those pose components (tangent indices 2
/// and 5) or the normal equations go singular.
pub struct CylinderSurface {
    blocks: [BlockId; 3],
    pub weight: f64,
    pub loss: Loss,
}

impl CylinderSurface {
    pub fn new(pose: BlockId, radius: BlockId, point: BlockId, weight: f64, loss: Loss) -> Self {
        CylinderSurface { blocks: [pose, radius, point], weight, loss }
    }

    /// The free-component mask for the cylinder's pose block.
    pub fn pose_mask() -> [bool; 6] {
        [true, true, false, true, true, false]
    }
}

impl Residual for CylinderSurface {
    fn blocks(&self) -> &[BlockId] {
        &self.blocks
    }

    fn dim(&self) -> usize {
        1
    }

    fn loss(&self) -> Loss {
        self.loss
    }

    fn tag(&self) -> &'static str {
        "pipe"
    }

    fn eval(&self, params: &ParamSet, jacobians: Option<&mut [DMatrix<f64>]>) -> Option<DVector<f64>> {
        let pose = params.pose(self.blocks[0]);
        let r = params.vec(self.blocks[1])[0];
        if !r.is_finite() || r <= 0.0 {
            return None;
        }
        let x = params.point(self.blocks[2]);
        let xl = pose.transform(x);
        let rho = xl.fixed_rows::<2>(0).norm();
        if rho < 1e-12 {
            return None;
        }
        if let Some(jacs) = jacobians {
            let grad = nalgebra::Vector3::new(xl.x / rho, xl.y / rho, 0.0);
            let g = self.weight * grad.transpose();
            jacs[0].view_mut((0, 0), (1, 3)).copy_from(&(g * -skew(&(xl - pose.t))));
            jacs[0].view_mut((0, 3), (1, 3)).copy_from(&g);
            jacs[1][(0, 0)] = -self.weight;
            jacs[2].copy_from(&(g * pose.r.matrix()));
        }
        Some(DVector::from_element(1, self.weight * (rho - r)))
    }
}
