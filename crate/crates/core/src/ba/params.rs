//! Parameter blocks shared by all least-squares problems.

use crate::geom::Pose;
use nalgebra::{DVector, Vector3};

/// Handle to a parameter block inside a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct BlockId(pub(crate) usize);

/// One optimizable quantity. Poses update multiplicatively on the rotation
/// (tangent layout `[ω, δt]`), everything else additively.
#[derive(Clone, Debug)]
pub enum BlockValue {
    Pose(Pose),
    Point(Vector3<f64>),
    Vec(DVector<f64>),
}

impl BlockValue {
    pub fn dof(&self) -> usize {
        match self {
            BlockValue::Pose(_) => 6,
            BlockValue::Point(_) => 3,
            BlockValue::Vec(v) => v.len(),
        }
    }

    fn retract(&mut self, step: &[f64]) {
        match self {
            BlockValue::Pose(p) => {
                let dw = Vector3::new(step[0], step[1], step[2]);
                let dt = Vector3::new(step[3], step[4], step[5]);
                *p = p.retract(&dw, &dt);
            }
            BlockValue::Point(x) => *x += Vector3::new(step[0], step[1], step[2]),
            BlockValue::Vec(v) => {
                for (vi, si) in v.iter_mut().zip(step) {
                    *vi += si;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    value: BlockValue,
    fixed: bool,
    /// Per-tangent-component freedom; `None` means all free.
    mask: Option<Vec<bool>>,
}

/// The parameter blocks of one optimization problem.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    blocks: Vec<Block>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pose(&mut self, pose: Pose) -> BlockId {
        self.push(BlockValue::Pose(pose))
    }

    pub fn add_point(&mut self, p: Vector3<f64>) -> BlockId {
        self.push(BlockValue::Point(p))
    }

    pub fn add_vec(&mut self, v: DVector<f64>) -> BlockId {
        self.push(BlockValue::Vec(v))
    }

    fn push(&mut self, value: BlockValue) -> BlockId {
        self.blocks.push(Block { value, fixed: false, mask: None });
        BlockId(self.blocks.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn set_fixed(&mut self, id: BlockId, fixed: bool) {
        self.blocks[id.0].fixed = fixed;
    }

    pub fn is_fixed(&self, id: BlockId) -> bool {
        self.blocks[id.0].fixed
    }

    /// Restricts which tangent components may move; `true` means free.
    /// Panics if the mask length differs from the block's dof.
    pub fn set_free_mask(&mut self, id: BlockId, mask: &[bool]) {
        assert_eq!(mask.len(), self.blocks[id.0].value.dof(), "mask length");
        self.blocks[id.0].mask = Some(mask.to_vec());
    }

    pub fn clear_free_mask(&mut self, id: BlockId) {
        self.blocks[id.0].mask = None;
    }

    /// Indices of the tangent components that are free to move; empty when
    /// the block is fixed.
    pub fn active_components(&self, id: BlockId) -> Vec<usize> {
        let b = &self.blocks[id.0];
        if b.fixed {
            return Vec::new();
        }
        match &b.mask {
            None => (0..b.value.dof()).collect(),
            Some(m) => m.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect(),
        }
    }

    pub fn value(&self, id: BlockId) -> &BlockValue {
        &self.blocks[id.0].value
    }

    pub fn pose(&self, id: BlockId) -> &Pose {
        match &self.blocks[id.0].value {
            BlockValue::Pose(p) => p,
            other => panic!("block {id:?} is not a pose: {other:?}"),
        }
    }

    pub fn point(&self, id: BlockId) -> &Vector3<f64> {
        match &self.blocks[id.0].value {
            BlockValue::Point(p) => p,
            other => panic!("block {id:?} is not a point: {other:?}"),
        }
    }

    pub fn vec(&self, id: BlockId) -> &DVector<f64> {
        match &self.blocks[id.0].value {
            BlockValue::Vec(v) => v,
            other => panic!("block {id:?} is not a vector: {other:?}"),
        }
    }

    pub fn set_pose(&mut self, id: BlockId, pose: Pose) {
        match &mut self.blocks[id.0].value {
            BlockValue::Pose(p) => *p = pose,
            other => panic!("block {id:?} is not a pose: {other:?}"),
        }
    }

    pub fn set_point(&mut self, id: BlockId, x: Vector3<f64>) {
        match &mut self.blocks[id.0].value {
            BlockValue::Point(p) => *p = x,
            other => panic!("block {id:?} is not a point: {other:?}"),
        }
    }

    pub fn set_vec(&mut self, id: BlockId, v: DVector<f64>) {
        match &mut self.blocks[id.0].value {
            BlockValue::Vec(old) => {
                assert_eq!(old.len(), v.len(), "vector block length");
                *old = v;
            }
            other => panic!("block {id:?} is not a vector: {other:?}"),
        }
    }

    pub(crate) fn retract_block(&mut self, id: BlockId, step: &[f64]) {
        debug_assert_eq!(step.len(), self.blocks[id.0].value.dof());
        self.blocks[id.0].value.retract(step);
    }

    pub(crate) fn snapshot(&self) -> Vec<BlockValue> {
        self.blocks.iter().map(|b| b.value.clone()).collect()
    }

    pub(crate) fn restore(&mut self, snap: &[BlockValue]) {
        for (b, s) in self.blocks.iter_mut().zip(snap) {
            b.value = s.clone();
        }
    }
}
