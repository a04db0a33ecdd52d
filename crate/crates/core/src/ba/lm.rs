//! Levenberg-Marquardt with block structure and Schur elimination of points.
//!
//! The normal equations split into a dense part (poses, intrinsics, shape
//! parameters) and a block-diagonal part (one 3×3 block per landmark).
//! Eliminating the landmarks first leaves a reduced system whose size is the
//! number of dense parameters, which stays small even when the landmark count
//! does not.

use super::params::{BlockId, BlockValue, ParamSet};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::collections::{BTreeMap, HashMap};

/// Residual value substituted (per component) when an observation cannot be
/// evaluated, e.g. a landmark that moved behind its camera during a trial
/// step. The cost becomes a large constant with zero gradient, so such steps
/// lose cost comparisons instead of crashing or silently dropping terms.
pub const INVALID_RESIDUAL: f64 = 1e4;

/// Robust loss applied to one residual vector's squared norm.
#[derive(Clone, Copy, Debug)]
pub enum Loss {
    /// Plain least squares: `ρ(s²) = s²`.
    Squared,
    /// Cauchy: `ρ(s²) = σ²·ln(1 + s²/σ²)`, which caps any single residual's
    /// influence near `σ`.
    Cauchy { scale: f64 },
}

impl Loss {
    /// Returns `(ρ(s²), w)` with the IRLS weight `w = ρ'(s²)`.
    fn rho_and_weight(&self, s2: f64) -> (f64, f64) {
        match *self {
            Loss::Squared => (s2, 1.0),
            Loss::Cauchy { scale } => {
                let z = s2 / (scale * scale);
                (scale * scale * z.ln_1p(), 1.0 / (1.0 + z))
            }
        }
    }
}

/// One term of the objective.
///
/// When a jacobian slice is provided, implementations must overwrite every
/// entry of `jacobians[i]` (a preallocated `dim × dof` matrix, one per entry
/// of [`Residual::blocks`], in order); cost-only evaluations pass `None`.
/// Returning `None` marks the term invalid for the current parameters. A
/// block must not appear twice in one residual's block list.
pub trait Residual {
    fn blocks(&self) -> &[BlockId];
    fn dim(&self) -> usize;
    fn loss(&self) -> Loss {
        Loss::Squared
    }
    /// Label under which this term's cost is reported.
    fn tag(&self) -> &'static str {
        "residual"
    }
    fn eval(&self, params: &ParamSet, jacobians: Option<&mut [DMatrix<f64>]>)
        -> Option<DVector<f64>>;
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative cost decrease below which an accepted step terminates.
    pub ftol: f64,
    /// Gradient infinity norm below which the current point is declared
    /// stationary (checked before stepping).
    pub gtol: f64,
    /// Step infinity norm below which an accepted step terminates.
    pub xtol: f64,
    /// Initial damping; 0 tries plain Gauss-Newton first.
    pub initial_lambda: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iters: 100, ftol: 1e-10, gtol: 1e-12, xtol: 1e-14, initial_lambda: 0.0 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Termination {
    /// Gradient infinity norm fell below `gtol`.
    Gradient,
    /// Relative cost decrease of an accepted step fell below `ftol`.
    CostDrop,
    /// Accepted step was shorter than `xtol`.
    StepSize,
    MaxIterations,
    /// Damping grew past its ceiling without finding a downhill step.
    Stalled,
    /// Nothing to optimize: no free parameters or no residuals.
    NoFreeParameters,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TagCost {
    pub count: usize,
    pub cost: f64,
    pub invalid: usize,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub termination: Termination,
    /// Final cost split by [`Residual::tag`].
    pub cost_by_tag: BTreeMap<&'static str, TagCost>,
}

/// Where a block's columns land in the assembled system.
#[derive(Clone, Copy, Debug)]
enum Slot {
    /// Fixed or fully masked: contributes nothing.
    Inert,
    /// Columns `offset..offset + ncols` of the dense part.
    Dense { offset: usize, ncols: usize },
    /// Eliminated landmark block `entry`.
    Point { entry: usize },
}

struct Layout {
    slot_of_block: Vec<Slot>,
    dense_dim: usize,
    /// Point blocks in elimination order.
    point_blocks: Vec<BlockId>,
    /// For each point entry, the dense column ranges it shares residuals
    /// with, as `(offset, ncols)`; the per-iteration coupling matrices follow
    /// this layout.
    partners: Vec<Vec<(usize, usize)>>,
    /// Offset within a point's partner list, keyed by dense offset.
    partner_slot: Vec<HashMap<usize, usize>>,
    /// Dense blocks as `(block, offset)`.
    dense_blocks: Vec<(BlockId, usize)>,
}

fn build_layout(params: &ParamSet, residuals: &[&dyn Residual]) -> Layout {
    let mut slot_of_block = vec![Slot::Inert; params.len()];
    let mut dense_blocks = Vec::new();
    let mut point_blocks = Vec::new();
    let mut dense_dim = 0usize;
    for (i, slot) in slot_of_block.iter_mut().enumerate() {
        let id = BlockId(i);
        let active = params.active_components(id);
        if active.is_empty() {
            continue;
        }
        let full_point =
            matches!(params.value(id), BlockValue::Point(_)) && active.len() == 3;
        if full_point {
            *slot = Slot::Point { entry: point_blocks.len() };
            point_blocks.push(id);
        } else {
            *slot = Slot::Dense { offset: dense_dim, ncols: active.len() };
            dense_blocks.push((id, dense_dim));
            dense_dim += active.len();
        }
    }

    // Discover point-dense couplings from the residual graph.
    let mut partner_slot: Vec<HashMap<usize, usize>> = vec![HashMap::new(); point_blocks.len()];
    let mut partners: Vec<Vec<(usize, usize)>> = vec![Vec::new(); point_blocks.len()];
    for r in residuals {
        let ids = r.blocks();
        for &pid in ids {
            let Slot::Point { entry: pe } = slot_of_block[pid.0] else { continue };
            for &did in ids {
                if let Slot::Dense { offset, ncols } = slot_of_block[did.0] {
                    if !partner_slot[pe].contains_key(&offset) {
                        partner_slot[pe].insert(offset, partners[pe].len());
                        partners[pe].push((offset, ncols));
                    }
                }
            }
        }
    }

    Layout { slot_of_block, dense_dim, point_blocks, partners, partner_slot, dense_blocks }
}

fn cost_only(params: &ParamSet, residuals: &[&dyn Residual]) -> f64 {
    residuals
        .iter()
        .map(|r| match r.eval(params, None) {
            Some(v) => 0.5 * r.loss().rho_and_weight(v.norm_squared()).0,
            None => 0.5 * r.dim() as f64 * INVALID_RESIDUAL * INVALID_RESIDUAL,
        })
        .sum()
}

fn cost_by_tag(params: &ParamSet, residuals: &[&dyn Residual]) -> (f64, BTreeMap<&'static str, TagCost>) {
    let mut tags: BTreeMap<&'static str, TagCost> = BTreeMap::new();
    let mut total = 0.0;
    for r in residuals {
        let entry = tags.entry(r.tag()).or_default();
        entry.count += 1;
        let c = match r.eval(params, None) {
            Some(v) => 0.5 * r.loss().rho_and_weight(v.norm_squared()).0,
            None => {
                entry.invalid += 1;
                0.5 * r.dim() as f64 * INVALID_RESIDUAL * INVALID_RESIDUAL
            }
        };
        entry.cost += c;
        total += c;
    }
    (total, tags)
}

/// Assembles the full (undamped) Gauss-Newton normal matrix over every free
/// component, landmarks included, in block declaration order. Used for rank
/// diagnostics on small problems; large problems go through [`solve`], which
/// never forms this matrix.
pub fn normal_matrix(params: &ParamSet, residuals: &[&dyn Residual]) -> DMatrix<f64> {
    let mut offsets = vec![usize::MAX; params.len()];
    let mut dim = 0usize;
    for (i, off) in offsets.iter_mut().enumerate() {
        let active = params.active_components(BlockId(i));
        if !active.is_empty() {
            *off = dim;
            dim += active.len();
        }
    }
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for r in residuals {
        let mut scratch: Vec<DMatrix<f64>> = r
            .blocks()
            .iter()
            .map(|&b| DMatrix::zeros(r.dim(), params.value(b).dof()))
            .collect();
        let Some(resid) = r.eval(params, Some(&mut scratch)) else { continue };
        let (_, w) = r.loss().rho_and_weight(resid.norm_squared());
        let ids = r.blocks();
        let mut reduced: Vec<(usize, DMatrix<f64>)> = Vec::new();
        for (bi, &id) in ids.iter().enumerate() {
            if offsets[id.0] == usize::MAX {
                continue;
            }
            let active = params.active_components(id);
            let mut jr = DMatrix::zeros(r.dim(), active.len());
            for (k, &col) in active.iter().enumerate() {
                jr.column_mut(k).copy_from(&scratch[bi].column(col));
            }
            reduced.push((offsets[id.0], jr * w.sqrt()));
        }
        for (oi, ji) in &reduced {
            for (oj, jj) in &reduced {
                let block = ji.transpose() * jj;
                let mut view = h.view_mut((*oi, *oj), (block.nrows(), block.ncols()));
                view += &block;
            }
        }
    }
    h
}

/// Minimizes the robustified sum of squares over the free blocks in place.
pub fn solve(params: &mut ParamSet, residuals: &[&dyn Residual], opts: &SolveOptions) -> SolveReport {
    let layout = build_layout(params, residuals);
    let (initial_cost, tags) = cost_by_tag(params, residuals);
    if (layout.dense_dim == 0 && layout.point_blocks.is_empty()) || residuals.is_empty() {
        return SolveReport {
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            termination: Termination::NoFreeParameters,
            cost_by_tag: tags,
        };
    }

    // Per-residual jacobian scratch, reused across iterations.
    let mut scratch: Vec<Vec<DMatrix<f64>>> = residuals
        .iter()
        .map(|r| {
            r.blocks()
                .iter()
                .map(|&b| DMatrix::zeros(r.dim(), params.value(b).dof()))
                .collect()
        })
        .collect();

    let mut cost = initial_cost;
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;

    let npts = layout.point_blocks.len();
    let d = layout.dense_dim;

    'outer: for _ in 0..opts.max_iters {
        // Assemble the (undamped) normal equations.
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut gd = DVector::<f64>::zeros(d);
        let mut c_blocks = vec![Matrix3::<f64>::zeros(); npts];
        let mut gp = vec![Vector3::<f64>::zeros(); npts];
        let mut b_blocks: Vec<Vec<DMatrix<f64>>> = layout
            .partners
            .iter()
            .map(|ps| ps.iter().map(|&(_, ncols)| DMatrix::zeros(ncols, 3)).collect())
            .collect();

        for (ri, r) in residuals.iter().enumerate() {
            let Some(resid) = r.eval(params, Some(&mut scratch[ri])) else { continue };
            let (_, w) = r.loss().rho_and_weight(resid.norm_squared());
            let sw = w.sqrt();
            let ids = r.blocks();
            // Reduced (active-column), weight-scaled jacobians.
            let mut reduced: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(ids.len());
            for (bi, &id) in ids.iter().enumerate() {
                if matches!(layout.slot_of_block[id.0], Slot::Inert) {
                    continue;
                }
                let active = params.active_components(id);
                let full = &scratch[ri][bi];
                let mut jr = DMatrix::zeros(r.dim(), active.len());
                for (k, &col) in active.iter().enumerate() {
                    jr.column_mut(k).copy_from(&full.column(col));
                }
                reduced.push((bi, jr * sw));
            }
            let rw = &resid * sw;

            for (i, (bi, ji)) in reduced.iter().enumerate() {
                let slot_i = layout.slot_of_block[ids[*bi].0];
                let gi = ji.transpose() * &rw;
                match slot_i {
                    Slot::Dense { offset, ncols } => {
                        let mut rows = gd.rows_mut(offset, ncols);
                        rows += &gi;
                    }
                    Slot::Point { entry } => {
                        gp[entry] += Vector3::new(gi[0], gi[1], gi[2]);
                    }
                    Slot::Inert => unreachable!(),
                }
                for (bj, jj) in reduced.iter().skip(i) {
                    let slot_j = layout.slot_of_block[ids[*bj].0];
                    let h = ji.transpose() * jj;
                    match (slot_i, slot_j) {
                        (Slot::Dense { offset: oi, ncols: ni }, Slot::Dense { offset: oj, ncols: nj }) => {
                            let mut view = a.view_mut((oi, oj), (ni, nj));
                            view += &h;
                            if oi != oj {
                                let mut sym = a.view_mut((oj, oi), (nj, ni));
                                sym += &h.transpose();
                            }
                        }
                        (Slot::Dense { offset: oi, .. }, Slot::Point { entry }) => {
                            let k = layout.partner_slot[entry][&oi];
                            b_blocks[entry][k] += &h;
                        }
                        (Slot::Point { entry }, Slot::Dense { offset: oj, .. }) => {
                            let k = layout.partner_slot[entry][&oj];
                            b_blocks[entry][k] += h.transpose();
                        }
                        (Slot::Point { entry: ei }, Slot::Point { entry: ej }) => {
                            debug_assert_eq!(ei, ej, "two landmark blocks in one residual");
                            c_blocks[ei] += Matrix3::from_iterator(h.iter().copied());
                        }
                        (Slot::Inert, _) | (_, Slot::Inert) => unreachable!(),
                    }
                }
            }
        }

        // Stationarity check before attempting any step.
        let mut ginf = if d > 0 { gd.amax() } else { 0.0 };
        for g in &gp {
            ginf = ginf.max(g.amax());
        }
        if ginf <= opts.gtol {
            termination = Termination::Gradient;
            break 'outer;
        }

        // Inner damping loop: factor, step, test.
        let mut rejects = 0usize;
        loop {
            let damp = |h: f64| h + lambda * h.clamp(1e-6, 1e32);
            let mut s = a.clone();
            for i in 0..d {
                s[(i, i)] = damp(a[(i, i)]);
            }
            let mut rhs = -&gd;
            let mut cinv = vec![Matrix3::<f64>::zeros(); npts];
            let mut ok = true;
            for e in 0..npts {
                let mut cb = c_blocks[e];
                for i in 0..3 {
                    cb[(i, i)] = damp(cb[(i, i)]);
                }
                let Some(inv) = cb.try_inverse() else {
                    ok = false;
                    break;
                };
                cinv[e] = inv;
                let ci_gp = inv * gp[e];
                for (k, &(off, ncols)) in layout.partners[e].iter().enumerate() {
                    let b = &b_blocks[e][k];
                    let mut rows = rhs.rows_mut(off, ncols);
                    rows += b * ci_gp;
                    for (k2, &(off2, ncols2)) in layout.partners[e].iter().enumerate() {
                        let prod = b * inv * b_blocks[e][k2].transpose();
                        let mut view = s.view_mut((off, off2), (ncols, ncols2));
                        view -= &prod;
                    }
                }
            }

            let dx = if !ok {
                None
            } else if d > 0 {
                s.cholesky().map(|ch| ch.solve(&rhs))
            } else {
                Some(DVector::zeros(0))
            };

            let Some(dx) = dx else {
                lambda = (lambda * 10.0).max(1e-6);
                rejects += 1;
                if lambda > 1e14 || rejects > 30 {
                    termination = Termination::Stalled;
                    break 'outer;
                }
                continue;
            };

            // Back-substitute the landmark steps.
            let mut dp = vec![Vector3::<f64>::zeros(); npts];
            let mut step_inf = if d > 0 { dx.amax() } else { 0.0 };
            for e in 0..npts {
                let mut rhs_p = -gp[e];
                for (k, &(off, ncols)) in layout.partners[e].iter().enumerate() {
                    rhs_p -= b_blocks[e][k].transpose() * dx.rows(off, ncols);
                }
                dp[e] = cinv[e] * rhs_p;
                step_inf = step_inf.max(dp[e].amax());
            }

            // Trial step.
            let snap = params.snapshot();
            for &(id, offset) in &layout.dense_blocks {
                let active = params.active_components(id);
                let mut full = vec![0.0; params.value(id).dof()];
                for (k, &col) in active.iter().enumerate() {
                    full[col] = dx[offset + k];
                }
                params.retract_block(id, &full);
            }
            for (e, &id) in layout.point_blocks.iter().enumerate() {
                params.retract_block(id, dp[e].as_slice());
            }

            let new_cost = cost_only(params, residuals);
            if new_cost.is_finite() && new_cost < cost {
                let drop = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                cost = new_cost;
                iterations += 1;
                lambda = if lambda < 1e-14 { 0.0 } else { lambda / 3.0 };
                if drop < opts.ftol {
                    termination = Termination::CostDrop;
                    break 'outer;
                }
                if step_inf < opts.xtol {
                    termination = Termination::StepSize;
                    break 'outer;
                }
                break;
            }

            params.restore(&snap);
            lambda = (lambda * 10.0).max(1e-6);
            rejects += 1;
            if lambda > 1e14 || rejects > 30 {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    let (final_cost, cost_by_tag) = cost_by_tag(params, residuals);
    SolveReport { initial_cost, final_cost, iterations, termination, cost_by_tag }
}
