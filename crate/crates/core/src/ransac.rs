//! Seeded RANSAC driver shared by the two-view, PnP and cone estimators.

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct RansacParams {
    pub max_iters: usize,
    /// Probability that at least one all-inlier sample is drawn; drives the
    /// adaptive iteration bound.
    pub confidence: f64,
    pub min_iters: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams { max_iters: 2000, confidence: 0.99, min_iters: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult<M> {
    pub model: M,
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Generic hypothesize-and-verify loop.
///
/// `hypothesize` turns a minimal sample (indices into the data) into zero or
/// more candidate models; `inliers_of` scores a candidate and returns the
/// supporting indices. The best-supported model wins. Deterministic for a
/// given `rng` state.
pub fn ransac<M>(
    rng: &mut ChaCha8Rng,
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    mut hypothesize: impl FnMut(&[usize]) -> Vec<M>,
    mut inliers_of: impl FnMut(&M) -> Vec<usize>,
) -> Option<RansacResult<M>> {
    if n < sample_size {
        return None;
    }
    let mut best: Option<RansacResult<M>> = None;
    let mut bound = params.max_iters;
    let mut iter = 0;
    while iter < bound.min(params.max_iters) || iter < params.min_iters {
        iter += 1;
        let idx: Vec<usize> = sample_indices(rng, n, sample_size).into_iter().collect();
        for model in hypothesize(&idx) {
            let inliers = inliers_of(&model);
            if best.as_ref().is_none_or(|b| inliers.len() > b.inliers.len()) {
                let ratio = inliers.len() as f64 / n as f64;
                bound = adaptive_bound(ratio, sample_size, params.confidence, params.max_iters);
                best = Some(RansacResult { model, inliers, iterations: iter });
            }
        }
    }
    best.map(|mut b| {
        b.iterations = iter;
        b
    })
}

/// Number of iterations needed to hit an all-inlier sample with the requested
/// confidence, given the current inlier ratio.
fn adaptive_bound(ratio: f64, sample_size: usize, confidence: f64, cap: usize) -> usize {
    if ratio <= 0.0 {
        return cap;
    }
    let p_good = ratio.powi(sample_size as i32);
    if p_good >= 1.0 - 1e-12 {
        return 1;
    }
    let denom = (1.0 - p_good).ln();
    if denom >= 0.0 {
        return cap;
    }
    let need = ((1.0 - confidence).ln() / denom).ceil();
    if !need.is_finite() || need >= cap as f64 {
        cap
    } else {
        (need as usize).max(1)
    }
}
