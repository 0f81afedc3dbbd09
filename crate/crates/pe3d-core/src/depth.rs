//! Depth mathematics: probabilistic depth expectation, regressed/
//! probabilistic fusion, the smooth-L1 and distribution-focal depth losses
//! with analytic gradients, and a small per-cell depth head for producing
//! predicted depth maps at desk scale.

use crate::bins::{bracket, DepthBins};
use crate::encode::{mlp_backward, sigmoid, MlpGrads, MlpParams};
use crate::error::{Error, Result};
use crate::geometry::DepthMap;

/// Probability floor inside logarithms.
const PROB_FLOOR: f64 = 1e-12;

/// Per-cell probability vectors over depth bins, stored bin-major is not
/// needed; cells are contiguous (`[row][col][bin]`) and each sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution {
    pub n_bins: usize,
    pub height: usize,
    pub width: usize,
    probs: Vec<f64>,
}

impl DepthDistribution {
    pub fn new(n_bins: usize, height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_bins * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_bins}x{height}x{width}"),
                got: format!("{} values", probs.len()),
            });
        }
        let dist = Self {
            n_bins,
            height,
            width,
            probs,
        };
        for row in 0..height {
            for col in 0..width {
                let cell = dist.cell(row, col);
                let sum: f64 = cell.iter().sum();
                if cell.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config {
                        path: format!("distribution[{row}][{col}]"),
                        message: format!("entries must be >= 0 and sum to 1, sum = {sum}"),
                    });
                }
            }
        }
        Ok(dist)
    }

    pub fn uniform(n_bins: usize, height: usize, width: usize) -> Self {
        Self {
            n_bins,
            height,
            width,
            probs: vec![1.0 / n_bins as f64; n_bins * height * width],
        }
    }

    /// Per-cell softmax over logits laid out like the probabilities.
    pub fn from_logits(n_bins: usize, height: usize, width: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != n_bins * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_bins}x{height}x{width}"),
                got: format!("{} logits", logits.len()),
            });
        }
        let mut probs = vec![0.0; logits.len()];
        for cell in 0..height * width {
            let src = &logits[cell * n_bins..(cell + 1) * n_bins];
            let dst = &mut probs[cell * n_bins..(cell + 1) * n_bins];
            softmax_into(src, dst);
        }
        Ok(Self {
            n_bins,
            height,
            width,
            probs,
        })
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.n_bins;
        &self.probs[i..i + self.n_bins]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Learnable fusion weight alpha, stored unconstrained and squashed into
/// (0, 1) so the fusion stays a convex combination throughout training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeight {
    pub raw: f64,
}

impl FusionWeight {
    pub fn new(raw: f64) -> Self {
        Self { raw }
    }

    pub fn alpha(&self) -> f64 {
        sigmoid(self.raw)
    }

    /// d(alpha)/d(raw).
    pub fn alpha_grad(&self) -> f64 {
        let a = self.alpha();
        a * (1.0 - a)
    }
}

/// Loss mixing weights (both default 0.25).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLossWeights {
    pub lambda_sm: f64,
    pub lambda_dfl: f64,
}

impl Default for DepthLossWeights {
    fn default() -> Self {
        Self {
            lambda_sm: 0.25,
            lambda_dfl: 0.25,
        }
    }
}

impl DepthLossWeights {
    pub fn new(lambda_sm: f64, lambda_dfl: f64) -> Result<Self> {
        if lambda_sm < 0.0 || lambda_dfl < 0.0 {
            return Err(Error::Config {
                path: "loss_weights".into(),
                message: "lambdas must be non-negative".into(),
            });
        }
        Ok(Self {
            lambda_sm,
            lambda_dfl,
        })
    }
}

fn check_same_shape(a: &DepthMap, b: &DepthMap) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.height, a.width),
            got: format!("{}x{}", b.height, b.width),
        });
    }
    Ok(())
}

/// Expected depth per cell: `sum_i P_i * d_i`. Always inside the bin range.
pub fn expected_depth(dist: &DepthDistribution, bins: &DepthBins) -> Result<DepthMap> {
    if dist.n_bins != bins.count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins", bins.count()),
            got: format!("{} distribution bins", dist.n_bins),
        });
    }
    let mut out = DepthMap::constant(dist.height, dist.width, 0.0);
    for row in 0..dist.height {
        for col in 0..dist.width {
            let d = dist
                .cell(row, col)
                .iter()
                .zip(bins.centers())
                .map(|(p, d)| p * d)
                .sum();
            out.set(row, col, d);
        }
    }
    Ok(out)
}

/// `D_pred = alpha * D_regressed + (1 - alpha) * D_probabilistic`.
pub fn fuse_depth(
    regressed: &DepthMap,
    probabilistic: &DepthMap,
    weight: &FusionWeight,
) -> Result<DepthMap> {
    check_same_shape(regressed, probabilistic)?;
    let a = weight.alpha();
    let mut out = DepthMap::constant(regressed.height, regressed.width, 0.0);
    for row in 0..regressed.height {
        for col in 0..regressed.width {
            out.set(
                row,
                col,
                a * regressed.depth(row, col) + (1.0 - a) * probabilistic.depth(row, col),
            );
        }
    }
    Ok(out)
}

/// Mean smooth-L1 over valid cells with transition point `beta`.
pub fn smooth_l1(pred: &DepthMap, gt: &DepthMap, beta: f64, mask: &[bool]) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..pred.height {
        for col in 0..pred.width {
            if !mask[pred.idx(row, col)] {
                continue;
            }
            let e = (pred.depth(row, col) - gt.depth(row, col)).abs();
            sum += if e < beta {
                0.5 * e * e / beta
            } else {
                e - 0.5 * beta
            };
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / count as f64)
}

/// Gradient of [`smooth_l1`] with respect to the prediction, per cell.
pub fn smooth_l1_grad(pred: &DepthMap, gt: &DepthMap, beta: f64, mask: &[bool]) -> Result<Vec<f64>> {
    check_same_shape(pred, gt)?;
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut grad = vec![0.0; pred.height * pred.width];
    for row in 0..pred.height {
        for col in 0..pred.width {
            let i = pred.idx(row, col);
            if !mask[i] {
                continue;
            }
            let e = pred.depth(row, col) - gt.depth(row, col);
            grad[i] = if e.abs() < beta { e / beta } else { e.signum() } / count as f64;
        }
    }
    Ok(grad)
}

/// Distribution focal loss: cross-entropy on the two bins bracketing the
/// (clamped) ground truth, weighted by linear interpolation; mean over
/// valid cells.
pub fn dfl_loss(
    dist: &DepthDistribution,
    gt: &DepthMap,
    bins: &DepthBins,
    mask: &[bool],
) -> Result<f64> {
    if dist.height != gt.height || dist.width != gt.width {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", dist.height, dist.width),
            got: format!("{}x{}", gt.height, gt.width),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..gt.height {
        for col in 0..gt.width {
            if !mask[gt.idx(row, col)] {
                continue;
            }
            let d = gt.depth(row, col).clamp(bins.d_min, bins.d_max);
            let (i, j, w) = bracket(d, bins)?;
            let cell = dist.cell(row, col);
            sum += -w * cell[i].max(PROB_FLOOR).ln() - (1.0 - w) * cell[j].max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / count as f64)
}

/// Gradient of [`dfl_loss`] with respect to per-cell logits that produce
/// the distribution through a softmax: `dL/dz_j = (P_j - y_j) / n_valid`
/// with the soft target `y` carrying weight `w` on the lower bracketing
/// bin and `1 - w` on the upper.
pub fn dfl_loss_grad_logits(
    dist: &DepthDistribution,
    gt: &DepthMap,
    bins: &DepthBins,
    mask: &[bool],
) -> Result<Vec<f64>> {
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut grad = vec![0.0; dist.n_bins * dist.height * dist.width];
    for row in 0..gt.height {
        for col in 0..gt.width {
            if !mask[gt.idx(row, col)] {
                continue;
            }
            let d = gt.depth(row, col).clamp(bins.d_min, bins.d_max);
            let (i, j, w) = bracket(d, bins)?;
            let cell = dist.cell(row, col);
            let g = &mut grad[(row * dist.width + col) * dist.n_bins..][..dist.n_bins];
            for (b, p) in cell.iter().enumerate() {
                let target = if b == i {
                    w
                } else if b == j {
                    1.0 - w
                } else {
                    0.0
                };
                g[b] = (p - target) / count as f64;
            }
        }
    }
    Ok(grad)
}

/// `L_depth = lambda_sm * smooth_l1 + lambda_dfl * dfl`.
pub fn depth_loss(
    pred: &DepthMap,
    dist: &DepthDistribution,
    gt: &DepthMap,
    bins: &DepthBins,
    weights: &DepthLossWeights,
    beta: f64,
    mask: &[bool],
) -> Result<f64> {
    let sm = if weights.lambda_sm != 0.0 {
        smooth_l1(pred, gt, beta, mask)?
    } else {
        // Still validate the mask so (0, 0) weights don't silently accept
        // an empty supervision set.
        if mask.iter().all(|m| !m) {
            return Err(Error::NoValidPixels);
        }
        0.0
    };
    let dfl = if weights.lambda_dfl != 0.0 {
        dfl_loss(dist, gt, bins, mask)?
    } else {
        0.0
    };
    Ok(weights.lambda_sm * sm + weights.lambda_dfl * dfl)
}

/// Desk-scale depth head: a per-cell two-layer perceptron over feature
/// vectors producing bin logits and a raw regressed depth, fused with a
/// learnable alpha. Stands in for the convolutional trunk; the losses and
/// fusion are the exact equations above.
#[derive(Debug, Clone)]
pub struct DepthHead {
    pub mlp: MlpParams,
    pub bins: DepthBins,
    pub alpha: FusionWeight,
    pub beta: f64,
    pub weights: DepthLossWeights,
}

impl DepthHead {
    /// `feature_dim -> hidden -> (n_bins logits, raw regressed depth)`.
    pub fn init(feature_dim: usize, hidden: usize, bins: DepthBins, seed: u64) -> Self {
        let mlp = MlpParams::init(feature_dim, hidden, bins.count() + 1, seed);
        Self {
            mlp,
            bins,
            alpha: FusionWeight::new(0.0),
            beta: 1.0,
            weights: DepthLossWeights::default(),
        }
    }

    /// Regressed depth from the raw head output: d_min + span * sigmoid(r).
    fn regressed(&self, raw: f64) -> f64 {
        self.bins.d_min + (self.bins.d_max - self.bins.d_min) * sigmoid(raw)
    }

    /// Predict the fused depth map and the bin distribution for a grid of
    /// per-cell features (`cells x feature_dim`, row-major).
    pub fn predict(
        &self,
        features: &[f64],
        height: usize,
        width: usize,
    ) -> Result<(DepthMap, DepthDistribution)> {
        let n = height * width;
        if features.len() != n * self.mlp.in_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} x {}", self.mlp.in_dim),
                got: format!("{} values", features.len()),
            });
        }
        let nb = self.bins.count();
        let mut probs = vec![0.0; n * nb];
        let mut fused = DepthMap::constant(height, width, 0.0);
        let mut hidden = vec![0.0; self.mlp.hidden_dim];
        let mut out = vec![0.0; self.mlp.out_dim];
        let a = self.alpha.alpha();
        for cell in 0..n {
            let f = &features[cell * self.mlp.in_dim..(cell + 1) * self.mlp.in_dim];
            self.mlp.forward_into(f, &mut hidden, &mut out);
            softmax_into(&out[..nb], &mut probs[cell * nb..(cell + 1) * nb]);
            let d_p: f64 = probs[cell * nb..(cell + 1) * nb]
                .iter()
                .zip(self.bins.centers())
                .map(|(p, d)| p * d)
                .sum();
            let d_r = self.regressed(out[nb]);
            fused.set(cell / width, cell % width, a * d_r + (1.0 - a) * d_p);
        }
        let dist = DepthDistribution {
            n_bins: nb,
            height,
            width,
            probs,
        };
        Ok((fused, dist))
    }

    /// Loss plus analytic gradients for the MLP parameters and the raw
    /// fusion weight.
    pub fn loss_and_grads(
        &self,
        features: &[f64],
        gt: &DepthMap,
        mask: &[bool],
    ) -> Result<(f64, MlpGrads, f64)> {
        let (height, width) = (gt.height, gt.width);
        let n = height * width;
        let nb = self.bins.count();
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::NoValidPixels);
        }
        let (fused, dist) = self.predict(features, height, width)?;
        let loss = depth_loss(&fused, &dist, gt, &self.bins, &self.weights, self.beta, mask)?;

        let sm_grad = smooth_l1_grad(&fused, gt, self.beta, mask)?;
        let dfl_grad = dfl_loss_grad_logits(&dist, gt, &self.bins, mask)?;

        let mut grads = MlpGrads::zeros(&self.mlp);
        let mut alpha_grad = 0.0;
        let a = self.alpha.alpha();
        let mut hidden = vec![0.0; self.mlp.hidden_dim];
        let mut out = vec![0.0; self.mlp.out_dim];
        let mut upstream = vec![0.0; self.mlp.out_dim];
        for cell in 0..n {
            if !mask[cell] {
                continue;
            }
            let f = &features[cell * self.mlp.in_dim..(cell + 1) * self.mlp.in_dim];
            self.mlp.forward_into(f, &mut hidden, &mut out);
            let probs = dist.cell(cell / width, cell % width);
            let d_p: f64 = probs
                .iter()
                .zip(self.bins.centers())
                .map(|(p, d)| p * d)
                .sum();
            let d_r = self.regressed(out[nb]);
            // d(fused)/d(logit_j) via expected depth: (1-a) * P_j (d_j - d_p).
            let g_fused = self.weights.lambda_sm * sm_grad[cell];
            for j in 0..nb {
                let g_exp = probs[j] * (self.bins.centers()[j] - d_p);
                upstream[j] = g_fused * (1.0 - a) * g_exp
                    + self.weights.lambda_dfl * dfl_grad[cell * nb + j];
            }
            // Raw regression channel: d(fused)/d(raw) = a * span * sigmoid'.
            let span = self.bins.d_max - self.bins.d_min;
            let s = (d_r - self.bins.d_min) / span; // sigmoid(raw)
            upstream[nb] = g_fused * a * span * s * (1.0 - s);
            // Fusion weight: d(fused)/d(alpha_raw) = sigmoid' * (d_r - d_p).
            alpha_grad += g_fused * self.alpha.alpha_grad() * (d_r - d_p);
            mlp_backward(&self.mlp, f, &hidden, &upstream, &mut grads, None);
        }
        Ok((loss, grads, alpha_grad))
    }

    /// One full-batch gradient step on `depth_loss`; returns the loss.
    pub fn train_step(
        &mut self,
        features: &[f64],
        gt: &DepthMap,
        mask: &[bool],
        lr: f64,
    ) -> Result<f64> {
        let (loss, grads, alpha_grad) = self.loss_and_grads(features, gt, mask)?;
        for (w, g) in self.mlp.w1.iter_mut().zip(&grads.w1) {
            *w -= lr * g;
        }
        for (b, g) in self.mlp.b1.iter_mut().zip(&grads.b1) {
            *b -= lr * g;
        }
        for (w, g) in self.mlp.w2.iter_mut().zip(&grads.w2) {
            *w -= lr * g;
        }
        for (b, g) in self.mlp.b2.iter_mut().zip(&grads.b2) {
            *b -= lr * g;
        }
        self.alpha.raw -= lr * alpha_grad;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bins::{make_bins, BinMethod};
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn bins4() -> DepthBins {
        make_bins(BinMethod::Ud, 1.0, 61.0, 4).unwrap()
    }

    fn random_dist(rng: &mut impl Rng, n_bins: usize, h: usize, w: usize) -> DepthDistribution {
        let logits: Vec<f64> = (0..n_bins * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DepthDistribution::from_logits(n_bins, h, w, &logits).unwrap()
    }

    #[test]
    fn one_hot_expectation_is_bin_center() {
        let bins = bins4();
        for j in 0..4 {
            let mut probs = vec![0.0; 4];
            probs[j] = 1.0;
            let dist = DepthDistribution::new(4, 1, 1, probs).unwrap();
            let d = expected_depth(&dist, &bins).unwrap();
            assert_eq!(d.depth(0, 0), bins.centers()[j]);
        }
    }

    #[test]
    fn uniform_expectation_is_mean_of_centers() {
        let bins = bins4();
        let dist = DepthDistribution::uniform(4, 2, 3);
        let d = expected_depth(&dist, &bins).unwrap();
        assert!((d.depth(1, 2) - 31.0).abs() < 1e-12);
    }

    #[test]
    fn expectation_matches_scalar_loop_oracle() {
        let mut rng = seeded_rng(8);
        let bins = make_bins(BinMethod::Lid, 1.0, 61.0, 16).unwrap();
        let dist = random_dist(&mut rng, 16, 3, 4);
        let d = expected_depth(&dist, &bins).unwrap();
        for row in 0..3 {
            for col in 0..4 {
                let mut oracle = 0.0;
                for (j, c) in bins.centers().iter().enumerate() {
                    oracle += dist.cell(row, col)[j] * c;
                }
                assert!((d.depth(row, col) - oracle).abs() < 1e-12);
                assert!(d.depth(row, col) >= bins.d_min && d.depth(row, col) <= bins.d_max);
            }
        }
    }

    #[test]
    fn expectation_is_affine_in_distribution() {
        let mut rng = seeded_rng(12);
        let bins = make_bins(BinMethod::Ud, 1.0, 61.0, 8).unwrap();
        let p = random_dist(&mut rng, 8, 1, 1);
        let q = random_dist(&mut rng, 8, 1, 1);
        for lambda in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let mixed: Vec<f64> = p
                .probs()
                .iter()
                .zip(q.probs())
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let mix = DepthDistribution::new(8, 1, 1, mixed).unwrap();
            let lhs = expected_depth(&mix, &bins).unwrap().depth(0, 0);
            let rhs = lambda * expected_depth(&p, &bins).unwrap().depth(0, 0)
                + (1.0 - lambda) * expected_depth(&q, &bins).unwrap().depth(0, 0);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_midpoint_and_saturation() {
        let d_r = DepthMap::constant(2, 2, 10.0);
        let d_p = DepthMap::constant(2, 2, 20.0);
        // sigmoid(0) = 0.5 -> midpoint.
        let mid = fuse_depth(&d_r, &d_p, &FusionWeight::new(0.0)).unwrap();
        assert_eq!(mid.depth(0, 0), 15.0);
        // Large raw weight saturates onto the regressed branch.
        let hi = fuse_depth(&d_r, &d_p, &FusionWeight::new(20.0)).unwrap();
        assert!((hi.depth(1, 1) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn fusion_shape_mismatch() {
        let a = DepthMap::constant(2, 2, 1.0);
        let b = DepthMap::constant(2, 3, 1.0);
        assert!(matches!(
            fuse_depth(&a, &b, &FusionWeight::new(0.0)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn smooth_l1_zero_at_equality_and_half_beta_at_transition() {
        let gt = DepthMap::constant(2, 3, 12.0);
        let mask = vec![true; 6];
        assert_eq!(smooth_l1(&gt, &gt, 1.0, &mask).unwrap(), 0.0);
        let beta = 0.8;
        let pred = DepthMap::constant(2, 3, 12.0 + beta);
        let loss = smooth_l1(&pred, &gt, beta, &mask).unwrap();
        assert!((loss - beta / 2.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_matches_loop_oracle() {
        let mut rng = seeded_rng(4);
        let mut pred = DepthMap::constant(3, 3, 0.0);
        let mut gt = DepthMap::constant(3, 3, 0.0);
        let mut mask = vec![false; 9];
        for row in 0..3 {
            for col in 0..3 {
                pred.set(row, col, rng.gen_range(1.0..60.0));
                gt.set(row, col, rng.gen_range(1.0..60.0));
                mask[row * 3 + col] = rng.gen_bool(0.7);
            }
        }
        if mask.iter().all(|m| !m) {
            mask[0] = true;
        }
        let beta = 1.0;
        let mut oracle = 0.0;
        let mut count = 0;
        for row in 0..3 {
            for col in 0..3 {
                if !mask[row * 3 + col] {
                    continue;
                }
                let e = (pred.depth(row, col) - gt.depth(row, col)).abs();
                oracle += if e < beta { 0.5 * e * e / beta } else { e - 0.5 * beta };
                count += 1;
            }
        }
        oracle /= count as f64;
        assert!((smooth_l1(&pred, &gt, beta, &mask).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        let gt = DepthMap::constant(2, 2, 1.0);
        let mask = vec![false; 4];
        assert!(matches!(
            smooth_l1(&gt, &gt, 1.0, &mask),
            Err(Error::NoValidPixels)
        ));
        let dist = DepthDistribution::uniform(4, 2, 2);
        assert!(matches!(
            dfl_loss(&dist, &gt, &bins4(), &mask),
            Err(Error::NoValidPixels)
        ));
    }

    /// Hand evaluation: bins (1, 2), gt 1.25, P = (0.5, 0.5) gives
    /// 0.75*ln2 + 0.25*ln2 = ln 2.
    #[test]
    fn dfl_hand_value_is_ln2() {
        let bins = make_bins(BinMethod::Ud, 1.0, 2.0, 2).unwrap();
        let dist = DepthDistribution::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        let gt = DepthMap::constant(1, 1, 1.25);
        let loss = dfl_loss(&dist, &gt, &bins, &[true]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dfl_zero_iff_one_hot_on_center() {
        let bins = bins4();
        let mut probs = vec![0.0; 4];
        probs[2] = 1.0;
        let dist = DepthDistribution::new(4, 1, 1, probs).unwrap();
        let gt = DepthMap::constant(1, 1, bins.centers()[2]);
        let loss = dfl_loss(&dist, &gt, &bins, &[true]).unwrap();
        assert_eq!(loss, 0.0);
        // Any other gt or distribution is strictly positive.
        let off_gt = DepthMap::constant(1, 1, bins.centers()[2] + 3.0);
        assert!(dfl_loss(&dist, &off_gt, &bins, &[true]).unwrap() > 0.0);
        let uniform = DepthDistribution::uniform(4, 1, 1);
        assert!(dfl_loss(&uniform, &gt, &bins, &[true]).unwrap() > 0.0);
    }

    #[test]
    fn dfl_clamps_out_of_range_gt() {
        let bins = bins4();
        let dist = DepthDistribution::uniform(4, 1, 1);
        let gt_low = DepthMap::constant(1, 1, 0.2);
        let gt_min = DepthMap::constant(1, 1, 1.0);
        assert_eq!(
            dfl_loss(&dist, &gt_low, &bins, &[true]).unwrap(),
            dfl_loss(&dist, &gt_min, &bins, &[true]).unwrap()
        );
    }

    /// Gradient-descent oracle: with gt fixed between two bins, descending
    /// the DFL in logit space converges to P = (w on lower, 1-w on upper).
    #[test]
    fn dfl_minimizer_matches_bracket_weights() {
        let bins = bins4();
        let gt = DepthMap::constant(1, 1, 26.0); // between 21 and 41, w = 0.75
        let (i, j, w) = bracket(26.0, &bins).unwrap();
        let mut logits = vec![0.0; 4];
        for _ in 0..20000 {
            let dist = DepthDistribution::from_logits(4, 1, 1, &logits).unwrap();
            let grad = dfl_loss_grad_logits(&dist, &gt, &bins, &[true]).unwrap();
            for (l, g) in logits.iter_mut().zip(&grad) {
                *l -= 0.5 * g;
            }
        }
        let dist = DepthDistribution::from_logits(4, 1, 1, &logits).unwrap();
        let cell = dist.cell(0, 0);
        assert!((cell[i] - w).abs() < 1e-3, "P_i = {}", cell[i]);
        assert!((cell[j] - (1.0 - w)).abs() < 1e-3, "P_j = {}", cell[j]);
        assert!(cell[0] < 1e-3 && cell[3] < 1e-3);
    }

    #[test]
    fn combined_loss_weights() {
        let bins = bins4();
        let mut rng = seeded_rng(3);
        let dist = random_dist(&mut rng, 4, 2, 2);
        let pred = DepthMap::constant(2, 2, 18.0);
        let gt = DepthMap::constant(2, 2, 22.0);
        let mask = vec![true; 4];
        let zero = depth_loss(
            &pred,
            &dist,
            &gt,
            &bins,
            &DepthLossWeights::new(0.0, 0.0).unwrap(),
            1.0,
            &mask,
        )
        .unwrap();
        assert_eq!(zero, 0.0);
        let sm_only = depth_loss(
            &pred,
            &dist,
            &gt,
            &bins,
            &DepthLossWeights::new(1.0, 0.0).unwrap(),
            1.0,
            &mask,
        )
        .unwrap();
        assert_eq!(sm_only, smooth_l1(&pred, &gt, 1.0, &mask).unwrap());
        let both = depth_loss(
            &pred,
            &dist,
            &gt,
            &bins,
            &DepthLossWeights::default(),
            1.0,
            &mask,
        )
        .unwrap();
        let oracle = 0.25 * smooth_l1(&pred, &gt, 1.0, &mask).unwrap()
            + 0.25 * dfl_loss(&dist, &gt, &bins, &mask).unwrap();
        assert!((both - oracle).abs() < 1e-15);
    }

    #[test]
    fn depth_head_gradients_match_finite_differences() {
        let bins = make_bins(BinMethod::Ud, 1.0, 61.0, 8).unwrap();
        let head = DepthHead::init(3, 8, bins, 42);
        let mut rng = seeded_rng(5);
        let (h, w) = (2, 2);
        let mut gt = DepthMap::constant(h, w, 0.0);
        let mut features = vec![0.0; h * w * 3];
        for cell in 0..h * w {
            gt.set(cell / w, cell % w, rng.gen_range(5.0..55.0));
            for f in 0..3 {
                features[cell * 3 + f] = rng.gen_range(-1.0..1.0);
            }
        }
        let mask = vec![true, true, false, true];
        let (_, grads, alpha_grad) = head.loss_and_grads(&features, &gt, &mask).unwrap();
        let loss_with = |mutate: &dyn Fn(&mut DepthHead)| -> f64 {
            let mut m = head.clone();
            mutate(&mut m);
            m.loss_and_grads(&features, &gt, &mask).unwrap().0
        };
        let central = |set: &dyn Fn(&mut DepthHead, f64), x0: f64| -> f64 {
            let hstep = 1e-6 * x0.abs().max(1.0);
            (loss_with(&|m| set(m, x0 + hstep)) - loss_with(&|m| set(m, x0 - hstep)))
                / (2.0 * hstep)
        };
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        for i in [0usize, 5, 11, 17, 23] {
            let n = central(&move |m, x| m.mlp.w1[i] = x, head.mlp.w1[i]);
            assert!(rel(grads.w1[i], n) < 1e-5, "w1[{i}]: {} vs {}", grads.w1[i], n);
        }
        for i in [0usize, 3, 7] {
            let n = central(&move |m, x| m.mlp.b1[i] = x, head.mlp.b1[i]);
            assert!(rel(grads.b1[i], n) < 1e-5, "b1[{i}]: {} vs {}", grads.b1[i], n);
        }
        for i in [0usize, 20, 40, 60, 71] {
            let n = central(&move |m, x| m.mlp.w2[i] = x, head.mlp.w2[i]);
            assert!(rel(grads.w2[i], n) < 1e-5, "w2[{i}]: {} vs {}", grads.w2[i], n);
        }
        for i in [0usize, 4, 8] {
            let n = central(&move |m, x| m.mlp.b2[i] = x, head.mlp.b2[i]);
            assert!(rel(grads.b2[i], n) < 1e-5, "b2[{i}]: {} vs {}", grads.b2[i], n);
        }
        let n = central(&|m, x| m.alpha.raw = x, head.alpha.raw);
        assert!(rel(alpha_grad, n) < 1e-5, "alpha: {alpha_grad} vs {n}");
    }

    #[test]
    fn depth_head_learns_depth_from_informative_features() {
        let bins = make_bins(BinMethod::Ud, 1.0, 61.0, 16).unwrap();
        let mut head = DepthHead::init(4, 32, bins, 99);
        let mut rng = seeded_rng(100);
        // Feature = [depth / 61, 1, noise, noise]; depth recoverable.
        let (h, w) = (4, 8);
        let mut gt = DepthMap::constant(h, w, 0.0);
        let mut features = vec![0.0; h * w * 4];
        for cell in 0..h * w {
            let d = rng.gen_range(3.0..55.0);
            gt.set(cell / w, cell % w, d);
            features[cell * 4] = d / 61.0;
            features[cell * 4 + 1] = 1.0;
            features[cell * 4 + 2] = rng.gen_range(-0.1..0.1);
            features[cell * 4 + 3] = rng.gen_range(-0.1..0.1);
        }
        let mask = vec![true; h * w];
        let first = head.train_step(&features, &gt, &mask, 0.0).unwrap();
        for _ in 0..2000 {
            head.train_step(&features, &gt, &mask, 1.0).unwrap();
        }
        let last = head.train_step(&features, &gt, &mask, 0.0).unwrap();
        assert!(last < first * 0.2, "loss {first} -> {last}");
        let (pred, _) = head.predict(&features, h, w).unwrap();
        let mean_err: f64 = (0..h * w)
            .map(|c| (pred.depth(c / w, c % w) - gt.depth(c / w, c % w)).abs())
            .sum::<f64>()
            / (h * w) as f64;
        assert!(mean_err < 2.0, "mean depth error {mean_err}");
    }

    #[test]
    fn depth_head_respects_sparse_mask() {
        let bins = make_bins(BinMethod::Ud, 1.0, 61.0, 8).unwrap();
        let mut head = DepthHead::init(2, 16, bins, 7);
        let gt = DepthMap::constant(2, 2, 30.0);
        let features = vec![0.5; 2 * 2 * 2];
        let mask = vec![true, false, false, true];
        let loss = head.train_step(&features, &gt, &mask, 0.1).unwrap();
        assert!(loss.is_finite());
        assert!(matches!(
            head.train_step(&features, &gt, &[false; 4], 0.1),
            Err(Error::NoValidPixels)
        ));
    }
}
