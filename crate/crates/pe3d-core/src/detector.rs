//! Desk-scale single-layer cross-attention detector: query anchor PEs
//! interact with 3D point-aware features, trained by full-batch gradient
//! descent on simulator scenes to localize object centers.
//!
//! The per-cell image features are a fixed random embedding of the hit
//! surface class plus normalized depth, frozen during training, so the
//! positional encoding is the only localization channel. Encoder MLPs are
//! frozen during detector training by default (the decoder owns content,
//! anchors, attention and the output head); gradients still flow *through*
//! the encoders to the anchor positions, and the gradient-check harness
//! exercises the full parameter set including the encoder weights.

use nalgebra::Vector3;
use rand::Rng;

use crate::bins::{make_bins, BinMethod, DepthBins};
use crate::depth::{DepthDistribution, DepthHead};
use crate::encode::{
    encode_point, encode_point_backward, mlp_backward, pe2d, pe_camera_ray, pe_depth_point,
    pe_lidar_ray, pe_oracle_point, pe_topk, point_sine_features_into, sigmoid, AnchorPoints,
    FeatureGridSpec, MlpGrads, MlpParams, PeGrid, PeVariant, SineSpec, TopKParams,
};
use crate::error::{Error, Result};
use crate::geometry::{DepthMap, PerceptionRegion};
use crate::rng::derived_rng;
use crate::sim::{default_rig, render, RenderedView, SimScene};

/// Per-cell C-dimensional image features for one view (cell-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl FeatureGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            mask: vec![false; height * width],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn masked(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn set_masked(&mut self, row: usize, col: usize, masked: bool) {
        self.mask[row * self.width + col] = masked;
    }
}

/// Fixed random embedding of (surface class, normalized depth) per cell.
/// Cells with no surface hit are zeroed and masked.
pub fn scene_features(
    view: &RenderedView,
    channels: usize,
    feature_seed: u64,
) -> FeatureGrid {
    let (h, w) = (view.depth.height, view.depth.width);
    let mut grid = FeatureGrid::zeros(channels, h, w);
    let depth_dir: Vec<f64> = {
        let mut rng = derived_rng(feature_seed, 0xDEDE);
        (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let class_embedding = |class: u32| -> Vec<f64> {
        let mut rng = derived_rng(feature_seed, 0xC1A5_5000 + class as u64);
        (0..channels).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let mut cache: Vec<(u32, Vec<f64>)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if !view.depth.is_valid(row, col) {
                grid.set_masked(row, col, true);
                continue;
            }
            let class = view.class[row * w + col];
            let emb = match cache.iter().find(|(c, _)| *c == class) {
                Some((_, e)) => e.clone(),
                None => {
                    let e = class_embedding(class);
                    cache.push((class, e.clone()));
                    e
                }
            };
            let dn = (view.depth.depth(row, col) / 61.0).clamp(0.0, 1.5);
            let cell = grid.cell_mut(row, col);
            for c in 0..channels {
                cell[c] = emb[c] + dn * depth_dir[c];
            }
        }
    }
    grid
}

/// All cameras' point-aware features flattened to one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PointAwareFeatures {
    pub channels: usize,
    pub n_tokens: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
    /// (camera, row, col) per token, in concatenation order.
    pub token_map: Vec<(usize, usize, usize)>,
}

impl PointAwareFeatures {
    pub fn from_parts(
        channels: usize,
        data: Vec<f64>,
        mask: Vec<bool>,
        token_map: Vec<(usize, usize, usize)>,
    ) -> Result<Self> {
        let n_tokens = mask.len();
        if data.len() != n_tokens * channels || token_map.len() != n_tokens {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_tokens} tokens x {channels}"),
                got: format!("{} values, {} map entries", data.len(), token_map.len()),
            });
        }
        Ok(Self {
            channels,
            n_tokens,
            data,
            mask,
            token_map,
        })
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn token_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn masked(&self, t: usize) -> bool {
        self.mask[t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Element-wise `F + PE` per camera, concatenated into one token sequence
/// with OR-combined masks.
pub fn fuse_features(features: &[FeatureGrid], pes: &[PeGrid]) -> Result<PointAwareFeatures> {
    if features.len() != pes.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} PE grids", features.len()),
            got: format!("{}", pes.len()),
        });
    }
    let channels = features.first().map_or(0, |f| f.channels);
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut token_map = Vec::new();
    for (cam_idx, (f, pe)) in features.iter().zip(pes).enumerate() {
        if f.channels != pe.channels || f.height != pe.height || f.width != pe.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", f.channels, f.height, f.width),
                got: format!("{}x{}x{}", pe.channels, pe.height, pe.width),
            });
        }
        for row in 0..f.height {
            for col in 0..f.width {
                let fc = f.cell(row, col);
                let pc = pe.cell(row, col);
                data.extend(fc.iter().zip(pc).map(|(a, b)| a + b));
                mask.push(f.masked(row, col) || pe.masked(row, col));
                token_map.push((cam_idx, row, col));
            }
        }
    }
    Ok(PointAwareFeatures {
        channels,
        n_tokens: mask.len(),
        data,
        mask,
        token_map,
    })
}

/// Decoder parameters: query content, learnable anchors, single-head
/// attention projections and the center output head, plus the anchor
/// point encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub channels: usize,
    pub queries: usize,
    /// K x C query content vectors.
    pub content: Vec<f64>,
    /// K x 3 unconstrained anchor parameters (anchors = sigmoid(raw)).
    pub anchor_raw: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    /// 3 x C output head.
    pub out_w: Vec<f64>,
    pub out_b: [f64; 3],
    /// Point encoder for anchors. In shared mode this is a bitwise copy of
    /// the feature PE encoder; in separated mode it is independently
    /// seeded.
    pub anchor_mlp: MlpParams,
}

impl DecoderState {
    pub fn init(channels: usize, queries: usize, anchor_mlp: MlpParams, seed: u64) -> Self {
        Self::init_scaled(channels, queries, anchor_mlp, seed, 1.0)
    }

    /// `qk_scale` multiplies the query/key projection init bound; larger
    /// values start attention sharper, which full-batch GD needs to escape
    /// the uniform-attention plateau in few steps.
    pub fn init_scaled(
        channels: usize,
        queries: usize,
        anchor_mlp: MlpParams,
        seed: u64,
        qk_scale: f64,
    ) -> Self {
        let mut rng = derived_rng(seed, 0xDEC0);
        let bound = 1.0 / (channels as f64).sqrt();
        let draw = |n: usize, b: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        let content = draw(queries * channels, 0.1, &mut rng);
        let anchor_raw: Vec<f64> = (0..queries * 3)
            .map(|_| {
                let u: f64 = rng.gen_range(0.2..0.8);
                (u / (1.0 - u)).ln()
            })
            .collect();
        let wq = draw(channels * channels, bound * qk_scale, &mut rng);
        let wk = draw(channels * channels, bound * qk_scale, &mut rng);
        let wv = draw(channels * channels, bound, &mut rng);
        let out_w = draw(3 * channels, bound, &mut rng);
        Self {
            channels,
            queries,
            content,
            anchor_raw,
            wq,
            wk,
            wv,
            out_w,
            out_b: [0.0; 3],
            anchor_mlp,
        }
    }

    pub fn anchors(&self) -> AnchorPoints {
        AnchorPoints::from_raw(&self.anchor_raw)
    }
}

/// Intermediate activations of one decode pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct DecodeCache {
    pub anchor_points: Vec<Vector3<f64>>,
    pub anchor_pe: Vec<f64>, // K*C
    pub q: Vec<f64>,         // K*C
    pub keys: Vec<f64>,      // T*C (masked tokens left zero)
    pub vals: Vec<f64>,      // T*C
    pub attn: Vec<f64>,      // K*T
    pub attended: Vec<f64>,  // K*C
    pub z: Vec<f64>,         // K*3 pre-squash
    pub centers: Vec<Vector3<f64>>,
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(n_in)) {
        *o = crate::encode::dot(row, x);
    }
}

/// Scaled dot-product cross-attention over unmasked tokens followed by a
/// sigmoid-squashed linear head producing normalized centers.
pub fn decode_with_cache(
    state: &DecoderState,
    spec: &SineSpec,
    feats: &PointAwareFeatures,
    cache: &mut DecodeCache,
) -> Result<()> {
    let c = state.channels;
    let k_q = state.queries;
    let t_n = feats.n_tokens;
    if feats.channels != c {
        return Err(Error::ShapeMismatch {
            expected: format!("{c} channels"),
            got: format!("{}", feats.channels),
        });
    }
    if feats.mask.iter().all(|m| *m) {
        return Err(Error::AllTokensMasked);
    }
    cache.anchor_points = AnchorPoints::from_raw(&state.anchor_raw).points().to_vec();
    cache.anchor_pe.resize(k_q * c, 0.0);
    cache.q.resize(k_q * c, 0.0);
    for k in 0..k_q {
        let pe = encode_point(&cache.anchor_points[k], &state.anchor_mlp, spec);
        cache.anchor_pe[k * c..(k + 1) * c].copy_from_slice(&pe);
        for i in 0..c {
            cache.q[k * c + i] = state.content[k * c + i] + pe[i];
        }
    }
    cache.keys.resize(t_n * c, 0.0);
    cache.vals.resize(t_n * c, 0.0);
    for t in 0..t_n {
        if feats.masked(t) {
            continue;
        }
        let x = feats.token(t);
        matvec(&state.wk, x, &mut cache.keys[t * c..(t + 1) * c]);
        matvec(&state.wv, x, &mut cache.vals[t * c..(t + 1) * c]);
    }
    let scale = 1.0 / (c as f64).sqrt();
    cache.attn.resize(k_q * t_n, 0.0);
    cache.attended.resize(k_q * c, 0.0);
    cache.z.resize(k_q * 3, 0.0);
    cache.centers.resize(k_q, Vector3::zeros());
    let mut q_proj = vec![0.0; c];
    for k in 0..k_q {
        matvec(&state.wq, &cache.q[k * c..(k + 1) * c], &mut q_proj);
        let logits = &mut cache.attn[k * t_n..(k + 1) * t_n];
        let mut max_logit = f64::NEG_INFINITY;
        for t in 0..t_n {
            if feats.masked(t) {
                logits[t] = f64::NEG_INFINITY;
                continue;
            }
            let key = &cache.keys[t * c..(t + 1) * c];
            logits[t] = scale * crate::encode::dot(&q_proj, key);
            max_logit = max_logit.max(logits[t]);
        }
        let mut sum = 0.0;
        for t in 0..t_n {
            if feats.masked(t) {
                logits[t] = 0.0;
                continue;
            }
            logits[t] = (logits[t] - max_logit).exp();
            sum += logits[t];
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
        let attended = &mut cache.attended[k * c..(k + 1) * c];
        attended.fill(0.0);
        for t in 0..t_n {
            let w = logits[t];
            if w == 0.0 {
                continue;
            }
            let val = &cache.vals[t * c..(t + 1) * c];
            for (a, v) in attended.iter_mut().zip(val) {
                *a += w * v;
            }
        }
        for o in 0..3 {
            let row = &state.out_w[o * c..(o + 1) * c];
            let z = state.out_b[o]
                + row.iter().zip(attended.iter()).map(|(a, b)| a * b).sum::<f64>();
            cache.z[k * 3 + o] = z;
            cache.centers[k][o] = sigmoid(z);
        }
    }
    Ok(())
}

/// Predicted normalized centers for each query.
pub fn decode(
    state: &DecoderState,
    spec: &SineSpec,
    feats: &PointAwareFeatures,
) -> Result<Vec<Vector3<f64>>> {
    let mut cache = DecodeCache::default();
    decode_with_cache(state, spec, feats, &mut cache)?;
    Ok(cache.centers)
}

/// Greedy nearest assignment: pairs ordered by squared distance (ties by
/// ground-truth then query index), each side matched at most once. Every
/// ground truth is matched when `preds.len() >= gts.len()`.
pub fn greedy_assign(preds: &[Vector3<f64>], gts: &[Vector3<f64>]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(preds.len() * gts.len());
    for (g, gt) in gts.iter().enumerate() {
        for (p, pred) in preds.iter().enumerate() {
            pairs.push(((pred - gt).norm_squared(), g, p));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gts.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut assignment = Vec::new();
    for (_, g, p) in pairs {
        if gt_used[g] || pred_used[p] {
            continue;
        }
        gt_used[g] = true;
        pred_used[p] = true;
        assignment.push((g, p));
    }
    assignment.sort_unstable();
    assignment
}

/// Gradients for every decoder parameter group plus (optionally used) the
/// feature encoder.
#[derive(Debug, Clone)]
pub struct DetectorGrads {
    pub content: Vec<f64>,
    pub anchor_raw: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: [f64; 3],
    pub anchor_mlp: MlpGrads,
    /// Gradient with respect to each token's PE vector (length T*C);
    /// feeds the encoder backward when the encoder is trained.
    pub token_pe: Vec<f64>,
}

impl DetectorGrads {
    pub fn zeros(state: &DecoderState, n_tokens: usize) -> Self {
        Self {
            content: vec![0.0; state.content.len()],
            anchor_raw: vec![0.0; state.anchor_raw.len()],
            wq: vec![0.0; state.wq.len()],
            wk: vec![0.0; state.wk.len()],
            wv: vec![0.0; state.wv.len()],
            out_w: vec![0.0; state.out_w.len()],
            out_b: [0.0; 3],
            anchor_mlp: MlpGrads::zeros(&state.anchor_mlp),
            token_pe: vec![0.0; n_tokens * state.channels],
        }
    }
}

/// Squared-L2 assignment loss for one scene and its gradient contribution.
/// Returns (loss, per-gt Euclidean distances in normalized space).
pub fn scene_loss_backward(
    state: &DecoderState,
    spec: &SineSpec,
    feats: &PointAwareFeatures,
    gts: &[Vector3<f64>],
    cache: &DecodeCache,
    grads: &mut DetectorGrads,
    loss_scale: f64,
) -> (f64, Vec<f64>) {
    scene_loss_backward_opts(state, spec, feats, gts, cache, grads, loss_scale, true)
}

/// As [`scene_loss_backward`]; `want_token_pe` skips the per-token PE
/// gradient accumulation when the encoder is frozen.
#[allow(clippy::too_many_arguments)]
pub fn scene_loss_backward_opts(
    state: &DecoderState,
    spec: &SineSpec,
    feats: &PointAwareFeatures,
    gts: &[Vector3<f64>],
    cache: &DecodeCache,
    grads: &mut DetectorGrads,
    loss_scale: f64,
    want_token_pe: bool,
) -> (f64, Vec<f64>) {
    let c = state.channels;
    let t_n = feats.n_tokens;
    let scale = 1.0 / (c as f64).sqrt();
    let assignment = greedy_assign(&cache.centers, gts);
    let m = gts.len() as f64;
    let mut loss = 0.0;
    let mut distances = Vec::with_capacity(gts.len());

    let mut d_center = vec![Vector3::zeros(); state.queries];
    for &(g, p) in &assignment {
        let diff = cache.centers[p] - gts[g];
        loss += diff.norm_squared() / m;
        distances.push(diff.norm());
        d_center[p] += 2.0 * diff / m * loss_scale;
    }

    let mut d_attended = vec![0.0; state.queries * c];
    for k in 0..state.queries {
        for o in 0..3 {
            let zc = cache.centers[k][o];
            let dz = d_center[k][o] * zc * (1.0 - zc);
            if dz == 0.0 {
                continue;
            }
            grads.out_b[o] += dz;
            let row = &state.out_w[o * c..(o + 1) * c];
            let att = &cache.attended[k * c..(k + 1) * c];
            let gw = &mut grads.out_w[o * c..(o + 1) * c];
            for i in 0..c {
                gw[i] += dz * att[i];
                d_attended[k * c + i] += dz * row[i];
            }
        }
    }

    let mut d_vals = vec![0.0; t_n * c];
    let mut d_keys = vec![0.0; t_n * c];
    let mut q_proj = vec![0.0; c];
    let mut d_qproj = vec![0.0; c];
    let mut d_q = vec![0.0; c];
    for k in 0..state.queries {
        let datt = &d_attended[k * c..(k + 1) * c];
        if datt.iter().all(|g| *g == 0.0) {
            continue;
        }
        let attn = &cache.attn[k * t_n..(k + 1) * t_n];
        // Softmax backward: dl_t = w_t (dw_t - sum_s w_s dw_s).
        let mut dot_ws = 0.0;
        let mut dw = vec![0.0; t_n];
        for t in 0..t_n {
            if attn[t] == 0.0 {
                continue;
            }
            let val = &cache.vals[t * c..(t + 1) * c];
            dw[t] = crate::encode::dot(datt, val);
            dot_ws += attn[t] * dw[t];
            // dval_t += w_t * datt
            let dv = &mut d_vals[t * c..(t + 1) * c];
            for (dvi, da) in dv.iter_mut().zip(datt) {
                *dvi += attn[t] * da;
            }
        }
        matvec(&state.wq, &cache.q[k * c..(k + 1) * c], &mut q_proj);
        d_qproj.fill(0.0);
        for t in 0..t_n {
            if attn[t] == 0.0 {
                continue;
            }
            let dl = attn[t] * (dw[t] - dot_ws) * scale;
            if dl == 0.0 {
                continue;
            }
            let key = &cache.keys[t * c..(t + 1) * c];
            let dk = &mut d_keys[t * c..(t + 1) * c];
            for i in 0..c {
                d_qproj[i] += dl * key[i];
                dk[i] += dl * q_proj[i];
            }
        }
        // dWq += d_qproj (x) q_k; d_q = Wq' d_qproj
        let q_k = &cache.q[k * c..(k + 1) * c];
        d_q.fill(0.0);
        for o in 0..c {
            let g = d_qproj[o];
            if g == 0.0 {
                continue;
            }
            let row = &state.wq[o * c..(o + 1) * c];
            let grow = &mut grads.wq[o * c..(o + 1) * c];
            for i in 0..c {
                grow[i] += g * q_k[i];
                d_q[i] += g * row[i];
            }
        }
        // content and anchor path share d_q.
        for i in 0..c {
            grads.content[k * c + i] += d_q[i];
        }
        let (grad_anchor, mlp_grads_inc) =
            encode_point_backward(&cache.anchor_points[k], &state.anchor_mlp, spec, &d_q);
        for (dst, src) in grads.anchor_mlp.w1.iter_mut().zip(&mlp_grads_inc.w1) {
            *dst += src;
        }
        for (dst, src) in grads.anchor_mlp.b1.iter_mut().zip(&mlp_grads_inc.b1) {
            *dst += src;
        }
        for (dst, src) in grads.anchor_mlp.w2.iter_mut().zip(&mlp_grads_inc.w2) {
            *dst += src;
        }
        for (dst, src) in grads.anchor_mlp.b2.iter_mut().zip(&mlp_grads_inc.b2) {
            *dst += src;
        }
        for o in 0..3 {
            let a = cache.anchor_points[k][o];
            grads.anchor_raw[k * 3 + o] += grad_anchor[o] * a * (1.0 - a);
        }
    }
    // dWk/dWv and (optionally) token-PE gradients.
    for t in 0..t_n {
        if feats.masked(t) {
            continue;
        }
        let x = feats.token(t);
        let dk = &d_keys[t * c..(t + 1) * c];
        let dv = &d_vals[t * c..(t + 1) * c];
        for o in 0..c {
            let (gk, gv) = (dk[o], dv[o]);
            if gk != 0.0 {
                let grow = &mut grads.wk[o * c..(o + 1) * c];
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += gk * xi;
                }
            }
            if gv != 0.0 {
                let grow = &mut grads.wv[o * c..(o + 1) * c];
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += gv * xi;
                }
            }
        }
        if want_token_pe {
            let dpe = &mut grads.token_pe[t * c..(t + 1) * c];
            for o in 0..c {
                let (gk, gv) = (dk[o], dv[o]);
                if gk != 0.0 {
                    let row = &state.wk[o * c..(o + 1) * c];
                    for (g, w) in dpe.iter_mut().zip(row) {
                        *g += gk * w;
                    }
                }
                if gv != 0.0 {
                    let row = &state.wv[o * c..(o + 1) * c];
                    for (g, w) in dpe.iter_mut().zip(row) {
                        *g += gv * w;
                    }
                }
            }
        }
    }
    (loss, distances)
}

/// PE variant selection for a training run.
#[derive(Debug, Clone, PartialEq)]
pub enum PeVariantConfig {
    Pe2d,
    CameraRay { bins: DepthBins },
    LidarRay { fixed_d: f64 },
    OraclePoint,
    DepthPoint,
    TopK { k: usize },
}

impl PeVariantConfig {
    pub fn variant(&self) -> PeVariant {
        match self {
            PeVariantConfig::Pe2d => PeVariant::Pe2d,
            PeVariantConfig::CameraRay { .. } => PeVariant::CameraRay,
            PeVariantConfig::LidarRay { .. } => PeVariant::LidarRay,
            PeVariantConfig::OraclePoint => PeVariant::OraclePoint,
            PeVariantConfig::DepthPoint => PeVariant::DepthPoint,
            PeVariantConfig::TopK { .. } => PeVariant::TopK,
        }
    }

    pub fn params_label(&self) -> String {
        match self {
            PeVariantConfig::Pe2d | PeVariantConfig::OraclePoint | PeVariantConfig::DepthPoint => {
                "-".into()
            }
            PeVariantConfig::CameraRay { bins } => bins.spec_string(),
            PeVariantConfig::LidarRay { fixed_d } => format!("d={fixed_d}"),
            PeVariantConfig::TopK { k } => format!("k={k}"),
        }
    }
}

/// Training configuration. Defaults match the desk-scale setup used by the
/// ablation suites: C = 64, hidden 4C, two queries, six cameras with a
/// 4x11 feature grid (stride 64 over 704x256), 2000 full-batch steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub shared_encoder: bool,
    /// Update encoder MLP weights during training (off by default; anchors
    /// always receive gradients through the encoder).
    pub train_encoder: bool,
    pub channels: usize,
    pub hidden_dim: usize,
    pub queries: usize,
    pub grid: FeatureGridSpec,
    pub region: PerceptionRegion,
    pub d_lc: f64,
    pub delta: f64,
    /// Multiplier on the query/key projection init bound.
    pub qk_init_scale: f64,
    /// Bins for the desk-scale depth head (depth-point / top-k variants).
    pub depth_head_bins: DepthBins,
    pub depth_head_steps: usize,
    pub depth_head_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            steps: 2000,
            seed: 0,
            shared_encoder: true,
            train_encoder: false,
            channels: 64,
            hidden_dim: 256,
            queries: 2,
            grid: FeatureGridSpec::new(4, 11, 64),
            region: PerceptionRegion::default(),
            d_lc: 0.8,
            delta: 0.3,
            qk_init_scale: 3.0,
            depth_head_bins: make_bins(BinMethod::Ud, 1.0, 61.0, 16)
                .expect("default bins are valid"),
            depth_head_steps: 800,
            depth_head_lr: 1.0,
        }
    }
}

/// One scene prepared for training: fused tokens, per-token sine features
/// of the PE inputs (for encoder training), and normalized ground truth.
pub struct SceneBatch {
    pub tokens: PointAwareFeatures,
    /// Per-token encoder input features (empty for pe2d).
    pub sine_inputs: Vec<f64>,
    pub encoder_in_dim: usize,
    pub gt_centers: Vec<Vector3<f64>>,
    /// Per-token raw F (before PE), used to rebuild tokens when the
    /// encoder updates.
    pub raw_features: Vec<f64>,
}

/// The feature-PE encoder parameters for one variant.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureEncoder {
    /// pe2d has no learnable encoder.
    Fixed,
    /// Point encoder (fixed-depth ray, oracle point, depth point).
    Point(MlpParams),
    /// Multi-point ray encoder.
    Ray(MlpParams),
    /// Top-k point encoder plus reduction (reduction kept frozen).
    TopK(TopKParams),
}

impl FeatureEncoder {
    pub fn mlp(&self) -> Option<&MlpParams> {
        match self {
            FeatureEncoder::Fixed => None,
            FeatureEncoder::Point(m) | FeatureEncoder::Ray(m) => Some(m),
            FeatureEncoder::TopK(t) => Some(&t.point_mlp),
        }
    }
}

/// Everything `train_toy` produces: the trained state, the de-normalized
/// mean center error in meters, and the per-step loss history.
pub struct TrainOutcome {
    pub state: DecoderState,
    pub final_error_m: f64,
    pub losses: Vec<f64>,
    pub feature_encoder: FeatureEncoder,
}

fn build_pe_grid(
    variant: &PeVariantConfig,
    encoder: &FeatureEncoder,
    view: &RenderedView,
    cam: &crate::geometry::CameraParams,
    cfg: &TrainConfig,
    spec: &SineSpec,
    depth_pred: Option<&DepthMap>,
    depth_dist: Option<&DepthDistribution>,
) -> Result<PeGrid> {
    match (variant, encoder) {
        (PeVariantConfig::Pe2d, _) => Ok(pe2d(cfg.grid, spec)),
        (PeVariantConfig::CameraRay { bins }, FeatureEncoder::Ray(mlp)) => {
            pe_camera_ray(cam, bins, mlp, &cfg.region, spec, cfg.grid)
        }
        (PeVariantConfig::LidarRay { fixed_d }, FeatureEncoder::Point(mlp)) => {
            pe_lidar_ray(cam, *fixed_d, mlp, &cfg.region, spec, cfg.grid)
        }
        (PeVariantConfig::OraclePoint, FeatureEncoder::Point(mlp)) => {
            pe_oracle_point(&view.depth, cam, &cfg.region, mlp, spec, cfg.grid.stride)
        }
        (PeVariantConfig::DepthPoint, FeatureEncoder::Point(mlp)) => pe_depth_point(
            depth_pred.expect("depth-point variant requires a predicted depth map"),
            cam,
            &cfg.region,
            mlp,
            spec,
            cfg.grid.stride,
        ),
        (PeVariantConfig::TopK { k }, FeatureEncoder::TopK(params)) => pe_topk(
            depth_dist.expect("top-k variant requires a depth distribution"),
            &cfg.depth_head_bins,
            *k,
            cam,
            &cfg.region,
            params,
            spec,
            cfg.grid.stride,
        ),
        _ => unreachable!("encoder kind always matches the variant"),
    }
}

/// Initialize the feature encoder for a variant.
pub fn init_feature_encoder(
    variant: &PeVariantConfig,
    cfg: &TrainConfig,
    spec: &SineSpec,
) -> FeatureEncoder {
    let seed = cfg.seed.wrapping_add(0xE4C0);
    match variant {
        PeVariantConfig::Pe2d => FeatureEncoder::Fixed,
        PeVariantConfig::CameraRay { bins } => FeatureEncoder::Ray(MlpParams::ray_encoder(
            cfg.channels,
            cfg.hidden_dim,
            spec,
            bins.count(),
            seed,
        )),
        PeVariantConfig::LidarRay { .. }
        | PeVariantConfig::OraclePoint
        | PeVariantConfig::DepthPoint => FeatureEncoder::Point(MlpParams::point_encoder(
            cfg.channels,
            cfg.hidden_dim,
            spec,
            seed,
        )),
        PeVariantConfig::TopK { k } => FeatureEncoder::TopK(TopKParams::init(
            *k,
            cfg.channels,
            cfg.hidden_dim,
            spec,
            seed,
        )),
    }
}

/// Train a tiny per-scene depth head on the (frozen) features against the
/// rendered depth, for the depth-point and top-k variants.
fn fit_depth_head(
    features: &FeatureGrid,
    view: &RenderedView,
    cfg: &TrainConfig,
) -> Result<(DepthMap, DepthDistribution)> {
    let (h, w) = (features.height, features.width);
    let mut flat = vec![0.0; h * w * features.channels];
    for row in 0..h {
        for col in 0..w {
            flat[(row * w + col) * features.channels..][..features.channels]
                .copy_from_slice(features.cell(row, col));
        }
    }
    let mask: Vec<bool> = (0..h * w)
        .map(|i| view.depth.valid_flags()[i])
        .collect();
    let mut head = DepthHead::init(
        features.channels,
        64,
        cfg.depth_head_bins.clone(),
        cfg.seed.wrapping_add(0xD4),
    );
    for _ in 0..cfg.depth_head_steps {
        head.train_step(&flat, &view.depth, &mask, cfg.depth_head_lr)?;
    }
    let (pred, dist) = head.predict(&flat, h, w)?;
    // Carry the render validity over to the prediction.
    let mut masked_pred = DepthMap::invalid(h, w);
    for row in 0..h {
        for col in 0..w {
            if view.depth.is_valid(row, col) {
                masked_pred.set(row, col, pred.depth(row, col));
            }
        }
    }
    Ok((masked_pred, dist))
}

/// Prepare the fused token batch for one scene under a variant.
pub fn build_scene_batch(
    scene: &SimScene,
    variant: &PeVariantConfig,
    encoder: &FeatureEncoder,
    cfg: &TrainConfig,
    spec: &SineSpec,
) -> Result<SceneBatch> {
    let rig = default_rig(cfg.d_lc, cfg.delta);
    let needs_depth_head = matches!(
        variant,
        PeVariantConfig::DepthPoint | PeVariantConfig::TopK { .. }
    );
    let mut feature_grids = Vec::new();
    let mut pe_grids = Vec::new();
    let mut sine_inputs: Vec<f64> = Vec::new();
    let mut encoder_in_dim = 0;
    for cam in &rig {
        let view = render(scene, cam, cfg.grid)?;
        let features = scene_features(&view, cfg.channels, cfg.seed.wrapping_add(0xF0));
        let (depth_pred, depth_dist) = if needs_depth_head {
            let (p, d) = fit_depth_head(&features, &view, cfg)?;
            (Some(p), Some(d))
        } else {
            (None, None)
        };
        let pe = build_pe_grid(
            variant,
            encoder,
            &view,
            cam,
            cfg,
            spec,
            depth_pred.as_ref(),
            depth_dist.as_ref(),
        )?;
        // Cache encoder inputs for variants whose PE flows through a
        // point MLP, so the encoder can be trained if requested.
        if let FeatureEncoder::Point(mlp) = encoder {
            encoder_in_dim = mlp.in_dim;
            for row in 0..cfg.grid.height {
                for col in 0..cfg.grid.width {
                    let mut buf = vec![0.0; mlp.in_dim];
                    let depth = match variant {
                        PeVariantConfig::LidarRay { fixed_d } => Some(*fixed_d),
                        PeVariantConfig::OraclePoint => view
                            .depth
                            .is_valid(row, col)
                            .then(|| view.depth.depth(row, col)),
                        PeVariantConfig::DepthPoint => {
                            let p = depth_pred.as_ref().unwrap();
                            p.is_valid(row, col).then(|| p.depth(row, col))
                        }
                        _ => None,
                    };
                    if let Some(d) = depth {
                        let p = crate::geometry::back_project(
                            crate::geometry::pixel_center(col, cfg.grid.stride),
                            crate::geometry::pixel_center(row, cfg.grid.stride),
                            d,
                            cam,
                        )?;
                        let (pn, _) = cfg.region.normalize_point(p);
                        point_sine_features_into(&pn, spec, &mut buf);
                    }
                    sine_inputs.extend_from_slice(&buf);
                }
            }
        }
        feature_grids.push(features);
        pe_grids.push(pe);
    }
    let tokens = fuse_features(&feature_grids, &pe_grids)?;
    let mut raw_features = vec![0.0; tokens.n_tokens * cfg.channels];
    for (t, &(cam_idx, row, col)) in tokens.token_map.iter().enumerate() {
        raw_features[t * cfg.channels..(t + 1) * cfg.channels]
            .copy_from_slice(feature_grids[cam_idx].cell(row, col));
    }
    let gt_centers = scene
        .objects()
        .iter()
        .map(|(_, center)| cfg.region.normalize_point(*center).0)
        .collect();
    Ok(SceneBatch {
        tokens,
        sine_inputs,
        encoder_in_dim,
        gt_centers,
        raw_features,
    })
}

fn rebuild_tokens_from_encoder(batch: &mut SceneBatch, mlp: &MlpParams) {
    let c = mlp.out_dim;
    let mut hidden = vec![0.0; mlp.hidden_dim];
    let mut pe = vec![0.0; c];
    for t in 0..batch.tokens.n_tokens {
        if batch.tokens.masked(t) {
            continue;
        }
        let sine = &batch.sine_inputs[t * mlp.in_dim..(t + 1) * mlp.in_dim];
        mlp.forward_into(sine, &mut hidden, &mut pe);
        let raw = batch.raw_features[t * c..(t + 1) * c].to_vec();
        let tok = batch.tokens.token_mut(t);
        for i in 0..c {
            tok[i] = raw[i] + pe[i];
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Apply a gradient-descent update to every trained parameter group.
fn apply_update(
    state: &mut DecoderState,
    encoder: &mut FeatureEncoder,
    grads: &DetectorGrads,
    enc_grads: Option<&MlpGrads>,
    lr: f64,
    shared: bool,
) {
    axpy(&mut state.content, &grads.content, -lr);
    axpy(&mut state.anchor_raw, &grads.anchor_raw, -lr);
    axpy(&mut state.wq, &grads.wq, -lr);
    axpy(&mut state.wk, &grads.wk, -lr);
    axpy(&mut state.wv, &grads.wv, -lr);
    axpy(&mut state.out_w, &grads.out_w, -lr);
    for o in 0..3 {
        state.out_b[o] -= lr * grads.out_b[o];
    }
    match (enc_grads, encoder) {
        (Some(eg), FeatureEncoder::Point(mlp)) => {
            // In shared mode the anchor encoder and the feature encoder are
            // one tied parameter set: both copies take the summed update.
            if shared {
                let apply = |m: &mut MlpParams, anchor: &MlpGrads, feat: &MlpGrads, lr: f64| {
                    for ((w, ga), gf) in m.w1.iter_mut().zip(&anchor.w1).zip(&feat.w1) {
                        *w -= lr * (ga + gf);
                    }
                    for ((b, ga), gf) in m.b1.iter_mut().zip(&anchor.b1).zip(&feat.b1) {
                        *b -= lr * (ga + gf);
                    }
                    for ((w, ga), gf) in m.w2.iter_mut().zip(&anchor.w2).zip(&feat.w2) {
                        *w -= lr * (ga + gf);
                    }
                    for ((b, ga), gf) in m.b2.iter_mut().zip(&anchor.b2).zip(&feat.b2) {
                        *b -= lr * (ga + gf);
                    }
                };
                apply(mlp, &grads.anchor_mlp, eg, lr);
                apply(&mut state.anchor_mlp, &grads.anchor_mlp, eg, lr);
            } else {
                axpy(&mut mlp.w1, &eg.w1, -lr);
                axpy(&mut mlp.b1, &eg.b1, -lr);
                axpy(&mut mlp.w2, &eg.w2, -lr);
                axpy(&mut mlp.b2, &eg.b2, -lr);
                axpy(&mut state.anchor_mlp.w1, &grads.anchor_mlp.w1, -lr);
                axpy(&mut state.anchor_mlp.b1, &grads.anchor_mlp.b1, -lr);
                axpy(&mut state.anchor_mlp.w2, &grads.anchor_mlp.w2, -lr);
                axpy(&mut state.anchor_mlp.b2, &grads.anchor_mlp.b2, -lr);
            }
        }
        _ => {
            axpy(&mut state.anchor_mlp.w1, &grads.anchor_mlp.w1, -lr);
            axpy(&mut state.anchor_mlp.b1, &grads.anchor_mlp.b1, -lr);
            axpy(&mut state.anchor_mlp.w2, &grads.anchor_mlp.w2, -lr);
            axpy(&mut state.anchor_mlp.b2, &grads.anchor_mlp.b2, -lr);
        }
    }
}

/// Mean Euclidean center error (meters) after de-normalization.
pub fn mean_center_error_m(
    state: &DecoderState,
    spec: &SineSpec,
    batches: &[SceneBatch],
    region: &PerceptionRegion,
) -> Result<f64> {
    let extent = region.extent();
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let centers = decode(state, spec, &batch.tokens)?;
        for &(g, p) in &greedy_assign(&centers, &batch.gt_centers) {
            let diff = centers[p] - batch.gt_centers[g];
            let metric = Vector3::new(diff.x * extent.x, diff.y * extent.y, diff.z * extent.z);
            total += metric.norm();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Full-batch deterministic gradient descent on the greedy-assignment
/// squared-L2 center loss. Returns the trained state, the de-normalized
/// mean center error and the loss history.
pub fn train_toy(
    scenes: &[SimScene],
    variant: &PeVariantConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    for scene in scenes {
        scene.validate(&cfg.region)?;
        if scene.objects().is_empty() {
            return Err(Error::Config {
                path: "scenes".into(),
                message: "every training scene needs at least one object".into(),
            });
        }
        if scene.objects().len() > cfg.queries {
            return Err(Error::Config {
                path: "scenes".into(),
                message: "more objects than queries".into(),
            });
        }
    }
    let spec = SineSpec::for_channels(cfg.channels)?;
    let mut encoder = init_feature_encoder(variant, cfg, &spec);
    let anchor_mlp = match (&encoder, cfg.shared_encoder) {
        // Shared generator: anchors use the same parameters as the feature
        // point encoder (a bitwise copy, updated in lockstep if trained).
        (FeatureEncoder::Point(mlp), true) => mlp.clone(),
        (FeatureEncoder::TopK(t), true) => t.point_mlp.clone(),
        // Multi-point ray encoders cannot encode a single anchor point, and
        // pe2d has no encoder; anchors get their own generator.
        _ => MlpParams::point_encoder(
            cfg.channels,
            cfg.hidden_dim,
            &spec,
            cfg.seed.wrapping_add(0xA5C0),
        ),
    };
    let mut batches: Vec<SceneBatch> = scenes
        .iter()
        .map(|s| build_scene_batch(s, variant, &encoder, cfg, &spec))
        .collect::<Result<_>>()?;
    let mut state =
        DecoderState::init_scaled(cfg.channels, cfg.queries, anchor_mlp, cfg.seed, cfg.qk_init_scale);

    let n_scenes = scenes.len() as f64;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut cache = DecodeCache::default();
    for _ in 0..cfg.steps {
        let mut grads = DetectorGrads::zeros(&state, 0);
        let mut enc_grads = encoder.mlp().map(MlpGrads::zeros);
        let mut step_loss = 0.0;
        for batch in &batches {
            if cfg.train_encoder {
                grads.token_pe = vec![0.0; batch.tokens.n_tokens * cfg.channels];
            }
            decode_with_cache(&state, &spec, &batch.tokens, &mut cache)?;
            let (loss, _) = scene_loss_backward_opts(
                &state,
                &spec,
                &batch.tokens,
                &batch.gt_centers,
                &cache,
                &mut grads,
                1.0 / n_scenes,
                cfg.train_encoder,
            );
            step_loss += loss / n_scenes;
            if cfg.train_encoder {
                if let (FeatureEncoder::Point(mlp), Some(eg)) = (&encoder, enc_grads.as_mut()) {
                    let mut hidden = vec![0.0; mlp.hidden_dim];
                    let mut out = vec![0.0; mlp.out_dim];
                    for t in 0..batch.tokens.n_tokens {
                        if batch.tokens.masked(t) {
                            continue;
                        }
                        let up = &grads.token_pe[t * cfg.channels..(t + 1) * cfg.channels];
                        if up.iter().all(|g| *g == 0.0) {
                            continue;
                        }
                        let sine = &batch.sine_inputs[t * mlp.in_dim..(t + 1) * mlp.in_dim];
                        mlp.forward_into(sine, &mut hidden, &mut out);
                        mlp_backward(mlp, sine, &hidden, up, eg, None);
                    }
                }
            }
        }
        losses.push(step_loss);
        apply_update(
            &mut state,
            &mut encoder,
            &grads,
            if cfg.train_encoder {
                enc_grads.as_ref()
            } else {
                None
            },
            cfg.lr,
            cfg.shared_encoder,
        );
        if cfg.train_encoder {
            if let FeatureEncoder::Point(mlp) = &encoder {
                for batch in &mut batches {
                    rebuild_tokens_from_encoder(batch, mlp);
                }
            }
        }
    }
    let final_error_m = mean_center_error_m(&state, &spec, &batches, &cfg.region)?;
    Ok(TrainOutcome {
        state,
        final_error_m,
        losses,
        feature_encoder: encoder,
    })
}

/// Deterministic one-object training scenes: spheres at evenly spaced
/// azimuths (offset off the camera axes) and cycling ranges, one per
/// scene. With more scenes than queries, constant per-query outputs floor
/// at the k-means error of the object set, so localization has to come
/// from the positional encoding.
pub fn standard_scenes(count: usize) -> Vec<SimScene> {
    // Ranges repeat across azimuths so the (frozen) depth feature can
    // narrow the ring but never the azimuth.
    const RANGES: [f64; 2] = [10.0, 25.0];
    (0..count)
        .map(|j| {
            let yaw = (j as f64 / count as f64) * std::f64::consts::TAU + 7f64.to_radians();
            let range = RANGES[j % RANGES.len()];
            let radius = 1.0 + range / 12.0; // keep a few cells visible at distance
            let center = Vector3::new(range * yaw.cos(), range * yaw.sin(), -0.5);
            SimScene::ground(-2.0).with_sphere(center, radius, 1)
        })
        .collect()
}

/// One ablation result row.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub variant: String,
    pub params: String,
    pub seed: u64,
    pub steps: usize,
    pub final_error_m: f64,
}

impl SuiteRow {
    pub fn csv_header() -> &'static str {
        "variant,params,seed,steps,final_error_m"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.variant, self.params, self.seed, self.steps, self.final_error_m
        )
    }
}

/// Which ablation table to reproduce at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    /// Camera-ray bin count / discretization / range sweep.
    Table1,
    /// Fixed-depth ray sweep over d.
    Table2,
    /// PE-variant comparison.
    Table3,
    /// Shared vs separated embedding generator.
    Table6,
}

impl SuiteKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(SuiteKind::Table1),
            "table2" => Ok(SuiteKind::Table2),
            "table3" => Ok(SuiteKind::Table3),
            "table6" => Ok(SuiteKind::Table6),
            other => Err(Error::Config {
                path: "suite".into(),
                message: format!("unknown suite '{other}' (expected table1|table2|table3|table6)"),
            }),
        }
    }
}

/// The variant/parameter grid of one suite.
pub fn suite_variants(kind: SuiteKind) -> Vec<(PeVariantConfig, bool)> {
    let ray = |method: BinMethod, lo: f64, hi: f64, n: usize| {
        (
            PeVariantConfig::CameraRay {
                bins: make_bins(method, lo, hi, n).expect("suite bins are valid"),
            },
            true,
        )
    };
    match kind {
        SuiteKind::Table1 => vec![
            ray(BinMethod::Ud, 1.0, 61.0, 64),
            ray(BinMethod::Lid, 1.0, 61.0, 64),
            ray(BinMethod::Sid, 1.0, 61.0, 64),
            ray(BinMethod::Ud, 1.0, 61.0, 32),
            ray(BinMethod::Lid, 1.0, 61.0, 32),
            ray(BinMethod::Sid, 1.0, 61.0, 32),
            ray(BinMethod::Ud, 1.0, 61.0, 2),
            ray(BinMethod::Lid, 1.0, 61.0, 2),
            ray(BinMethod::Sid, 1.0, 61.0, 2),
            ray(BinMethod::Ud, 1.0, 31.0, 64),
            ray(BinMethod::Ud, 31.0, 61.0, 64),
        ],
        SuiteKind::Table2 => [0.2, 1.0, 15.0, 30.0, 60.0]
            .into_iter()
            .map(|d| (PeVariantConfig::LidarRay { fixed_d: d }, true))
            .collect(),
        SuiteKind::Table3 => vec![
            (PeVariantConfig::Pe2d, true),
            ray(BinMethod::Lid, 1.0, 61.0, 64),
            (PeVariantConfig::LidarRay { fixed_d: 0.2 }, true),
            (PeVariantConfig::LidarRay { fixed_d: 60.0 }, true),
            (PeVariantConfig::OraclePoint, true),
            (PeVariantConfig::DepthPoint, true),
            (PeVariantConfig::TopK { k: 5 }, true),
        ],
        SuiteKind::Table6 => vec![
            (PeVariantConfig::OraclePoint, true),
            (PeVariantConfig::OraclePoint, false),
        ],
    }
}

/// Run the full grid of a suite across seeds and collect CSV rows.
pub fn ablation_suite(kind: SuiteKind, seeds: u64, base: &TrainConfig) -> Result<Vec<SuiteRow>> {
    let scenes = standard_scenes(4);
    let mut rows = Vec::new();
    for (variant, shared) in suite_variants(kind) {
        for seed in 0..seeds {
            let cfg = TrainConfig {
                seed,
                shared_encoder: shared,
                ..base.clone()
            };
            let outcome = train_toy(&scenes, &variant, &cfg)?;
            let params = match kind {
                SuiteKind::Table6 => {
                    if shared {
                        "shared".to_string()
                    } else {
                        "separated".to_string()
                    }
                }
                _ => variant.params_label(),
            };
            rows.push(SuiteRow {
                variant: variant.variant().name().to_string(),
                params,
                seed,
                steps: cfg.steps,
                final_error_m: outcome.final_error_m,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::pe2d;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 5,
            queries: 2,
            grid: FeatureGridSpec::new(2, 4, 128),
            ..TrainConfig::default()
        }
    }

    fn tiny_tokens(channels: usize, n: usize, masked: &[usize]) -> PointAwareFeatures {
        let mut mask = vec![false; n];
        for &m in masked {
            mask[m] = true;
        }
        PointAwareFeatures::from_parts(
            channels,
            (0..n * channels).map(|i| (i as f64 * 0.37).sin() * 0.5).collect(),
            mask,
            (0..n).map(|t| (0, 0, t)).collect(),
        )
        .unwrap()
    }

    fn tiny_state(channels: usize, queries: usize, seed: u64) -> DecoderState {
        let spec = SineSpec::for_channels(channels).unwrap();
        let mlp = MlpParams::point_encoder(channels, 2 * channels, &spec, seed);
        DecoderState::init(channels, queries, mlp, seed)
    }

    #[test]
    fn fuse_features_identities() {
        let spec = SineSpec::for_channels(64).unwrap();
        let pe = pe2d(FeatureGridSpec::new(2, 3, 16), &spec);
        let zero_f = FeatureGrid::zeros(64, 2, 3);
        let fused = fuse_features(&[zero_f.clone()], &[pe.clone()]).unwrap();
        for (t, &(_, row, col)) in fused.token_map.iter().enumerate() {
            assert_eq!(fused.token(t), pe.cell(row, col), "F = 0 gives F3D = PE");
        }
        let mut f = FeatureGrid::zeros(64, 2, 3);
        for row in 0..2 {
            for col in 0..3 {
                for c in 0..64 {
                    f.cell_mut(row, col)[c] = (row + col + c) as f64 * 0.01;
                }
            }
        }
        let zero_pe = PeGrid::zeros(64, 2, 3, PeVariant::Pe2d);
        let fused = fuse_features(&[f.clone()], &[zero_pe]).unwrap();
        for (t, &(_, row, col)) in fused.token_map.iter().enumerate() {
            assert_eq!(fused.token(t), f.cell(row, col), "PE = 0 gives F3D = F");
        }
    }

    #[test]
    fn fuse_commutes_with_camera_order_via_token_map() {
        let spec = SineSpec::for_channels(64).unwrap();
        let pe_a = pe2d(FeatureGridSpec::new(2, 2, 16), &spec);
        let mut f_a = FeatureGrid::zeros(64, 2, 2);
        let mut f_b = FeatureGrid::zeros(64, 2, 2);
        for row in 0..2 {
            for col in 0..2 {
                for c in 0..64 {
                    f_a.cell_mut(row, col)[c] = 1.0 + (row * 2 + col) as f64;
                    f_b.cell_mut(row, col)[c] = -2.0 - (row * 2 + col) as f64;
                }
            }
        }
        let ab = fuse_features(&[f_a.clone(), f_b.clone()], &[pe_a.clone(), pe_a.clone()]).unwrap();
        let ba = fuse_features(&[f_b, f_a], &[pe_a.clone(), pe_a]).unwrap();
        // Align tokens through the bookkeeping: camera 0 of `ab` is camera 1
        // of `ba`.
        for (t, &(cam, row, col)) in ab.token_map.iter().enumerate() {
            let want_cam = 1 - cam;
            let s = ba
                .token_map
                .iter()
                .position(|&m| m == (want_cam, row, col))
                .unwrap();
            assert_eq!(ab.token(t), ba.token(s));
        }
    }

    #[test]
    fn fuse_shape_mismatch_rejected() {
        let spec = SineSpec::for_channels(64).unwrap();
        let pe = pe2d(FeatureGridSpec::new(2, 3, 16), &spec);
        let f = FeatureGrid::zeros(64, 3, 3);
        assert!(matches!(
            fuse_features(&[f], &[pe]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_unmasked_token_takes_all_attention() {
        let spec = SineSpec::for_channels(64).unwrap();
        let state = tiny_state(64, 2, 3);
        let feats = tiny_tokens(64, 5, &[0, 1, 3, 4]);
        let mut cache = DecodeCache::default();
        decode_with_cache(&state, &spec, &feats, &mut cache).unwrap();
        for k in 0..2 {
            assert_eq!(cache.attn[k * 5 + 2], 1.0);
            for t in [0usize, 1, 3, 4] {
                assert_eq!(cache.attn[k * 5 + t], 0.0);
            }
        }
    }

    #[test]
    fn identical_tokens_get_uniform_attention() {
        let spec = SineSpec::for_channels(64).unwrap();
        let state = tiny_state(64, 1, 4);
        let n = 6;
        let mut feats = tiny_tokens(64, n, &[]);
        let first = feats.token(0).to_vec();
        for t in 1..n {
            feats.token_mut(t).copy_from_slice(&first);
        }
        let mut cache = DecodeCache::default();
        decode_with_cache(&state, &spec, &feats, &mut cache).unwrap();
        for t in 0..n {
            assert!((cache.attn[t] - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let spec = SineSpec::for_channels(64).unwrap();
        let state = tiny_state(64, 3, 9);
        let feats = tiny_tokens(64, 17, &[4, 9]);
        let mut cache = DecodeCache::default();
        decode_with_cache(&state, &spec, &feats, &mut cache).unwrap();
        for k in 0..3 {
            let sum: f64 = cache.attn[k * 17..(k + 1) * 17].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "query {k}: {sum}");
        }
    }

    #[test]
    fn all_masked_tokens_is_an_error() {
        let spec = SineSpec::for_channels(64).unwrap();
        let state = tiny_state(64, 1, 2);
        let feats = tiny_tokens(64, 3, &[0, 1, 2]);
        assert!(matches!(
            decode(&state, &spec, &feats),
            Err(Error::AllTokensMasked)
        ));
    }

    #[test]
    fn greedy_assignment_is_deterministic_and_complete() {
        let preds = vec![
            Vector3::new(0.1, 0.1, 0.1),
            Vector3::new(0.9, 0.9, 0.9),
            Vector3::new(0.5, 0.5, 0.5),
        ];
        let gts = vec![Vector3::new(0.88, 0.9, 0.9), Vector3::new(0.1, 0.12, 0.1)];
        let a = greedy_assign(&preds, &gts);
        assert_eq!(a, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn zero_steps_error_is_bitwise_reproducible() {
        let cfg = TrainConfig {
            steps: 0,
            ..tiny_cfg()
        };
        let scenes = standard_scenes(2);
        let a = train_toy(&scenes, &PeVariantConfig::OraclePoint, &cfg).unwrap();
        let b = train_toy(&scenes, &PeVariantConfig::OraclePoint, &cfg).unwrap();
        assert_eq!(a.final_error_m.to_bits(), b.final_error_m.to_bits());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn loss_non_increasing_with_small_lr() {
        let cfg = TrainConfig {
            steps: 60,
            lr: 1e-3,
            ..tiny_cfg()
        };
        let scenes = standard_scenes(1);
        let outcome = train_toy(&scenes, &PeVariantConfig::OraclePoint, &cfg).unwrap();
        for w in outcome.losses.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn anchor_gradients_are_live_when_loss_is_nonzero() {
        let cfg = tiny_cfg();
        let spec = SineSpec::for_channels(cfg.channels).unwrap();
        let encoder = init_feature_encoder(&PeVariantConfig::OraclePoint, &cfg, &spec);
        let scenes = standard_scenes(2);
        let batch = build_scene_batch(&scenes[0], &PeVariantConfig::OraclePoint, &encoder, &cfg, &spec)
            .unwrap();
        let mlp = encoder.mlp().unwrap().clone();
        let state = DecoderState::init(cfg.channels, cfg.queries, mlp, 11);
        let mut cache = DecodeCache::default();
        decode_with_cache(&state, &spec, &batch.tokens, &mut cache).unwrap();
        let mut grads = DetectorGrads::zeros(&state, batch.tokens.n_tokens);
        let (loss, _) = scene_loss_backward(
            &state,
            &spec,
            &batch.tokens,
            &batch.gt_centers,
            &cache,
            &mut grads,
            1.0,
        );
        assert!(loss > 0.0);
        let g_norm: f64 = grads.anchor_raw.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(g_norm > 0.0, "anchor gradients are dead");
    }

    /// With a shared generator and encoder training enabled, the anchor
    /// encoder and the feature encoder are one tied parameter set: they
    /// must stay bitwise identical through updates.
    #[test]
    fn shared_encoder_stays_in_lockstep_when_trained() {
        let cfg = TrainConfig {
            steps: 10,
            lr: 0.1,
            train_encoder: true,
            shared_encoder: true,
            queries: 2,
            grid: FeatureGridSpec::new(2, 4, 128),
            ..TrainConfig::default()
        };
        let scenes = standard_scenes(2);
        let out = train_toy(&scenes, &PeVariantConfig::OraclePoint, &cfg).unwrap();
        match &out.feature_encoder {
            FeatureEncoder::Point(mlp) => {
                assert_eq!(mlp, &out.state.anchor_mlp, "tied parameters drifted apart");
            }
            other => panic!("unexpected encoder {other:?}"),
        }
        // And the encoder actually moved.
        let fresh = init_feature_encoder(&PeVariantConfig::OraclePoint, &cfg, &SineSpec::for_channels(64).unwrap());
        assert_ne!(fresh.mlp().unwrap(), &out.state.anchor_mlp);
    }

    #[test]
    fn suite_row_counts() {
        assert_eq!(suite_variants(SuiteKind::Table2).len(), 5);
        assert_eq!(suite_variants(SuiteKind::Table6).len(), 2);
        assert_eq!(suite_variants(SuiteKind::Table3).len(), 7);
        assert_eq!(suite_variants(SuiteKind::Table1).len(), 11);
    }

    #[test]
    fn single_cell_suite_emits_one_row() {
        let cfg = TrainConfig {
            steps: 2,
            ..tiny_cfg()
        };
        let rows = {
            let scenes = standard_scenes(1);
            let outcome = train_toy(&scenes, &PeVariantConfig::Pe2d, &cfg).unwrap();
            vec![SuiteRow {
                variant: "pe2d".into(),
                params: "-".into(),
                seed: cfg.seed,
                steps: cfg.steps,
                final_error_m: outcome.final_error_m,
            }]
        };
        assert_eq!(rows.len(), 1);
        assert!(rows[0].to_csv().starts_with("pe2d,-,0,2,"));
    }
}
