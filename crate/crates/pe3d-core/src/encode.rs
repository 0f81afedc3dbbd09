//! Positional-encoding generators: sine coordinate encoding, the
//! concat+MLP point encoder with analytic gradients, and the per-variant
//! PE grid constructors (2D, camera-ray, fixed-depth ray, oracle point,
//! depth-guided point, top-k), plus anchor-point encoding for queries.

use nalgebra::Vector3;
use rand::Rng;

use crate::bins::DepthBins;
use crate::depth::DepthDistribution;
use crate::error::{Error, Result};
use crate::geometry::{back_project, pixel_center, CameraParams, DepthMap, PerceptionRegion};
use crate::rng::seeded_rng;

/// Dot product with four fixed-order accumulators. The grouping is part of
/// the numeric contract: results are bit-identical across runs and
/// platforms, and the independent accumulators let the compiler vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[4 * i..4 * i + 4], &b[4 * i..4 * i + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sine/cosine coordinate encoding: maps one scalar to `half_dim` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineSpec {
    /// Output size per coordinate (C/2). Must be even and positive.
    pub half_dim: usize,
    /// Frequency base, > 1. 10000 is the transformer convention.
    pub temperature: f64,
}

/// Input scale applied before the frequency ladder: coordinates live in
/// [0, 1], so 2*pi spans one full period of the lowest frequency.
pub const SINE_SCALE: f64 = std::f64::consts::TAU;

impl SineSpec {
    pub fn new(half_dim: usize, temperature: f64) -> Result<Self> {
        if half_dim == 0 || half_dim % 2 != 0 {
            return Err(Error::Config {
                path: "sine.half_dim".into(),
                message: format!("must be even and positive, got {half_dim}"),
            });
        }
        if !(temperature > 1.0) {
            return Err(Error::Config {
                path: "sine.temperature".into(),
                message: format!("must be > 1, got {temperature}"),
            });
        }
        Ok(Self {
            half_dim,
            temperature,
        })
    }

    /// Spec for a PE of `channels` dimensions (half_dim = C/2, temp 10000).
    pub fn for_channels(channels: usize) -> Result<Self> {
        if channels % 4 != 0 {
            return Err(Error::Config {
                path: "sine.channels".into(),
                message: format!("channel count must be divisible by 4, got {channels}"),
            });
        }
        Self::new(channels / 2, 10000.0)
    }

    /// Angular frequency of pair `k`: `SINE_SCALE / temperature^(2k/half_dim)`.
    #[inline]
    pub fn frequency(&self, k: usize) -> f64 {
        SINE_SCALE / self.temperature.powf(2.0 * k as f64 / self.half_dim as f64)
    }
}

/// Write the sine encoding of `x` into `out` (length `half_dim`):
/// `out[2k] = sin(x * f_k)`, `out[2k+1] = cos(x * f_k)`.
pub fn sine_encode_into(x: f64, spec: &SineSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.half_dim);
    for k in 0..spec.half_dim / 2 {
        let (s, c) = (x * spec.frequency(k)).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
}

pub fn sine_encode(x: f64, spec: &SineSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.half_dim];
    sine_encode_into(x, spec, &mut out);
    out
}

/// Derivative of each sine-encoding entry with respect to `x`.
pub fn sine_encode_grad_into(x: f64, spec: &SineSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.half_dim);
    for k in 0..spec.half_dim / 2 {
        let f = spec.frequency(k);
        let (s, c) = (x * f).sin_cos();
        out[2 * k] = c * f;
        out[2 * k + 1] = -s * f;
    }
}

/// Two linear layers with a ReLU in between. Weights are row-major
/// (`w1[h * in_dim + i]`, `w2[o * hidden_dim + h]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Seed the parameters were drawn from (recorded for reproducibility).
    pub seed: u64,
}

impl MlpParams {
    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, drawn
    /// from ChaCha8 seeded with `seed`. Identical seeds give bit-identical
    /// parameters on every platform.
    pub fn init(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let bound1 = 1.0 / (in_dim as f64).sqrt();
        let bound2 = 1.0 / (hidden_dim as f64).sqrt();
        let draw = |n: usize, b: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        let w1 = draw(hidden_dim * in_dim, bound1, &mut rng);
        let b1 = draw(hidden_dim, bound1, &mut rng);
        let w2 = draw(out_dim * hidden_dim, bound2, &mut rng);
        let b2 = draw(out_dim, bound2, &mut rng);
        Self {
            in_dim,
            hidden_dim,
            out_dim,
            w1,
            b1,
            w2,
            b2,
            seed,
        }
    }

    /// Point encoder reducing 3 * half_dim sine features to `channels`.
    pub fn point_encoder(channels: usize, hidden_dim: usize, spec: &SineSpec, seed: u64) -> Self {
        Self::init(3 * spec.half_dim, hidden_dim, channels, seed)
    }

    /// Ray encoder over `n_points` concatenated point encodings.
    pub fn ray_encoder(
        channels: usize,
        hidden_dim: usize,
        spec: &SineSpec,
        n_points: usize,
        seed: u64,
    ) -> Self {
        Self::init(3 * spec.half_dim * n_points, hidden_dim, channels, seed)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Forward pass writing the post-ReLU hidden layer and output.
    pub fn forward_into(&self, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(hidden.len(), self.hidden_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for h in 0..self.hidden_dim {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            hidden[h] = (self.b1[h] + dot(row, input)).max(0.0);
        }
        for o in 0..self.out_dim {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            out[o] = self.b2[o] + dot(row, hidden);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(input, &mut hidden, &mut out);
        out
    }
}

/// Gradient accumulator with the same shapes as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros(params: &MlpParams) -> Self {
        Self {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *g *= s;
        }
    }
}

/// Backward through the MLP. `hidden` is the post-ReLU activation from the
/// forward pass. Parameter gradients accumulate into `grads`; the gradient
/// with respect to the input is written to `grad_input` when provided.
/// The ReLU subgradient at exactly zero is taken as zero.
pub fn mlp_backward(
    params: &MlpParams,
    input: &[f64],
    hidden: &[f64],
    upstream: &[f64],
    grads: &mut MlpGrads,
    mut grad_input: Option<&mut [f64]>,
) {
    debug_assert_eq!(upstream.len(), params.out_dim);
    let mut grad_hidden = vec![0.0; params.hidden_dim];
    for o in 0..params.out_dim {
        let up = upstream[o];
        if up == 0.0 {
            continue;
        }
        grads.b2[o] += up;
        let row = &params.w2[o * params.hidden_dim..(o + 1) * params.hidden_dim];
        let grow = &mut grads.w2[o * params.hidden_dim..(o + 1) * params.hidden_dim];
        for h in 0..params.hidden_dim {
            grow[h] += up * hidden[h];
            grad_hidden[h] += up * row[h];
        }
    }
    if let Some(gi) = grad_input.as_deref_mut() {
        for g in gi.iter_mut() {
            *g = 0.0;
        }
    }
    for h in 0..params.hidden_dim {
        if hidden[h] <= 0.0 {
            continue; // ReLU gate closed
        }
        let gpre = grad_hidden[h];
        if gpre == 0.0 {
            continue;
        }
        grads.b1[h] += gpre;
        let grow = &mut grads.w1[h * params.in_dim..(h + 1) * params.in_dim];
        for (g, x) in grow.iter_mut().zip(input) {
            *g += gpre * x;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let row = &params.w1[h * params.in_dim..(h + 1) * params.in_dim];
            for (g, w) in gi.iter_mut().zip(row) {
                *g += gpre * w;
            }
        }
    }
}

/// Sine-encode the three coordinates of `p` into `out` (3 * half_dim).
pub fn point_sine_features_into(p: &Vector3<f64>, spec: &SineSpec, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 3 * spec.half_dim);
    let h = spec.half_dim;
    sine_encode_into(p.x, spec, &mut out[0..h]);
    sine_encode_into(p.y, spec, &mut out[h..2 * h]);
    sine_encode_into(p.z, spec, &mut out[2 * h..3 * h]);
}

/// `MLP(Cat(Sine(x), Sine(y), Sine(z)))`: embed one normalized point into
/// a C-dimensional PE vector.
pub fn encode_point(p: &Vector3<f64>, mlp: &MlpParams, spec: &SineSpec) -> Vec<f64> {
    assert_eq!(
        mlp.in_dim,
        3 * spec.half_dim,
        "point encoder input dim must be 3 * half_dim"
    );
    let mut features = vec![0.0; mlp.in_dim];
    point_sine_features_into(p, spec, &mut features);
    mlp.forward(&features)
}

/// Analytic chain rule through MLP, ReLU, concat and sine. Returns the
/// gradient of `upstream . encode_point(p)` with respect to `p` and the
/// MLP parameters.
pub fn encode_point_backward(
    p: &Vector3<f64>,
    mlp: &MlpParams,
    spec: &SineSpec,
    upstream: &[f64],
) -> (Vector3<f64>, MlpGrads) {
    let mut features = vec![0.0; mlp.in_dim];
    point_sine_features_into(p, spec, &mut features);
    let mut hidden = vec![0.0; mlp.hidden_dim];
    let mut out = vec![0.0; mlp.out_dim];
    mlp.forward_into(&features, &mut hidden, &mut out);

    let mut grads = MlpGrads::zeros(mlp);
    let mut grad_features = vec![0.0; mlp.in_dim];
    mlp_backward(
        mlp,
        &features,
        &hidden,
        upstream,
        &mut grads,
        Some(&mut grad_features),
    );

    let h = spec.half_dim;
    let mut sine_grad = vec![0.0; h];
    let mut grad_p = Vector3::zeros();
    for (coord, x) in [(0usize, p.x), (1, p.y), (2, p.z)] {
        sine_encode_grad_into(x, spec, &mut sine_grad);
        let seg = &grad_features[coord * h..(coord + 1) * h];
        grad_p[coord] = seg.iter().zip(&sine_grad).map(|(g, d)| g * d).sum();
    }
    (grad_p, grads)
}

/// PE variant tag carried by [`PeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeVariant {
    Pe2d,
    CameraRay,
    LidarRay,
    OraclePoint,
    DepthPoint,
    TopK,
}

impl PeVariant {
    pub fn name(self) -> &'static str {
        match self {
            PeVariant::Pe2d => "pe2d",
            PeVariant::CameraRay => "camera-ray",
            PeVariant::LidarRay => "lidar-ray",
            PeVariant::OraclePoint => "oracle-point",
            PeVariant::DepthPoint => "depth-point",
            PeVariant::TopK => "topk",
        }
    }
}

/// Per-cell C-dimensional PE vectors for one view. Cells are stored
/// contiguously (`[row][col][channel]`); the binary export format is
/// channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PeGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub variant: PeVariant,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl PeGrid {
    pub fn zeros(channels: usize, height: usize, width: usize, variant: PeVariant) -> Self {
        Self {
            channels,
            height,
            width,
            variant,
            data: vec![0.0; channels * height * width],
            mask: vec![false; height * width],
        }
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
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

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel value at (c, row, col) — the export format's index order.
    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.cell(row, col)[c]
    }
}

/// Feature-grid geometry: cell count and the image-pixel stride of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureGridSpec {
    pub height: usize,
    pub width: usize,
    pub stride: u32,
}

impl FeatureGridSpec {
    pub fn new(height: usize, width: usize, stride: u32) -> Self {
        Self {
            height,
            width,
            stride,
        }
    }
}

/// 2D positional encoding: `Cat(Sine(u_norm), Sine(v_norm))` of the cell
/// center, normalized by the grid size. Independent of any camera.
pub fn pe2d(grid: FeatureGridSpec, spec: &SineSpec) -> PeGrid {
    let channels = 2 * spec.half_dim;
    let mut out = PeGrid::zeros(channels, grid.height, grid.width, PeVariant::Pe2d);
    let h = spec.half_dim;
    for row in 0..grid.height {
        let v_norm = (row as f64 + 0.5) / grid.height as f64;
        for col in 0..grid.width {
            let u_norm = (col as f64 + 0.5) / grid.width as f64;
            let cell = out.cell_mut(row, col);
            sine_encode_into(u_norm, spec, &mut cell[0..h]);
            sine_encode_into(v_norm, spec, &mut cell[h..2 * h]);
        }
    }
    out
}

/// Encode the frustum points of one pixel: every bin center back-projected,
/// normalized, sine-encoded in ascending depth order, then reduced by the
/// ray MLP. Returns the PE vector and whether every point fell outside the
/// perception region.
pub fn encode_pixel_camera_ray(
    u: f64,
    v: f64,
    cam: &CameraParams,
    bins: &DepthBins,
    region: &PerceptionRegion,
    mlp: &MlpParams,
    spec: &SineSpec,
) -> Result<(Vec<f64>, bool)> {
    let n = bins.count();
    assert_eq!(
        mlp.in_dim,
        3 * spec.half_dim * n,
        "ray encoder input dim must be 3 * half_dim * n_bins"
    );
    let mut features = vec![0.0; mlp.in_dim];
    let mut all_out = true;
    let seg = 3 * spec.half_dim;
    for (j, &d) in bins.centers().iter().enumerate() {
        let p = back_project(u, v, d, cam)?;
        let (p_norm, clamped) = region.normalize_point(p);
        all_out &= clamped;
        point_sine_features_into(&p_norm, spec, &mut features[j * seg..(j + 1) * seg]);
    }
    Ok((mlp.forward(&features), all_out))
}

/// Encode a single pixel's 3D point at the given metric depth.
pub fn encode_pixel_point(
    u: f64,
    v: f64,
    depth: f64,
    cam: &CameraParams,
    region: &PerceptionRegion,
    mlp: &MlpParams,
    spec: &SineSpec,
) -> Result<(Vec<f64>, bool)> {
    let p = back_project(u, v, depth, cam)?;
    let (p_norm, clamped) = region.normalize_point(p);
    Ok((encode_point(&p_norm, mlp, spec), clamped))
}

/// Camera-ray PE grid: per cell, the concat-sine encoding of all bin
/// points reduced by `mlp`. A cell is masked only when every frustum point
/// lies outside the perception region.
pub fn pe_camera_ray(
    cam: &CameraParams,
    bins: &DepthBins,
    mlp: &MlpParams,
    region: &PerceptionRegion,
    spec: &SineSpec,
    grid: FeatureGridSpec,
) -> Result<PeGrid> {
    let mut out = PeGrid::zeros(mlp.out_dim, grid.height, grid.width, PeVariant::CameraRay);
    for row in 0..grid.height {
        let v = pixel_center(row, grid.stride);
        for col in 0..grid.width {
            let u = pixel_center(col, grid.stride);
            let (pe, all_out) = encode_pixel_camera_ray(u, v, cam, bins, region, mlp, spec)?;
            out.cell_mut(row, col).copy_from_slice(&pe);
            out.set_masked(row, col, all_out);
        }
    }
    Ok(out)
}

/// Fixed-depth ray PE: the camera-ray encoding degenerated to one point.
/// Bitwise-identical to [`pe_camera_ray`] with single-point bins and the
/// same parameters.
pub fn pe_lidar_ray(
    cam: &CameraParams,
    fixed_d: f64,
    mlp: &MlpParams,
    region: &PerceptionRegion,
    spec: &SineSpec,
    grid: FeatureGridSpec,
) -> Result<PeGrid> {
    let bins = DepthBins::single(fixed_d)?;
    let mut out = pe_camera_ray(cam, &bins, mlp, region, spec, grid)?;
    out.variant = PeVariant::LidarRay;
    Ok(out)
}

fn pe_point_grid(
    depth_map: &DepthMap,
    cam: &CameraParams,
    region: &PerceptionRegion,
    mlp: &MlpParams,
    spec: &SineSpec,
    stride: u32,
    variant: PeVariant,
) -> Result<PeGrid> {
    let mut out = PeGrid::zeros(mlp.out_dim, depth_map.height, depth_map.width, variant);
    for row in 0..depth_map.height {
        let v = pixel_center(row, stride);
        for col in 0..depth_map.width {
            if !depth_map.is_valid(row, col) {
                out.set_masked(row, col, true);
                continue;
            }
            let u = pixel_center(col, stride);
            let (pe, clamped) =
                encode_pixel_point(u, v, depth_map.depth(row, col), cam, region, mlp, spec)?;
            out.cell_mut(row, col).copy_from_slice(&pe);
            out.set_masked(row, col, clamped);
        }
    }
    Ok(out)
}

/// Oracle 3D point PE: back-project the ground-truth depth map, normalize,
/// encode. Cells without depth are masked and left zero.
pub fn pe_oracle_point(
    gt_depth: &DepthMap,
    cam: &CameraParams,
    region: &PerceptionRegion,
    mlp: &MlpParams,
    spec: &SineSpec,
    stride: u32,
) -> Result<PeGrid> {
    pe_point_grid(gt_depth, cam, region, mlp, spec, stride, PeVariant::OraclePoint)
}

/// Depth-guided 3D point PE: the oracle scheme with a predicted depth map
/// in place of ground truth.
pub fn pe_depth_point(
    pred_depth: &DepthMap,
    cam: &CameraParams,
    region: &PerceptionRegion,
    mlp: &MlpParams,
    spec: &SineSpec,
    stride: u32,
) -> Result<PeGrid> {
    pe_point_grid(pred_depth, cam, region, mlp, spec, stride, PeVariant::DepthPoint)
}

/// Parameters of the top-k reduction: a shared point encoder plus a linear
/// layer from the k concatenated encodings down to C.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKParams {
    pub k: usize,
    pub point_mlp: MlpParams,
    /// Row-major (channels x (k * channels)).
    pub reduce_w: Vec<f64>,
    pub reduce_b: Vec<f64>,
}

impl TopKParams {
    pub fn init(k: usize, channels: usize, hidden_dim: usize, spec: &SineSpec, seed: u64) -> Self {
        let point_mlp = MlpParams::point_encoder(channels, hidden_dim, spec, seed);
        let mut rng = seeded_rng(seed.wrapping_add(0x7055)); // distinct stream for the reducer
        let fan_in = k * channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let reduce_w = (0..channels * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let reduce_b = (0..channels).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            k,
            point_mlp,
            reduce_w,
            reduce_b,
        }
    }
}

/// Select the k most probable bins of one cell, highest probability first,
/// ties broken toward the lower bin index.
pub fn topk_bins(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Top-k PE: encode the k most probable bins' points per cell (descending
/// probability order), concatenate, and reduce with a dedicated linear
/// layer. A cell is masked when every selected point is out of region.
pub fn pe_topk(
    dist: &DepthDistribution,
    bins: &DepthBins,
    k: usize,
    cam: &CameraParams,
    region: &PerceptionRegion,
    params: &TopKParams,
    spec: &SineSpec,
    stride: u32,
) -> Result<PeGrid> {
    if k > bins.count() {
        return Err(Error::KTooLarge {
            k,
            n_bins: bins.count(),
        });
    }
    if dist.n_bins != bins.count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} bins", bins.count()),
            got: format!("{} distribution bins", dist.n_bins),
        });
    }
    assert_eq!(params.k, k, "TopKParams built for a different k");
    let channels = params.point_mlp.out_dim;
    let mut out = PeGrid::zeros(channels, dist.height, dist.width, PeVariant::TopK);
    let mut concat = vec![0.0; k * channels];
    for row in 0..dist.height {
        let v = pixel_center(row, stride);
        for col in 0..dist.width {
            let u = pixel_center(col, stride);
            let cell_probs = dist.cell(row, col);
            let selected = topk_bins(cell_probs, k);
            let mut all_out = true;
            for (slot, &bin_idx) in selected.iter().enumerate() {
                let p = back_project(u, v, bins.centers()[bin_idx], cam)?;
                let (p_norm, clamped) = region.normalize_point(p);
                all_out &= clamped;
                let enc = encode_point(&p_norm, &params.point_mlp, spec);
                concat[slot * channels..(slot + 1) * channels].copy_from_slice(&enc);
            }
            let cell = out.cell_mut(row, col);
            for (o, c) in cell.iter_mut().enumerate() {
                let rw = &params.reduce_w[o * k * channels..(o + 1) * k * channels];
                *c = params.reduce_b[o]
                    + rw.iter().zip(&concat).map(|(w, x)| w * x).sum::<f64>();
            }
            out.set_masked(row, col, all_out);
        }
    }
    Ok(out)
}

/// Learnable normalized 3D anchor points for object queries.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPoints {
    points: Vec<Vector3<f64>>,
}

impl AnchorPoints {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.x)
                || !(0.0..=1.0).contains(&p.y)
                || !(0.0..=1.0).contains(&p.z)
            {
                return Err(Error::Config {
                    path: format!("anchors[{i}]"),
                    message: format!("coordinates must lie in [0,1]^3, got {p:?}"),
                });
            }
        }
        Ok(Self { points })
    }

    /// Materialize anchors from unconstrained parameters via a sigmoid.
    pub fn from_raw(raw: &[f64]) -> Self {
        let points = raw
            .chunks_exact(3)
            .map(|c| Vector3::new(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])))
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Encode every anchor with the given point encoder. In shared mode this
/// is the same [`MlpParams`] instance used for the feature PE grids, so an
/// anchor placed exactly on a pixel's normalized back-projection yields
/// that pixel's PE bit for bit.
pub fn encode_anchors(anchors: &AnchorPoints, mlp: &MlpParams, spec: &SineSpec) -> Vec<Vec<f64>> {
    anchors
        .points()
        .iter()
        .map(|p| encode_point(p, mlp, spec))
        .collect()
}
