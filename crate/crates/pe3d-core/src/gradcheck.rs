//! Central-finite-difference verification of every analytic gradient in
//! the crate: the point encoder, depth fusion, both depth losses, and the
//! full toy-detector loss on a micro instance.
//!
//! The numerical side is the independent oracle: it only ever calls the
//! forward functions.

use nalgebra::Vector3;
use rand::Rng;

use crate::bins::{make_bins, BinMethod};
use crate::depth::{
    dfl_loss, dfl_loss_grad_logits, fuse_depth, smooth_l1, smooth_l1_grad, DepthDistribution,
    FusionWeight,
};
use crate::detector::{
    decode_with_cache, scene_loss_backward, DecodeCache, DecoderState, DetectorGrads,
    PointAwareFeatures,
};
use crate::encode::{
    encode_point, encode_point_backward, mlp_backward, point_sine_features_into, MlpGrads,
    MlpParams, SineSpec,
};
use crate::error::Result;
use crate::geometry::DepthMap;
use crate::rng::{derived_rng, seeded_rng};

/// Near-zero guard in the relative-error denominator.
const REL_FLOOR: f64 = 1e-4;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub samples: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "{:<14} samples={:<4} max_rel_err={:.3e} tol={:.0e} {}",
            self.name,
            self.samples,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Gradients of `upstream . encode_point(p)` with respect to the point and
/// every MLP parameter, against central finite differences.
pub fn check_encode_point(seed: u64, samples: usize) -> GradCheckReport {
    let spec = SineSpec::new(4, 10000.0).unwrap();
    let mut max_err: f64 = 0.0;
    for s in 0..samples {
        let mut rng = derived_rng(seed, 0xE0 + s as u64);
        let mlp = MlpParams::init(3 * spec.half_dim, 16, 8, rng.gen());
        let p = Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let upstream: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (grad_p, grad_mlp) = encode_point_backward(&p, &mlp, &spec, &upstream);
        let scalar = |mlp: &MlpParams, p: &Vector3<f64>| -> f64 {
            encode_point(p, mlp, &spec)
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        for coord in 0..3 {
            let numeric = central_diff(
                |x| {
                    let mut q = p;
                    q[coord] = x;
                    scalar(&mlp, &q)
                },
                p[coord],
            );
            max_err = max_err.max(rel_err(grad_p[coord], numeric));
        }
        // Spot-check a deterministic subset of the parameters per sample
        // (all four tensors are covered across samples).
        let mut check_param = |get: &dyn Fn(&MlpParams) -> f64,
                               set: &dyn Fn(&mut MlpParams, f64),
                               analytic: f64| {
            let x0 = get(&mlp);
            let numeric = central_diff(
                |x| {
                    let mut m = mlp.clone();
                    set(&mut m, x);
                    scalar(&m, &p)
                },
                x0,
            );
            max_err = max_err.max(rel_err(analytic, numeric));
        };
        let iw1 = s % mlp.w1.len();
        check_param(&|m| m.w1[iw1], &move |m, x| m.w1[iw1] = x, grad_mlp.w1[iw1]);
        let ib1 = s % mlp.b1.len();
        check_param(&|m| m.b1[ib1], &move |m, x| m.b1[ib1] = x, grad_mlp.b1[ib1]);
        let iw2 = s % mlp.w2.len();
        check_param(&|m| m.w2[iw2], &move |m, x| m.w2[iw2] = x, grad_mlp.w2[iw2]);
        let ib2 = s % mlp.b2.len();
        check_param(&|m| m.b2[ib2], &move |m, x| m.b2[ib2] = x, grad_mlp.b2[ib2]);
    }
    GradCheckReport {
        name: "encode_point",
        samples,
        max_rel_err: max_err,
        tolerance: 1e-5,
    }
}

/// d(sum u_ij * fused_ij)/d(raw alpha) and d/d(D_regressed) against finite
/// differences.
pub fn check_fuse_depth(seed: u64, samples: usize) -> GradCheckReport {
    let mut max_err: f64 = 0.0;
    for s in 0..samples {
        let mut rng = derived_rng(seed, 0xF0 + s as u64);
        let (h, w) = (2, 3);
        let mut d_r = DepthMap::constant(h, w, 0.0);
        let mut d_p = DepthMap::constant(h, w, 0.0);
        let mut weights = vec![0.0; h * w];
        for row in 0..h {
            for col in 0..w {
                d_r.set(row, col, rng.gen_range(1.0..60.0));
                d_p.set(row, col, rng.gen_range(1.0..60.0));
                weights[row * w + col] = rng.gen_range(-1.0..1.0);
            }
        }
        let raw = rng.gen_range(-2.0..2.0);
        let scalar = |d_r: &DepthMap, raw: f64| -> f64 {
            let fused = fuse_depth(d_r, &d_p, &FusionWeight::new(raw)).unwrap();
            let mut acc = 0.0;
            for row in 0..h {
                for col in 0..w {
                    acc += weights[row * w + col] * fused.depth(row, col);
                }
            }
            acc
        };
        // Analytic: dL/draw = sigma'(raw) * sum w_ij (d_r - d_p).
        let fw = FusionWeight::new(raw);
        let mut analytic_raw = 0.0;
        for row in 0..h {
            for col in 0..w {
                analytic_raw +=
                    weights[row * w + col] * fw.alpha_grad() * (d_r.depth(row, col) - d_p.depth(row, col));
            }
        }
        let numeric_raw = central_diff(|x| scalar(&d_r, x), raw);
        max_err = max_err.max(rel_err(analytic_raw, numeric_raw));
        // One regressed-depth cell per sample: dL/d(d_r_ij) = w_ij * alpha.
        let (row, col) = (s % h, (s / h) % w);
        let analytic_dr = weights[row * w + col] * fw.alpha();
        let numeric_dr = central_diff(
            |x| {
                let mut m = d_r.clone();
                m.set(row, col, x);
                scalar(&m, raw)
            },
            d_r.depth(row, col),
        );
        max_err = max_err.max(rel_err(analytic_dr, numeric_dr));
    }
    GradCheckReport {
        name: "fuse_depth",
        samples,
        max_rel_err: max_err,
        tolerance: 1e-5,
    }
}

pub fn check_smooth_l1(seed: u64, samples: usize) -> GradCheckReport {
    let mut max_err: f64 = 0.0;
    let beta = 1.0;
    for s in 0..samples {
        let mut rng = derived_rng(seed, 0x51 + s as u64);
        let (h, w) = (3, 3);
        let mut pred = DepthMap::constant(h, w, 0.0);
        let mut gt = DepthMap::constant(h, w, 0.0);
        let mut mask = vec![false; h * w];
        for row in 0..h {
            for col in 0..w {
                gt.set(row, col, rng.gen_range(5.0..50.0));
                // Keep |error| away from the beta transition so the finite
                // difference never straddles the C1 kink.
                let mag = if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..0.8 * beta)
                } else {
                    rng.gen_range(1.2 * beta..6.0)
                };
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                pred.set(row, col, gt.depth(row, col) + sign * mag);
                mask[row * w + col] = rng.gen_bool(0.8);
            }
        }
        if mask.iter().all(|m| !m) {
            mask[0] = true;
        }
        let grad = smooth_l1_grad(&pred, &gt, beta, &mask).unwrap();
        for row in 0..h {
            for col in 0..w {
                if !mask[row * w + col] {
                    continue;
                }
                let numeric = central_diff(
                    |x| {
                        let mut m = pred.clone();
                        m.set(row, col, x);
                        smooth_l1(&m, &gt, beta, &mask).unwrap()
                    },
                    pred.depth(row, col),
                );
                max_err = max_err.max(rel_err(grad[row * w + col], numeric));
            }
        }
    }
    GradCheckReport {
        name: "smooth_l1",
        samples,
        max_rel_err: max_err,
        tolerance: 1e-5,
    }
}

pub fn check_dfl(seed: u64, samples: usize) -> GradCheckReport {
    let bins = make_bins(BinMethod::Ud, 1.0, 61.0, 8).unwrap();
    let mut max_err: f64 = 0.0;
    for s in 0..samples {
        let mut rng = derived_rng(seed, 0xDF + s as u64);
        let (h, w) = (2, 2);
        let logits: Vec<f64> = (0..8 * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut gt = DepthMap::constant(h, w, 0.0);
        let mut mask = vec![true; h * w];
        for row in 0..h {
            for col in 0..w {
                gt.set(row, col, rng.gen_range(1.0..61.0));
            }
        }
        mask[s % (h * w)] = rng.gen_bool(0.7);
        if mask.iter().all(|m| !m) {
            mask[0] = true;
        }
        let dist = DepthDistribution::from_logits(8, h, w, &logits).unwrap();
        let grad = dfl_loss_grad_logits(&dist, &gt, &bins, &mask).unwrap();
        for j in 0..logits.len() {
            let numeric = central_diff(
                |x| {
                    let mut l = logits.clone();
                    l[j] = x;
                    let d = DepthDistribution::from_logits(8, h, w, &l).unwrap();
                    dfl_loss(&d, &gt, &bins, &mask).unwrap()
                },
                logits[j],
            );
            max_err = max_err.max(rel_err(grad[j], numeric));
        }
    }
    GradCheckReport {
        name: "dfl_loss",
        samples,
        max_rel_err: max_err,
        tolerance: 1e-5,
    }
}

/// Micro toy-detector instance: four tokens (a 2x2 cell grid), one query,
/// separated anchor encoder, C = 8. The loss is evaluated end to end —
/// tokens are rebuilt from the feature encoder each time, so the finite
/// difference sees the full chain for every parameter group.
struct MicroInstance {
    spec: SineSpec,
    state: DecoderState,
    feature_mlp: MlpParams,
    sine_inputs: Vec<f64>, // 4 * in_dim
    raw_features: Vec<f64>, // 4 * c
    gt: Vec<Vector3<f64>>,
    mask: Vec<bool>,
}

impl MicroInstance {
    fn new(seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let c = 8;
        let spec = SineSpec::new(4, 10000.0).unwrap();
        let feature_mlp = MlpParams::init(3 * spec.half_dim, 16, c, rng.gen());
        let anchor_mlp = MlpParams::init(3 * spec.half_dim, 16, c, rng.gen());
        let state = DecoderState::init(c, 1, anchor_mlp, rng.gen());
        let mut sine_inputs = vec![0.0; 4 * feature_mlp.in_dim];
        for t in 0..4 {
            let p = Vector3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            );
            point_sine_features_into(
                &p,
                &spec,
                &mut sine_inputs[t * feature_mlp.in_dim..(t + 1) * feature_mlp.in_dim],
            );
        }
        let raw_features: Vec<f64> = (0..4 * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let gt = vec![Vector3::new(
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
        )];
        let mask = vec![false, rng.gen_bool(0.25), false, false];
        Self {
            spec,
            state,
            feature_mlp,
            sine_inputs,
            raw_features,
            gt,
            mask,
        }
    }

    fn tokens(&self, feature_mlp: &MlpParams) -> PointAwareFeatures {
        let c = self.state.channels;
        let mut tokens = PointAwareFeatures::from_parts(
            c,
            vec![0.0; 4 * c],
            self.mask.clone(),
            (0..4).map(|t| (0, 0, t)).collect(),
        )
        .unwrap();
        for t in 0..4 {
            let pe = feature_mlp
                .forward(&self.sine_inputs[t * feature_mlp.in_dim..(t + 1) * feature_mlp.in_dim]);
            let tok = tokens.token_mut(t);
            for i in 0..c {
                tok[i] = self.raw_features[t * c + i] + pe[i];
            }
        }
        tokens
    }

    fn loss(&self, state: &DecoderState, feature_mlp: &MlpParams) -> f64 {
        let tokens = self.tokens(feature_mlp);
        let mut cache = DecodeCache::default();
        decode_with_cache(state, &self.spec, &tokens, &mut cache).unwrap();
        let assignment = crate::detector::greedy_assign(&cache.centers, &self.gt);
        let mut loss = 0.0;
        for &(g, p) in &assignment {
            loss += (cache.centers[p] - self.gt[g]).norm_squared() / self.gt.len() as f64;
        }
        loss
    }

    fn grads(&self) -> (DetectorGrads, MlpGrads) {
        let tokens = self.tokens(&self.feature_mlp);
        let mut cache = DecodeCache::default();
        decode_with_cache(&self.state, &self.spec, &tokens, &mut cache).unwrap();
        let mut grads = DetectorGrads::zeros(&self.state, 4);
        scene_loss_backward(
            &self.state,
            &self.spec,
            &tokens,
            &self.gt,
            &cache,
            &mut grads,
            1.0,
        );
        let mut enc = MlpGrads::zeros(&self.feature_mlp);
        let c = self.state.channels;
        let mut hidden = vec![0.0; self.feature_mlp.hidden_dim];
        let mut out = vec![0.0; c];
        for t in 0..4 {
            if self.mask[t] {
                continue;
            }
            let sine =
                &self.sine_inputs[t * self.feature_mlp.in_dim..(t + 1) * self.feature_mlp.in_dim];
            self.feature_mlp.forward_into(sine, &mut hidden, &mut out);
            mlp_backward(
                &self.feature_mlp,
                sine,
                &hidden,
                &grads.token_pe[t * c..(t + 1) * c],
                &mut enc,
                None,
            );
        }
        (grads, enc)
    }
}

/// End-to-end toy-detector gradient check across every parameter group:
/// content, anchors, attention, output head, anchor encoder and feature
/// encoder.
pub fn check_toy_detector(seed: u64, samples: usize) -> GradCheckReport {
    let mut max_err: f64 = 0.0;
    for s in 0..samples {
        let inst = MicroInstance::new(seed.wrapping_add(1000 + s as u64));
        let (grads, enc_grads) = inst.grads();
        let mut check = |analytic: f64, set: &dyn Fn(&mut MicroInstance, f64), x0: f64| {
            let numeric = central_diff(
                |x| {
                    let mut m = MicroInstance::new(seed.wrapping_add(1000 + s as u64));
                    set(&mut m, x);
                    m.loss(&m.state, &m.feature_mlp)
                },
                x0,
            );
            max_err = max_err.max(rel_err(analytic, numeric));
        };
        // A rotating sample from each parameter group.
        let i_content = s % inst.state.content.len();
        check(
            grads.content[i_content],
            &move |m, x| m.state.content[i_content] = x,
            inst.state.content[i_content],
        );
        let i_anchor = s % inst.state.anchor_raw.len();
        check(
            grads.anchor_raw[i_anchor],
            &move |m, x| m.state.anchor_raw[i_anchor] = x,
            inst.state.anchor_raw[i_anchor],
        );
        let i_wq = s % inst.state.wq.len();
        check(
            grads.wq[i_wq],
            &move |m, x| m.state.wq[i_wq] = x,
            inst.state.wq[i_wq],
        );
        let i_wk = (s * 7) % inst.state.wk.len();
        check(
            grads.wk[i_wk],
            &move |m, x| m.state.wk[i_wk] = x,
            inst.state.wk[i_wk],
        );
        let i_wv = (s * 13) % inst.state.wv.len();
        check(
            grads.wv[i_wv],
            &move |m, x| m.state.wv[i_wv] = x,
            inst.state.wv[i_wv],
        );
        let i_ow = s % inst.state.out_w.len();
        check(
            grads.out_w[i_ow],
            &move |m, x| m.state.out_w[i_ow] = x,
            inst.state.out_w[i_ow],
        );
        let i_ob = s % 3;
        check(
            grads.out_b[i_ob],
            &move |m, x| m.state.out_b[i_ob] = x,
            inst.state.out_b[i_ob],
        );
        let i_am = s % inst.state.anchor_mlp.w1.len();
        check(
            grads.anchor_mlp.w1[i_am],
            &move |m, x| m.state.anchor_mlp.w1[i_am] = x,
            inst.state.anchor_mlp.w1[i_am],
        );
        let i_am2 = s % inst.state.anchor_mlp.w2.len();
        check(
            grads.anchor_mlp.w2[i_am2],
            &move |m, x| m.state.anchor_mlp.w2[i_am2] = x,
            inst.state.anchor_mlp.w2[i_am2],
        );
        let i_fm = s % inst.feature_mlp.w1.len();
        check(
            enc_grads.w1[i_fm],
            &move |m, x| m.feature_mlp.w1[i_fm] = x,
            inst.feature_mlp.w1[i_fm],
        );
        let i_fm2 = s % inst.feature_mlp.w2.len();
        check(
            enc_grads.w2[i_fm2],
            &move |m, x| m.feature_mlp.w2[i_fm2] = x,
            inst.feature_mlp.w2[i_fm2],
        );
        let i_fb = s % inst.feature_mlp.b1.len();
        check(
            enc_grads.b1[i_fb],
            &move |m, x| m.feature_mlp.b1[i_fb] = x,
            inst.feature_mlp.b1[i_fb],
        );
    }
    GradCheckReport {
        name: "toy_detector",
        samples,
        max_rel_err: max_err,
        tolerance: 1e-4,
    }
}

/// Run every gradient check with 100 seeded instances each.
pub fn run_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_encode_point(seed, 100),
        check_fuse_depth(seed, 100),
        check_smooth_l1(seed, 100),
        check_dfl(seed, 100),
        check_toy_detector(seed, 100),
    ])
}
