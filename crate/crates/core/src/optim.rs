//! Adam, scene fitting with per-image robustness parameters, and
//! test-time adaptation of pose and color against a frozen scene.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{to_camera, PinholeCamera};
use crate::eval::{psnr, ssim_with_grad, MetricError};
use crate::grad::{img, params_to_vec, primitive_stride, render_backward, scene_to_vec, vec_to_params, vec_to_scene, ParamGroup};
use crate::image::ImageBuffer;
use crate::render::{render, RenderOptions};
use crate::robust::{ColorParams, Mechanisms, PerImageParams};
use crate::scene::Scene;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }

    /// Keeps only the entries in blocks of `stride` for which `keep` is true.
    pub fn retain_blocks(&mut self, stride: usize, keep: &[bool]) {
        for buf in [&mut self.m, &mut self.v] {
            let kept: Vec<f64> =
                buf.chunks_exact(stride).zip(keep).filter(|(_, k)| **k).flat_map(|(b, _)| b.iter().copied()).collect();
            *buf = kept;
        }
    }
}

/// One bias-corrected Adam update with a learning rate per coordinate.
/// Coordinates with a zero learning rate are left untouched.
pub fn adam_step(theta: &mut [f64], g: &[f64], state: &mut AdamState, lr: &[f64]) {
    assert_eq!(theta.len(), g.len(), "gradient length");
    assert_eq!(theta.len(), state.m.len(), "state length");
    assert_eq!(theta.len(), lr.len(), "learning-rate length");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..theta.len() {
        if lr[i] == 0.0 {
            continue;
        }
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        theta[i] -= lr[i] * mhat / (vhat.sqrt() + state.eps);
    }
}

/// Constant per-group learning rates. `position` and `pose_translation` are
/// multiplied by the scene extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh: f64,
    pub pose_rotation: f64,
    pub pose_translation: f64,
    pub blur: f64,
    pub defocus: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            pose_rotation: 1e-4,
            pose_translation: 1e-4,
            blur: 1e-3,
            defocus: 1e-3,
            color: 5e-3,
        }
    }
}

impl LearningRates {
    pub fn of(&self, group: ParamGroup, extent: f64) -> f64 {
        match group {
            ParamGroup::Position => self.position * extent,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
            ParamGroup::PoseRotation => self.pose_rotation,
            ParamGroup::PoseTranslation => self.pose_translation * extent,
            ParamGroup::BlurRotation | ParamGroup::BlurTranslation => self.blur,
            ParamGroup::Defocus => self.defocus,
            ParamGroup::Color => self.color,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let all = [
            ("position", self.position),
            ("scale", self.scale),
            ("rotation", self.rotation),
            ("opacity", self.opacity),
            ("sh", self.sh),
            ("pose_rotation", self.pose_rotation),
            ("pose_translation", self.pose_translation),
            ("blur", self.blur),
            ("defocus", self.defocus),
            ("color", self.color),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("lr.{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    /// Position learning rate is scaled by `position_lr_decay^(step / iterations)`.
    pub position_lr_decay: f64,
    pub lambda_l1: f64,
    pub lambda_dssim: f64,
    pub prune_opacity_threshold: f64,
    pub prune_interval: usize,
    pub seed: u64,
    pub mechanisms: Mechanisms,
    /// Starting aperture for defocus; zero would give it a zero gradient.
    pub initial_aperture: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            lr: LearningRates::default(),
            position_lr_decay: 1.0,
            lambda_l1: 0.8,
            lambda_dssim: 0.2,
            prune_opacity_threshold: 0.005,
            prune_interval: 500,
            seed: 0,
            mechanisms: Mechanisms::ALL,
            initial_aperture: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        self.lr.validate().map_err(FitError::Config)?;
        if self.iterations == 0 {
            return Err(FitError::Config("iterations must be at least 1".into()));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_dssim >= 0.0 && (self.lambda_l1 + self.lambda_dssim - 1.0).abs() < 1e-9) {
            return Err(FitError::Config("lambda_l1 and lambda_dssim must be non-negative and sum to 1".into()));
        }
        if !(self.position_lr_decay > 0.0) {
            return Err(FitError::Config("position_lr_decay must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prune_opacity_threshold) {
            return Err(FitError::Config("prune_opacity_threshold must lie in [0, 1)".into()));
        }
        if !(self.initial_aperture >= 0.0) {
            return Err(FitError::Config("initial_aperture must be non-negative".into()));
        }
        Ok(())
    }
}

/// Photometric loss `l1 * L1 + dssim * (1 - SSIM)` with its gradient with
/// respect to `rendered`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub dssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
}

pub fn photometric_loss(rendered: &ImageBuffer, target: &ImageBuffer, w: LossWeights) -> Result<(LossValue, ImageBuffer), MetricError> {
    let (s, gs) = ssim_with_grad(rendered, target)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = ImageBuffer::new(rendered.width, rendered.height);
    for i in 0..rendered.data.len() {
        let d = rendered.data[i] - target.data[i];
        l1 += d.abs();
        let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        grad.data[i] = w.l1 * sign / n - w.dssim * gs[i];
    }
    l1 /= n;
    Ok((LossValue { total: w.l1 * l1 + w.dssim * (1.0 - s), l1, ssim: s }, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub image: usize,
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub primitives: usize,
}

pub fn write_loss_csv(path: impl AsRef<Path>, records: &[LossRecord]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,image,loss,l1,ssim,primitives")?;
    for r in records {
        writeln!(f, "{},{},{},{},{},{}", r.step, r.image, r.loss, r.l1, r.ssim, r.primitives)?;
    }
    f.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub scene: Scene,
    pub params: Vec<PerImageParams>,
    pub losses: Vec<LossRecord>,
}

/// Median camera-space depth of the primitive means in front of `cam`.
pub fn median_depth(scene: &Scene, cam: &PinholeCamera) -> Option<f64> {
    let mut d: Vec<f64> = scene.primitives.iter().map(|p| to_camera(cam, &p.position).z).filter(|z| *z > 0.0).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

fn image_lrs(rates: &LearningRates, extent: f64, enabled: &Mechanisms) -> [f64; img::STRIDE] {
    std::array::from_fn(|k| {
        let g = ParamGroup::of_image_offset(k);
        if g.is_active(enabled) {
            rates.of(g, extent)
        } else {
            0.0
        }
    })
}

fn scene_lrs(rates: &LearningRates, extent: f64, stride: usize, n: usize, position_scale: f64) -> Vec<f64> {
    let block: Vec<f64> = (0..stride)
        .map(|k| {
            let g = ParamGroup::of_primitive_offset(k);
            let s = if g == ParamGroup::Position { position_scale } else { 1.0 };
            rates.of(g, extent) * s
        })
        .collect();
    block.iter().copied().cycle().take(stride * n).collect()
}

/// Fits scene and per-image parameters to posed images, one image per step
/// in a seeded shuffled order. Scene parameters use one dense Adam state;
/// each image owns a separate Adam state that only advances on its steps.
pub fn fit(
    initial: &Scene,
    cameras: &[PinholeCamera],
    images: &[ImageBuffer],
    cfg: &FitConfig,
    opts: &RenderOptions,
) -> Result<FitResult, FitError> {
    cfg.validate()?;
    if cameras.len() != images.len() {
        return Err(FitError::Dataset(format!("{} cameras but {} images", cameras.len(), images.len())));
    }
    if cameras.is_empty() {
        return Err(FitError::Dataset("no images".into()));
    }
    if initial.is_empty() {
        return Err(FitError::Dataset("initial scene is empty".into()));
    }
    for (i, (c, im)) in cameras.iter().zip(images).enumerate() {
        if (c.width, c.height) != (im.width, im.height) {
            return Err(FitError::Dataset(format!("image {i} is {}x{}, camera expects {}x{}", im.width, im.height, c.width, c.height)));
        }
    }
    let extent = initial.extent().max(1e-12);
    let degree = initial.sh_degree;
    let stride = primitive_stride(degree);
    let weights = LossWeights { l1: cfg.lambda_l1, dssim: cfg.lambda_dssim };

    let mut theta = scene_to_vec(initial);
    let mut scene_state = AdamState::new(theta.len());
    let mut params: Vec<PerImageParams> = cameras
        .iter()
        .map(|c| {
            let depth = median_depth(initial, c).unwrap_or(1.0);
            PerImageParams::initial(cfg.mechanisms, depth, cfg.initial_aperture)
        })
        .collect();
    let mut image_states: Vec<AdamState> = cameras.iter().map(|_| AdamState::new(img::STRIDE)).collect();
    let img_lr = image_lrs(&cfg.lr, extent, &cfg.mechanisms);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        if order.is_empty() {
            order = (0..cameras.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let i = order.pop().expect("refilled above");
        let scene = vec_to_scene(&theta, degree);
        let rendered = render(&scene, &cameras[i], &params[i], opts);
        let (value, adjoint) = photometric_loss(&rendered, &images[i], weights)?;
        losses.push(LossRecord { step, image: i, loss: value.total, l1: value.l1, ssim: value.ssim, primitives: scene.len() });
        let grad = render_backward(&scene, &cameras[i], &params[i], opts, &adjoint);

        let pos_scale = cfg.position_lr_decay.powf(step as f64 / cfg.iterations as f64);
        let lrs = scene_lrs(&cfg.lr, extent, stride, scene.len(), pos_scale);
        adam_step(&mut theta, &grad.scene, &mut scene_state, &lrs);

        let mut pv = params_to_vec(&params[i]);
        adam_step(&mut pv, &grad.image, &mut image_states[i], &img_lr);
        params[i] = vec_to_params(&pv, cfg.mechanisms);

        let done = step + 1;
        if cfg.prune_interval > 0 && done % cfg.prune_interval == 0 && done < cfg.iterations {
            let keep: Vec<bool> = vec_to_scene(&theta, degree).primitives.iter().map(|p| p.opacity() >= cfg.prune_opacity_threshold).collect();
            if keep.iter().any(|k| !k) {
                theta = theta.chunks_exact(stride).zip(&keep).filter(|(_, k)| **k).flat_map(|(b, _)| b.iter().copied()).collect();
                scene_state.retain_blocks(stride, &keep);
                log::debug!("step {done}: pruned {} primitives", keep.iter().filter(|k| !**k).count());
            }
        }
        if done % 100 == 0 {
            log::info!("step {done}/{}: loss {:.5}", cfg.iterations, value.total);
        }
    }
    Ok(FitResult { scene: vec_to_scene(&theta, degree), params, losses })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub steps: usize,
    pub lr_pose_rotation: f64,
    /// Multiplied by the scene extent.
    pub lr_pose_translation: f64,
    pub lr_color: f64,
    pub lambda_l1: f64,
    pub lambda_dssim: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { steps: 1000, lr_pose_rotation: 1e-4, lr_pose_translation: 1e-4, lr_color: 5e-3, lambda_l1: 0.8, lambda_dssim: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    pub params: PerImageParams,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub losses: Vec<f64>,
}

/// Mechanisms active during test-time adaptation: pose and color only.
pub const ADAPT_MECHANISMS: Mechanisms = Mechanisms { pose: true, motion_blur: false, defocus: false, color: true };

/// Optimizes pose offset and color transform of one view against a frozen
/// scene. Blur and defocus stay at identity. `start_color` seeds the color
/// transform (e.g. the training mean).
pub fn test_time_adapt(
    scene: &Scene,
    cam: &PinholeCamera,
    target: &ImageBuffer,
    start_color: &ColorParams,
    cfg: &AdaptConfig,
    opts: &RenderOptions,
) -> Result<AdaptResult, FitError> {
    if (cam.width, cam.height) != (target.width, target.height) {
        return Err(FitError::Dataset("target size does not match camera".into()));
    }
    let extent = scene.extent().max(1e-12);
    let weights = LossWeights { l1: cfg.lambda_l1, dssim: cfg.lambda_dssim };
    let mut params = PerImageParams { color: *start_color, enabled: ADAPT_MECHANISMS, ..PerImageParams::identity() };
    let rates = LearningRates {
        pose_rotation: cfg.lr_pose_rotation,
        pose_translation: cfg.lr_pose_translation,
        color: cfg.lr_color,
        ..LearningRates::default()
    };
    let lr = image_lrs(&rates, extent, &ADAPT_MECHANISMS);
    let mut state = AdamState::new(img::STRIDE);
    let mut losses = Vec::with_capacity(cfg.steps);
    let psnr_before = psnr(&render(scene, cam, &params, opts), target)?;
    let mut best = (f64::INFINITY, params);
    for _ in 0..cfg.steps {
        let rendered = render(scene, cam, &params, opts);
        let (value, adjoint) = photometric_loss(&rendered, target, weights)?;
        losses.push(value.total);
        if value.total < best.0 {
            best = (value.total, params);
        }
        let grad = render_backward(scene, cam, &params, opts, &adjoint);
        let mut pv = params_to_vec(&params);
        adam_step(&mut pv, &grad.image, &mut state, &lr);
        params = vec_to_params(&pv, ADAPT_MECHANISMS);
    }
    let final_loss = photometric_loss(&render(scene, cam, &params, opts), target, weights)?.0.total;
    if final_loss < best.0 {
        best = (final_loss, params);
    }
    let params = best.1;
    let psnr_after = psnr(&render(scene, cam, &params, opts), target)?;
    Ok(AdaptResult { params, psnr_before, psnr_after, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Mat3, Quaternion, Vec3};
    use crate::synth::{generate_scene, orbit_cameras};

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut theta = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        for _ in 0..10 {
            adam_step(&mut theta, &[0.0; 3], &mut s, &[0.1; 3]);
        }
        assert_eq!(theta, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut theta = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut theta, &[3.0, -0.5], &mut s, &[0.01, 0.01]);
        assert!((theta[0] - 0.99).abs() < 1e-12);
        assert!((theta[1] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut theta = vec![5.0];
        let mut s = AdamState::new(1);
        let mut steps = 0;
        while (theta[0] - 1.5f64).abs() > 1e-4 || steps < 10 {
            let g = 2.0 * (theta[0] - 1.5);
            adam_step(&mut theta, &[g], &mut s, &[0.1]);
            steps += 1;
            assert!(steps <= 2000, "no convergence, theta = {}", theta[0]);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let scene = generate_scene(10, 1.0, 1, 2);
        let cam = orbit_cameras(2, 1.0, 0.0, 16, 16).remove(0);
        let a = render(&scene, &cam, &PerImageParams::identity(), &RenderOptions::default());
        let b = ImageBuffer { data: a.data.iter().enumerate().map(|(i, v)| (v + 0.1 * ((i % 7) as f64 / 7.0)).min(1.0)).collect(), ..a.clone() };
        let w = LossWeights { l1: 0.8, dssim: 0.2 };
        let (_, g) = photometric_loss(&a, &b, w).unwrap();
        for i in (0..a.data.len()).step_by(37) {
            let h = 1e-7;
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (photometric_loss(&p, &b, w).unwrap().0.total - photometric_loss(&m, &b, w).unwrap().0.total) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", g.data[i]);
        }
    }

    #[test]
    fn self_consistent_dataset_has_zero_loss() {
        let scene = generate_scene(20, 1.0, 1, 3);
        let cams = orbit_cameras(3, 1.0, 0.0, 24, 24);
        let opts = RenderOptions::default();
        let images: Vec<_> = cams.iter().map(|c| render(&scene, c, &PerImageParams::disabled(), &opts)).collect();
        let cfg = FitConfig { iterations: 1, mechanisms: Mechanisms::NONE, ..Default::default() };
        let out = fit(&scene, &cams, &images, &cfg, &opts).unwrap();
        assert!(out.losses[0].loss.abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_mismatched_inputs() {
        let scene = generate_scene(5, 1.0, 0, 3);
        let cams = orbit_cameras(2, 1.0, 0.0, 16, 16);
        let opts = RenderOptions::default();
        let one = vec![ImageBuffer::new(16, 16)];
        assert!(matches!(fit(&scene, &cams, &one, &FitConfig::default(), &opts), Err(FitError::Dataset(_))));
        let bad = FitConfig { lambda_l1: 0.5, ..Default::default() };
        assert!(matches!(fit(&scene, &cams[..1], &one, &bad, &opts), Err(FitError::Config(_))));
    }

    #[test]
    fn fit_reduces_loss_and_is_deterministic() {
        let truth = generate_scene(20, 1.0, 1, 4);
        let cams = orbit_cameras(6, 1.0, 0.0, 24, 24);
        let opts = RenderOptions::default();
        let images: Vec<_> = cams.iter().map(|c| render(&truth, c, &PerImageParams::identity(), &opts)).collect();
        let init = crate::synth::perturb_scene(&truth, 0.02, 1);
        let cfg = FitConfig { iterations: 120, prune_interval: 50, seed: 3, ..Default::default() };
        let a = fit(&init, &cams, &images, &cfg, &opts).unwrap();
        let b = fit(&init, &cams, &images, &cfg, &opts).unwrap();
        assert_eq!(a, b);
        let first: f64 = a.losses[..12].iter().map(|r| r.loss).sum();
        let last: f64 = a.losses[108..].iter().map(|r| r.loss).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn pruning_keeps_opaque_primitives() {
        let truth = generate_scene(10, 1.0, 0, 4);
        let mut init = truth.clone();
        init.primitives[3].opacity_logit = -12.0;
        init.primitives[7].opacity_logit = -12.0;
        let cams = orbit_cameras(2, 1.0, 0.0, 16, 16);
        let opts = RenderOptions::default();
        let images: Vec<_> = cams.iter().map(|c| render(&truth, c, &PerImageParams::identity(), &opts)).collect();
        let cfg = FitConfig { iterations: 3, prune_interval: 2, ..Default::default() };
        let out = fit(&init, &cams, &images, &cfg, &opts).unwrap();
        assert_eq!(out.scene.len(), 8);
        assert_eq!(out.losses[2].primitives, 8);
    }

    #[test]
    fn adaptation_fixed_point_and_scene_untouched() {
        let scene = generate_scene(30, 1.0, 1, 5);
        let cam = orbit_cameras(3, 1.0, 0.0, 32, 32).remove(1);
        let opts = RenderOptions::default();
        let target = render(&scene, &cam, &PerImageParams::identity(), &opts);
        let before = crate::ply::encode_ply(&scene).unwrap();
        let cfg = AdaptConfig { steps: 50, ..Default::default() };
        let out = test_time_adapt(&scene, &cam, &target, &ColorParams::identity(), &cfg, &opts).unwrap();
        assert_eq!(crate::ply::encode_ply(&scene).unwrap(), before);
        assert!(out.psnr_after >= out.psnr_before - 0.1);
        assert!(!out.params.enabled.motion_blur && !out.params.enabled.defocus);
    }

    #[test]
    fn adaptation_recovers_pose_and_color() {
        let scene = generate_scene(50, 1.0, 2, 6);
        let cam = orbit_cameras(4, 1.0, 0.0, 48, 48).remove(2);
        let opts = RenderOptions::default();
        let mut perturbed = PerImageParams::identity();
        perturbed.motion.rotation = Quaternion::from_rotation_vector(&(Vec3::new(1.0, -1.0, 0.5).normalize() * 0.02));
        perturbed.motion.translation = Vec3::new(0.0, 0.01, -0.005);
        perturbed.color = ColorParams { matrix: Mat3::identity() * 1.05, offset: Vec3::new(0.02, -0.01, 0.0) };
        let target = render(&scene, &cam, &perturbed, &opts);
        let out = test_time_adapt(&scene, &cam, &target, &ColorParams::identity(), &AdaptConfig { steps: 300, ..Default::default() }, &opts).unwrap();
        assert!(out.psnr_after > out.psnr_before + 3.0, "{} -> {}", out.psnr_before, out.psnr_after);
    }
}
