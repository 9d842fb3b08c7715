//! Synthetic scenes, orbit cameras, and corrupted captures with ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{read_cameras, write_cameras, CameraError, CameraRecord, PinholeCamera};
use crate::image::{ImageBuffer, ImageError};
use crate::math::{logit, standard_normal3, Mat3, Quaternion, Vec3};
use crate::ply::{read_ply, write_ply, PlyError};
use crate::render::{render, render_mc_oracle, RenderOptions};
use crate::robust::{read_params, write_params, ColorParams, DefocusParams, MotionBlurParams, ParamsSidecar, PerImageParams, SidecarError};
use crate::scene::{GaussianPrimitive, Rgb, Scene};
use crate::sh::{coeff_count, SH_C0};

/// Orbit radius as a multiple of the scene extent.
pub const ORBIT_RADIUS: f64 = 2.5;

/// Focal length as a multiple of the image width for orbit cameras.
pub const ORBIT_FOCAL: f64 = 2.0;

/// MC sample count used when rendering observed images.
pub const DATASET_ORACLE_SAMPLES: usize = 1024;

fn uniform_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if q.norm() > 1e-6 {
            return q.normalized();
        }
    }
}

/// Random scene centered at the origin inside a cube of side `extent`.
///
/// Base colors are kept mid-range and higher SH bands shrink by half per
/// degree so decoded colors rarely clip.
pub fn generate_scene(n_primitives: usize, extent: f64, sh_degree: usize, seed: u64) -> Scene {
    assert!(n_primitives >= 1, "scene needs at least one primitive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (0.01 * extent).ln();
    let hi = (0.05 * extent).ln();
    let primitives = (0..n_primitives)
        .map(|_| {
            let position = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5) * extent);
            let log_scale = Vec3::from_fn(|_, _| rng.random_range(lo..hi));
            let rotation = uniform_quaternion(&mut rng);
            let opacity_logit = logit(rng.random_range(0.5..0.95));
            let mut sh = Vec::with_capacity(coeff_count(sh_degree));
            sh.push(Rgb::from_fn(|_, _| rng.random_range(-0.35..0.35) / SH_C0));
            for l in 1..=sh_degree {
                let amp = 0.25 * 0.5f64.powi(l as i32 - 1);
                for _ in 0..(2 * l + 1) {
                    sh.push(Rgb::from_fn(|_, _| rng.random_range(-amp..amp)));
                }
            }
            GaussianPrimitive { position, log_scale, rotation, opacity_logit, sh }
        })
        .collect();
    Scene { primitives, sh_degree }
}

/// `count` cameras on a ring of radius `ORBIT_RADIUS * extent` around the
/// origin with elevation oscillating between about +-30 degrees. `phase`
/// rotates the whole ring (radians).
pub fn orbit_cameras(count: usize, extent: f64, phase: f64, width: usize, height: usize) -> Vec<PinholeCamera> {
    let radius = ORBIT_RADIUS * extent;
    (0..count)
        .map(|i| {
            let t = i as f64 / count as f64;
            let az = phase + std::f64::consts::TAU * t;
            let el = 0.5 * (3.0 * std::f64::consts::TAU * t).sin();
            let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
            PinholeCamera::look_at(eye, Vec3::zeros(), Vec3::z(), ORBIT_FOCAL * width as f64, width, height)
        })
        .collect()
}

/// A noisy copy of `scene` standing in for a structure-from-motion start:
/// jittered positions and scales, flattened opacities, and view-independent
/// colors.
pub fn perturb_scene(scene: &Scene, position_noise: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = scene.extent().max(1e-12);
    let pos = Normal::new(0.0, position_noise * extent).expect("finite noise");
    let primitives = scene
        .primitives
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.position += Vec3::from_fn(|_, _| pos.sample(&mut rng));
            q.log_scale += Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            q.opacity_logit = logit(0.6);
            for (i, f) in q.sh.iter_mut().enumerate() {
                *f = if i == 0 { *f * 0.5 } else { Rgb::zeros() };
            }
            q
        })
        .collect();
    Scene { primitives, sh_degree: scene.sh_degree }
}

/// Per-image corruption draw ranges. Ranges are `[min, max]`, sampled
/// uniformly and independently per axis where the quantity is a vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Rotation-blur std range (radians).
    pub rotation_blur_std: [f64; 2],
    /// Translation-blur std range (scene units).
    pub translation_blur_std: [f64; 2],
    /// Pose-offset rotation magnitude (radians), random axis.
    pub pose_rotation: f64,
    /// Pose-offset translation magnitude (scene units), random direction.
    pub pose_translation: f64,
    /// Std of the entries of `W - I`.
    pub color_matrix_std: f64,
    /// Std of the entries of `q`.
    pub color_offset_std: f64,
    /// Aperture range (pixels per unit inverse depth).
    pub defocus_aperture: [f64; 2],
    /// Focus inverse-depth range.
    pub defocus_focus_inv_depth: [f64; 2],
    pub seed: u64,
    pub oracle_samples: usize,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            rotation_blur_std: [0.0; 2],
            translation_blur_std: [0.0; 2],
            pose_rotation: 0.0,
            pose_translation: 0.0,
            color_matrix_std: 0.0,
            color_offset_std: 0.0,
            defocus_aperture: [0.0; 2],
            defocus_focus_inv_depth: [0.0; 2],
            seed: 0,
            oracle_samples: DATASET_ORACLE_SAMPLES,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), String> {
        let ranges = [
            ("rotation_blur_std", self.rotation_blur_std),
            ("translation_blur_std", self.translation_blur_std),
            ("defocus_aperture", self.defocus_aperture),
            ("defocus_focus_inv_depth", self.defocus_focus_inv_depth),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(format!("{name} must satisfy 0 <= min <= max"));
            }
        }
        let scalars = [
            ("pose_rotation", self.pose_rotation),
            ("pose_translation", self.pose_translation),
            ("color_matrix_std", self.color_matrix_std),
            ("color_offset_std", self.color_offset_std),
        ];
        for (name, v) in scalars {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        if self.oracle_samples == 0 {
            return Err("oracle_samples must be at least 1".into());
        }
        Ok(())
    }

    /// True corruption for image `index`, plus the seed for its MC render.
    pub fn draw(&self, index: usize) -> (PerImageParams, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut range = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let rot_std = Vec3::new(range(self.rotation_blur_std), range(self.rotation_blur_std), range(self.rotation_blur_std));
        let trans_std =
            Vec3::new(range(self.translation_blur_std), range(self.translation_blur_std), range(self.translation_blur_std));
        let aperture = range(self.defocus_aperture);
        let focus_inv_depth = range(self.defocus_focus_inv_depth);
        let axis = standard_normal3(&mut rng).normalize();
        let dir = standard_normal3(&mut rng).normalize();
        let gauss = |rng: &mut ChaCha8Rng, std: f64| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        };
        let w = Mat3::identity() + Mat3::from_fn(|_, _| gauss(&mut rng, self.color_matrix_std));
        let q = Vec3::from_fn(|_, _| gauss(&mut rng, self.color_offset_std));
        let oracle_seed: u64 = rng.random();
        let params = PerImageParams {
            motion: MotionBlurParams {
                rotation: Quaternion::from_rotation_vector(&(axis * self.pose_rotation)),
                translation: dir * self.pose_translation,
                log_std_rotation: rot_std.map(f64::ln),
                log_std_translation: trans_std.map(f64::ln),
            },
            defocus: DefocusParams { aperture, focus_inv_depth },
            color: ColorParams { matrix: w, offset: q },
            enabled: crate::robust::Mechanisms::ALL,
        };
        (params, oracle_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub spec: CorruptionSpec,
    pub render: RenderOptions,
    pub extent: f64,
    pub primitives: usize,
    pub sh_degree: usize,
}

/// Observed (corrupted) images with their cameras, sharp references, and
/// the true per-image parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<CameraRecord>,
    pub images: Vec<ImageBuffer>,
    pub sharp: Vec<ImageBuffer>,
    pub truth: Vec<PerImageParams>,
    pub meta: DatasetMeta,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Params(#[from] SidecarError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("meta.json: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Invalid(String),
}

pub fn view_id(index: usize) -> String {
    format!("view_{index:03}")
}

/// Renders every camera under its drawn corruption via the MC oracle.
pub fn generate_dataset(scene: &Scene, cameras: &[PinholeCamera], spec: &CorruptionSpec, opts: &RenderOptions) -> Dataset {
    assert!(!cameras.is_empty(), "dataset needs at least one camera");
    let per_view: Vec<(ImageBuffer, ImageBuffer, PerImageParams)> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let (truth, oracle_seed) = spec.draw(i);
            let observed = render_mc_oracle(scene, cam, &truth, opts, spec.oracle_samples, oracle_seed);
            let sharp = render(scene, cam, &PerImageParams::identity(), opts);
            (observed, sharp, truth)
        })
        .collect();
    let cameras = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| CameraRecord::from_camera(view_id(i), c, format!("images/{}.png", view_id(i))))
        .collect();
    let mut images = Vec::new();
    let mut sharp = Vec::new();
    let mut truth = Vec::new();
    for (o, s, t) in per_view {
        images.push(o);
        sharp.push(s);
        truth.push(t);
    }
    Dataset {
        cameras,
        images,
        sharp,
        truth,
        meta: DatasetMeta {
            seed: spec.seed,
            spec: *spec,
            render: *opts,
            extent: scene.extent(),
            primitives: scene.len(),
            sh_degree: scene.sh_degree,
        },
    }
}

impl Dataset {
    /// Writes `images/`, `sharp/`, `cameras.json`, `truth_params.json`, `meta.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("sharp"))?;
        for (i, rec) in self.cameras.iter().enumerate() {
            self.images[i].write_png(dir.join(&rec.image_path))?;
            self.sharp[i].write_png(dir.join("sharp").join(format!("{}.png", rec.id)))?;
        }
        write_cameras(dir.join("cameras.json"), &self.cameras)?;
        let truth: ParamsSidecar = self.cameras.iter().map(|c| c.id.clone()).zip(self.truth.iter().copied()).collect();
        write_params(dir.join("truth_params.json"), &truth)?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    /// Reads a dataset directory. Images come back 8-bit quantized.
    pub fn read(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
        let dir = dir.as_ref();
        let cameras = read_cameras(dir.join("cameras.json"))?;
        let truth_map = read_params(dir.join("truth_params.json"))?;
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let mut images = Vec::new();
        let mut sharp = Vec::new();
        let mut truth = Vec::new();
        for rec in &cameras {
            let img = ImageBuffer::read_png(dir.join(&rec.image_path))?;
            if img.width != rec.width || img.height != rec.height {
                return Err(DatasetError::Invalid(format!("{}: image size does not match camera", rec.id)));
            }
            images.push(img);
            sharp.push(ImageBuffer::read_png(dir.join("sharp").join(format!("{}.png", rec.id)))?);
            truth.push(
                *truth_map
                    .get(&rec.id)
                    .ok_or_else(|| DatasetError::Invalid(format!("{}: missing truth params", rec.id)))?,
            );
        }
        Ok(Dataset { cameras, images, sharp, truth, meta })
    }

    pub fn pinhole_cameras(&self) -> Vec<PinholeCamera> {
        self.cameras.iter().map(|c| c.to_camera().expect("validated on construction")).collect()
    }
}

/// Writes a scene next to a dataset (e.g. `truth.ply`).
pub fn write_scene(dir: impl AsRef<Path>, name: &str, scene: &Scene) -> Result<(), DatasetError> {
    write_ply(scene, dir.as_ref().join(name))?;
    Ok(())
}

pub fn read_scene(dir: impl AsRef<Path>, name: &str) -> Result<Scene, DatasetError> {
    Ok(read_ply(dir.as_ref().join(name))?)
}

/// Ids mapped to image indices, for lookups by name.
pub fn index_by_id(cameras: &[CameraRecord]) -> BTreeMap<String, usize> {
    cameras.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::blurriness;

    #[test]
    fn scene_is_deterministic_and_valid() {
        assert_eq!(generate_scene(20, 1.0, 3, 5), generate_scene(20, 1.0, 3, 5));
        assert_ne!(generate_scene(20, 1.0, 3, 5), generate_scene(20, 1.0, 3, 6));
        let one = generate_scene(1, 2.0, 2, 1);
        one.validate().unwrap();
        let p = &one.primitives[0];
        assert!(p.position.abs().max() <= 1.0);
        assert!(p.log_scale.iter().all(|s| (0.02f64.ln()..=0.1f64.ln()).contains(s)));
        assert!((0.5..0.95).contains(&p.opacity()));
        assert!((p.rotation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scene_covers_orbit_views() {
        let scene = generate_scene(50, 1.0, 3, 7);
        let cam = &orbit_cameras(40, 1.0, 0.0, 64, 64)[0];
        let img = render(&scene, cam, &PerImageParams::identity(), &RenderOptions::default());
        let covered = img.data.chunks_exact(3).filter(|p| p.iter().any(|c| *c > 1e-3)).count();
        assert!(covered as f64 > 0.1 * 64.0 * 64.0, "coverage {covered}");
    }

    #[test]
    fn orbit_cameras_look_at_origin() {
        for cam in orbit_cameras(40, 1.5, 0.3, 32, 32) {
            assert!((cam.center().norm() - ORBIT_RADIUS * 1.5).abs() < 1e-9);
            assert!((cam.optical_axis() + cam.center().normalize()).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_spec_gives_sharp_images_bit_exactly() {
        let scene = generate_scene(30, 1.0, 2, 3);
        let cams = orbit_cameras(4, 1.0, 0.0, 32, 32);
        let ds = generate_dataset(&scene, &cams, &CorruptionSpec::default(), &RenderOptions::default());
        assert_eq!(ds.images, ds.sharp);
    }

    #[test]
    fn translation_blur_lowers_blurriness() {
        let scene = generate_scene(50, 1.0, 2, 3);
        let cams = orbit_cameras(3, 1.0, 0.0, 48, 48);
        let spec = CorruptionSpec { translation_blur_std: [0.02, 0.03], oracle_samples: 64, seed: 1, ..Default::default() };
        let ds = generate_dataset(&scene, &cams, &spec, &RenderOptions::default());
        for (o, s) in ds.images.iter().zip(&ds.sharp) {
            assert_ne!(o, s);
            assert!(blurriness(o) < blurriness(s));
        }
    }

    #[test]
    fn truth_params_explain_observations_better_than_identity() {
        let scene = generate_scene(50, 1.0, 2, 9);
        let cams = orbit_cameras(3, 1.0, 0.0, 48, 48);
        let spec = CorruptionSpec {
            rotation_blur_std: [0.005, 0.01],
            translation_blur_std: [0.005, 0.01],
            pose_rotation: 0.02,
            pose_translation: 0.01,
            color_matrix_std: 0.05,
            color_offset_std: 0.03,
            defocus_aperture: [2.0, 4.0],
            defocus_focus_inv_depth: [0.3, 0.5],
            seed: 4,
            oracle_samples: 128,
        };
        let opts = RenderOptions::default();
        let ds = generate_dataset(&scene, &cams, &spec, &opts);
        let l1 = |a: &ImageBuffer, b: &ImageBuffer| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>();
        for (i, cam) in cams.iter().enumerate() {
            let with_truth = render(&scene, cam, &ds.truth[i], &opts);
            let with_identity = render(&scene, cam, &PerImageParams::identity(), &opts);
            assert!(l1(&with_truth, &ds.images[i]) < l1(&with_identity, &ds.images[i]));
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let scene = generate_scene(10, 1.0, 1, 3);
        let cams = orbit_cameras(2, 1.0, 0.0, 16, 16);
        let spec = CorruptionSpec { translation_blur_std: [0.01, 0.02], color_offset_std: 0.05, oracle_samples: 4, seed: 2, ..Default::default() };
        let ds = generate_dataset(&scene, &cams, &spec, &RenderOptions::default());
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.truth, ds.truth);
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.cameras, ds.cameras);
        assert_eq!(back.images[1].to_rgb8(), ds.images[1].to_rgb8());
    }

    #[test]
    fn spec_validation() {
        assert!(CorruptionSpec::default().validate().is_ok());
        assert!(CorruptionSpec { rotation_blur_std: [0.2, 0.1], ..Default::default() }.validate().is_err());
        assert!(CorruptionSpec { color_offset_std: -1.0, ..Default::default() }.validate().is_err());
    }
}
