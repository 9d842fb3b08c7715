//! Image metrics, sharpness scoring, and spread-out test-view selection.

use serde::{Deserialize, Serialize};

use crate::image::ImageBuffer;
use crate::math::Vec3;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {2}x{2} window")]
    TooSmall(usize, usize, usize),
}

fn check_same(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Maximum central-difference gradient magnitude of the luma channel over
/// interior pixels. Larger means sharper.
pub fn blurriness(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width, img.height);
    let l = img.luma();
    let mut best: f64 = 0.0;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = 0.5 * (l[y * w + x + 1] - l[y * w + x - 1]);
            let gy = 0.5 * (l[(y + 1) * w + x] - l[(y - 1) * w + x]);
            best = best.max((gx * gx + gy * gy).sqrt());
        }
    }
    best
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_same(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio for data range 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter keeping only fully-inside window positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Transpose of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            for i in 0..SSIM_WINDOW {
                tmp[(y + i) * ow + x] += k[i] * g[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * tmp[y * ow + x];
            }
        }
    }
    out
}

fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM and, optionally, its gradient with respect to `a`.
fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), MetricError> {
    check_same(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall(w, h, SSIM_WINDOW));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let n = mx.len();
        let mut g_mx = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = exx[i] - ux * ux;
            let syy = eyy[i] - uy * uy;
            let sxy = exy[i] - ux * uy;
            let n1 = 2.0 * ux * uy + c1;
            let n2 = 2.0 * sxy + c2;
            let d1 = ux * ux + uy * uy + c1;
            let d2 = sxx + syy + c2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                g_mx[i] = s * (2.0 * uy / n1 - 2.0 * uy / n2 - 2.0 * ux / d1 + 2.0 * ux / d2) / count;
                g_exx[i] = -s / d2 / count;
                g_exy[i] = 2.0 * s / n2 / count;
            }
        }
        if let Some(g) = grad.as_mut() {
            let a_mx = filter_valid_adjoint(&g_mx, w, h, &k);
            let a_exx = filter_valid_adjoint(&g_exx, w, h, &k);
            let a_exy = filter_valid_adjoint(&g_exy, w, h, &k);
            for p in 0..w * h {
                g[3 * p + c] = a_mx[p] + 2.0 * x[p] * a_exx[p] + y[p] * a_exy[p];
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM over channels and valid window positions (11x11 Gaussian
/// window, sigma 1.5, K1 0.01, K2 0.03, data range 1).
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to the first image, laid out like
/// [`ImageBuffer::data`]. Identical images are the exact maximum and get an
/// exactly zero gradient rather than rounding residue.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<f64>), MetricError> {
    let (s, g) = ssim_impl(a, b, true)?;
    if a.data == b.data {
        return Ok((s, vec![0.0; a.data.len()]));
    }
    Ok((s, g.expect("gradient requested")))
}

/// One candidate test view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub id: String,
    /// Camera center in world coordinates.
    pub center: Vec3,
    /// Unit optical axis in world coordinates.
    pub axis: Vec3,
    pub score: f64,
    pub selected: bool,
}

/// How the distance and angle thresholds combine into a conflict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictMode {
    /// Conflict only when closer than `min_dist` AND within `min_angle`.
    #[default]
    Conjunctive,
    /// Conflict when closer than `min_dist` OR within `min_angle`.
    Disjunctive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionRule {
    pub k: usize,
    pub min_dist: f64,
    /// Degrees.
    pub min_angle: f64,
    pub mode: ConflictMode,
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule { k: 10, min_dist: 0.5, min_angle: 60.0, mode: ConflictMode::Conjunctive }
    }
}

impl SelectionRule {
    pub fn conflicts(&self, a: &ViewRecord, b: &ViewRecord) -> bool {
        let near = (a.center - b.center).norm() < self.min_dist;
        let cos = a.axis.dot(&b.axis).clamp(-1.0, 1.0);
        let aligned = cos.acos().to_degrees() < self.min_angle;
        match self.mode {
            ConflictMode::Conjunctive => near && aligned,
            ConflictMode::Disjunctive => near || aligned,
        }
    }
}

/// Greedy pick of at most `rule.k` views by decreasing score (ties by id),
/// skipping any candidate that conflicts with an already chosen view.
/// Returned records have `selected` set, in selection order.
pub fn select_test_views(views: &[ViewRecord], rule: &SelectionRule) -> Vec<ViewRecord> {
    let mut order: Vec<&ViewRecord> = views.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    let mut chosen: Vec<ViewRecord> = Vec::new();
    for v in order {
        if chosen.len() >= rule.k {
            break;
        }
        if chosen.iter().all(|c| !rule.conflicts(c, v)) {
            chosen.push(ViewRecord { selected: true, ..v.clone() });
        }
    }
    chosen
}
