//! Difference-of-Gaussians keypoints and 4x4x8 gradient-orientation histogram
//! descriptors.
//!
//! The detector follows the classic construction: a Gaussian pyramid with
//! `scales_per_octave + 3` images per octave, extrema of adjacent differences
//! refined by a quadratic fit, a contrast test and a Hessian edge test. There
//! is no initial 2x upsampling; ground textures are dense enough without it.

use std::f32::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{Descriptor, ImageFeatures, Keypoint};
use crate::raster::Raster;
use crate::RAW_DESCRIPTOR_DIM;

/// Blur already present in a camera image.
const ASSUMED_BLUR: f32 = 0.5;
const IMAGE_BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_PEAK_RATIO: f32 = 0.8;
const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE_FACTOR: f32 = 3.0;
const DESCR_CLAMP: f32 = 0.2;
pub const MIN_IMAGE_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub base_sigma: f32,
    /// Minimum |DoG| at the refined extremum, times `scales_per_octave`.
    pub contrast_threshold: f32,
    /// Maximum ratio of principal curvatures.
    pub edge_ratio_threshold: f32,
    /// Keep at most this many keypoints by response; 0 keeps all.
    pub max_features: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio_threshold: 10.0,
            max_features: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 || self.scales_per_octave < 1 {
            return Err(Error::InvalidParameter("octaves and scales_per_octave must be at least 1".into()));
        }
        if !(self.base_sigma > 0.0 && self.contrast_threshold > 0.0 && self.edge_ratio_threshold > 0.0) {
            return Err(Error::InvalidParameter("sigma and thresholds must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let mut k: Vec<f32> = (0..=radius).map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp()).collect();
    let sum = k[0] + 2.0 * k[1..].iter().sum::<f32>();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with border replication; `k` holds the
/// non-negative half of a symmetric kernel.
fn blur(src: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = k.len() - 1;
    let mut tmp = vec![0.0f32; w * h];
    let mut pad = vec![0.0f32; w + 2 * r];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        pad[..r].fill(row[0]);
        pad[r..r + w].copy_from_slice(row);
        pad[r + w..].fill(row[w - 1]);
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let c = x + r;
            let mut acc = k[0] * pad[c];
            for (j, &kj) in k.iter().enumerate().skip(1) {
                acc += kj * (pad[c - j] + pad[c + j]);
            }
            *o = acc;
        }
    }
    let mut dst = vec![0.0f32; w * h];
    for y in 0..h {
        let out = &mut dst[y * w..(y + 1) * w];
        let centre = &tmp[y * w..(y + 1) * w];
        for (o, &c) in out.iter_mut().zip(centre) {
            *o = k[0] * c;
        }
        for (j, &kj) in k.iter().enumerate().skip(1) {
            let up = y.saturating_sub(j);
            let down = (y + j).min(h - 1);
            let (a, b) = (&tmp[up * w..(up + 1) * w], &tmp[down * w..(down + 1) * w]);
            for ((o, &va), &vb) in out.iter_mut().zip(a).zip(b) {
                *o += kj * (va + vb);
            }
        }
    }
    dst
}

fn downsample(src: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let row = &src[2 * y * w..2 * y * w + w];
        out.extend(row.iter().step_by(2));
    }
    (out, nw, nh)
}

struct Octave {
    width: usize,
    height: usize,
    gauss: Vec<Vec<f32>>,
    dog: Vec<Vec<f32>>,
}

impl Octave {
    #[inline]
    fn dog_at(&self, layer: usize, x: usize, y: usize) -> f32 {
        self.dog[layer][y * self.width + x]
    }
}

/// Gaussian and DoG pyramids of one image.
pub struct ScaleSpace {
    octaves: Vec<Octave>,
    cfg: DetectorConfig,
}

impl ScaleSpace {
    pub fn build(image: &Raster, cfg: &DetectorConfig) -> ScaleSpace {
        let s = cfg.scales_per_octave;
        let k = 2f32.powf(1.0 / s as f32);
        let (mut w, mut h) = (image.width(), image.height());
        let first_sigma = (cfg.base_sigma.powi(2) - ASSUMED_BLUR.powi(2)).max(0.01).sqrt();
        let mut base = blur(image.data(), w, h, first_sigma);
        let incremental: Vec<f32> = (1..s + 3)
            .map(|i| {
                let prev = cfg.base_sigma * k.powi(i as i32 - 1);
                let total = prev * k;
                (total * total - prev * prev).sqrt()
            })
            .collect();

        let mut octaves = Vec::with_capacity(cfg.octaves);
        for o in 0..cfg.octaves {
            if o > 0 {
                if w.min(h) / 2 < 2 * IMAGE_BORDER + 8 {
                    break;
                }
                let prev: &Octave = octaves.last().expect("previous octave");
                let (d, nw, nh) = downsample(&prev.gauss[s], w, h);
                base = d;
                w = nw;
                h = nh;
            }
            let mut gauss = Vec::with_capacity(s + 3);
            gauss.push(std::mem::take(&mut base));
            for &sig in &incremental {
                let next = blur(gauss.last().expect("non-empty"), w, h, sig);
                gauss.push(next);
            }
            let dog = gauss.windows(2).map(|pair| pair[1].iter().zip(&pair[0]).map(|(b, a)| b - a).collect()).collect();
            octaves.push(Octave { width: w, height: h, gauss, dog });
        }
        ScaleSpace { octaves, cfg: *cfg }
    }

    fn octave_count(&self) -> usize {
        self.octaves.len()
    }
}

/// Internal keypoint with its pyramid coordinates.
#[derive(Debug, Clone, Copy)]
struct PyramidPoint {
    kp: Keypoint,
    octave: usize,
    layer: usize,
    /// Sigma relative to the octave's sampling grid.
    octave_sigma: f32,
}

fn is_extremum(oct: &Octave, layer: usize, x: usize, y: usize, v: f32) -> bool {
    let w = oct.width;
    let idx = y * w + x;
    if v > 0.0 {
        for l in layer - 1..=layer + 1 {
            let d = &oct.dog[l];
            for r in [idx - w, idx, idx + w] {
                if d[r - 1] > v || d[r] > v || d[r + 1] > v {
                    return false;
                }
            }
        }
    } else {
        for l in layer - 1..=layer + 1 {
            let d = &oct.dog[l];
            for r in [idx - w, idx, idx + w] {
                if d[r - 1] < v || d[r] < v || d[r + 1] < v {
                    return false;
                }
            }
        }
    }
    true
}

fn solve3(h: [[f32; 3]; 3], b: [f32; 3]) -> Option<[f32; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv = 1.0 / det;
    let col = |c: usize| {
        let mut m = h;
        for (r, row) in m.iter_mut().enumerate() {
            row[c] = b[r];
        }
        (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
            * inv
    };
    Some([col(0), col(1), col(2)])
}

/// Quadratic refinement of a discrete extremum. Returns `None` if the point
/// drifts out, fails to converge, or fails the contrast or edge test.
fn refine(ss: &ScaleSpace, o: usize, mut layer: usize, mut x: usize, mut y: usize) -> Option<PyramidPoint> {
    let cfg = &ss.cfg;
    let s = cfg.scales_per_octave;
    let oct = &ss.octaves[o];
    let (w, h) = (oct.width, oct.height);
    let mut offset = [0.0f32; 3];
    let mut grad = [0.0f32; 3];
    let mut converged = false;
    for _ in 0..MAX_REFINE_STEPS {
        let d = |l: usize, xx: usize, yy: usize| oct.dog_at(l, xx, yy);
        let v = d(layer, x, y);
        grad = [
            0.5 * (d(layer, x + 1, y) - d(layer, x - 1, y)),
            0.5 * (d(layer, x, y + 1) - d(layer, x, y - 1)),
            0.5 * (d(layer + 1, x, y) - d(layer - 1, x, y)),
        ];
        let dxx = d(layer, x + 1, y) + d(layer, x - 1, y) - 2.0 * v;
        let dyy = d(layer, x, y + 1) + d(layer, x, y - 1) - 2.0 * v;
        let dss = d(layer + 1, x, y) + d(layer - 1, x, y) - 2.0 * v;
        let dxy =
            0.25 * (d(layer, x + 1, y + 1) - d(layer, x - 1, y + 1) - d(layer, x + 1, y - 1) + d(layer, x - 1, y - 1));
        let dxs =
            0.25 * (d(layer + 1, x + 1, y) - d(layer + 1, x - 1, y) - d(layer - 1, x + 1, y) + d(layer - 1, x - 1, y));
        let dys =
            0.25 * (d(layer + 1, x, y + 1) - d(layer + 1, x, y - 1) - d(layer - 1, x, y + 1) + d(layer - 1, x, y - 1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let sol = solve3(hess, grad)?;
        offset = [-sol[0], -sol[1], -sol[2]];
        if offset.iter().all(|v| v.abs() < 0.5) {
            converged = true;
            break;
        }
        if offset.iter().any(|v| v.abs() > 1e3) {
            return None;
        }
        let nx = x as i64 + offset[0].round() as i64;
        let ny = y as i64 + offset[1].round() as i64;
        let nl = layer as i64 + offset[2].round() as i64;
        if nl < 1
            || nl > s as i64
            || nx < IMAGE_BORDER as i64
            || nx >= (w - IMAGE_BORDER) as i64
            || ny < IMAGE_BORDER as i64
            || ny >= (h - IMAGE_BORDER) as i64
        {
            return None;
        }
        x = nx as usize;
        y = ny as usize;
        layer = nl as usize;
    }
    if !converged {
        return None;
    }
    let v = oct.dog_at(layer, x, y);
    let contrast = v + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
    if contrast.abs() * (s as f32) < cfg.contrast_threshold {
        return None;
    }
    let d = |xx: usize, yy: usize| oct.dog_at(layer, xx, yy);
    let dxx = d(x + 1, y) + d(x - 1, y) - 2.0 * v;
    let dyy = d(x, y + 1) + d(x, y - 1) - 2.0 * v;
    let dxy = 0.25 * (d(x + 1, y + 1) - d(x - 1, y + 1) - d(x + 1, y - 1) + d(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    let r = cfg.edge_ratio_threshold;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    let step = (1usize << o) as f32;
    let octave_sigma = cfg.base_sigma * 2f32.powf((layer as f32 + offset[2]) / s as f32);
    Some(PyramidPoint {
        kp: Keypoint {
            x: (x as f32 + offset[0]) * step,
            y: (y as f32 + offset[1]) * step,
            scale: octave_sigma * step,
            orientation: 0.0,
            response: contrast.abs(),
        },
        octave: o,
        layer,
        octave_sigma,
    })
}

#[inline]
fn fast_atan2(y: f32, x: f32) -> f32 {
    let (ax, ay) = (x.abs(), y.abs());
    let mx = ax.max(ay);
    if mx == 0.0 {
        return 0.0;
    }
    let a = ax.min(ay) / mx;
    let s = a * a;
    let mut r = a
        * (0.999_977_26
            + s * (-0.332_623_47 + s * (0.193_543_46 + s * (-0.116_432_87 + s * (0.052_653_32 - 0.011_721_2 * s)))));
    if ay > ax {
        r = FRAC_PI_2 - r;
    }
    if x < 0.0 {
        r = PI - r;
    }
    if y < 0.0 {
        -r
    } else {
        r
    }
}

#[inline]
fn wrap_f32(a: f32) -> f32 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Dominant orientations from a smoothed 36-bin gradient histogram.
fn orientations(ss: &ScaleSpace, p: &PyramidPoint) -> Vec<f32> {
    let oct = &ss.octaves[p.octave];
    let img = &oct.gauss[p.layer];
    let (w, h) = (oct.width as i64, oct.height as i64);
    let step = (1usize << p.octave) as f32;
    let (cx, cy) = ((p.kp.x / step).round() as i64, (p.kp.y / step).round() as i64);
    let sigma = ORI_SIGMA_FACTOR * p.octave_sigma;
    let radius = (3.0 * sigma).round() as i64;
    let denom = -1.0 / (2.0 * sigma * sigma);
    let mut hist = [0.0f32; ORI_BINS];
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= w - 1 {
                continue;
            }
            let i = (y * w + x) as usize;
            let gx = img[i + 1] - img[i - 1];
            let gy = img[i + w as usize] - img[i - w as usize];
            let weight = (((dx * dx + dy * dy) as f32) * denom).exp();
            let angle = fast_atan2(gy, gx);
            let bin = ((angle * ORI_BINS as f32 / (2.0 * PI)).round() as i64).rem_euclid(ORI_BINS as i64);
            hist[bin as usize] += weight * (gx * gx + gy * gy).sqrt();
        }
    }
    let n = ORI_BINS;
    let smooth: Vec<f32> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) * (1.0 / 16.0)
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * (4.0 / 16.0)
                + hist[i] * (6.0 / 16.0)
        })
        .collect();
    let max = smooth.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..n {
        let (l, c, r) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let bin = i as f32 + 0.5 * (l - r) / (l - 2.0 * c + r);
            out.push(wrap_f32(bin * 2.0 * PI / n as f32));
        }
    }
    out
}

/// Half-width of the descriptor support in octave pixels.
fn descriptor_half_width(octave_sigma: f32) -> f32 {
    DESCR_SCALE_FACTOR * octave_sigma * DESCR_WIDTH as f32 * 0.5
}

fn descriptor(ss: &ScaleSpace, p: &PyramidPoint) -> Option<Descriptor> {
    let oct = &ss.octaves[p.octave];
    let img = &oct.gauss[p.layer];
    let (w, h) = (oct.width, oct.height);
    let step = (1usize << p.octave) as f32;
    let (fx, fy) = (p.kp.x / step, p.kp.y / step);
    let half = descriptor_half_width(p.octave_sigma);
    if fx - half < 1.0 || fy - half < 1.0 || fx + half > (w - 2) as f32 || fy + half > (h - 2) as f32 {
        return None;
    }
    let (cx, cy) = (fx.round() as i64, fy.round() as i64);
    let d = DESCR_WIDTH;
    let nb = DESCR_BINS;
    let hist_width = DESCR_SCALE_FACTOR * p.octave_sigma;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as i64;
    let (sin_t, cos_t) = p.kp.orientation.sin_cos();
    let inv_hw = 1.0 / hist_width;
    let exp_scale = -1.0 / (d as f32 * d as f32 * 0.5);
    let bins_per_rad = nb as f32 / (2.0 * PI);
    // (d+2) x (d+2) x (nb+2) accumulator absorbs spill-over at the edges
    let mut hist = vec![0.0f32; (d + 2) * (d + 2) * (nb + 2)];
    let (iw, ih) = (w as i64, h as i64);
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= ih - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= iw - 1 {
                continue;
            }
            // offset from the sub-pixel centre, expressed in the keypoint frame
            let (ox, oy) = (x as f32 - fx, y as f32 - fy);
            let c_rot = (cos_t * ox + sin_t * oy) * inv_hw;
            let r_rot = (-sin_t * ox + cos_t * oy) * inv_hw;
            let rbin = r_rot + d as f32 / 2.0 - 0.5;
            let cbin = c_rot + d as f32 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            let i = (y * iw + x) as usize;
            let gx = img[i + 1] - img[i - 1];
            let gy = img[i + w] - img[i - w];
            let mag = (gx * gx + gy * gy).sqrt() * ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp();
            let mut obin = (fast_atan2(gy, gx) - p.kp.orientation) * bins_per_rad;
            obin = obin.rem_euclid(nb as f32);

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (rf, cf, of) = (rbin - r0, cbin - c0, obin - o0);
            let (r0, c0) = ((r0 as i64 + 1) as usize, (c0 as i64 + 1) as usize);
            let o0 = o0 as usize % nb;
            let o1 = (o0 + 1) % nb;
            for (ri, rw) in [(r0, 1.0 - rf), (r0 + 1, rf)] {
                let vr = mag * rw;
                for (ci, cw) in [(c0, 1.0 - cf), (c0 + 1, cf)] {
                    let vc = vr * cw;
                    let base = (ri * (d + 2) + ci) * (nb + 2);
                    hist[base + o0] += vc * (1.0 - of);
                    hist[base + o1] += vc * of;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(RAW_DESCRIPTOR_DIM);
    for r in 0..d {
        for c in 0..d {
            let base = ((r + 1) * (d + 2) + c + 1) * (nb + 2);
            out.extend_from_slice(&hist[base..base + nb]);
        }
    }
    normalize_descriptor(&mut out);
    Some(Descriptor(out))
}

/// L2-normalizes, clamps entries at 0.2 and renormalizes.
pub fn normalize_descriptor(v: &mut [f32]) {
    let l2 = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let norm = l2(v);
    if norm <= f32::EPSILON as f64 {
        v.fill(0.0);
        return;
    }
    for x in v.iter_mut() {
        *x = ((*x as f64 / norm) as f32).min(DESCR_CLAMP);
    }
    let norm = l2(v);
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
}

fn detect_points(ss: &ScaleSpace) -> Vec<PyramidPoint> {
    let cfg = &ss.cfg;
    let s = cfg.scales_per_octave;
    let pre = 0.5 * cfg.contrast_threshold / s as f32;
    let mut points = Vec::new();
    for o in 0..ss.octave_count() {
        let oct = &ss.octaves[o];
        let (w, h) = (oct.width, oct.height);
        if w <= 2 * IMAGE_BORDER || h <= 2 * IMAGE_BORDER {
            break;
        }
        for layer in 1..=s {
            let dog = &oct.dog[layer];
            for y in IMAGE_BORDER..h - IMAGE_BORDER {
                let row = &dog[y * w..(y + 1) * w];
                for x in IMAGE_BORDER..w - IMAGE_BORDER {
                    let v = row[x];
                    if v.abs() <= pre || !is_extremum(oct, layer, x, y, v) {
                        continue;
                    }
                    let Some(p) = refine(ss, o, layer, x, y) else { continue };
                    for angle in orientations(ss, &p) {
                        let mut q = p;
                        q.kp.orientation = angle;
                        points.push(q);
                    }
                }
            }
        }
    }
    if cfg.max_features > 0 && points.len() > cfg.max_features {
        // stable: equal responses keep scan order
        points.sort_by(|a, b| b.kp.response.total_cmp(&a.kp.response));
        points.truncate(cfg.max_features);
    }
    points
}

/// Detects keypoints. Images smaller than 64x64 yield no keypoints.
pub fn detect(image: &Raster, cfg: &DetectorConfig) -> Vec<Keypoint> {
    if image.width() < MIN_IMAGE_SIDE || image.height() < MIN_IMAGE_SIDE {
        return Vec::new();
    }
    let ss = ScaleSpace::build(image, cfg);
    detect_points(&ss).into_iter().map(|p| p.kp).collect()
}

/// Recovers pyramid coordinates from a keypoint's scale.
fn locate_in_pyramid(ss: &ScaleSpace, kp: &Keypoint) -> PyramidPoint {
    let s = ss.cfg.scales_per_octave as f32;
    let pos = (kp.scale / ss.cfg.base_sigma).max(1e-6).log2() * s;
    let octave = (((pos - 0.5) / s).floor().max(0.0) as usize).min(ss.octave_count() - 1);
    let level = pos - octave as f32 * s;
    let layer = (level.round().max(1.0) as usize).min(ss.cfg.scales_per_octave);
    PyramidPoint { kp: *kp, octave, layer, octave_sigma: kp.scale / (1usize << octave) as f32 }
}

fn describe_points(ss: &ScaleSpace, points: &[PyramidPoint]) -> ImageFeatures {
    let compute = |p: &PyramidPoint| descriptor(ss, p).map(|d| (p.kp, d));
    #[cfg(feature = "parallel")]
    let pairs: Vec<_> = {
        use rayon::prelude::*;
        points.par_iter().filter_map(compute).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let pairs: Vec<_> = points.iter().filter_map(compute).collect();
    let (keypoints, descriptors) = pairs.into_iter().unzip();
    ImageFeatures { keypoints, descriptors }
}

/// Computes descriptors for keypoints previously detected on `image` with the
/// same configuration. Keypoints whose support leaves the image are dropped
/// together with their descriptor.
pub fn describe(image: &Raster, keypoints: &[Keypoint], cfg: &DetectorConfig) -> ImageFeatures {
    if keypoints.is_empty() || image.width() < MIN_IMAGE_SIDE || image.height() < MIN_IMAGE_SIDE {
        return ImageFeatures::default();
    }
    let ss = ScaleSpace::build(image, cfg);
    let points: Vec<PyramidPoint> = keypoints.iter().map(|kp| locate_in_pyramid(&ss, kp)).collect();
    describe_points(&ss, &points)
}

/// Detection and description sharing one pyramid.
pub fn detect_and_describe(image: &Raster, cfg: &DetectorConfig) -> ImageFeatures {
    if image.width() < MIN_IMAGE_SIDE || image.height() < MIN_IMAGE_SIDE {
        return ImageFeatures::default();
    }
    let ss = ScaleSpace::build(image, cfg);
    let points = detect_points(&ss);
    describe_points(&ss, &points)
}

/// Writes features in the plain-text record format: one feature per line,
/// `x y scale orientation d0 .. d127`, whitespace separated. Lines starting
/// with `#` are comments.
pub fn write_records<W: Write>(mut out: W, features: &ImageFeatures) -> Result<()> {
    writeln!(out, "# x y scale orientation descriptor[128]")?;
    for (kp, d) in features.keypoints.iter().zip(&features.descriptors) {
        write!(out, "{} {} {} {}", kp.x, kp.y, kp.scale, kp.orientation)?;
        for v in d.values() {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads the record format written by [`write_records`]. Response is not
/// part of the format and reads as zero.
pub fn read_records<R: BufRead>(input: R) -> Result<ImageFeatures> {
    let mut features = ImageFeatures::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { what: "feature record", line: i + 1, msg };
        let values: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>().map_err(|e| err(format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != 4 + RAW_DESCRIPTOR_DIM {
            return Err(err(format!("expected {} fields, found {}", 4 + RAW_DESCRIPTOR_DIM, values.len())));
        }
        if values[2] <= 0.0 {
            return Err(err("scale must be positive".into()));
        }
        features.keypoints.push(Keypoint {
            x: values[0],
            y: values[1],
            scale: values[2],
            orientation: wrap_f32(values[3]),
            response: 0.0,
        });
        features.descriptors.push(Descriptor(values[4..].to_vec()));
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_texture, TextureStyle};

    #[test]
    fn fast_atan2_is_accurate() {
        for i in 0..720 {
            let a = (i as f32 / 720.0) * 2.0 * PI - PI + 1e-3;
            let (s, c) = a.sin_cos();
            let got = fast_atan2(s * 3.0, c * 3.0);
            // the polynomial's worst case is under 2e-6 rad
            assert!(wrap_f32(got - a).abs() < 1e-5, "{a}: {got}");
        }
    }

    #[test]
    fn blur_preserves_constant_and_mass() {
        let img = vec![0.25f32; 40 * 30];
        let out = blur(&img, 40, 30, 2.3);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
        let k = gaussian_kernel(1.7);
        assert!((k[0] + 2.0 * k[1..].iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blank_image_has_no_keypoints() {
        let img = Raster::filled(256, 256, 0.5);
        assert!(detect(&img, &DetectorConfig::default()).is_empty());
        assert!(detect(&Raster::filled(32, 32, 0.1), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = DetectorConfig { octaves: 0, ..DetectorConfig::default() };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig { contrast_threshold: 0.0, ..DetectorConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn descriptors_are_unit_and_clamped() {
        let tex = generate_texture(11, 512, 512, TextureStyle::Scratchy).unwrap();
        let f = detect_and_describe(&tex.raster, &DetectorConfig::default());
        assert!(f.len() > 50);
        for d in &f.descriptors {
            assert_eq!(d.dim(), 128);
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.values().iter().all(|&v| v >= 0.0));
        }
        // the clamp itself: before the final renormalization nothing exceeds 0.2
        let mut v: Vec<f32> = (0..128).map(|i| if i == 0 { 10.0 } else { 0.1 }).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let clamped: Vec<f32> = v.iter().map(|x| (x / norm).min(DESCR_CLAMP)).collect();
        assert!(clamped.iter().all(|&x| x <= 0.2 + 1e-6));
        normalize_descriptor(&mut v);
        assert!((Descriptor(v).norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orientations_are_wrapped_and_scales_positive() {
        let tex = generate_texture(12, 512, 512, TextureStyle::Granular).unwrap();
        for kp in detect(&tex.raster, &DetectorConfig::default()) {
            assert!(kp.scale > 0.0);
            assert!(kp.orientation > -PI && kp.orientation <= PI);
        }
    }

    #[test]
    fn describe_matches_joint_path() {
        let tex = generate_texture(13, 512, 512, TextureStyle::Scratchy).unwrap();
        let cfg = DetectorConfig::default();
        let joint = detect_and_describe(&tex.raster, &cfg);
        let kps = detect(&tex.raster, &cfg);
        let sep = describe(&tex.raster, &kps, &cfg);
        assert!(sep.len() as f64 >= joint.len() as f64 * 0.97);
        let mut same = 0;
        for (kp, d) in sep.keypoints.iter().zip(&sep.descriptors) {
            if let Some(j) = joint.keypoints.iter().position(|k| k == kp) {
                if joint.descriptors[j].distance_squared(d) < 1e-10 {
                    same += 1;
                }
            }
        }
        assert!(same as f64 >= joint.len() as f64 * 0.97, "{same} of {}", joint.len());
    }

    #[test]
    fn record_round_trip() {
        let tex = generate_texture(14, 512, 512, TextureStyle::Fibrous).unwrap();
        let f = detect_and_describe(&tex.raster, &DetectorConfig::default());
        let mut buf = Vec::new();
        write_records(&mut buf, &f).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back.len(), f.len());
        for (a, b) in back.keypoints.iter().zip(&f.keypoints) {
            assert_eq!((a.x, a.y, a.scale, a.orientation), (b.x, b.y, b.scale, b.orientation));
        }
        assert_eq!(back.descriptors, f.descriptors);
    }

    #[test]
    fn malformed_records_report_line() {
        let text = "# header\n1 2 3 0.5 1 2\n";
        match read_records(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
