//! Procedural ground textures and degraded query crops with exact ground truth.
//!
//! A texture is band-limited value noise with a 1/f amplitude falloff, overlaid
//! with sparse, persistent imperfections (scratches, grains, fibres) scattered
//! as a Poisson process. Everything is a pure function of the seed.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose2;
use crate::raster::Raster;

pub const MIN_TEXTURE_SIDE: usize = 512;
pub const DEFAULT_QUERY_SIZE: (usize, usize) = (1280, 960);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureStyle {
    Scratchy,
    Granular,
    Fibrous,
}

impl TextureStyle {
    pub const ALL: [TextureStyle; 3] = [TextureStyle::Scratchy, TextureStyle::Granular, TextureStyle::Fibrous];
}

impl fmt::Display for TextureStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextureStyle::Scratchy => "scratchy",
            TextureStyle::Granular => "granular",
            TextureStyle::Fibrous => "fibrous",
        })
    }
}

impl FromStr for TextureStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratchy" => Ok(TextureStyle::Scratchy),
            "granular" => Ok(TextureStyle::Granular),
            "fibrous" => Ok(TextureStyle::Fibrous),
            other => Err(Error::InvalidParameter(format!("unknown texture style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTexture {
    pub raster: Raster,
    pub seed: u64,
    pub style: TextureStyle,
}

impl SyntheticTexture {
    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

/// Mark density and shape per style. Densities are per megapixel.
struct StyleParams {
    noise_octaves: &'static [f64],
    scratches: f64,
    grains: f64,
    fibres: f64,
    fibre_direction: Option<f64>,
    /// Final gain on the zero-mean pattern. Tuned so the default detector
    /// finds roughly 1500 keypoints in a 1280x960 window.
    contrast: f32,
}

fn style_params(style: TextureStyle) -> StyleParams {
    match style {
        TextureStyle::Scratchy => StyleParams {
            noise_octaves: &[3.0, 6.0, 12.0, 24.0, 48.0],
            scratches: 900.0,
            grains: 400.0,
            fibres: 0.0,
            fibre_direction: None,
            contrast: 0.45,
        },
        TextureStyle::Granular => StyleParams {
            noise_octaves: &[3.0, 5.0, 10.0, 20.0, 40.0],
            scratches: 150.0,
            grains: 2600.0,
            fibres: 0.0,
            fibre_direction: None,
            contrast: 0.43,
        },
        TextureStyle::Fibrous => StyleParams {
            noise_octaves: &[4.0, 8.0, 16.0, 32.0],
            scratches: 100.0,
            grains: 300.0,
            fibres: 2600.0,
            fibre_direction: Some(0.4),
            contrast: 0.58,
        },
    }
}

#[inline]
fn hash3(x: i64, y: i64, salt: u64) -> u64 {
    let mut h = salt ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(31).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 29;
    h
}

#[inline]
fn lattice(x: i64, y: i64, salt: u64) -> f32 {
    (hash3(x, y, salt) >> 40) as f32 / (1u64 << 24) as f32 * 2.0 - 1.0
}

#[inline]
fn fade(t: f32) -> f32 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, salt: u64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (fade((x - x0) as f32), fade((y - y0) as f32));
    let (xi, yi) = (x0 as i64, y0 as i64);
    let a = lattice(xi, yi, salt);
    let b = lattice(xi + 1, yi, salt);
    let c = lattice(xi, yi + 1, salt);
    let d = lattice(xi + 1, yi + 1, salt);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Sum of value-noise octaves with amplitude proportional to wavelength.
fn band_noise(width: usize, height: usize, wavelengths: &[f64], seed: u64) -> Vec<f32> {
    let fill_row = |y: usize, row: &mut [f32]| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (o, &lambda) in wavelengths.iter().enumerate() {
                let salt = seed.wrapping_mul(31).wrapping_add(o as u64 * 7919);
                acc += lambda as f32 * value_noise(x as f64 / lambda, y as f64 / lambda, salt);
            }
            *v = acc;
        }
    };
    let mut data = vec![0.0f32; width * height];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(width).enumerate().for_each(|(y, row)| fill_row(y, row));
    }
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width).enumerate().for_each(|(y, row)| fill_row(y, row));
    data
}

fn normalize(data: &mut [f32], spread: f32) {
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for v in data.iter_mut() {
        *v = ((*v as f64 - mean) / std) as f32 * spread;
    }
}

/// Adds `amp * exp(-d²/2σ²)` along the segment `a`–`b`.
fn stamp_segment(img: &mut [f32], w: usize, h: usize, a: (f64, f64), b: (f64, f64), sigma: f64, amp: f32) {
    let reach = 3.0 * sigma;
    let x_lo = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let y_lo = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let x_hi = ((a.0.max(b.0) + reach).ceil() as isize).min(w as isize - 1);
    let y_hi = ((a.1.max(b.1) + reach).ceil() as isize).min(h as isize - 1);
    if x_hi < 0 || y_hi < 0 {
        return;
    }
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    let inv = -0.5 / (sigma * sigma);
    for y in y_lo..=y_hi as usize {
        for x in x_lo..=x_hi as usize {
            let (px, py) = (x as f64 - a.0, y as f64 - a.1);
            let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
            let (ex, ey) = (px - t * dx, py - t * dy);
            let d2 = ex * ex + ey * ey;
            if d2 < reach * reach {
                img[y * w + x] += amp * (d2 * inv).exp() as f32;
            }
        }
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, density_per_mp: f64, area: f64) -> u64 {
    let mean = density_per_mp * area / 1e6;
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Draws a curved polyline stroke.
#[allow(clippy::too_many_arguments)]
fn stroke(
    img: &mut [f32],
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
    length: f64,
    heading: f64,
    bend: f64,
    sigma: f64,
    amp: f32,
) {
    let mut p = (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64);
    let segments = 3;
    let mut dir = heading;
    for _ in 0..segments {
        let step = length / segments as f64;
        let q = (p.0 + step * dir.cos(), p.1 + step * dir.sin());
        stamp_segment(img, w, h, p, q, sigma, amp);
        p = q;
        dir += rng.random_range(-bend..=bend);
    }
}

/// Generates a procedural ground texture. `width` and `height` must both be at
/// least [`MIN_TEXTURE_SIDE`].
pub fn generate_texture(seed: u64, width: usize, height: usize, style: TextureStyle) -> Result<SyntheticTexture> {
    if width < MIN_TEXTURE_SIDE || height < MIN_TEXTURE_SIDE {
        return Err(Error::RasterTooSmall { width, height, min: MIN_TEXTURE_SIDE });
    }
    let params = style_params(style);
    let mut img = band_noise(width, height, params.noise_octaves, seed);
    normalize(&mut img, 0.09);

    let area = (width * height) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_7E87_u64);

    for _ in 0..poisson_count(&mut rng, params.scratches, area) {
        let length = rng.random_range(10.0..70.0);
        let heading = rng.random_range(-PI..PI);
        let sigma = rng.random_range(0.8..2.0);
        let amp = -rng.random_range(0.12..0.35);
        stroke(&mut img, width, height, &mut rng, length, heading, 0.5, sigma, amp);
    }
    for _ in 0..poisson_count(&mut rng, params.grains, area) {
        let c = (rng.random::<f64>() * width as f64, rng.random::<f64>() * height as f64);
        let sigma = rng.random_range(1.2..4.0);
        let amp = if rng.random_bool(0.6) { -1.0 } else { 1.0 } * rng.random_range(0.1..0.3);
        stamp_segment(&mut img, width, height, c, c, sigma, amp);
    }
    for _ in 0..poisson_count(&mut rng, params.fibres, area) {
        let length = rng.random_range(8.0..30.0);
        let heading = match params.fibre_direction {
            Some(d) => d + rng.random_range(-0.6..0.6) + if rng.random_bool(0.5) { PI } else { 0.0 },
            None => rng.random_range(-PI..PI),
        };
        let sigma = rng.random_range(0.7..1.4);
        let amp = if rng.random_bool(0.5) { -1.0 } else { 1.0 } * rng.random_range(0.08..0.22);
        stroke(&mut img, width, height, &mut rng, length, heading, 0.8, sigma, amp);
    }

    for v in img.iter_mut() {
        *v = (*v * params.contrast + 0.55).clamp(0.0, 1.0);
    }
    Ok(SyntheticTexture { raster: Raster::from_vec(width, height, img)?, seed, style })
}

/// Degradations applied to a query crop, in the order occlusion, blur, noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    /// Fraction of pixels covered by one contiguous occluder, in `[0, 1)`.
    pub occlusion: f64,
    /// Linear motion-blur kernel length in pixels; below 1 means no blur.
    pub blur_length: f64,
    /// Motion direction in radians, in the query frame.
    pub blur_angle: f64,
    /// Standard deviation of additive Gaussian noise (intensity units).
    pub noise_sigma: f64,
    /// Small high-contrast specks per megapixel, scattered after occlusion.
    pub dust: f64,
    pub seed: u64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self { occlusion: 0.0, blur_length: 0.0, blur_angle: 0.0, noise_sigma: 0.0, dust: 0.0, seed: 0 }
    }
}

impl Degradation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.occlusion) {
            return Err(Error::InvalidParameter(format!("occlusion {} not in [0, 1)", self.occlusion)));
        }
        if !(self.blur_length >= 0.0 && self.noise_sigma >= 0.0 && self.dust >= 0.0) {
            return Err(Error::InvalidParameter("blur length, noise sigma and dust must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QuerySample {
    pub image: Raster,
    /// Query pixel frame to texture frame.
    pub truth: Pose2,
    pub degradation: Degradation,
    /// Number of pixels overwritten by the occluder.
    pub occluded_pixels: usize,
}

/// Checks that every pixel of a `w`x`h` crop under `pose` samples inside the
/// raster.
pub fn footprint_inside(pose: &Pose2, (w, h): (usize, usize), (tw, th): (usize, usize)) -> bool {
    let (maxx, maxy) = ((tw - 1) as f64, (th - 1) as f64);
    [(0.0, 0.0), ((w - 1) as f64, 0.0), (0.0, (h - 1) as f64), ((w - 1) as f64, (h - 1) as f64)].iter().all(|&c| {
        let (x, y) = pose.apply(c);
        x >= -1e-9 && y >= -1e-9 && x <= maxx + 1e-9 && y <= maxy + 1e-9
    })
}

/// Bilinear resample of `src` under `pose` (crop frame → source frame).
pub fn warp(src: &Raster, pose: &Pose2, (w, h): (usize, usize)) -> Raster {
    let (s, c) = pose.theta.sin_cos();
    let mut out = Raster::new(w, h);
    let data = out.data_mut();
    for v in 0..h {
        let row = &mut data[v * w..(v + 1) * w];
        let (bx, by) = (-s * v as f64 + pose.tx, c * v as f64 + pose.ty);
        for (u, px) in row.iter_mut().enumerate() {
            *px = src.sample_bilinear(c * u as f64 + bx, s * u as f64 + by);
        }
    }
    out
}

/// Samples a `size` crop of `tex` under `pose` and applies `degradation`.
pub fn sample_query(
    tex: &SyntheticTexture,
    pose: Pose2,
    size: (usize, usize),
    degradation: Degradation,
) -> Result<QuerySample> {
    sample_raster(&tex.raster, pose, size, degradation)
}

pub fn sample_raster(src: &Raster, pose: Pose2, size: (usize, usize), degradation: Degradation) -> Result<QuerySample> {
    degradation.validate()?;
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidParameter("query size must be positive".into()));
    }
    if !footprint_inside(&pose, size, (src.width(), src.height())) {
        return Err(Error::OutOfBounds);
    }
    let mut image = warp(src, &pose, size);
    let mut rng = ChaCha8Rng::seed_from_u64(degradation.seed);
    let occluded_pixels = occlude(&mut image, degradation.occlusion, &mut rng);
    if degradation.dust > 0.0 {
        sprinkle_dust(&mut image, degradation.dust, &mut rng);
    }
    if degradation.blur_length >= 1.0 {
        image = motion_blur(&image, degradation.blur_length, degradation.blur_angle);
    }
    if degradation.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, degradation.noise_sigma).expect("sigma validated");
        for v in image.data_mut() {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(QuerySample { image, truth: pose, degradation, occluded_pixels })
}

/// Grows one 4-connected blob of exactly `round(fraction · area)` pixels by
/// Eden growth from a random seed pixel and paints it with a smooth leaf-like
/// pattern. Returns the number of pixels replaced.
fn occlude(image: &mut Raster, fraction: f64, rng: &mut ChaCha8Rng) -> usize {
    let (w, h) = (image.width(), image.height());
    let target = (fraction * (w * h) as f64).round() as usize;
    if target == 0 {
        return 0;
    }
    let mut taken = vec![false; w * h];
    let mut queued = vec![false; w * h];
    let start = rng.random_range(0..w * h);
    let mut frontier = vec![start];
    queued[start] = true;
    let mut count = 0;
    while count < target && !frontier.is_empty() {
        let i = rng.random_range(0..frontier.len());
        let p = frontier.swap_remove(i);
        taken[p] = true;
        count += 1;
        let (x, y) = (p % w, p / w);
        let mut push = |q: usize| {
            if !queued[q] {
                queued[q] = true;
                frontier.push(q);
            }
        };
        if x > 0 {
            push(p - 1);
        }
        if x + 1 < w {
            push(p + 1);
        }
        if y > 0 {
            push(p - w);
        }
        if y + 1 < h {
            push(p + w);
        }
    }
    let salt = rng.random::<u64>();
    let base = rng.random_range(0.25..0.45) as f32;
    let data = image.data_mut();
    for (p, _) in taken.iter().enumerate().filter(|(_, &t)| t) {
        let (x, y) = ((p % w) as f64, (p / w) as f64);
        data[p] = base + 0.08 * value_noise(x / 60.0, y / 60.0, salt);
    }
    count
}

fn sprinkle_dust(image: &mut Raster, per_mp: f64, rng: &mut ChaCha8Rng) {
    let (w, h) = (image.width(), image.height());
    let count = poisson_count(rng, per_mp, (w * h) as f64);
    let data = image.data_mut();
    for _ in 0..count {
        let c = (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64);
        let sigma = rng.random_range(1.0..1.8);
        let amp = if rng.random_bool(0.5) { -1.0f32 } else { 1.0 } * rng.random_range(0.3f32..0.5);
        stamp_segment(data, w, h, c, c, sigma, amp);
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Averages samples along a centred line segment of `length` pixels.
pub fn motion_blur(image: &Raster, length: f64, angle: f64) -> Raster {
    let taps = (length.ceil() as usize + 1).max(2);
    let (dx, dy) = (angle.cos(), angle.sin());
    let offsets: Vec<(f64, f64)> = (0..taps)
        .map(|i| {
            let t = (i as f64 / (taps - 1) as f64 - 0.5) * length;
            (t * dx, t * dy)
        })
        .collect();
    let inv = 1.0 / taps as f32;
    Raster::from_fn(image.width(), image.height(), |x, y| {
        offsets.iter().map(|&(ox, oy)| image.sample_bilinear(x as f64 + ox, y as f64 + oy)).sum::<f32>() * inv
    })
}

/// Layout of a zig-zag capture over a texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub step_x: usize,
    pub step_y: usize,
    /// Texture position of the first frame's top-left corner.
    pub origin: (usize, usize),
}

impl GridSpec {
    /// Frames of `frame` size overlapping their neighbours by half.
    pub fn half_overlap(cols: usize, rows: usize, frame: (usize, usize), margin: usize) -> Self {
        Self {
            cols,
            rows,
            frame_width: frame.0,
            frame_height: frame.1,
            step_x: frame.0 / 2,
            step_y: frame.1 / 2,
            origin: (margin, margin),
        }
    }

    /// Texture size that fits the grid plus `margin` on every side.
    pub fn texture_size(&self) -> (usize, usize) {
        (
            self.origin.0 * 2 + self.step_x * (self.cols - 1) + self.frame_width,
            self.origin.1 * 2 + self.step_y * (self.rows - 1) + self.frame_height,
        )
    }

    /// Texture-frame rectangle `(x0, y0, x1, y1)` covered by the frames.
    pub fn covered_region(&self) -> (f64, f64, f64, f64) {
        let (x0, y0) = (self.origin.0 as f64, self.origin.1 as f64);
        (
            x0,
            y0,
            x0 + (self.step_x * (self.cols - 1) + self.frame_width - 1) as f64,
            y0 + (self.step_y * (self.rows - 1) + self.frame_height - 1) as f64,
        )
    }

    /// Frame poses in capture order: left to right on even rows, right to left
    /// on odd rows.
    pub fn poses(&self) -> Vec<Pose2> {
        let mut out = Vec::with_capacity(self.cols * self.rows);
        for r in 0..self.rows {
            for i in 0..self.cols {
                let c = if r % 2 == 0 { i } else { self.cols - 1 - i };
                out.push(Pose2::from_translation(
                    (self.origin.0 + c * self.step_x) as f64,
                    (self.origin.1 + r * self.step_y) as f64,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CapturedFrame {
    pub image: Raster,
    /// Frame pixel frame to texture frame.
    pub truth: Pose2,
}

/// Crops the zig-zag frame sequence described by `grid`, applying
/// `degradation` (with a per-frame seed offset) to each frame.
pub fn zigzag_capture(src: &Raster, grid: &GridSpec, degradation: Degradation) -> Result<Vec<CapturedFrame>> {
    grid.poses()
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let d = Degradation { seed: degradation.seed.wrapping_add(i as u64), ..degradation };
            let q = sample_raster(src, pose, (grid.frame_width, grid.frame_height), d)?;
            Ok(CapturedFrame { image: q.image, truth: pose })
        })
        .collect()
}

/// Draws a uniformly random rotation and a position such that the whole
/// `size` crop lies inside `region` (texture coordinates, inclusive).
pub fn random_pose_inside<R: Rng>(rng: &mut R, region: (f64, f64, f64, f64), size: (usize, usize)) -> Option<Pose2> {
    let (w, h) = ((size.0 - 1) as f64, (size.1 - 1) as f64);
    for _ in 0..1000 {
        let theta = rng.random_range(-PI..PI);
        let rot = Pose2::from_rotation(theta);
        let corners = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)].map(|c| rot.apply(c));
        let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let (lo_x, hi_x) = (region.0 - min_x, region.2 - max_x);
        let (lo_y, hi_y) = (region.1 - min_y, region.3 - max_y);
        if lo_x <= hi_x && lo_y <= hi_y {
            let tx = lo_x + rng.random::<f64>() * (hi_x - lo_x);
            let ty = lo_y + rng.random::<f64>() * (hi_y - lo_y);
            return Some(Pose2::new(theta, tx, ty));
        }
    }
    None
}
