//! Single-channel `f32` rasters and their 8-bit file forms.

use crate::error::{Error, Result};

/// Row-major grayscale raster with values nominally in `[0, 1]`.
///
/// Pixel `(x, y)` sits at continuous coordinate `(x, y)`; there is no
/// half-pixel offset anywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "raster data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Quantizes to 8 bits, clamping to `[0, 1]` first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with border replication.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }

    /// Copy of the `w`x`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::OutOfBounds);
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Raster { width: w, height: h, data })
    }

    /// Rotates the raster by 90° so that source pixel `(x, y)` lands at
    /// `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> Raster {
        let (w, h) = (self.height, self.width);
        Raster::from_fn(w, h, |x, y| self.get(y, self.height - 1 - x))
    }
}

#[cfg(feature = "io")]
mod io {
    use std::path::Path;

    use image::{GrayImage, ImageFormat};

    use super::Raster;
    use crate::error::{Error, Result};

    impl Raster {
        /// Reads any PNG or PGM file, converting to grayscale.
        pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
            let path = path.as_ref();
            let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?;
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            Raster::from_u8(w as usize, h as usize, gray.as_raw())
        }

        /// Writes an 8-bit grayscale file; `.pgm` selects PGM, anything else PNG.
        pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
            let path = path.as_ref();
            let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
                .expect("buffer length matches dimensions");
            let format = match path.extension().and_then(|e| e.to_str()) {
                Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
                _ => ImageFormat::Png,
            };
            img.save_with_format(path, format)
                .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centres_exactly() {
        let r = Raster::from_fn(4, 3, |x, y| (x * 10 + y) as f32);
        assert_eq!(r.sample_bilinear(2.0, 1.0), 21.0);
        assert_eq!(r.sample_bilinear(2.5, 1.0), 26.0);
        assert_eq!(r.sample_bilinear(2.0, 1.5), 21.5);
    }

    #[test]
    fn rotate90_moves_corners() {
        let r = Raster::from_fn(3, 2, |x, y| (y * 3 + x) as f32);
        let q = r.rotate90();
        assert_eq!((q.width(), q.height()), (2, 3));
        // (x, y) -> (h - 1 - y, x)
        assert_eq!(q.get(1, 0), r.get(0, 0));
        assert_eq!(q.get(0, 2), r.get(2, 1));
    }

    #[cfg(feature = "io")]
    #[test]
    fn png_and_pgm_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_fn(7, 5, |x, y| ((x * 31 + y * 17) % 256) as f32 / 255.0);
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            r.save(&p).unwrap();
            let back = Raster::load(&p).unwrap();
            assert_eq!(back.to_u8(), r.to_u8());
        }
    }
}
