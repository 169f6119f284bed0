//! Linear-RGB image buffer with 8-bit PNG/JPEG interchange.
//!
//! Pixel values live in `[0, 1]`; 8-bit files are converted by `/255` on read
//! and `round(c·255)` on write. No gamma handling is performed.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 channels per pixel.
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = ImageRgb::new(width, height);
        for p in 0..width * height {
            img.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let dynimg = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = dynimg.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Ok(ImageRgb {
            width: w,
            height: h,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Box-filter downsampling by an integer factor; trailing rows/columns
    /// that do not fill a full box are dropped.
    pub fn downsample_box(&self, factor: usize) -> ImageRgb {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = ImageRgb::new(w, h);
        let inv = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                out.set_pixel(x, y, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_filter_preserves_constant_images() {
        let img = ImageRgb::constant(8, 8, [0.25, 0.5, 0.75]);
        let down = img.downsample_box(2);
        assert_eq!(down.width, 4);
        assert_eq!(down.height, 4);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(down.pixel(x, y), [0.25, 0.5, 0.75]);
            }
        }
    }

    #[test]
    fn box_filter_averages_blocks() {
        let mut img = ImageRgb::new(2, 2);
        img.set_pixel(0, 0, [1.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [0.0, 1.0, 0.0]);
        img.set_pixel(0, 1, [0.0, 0.0, 1.0]);
        img.set_pixel(1, 1, [1.0, 1.0, 1.0]);
        let down = img.downsample_box(2);
        assert_eq!(down.pixel(0, 0), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_lattice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let mut img = ImageRgb::new(3, 2);
        for (k, v) in img.data.iter_mut().enumerate() {
            *v = (k % 256) as f64 / 255.0;
        }
        img.save_png(&path).unwrap();
        let back = ImageRgb::load(&path).unwrap();
        assert_eq!(img, back);
    }
}
