//! Planar float images.
//!
//! Pixels are stored channel-major (`c, y, x`) with values in `[0, 1]`,
//! which is the layout the network layers consume directly.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_means(&self) -> Vec<f32> {
        let n = (self.height * self.width) as f64;
        (0..self.channels)
            .map(|c| {
                let s: f64 = self.plane(c).iter().map(|&v| v as f64).sum();
                if n > 0.0 {
                    (s / n) as f32
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Bilinear resize with half-pixel centers. Equal sizes copy exactly.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / out_h as f64;
        let sx = self.width as f64 / out_w as f64;
        let taps = |scale: f64, n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
            (0..n_out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(n_in - 1);
                    (lo, hi, (src - lo as f64) as f32)
                })
                .collect()
        };
        let ys = taps(sy, self.height, out_h);
        let xs = taps(sx, self.width, out_w);
        let mut out = Image::new(self.channels, out_h, out_w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &plane[y0 * self.width..(y0 + 1) * self.width];
                let r1 = &plane[y1 * self.width..(y1 + 1) * self.width];
                let base = (c * out_h + oy) * out_w;
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    out.data[base + ox] = top + (bot - top) * fy;
                }
            }
        }
        out
    }

    /// Copies the `h x w` window at integer offset (`y0`, `x0`); pixels
    /// outside the image take the per-channel `fill` value.
    pub fn window(&self, y0: i64, x0: i64, h: usize, w: usize, fill: &[f32]) -> Image {
        let mut out = Image::new(self.channels, h, w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for v in 0..h {
                let y = y0 + v as i64;
                let row = (c * h + v) * w;
                if y < 0 || y >= self.height as i64 {
                    out.data[row..row + w].fill(fill[c]);
                    continue;
                }
                let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                for u in 0..w {
                    let x = x0 + u as i64;
                    out.data[row + u] = if x < 0 || x >= self.width as i64 {
                        fill[c]
                    } else {
                        src[x as usize]
                    };
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::new(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                let ch = c.min(self.channels - 1);
                let v = self.get(ch, y as usize, x as usize);
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)?.to_rgb8();
        Ok(Image::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_is_exact() {
        let data: Vec<f32> = (0..3 * 7 * 5).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let img = Image::from_vec(3, 7, 5, data).unwrap();
        assert_eq!(img.resize(7, 5), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(3, 10, 13, 0.25);
        let r = img.resize(31, 4);
        assert!(r.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn window_pads_with_fill() {
        let img = Image::filled(3, 4, 4, 1.0);
        let w = img.window(-2, -2, 4, 4, &[0.1, 0.2, 0.3]);
        assert_eq!(w.get(1, 0, 0), 0.2);
        assert_eq!(w.get(2, 3, 3), 1.0);
    }

    #[test]
    fn rgb8_roundtrip() {
        let mut img = Image::new(3, 2, 2);
        img.set(0, 1, 1, 128.0 / 255.0);
        let back = Image::from_rgb8(&img.to_rgb8());
        assert_eq!(back, img);
    }
}
