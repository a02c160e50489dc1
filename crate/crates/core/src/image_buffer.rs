//! In-memory RGB image: `[3, H, W]` f64 with values in `[0, 1]`.
//!
//! On disk images are 8-bit sRGB PNG; loading divides by 255, saving rounds
//! back. All geometry helpers preserve the `[0, 1]` invariant.

use std::path::Path;

use fas_nn::Tensor4;
use ndarray::{Array3, Array4};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    /// Channel-major storage: `[3, height, width]`.
    data: Array3<f64>,
}

impl ImageBuffer {
    /// Wraps raw data, validating the channel count and value range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(CoreError::InvalidInput(format!(
                "image must have 3 channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(CoreError::InvalidInput(format!(
                "image must be non-empty, got {h}x{w}"
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(CoreError::InvalidInput(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Builds from a per-pixel function; values are clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let data = Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x).clamp(0.0, 1.0));
        Self { data }
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(height, width, |c, _, _| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[[c, y, x]]
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| CoreError::image(path, e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
        });
        Self::new(data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut rgb = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    quantize(self.data[[0, y, x]]),
                    quantize(self.data[[1, y, x]]),
                    quantize(self.data[[2, y, x]]),
                ];
                rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        rgb.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| CoreError::image(path, e.to_string()))
    }

    /// Bilinear resample with half-pixel sample centers; constant images stay
    /// constant and outputs remain inside `[0, 1]`.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
        let (in_h, in_w) = (self.height(), self.width());
        let sy = in_h as f64 / out_h as f64;
        let sx = in_w as f64 / out_w as f64;
        let data = Array3::from_shape_fn((3, out_h, out_w), |(c, oy, ox)| {
            let src_y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64);
            let src_x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64);
            let y0 = src_y.floor() as usize;
            let x0 = src_x.floor() as usize;
            let y1 = (y0 + 1).min(in_h - 1);
            let x1 = (x0 + 1).min(in_w - 1);
            let fy = src_y - y0 as f64;
            let fx = src_x - x0 as f64;
            let top = self.data[[c, y0, x0]] * (1.0 - fx) + self.data[[c, y0, x1]] * fx;
            let bot = self.data[[c, y1, x0]] * (1.0 - fx) + self.data[[c, y1, x1]] * fx;
            (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0)
        });
        Self { data }
    }

    /// Axis-aligned crop; the window must lie inside the image.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height() || x0 + w > self.width() {
            return Err(CoreError::InvalidInput(format!(
                "crop window {h}x{w} at ({y0}, {x0}) exceeds image {}x{}",
                self.height(),
                self.width()
            )));
        }
        let data = Array3::from_shape_fn((3, h, w), |(c, y, x)| self.data[[c, y0 + y, x0 + x]]);
        Ok(Self { data })
    }

    /// Stacks same-sized images into an NCHW batch.
    pub fn batch(images: &[&ImageBuffer]) -> Result<Tensor4> {
        let first = images
            .first()
            .ok_or_else(|| CoreError::InvalidInput("batch must be non-empty".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut out = Array4::zeros((images.len(), 3, h, w));
        for (n, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w {
                return Err(CoreError::InvalidInput(format!(
                    "batch images must share dimensions: {}x{} vs {}x{}",
                    h,
                    w,
                    img.height(),
                    img.width()
                )));
            }
            out.index_axis_mut(ndarray::Axis(0), n).assign(&img.data);
        }
        Ok(out)
    }

    pub fn to_tensor4(&self) -> Tensor4 {
        self.data
            .clone()
            .insert_axis(ndarray::Axis(0))
            .into_dimensionality()
            .expect("3d + axis is 4d")
    }

    /// Extracts sample `n` from an NCHW batch, clamping into `[0, 1]`.
    pub fn from_tensor4(t: &Tensor4, n: usize) -> Self {
        let view = t.index_axis(ndarray::Axis(0), n);
        let data = view.mapv(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self { data }
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let npx = (self.height() * self.width()) as f64;
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.data.index_axis(ndarray::Axis(0), c).sum() / npx;
        }
        out
    }

    /// Largest per-value absolute difference; images must share dimensions.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "dimension mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "dimension mismatch");
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
