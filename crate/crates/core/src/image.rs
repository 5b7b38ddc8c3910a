//! Pixel container shared by every stage of the pipeline.
//!
//! Images are stored interleaved (HWC) as `f32` in `[0, 1]`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Srgb,
    Luminance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    color: ColorSpace,
    data: Vec<f32>,
}

impl Image {
    /// Wraps interleaved pixel data, checking shape, range and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty image {height}x{width}")));
        }
        let color = match channels {
            1 => ColorSpace::Luminance,
            3 => ColorSpace::Srgb,
            c => return Err(Error::InvalidImage(format!("unsupported channel count {c}"))),
        };
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, color, data })
    }

    /// Builds an image from clamped per-pixel values.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Same as [`Image::new`] but clamps values into `[0, 1]` first.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, channels, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Decode { path: path.to_path_buf(), source })?;
        let (channels, bytes, w, h) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (3, rgb.into_raw(), w, h)
        } else {
            let l = img.to_luma8();
            let (w, h) = l.dimensions();
            (1, l.into_raw(), w, h)
        };
        let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(h as usize, w as usize, channels, data)
    }

    /// Writes an 8-bit PNG (values rounded to the nearest code).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 3 {
            image::RgbImage::from_raw(w, h, bytes).map(|b| b.save(path))
        } else {
            image::GrayImage::from_raw(w, h, bytes).map(|b| b.save(path))
        };
        match res {
            Some(r) => r.map_err(|source| Error::Decode { path: path.to_path_buf(), source }),
            None => Err(Error::InvalidImage("buffer size mismatch".into())),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn min_side(&self) -> usize {
        self.height.min(self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma on the 8-bit scale using the BT.601 studio-swing transform
    /// (`16 + 65.481 R + 128.553 G + 24.966 B` for RGB in `[0, 1]`).
    /// Single-channel images are scaled by 255 unchanged.
    pub fn luma_255(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.iter().map(|&v| f64::from(v) * 255.0).collect();
        }
        self.data
            .chunks_exact(3)
            .map(|p| {
                let (r, g, b) = (f64::from(p[0]), f64::from(p[1]), f64::from(p[2]));
                65.481 * r + 128.553 * g + 24.966 * b + 16.0
            })
            .collect()
    }

    /// Luminance image in `[0, 1]` (studio-swing Y divided by 255).
    pub fn to_luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.luma_255().into_iter().map(|v| clamp_unit((v / 255.0) as f32)).collect();
        Image { height: self.height, width: self.width, channels: 1, color: ColorSpace::Luminance, data }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidImage(format!(
                "crop ({top},{left}) {height}x{width} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(Image { height, width, channels: c, color: self.color, data })
    }

    pub fn flip_horizontal(&self) -> Image {
        self.remap(|y, x| (y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Image {
        self.remap(|y, x| (self.height - 1 - y, x))
    }

    pub fn rotate_180(&self) -> Image {
        self.remap(|y, x| (self.height - 1 - y, self.width - 1 - x))
    }

    fn remap(&self, src: impl Fn(usize, usize) -> (usize, usize)) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (sy, sx) = src(y, x);
                let i = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[i..i + c]);
            }
        }
        Image { data, ..self.clone() }
    }

    /// Separable Gaussian blur with replicated borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);

        let (h, w, c) = (self.height as isize, self.width as isize, self.channels);
        let at = |buf: &[f64], y: isize, x: isize, ch: usize| buf[((y * w + x) as usize) * c + ch];
        let src: Vec<f64> = self.data.iter().map(|&v| f64::from(v)).collect();
        let mut tmp = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let xx = (x + k as isize - radius).clamp(0, w - 1);
                        acc += kv * at(&src, y, xx, ch);
                    }
                    tmp[((y * w + x) as usize) * c + ch] = acc;
                }
            }
        }
        let mut data = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let yy = (y + k as isize - radius).clamp(0, h - 1);
                        acc += kv * at(&tmp, yy, x, ch);
                    }
                    data[((y * w + x) as usize) * c + ch] = clamp_unit(acc as f32);
                }
            }
        }
        Image { data, ..self.clone() }
    }

    /// Adds i.i.d. Gaussian noise and clamps into `[0, 1]`.
    pub fn add_gaussian_noise<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let n: f64 = rng.sample(StandardNormal);
                clamp_unit((f64::from(v) + sigma * n) as f32)
            })
            .collect();
        Image { data, ..self.clone() }
    }

    /// Bicubic resize by `scale` with antialiasing on downscale.
    pub fn resize(&self, scale: f64) -> Result<Image> {
        let (oh, ow) = resize::output_size(self.height, self.width, scale);
        if oh == 0 || ow == 0 {
            return Err(Error::InvalidImage(format!("resize by {scale} empties the image")));
        }
        let c = self.channels;
        let mut out = vec![0.0f32; oh * ow * c];
        for ch in 0..c {
            let plane: Vec<f64> = (0..self.height * self.width).map(|i| f64::from(self.data[i * c + ch])).collect();
            let r = resize::imresize(&plane, self.height, self.width, scale);
            for (i, v) in r.into_iter().enumerate() {
                out[i * c + ch] = clamp_unit(v as f32);
            }
        }
        Ok(Image { height: oh, width: ow, channels: c, color: self.color, data: out })
    }

    /// Channel-planar copy (CHW) of the pixels.
    pub fn to_planar(&self) -> Vec<f32> {
        let (hw, c) = (self.height * self.width, self.channels);
        let mut out = vec![0.0; hw * c];
        for i in 0..hw {
            for ch in 0..c {
                out[ch * hw + i] = self.data[i * c + ch];
            }
        }
        out
    }

    /// Inverse of [`Image::to_planar`]; values are clamped into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Result<Image> {
        let hw = height * width;
        if planar.len() != hw * channels {
            return Err(Error::ShapeMismatch(format!(
                "planar buffer of {} values for {height}x{width}x{channels}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; hw * channels];
        for ch in 0..channels {
            for i in 0..hw {
                data[i * channels + ch] = clamp_unit(planar[ch * hw + i]);
            }
        }
        Image::new(height, width, channels, data)
    }
}

#[inline]
fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
