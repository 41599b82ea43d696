//! Dense RGB rasters, inpainting masks, and the resampling kernels shared by
//! the super-resolution mock and depth upsampling.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("png codec: {0}")]
    Codec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major RGB image with float channels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::Dimensions(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ImageError::Dimensions("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Bilinear sample at continuous coordinates (pixel centers at `i + 0.5`),
    /// clamped at the borders.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for ch in 0..3 {
            let top = a[ch] + (b[ch] - a[ch]) * ax;
            let bot = c[ch] + (d[ch] - c[ch]) * ax;
            out[ch] = top + (bot - top) * ay;
        }
        out
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Averages non-overlapping `factor`×`factor` blocks.
    pub fn box_downsample(&self, factor: usize) -> Result<ImageBuffer, ImageError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(ImageError::Dimensions(format!(
                "{}x{} is not divisible by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        Ok(ImageBuffer::from_fn(w, h, |x, y| {
            let mut acc = [0.0f32; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let c = self.get(x * factor + dx, y * factor + dy);
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            acc.map(|v| v * norm)
        }))
    }

    /// Catmull-Rom bicubic upsampling by an integer factor, clamped to `[0, 1]`.
    pub fn bicubic_upsample(&self, factor: usize) -> ImageBuffer {
        let src: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        let up = bicubic_upsample(&src, self.width, self.height, 3, factor);
        ImageBuffer {
            width: self.width * factor,
            height: self.height * factor,
            data: up.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| ImageError::Dimensions("buffer size".into()))?;
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| ImageError::Codec(e.to_string()))?;
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ImageError::Codec(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Ok(ImageBuffer {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<ImageBuffer, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_png_bytes(&bytes)
    }

    /// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect(),
        }
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel flag; `true` marks a pixel that needs inpainting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::Dimensions(format!(
                "{} flags for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }
    pub fn matches(&self, image: &ImageBuffer) -> bool {
        self.width == image.width() && self.height == image.height()
    }

    /// 8-bit grayscale PNG, 255 where inpainting is needed.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| ImageError::Dimensions("buffer size".into()))?;
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| ImageError::Codec(e.to_string()))?;
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Mask, ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ImageError::Codec(e.to_string()))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b >= 128).collect();
        Ok(Mask {
            width: w as usize,
            height: h as usize,
            data,
        })
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean absolute per-channel difference.
pub fn mean_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.data.len() as f64
}

/// Mean magnitude of forward-difference gradients of the channel mean.
pub fn mean_gradient_magnitude(img: &ImageBuffer) -> f64 {
    let lum = |x: usize, y: usize| {
        let c = img.get(x, y);
        (c[0] + c[1] + c[2]) as f64 / 3.0
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for y in 0..img.height - 1 {
        for x in 0..img.width - 1 {
            let gx = lum(x + 1, y) - lum(x, y);
            let gy = lum(x, y + 1) - lum(x, y);
            total += (gx * gx + gy * gy).sqrt();
            n += 1;
        }
    }
    total / n.max(1) as f64
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Separable Catmull-Rom upsampling of an interleaved `ch`-channel raster.
/// Output pixel `X` samples source coordinate `(X + 0.5) / factor - 0.5`.
pub fn bicubic_upsample(src: &[f64], w: usize, h: usize, ch: usize, factor: usize) -> Vec<f64> {
    let (ow, oh) = (w * factor, h * factor);
    let taps = |n_out: usize, n_in: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..n_out)
            .map(|o| {
                let s = (o as f64 + 0.5) / factor as f64 - 0.5;
                let base = s.floor();
                let wts = catmull_rom(s - base);
                let b = base as isize;
                let idx = [b - 1, b, b + 1, b + 2].map(|i| i.clamp(0, n_in as isize - 1) as usize);
                (idx, wts)
            })
            .collect()
    };
    let xt = taps(ow, w);
    let yt = taps(oh, h);
    let mut horiz = vec![0.0; ow * h * ch];
    for y in 0..h {
        let row = &src[y * w * ch..(y + 1) * w * ch];
        for (ox, (idx, wts)) in xt.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * row[idx[k] * ch + c];
                }
                horiz[(y * ow + ox) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; ow * oh * ch];
    for (oy, (idx, wts)) in yt.iter().enumerate() {
        for ox in 0..ow {
            for c in 0..ch {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wts[k] * horiz[(idx[k] * ow + ox) * ch + c];
                }
                out[(oy * ow + ox) * ch + c] = acc;
            }
        }
    }
    out
}
