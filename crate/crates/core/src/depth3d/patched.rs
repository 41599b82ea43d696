use log::warn;

use super::{DepthError, DepthMap};
use crate::backends::DepthEstimator;
use crate::fusion::boundary_weight;
use crate::image::ImageBuffer;

/// Side length of each depth patch.
pub const PATCH_SIZE: usize = 512;
/// Patches per axis.
pub const PATCH_COUNT: usize = 13;

/// Evenly spaced patch origins covering `[0, full)` with `count` patches of
/// `patch` pixels: `{0, step, …, full - patch}`.
pub fn patch_origins(full: usize, patch: usize, count: usize) -> Result<Vec<usize>, DepthError> {
    if patch > full || count == 0 || (count == 1 && patch != full) {
        return Err(DepthError::InvalidArgument(format!(
            "{count} patches of {patch} cannot tile {full}"
        )));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let span = full - patch;
    if span % (count - 1) != 0 {
        return Err(DepthError::InvalidArgument(format!(
            "{count} patches of {patch} do not tile {full} at an integer stride"
        )));
    }
    let step = span / (count - 1);
    Ok((0..count).map(|i| i * step).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFit {
    pub origin: (usize, usize),
    pub scale: f64,
    pub shift: f64,
    /// The backend failed (or returned unusable output) and the upsampled
    /// low-resolution depth was used instead.
    pub fell_back: bool,
}

#[derive(Debug, Clone)]
pub struct PatchedDepth {
    pub depth: DepthMap,
    pub fits: Vec<PatchFit>,
}

/// Least-squares `(s, t)` mapping `src` onto `dst`. Falls back to a pure
/// scale when `src` has no spread or the affine fit flips sign.
fn fit_scale_shift(src: &[f64], dst: &[f64]) -> (f64, f64) {
    let n = src.len() as f64;
    let ms = src.iter().sum::<f64>() / n;
    let md = dst.iter().sum::<f64>() / n;
    let mut var = 0.0;
    let mut cov = 0.0;
    for (s, d) in src.iter().zip(dst) {
        var += (s - ms) * (s - ms);
        cov += (s - ms) * (d - md);
    }
    if var > 1e-12 * n * ms.abs().max(1e-12).powi(2) {
        let s = cov / var;
        if s > 0.0 {
            return (s, md - s * ms);
        }
    }
    let ss: f64 = src.iter().map(|s| s * s).sum();
    let sd: f64 = src.iter().zip(dst).map(|(s, d)| s * d).sum();
    (sd / ss, 0.0)
}

/// Estimates depth on overlapping 512² crops of the super-resolved image,
/// aligns each crop to the bilinearly upsampled low-resolution depth, and
/// blends the crops with boundary weights. Patches are processed in
/// row-major order.
pub fn patched_depth_superres(
    sr_image: &ImageBuffer,
    low_depth: &DepthMap,
    backend: &dyn DepthEstimator,
) -> Result<PatchedDepth, DepthError> {
    let (w, h) = (sr_image.width(), sr_image.height());
    if w % low_depth.width() != 0 || w / low_depth.width() != h / low_depth.height() || h % low_depth.height() != 0 {
        return Err(DepthError::InvalidArgument(format!(
            "{}x{} depth is not an integer downscale of {w}x{h}",
            low_depth.width(),
            low_depth.height()
        )));
    }
    let factor = w / low_depth.width();
    let up = low_depth.upsample_bilinear(factor);
    let xs = patch_origins(w, PATCH_SIZE.min(w), PATCH_COUNT)?;
    let ys = patch_origins(h, PATCH_SIZE.min(h), PATCH_COUNT)?;
    let (pw, ph) = (PATCH_SIZE.min(w), PATCH_SIZE.min(h));

    let mut sum = vec![0.0; w * h];
    let mut wsum = vec![0.0; w * h];
    let mut fits = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            let target = up.crop(x0, y0, pw, ph);
            let crop = crop_image(sr_image, x0, y0, pw, ph);
            let estimate = match backend.estimate_depth(&crop) {
                Ok(d) if d.width() == pw && d.height() == ph => Some(d),
                Ok(d) => {
                    warn!("depth patch at ({x0}, {y0}) came back {}x{}; using low-res depth", d.width(), d.height());
                    None
                }
                Err(e) => {
                    warn!("depth patch at ({x0}, {y0}) failed: {e}; using low-res depth");
                    None
                }
            };
            let (values, fit) = match estimate {
                Some(d) => {
                    let (s, t) = fit_scale_shift(d.data(), target.data());
                    let v: Vec<f64> = d.data().iter().map(|x| s * x + t).collect();
                    if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                        (v, PatchFit { origin: (x0, y0), scale: s, shift: t, fell_back: false })
                    } else {
                        warn!("depth patch at ({x0}, {y0}) aligned to non-positive values; using low-res depth");
                        (target.data().to_vec(), PatchFit { origin: (x0, y0), scale: 1.0, shift: 0.0, fell_back: true })
                    }
                }
                None => (target.data().to_vec(), PatchFit { origin: (x0, y0), scale: 1.0, shift: 0.0, fell_back: true }),
            };
            for py in 0..ph {
                for px in 0..pw {
                    let wt = boundary_weight(px, py, pw, ph);
                    let idx = (y0 + py) * w + x0 + px;
                    sum[idx] += wt * values[py * pw + px];
                    wsum[idx] += wt;
                }
            }
            fits.push(fit);
        }
    }
    let data = sum.iter().zip(&wsum).map(|(s, w)| s / w).collect();
    Ok(PatchedDepth {
        depth: DepthMap::new(w, h, data)?,
        fits,
    })
}

fn crop_image(img: &ImageBuffer, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| img.get(x0 + x, y0 + y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirteen_origins_at_stride_128() {
        let o = patch_origins(2048, 512, 13).unwrap();
        assert_eq!(o, (0..13).map(|i| i * 128).collect::<Vec<_>>());
        assert_eq!(*o.last().unwrap(), 1536);
    }

    #[test]
    fn origins_reject_non_integer_stride() {
        assert!(patch_origins(2001, 512, 13).is_err());
        assert_eq!(patch_origins(2000, 512, 13).unwrap()[1], 124);
        assert!(patch_origins(256, 512, 2).is_err());
    }

    #[test]
    fn fit_recovers_affine() {
        let src: Vec<f64> = (0..100).map(|i| 1.0 + i as f64 * 0.1).collect();
        let dst: Vec<f64> = src.iter().map(|s| s / 3.0 + 0.2).collect();
        let (s, t) = fit_scale_shift(&src, &dst);
        assert!((s - 1.0 / 3.0).abs() < 1e-12 && (t - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_source_uses_scale_only() {
        let (s, t) = fit_scale_shift(&[4.0; 10], &[2.0; 10]);
        assert_eq!((s, t), (0.5, 0.0));
    }
}
