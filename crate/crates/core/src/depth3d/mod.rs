//! Depth maps, multi-view scale/shift alignment, panoramic depth fusion,
//! point-cloud export and patch-wise depth super-resolution.

mod align;
mod patched;
mod pfm;
mod pointcloud;

pub use align::{align_depths, apply_alignment, AlignmentReport, DepthAlignment, OVERLAP_GRID};
pub use patched::{patch_origins, patched_depth_superres, PatchFit, PatchedDepth, PATCH_COUNT, PATCH_SIZE};
pub use pfm::{read_pfm, read_pfm_raw, write_pfm};
pub use pointcloud::{
    depth_to_pointcloud, fuse_depth_panorama, read_ply, write_ply, PanoramaDepth, PointCloud,
};

use log::info;
use thiserror::Error;

use crate::backends::{BackendError, DepthEstimator};
use crate::warp::ViewRecord;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("alignment produced non-positive scale {scale} for view {view}")]
    NonPositiveScale { view: usize, scale: f64 },
    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Per-pixel depth along the camera ray, in scene units. All values are
/// finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, DepthError> {
        if data.len() != width * height {
            return Err(DepthError::InvalidDepth(format!(
                "{} values for a {width}x{height} map",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(DepthError::InvalidDepth(format!("depth {bad} is not positive and finite")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self, DepthError> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, DepthError> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Replaces non-positive or non-finite values by `floor`. Returns the
    /// map and the number of values that were clamped.
    pub fn clamped(width: usize, height: usize, mut data: Vec<f64>, floor: f64) -> Result<(Self, usize), DepthError> {
        let mut n = 0;
        for d in &mut data {
            if !(d.is_finite() && *d > floor) {
                *d = floor;
                n += 1;
            }
        }
        Ok((Self::new(width, height, data)?, n))
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous coordinates (pixel centers at `i + 0.5`).
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - ax) + self.get(x1, y0) * ax;
        let bot = self.get(x0, y1) * (1.0 - ax) + self.get(x1, y1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// Bilinear upsampling by an integer factor. Convex interpolation keeps
    /// every value positive.
    pub fn upsample_bilinear(&self, factor: usize) -> DepthMap {
        let (w, h) = (self.width * factor, self.height * factor);
        let f = factor as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.sample_bilinear((x as f64 + 0.5) / f, (y as f64 + 0.5) / f));
            }
        }
        DepthMap {
            width: w,
            height: h,
            data,
        }
    }

    /// Copies the `size`×`size` block whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> DepthMap {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        DepthMap {
            width: w,
            height: h,
            data,
        }
    }

    /// Applies `s·d + t` to every value.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<DepthMap, DepthError> {
        DepthMap::new(
            self.width,
            self.height,
            self.data.iter().map(|d| scale * d + shift).collect(),
        )
    }
}

/// Estimates each view's depth, aligns the views jointly, and optionally
/// super-resolves the aligned depth patch-wise on the views' 4× copies.
/// Returns the views with their depth maps attached.
pub fn estimate_view_depths(
    views: &[ViewRecord],
    backend: &dyn DepthEstimator,
    super_resolve: bool,
) -> Result<(Vec<ViewRecord>, AlignmentReport), DepthError> {
    let mut with_depth = Vec::with_capacity(views.len());
    for v in views {
        let d = backend.estimate_depth(&v.image)?;
        if d.width() != v.image.width() || d.height() != v.image.height() {
            return Err(DepthError::InvalidArgument(format!(
                "depth backend returned {}x{} for a {}x{} view",
                d.width(),
                d.height(),
                v.image.width(),
                v.image.height()
            )));
        }
        with_depth.push(v.clone().with_depth(d));
    }
    let report = align_depths(&with_depth)?;
    info!(
        "depth alignment over {} samples: rms {:.4} -> {:.4}",
        report.samples, report.initial_rms, report.residual_rms
    );
    let mut aligned = apply_alignment(&with_depth, &report.alignment)?;
    if super_resolve {
        for v in &mut aligned {
            if let (Some(sr), Some(low)) = (&v.sr_image, &v.depth) {
                let patched = patched_depth_superres(sr, low, backend)?;
                v.depth = Some(patched.depth);
            }
        }
    }
    Ok((aligned, report))
}
