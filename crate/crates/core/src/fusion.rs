//! Boundary-distance weighting and equirectangular compositing.
//!
//! Overlapping contributions are merged as `Σ wᵢcᵢ / Σ wᵢ`, where each
//! weight is the source pixel's distance to its nearest image border plus
//! one. The `+1` floor keeps border-only pixels from having zero weight.

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::dir_to_equirect;
use crate::image::{ImageBuffer, Mask};
use crate::raster::Accumulator;
use crate::warp::{build_mesh, ViewRecord};

/// Default equirectangular width; height is always half of it.
pub const DEFAULT_PANO_WIDTH: usize = 4096;

/// Rows this close to either pole inherit the nearest covered row's color.
pub const POLE_FILL_ROWS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `min(x, y, width-1-x, height-1-y) + 1`.
pub fn boundary_weight(x: usize, y: usize, width: usize, height: usize) -> f64 {
    let d = x
        .min(y)
        .min(width.saturating_sub(1 + x))
        .min(height.saturating_sub(1 + y));
    d as f64 + 1.0
}

/// Weighted average of colors. Requires equal, nonzero lengths, nonnegative
/// weights and a positive weight sum.
pub fn fuse_pixels(colors: &[[f64; 3]], weights: &[f64]) -> Result<[f64; 3], FusionError> {
    if colors.is_empty() || colors.len() != weights.len() {
        return Err(FusionError::InvalidArgument(format!(
            "{} colors with {} weights",
            colors.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(FusionError::InvalidArgument("negative weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(FusionError::InvalidArgument("weights sum to zero".into()));
    }
    let mut out = [0.0; 3];
    for (c, w) in colors.iter().zip(weights) {
        for ch in 0..3 {
            out[ch] += w * c[ch];
        }
    }
    Ok(out.map(|v| v / total))
}

/// Equirectangular accumulation buffers: weighted sums, weight sums and the
/// number of views covering each pixel.
pub struct PanoramaCanvas<const C: usize> {
    acc: Accumulator<C>,
}

impl<const C: usize> PanoramaCanvas<C> {
    pub fn new(width: usize) -> Result<Self, FusionError> {
        if width < 2 || width % 2 != 0 {
            return Err(FusionError::InvalidArgument(format!(
                "panorama width must be even, got {width}"
            )));
        }
        Ok(Self {
            acc: Accumulator::new(width, width / 2),
        })
    }

    pub fn width(&self) -> usize {
        self.acc.width()
    }
    pub fn height(&self) -> usize {
        self.acc.height()
    }

    /// Adds one grid of world-frame unit directions with per-vertex values
    /// and weights. Faces crossing the longitude seam are split into a copy
    /// on each side of the raster.
    pub fn add_grid(
        &mut self,
        grid_width: usize,
        grid_height: usize,
        dirs: &[Vector3<f64>],
        value: impl Fn(usize) -> [f64; C],
        weight: impl Fn(usize) -> f64,
    ) {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let uv: Vec<[f64; 2]> = dirs
            .par_iter()
            .map(|d| {
                let (u, v) = dir_to_equirect(d, w, h);
                [u, v]
            })
            .collect();
        self.acc.begin_pass();
        for y in 0..grid_height.saturating_sub(1) {
            for x in 0..grid_width.saturating_sub(1) {
                let a = y * grid_width + x;
                let quad = [a, a + 1, a + grid_width, a + grid_width + 1];
                for tri in [[quad[0], quad[1], quad[2]], [quad[1], quad[3], quad[2]]] {
                    let pts = tri.map(|i| uv[i]);
                    let attr = tri.map(&value);
                    let wts = tri.map(&weight);
                    for copy in seam_copies(pts, w) {
                        self.acc.splat_triangle(&copy, &attr, &wts);
                    }
                }
            }
        }
    }

    pub fn weight_sum(&self) -> &[f64] {
        self.acc.weight_sum()
    }

    pub fn coverage(&self) -> &[u32] {
        self.acc.coverage()
    }

    pub fn resolve(&self, idx: usize) -> Option<[f64; C]> {
        self.acc.resolve(idx)
    }

    /// `true` where no view contributed.
    pub fn holes(&self) -> Mask {
        let data = self.acc.weight_sum().iter().map(|&w| !(w > 0.0)).collect();
        Mask::from_raw(self.width(), self.height(), data).expect("canvas dimensions")
    }
}

/// Returns the screen-space copies of a face in equirectangular space. A
/// face whose `u` span exceeds half the width straddles the seam; it is
/// unwrapped to the right of the seam and duplicated one width to the left.
pub(crate) fn seam_copies(mut pts: [[f64; 2]; 3], width: f64) -> Vec<[[f64; 2]; 3]> {
    let min_u = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_u = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    if max_u - min_u <= width / 2.0 {
        return vec![pts];
    }
    for p in &mut pts {
        if p[0] < width / 2.0 {
            p[0] += width;
        }
    }
    let mut shifted = pts;
    for p in &mut shifted {
        p[0] -= width;
    }
    vec![pts, shifted]
}

/// A composited panorama and the pixels no view reached.
#[derive(Debug, Clone)]
pub struct ComposedPanorama {
    pub image: ImageBuffer,
    /// `true` where no view contributed (before pole filling).
    pub holes: Mask,
    pub coverage: Vec<u32>,
}

/// Projects every view onto the sphere and merges them into one
/// `pano_width`×`pano_width/2` equirectangular image.
pub fn compose_panorama(views: &[ViewRecord], pano_width: usize) -> Result<ComposedPanorama, FusionError> {
    if views.is_empty() {
        return Err(FusionError::InvalidArgument("no views to compose".into()));
    }
    let mut canvas = PanoramaCanvas::<3>::new(pano_width)?;
    for view in views {
        let mesh = build_mesh(view);
        let (gw, gh) = mesh.grid_size();
        let colors = mesh.colors();
        let weights = mesh.weights();
        canvas.add_grid(
            gw,
            gh,
            mesh.vertices(),
            |i| colors[i].map(|c| c as f64),
            |i| weights[i] as f64,
        );
    }
    let (w, h) = (canvas.width(), canvas.height());
    let mut image = ImageBuffer::new(w, h);
    for idx in 0..w * h {
        if let Some(c) = canvas.resolve(idx) {
            image.set(idx % w, idx / w, c.map(|v| v as f32));
        }
    }
    let holes = canvas.holes();
    fill_poles(&mut image, &holes);
    Ok(ComposedPanorama {
        image,
        holes,
        coverage: canvas.coverage().to_vec(),
    })
}

fn fill_poles(image: &mut ImageBuffer, holes: &Mask) {
    let (w, h) = (image.width(), image.height());
    let rows = POLE_FILL_ROWS.min(h / 2);
    for x in 0..w {
        let first = (0..h).find(|&y| !holes.get(x, y));
        let last = (0..h).rev().find(|&y| !holes.get(x, y));
        if let (Some(first), Some(last)) = (first, last) {
            for y in 0..rows {
                if holes.get(x, y) {
                    let c = image.get(x, first);
                    image.set(x, y, c);
                }
                let yb = h - 1 - y;
                if holes.get(x, yb) {
                    let c = image.get(x, last);
                    image.set(x, yb, c);
                }
            }
        }
    }
}
