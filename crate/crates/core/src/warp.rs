//! Mesh construction from image grids and rotation-only view rendering.
//!
//! Every source pixel becomes a vertex on the unit sphere; adjacent pixels
//! are joined by two triangles per quad. Rendering a novel view re-expresses
//! the vertices in the target camera frame and rasterizes them. All vertices
//! lie on the sphere, so there is no occlusion to resolve and no depth
//! buffer.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::depth3d::DepthMap;
use crate::fusion::boundary_weight;
use crate::geometry::{pixel_ray, project_ray, CameraIntrinsics, RotationY};
use crate::image::{ImageBuffer, Mask};
use crate::raster::Accumulator;

/// Faces with any vertex at or below this forward component (in the target
/// frame) are culled rather than clipped.
pub const FACE_CULL_EPS: f64 = 1e-4;

/// Working resolution of perspective views.
pub const VIEW_RESOLUTION: usize = 512;
/// Resolution of super-resolved view copies.
pub const SR_RESOLUTION: usize = 2048;

/// A finished perspective view.
#[derive(Debug, Clone)]
pub struct ViewRecord {
    pub image: ImageBuffer,
    /// 4× copy of `image`, preferred as the warping and compositing source.
    pub sr_image: Option<ImageBuffer>,
    pub intrinsics: CameraIntrinsics,
    pub rotation: RotationY,
    pub depth: Option<DepthMap>,
}

impl ViewRecord {
    pub fn new(image: ImageBuffer, intrinsics: CameraIntrinsics, rotation: RotationY) -> Self {
        Self {
            image,
            sr_image: None,
            intrinsics,
            rotation,
            depth: None,
        }
    }

    pub fn with_sr(mut self, sr: ImageBuffer) -> Self {
        self.sr_image = Some(sr);
        self
    }

    pub fn with_depth(mut self, depth: DepthMap) -> Self {
        self.depth = Some(depth);
        self
    }

    /// True when the super-resolved copy, if any, is exactly 4× `image`.
    pub fn sr_is_consistent(&self) -> bool {
        match &self.sr_image {
            None => true,
            Some(sr) => sr.width() == 4 * self.image.width() && sr.height() == 4 * self.image.height(),
        }
    }

    /// The raster meshes are built from: the super-resolved copy when present.
    pub fn source_image(&self) -> &ImageBuffer {
        self.sr_image.as_ref().unwrap_or(&self.image)
    }

    /// Intrinsics matching [`ViewRecord::source_image`].
    pub fn source_intrinsics(&self) -> CameraIntrinsics {
        let src = self.source_image();
        self.intrinsics.resized(src.width(), src.height())
    }
}

/// Per-pixel accumulated fusion weight of a rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// A grid mesh on the unit sphere, in the reference (world) frame.
#[derive(Debug, Clone)]
pub struct Mesh {
    grid_width: usize,
    grid_height: usize,
    vertices: Vec<Vector3<f64>>,
    colors: Vec<[f32; 3]>,
    weights: Vec<f32>,
}

impl Mesh {
    /// Builds a mesh from per-vertex world directions laid out on a
    /// `grid_width`×`grid_height` grid.
    pub fn from_parts(
        grid_width: usize,
        grid_height: usize,
        vertices: Vec<Vector3<f64>>,
        colors: Vec<[f32; 3]>,
        weights: Vec<f32>,
    ) -> Self {
        let n = grid_width * grid_height;
        assert!(vertices.len() == n && colors.len() == n && weights.len() == n);
        Self {
            grid_width,
            grid_height,
            vertices,
            colors,
            weights,
        }
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid_width, self.grid_height)
    }
    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }
    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn face_count(&self) -> usize {
        2 * self.grid_width.saturating_sub(1) * self.grid_height.saturating_sub(1)
    }

    /// Two triangles per pixel quad, in row-major quad order.
    pub fn faces(&self) -> impl Iterator<Item = [u32; 3]> + '_ {
        let w = self.grid_width;
        (0..self.grid_height.saturating_sub(1)).flat_map(move |y| {
            (0..w.saturating_sub(1)).flat_map(move |x| {
                let a = (y * w + x) as u32;
                let b = a + 1;
                let c = a + w as u32;
                let d = c + 1;
                [[a, b, c], [b, d, c]]
            })
        })
    }
}

/// Projects every pixel center of the view's source raster onto the unit
/// sphere and rotates it into the reference frame.
pub fn build_mesh(view: &ViewRecord) -> Mesh {
    let src = view.source_image();
    let k = view.source_intrinsics();
    let (w, h) = (src.width(), src.height());
    let rot = view.rotation;
    let mut vertices = vec![Vector3::zeros(); w * h];
    vertices
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                *v = rot.apply(&pixel_ray(x as f64 + 0.5, y as f64 + 0.5, &k));
            }
        });
    let colors = src.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut weights = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            weights.push(boundary_weight(x, y, w, h) as f32);
        }
    }
    Mesh::from_parts(w, h, vertices, colors, weights)
}

/// Renders a set of meshes into a target pinhole view.
pub(crate) struct PerspectiveRenderer {
    k: CameraIntrinsics,
    rot: RotationY,
    acc: Accumulator<3>,
}

impl PerspectiveRenderer {
    pub fn new(k: CameraIntrinsics, rot: RotationY) -> Self {
        Self {
            k,
            rot,
            acc: Accumulator::new(k.width, k.height),
        }
    }

    pub fn add_mesh(&mut self, mesh: &Mesh) {
        let k = self.k;
        let rot = self.rot;
        let projected: Vec<Option<[f64; 2]>> = mesh
            .vertices
            .par_iter()
            .map(|v| project_ray(&rot.apply_inverse(v), &k, FACE_CULL_EPS).map(|(x, y)| [x, y]))
            .collect();
        self.acc.begin_pass();
        let (gw, gh) = mesh.grid_size();
        let (tw, th) = (k.width as f64, k.height as f64);
        for y in 0..gh.saturating_sub(1) {
            for x in 0..gw.saturating_sub(1) {
                let a = y * gw + x;
                let quad = [a, a + 1, a + gw, a + gw + 1];
                for tri in [[quad[0], quad[1], quad[2]], [quad[1], quad[3], quad[2]]] {
                    let (Some(p0), Some(p1), Some(p2)) =
                        (projected[tri[0]], projected[tri[1]], projected[tri[2]])
                    else {
                        continue;
                    };
                    // Cheap reject of faces entirely off-screen.
                    if p0[0].max(p1[0]).max(p2[0]) < 0.0
                        || p0[0].min(p1[0]).min(p2[0]) > tw
                        || p0[1].max(p1[1]).max(p2[1]) < 0.0
                        || p0[1].min(p1[1]).min(p2[1]) > th
                    {
                        continue;
                    }
                    let attr = tri.map(|i| mesh.colors[i].map(|c| c as f64));
                    let wts = tri.map(|i| mesh.weights[i] as f64);
                    self.acc.splat_triangle(&[p0, p1, p2], &attr, &wts);
                }
            }
        }
    }

    pub fn finish(self) -> (ImageBuffer, Mask, WeightBuffer) {
        let (w, h) = (self.k.width, self.k.height);
        let mut img = ImageBuffer::new(w, h);
        let mut mask = Mask::new(w, h, true);
        for y in 0..h {
            for x in 0..w {
                if let Some(c) = self.acc.resolve(y * w + x) {
                    img.set(x, y, c.map(|v| v as f32));
                    mask.set(x, y, false);
                }
            }
        }
        let weights = WeightBuffer {
            width: w,
            height: h,
            data: self.acc.weight_sum().to_vec(),
        };
        (img, mask, weights)
    }
}

/// Rasterizes meshes into the target camera. A pixel is valid (mask `false`)
/// iff at least one non-culled face covers its center; overlapping meshes
/// are fused by weighted average of the interpolated boundary weights.
pub fn rasterize(
    meshes: &[Mesh],
    k_target: &CameraIntrinsics,
    r_target: &RotationY,
) -> (ImageBuffer, Mask, WeightBuffer) {
    let mut r = PerspectiveRenderer::new(*k_target, *r_target);
    for m in meshes {
        r.add_mesh(m);
    }
    r.finish()
}

/// Renders the target view from all completed views, using super-resolved
/// sources where available. Meshes are built and consumed one at a time.
pub fn warp_view(
    completed: &[ViewRecord],
    k_target: &CameraIntrinsics,
    r_target: &RotationY,
) -> (ImageBuffer, Mask) {
    let mut r = PerspectiveRenderer::new(*k_target, *r_target);
    for view in completed {
        let mesh = build_mesh(view);
        r.add_mesh(&mesh);
    }
    let (img, mask, _) = r.finish();
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{intrinsics_from_fov, rotation_y};
    use crate::image::psnr;
    use crate::procedural::procedural_image;

    fn view(size: usize, fov: f64, yaw: f64, seed: u64) -> ViewRecord {
        ViewRecord::new(
            procedural_image(size, size, seed),
            intrinsics_from_fov(fov, size, size).unwrap(),
            rotation_y(yaw),
        )
    }

    #[test]
    fn face_counts() {
        let v = view(2, 90.0, 0.0, 1);
        let m = build_mesh(&v);
        assert_eq!(m.vertices().len(), 4);
        assert_eq!(m.face_count(), 2);
        assert_eq!(m.faces().count(), 2);
        let v = view(512, 100.0, 0.0, 1);
        let m = build_mesh(&v);
        assert_eq!(m.face_count(), 522_242);
        assert!(m.vertices().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let n = m.vertices().len() as u32;
        assert!(m.faces().all(|f| f.iter().all(|&i| i < n)));
    }

    #[test]
    fn sr_source_is_preferred() {
        let v = view(8, 90.0, 0.0, 2);
        let sr = ImageBuffer::filled(32, 32, [0.25, 0.5, 0.75]);
        let v = v.with_sr(sr);
        assert!(v.sr_is_consistent());
        let m = build_mesh(&v);
        assert_eq!(m.grid_size(), (32, 32));
        assert_eq!(m.colors()[0], [0.25, 0.5, 0.75]);
        assert_eq!(m.weights()[0], 1.0);
        assert_eq!(m.weights()[15 * 32 + 15], 16.0);
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let v = view(128, 100.0, 30.0, 3);
        let (img, mask, _) = rasterize(&[build_mesh(&v)], &v.intrinsics, &v.rotation);
        assert_eq!(mask.count(), 0);
        assert!(psnr(&img, &v.image) > 40.0);
    }

    #[test]
    fn opposite_view_is_fully_masked() {
        let v = view(64, 100.0, 0.0, 4);
        let (_, mask, _) = rasterize(&[build_mesh(&v)], &v.intrinsics, &rotation_y(180.0));
        assert_eq!(mask.count(), 64 * 64);
    }

    #[test]
    fn empty_mesh_list_gives_full_mask() {
        let k = intrinsics_from_fov(90.0, 16, 16).unwrap();
        let (_, mask, w) = rasterize(&[], &k, &rotation_y(0.0));
        assert_eq!(mask.count(), 256);
        assert!(w.data.iter().all(|&x| x == 0.0));
    }
}
