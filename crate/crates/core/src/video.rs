//! Frame rendering from a finished panorama: rotation-only frames sample the
//! panorama directly; frames with a camera translation splat the per-view
//! depth points and inpaint what stays uncovered.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{push_pull_fill, InpaintRequest, Inpainter};
use crate::geometry::{dir_to_equirect, intrinsics_from_fov, pixel_ray, CameraIntrinsics, GeometryError};
use crate::image::{ImageBuffer, ImageError, Mask};
use crate::warp::ViewRecord;

/// Points closer than this to the frame's image plane are dropped.
const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("invalid camera pose: {0}")]
    Pose(String),
    #[error("view {0} has no depth map")]
    MissingDepth(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("track file: {0}")]
    Track(String),
}

/// One camera of a track. The rotation is yaw about the up axis followed by
/// pitch about the camera's x axis (positive pitch looks up). `translation`
/// is the camera center in scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub translation: [f64; 3],
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn rotation(&self) -> Rotation3<f64> {
        // Normalizing first keeps yaw 360 bit-identical to yaw 0.
        let yaw = self.yaw_deg.rem_euclid(360.0).to_radians();
        let pitch = self.pitch_deg.rem_euclid(360.0).to_radians();
        Rotation3::from_axis_angle(&Vector3::y_axis(), yaw) * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch)
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, VideoError> {
        Ok(intrinsics_from_fov(self.fov_deg, self.width, self.height)?)
    }

    pub fn has_translation(&self) -> bool {
        self.translation.iter().any(|&t| t != 0.0)
    }

    fn validate(&self) -> Result<(), VideoError> {
        if !self.yaw_deg.is_finite() || !self.pitch_deg.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(VideoError::Pose("non-finite pose values".into()));
        }
        self.intrinsics().map(|_| ())
    }
}

/// An ordered, non-empty list of camera poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrack {
    pub frames: Vec<CameraPose>,
}

impl CameraTrack {
    pub fn new(frames: Vec<CameraPose>) -> Result<Self, VideoError> {
        if frames.is_empty() {
            return Err(VideoError::Track("a track needs at least one frame".into()));
        }
        for f in &frames {
            f.validate()?;
        }
        Ok(Self { frames })
    }

    pub fn from_json(text: &str) -> Result<Self, VideoError> {
        let t: CameraTrack = serde_json::from_str(text).map_err(|e| VideoError::Track(e.to_string()))?;
        Self::new(t.frames)
    }

    /// A full turn of `count` evenly spaced yaw steps.
    pub fn orbit(count: usize, fov_deg: f64, width: usize, height: usize) -> Result<Self, VideoError> {
        Self::new(
            (0..count)
                .map(|i| CameraPose {
                    yaw_deg: 360.0 * i as f64 / count as f64,
                    pitch_deg: 0.0,
                    translation: [0.0; 3],
                    fov_deg,
                    width,
                    height,
                })
                .collect(),
        )
    }
}

/// Bilinear panorama lookup with horizontal wrap-around.
pub fn sample_panorama(pano: &ImageBuffer, u: f64, v: f64) -> [f32; 3] {
    let (w, h) = (pano.width(), pano.height());
    let fx = u - 0.5;
    let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let x0f = fx.floor();
    let ax = (fx - x0f) as f32;
    let x0 = (x0f as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let y0 = fy.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let ay = (fy - y0 as f64) as f32;
    let (a, b, c, d) = (pano.get(x0, y0), pano.get(x1, y0), pano.get(x0, y1), pano.get(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] * (1.0 - ax) + b[k] * ax;
        let bot = c[k] * (1.0 - ax) + d[k] * ax;
        out[k] = top * (1.0 - ay) + bot * ay;
    }
    out
}

/// Renders a pinhole frame by sampling the panorama along each pixel ray.
/// The translation of `pose` is ignored.
pub fn render_rotation_frame(pano: &ImageBuffer, pose: &CameraPose) -> Result<ImageBuffer, VideoError> {
    let k = pose.intrinsics()?;
    let r = pose.rotation();
    let (pw, ph) = (pano.width() as f64, pano.height() as f64);
    let rows: Vec<Vec<[f32; 3]>> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            (0..k.width)
                .map(|x| {
                    let ray = r * pixel_ray(x as f64 + 0.5, y as f64 + 0.5, &k);
                    let (u, v) = dir_to_equirect(&ray, pw, ph);
                    sample_panorama(pano, u, v)
                })
                .collect()
        })
        .collect();
    Ok(ImageBuffer::from_fn(k.width, k.height, |x, y| rows[y][x]))
}

/// Result of point splatting into one frame.
#[derive(Debug, Clone)]
pub struct SplatResult {
    pub image: ImageBuffer,
    /// `true` where no point landed.
    pub holes: Mask,
    /// Camera-space depth of the winning point, `inf` at holes.
    pub zbuffer: Vec<f64>,
}

/// Projects world-space colored points into the frame, one pixel per point,
/// keeping the nearest point at each pixel. Ties keep the earlier point.
pub fn splat_points(
    points: impl IntoIterator<Item = (Vector3<f64>, [f32; 3])>,
    pose: &CameraPose,
) -> Result<SplatResult, VideoError> {
    let k = pose.intrinsics()?;
    let r = pose.rotation();
    let t = Vector3::from(pose.translation);
    let (w, h) = (k.width, k.height);
    let mut image = ImageBuffer::new(w, h);
    let mut zbuffer = vec![f64::INFINITY; w * h];
    for (p, color) in points {
        let c = r.inverse_transform_vector(&(p - t));
        if c.z <= NEAR_PLANE {
            continue;
        }
        let x = k.fx * c.x / c.z + k.cx;
        let y = k.fy * c.y / c.z + k.cy;
        if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
            continue;
        }
        let idx = y as usize * w + x as usize;
        if c.z < zbuffer[idx] {
            zbuffer[idx] = c.z;
            image.set(x as usize, y as usize, color);
        }
    }
    let holes = Mask::from_raw(w, h, zbuffer.iter().map(|z| z.is_infinite()).collect())?;
    Ok(SplatResult { image, holes, zbuffer })
}

/// Color raster and intrinsics matching a view's depth resolution: the
/// super-resolved copy when the depth map has its size.
fn depth_source(view: &ViewRecord, index: usize) -> Result<(&ImageBuffer, CameraIntrinsics), VideoError> {
    let depth = view.depth.as_ref().ok_or(VideoError::MissingDepth(index))?;
    let (dw, dh) = (depth.width(), depth.height());
    let color = match &view.sr_image {
        Some(sr) if sr.width() == dw && sr.height() == dh => sr,
        _ => &view.image,
    };
    Ok((color, view.intrinsics.resized(dw, dh)))
}

/// World-space points of every depth pixel of every view.
pub fn view_points(views: &[ViewRecord]) -> Result<Vec<(Vector3<f64>, [f32; 3])>, VideoError> {
    let mut out = Vec::new();
    for (i, view) in views.iter().enumerate() {
        let (color, k) = depth_source(view, i)?;
        let depth = view.depth.as_ref().expect("checked by depth_source");
        let (dw, dh) = (depth.width(), depth.height());
        let pts: Vec<(Vector3<f64>, [f32; 3])> = (0..dw * dh)
            .into_par_iter()
            .map(|idx| {
                let (x, y) = (idx % dw, idx / dw);
                let ray = pixel_ray(x as f64 + 0.5, y as f64 + 0.5, &k);
                let p = view.rotation.apply(&(ray * depth.data()[idx]));
                let c = color.sample_bilinear(
                    (x as f64 + 0.5) * color.width() as f64 / dw as f64,
                    (y as f64 + 0.5) * color.height() as f64 / dh as f64,
                );
                (p, c)
            })
            .collect();
        out.extend(pts);
    }
    Ok(out)
}

/// A rendered translation frame.
#[derive(Debug, Clone)]
pub struct TranslationFrame {
    pub image: ImageBuffer,
    /// Uncovered pixels before inpainting.
    pub holes: Mask,
    /// The inpainting call failed and holes were filled by diffusion.
    pub fell_back: bool,
}

impl TranslationFrame {
    pub fn hole_fraction(&self) -> f64 {
        self.holes.fraction()
    }
}

/// Splats all view depth points into the frame and fills the uncovered
/// pixels with one inpainting call prompted with the scene sentence.
pub fn render_translation_frame(
    views: &[ViewRecord],
    pose: &CameraPose,
    scene_prompt: &str,
    inpainter: &dyn Inpainter,
    seed: u64,
) -> Result<TranslationFrame, VideoError> {
    let splat = splat_points(view_points(views)?, pose)?;
    fill_frame(splat, scene_prompt, inpainter, seed)
}

fn fill_frame(
    splat: SplatResult,
    scene_prompt: &str,
    inpainter: &dyn Inpainter,
    seed: u64,
) -> Result<TranslationFrame, VideoError> {
    if splat.holes.count() == 0 {
        return Ok(TranslationFrame {
            image: splat.image,
            holes: splat.holes,
            fell_back: false,
        });
    }
    let req = InpaintRequest {
        image: &splat.image,
        mask: &splat.holes,
        prompt: scene_prompt,
        negative_prompt: "",
        seed,
    };
    let (image, fell_back) = match inpainter.inpaint(&req) {
        Ok(img) => (img, false),
        Err(e) => {
            warn!("frame inpainting failed ({e}); filling holes by diffusion");
            (push_pull_fill(&splat.image, &splat.holes), true)
        }
    };
    Ok(TranslationFrame {
        image,
        holes: splat.holes,
        fell_back,
    })
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub pose: CameraPose,
    pub image: ImageBuffer,
    /// Pre-inpainting hole fraction for translation frames.
    pub hole_fraction: Option<f64>,
}

/// Renders every pose of the track: rotation frames from the panorama,
/// translated frames by splatting the view depths. The view points are
/// computed once and shared across translated frames.
pub fn render_track(
    pano: &ImageBuffer,
    views: &[ViewRecord],
    track: &CameraTrack,
    scene_prompt: &str,
    inpainter: &dyn Inpainter,
    seed: u64,
) -> Result<Vec<Frame>, VideoError> {
    let points = if track.frames.iter().any(CameraPose::has_translation) {
        Some(view_points(views)?)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(track.frames.len());
    for (i, pose) in track.frames.iter().enumerate() {
        let frame = match &points {
            Some(pts) if pose.has_translation() => {
                let splat = splat_points(pts.iter().copied(), pose)?;
                let f = fill_frame(splat, scene_prompt, inpainter, seed.wrapping_add(i as u64))?;
                Frame {
                    pose: pose.clone(),
                    hole_fraction: Some(f.hole_fraction()),
                    image: f.image,
                }
            }
            _ => Frame {
                pose: pose.clone(),
                image: render_rotation_frame(pano, pose)?,
                hole_fraction: None,
            },
        };
        frames.push(frame);
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub pose: CameraPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole_fraction: Option<f64>,
}

/// Writes `frame_000001.png`, ... and `manifest.json` into `dir`.
pub fn write_frames(frames: &[Frame], dir: &Path) -> Result<Vec<PathBuf>, VideoError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| VideoError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut paths = Vec::with_capacity(frames.len());
    let mut manifest = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = format!("frame_{:06}.png", i + 1);
        let path = dir.join(&name);
        f.image.save_png(&path)?;
        manifest.push(ManifestEntry {
            file: name,
            pose: f.pose.clone(),
            hole_fraction: f.hole_fraction,
        });
        paths.push(path);
    }
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text).map_err(io(&mpath))?;
    Ok(paths)
}
