use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::Vector3;

use super::{DepthAlignment, DepthError, DepthMap};
use crate::fusion::{boundary_weight, PanoramaCanvas};
use crate::geometry::{equirect_dir, pixel_ray};
use crate::image::{ImageBuffer, Mask};
use crate::warp::ViewRecord;

/// Equirectangular depth plus the pixels no view covered. Hole pixels hold
/// a placeholder value and are skipped when building point clouds.
#[derive(Debug, Clone)]
pub struct PanoramaDepth {
    pub depth: DepthMap,
    pub holes: Mask,
}

impl PanoramaDepth {
    pub fn fully_covered(depth: DepthMap) -> Self {
        let holes = Mask::new(depth.width(), depth.height(), false);
        Self { depth, holes }
    }
}

/// Merges aligned per-view depths into the equirectangular plane with the
/// same boundary-weighted compositing used for color.
pub fn fuse_depth_panorama(
    views: &[ViewRecord],
    alignment: &DepthAlignment,
    pano_width: usize,
) -> Result<PanoramaDepth, DepthError> {
    if alignment.scales.len() != views.len() || alignment.shifts.len() != views.len() {
        return Err(DepthError::InvalidArgument(format!(
            "alignment covers {} views, got {}",
            alignment.scales.len(),
            views.len()
        )));
    }
    let mut canvas = PanoramaCanvas::<1>::new(pano_width)
        .map_err(|e| DepthError::InvalidArgument(e.to_string()))?;
    for (i, view) in views.iter().enumerate() {
        let depth = view
            .depth
            .as_ref()
            .ok_or_else(|| DepthError::InvalidArgument(format!("view {i} has no depth map")))?;
        let (w, h) = (depth.width(), depth.height());
        let k = view.intrinsics.resized(w, h);
        let mut dirs = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                dirs.push(view.rotation.apply(&pixel_ray(x as f64 + 0.5, y as f64 + 0.5, &k)));
            }
        }
        let (s, t) = (alignment.scales[i], alignment.shifts[i]);
        canvas.add_grid(
            w,
            h,
            &dirs,
            |idx| [s * depth.data()[idx] + t],
            |idx| boundary_weight(idx % w, idx / w, w, h),
        );
    }
    let (pw, ph) = (canvas.width(), canvas.height());
    let holes = canvas.holes();
    let mut values: Vec<f64> = (0..pw * ph).map(|i| canvas.resolve(i).map_or(0.0, |v| v[0])).collect();
    let covered: Vec<f64> = values.iter().zip(holes.data()).filter(|(_, h)| !**h).map(|(v, _)| *v).collect();
    let placeholder = if covered.is_empty() {
        1.0
    } else {
        covered.iter().sum::<f64>() / covered.len() as f64
    };
    for (v, h) in values.iter_mut().zip(holes.data()) {
        if *h {
            *v = placeholder;
        }
    }
    Ok(PanoramaDepth {
        depth: DepthMap::new(pw, ph, values)?,
        holes,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Unprojects every `stride`-th covered panorama pixel along its ray.
pub fn depth_to_pointcloud(
    pano_rgb: &ImageBuffer,
    pano_depth: &PanoramaDepth,
    stride: usize,
) -> Result<PointCloud, DepthError> {
    let d = &pano_depth.depth;
    if pano_rgb.width() != d.width() || pano_rgb.height() != d.height() {
        return Err(DepthError::InvalidArgument(format!(
            "color {}x{} and depth {}x{} differ",
            pano_rgb.width(),
            pano_rgb.height(),
            d.width(),
            d.height()
        )));
    }
    if stride == 0 {
        return Err(DepthError::InvalidArgument("stride must be positive".into()));
    }
    let (w, h) = (d.width() as f64, d.height() as f64);
    let mut cloud = PointCloud::default();
    for y in (0..d.height()).step_by(stride) {
        for x in (0..d.width()).step_by(stride) {
            if pano_depth.holes.get(x, y) {
                continue;
            }
            let dir = equirect_dir(x as f64 + 0.5, y as f64 + 0.5, w, h);
            cloud.positions.push(dir * d.get(x, y));
            cloud.colors.push(pano_rgb.get(x, y).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    Ok(cloud)
}

/// Binary little-endian PLY: float32 `x y z`, uint8 `red green blue`.
pub fn write_ply(cloud: &PointCloud, mut out: impl Write) -> std::io::Result<()> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    )?;
    let mut buf = Vec::with_capacity(cloud.len() * 15);
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend_from_slice(c);
    }
    out.write_all(&buf)
}

/// Reads back files produced by [`write_ply`].
pub fn read_ply(input: impl Read) -> Result<PointCloud, DepthError> {
    let bad = |msg: &str| DepthError::Format {
        format: "ply",
        msg: msg.to_string(),
    };
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut count = None;
    let mut props = Vec::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header"));
        }
        let l = line.trim_end();
        if first {
            if l != "ply" {
                return Err(bad("missing ply magic"));
            }
            first = false;
            continue;
        }
        if l == "end_header" {
            break;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", ..] => return Err(bad("only binary_little_endian 1.0 is supported")),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let expected = [
        ("float", "x"),
        ("float", "y"),
        ("float", "z"),
        ("uchar", "red"),
        ("uchar", "green"),
        ("uchar", "blue"),
    ];
    if props.len() != expected.len() || props.iter().zip(expected).any(|(a, b)| a.0 != b.0 || a.1 != b.1) {
        return Err(bad("unexpected vertex properties"));
    }
    let n = count.ok_or_else(|| bad("no vertex element"))?;
    let mut body = vec![0u8; n * 15];
    reader.read_exact(&mut body).map_err(|_| bad("truncated vertex data"))?;
    let mut cloud = PointCloud::default();
    for rec in body.chunks_exact(15) {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
        cloud.positions.push(Vector3::new(f(0), f(4), f(8)));
        cloud.colors.push([rec[12], rec[13], rec[14]]);
    }
    Ok(cloud)
}
