use panoweave::backends::{DepthScene, MockDepth, MockInpainter};
use panoweave::depth3d::{
    align_depths, depth_to_pointcloud, estimate_view_depths, fuse_depth_panorama, patch_origins,
    patched_depth_superres, read_ply, write_ply, DepthAlignment, PATCH_COUNT, PATCH_SIZE,
};
use panoweave::geometry::{intrinsics_from_fov, rotation_y, RotationY};
use panoweave::procedural::procedural_image;
use panoweave::video::{render_track, splat_points, view_points, write_frames, CameraPose, CameraTrack, ManifestEntry};
use panoweave::{BackendError, DepthMap, ImageBuffer, ViewRecord};

/// Depth backend that reads its crop origin from the image colors and
/// returns the matching crop of a fixed full-resolution depth map.
struct CropOracle {
    full: DepthMap,
}

fn coordinate_image(w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| [x as f32 / 4096.0, y as f32 / 4096.0, 0.0])
}

impl panoweave::backends::DepthEstimator for CropOracle {
    fn estimate_depth(&self, image: &ImageBuffer) -> Result<DepthMap, BackendError> {
        let [x, y, _] = image.get(0, 0);
        let (x0, y0) = ((x * 4096.0) as usize, (y * 4096.0) as usize);
        Ok(self.full.crop(x0, y0, image.width(), image.height()))
    }
}

#[test]
fn patch_grid_is_thirteen_by_thirteen_at_stride_128() {
    let origins = patch_origins(2048, PATCH_SIZE, PATCH_COUNT).unwrap();
    let want: Vec<usize> = (0..13).map(|i| i * 128).collect();
    assert_eq!(origins, want);
    assert_eq!(origins.last().unwrap() + PATCH_SIZE, 2048);
}

#[test]
fn patched_superres_is_idempotent_on_consistent_backend() {
    let low = DepthMap::from_fn(512, 512, |x, y| {
        1.0 + 0.5 * ((x as f64) / 40.0).sin().powi(2) + 0.002 * y as f64
    })
    .unwrap();
    let up = low.upsample_bilinear(4);
    let oracle = CropOracle { full: up.clone() };
    let out = patched_depth_superres(&coordinate_image(2048, 2048), &low, &oracle).unwrap();
    assert_eq!(out.fits.len(), 169);
    let origins: Vec<_> = out.fits.iter().map(|f| f.origin).collect();
    assert_eq!(origins[0], (0, 0));
    assert_eq!(origins[1], (128, 0));
    assert_eq!(origins[168], (1536, 1536));
    let worst = out
        .depth
        .data()
        .iter()
        .zip(up.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "max deviation {worst}");
    assert!(out.fits.iter().all(|f| !f.fell_back && (f.scale - 1.0).abs() < 1e-9 && f.shift.abs() < 1e-9));
}

fn mock_views(size: usize, with_sr: bool) -> Vec<ViewRecord> {
    let k = intrinsics_from_fov(100.0, size, size).unwrap();
    [0.0, 41.0, -41.0, 82.0, -82.0, 123.0, 200.5]
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let img = procedural_image(size, size, i as u64);
            let v = ViewRecord::new(img.clone(), k, rotation_y(a));
            if with_sr {
                v.with_sr(img.bicubic_upsample(4))
            } else {
                v
            }
        })
        .collect()
}

#[test]
fn constant_depth_gives_points_on_a_sphere() {
    let views = mock_views(64, true);
    let (aligned, report) = estimate_view_depths(&views, &MockDepth::new(DepthScene::Constant(2.0)), true).unwrap();
    assert!(report.regularized);
    assert!(aligned.iter().all(|v| v.depth.as_ref().unwrap().width() == 256));
    let pano = panoweave::compose_panorama(&aligned, 512).unwrap().image;
    let depth = fuse_depth_panorama(&aligned, &DepthAlignment::identity(aligned.len()), 512).unwrap();
    let cloud = depth_to_pointcloud(&pano, &depth, 2).unwrap();
    assert!(cloud.len() > 10_000);
    for p in &cloud.positions {
        assert!((p.norm() - 2.0).abs() < 1e-6, "radius {}", p.norm());
    }
    let mut bytes = Vec::new();
    write_ply(&cloud, &mut bytes).unwrap();
    let back = read_ply(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), cloud.len());
    assert_eq!(back.colors, cloud.colors);
}

#[test]
fn alignment_undoes_per_view_affine_distortion() {
    // Sphere scene seen by every view, each view's depth distorted by a
    // different positive affine map. The reference view is the first.
    let k = intrinsics_from_fov(100.0, 64, 64).unwrap();
    let maps = [(1.0, 0.0), (2.0, 0.5), (0.5, 1.0)];
    let views: Vec<_> = [0.0, 60.0, -60.0]
        .iter()
        .zip(maps)
        .map(|(&a, (s, t))| {
            ViewRecord::new(ImageBuffer::new(64, 64), k, rotation_y(a))
                .with_depth(DepthMap::constant(64, 64, 3.0).unwrap().affine(s, t).unwrap())
        })
        .collect();
    // Constant depth cannot pin down the shift, so only consistency of the
    // aligned values is checked.
    let rep = align_depths(&views).unwrap();
    for (i, (s, t)) in maps.iter().enumerate() {
        let v = rep.alignment.scales[i] * (s * 3.0 + t) + rep.alignment.shifts[i];
        assert!((v - 3.0).abs() < 1e-6, "view {i} -> {v}");
    }
}

fn plane_view(size: usize, sr: bool) -> ViewRecord {
    let k = intrinsics_from_fov(100.0, 512, 512).unwrap();
    let img = procedural_image(512, 512, 3);
    let mut v = ViewRecord::new(img.clone(), k, RotationY::identity());
    if sr {
        v = v.with_sr(procedural_image(2048, 2048, 3));
    }
    let scene = DepthScene::Plane {
        distance: 2.0,
        fov_deg: 100.0,
    };
    let src = if sr { v.sr_image.clone().unwrap() } else { img };
    let d = panoweave::backends::DepthEstimator::estimate_depth(&MockDepth::new(scene), &src).unwrap();
    assert_eq!(d.width(), size);
    v.with_depth(d)
}

#[test]
fn plane_points_lie_on_the_plane() {
    let v = plane_view(512, false);
    let pts = view_points(std::slice::from_ref(&v)).unwrap();
    assert_eq!(pts.len(), 512 * 512);
    for (p, _) in pts.iter().step_by(997) {
        assert!((p.z - 2.0).abs() < 1e-9);
    }
}

#[test]
fn denser_depth_leaves_fewer_holes_after_translation() {
    let pose = CameraPose {
        yaw_deg: 0.0,
        pitch_deg: 0.0,
        translation: [0.0, 0.0, 0.5],
        fov_deg: 90.0,
        width: 512,
        height: 512,
    };
    let low = splat_points(view_points(&[plane_view(512, false)]).unwrap(), &pose).unwrap();
    let high = splat_points(view_points(&[plane_view(2048, true)]).unwrap(), &pose).unwrap();
    let (fl, fh) = (low.holes.fraction(), high.holes.fraction());
    assert!(fl > 0.3, "low-res hole fraction {fl}");
    assert!(fh * 5.0 < fl, "high {fh} vs low {fl}");
}

#[test]
fn track_frames_are_written_with_manifest() {
    let mut views = mock_views(32, false);
    for v in &mut views {
        v.depth = Some(DepthMap::constant(32, 32, 2.0).unwrap());
    }
    let pano = panoweave::compose_panorama(&views, 256).unwrap().image;
    let mut track = CameraTrack::orbit(3, 60.0, 24, 24).unwrap();
    track.frames.push(CameraPose {
        translation: [0.1, 0.0, 0.2],
        ..track.frames[0].clone()
    });
    let frames = render_track(&pano, &views, &track, "a room", &MockInpainter::default(), 9).unwrap();
    assert_eq!(frames.len(), 4);
    assert!(frames[..3].iter().all(|f| f.hole_fraction.is_none()));
    assert!(frames[3].hole_fraction.is_some());
    let dir = tempfile::tempdir().unwrap();
    let paths = write_frames(&frames, dir.path()).unwrap();
    assert_eq!(paths[3].file_name().unwrap(), "frame_000004.png");
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.len(), 4);
    assert_eq!(manifest[1].pose.yaw_deg, 120.0);
    let again = render_track(&pano, &views, &track, "a room", &MockInpainter::default(), 9).unwrap();
    assert!(frames.iter().zip(&again).all(|(a, b)| a.image == b.image));
}

#[test]
fn track_json_is_validated() {
    assert!(CameraTrack::from_json(r#"{"frames": []}"#).is_err());
    assert!(CameraTrack::from_json(r#"{"frames": [{"fov_deg": 200, "width": 8, "height": 8}]}"#).is_err());
    let t = CameraTrack::from_json(r#"{"frames": [{"fov_deg": 90, "width": 8, "height": 8}]}"#).unwrap();
    assert!(!t.frames[0].has_translation());
}
