use nalgebra::Vector3;
use proptest::prelude::*;

use panoweave::backends::{push_pull_fill, InpaintRequest, Inpainter, MockInpainter};
use panoweave::depth3d::{read_pfm, read_ply, write_pfm, write_ply};
use panoweave::fusion::{boundary_weight, fuse_pixels};
use panoweave::geometry::{
    angular_step, equirect_to_sphere, intrinsics_from_fov, pixel_to_sphere, rotation_y, sphere_to_equirect,
    sphere_to_pixel,
};
use panoweave::orchestrator::parse_layout;
use panoweave::orchestrator::prompts::normalize_yes_no;
use panoweave::procedural::procedural_image;
use panoweave::warp::warp_view;
use panoweave::{DepthMap, ImageBuffer, Mask, PointCloud, ViewRecord};

fn mask_from_bits(w: usize, h: usize, bits: &[bool]) -> Mask {
    Mask::from_raw(w, h, bits.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mock_inpainter_keeps_known_pixels(
        bits in prop::collection::vec(any::<bool>(), 12 * 10),
        seed in any::<u64>(),
    ) {
        let img = procedural_image(12, 10, seed % 17);
        let mask = mask_from_bits(12, 10, &bits);
        let out = MockInpainter::default()
            .inpaint(&InpaintRequest { image: &img, mask: &mask, prompt: "p", negative_prompt: "", seed })
            .unwrap();
        for y in 0..10 {
            for x in 0..12 {
                if !mask.get(x, y) {
                    prop_assert_eq!(out.get(x, y), img.get(x, y));
                }
            }
        }
    }

    #[test]
    fn push_pull_stays_within_known_range(bits in prop::collection::vec(any::<bool>(), 9 * 7), seed in 0u64..50) {
        let img = procedural_image(9, 7, seed);
        let mask = mask_from_bits(9, 7, &bits);
        let out = push_pull_fill(&img, &mask);
        let known: Vec<[f32; 3]> = (0..63).filter(|i| !bits[*i]).map(|i| img.get(i % 9, i / 9)).collect();
        prop_assume!(!known.is_empty());
        for ch in 0..3 {
            let lo = known.iter().map(|c| c[ch]).fold(f32::INFINITY, f32::min);
            let hi = known.iter().map(|c| c[ch]).fold(f32::NEG_INFINITY, f32::max);
            for i in 0..63 {
                let v = out.get(i % 9, i / 9)[ch];
                prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
            }
        }
    }

    #[test]
    fn fused_pixel_is_convex_combination(
        samples in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 1.0f64..300.0), 1..6),
        scale in 1e-3f64..1e3,
    ) {
        let colors: Vec<[f64; 3]> = samples.iter().map(|s| [s.0, s.1, s.2]).collect();
        let weights: Vec<f64> = samples.iter().map(|s| s.3).collect();
        let a = fuse_pixels(&colors, &weights).unwrap();
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let b = fuse_pixels(&colors, &scaled).unwrap();
        for ch in 0..3 {
            let lo = colors.iter().map(|c| c[ch]).fold(f64::INFINITY, f64::min);
            let hi = colors.iter().map(|c| c[ch]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a[ch] >= lo - 1e-12 && a[ch] <= hi + 1e-12);
            prop_assert!((a[ch] - b[ch]).abs() <= 1e-12);
        }
    }

    #[test]
    fn boundary_weight_is_symmetric_and_positive(w in 1usize..200, h in 1usize..200, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let x = ((w - 1) as f64 * fx) as usize;
        let y = ((h - 1) as f64 * fy) as usize;
        let b = boundary_weight(x, y, w, h);
        prop_assert!(b >= 1.0);
        prop_assert_eq!(b, boundary_weight(w - 1 - x, h - 1 - y, w, h));
        let oracle = x.min(y).min(w - 1 - x).min(h - 1 - y) as f64 + 1.0;
        prop_assert_eq!(b, oracle);
    }

    #[test]
    fn pixel_sphere_round_trip(x in 0.0f64..256.0, y in 0.0f64..256.0, fov in 30.0f64..150.0) {
        let k = intrinsics_from_fov(fov, 256, 256).unwrap();
        let d = pixel_to_sphere(x, y, &k);
        let (u, v) = sphere_to_pixel(&d, &k).unwrap();
        prop_assert!((u - x).abs() < 1e-9 && (v - y).abs() < 1e-9);
    }

    #[test]
    fn equirect_round_trip_with_rotation(u in 0.0f64..1024.0, v in 4.0f64..508.0, yaw in -360.0f64..360.0) {
        let d = equirect_to_sphere(u, v, 1024, 512);
        let r = rotation_y(yaw);
        let back = r.inverse().rotate(&r.rotate(&d));
        let (u2, v2) = sphere_to_equirect(&back, 1024, 512).unwrap();
        let du = (u2 - u).abs();
        prop_assert!(du.min(1024.0 - du) < 1e-7 && (v2 - v).abs() < 1e-7);
    }

    #[test]
    fn angular_step_is_symmetric(off in 0.0f64..500.0, fx in 50.0f64..1000.0) {
        // Column x and its mirror column about the principal point.
        let cx = 256.0;
        let a = angular_step(cx + off, cx, fx);
        let b = angular_step(cx - off - 1.0, cx, fx);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn yes_no_ignores_case_and_punctuation(yes in any::<bool>(), upper in any::<bool>(), punct in "[ .!'\"]{0,3}") {
        let word = if yes { "yes" } else { "no" };
        let word = if upper { word.to_uppercase() } else { word.to_string() };
        prop_assert_eq!(normalize_yes_no(&format!("{punct}{word}{punct}")), Some(yes));
    }

    #[test]
    fn layout_parsing_recovers_content(contents in prop::collection::vec("[a-z][a-z ]{0,20}[a-z]", 6)) {
        let answer: String = contents
            .iter()
            .enumerate()
            .map(|(i, c)| format!("View {}: We see {c}.\n", i + 1))
            .collect();
        let parsed = parse_layout(&answer).unwrap();
        prop_assert_eq!(parsed, contents.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn layout_with_wrong_line_count_is_rejected(n in 0usize..12) {
        prop_assume!(n != 6);
        let answer: String = (1..=n).map(|i| format!("View {i}: We see a thing\n")).collect();
        prop_assert!(parse_layout(&answer).is_err());
    }

    #[test]
    fn pfm_round_trip(data in prop::collection::vec(0.001f32..1000.0, 12)) {
        let d = DepthMap::new(4, 3, data.iter().map(|&v| v as f64).collect()).unwrap();
        prop_assert_eq!(read_pfm(&write_pfm(&d)).unwrap(), d);
    }

    #[test]
    fn ply_round_trip(points in prop::collection::vec((-10.0f32..10.0, -10.0f32..10.0, -10.0f32..10.0, any::<[u8; 3]>()), 0..40)) {
        let cloud = PointCloud {
            positions: points.iter().map(|p| Vector3::new(p.0 as f64, p.1 as f64, p.2 as f64)).collect(),
            colors: points.iter().map(|p| p.3).collect(),
        };
        let mut bytes = Vec::new();
        write_ply(&cloud, &mut bytes).unwrap();
        prop_assert_eq!(read_ply(bytes.as_slice()).unwrap(), cloud);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identity_warp_has_no_holes(yaw in -180.0f64..180.0, fov in 40.0f64..120.0, seed in 0u64..100) {
        let k = intrinsics_from_fov(fov, 48, 48).unwrap();
        let v = ViewRecord::new(procedural_image(48, 48, seed), k, rotation_y(yaw));
        let (_, mask) = warp_view(std::slice::from_ref(&v), &k, &rotation_y(yaw));
        prop_assert_eq!(mask.count(), 0);
    }

    #[test]
    fn warp_round_trip_error_is_small(yaw in -50.0f64..50.0, seed in 0u64..100) {
        let k = intrinsics_from_fov(100.0, 256, 256).unwrap();
        let src = ViewRecord::new(procedural_image(256, 256, seed), k, rotation_y(0.0));
        let (fwd, fmask) = warp_view(std::slice::from_ref(&src), &k, &rotation_y(yaw));
        let mid = ViewRecord::new(fwd, k, rotation_y(yaw));
        let (back, bmask) = warp_view(std::slice::from_ref(&mid), &k, &rotation_y(0.0));
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in 0..256 {
            for x in 0..256 {
                if !bmask.get(x, y) {
                    let (a, b) = (src.image.get(x, y), back.get(x, y));
                    sum += (0..3).map(|c| (a[c] - b[c]).abs() as f64).sum::<f64>() / 3.0;
                    n += 1;
                }
            }
        }
        prop_assert!(fmask.count() > 0 || yaw.abs() < 1.0);
        prop_assert!(n > 0);
        prop_assert!(sum / (n as f64) < 2.0 / 255.0, "mean error {}", sum / n as f64);
    }
}

#[test]
fn unmasked_region_with_no_mask_is_identity() {
    let img: ImageBuffer = procedural_image(16, 16, 2);
    let mask = Mask::new(16, 16, false);
    assert_eq!(push_pull_fill(&img, &mask), img);
}
