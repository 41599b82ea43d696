//! Pinhole and spherical camera math.
//!
//! Axis convention: x right, y down, z forward. The up axis is therefore
//! `-y`, and a positive yaw pans the camera to the right (the forward axis
//! turns toward `+x`).
//!
//! Equirectangular coordinates put longitude `-180°` at `u = 0` and the
//! forward direction of the initial view at the panorama center:
//!
//! ```text
//! lon = atan2(x, z)          u = (lon / 2π + 0.5) · width
//! lat = asin(y)              v = (lat / π  + 0.5) · height
//! ```

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Rays with a forward component at or below this value are treated as
/// behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Pinhole intrinsics in continuous pixel coordinates: pixel `(i, j)` has
/// its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let ok = fx > 0.0
            && fy > 0.0
            && fx.is_finite()
            && fy.is_finite()
            && cx > 0.0
            && cx < width as f64
            && cy > 0.0
            && cy < height as f64;
        if !ok {
            return Err(GeometryError::InvalidArgument(format!(
                "intrinsics fx={fx} fy={fy} cx={cx} cy={cy} for {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics of the same camera rendered on a raster `factor` times
    /// larger in each dimension.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
        }
    }

    /// Intrinsics resampled to a `width`×`height` raster covering the same
    /// field of view.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Full horizontal field of view in degrees.
    pub fn horizontal_fov_deg(&self) -> f64 {
        let left = (self.cx / self.fx).atan();
        let right = ((self.width as f64 - self.cx) / self.fx).atan();
        (left + right).to_degrees()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Square-pixel intrinsics with the principal point at the raster center.
pub fn intrinsics_from_fov(
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<CameraIntrinsics, GeometryError> {
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(GeometryError::InvalidArgument(format!(
            "field of view must lie in (0, 180) degrees, got {fov_deg}"
        )));
    }
    if width < 2 || height < 2 {
        return Err(GeometryError::InvalidArgument(format!(
            "raster must be at least 2x2, got {width}x{height}"
        )));
    }
    let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
    CameraIntrinsics::new(
        f,
        f,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )
}

/// A unit direction in camera-world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDir(Vector3<f64>);

impl SphereDir {
    /// Wraps an already-normalized direction. Fails if the norm differs
    /// from one by more than 1e-9.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let v = Vector3::new(x, y, z);
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(GeometryError::InvalidArgument(format!(
                "direction ({x}, {y}, {z}) has norm {n}, expected 1"
            )));
        }
        Ok(Self(v))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_vector(v: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(Self(v / n))
    }

    pub(crate) fn from_unit_unchecked(v: Vector3<f64>) -> Self {
        Self(v)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }
    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }
    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }
}

/// Back-projects a (possibly fractional) pixel to a unit ray: `K⁻¹v / ‖K⁻¹v‖`.
pub fn pixel_to_sphere(x: f64, y: f64, k: &CameraIntrinsics) -> SphereDir {
    SphereDir::from_unit_unchecked(pixel_ray(x, y, k))
}

#[inline]
pub(crate) fn pixel_ray(x: f64, y: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0).normalize()
}

/// Projects a ray into the image. Returns `None` for rays at or behind the
/// image plane (`z <= 1e-6`).
pub fn sphere_to_pixel(dir: &SphereDir, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    project_ray(&dir.0, k, BEHIND_CAMERA_EPS)
}

#[inline]
pub(crate) fn project_ray(v: &Vector3<f64>, k: &CameraIntrinsics, eps_z: f64) -> Option<(f64, f64)> {
    if v.z > eps_z {
        Some((k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy))
    } else {
        None
    }
}

/// A yaw rotation about the up axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationY {
    angle_deg: f64,
    matrix: Matrix3<f64>,
}

impl RotationY {
    pub fn angle_deg(&self) -> f64 {
        self.angle_deg
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn identity() -> Self {
        rotation_y(0.0)
    }

    pub fn inverse(&self) -> Self {
        Self {
            angle_deg: -self.angle_deg,
            matrix: self.matrix.transpose(),
        }
    }

    pub fn compose(&self, other: &RotationY) -> Self {
        Self {
            angle_deg: self.angle_deg + other.angle_deg,
            matrix: self.matrix * other.matrix,
        }
    }

    /// Camera-to-world: maps a direction in this camera's frame to the
    /// reference frame.
    #[inline]
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * v
    }

    /// World-to-camera.
    #[inline]
    pub fn apply_inverse(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix.tr_mul(v)
    }

    pub fn rotate(&self, dir: &SphereDir) -> SphereDir {
        SphereDir::from_unit_unchecked(self.apply(&dir.0))
    }
}

/// Yaw rotation; positive angles pan right, so `rotation_y(θ)` maps the
/// forward axis to `(sin θ, 0, cos θ)`.
pub fn rotation_y(angle_deg: f64) -> RotationY {
    let (s, c) = angle_deg.to_radians().sin_cos();
    RotationY {
        angle_deg,
        matrix: Matrix3::new(
            c, 0.0, s, //
            0.0, 1.0, 0.0, //
            -s, 0.0, c,
        ),
    }
}

fn check_pano_dims(pano_width: usize, pano_height: usize) -> Result<(), GeometryError> {
    if pano_height == 0 || pano_width != 2 * pano_height {
        return Err(GeometryError::InvalidArgument(format!(
            "equirectangular raster must be 2:1, got {pano_width}x{pano_height}"
        )));
    }
    Ok(())
}

/// Maps a unit direction to continuous equirectangular coordinates.
/// `u` lies in `[0, width)`.
pub fn sphere_to_equirect(
    dir: &SphereDir,
    pano_width: usize,
    pano_height: usize,
) -> Result<(f64, f64), GeometryError> {
    check_pano_dims(pano_width, pano_height)?;
    let n = dir.0.norm();
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(GeometryError::InvalidArgument(format!(
            "direction has norm {n}, expected 1"
        )));
    }
    let (u, v) = dir_to_equirect(&dir.0, pano_width as f64, pano_height as f64);
    Ok((u, v))
}

#[inline]
pub(crate) fn dir_to_equirect(d: &Vector3<f64>, width: f64, height: f64) -> (f64, f64) {
    let lon = d.x.atan2(d.z);
    let lat = d.y.clamp(-1.0, 1.0).asin();
    let mut u = (lon / std::f64::consts::TAU + 0.5) * width;
    if u >= width {
        u -= width;
    }
    if u < 0.0 {
        u += width;
    }
    let v = (lat / std::f64::consts::PI + 0.5) * height;
    (u, v)
}

/// Inverse of [`sphere_to_equirect`]. Accepts any finite `u` (longitude
/// wraps); `v` outside the raster is clamped to the poles.
pub fn equirect_to_sphere(u: f64, v: f64, pano_width: usize, pano_height: usize) -> SphereDir {
    SphereDir::from_unit_unchecked(equirect_dir(u, v, pano_width as f64, pano_height as f64))
}

#[inline]
pub(crate) fn equirect_dir(u: f64, v: f64, width: f64, height: f64) -> Vector3<f64> {
    let lon = (u / width - 0.5) * std::f64::consts::TAU;
    let lat = ((v / height - 0.5) * std::f64::consts::PI).clamp(
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_2,
    );
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    Vector3::new(cp * sl, sp, cp * cl)
}

/// Horizontal angle between the rays through pixel columns `x` and `x + 1`.
pub fn angular_step(x: f64, cx: f64, fx: f64) -> f64 {
    (((x + 1.0 - cx).abs() / fx).atan() - ((x - cx).abs() / fx).atan()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn k256() -> CameraIntrinsics {
        CameraIntrinsics::new(256.0, 256.0, 256.0, 256.0, 512, 512).unwrap()
    }

    #[test]
    fn fov_90_gives_half_width_focal() {
        let k = intrinsics_from_fov(90.0, 512, 512).unwrap();
        assert_abs_diff_eq!(k.fx, 256.0, epsilon = 1e-9);
        assert_eq!((k.cx, k.cy), (256.0, 256.0));
    }

    #[test]
    fn fov_100_focal() {
        let k = intrinsics_from_fov(100.0, 512, 512).unwrap();
        let half = 5.0 * std::f64::consts::PI / 18.0;
        let oracle = 256.0 * half.cos() / half.sin();
        assert_abs_diff_eq!(k.fx, oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(k.fx, 214.81, epsilon = 5e-3);
        assert_abs_diff_eq!(k.horizontal_fov_deg(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_fov_rejected() {
        assert!(intrinsics_from_fov(0.0, 512, 512).is_err());
        assert!(intrinsics_from_fov(180.0, 512, 512).is_err());
        assert!(intrinsics_from_fov(60.0, 1, 512).is_err());
    }

    #[test]
    fn principal_ray() {
        let d = pixel_to_sphere(256.0, 256.0, &k256());
        assert_abs_diff_eq!(d.z(), 1.0, epsilon = 1e-12);
        let d = pixel_to_sphere(512.0, 256.0, &k256());
        assert_abs_diff_eq!(d.x(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.z(), 0.5f64.sqrt(), epsilon = 1e-12);
        let d = pixel_to_sphere(256.0, 0.0, &k256());
        assert_abs_diff_eq!(d.y(), -(0.5f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn project_front_and_behind() {
        let k = k256();
        let (x, y) = sphere_to_pixel(&SphereDir::new(0.0, 0.0, 1.0).unwrap(), &k).unwrap();
        assert_eq!((x, y), (256.0, 256.0));
        let h = 0.5f64.sqrt();
        let (x, y) = sphere_to_pixel(&SphereDir::new(h, 0.0, h).unwrap(), &k).unwrap();
        assert_abs_diff_eq!(x, 512.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y, 256.0, epsilon = 1e-9);
        assert!(sphere_to_pixel(&SphereDir::new(0.0, 0.0, -1.0).unwrap(), &k).is_none());
    }

    #[test]
    fn rotation_examples() {
        let id = rotation_y(0.0);
        assert_eq!(*id.matrix(), Matrix3::identity());
        let r = rotation_y(41.0).compose(&rotation_y(-41.0));
        assert!((r.matrix() - Matrix3::identity()).abs().max() < 1e-12);
        let f = rotation_y(200.5).apply(&Vector3::z());
        assert_abs_diff_eq!(f.z, -0.936672189, epsilon = 1e-6);
        let right = rotation_y(90.0).apply(&Vector3::z());
        assert_abs_diff_eq!(right.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equirect_examples() {
        let (u, v) = sphere_to_equirect(&SphereDir::new(0.0, 0.0, 1.0).unwrap(), 4096, 2048).unwrap();
        assert_eq!((u, v), (2048.0, 1024.0));
        let (u, v) = sphere_to_equirect(&SphereDir::new(1.0, 0.0, 0.0).unwrap(), 4096, 2048).unwrap();
        assert_abs_diff_eq!(u, 3072.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 1024.0, epsilon = 1e-9);
        let (_, v) = sphere_to_equirect(&SphereDir::new(0.0, -1.0, 0.0).unwrap(), 4096, 2048).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
        assert!(sphere_to_equirect(&SphereDir::new(0.0, 0.0, 1.0).unwrap(), 4096, 1000).is_err());
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(SphereDir::new(0.0, 0.0, 2.0).is_err());
        assert!(SphereDir::new(0.0, 0.0, 1.0 + 1e-6).is_err());
    }

    #[test]
    fn equirect_inverse_examples() {
        let d = equirect_to_sphere(2048.0, 1024.0, 4096, 2048);
        assert_abs_diff_eq!(d.z(), 1.0, epsilon = 1e-12);
        let d = equirect_to_sphere(0.0, 1024.0, 4096, 2048);
        assert_abs_diff_eq!(d.z(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.x(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn angular_step_examples() {
        assert_abs_diff_eq!(angular_step(256.0, 256.0, 256.0), (1.0f64 / 256.0).atan(), epsilon = 1e-15);
        assert_abs_diff_eq!(angular_step(256.0, 256.0, 256.0), 3.9062e-3, epsilon = 1e-7);
        let side = angular_step(512.0, 256.0, 256.0);
        assert_abs_diff_eq!(side, (257.0f64 / 256.0).atan() - std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
        assert_abs_diff_eq!(side, 1.949e-3, epsilon = 1e-6);
        let mid = angular_step(384.0, 256.0, 256.0);
        assert!(angular_step(256.0, 256.0, 256.0) > mid && mid > side);
    }

    proptest! {
        #[test]
        fn pixel_rays_are_unit_and_invert(x in 0.0f64..512.0, y in 0.0f64..512.0, fov in 20.0f64..150.0) {
            let k = intrinsics_from_fov(fov, 512, 512).unwrap();
            let d = pixel_to_sphere(x, y, &k);
            prop_assert!((d.vector().norm() - 1.0).abs() < 1e-9);
            let (px, py) = sphere_to_pixel(&d, &k).unwrap();
            prop_assert!((px - x).abs() < 1e-6 && (py - y).abs() < 1e-6);
        }

        #[test]
        fn yaw_composition_adds(a in -720.0f64..720.0, b in -720.0f64..720.0) {
            let lhs = rotation_y(a).compose(&rotation_y(b));
            let rhs = rotation_y(a + b);
            prop_assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-9);
            let m = rotation_y(a);
            prop_assert!((m.matrix().transpose() * m.matrix() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((m.matrix().determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn equirect_round_trip(u in 0.0f64..4096.0, v in 8.0f64..2040.0) {
            let d = equirect_to_sphere(u, v, 4096, 2048);
            let (u2, v2) = sphere_to_equirect(&d, 4096, 2048).unwrap();
            let d2 = equirect_to_sphere(u2, v2, 4096, 2048);
            prop_assert!((d.vector() - d2.vector()).norm() < 1e-9);
        }

        #[test]
        fn angular_step_decreases_off_center(off in 0.0f64..1000.0, fx in 50.0f64..2000.0) {
            let near = angular_step(256.0 + off, 256.0, fx);
            let far = angular_step(256.0 + off + 1.0, 256.0, fx);
            prop_assert!(near > far);
        }
    }
}
