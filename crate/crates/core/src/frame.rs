//! Camera geometry, rigid poses, rasters and color conversion.
//!
//! Pixel coordinates follow the usual image convention: `x` grows to the
//! right, `y` grows downwards, and the camera looks along `+z`.

use nalgebra::{Matrix3, Matrix4, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::detection::FrameDetections;
use crate::error::{Error, Result};

/// Pinhole intrinsics plus the raster size and the raw-depth divisor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Raw depth units per meter (1000 for millimeter depth).
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Intrinsics(format!("{self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Whether a real-valued pixel lies inside `[0, W) x [0, H)`.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }
}

/// Lifts pixel `p` at metric depth `depth` into camera coordinates.
pub fn back_project(p: Point2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if depth <= 0.0 || !depth.is_finite() {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(back_project_unchecked(p.x, p.y, depth, k))
}

#[inline]
pub(crate) fn back_project_unchecked(px: f64, py: f64, z: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((px - k.cx) * z / k.fx, (py - k.cy) * z / k.fy, z)
}

/// Projects a camera-frame point; `None` when the point is not in front of
/// the camera.
#[inline]
pub fn project(q: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Point2<f64>> {
    if q.z <= 0.0 {
        return None;
    }
    Some(Point2::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy))
}

/// Rigid camera-to-reference transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Matrix4<f64>);

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Pose(Matrix4::identity())
    }

    /// Validates orthonormality of the rotation block and the homogeneous
    /// last row.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Pose("non-finite entry".into()));
        }
        let last = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if last != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Pose(format!("last row is {last:?}")));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > Self::ORTHONORMAL_TOL {
            return Err(Error::Pose(format!(
                "rotation block not orthonormal (max deviation {err:e})"
            )));
        }
        if r.determinant() < 0.0 {
            return Err(Error::Pose("rotation block is a reflection".into()));
        }
        Ok(Pose(m))
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Pose(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Closed-form rigid inverse `[R^T | -R^T t]`.
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Pose(m)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose(self.0 * other.0)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        )
    }

    /// Row-major entries, the order used by `.pose.txt` files.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::Pose(format!("expected 16 values, found {}", v.len())));
        }
        Self::from_matrix(Matrix4::from_row_slice(v))
    }
}

/// Transform taking `source` camera coordinates into `target` camera
/// coordinates, `T_target^-1 * T_source`.
pub fn relative_pose(source: &Pose, target: &Pose) -> Pose {
    target.inverse().compose(source)
}

/// Raw integer depth raster; zero marks an invalid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn raw(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Depth in meters, or `None` for invalid samples.
    #[inline]
    pub fn meters(&self, x: usize, y: usize, depth_scale: f64) -> Option<f64> {
        match self.raw(x, y) {
            0 => None,
            d => Some(d as f64 / depth_scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        ColorImage {
            width,
            height,
            data: vec![[0, 0, 0]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        ColorImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.data[y * self.width + x] = rgb;
    }

    /// Copies the half-open pixel rectangle `[x0, x1) x [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> ColorImage {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        let w = x1.saturating_sub(x0);
        let h = y1.saturating_sub(y0);
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        ColorImage {
            width: w,
            height: h,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl LuminanceImage {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        LuminanceImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

#[inline]
pub fn luminance(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

pub fn to_luminance(c: &ColorImage) -> LuminanceImage {
    LuminanceImage {
        width: c.width,
        height: c.height,
        data: c.data.iter().map(|&p| luminance(p)).collect(),
    }
}

/// Hexcone RGB to HSV: hue in degrees `[0, 360)`, saturation and value in
/// `[0, 1]`. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let mut h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Inverse of [`rgb_to_hsv`], channels returned in `[0, 255]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    ((r1 + m) * 255.0, (g1 + m) * 255.0, (b1 + m) * 255.0)
}

/// One calibrated RGB-D observation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub color: ColorImage,
    pub depth: DepthMap,
    pub pose: Pose,
    pub detections: FrameDetections,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 240.0,
            cy: 240.0,
            width: 480,
            height: 480,
            depth_scale: 1000.0,
        }
    }

    #[test]
    fn principal_point_is_optical_axis() {
        let k = k500();
        let q = back_project(Point2::new(k.cx, k.cy), 2.0, &k).unwrap();
        assert_eq!(q, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn back_project_hand_value() {
        let q = back_project(Point2::new(740.0, 240.0), 1.0, &k500()).unwrap();
        assert_eq!(q, Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn back_project_rejects_non_positive_depth() {
        assert!(back_project(Point2::new(1.0, 1.0), 0.0, &k500()).is_err());
        assert!(back_project(Point2::new(1.0, 1.0), -1.0, &k500()).is_err());
    }

    #[test]
    fn project_hand_values() {
        let k = k500();
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, 2.0), &k),
            Some(Point2::new(240.0, 240.0))
        );
        assert_eq!(
            project(&Vector3::new(1.0, 0.0, 1.0), &k),
            Some(Point2::new(740.0, 240.0))
        );
        assert_eq!(project(&Vector3::new(0.0, 0.0, -1.0), &k), None);
    }

    #[test]
    fn hsv_fixtures() {
        assert_eq!(rgb_to_hsv(255, 0, 0), (0.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv(0, 0, 0), (0.0, 0.0, 0.0));
        let (h, s, v) = rgb_to_hsv(128, 128, 128);
        assert_eq!((h, s), (0.0, 0.0));
        assert_abs_diff_eq!(v, 128.0 / 255.0, epsilon = 1e-15);
        assert_abs_diff_eq!(luminance([128, 128, 128]), 128.0, epsilon = 1e-12);
    }

    #[test]
    fn hsv_round_trip_grid() {
        for r in (0..16).map(|i| i * 17) {
            for g in (0..16).map(|i| i * 17) {
                for b in (0..16).map(|i| i * 17) {
                    let (h, s, v) = rgb_to_hsv(r, g, b);
                    assert!((0.0..360.0).contains(&h));
                    let (r2, g2, b2) = hsv_to_rgb(h, s, v);
                    // channel error measured on the normalized [0, 1] scale
                    for (a, b) in [(r2, r), (g2, g), (b2, b)] {
                        assert!((a - b as f64).abs() / 255.0 <= 1.0 / 255.0);
                    }
                }
            }
        }
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.1;
        assert!(Pose::from_matrix(m).is_err());
        let mut m = Matrix4::identity();
        m[(3, 0)] = 0.5;
        assert!(Pose::from_matrix(m).is_err());
        assert!(Pose::from_matrix(Matrix4::identity()).is_ok());
    }

    #[test]
    fn relative_pose_of_self_is_identity() {
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let p = Pose::from_parts(*r.matrix(), Vector3::new(1.0, 2.0, -0.5)).unwrap();
        let rel = relative_pose(&p, &p);
        assert!((rel.matrix() - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(k500().validate().is_ok());
        let mut k = k500();
        k.cx = 480.0;
        assert!(k.validate().is_err());
        k = k500();
        k.fx = 0.0;
        assert!(k.validate().is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -3.0f64..3.0,
            -3.0f64..3.0,
            -3.0f64..3.0,
            -5.0f64..5.0,
            -5.0f64..5.0,
            -5.0f64..5.0,
        )
            .prop_map(|(a, b, c, x, y, z)| {
                let r = Rotation3::from_euler_angles(a, b, c);
                Pose::from_parts(*r.matrix(), Vector3::new(x, y, z)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn project_inverts_back_project(px in 0.0f64..480.0, py in 0.0f64..480.0, z in 1e-3f64..=100.0) {
            let k = k500();
            let q = back_project(Point2::new(px, py), z, &k).unwrap();
            let p = project(&q, &k).unwrap();
            prop_assert!((p.x - px).abs() < 1e-9 && (p.y - py).abs() < 1e-9);
        }

        #[test]
        fn relative_poses_compose_to_identity(a in arb_pose(), b in arb_pose()) {
            let ab = relative_pose(&a, &b);
            let ba = relative_pose(&b, &a);
            let prod = ab.compose(&ba);
            prop_assert!((prod.matrix() - Matrix4::identity()).abs().max() < 1e-9);
        }
    }
}
