use nalgebra::Vector3;

use super::WorldSpec;
use crate::frame::{CameraIntrinsics, ColorImage, DepthMap, Pose};

/// Value-noise amplitude of the background texture, in intensity levels.
const TEXTURE_AMPLITUDE: f64 = 40.0;
const BACKGROUND: f64 = 110.0;
const NO_OWNER: u32 = u32::MAX;

pub(crate) struct Raster {
    pub color: ColorImage,
    /// Metric depth along the optical axis, 0 where nothing was hit.
    pub depth: Vec<f64>,
    /// Object index owning each pixel.
    pub owner: Vec<u32>,
    pub width: usize,
}

/// Visible footprint of one object: pixel count and the exclusive bounding
/// rectangle of its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Silhouette {
    pub area: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Raster {
    pub fn silhouettes(&self, n: usize) -> Vec<Silhouette> {
        let mut s = vec![
            Silhouette {
                area: 0,
                x0: usize::MAX,
                y0: usize::MAX,
                x1: 0,
                y1: 0
            };
            n
        ];
        for (i, &o) in self.owner.iter().enumerate() {
            if o == NO_OWNER {
                continue;
            }
            let (x, y) = (i % self.width, i / self.width);
            let e = &mut s[o as usize];
            e.area += 1;
            e.x0 = e.x0.min(x);
            e.y0 = e.y0.min(y);
            e.x1 = e.x1.max(x + 1);
            e.y1 = e.y1.max(y + 1);
        }
        for e in &mut s {
            if e.area == 0 {
                *e = Silhouette::default();
            }
        }
        s
    }
}

fn hash2(x: u64, y: u64) -> f64 {
    let mut z = x.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ y.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-pixel value noise centered on 0. A one-pixel cell keeps sharp frames
/// well above the blur threshold.
fn texture(x: usize, y: usize) -> f64 {
    (hash2(x as u64, y as u64) - 0.5) * TEXTURE_AMPLITUDE
}

/// Brightness of a face by its outward normal: axis and sign.
fn shade(axis: usize, positive: bool) -> f64 {
    match (axis, positive) {
        (2, true) => 1.0,
        (2, false) => 0.55,
        (0, _) => 0.85,
        _ => 0.7,
    }
}

fn tint(rgb: [u8; 3], factor: f64, offset: f64) -> [u8; 3] {
    rgb.map(|c| (c as f64 * factor + offset).round().clamp(0.0, 255.0) as u8)
}

/// Entry distance and entry axis of a ray into a box, if it hits in front.
fn enter_box(o: &Vector3<f64>, inv: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for j in 0..3 {
        let (a, b) = ((lo[j] - o[j]) * inv[j], (hi[j] - o[j]) * inv[j]);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if a.is_nan() || b.is_nan() {
            // ray parallel to the slab and exactly on a face plane
            continue;
        }
        if a > t_near {
            t_near = a;
            axis = j;
        }
        t_far = t_far.min(b);
    }
    (t_near <= t_far && t_near > 0.0).then_some((t_near, axis))
}

/// Exit distance and axis of a ray leaving a box it starts inside.
fn exit_box(o: &Vector3<f64>, inv: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for j in 0..3 {
        let b = ((lo[j] - o[j]) * inv[j]).max((hi[j] - o[j]) * inv[j]);
        if b < t_far {
            t_far = b;
            axis = j;
        }
    }
    (t_far.is_finite() && t_far > 0.0).then_some((t_far, axis))
}

/// Conservative pixel rectangle a box can cover; unbounded when any corner
/// lies behind the camera plane.
fn screen_rect(lo: &Vector3<f64>, hi: &Vector3<f64>, world_to_camera: &Pose, k: &CameraIntrinsics) -> [f64; 4] {
    let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in 0..8 {
        let p = Vector3::new(
            if c & 1 == 0 { lo.x } else { hi.x },
            if c & 2 == 0 { lo.y } else { hi.y },
            if c & 4 == 0 { lo.z } else { hi.z },
        );
        let q = world_to_camera.transform_point(&p);
        if q.z <= 1e-9 {
            return [f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY];
        }
        let (u, v) = (k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy);
        r = [r[0].min(u), r[1].min(v), r[2].max(u), r[3].max(v)];
    }
    [r[0] - 1.0, r[1] - 1.0, r[2] + 1.0, r[3] + 1.0]
}

/// Ray casts the world through every pixel center. Rays are scaled so that
/// the hit distance equals the camera-frame depth.
pub(crate) fn rasterize(world: &WorldSpec, pose: &Pose, k: &CameraIntrinsics) -> Raster {
    let (w, h) = (k.width, k.height);
    let r = pose.rotation();
    let eye = pose.translation();
    let boxes: Vec<(Vector3<f64>, Vector3<f64>)> = world.objects.iter().map(|o| (o.min(), o.max())).collect();
    let world_to_camera = pose.inverse();
    let rects: Vec<[f64; 4]> = boxes
        .iter()
        .map(|(lo, hi)| screen_rect(lo, hi, &world_to_camera, k))
        .collect();
    let room = world
        .room
        .as_ref()
        .map(|r| (Vector3::from(r.min), Vector3::from(r.max), r.color));
    let mut color = ColorImage::new(w, h);
    let mut depth = vec![0.0; w * h];
    let mut owner = vec![NO_OWNER; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = r * Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let inv = d.map(|c| 1.0 / c);
            let mut best: Option<(f64, usize, usize)> = None;
            let (fx, fy) = (x as f64, y as f64);
            for (i, (lo, hi)) in boxes.iter().enumerate() {
                let rc = &rects[i];
                if fx < rc[0] || fx > rc[2] || fy < rc[1] || fy > rc[3] {
                    continue;
                }
                if let Some((t, axis)) = enter_box(&eye, &inv, lo, hi) {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, axis, i));
                    }
                }
            }
            let idx = y * w + x;
            if let Some((t, axis, i)) = best {
                let o = &world.objects[i];
                color.data[idx] = tint(o.color, shade(axis, d[axis] < 0.0), 0.0);
                depth[idx] = t;
                owner[idx] = i as u32;
                continue;
            }
            let tex = texture(x, y);
            match &room {
                Some((lo, hi, rgb)) => match exit_box(&eye, &inv, lo, hi) {
                    Some((t, axis)) => {
                        // inward normal opposes the direction of travel
                        color.data[idx] = tint(*rgb, shade(axis, d[axis] < 0.0), tex);
                        depth[idx] = t;
                    }
                    None => color.data[idx] = tint([BACKGROUND as u8; 3], 1.0, tex),
                },
                None => color.data[idx] = tint([BACKGROUND as u8; 3], 1.0, tex),
            }
        }
    }
    Raster {
        color,
        depth,
        owner,
        width: w,
    }
}

/// Noise-free color and millimeter-style depth (0 where nothing is hit).
pub fn render_frame(world: &WorldSpec, pose: &Pose, k: &CameraIntrinsics) -> (ColorImage, DepthMap) {
    let r = rasterize(world, pose, k);
    let mut depth = DepthMap::new(k.width, k.height);
    for (d, &z) in depth.data.iter_mut().zip(&r.depth) {
        if z > 0.0 {
            *d = (z * k.depth_scale).round().clamp(1.0, u16::MAX as f64) as u16;
        }
    }
    (r.color, depth)
}

/// Visible footprint of every object seen from `pose`.
pub fn silhouettes(world: &WorldSpec, pose: &Pose, k: &CameraIntrinsics) -> Vec<Silhouette> {
    rasterize(world, pose, k).silhouettes(world.objects.len())
}

/// Separable Gaussian blur with a `ceil(3 sigma)` radius and clamped borders.
pub fn gaussian_blur(img: &ColorImage, sigma: f64) -> ColorImage {
    if sigma <= 0.0 || img.data.is_empty() {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    let (w, h) = (img.width as isize, img.height as isize);
    let pass = |src: &[[f64; 3]], horizontal: bool| -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for (ki, kv) in kernel.iter().enumerate() {
                    let o = ki as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x + o).clamp(0, w - 1), y)
                    } else {
                        (x, (y + o).clamp(0, h - 1))
                    };
                    let p = src[(sy * w + sx) as usize];
                    for c in 0..3 {
                        acc[c] += kv * p[c];
                    }
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        out
    };
    let src: Vec<[f64; 3]> = img.data.iter().map(|p| p.map(f64::from)).collect();
    let blurred = pass(&pass(&src, true), false);
    ColorImage {
        width: img.width,
        height: img.height,
        data: blurred
            .iter()
            .map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect(),
    }
}
