//! Synthetic box worlds: scene and camera-path descriptions, a small ray
//! caster, noisy detection emission, bundle generation and scoring of a
//! constructed graph against the known world.

mod detect;
mod eval;
mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{write_frame, write_intrinsics, FrameBundle};
use crate::error::{Error, Result};
use crate::frame::{CameraIntrinsics, ColorImage, DepthMap, Frame, Pose};

pub use detect::{emit_detections, relation_corpus, A_MIN};
pub use eval::{evaluate_graph, Metrics, NodeMatch};
pub use render::{gaussian_blur, render_frame, silhouettes, Silhouette};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: String,
    pub center: [f64; 3],
    /// Full side lengths along x, y, z.
    pub extents: [f64; 3],
    pub color: [u8; 3],
}

impl ObjectSpec {
    pub fn min(&self) -> Vector3<f64> {
        Vector3::from(self.center) - Vector3::from(self.extents) / 2.0
    }

    pub fn max(&self) -> Vector3<f64> {
        Vector3::from(self.center) + Vector3::from(self.extents) / 2.0
    }
}

/// Closed room seen from the inside; its walls give every pixel a depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub room: Option<RoomSpec>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
    /// Class to direct parents, in the query taxonomy format.
    #[serde(default)]
    pub taxonomy: BTreeMap<String, Vec<String>>,
    /// Labels a detector may confuse each class with.
    #[serde(default)]
    pub confusions: BTreeMap<String, Vec<String>>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.class.is_empty() {
                return Err(Error::World(format!("object {i} has an empty class")));
            }
            if !o.extents.iter().all(|e| *e > 0.0 && e.is_finite()) || !o.center.iter().all(|c| c.is_finite()) {
                return Err(Error::World(format!(
                    "object {i} needs finite center and positive extents"
                )));
            }
        }
        if let Some(r) = &self.room {
            if !(0..3).all(|j| r.min[j] < r.max[j]) {
                return Err(Error::World("room min must be below max on every axis".into()));
            }
        }
        for r in &self.relations {
            if r.subject >= self.objects.len() || r.object >= self.objects.len() || r.subject == r.object {
                return Err(Error::World(format!(
                    "relation {} {} {} has an invalid endpoint",
                    r.subject, r.predicate, r.object
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: WorldSpec = serde_json::from_str(text).map_err(|e| Error::json("world", e))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Camera-to-world pose looking from `eye` at `target`, world `+z` up.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<Pose> {
    let forward = (target - eye)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::World("camera eye coincides with its target".into()))?;
    let up = if forward.cross(&Vector3::z()).norm() < 1e-9 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    Pose::from_parts(Matrix3::from_columns(&[right, down, forward]), eye)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Explicit row-major camera-to-world matrices.
    Poses { poses: Vec<[f64; 16]> },
    /// Circle of `radius` around `center` at height `height`. Looking at
    /// `target` (the center by default), or away from the center and tilted
    /// down by `tilt_deg` when `facing` is outward.
    Orbit {
        center: [f64; 3],
        radius: f64,
        height: f64,
        frames: usize,
        #[serde(default)]
        start_deg: f64,
        #[serde(default = "full_turn")]
        sweep_deg: f64,
        #[serde(default)]
        target: Option<[f64; 3]>,
        #[serde(default)]
        facing: Facing,
        #[serde(default)]
        tilt_deg: f64,
    },
    /// Straight line from `from` to `to` looking at `target`.
    Dolly {
        from: [f64; 3],
        to: [f64; 3],
        target: [f64; 3],
        frames: usize,
    },
    Static {
        eye: [f64; 3],
        target: [f64; 3],
        frames: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    #[default]
    Center,
    Outward,
}

fn full_turn() -> f64 {
    360.0
}

impl TrajectorySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("trajectory", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }

    /// Camera-to-world poses, one per frame.
    pub fn poses(&self) -> Result<Vec<Pose>> {
        match self {
            TrajectorySpec::Poses { poses } => poses.iter().map(|p| Pose::from_row_major(p)).collect(),
            TrajectorySpec::Orbit {
                center,
                radius,
                height,
                frames,
                start_deg,
                sweep_deg,
                target,
                facing,
                tilt_deg,
            } => {
                let c = Vector3::from(*center);
                let t = target.map_or(c, Vector3::from);
                (0..*frames)
                    .map(|i| {
                        let a = (start_deg + sweep_deg * i as f64 / *frames as f64).to_radians();
                        let eye = Vector3::new(c.x + radius * a.cos(), c.y + radius * a.sin(), *height);
                        match facing {
                            Facing::Center => look_at(eye, t),
                            Facing::Outward => {
                                let ahead = Vector3::new(a.cos(), a.sin(), -tilt_deg.to_radians().tan());
                                look_at(eye, eye + ahead)
                            }
                        }
                    })
                    .collect()
            }
            TrajectorySpec::Dolly {
                from,
                to,
                target,
                frames,
            } => {
                let (a, b) = (Vector3::from(*from), Vector3::from(*to));
                (0..*frames)
                    .map(|i| {
                        let s = if *frames > 1 {
                            i as f64 / (*frames - 1) as f64
                        } else {
                            0.0
                        };
                        look_at(a + (b - a) * s, Vector3::from(*target))
                    })
                    .collect()
            }
            TrajectorySpec::Static { eye, target, frames } => {
                let p = look_at(Vector3::from(*eye), Vector3::from(*target))?;
                Ok(vec![p; *frames])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurSchedule {
    pub frames: Vec<usize>,
    /// Inclusive frame ranges.
    pub ranges: Vec<[usize; 2]>,
    pub sigma: f64,
}

impl BlurSchedule {
    pub fn frame_set(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.frames.iter().copied().collect();
        for [a, b] in &self.ranges {
            s.extend(*a..=*b);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Pixels, per box coordinate.
    pub bbox_jitter: f64,
    pub score_noise: f64,
    pub confusion_rate: f64,
    /// Meters, per depth pixel.
    pub depth_noise: f64,
    pub blur: BlurSchedule,
    pub spurious_rate: f64,
    pub relation_miss_rate: f64,
    /// Drop objects cut by the image border instead of boxing their visible part.
    pub skip_truncated: bool,
    /// Labels used for injected false positives.
    pub spurious_classes: Vec<String>,
    /// Predicates used for injected false relations.
    pub spurious_predicates: Vec<String>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            seed: 0,
            bbox_jitter: 2.0,
            score_noise: 0.05,
            confusion_rate: 0.05,
            depth_noise: 0.02,
            blur: BlurSchedule::default(),
            spurious_rate: 0.05,
            relation_miss_rate: 0.1,
            skip_truncated: false,
            spurious_classes: ["person", "dog", "car"].map(String::from).to_vec(),
            spurious_predicates: ["riding", "wearing", "eating"].map(String::from).to_vec(),
        }
    }
}

impl NoiseSpec {
    /// Everything off: exact boxes, labels and depth.
    pub fn none() -> Self {
        NoiseSpec {
            bbox_jitter: 0.0,
            score_noise: 0.0,
            confusion_rate: 0.0,
            depth_noise: 0.0,
            spurious_rate: 0.0,
            relation_miss_rate: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("bbox_jitter", self.bbox_jitter),
            ("score_noise", self.score_noise),
            ("depth_noise", self.depth_noise),
            ("blur.sigma", self.blur.sigma),
        ];
        for (name, v) in sigmas {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::World(format!(
                    "noise {name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        let rates = [
            ("confusion_rate", self.confusion_rate),
            ("spurious_rate", self.spurious_rate),
            ("relation_miss_rate", self.relation_miss_rate),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::World(format!("noise {name} must be in [0,1], got {v}")));
            }
        }
        if self.spurious_rate > 0.0 && (self.spurious_classes.is_empty() || self.spurious_predicates.is_empty()) {
            return Err(Error::World("spurious injection needs classes and predicates".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let n: NoiseSpec = serde_json::from_str(text).map_err(|e| Error::json("noise", e))?;
        n.validate()?;
        Ok(n)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

/// Independent random stream for one purpose within one frame.
pub(crate) fn frame_rng(seed: u64, frame: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((frame as u64) << 4 | purpose);
    rng
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthObject {
    pub class: String,
    /// Box center in the bundle's reference frame.
    pub position: [f64; 3],
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub objects: Vec<GroundTruthObject>,
    pub relations: Vec<RelationSpec>,
    #[serde(default)]
    pub taxonomy: BTreeMap<String, Vec<String>>,
    /// Indices of the objects each frame shows with at least the minimum area.
    pub visibility: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("ground truth", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes") + "\n"
    }
}

/// Renders, degrades and annotates one frame. `pose` is camera-to-world and
/// `reference` the world-to-reference transform.
fn synthesize_frame(
    world: &WorldSpec,
    index: usize,
    pose: &Pose,
    reference: &Pose,
    noise: &NoiseSpec,
    blurred: bool,
    k: &CameraIntrinsics,
) -> (Frame, Vec<usize>) {
    let raster = render::rasterize(world, pose, k);
    let detections = detect::emit_from_raster(world, &raster, noise, index, k);
    let visible = raster
        .silhouettes(world.objects.len())
        .iter()
        .enumerate()
        .filter(|(_, s)| s.area >= A_MIN)
        .map(|(i, _)| i)
        .collect();
    let mut rng = frame_rng(noise.seed, index, 1);
    let mut depth = DepthMap::new(k.width, k.height);
    for (d, &z) in depth.data.iter_mut().zip(&raster.depth) {
        if z > 0.0 {
            let z = z + gaussian(&mut rng, noise.depth_noise);
            *d = (z * k.depth_scale).round().clamp(1.0, u16::MAX as f64) as u16;
        }
    }
    let color: ColorImage = if blurred && noise.blur.sigma > 0.0 {
        gaussian_blur(&raster.color, noise.blur.sigma)
    } else {
        raster.color
    };
    let frame = Frame {
        index,
        color,
        depth,
        pose: reference.compose(pose),
        detections,
    };
    (frame, visible)
}

/// Builds the whole bundle in memory. Bundle poses are expressed relative to
/// the first camera.
pub fn synthesize_bundle(
    world: &WorldSpec,
    trajectory: &TrajectorySpec,
    noise: &NoiseSpec,
    k: &CameraIntrinsics,
) -> Result<(FrameBundle, GroundTruth)> {
    world.validate()?;
    noise.validate()?;
    k.validate()?;
    let poses = trajectory.poses()?;
    let reference = poses.first().map_or(Pose::identity(), Pose::inverse);
    let blurred = noise.blur.frame_set();
    let (frames, visibility): (Vec<Frame>, Vec<Vec<usize>>) = poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| synthesize_frame(world, i, p, &reference, noise, blurred.contains(&i), k))
        .unzip();
    let truth = GroundTruth {
        objects: world
            .objects
            .iter()
            .map(|o| GroundTruthObject {
                class: o.class.clone(),
                position: reference.transform_point(&Vector3::from(o.center)).into(),
                extents: o.extents,
            })
            .collect(),
        relations: world.relations.clone(),
        taxonomy: world.taxonomy.clone(),
        visibility,
    };
    Ok((FrameBundle { intrinsics: *k, frames }, truth))
}

/// Writes a frame bundle plus `ground_truth.json` into `out`.
pub fn generate_bundle(
    world: &WorldSpec,
    trajectory: &TrajectorySpec,
    noise: &NoiseSpec,
    k: &CameraIntrinsics,
    out: &Path,
) -> Result<GroundTruth> {
    let (bundle, truth) = synthesize_bundle(world, trajectory, noise, k)?;
    write_intrinsics(out, &bundle.intrinsics)?;
    bundle.frames.par_iter().try_for_each(|f| write_frame(out, f))?;
    let path = out.join("ground_truth.json");
    fs::write(&path, truth.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}

#[cfg(test)]
mod tests;
