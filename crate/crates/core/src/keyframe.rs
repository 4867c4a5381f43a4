//! Keyframe group extraction.
//!
//! Frames are classified as keyframe, anchor or garbage by how much of the
//! incoming view reprojects into the current keyframe and the active anchor.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{back_project_unchecked, project, relative_pose, CameraIntrinsics, Frame, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgeConfig {
    pub t_key: f64,
    pub t_anchor: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            t_key: 0.3,
            t_anchor: 0.6,
            n_samples: 1000,
            seed: 0,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_key && self.t_key < self.t_anchor && self.t_anchor <= 1.0) {
            return Err(Error::Config(format!(
                "kge thresholds must satisfy 0 <= t_key < t_anchor <= 1 (got {} / {})",
                self.t_key, self.t_anchor
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("kge.n_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    Keyframe,
    Anchor,
    Garbage,
}

/// A keyframe and the anchors found before the next keyframe. The keyframe
/// itself is the first anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeGroup {
    pub keyframe: usize,
    pub anchors: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub groups: Vec<KeyframeGroup>,
    /// `(frame index, class)` in input order.
    pub classes: Vec<(usize, FrameClass)>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based stream keyed by `(seed, source, target)`, independent of
/// evaluation order.
fn pair_rng(seed: u64, source: usize, target: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(splitmix64((source as u64) << 32 ^ target as u64));
    rng
}

#[inline]
fn lands_in_target(pixel: usize, depth_raw: u16, k: &CameraIntrinsics, source_to_target: &Pose) -> bool {
    if depth_raw == 0 {
        return false;
    }
    let x = (pixel % k.width) as f64;
    let y = (pixel / k.width) as f64;
    let z = depth_raw as f64 / k.depth_scale;
    let q = source_to_target.transform_point(&back_project_unchecked(x, y, z, k));
    project(&q, k).is_some_and(|p| k.contains(&p))
}

/// Fraction of source pixels that reproject inside the target image.
///
/// `n_samples` pixels are drawn uniformly without replacement; when
/// `n_samples` covers the whole image every pixel is visited instead.
/// Pixels with invalid depth count as non-overlapping.
pub fn overlap(source: &Frame, target: &Frame, k: &CameraIntrinsics, config: &KgeConfig) -> f64 {
    let total = k.pixel_count();
    if total == 0 {
        return 0.0;
    }
    let t = relative_pose(&source.pose, &target.pose);
    let depth = &source.depth.data;
    if config.n_samples >= total {
        let hits = (0..total).filter(|&i| lands_in_target(i, depth[i], k, &t)).count();
        return hits as f64 / total as f64;
    }
    let mut rng = pair_rng(config.seed, source.index, target.index);
    let hits = index::sample(&mut rng, total, config.n_samples)
        .into_iter()
        .filter(|&i| lands_in_target(i, depth[i], k, &t))
        .count();
    hits as f64 / config.n_samples as f64
}

/// Runs the classification sweep over positions `0..n`.
///
/// `overlap_of(current, keyframe, anchor)` returns the overlaps of the frame
/// at position `current` against the keyframe and active-anchor positions.
/// `ids` maps positions to frame indices in the output.
pub fn extract_groups_with<F>(ids: &[usize], config: &KgeConfig, mut overlap_of: F) -> Grouping
where
    F: FnMut(usize, usize, usize) -> (f64, f64),
{
    let mut out = Grouping::default();
    let Some(&first) = ids.first() else {
        return out;
    };
    let mut keyframe = 0usize;
    let mut anchor = 0usize;
    let mut current = KeyframeGroup {
        keyframe: first,
        anchors: vec![first],
    };
    out.classes.push((first, FrameClass::Keyframe));
    for (pos, &id) in ids.iter().enumerate().skip(1) {
        let (overlap_key, overlap_anchor) = overlap_of(pos, keyframe, anchor);
        if overlap_key < config.t_key {
            out.groups.push(std::mem::replace(
                &mut current,
                KeyframeGroup {
                    keyframe: id,
                    anchors: vec![id],
                },
            ));
            keyframe = pos;
            anchor = pos;
            out.classes.push((id, FrameClass::Keyframe));
            continue;
        }
        if overlap_anchor < config.t_anchor {
            anchor = pos;
            current.anchors.push(id);
            out.classes.push((id, FrameClass::Anchor));
        } else {
            out.classes.push((id, FrameClass::Garbage));
        }
    }
    out.groups.push(current);
    out
}

/// Groups an ordered sequence of kept frames.
pub fn extract_groups(frames: &[&Frame], k: &CameraIntrinsics, config: &KgeConfig) -> Grouping {
    let ids: Vec<usize> = frames.iter().map(|f| f.index).collect();
    extract_groups_with(&ids, config, |cur, key, anchor| {
        let src = frames[cur];
        if key == anchor {
            let o = overlap(src, frames[key], k, config);
            (o, o)
        } else {
            rayon::join(
                || overlap(src, frames[key], k, config),
                || overlap(src, frames[anchor], k, config),
            )
        }
    })
}
