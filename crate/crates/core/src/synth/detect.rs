use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::render::{rasterize, Raster, Silhouette};
use super::{frame_rng, gaussian, NoiseSpec, TrajectorySpec, WorldSpec};
use crate::detection::{BBox, FrameDetections, Label, RawDetection, RelationObservation};
use crate::error::Result;
use crate::frame::{CameraIntrinsics, Pose};

/// Minimum visible area, in pixels, for an object to be detected.
pub const A_MIN: usize = 100;

fn noisy_score(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    (1.0 - gaussian(rng, sigma).abs()).clamp(0.0, 1.0)
}

fn jittered(s: &Silhouette, rng: &mut ChaCha8Rng, sigma: f64, k: &CameraIntrinsics) -> BBox {
    let (w, h) = (k.width as f64, k.height as f64);
    let mut v = [s.x0 as f64, s.y0 as f64, s.x1 as f64, s.y1 as f64];
    for c in &mut v {
        *c += gaussian(rng, sigma);
    }
    let x1 = v[0].clamp(0.0, w - 1.0);
    let y1 = v[1].clamp(0.0, h - 1.0);
    let x2 = v[2].clamp(x1 + 1.0, w);
    let y2 = v[3].clamp(y1 + 1.0, h);
    BBox::new(x1, y1, x2, y2)
}

fn confusion_for<'w>(world: &'w WorldSpec, class: &str, rng: &mut ChaCha8Rng) -> Option<&'w str> {
    if let Some(c) = world.confusions.get(class).filter(|c| !c.is_empty()) {
        return Some(&c[rng.random_range(0..c.len())]);
    }
    let others: Vec<&str> = world
        .objects
        .iter()
        .map(|o| o.class.as_str())
        .filter(|c| *c != class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    (!others.is_empty()).then(|| others[rng.random_range(0..others.len())])
}

fn truncated(s: &Silhouette, k: &CameraIntrinsics) -> bool {
    s.x0 == 0 || s.y0 == 0 || s.x1 == k.width || s.y1 == k.height
}

pub(crate) fn emit_from_raster(
    world: &WorldSpec,
    raster: &Raster,
    noise: &NoiseSpec,
    frame: usize,
    k: &CameraIntrinsics,
) -> FrameDetections {
    let mut rng = frame_rng(noise.seed, frame, 0);
    let sil = raster.silhouettes(world.objects.len());
    let mut out = FrameDetections::default();
    // object index -> detection id
    let mut emitted: BTreeMap<usize, u32> = BTreeMap::new();
    for (i, s) in sil.iter().enumerate() {
        if s.area < A_MIN || (noise.skip_truncated && truncated(s, k)) {
            continue;
        }
        let class = &world.objects[i].class;
        let score = noisy_score(&mut rng, noise.score_noise);
        let mut labels = vec![Label::new(class.clone(), score)];
        if rng.random_bool(noise.confusion_rate) {
            if let Some(c) = confusion_for(world, class, &mut rng) {
                labels.push(Label::new(c, score * rng.random_range(0.3..0.8)));
            }
        }
        let id = out.detections.len() as u32;
        emitted.insert(i, id);
        out.detections.push(RawDetection {
            id,
            bbox: jittered(s, &mut rng, noise.bbox_jitter, k),
            labels,
        });
    }

    for r in &world.relations {
        if let (Some(&s), Some(&o)) = (emitted.get(&r.subject), emitted.get(&r.object)) {
            let missed = rng.random_bool(noise.relation_miss_rate);
            let score = noisy_score(&mut rng, noise.score_noise);
            if !missed {
                out.relations.push(RelationObservation {
                    subject: s,
                    predicate: r.predicate.clone(),
                    object: o,
                    score,
                    frame,
                });
            }
        }
    }

    // false positives: duplicate boxes, phantom classes and invented relations
    let real = out.detections.len();
    for d in 0..real {
        if rng.random_bool(noise.spurious_rate) {
            let id = out.detections.len() as u32;
            if rng.random_bool(0.5) {
                let src = &out.detections[d];
                let shift = rng.random_range(-2.0..2.0);
                let b = src.bbox;
                let bbox = BBox::new(
                    (b.x1 + shift).clamp(0.0, b.x2 - 1.0),
                    b.y1,
                    (b.x2 + shift).clamp(b.x1 + 1.0, k.width as f64),
                    b.y2,
                );
                let l = &src.labels[0];
                let labels = vec![Label::new(l.name.clone(), l.score * rng.random_range(0.5..0.95))];
                out.detections.push(RawDetection { id, bbox, labels });
            } else {
                let c = &noise.spurious_classes[rng.random_range(0..noise.spurious_classes.len())];
                let labels = vec![Label::new(c.clone(), rng.random_range(0.5..0.95))];
                let (w, h) = (rng.random_range(20.0..80.0_f64), rng.random_range(20.0..80.0_f64));
                let (w, h) = (w.min(k.width as f64), h.min(k.height as f64));
                let x = rng.random_range(0.0..=(k.width as f64 - w));
                let y = rng.random_range(0.0..=(k.height as f64 - h));
                let bbox = BBox::new(x, y, x + w, y + h);
                out.detections.push(RawDetection { id, bbox, labels });
            }
        }
    }
    if real >= 2 {
        for d in 0..real {
            if rng.random_bool(noise.spurious_rate) {
                let mut o = rng.random_range(0..real - 1);
                if o >= d {
                    o += 1;
                }
                let p = &noise.spurious_predicates[rng.random_range(0..noise.spurious_predicates.len())];
                out.relations.push(RelationObservation {
                    subject: d as u32,
                    predicate: p.clone(),
                    object: o as u32,
                    score: rng.random_range(0.3..0.9),
                    frame,
                });
            }
        }
    }
    out
}

/// Detector output for one camera-to-world pose; a pure function of the
/// inputs, the noise seed and the frame index.
pub fn emit_detections(
    world: &WorldSpec,
    pose: &Pose,
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    frame: usize,
) -> FrameDetections {
    emit_from_raster(world, &rasterize(world, pose, k), noise, frame, k)
}

fn center(s: &Silhouette) -> (f64, f64) {
    ((s.x0 + s.x1) as f64 / 2.0, (s.y0 + s.y1) as f64 / 2.0)
}

/// Relation-dictionary corpus (`subject,predicate,object,d_pixel` CSV) as
/// seen along a trajectory. Every visible ordered pair yields its true
/// relations, or `near` when it has none; the spurious predicates appear
/// rarely so the prior learns they are implausible.
pub fn relation_corpus(
    world: &WorldSpec,
    trajectory: &TrajectorySpec,
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
) -> Result<String> {
    world.validate()?;
    let mut out = String::from("subject,predicate,object,d_pixel\n");
    let mut truth: BTreeMap<(usize, usize), Vec<&str>> = BTreeMap::new();
    for r in &world.relations {
        truth.entry((r.subject, r.object)).or_default().push(&r.predicate);
    }
    let mut rare_seen: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut last_distance: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (f, pose) in trajectory.poses()?.iter().enumerate() {
        let mut rng = frame_rng(noise.seed, f, 2);
        let sil = rasterize(world, pose, k).silhouettes(world.objects.len());
        let visible: Vec<usize> = (0..sil.len()).filter(|&i| sil[i].area >= A_MIN).collect();
        for &i in &visible {
            for &j in &visible {
                if i == j {
                    continue;
                }
                let ((ax, ay), (bx, by)) = (center(&sil[i]), center(&sil[j]));
                let d = (ax - bx).hypot(ay - by);
                let (s, o) = (&world.objects[i].class, &world.objects[j].class);
                match truth.get(&(i, j)) {
                    Some(ps) => ps.iter().for_each(|p| writeln!(out, "{s},{p},{o},{d:.1}").unwrap()),
                    None => writeln!(out, "{s},near,{o},{d:.1}").unwrap(),
                }
                for p in &noise.spurious_predicates {
                    if rng.random_bool(0.02) {
                        writeln!(out, "{s},{p},{o},{d:.1}").unwrap();
                        rare_seen.insert((s.clone(), p.clone(), o.clone()));
                    }
                }
                last_distance.insert((s.clone(), o.clone()), d);
            }
        }
    }
    for ((s, o), d) in &last_distance {
        for p in &noise.spurious_predicates {
            if !rare_seen.contains(&(s.clone(), p.clone(), o.clone())) {
                writeln!(out, "{s},{p},{o},{d:.1}").unwrap();
            }
        }
    }
    Ok(out)
}
