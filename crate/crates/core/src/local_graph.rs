//! Per-frame local scene graphs: Gaussian object positions lifted from the
//! center of each box, HSV histograms, metric size and thumbnails.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::detection::{BBox, Label, RawDetection, RelationObservation};
use crate::error::{Error, Result};
use crate::frame::{back_project_unchecked, rgb_to_hsv, CameraIntrinsics, ColorImage, DepthMap, Frame, Pose};

/// Per-axis Gaussian over an object's 3-D position (population variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub mean: Vector3<f64>,
    pub var: Vector3<f64>,
    pub n: u64,
}

impl PositionEstimate {
    /// Exact pooled statistics of the union of both sample sets.
    pub fn pooled(&self, other: &PositionEstimate) -> PositionEstimate {
        let n = self.n + other.n;
        let (wa, wb) = (self.n as f64 / n as f64, other.n as f64 / n as f64);
        let mean = self.mean * wa + other.mean * wb;
        let mut var = Vector3::zeros();
        for j in 0..3 {
            // Σ(x - μ)² / n  =  wa(σa² + (μa - μ)²) + wb(σb² + (μb - μ)²)
            let da = self.mean[j] - mean[j];
            let db = other.mean[j] - mean[j];
            var[j] = (wa * (self.var[j] + da * da) + wb * (other.var[j] + db * db)).max(0.0);
        }
        PositionEstimate { mean, var, n }
    }

    pub fn std_dev(&self) -> Vector3<f64> {
        self.var.map(f64::sqrt)
    }
}

/// Per-axis sample mean and population variance; `None` when fewer than
/// `min_points` points are available.
pub fn estimate_position(points: &[Vector3<f64>], min_points: usize) -> Option<PositionEstimate> {
    if points.is_empty() || points.len() < min_points {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let var = points.iter().fold(Vector3::zeros(), |acc: Vector3<f64>, p| {
        let d = p - mean;
        acc + d.component_mul(&d)
    }) / n;
    Some(PositionEstimate {
        mean,
        var,
        n: points.len() as u64,
    })
}

/// `c x c x c` histogram over quantized (H, S, V).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorHistogram {
    pub bins: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ColorHistogram {
    pub fn empty(bins: usize) -> Self {
        ColorHistogram {
            bins,
            counts: vec![0; bins * bins * bins],
            total: 0,
        }
    }

    pub fn index(&self, h: usize, s: usize, v: usize) -> usize {
        (h * self.bins + s) * self.bins + v
    }

    /// Inverse of [`ColorHistogram::index`].
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let c = self.bins;
        (index / (c * c), (index / c) % c, index % c)
    }

    pub fn bin_of(&self, rgb: [u8; 3]) -> usize {
        let (h, s, v) = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
        let c = self.bins as f64;
        let q = |x: f64| ((x * c).floor() as usize).min(self.bins - 1);
        self.index(q(h / 360.0), q(s), q(v))
    }

    pub fn add(&mut self, rgb: [u8; 3]) {
        let i = self.bin_of(rgb);
        self.counts[i] += 1;
        self.total += 1;
    }

    pub fn merge(&self, other: &ColorHistogram) -> Result<ColorHistogram> {
        if self.bins != other.bins {
            return Err(Error::BinMismatch(self.bins, other.bins));
        }
        Ok(ColorHistogram {
            bins: self.bins,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            total: self.total + other.total,
        })
    }
}

/// Half-open integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRegion {
    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }

    /// Pixel cover of a real-valued box, clipped to the image.
    pub fn covering(bbox: &BBox, width: usize, height: usize) -> PixelRegion {
        let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        PixelRegion {
            x0: clamp(bbox.x1.floor(), width),
            y0: clamp(bbox.y1.floor(), height),
            x1: clamp(bbox.x2.ceil(), width),
            y1: clamp(bbox.y2.ceil(), height),
        }
    }
}

/// Middle cell of the 5x5 subdivision; boxes under 5 pixels on a side are
/// returned whole.
pub fn center_rectangle(region: PixelRegion) -> PixelRegion {
    let (w, h) = (region.width(), region.height());
    if w < 5 || h < 5 {
        return region;
    }
    PixelRegion {
        x0: region.x0 + 2 * w / 5,
        y0: region.y0 + 2 * h / 5,
        x1: region.x0 + 3 * w / 5,
        y1: region.y0 + 3 * h / 5,
    }
}

/// Lifts every valid-depth pixel of `region` into reference coordinates.
pub fn lift_to_reference(
    region: PixelRegion,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    camera_to_reference: &Pose,
) -> Vec<Vector3<f64>> {
    region
        .pixels()
        .filter_map(|(x, y)| {
            depth
                .meters(x, y, k.depth_scale)
                .map(|z| camera_to_reference.transform_point(&back_project_unchecked(x as f64, y as f64, z, k)))
        })
        .collect()
}

pub fn color_histogram(img: &ColorImage, region: PixelRegion, bins: usize) -> ColorHistogram {
    let mut h = ColorHistogram::empty(bins.max(1));
    for (x, y) in region.pixels() {
        h.add(img.get(x, y));
    }
    h
}

/// Width and height in meters of a box seen at mean depth `z_mean`.
pub fn estimate_metric_size(bbox: &BBox, z_mean: f64, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(z_mean > 0.0) {
        return Err(Error::NonPositiveDepth(z_mean));
    }
    Ok((bbox.width() * z_mean / k.fx, bbox.height() * z_mean / k.fy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thumbnail {
    pub image: ColorImage,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalNode {
    /// Detection id within the frame.
    pub temp_id: u32,
    pub labels: Vec<Label>,
    pub position: PositionEstimate,
    pub histogram: ColorHistogram,
    pub thumbnail: Thumbnail,
    /// Width and height in meters.
    pub size: [f64; 2],
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEdge {
    pub subject: u32,
    pub object: u32,
    pub predicate: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub frame: usize,
    pub nodes: Vec<LocalNode>,
    pub edges: Vec<LocalEdge>,
}

impl LocalGraph {
    pub fn node(&self, temp_id: u32) -> Option<&LocalNode> {
        self.nodes.iter().find(|n| n.temp_id == temp_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    /// Minimum valid depth samples in the center rectangle.
    pub min_points: usize,
    /// Label candidates kept per node.
    pub k: usize,
    /// Histogram bins per HSV axis.
    pub bins: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            min_points: 10,
            k: 5,
            bins: 8,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.bins == 0 || self.min_points == 0 {
            return Err(Error::Config("local.min_points, k and bins must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds one node per detection with enough valid depth; relations touching
/// a dropped detection are dropped too.
pub fn build_local_graph(
    frame: &Frame,
    detections: &[RawDetection],
    relations: &[RelationObservation],
    k: &CameraIntrinsics,
    config: &LocalConfig,
) -> LocalGraph {
    let mut nodes = Vec::with_capacity(detections.len());
    for det in detections {
        let region = PixelRegion::covering(&det.bbox, k.width, k.height);
        if region.area() == 0 {
            continue;
        }
        let center = center_rectangle(region);
        let mut depths = Vec::with_capacity(center.area());
        for (x, y) in center.pixels() {
            if let Some(z) = frame.depth.meters(x, y, k.depth_scale) {
                depths.push(z);
            }
        }
        let points = lift_to_reference(center, &frame.depth, k, &frame.pose);
        let Some(position) = estimate_position(&points, config.min_points) else {
            continue;
        };
        let z_mean = depths.iter().sum::<f64>() / depths.len() as f64;
        let (w, h) = estimate_metric_size(&det.bbox, z_mean, k).unwrap_or((0.0, 0.0));
        let mut labels = det.labels.clone();
        labels.truncate(config.k);
        let top = &labels[0];
        nodes.push(LocalNode {
            temp_id: det.id,
            thumbnail: Thumbnail {
                image: frame.color.crop(region.x0, region.y0, region.x1, region.y1),
                label: top.name.clone(),
                score: top.score,
            },
            labels,
            position,
            histogram: color_histogram(&frame.color, region, config.bins),
            size: [w, h],
            bbox: det.bbox,
        });
    }
    let edges = relations
        .iter()
        .filter(|r| {
            r.subject != r.object
                && nodes.iter().any(|n| n.temp_id == r.subject)
                && nodes.iter().any(|n| n.temp_id == r.object)
        })
        .map(|r| LocalEdge {
            subject: r.subject,
            object: r.object,
            predicate: r.predicate.clone(),
            score: r.score,
        })
        .collect();
    LocalGraph {
        frame: frame.index,
        nodes,
        edges,
    }
}
