//! Canonical graph JSON. One node or edge per line, fields in fixed order,
//! floats in shortest round-trip form, so equal graphs give equal bytes.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{PredicateCategory, SceneEdge, SceneGraph3D, SceneNode};
use crate::detection::Label;
use crate::error::{Error, Result};
use crate::local_graph::{ColorHistogram, PositionEstimate, Thumbnail};
use crate::netpbm;

pub const GRAPH_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PositionRecord {
    mean: [f64; 3],
    var: [f64; 3],
    n: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramRecord {
    c: usize,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u64,
    labels: Vec<Label>,
    position: PositionRecord,
    histogram: HistogramRecord,
    size: [f64; 2],
    thumbnail: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    subject: u64,
    object: u64,
    predicate: String,
    category: PredicateCategory,
    votes: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    version: u64,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

fn thumb_name(id: u64) -> String {
    format!("node_{id:06}.ppm")
}

fn node_record(n: &SceneNode, thumbs_dir: Option<&str>) -> NodeRecord {
    NodeRecord {
        id: n.id,
        labels: n.labels.clone(),
        position: PositionRecord {
            mean: n.position.mean.into(),
            var: n.position.var.into(),
            n: n.position.n,
        },
        histogram: HistogramRecord {
            c: n.histogram.bins,
            counts: n.histogram.counts.clone(),
        },
        size: n.size,
        thumbnail: match (thumbs_dir, &n.thumbnail) {
            (Some(dir), Some(_)) => Some(format!("{dir}/{}", thumb_name(n.id))),
            _ => None,
        },
    }
}

fn join_lines(items: Vec<String>) -> String {
    if items.is_empty() {
        "[]".to_string()
    } else {
        format!("[\n{}\n]", items.join(",\n"))
    }
}

/// Serializes the graph. With `thumbs_dir`, nodes that carry a thumbnail
/// reference `<thumbs_dir>/node_NNNNNN.ppm`; otherwise `null`.
pub fn to_canonical_json(graph: &SceneGraph3D, thumbs_dir: Option<&str>) -> String {
    let nodes = graph
        .nodes()
        .map(|n| serde_json::to_string(&node_record(n, thumbs_dir)).expect("node serializes"))
        .collect();
    let edges = graph
        .edges()
        .map(|e| {
            serde_json::to_string(&EdgeRecord {
                subject: e.subject,
                object: e.object,
                predicate: e.predicate,
                category: e.category,
                votes: e.votes,
            })
            .expect("edge serializes")
        })
        .collect();
    format!(
        "{{\"version\":{GRAPH_VERSION},\"nodes\":{},\"edges\":{}}}\n",
        join_lines(nodes),
        join_lines(edges)
    )
}

fn thumbnail_comments(t: &Thumbnail) -> Vec<String> {
    vec![format!("label {}", t.label), format!("score {:?}", t.score)]
}

fn parse_thumbnail(path: &Path) -> Result<Thumbnail> {
    let (image, comments) = netpbm::read_ppm(path)?;
    let mut label = String::new();
    let mut score = 0.0;
    for c in comments {
        if let Some(rest) = c.strip_prefix("label ") {
            label = rest.to_string();
        } else if let Some(rest) = c.strip_prefix("score ") {
            score = rest.trim().parse().map_err(|_| Error::Image {
                path: path.to_path_buf(),
                reason: format!("bad thumbnail score {rest:?}"),
            })?;
        }
    }
    Ok(Thumbnail { image, label, score })
}

/// Parses graph JSON. Thumbnail paths are resolved against `base`; without a
/// base, thumbnails are not loaded.
pub fn from_json_str(text: &str, base: Option<&Path>) -> Result<SceneGraph3D> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json("graph", e))?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != GRAPH_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: GRAPH_VERSION,
        });
    }
    let rec: GraphRecord = serde_json::from_value(value).map_err(|e| Error::json("graph", e))?;
    let _ = rec.version;
    let mut nodes = Vec::with_capacity(rec.nodes.len());
    for n in rec.nodes {
        let c = n.histogram.c;
        if c == 0 || n.histogram.counts.len() != c * c * c {
            return Err(Error::Graph(format!(
                "node {}: histogram has {} bins, expected {}",
                n.id,
                n.histogram.counts.len(),
                c * c * c
            )));
        }
        if n.labels.is_empty() {
            return Err(Error::Graph(format!("node {} has no labels", n.id)));
        }
        if n.position.n == 0 || n.position.var.iter().any(|v| *v < 0.0) {
            return Err(Error::Graph(format!("node {}: invalid position statistics", n.id)));
        }
        let thumbnail = match (&n.thumbnail, base) {
            (Some(rel), Some(dir)) => Some(parse_thumbnail(&dir.join(rel))?),
            _ => None,
        };
        let total = n.histogram.counts.iter().sum();
        nodes.push(SceneNode {
            id: n.id,
            labels: n.labels,
            position: PositionEstimate {
                mean: Vector3::from(n.position.mean),
                var: Vector3::from(n.position.var),
                n: n.position.n,
            },
            histogram: ColorHistogram {
                bins: c,
                counts: n.histogram.counts,
                total,
            },
            size: n.size,
            thumbnail,
        });
    }
    let edges = rec
        .edges
        .into_iter()
        .map(|e| SceneEdge {
            subject: e.subject,
            object: e.object,
            predicate: e.predicate,
            category: e.category,
            votes: e.votes,
        })
        .collect();
    SceneGraph3D::from_parts(nodes, edges)
}

fn thumbs_dir_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into());
    format!("{stem}_thumbs")
}

/// Writes `path` plus a sibling `<stem>_thumbs/` directory of PPM thumbnails.
pub fn save(graph: &SceneGraph3D, path: &Path) -> Result<()> {
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let dir_name = thumbs_dir_name(path);
    let has_thumbs = graph.nodes().any(|n| n.thumbnail.is_some());
    if has_thumbs {
        let dir = base.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for n in graph.nodes() {
            if let Some(t) = &n.thumbnail {
                let p = dir.join(thumb_name(n.id));
                fs::write(&p, netpbm::encode_ppm(&t.image, &thumbnail_comments(t))).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let text = to_canonical_json(graph, Some(&dir_name));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SceneGraph3D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    from_json_str(&text, Some(base))
}
