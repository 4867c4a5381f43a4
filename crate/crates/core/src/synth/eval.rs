use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::Serialize;

use super::GroundTruth;
use crate::error::Result;
use crate::graph::{NodeId, SceneGraph3D};
use crate::query::Taxonomy;

/// Match radius in multiples of an object's largest extent.
const RADIUS_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMatch {
    pub node: NodeId,
    pub object: usize,
    pub distance: f64,
    /// False when the object had already been claimed by a closer node.
    pub primary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub nodes: usize,
    pub objects: usize,
    pub matched_objects: usize,
    pub duplicates: usize,
    pub spurious_nodes: usize,
    pub node_precision: f64,
    pub node_recall: f64,
    /// Over primary matches; `None` when nothing matched.
    pub position_rmse: Option<f64>,
    pub edges: usize,
    pub correct_edges: usize,
    pub spurious_edges: usize,
    pub relations: usize,
    pub recalled_relations: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub matches: Vec<NodeMatch>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores `graph` against the known world.
///
/// Candidate (node, object) pairs need the node's top label to be the
/// object's class or one of its taxonomy ancestors, and the node mean within
/// three largest-extents of the object center. Pairs are taken greedily by
/// ascending distance (ties by node id, then object index); a node already
/// used is skipped, and a node reaching an already claimed object counts as
/// a duplicate of it.
pub fn evaluate_graph(graph: &SceneGraph3D, truth: &GroundTruth) -> Result<Metrics> {
    let taxonomy = Taxonomy::from_parents(truth.taxonomy.clone())?;
    let mut pairs: Vec<(f64, NodeId, usize)> = Vec::new();
    for n in graph.nodes() {
        for (j, o) in truth.objects.iter().enumerate() {
            if !taxonomy.is_a(&o.class, n.top_label()) {
                continue;
            }
            let d = (n.position.mean - Vector3::from(o.position)).norm();
            let reach = RADIUS_FACTOR * o.extents.iter().copied().fold(0.0, f64::max);
            if d <= reach {
                pairs.push((d, n.id, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used: BTreeSet<NodeId> = BTreeSet::new();
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    let mut matches = Vec::new();
    for (d, n, j) in pairs {
        if !used.insert(n) {
            continue;
        }
        matches.push(NodeMatch {
            node: n,
            object: j,
            distance: d,
            primary: claimed.insert(j),
        });
    }
    matches.sort_by_key(|m| m.node);

    let primary: Vec<&NodeMatch> = matches.iter().filter(|m| m.primary).collect();
    let duplicates = matches.len() - primary.len();
    let nodes = graph.node_count();
    let position_rmse = (!primary.is_empty())
        .then(|| (primary.iter().map(|m| m.distance * m.distance).sum::<f64>() / primary.len() as f64).sqrt());

    let object_of: BTreeMap<NodeId, usize> = matches.iter().map(|m| (m.node, m.object)).collect();
    let gt: BTreeSet<(usize, &str, usize)> = truth
        .relations
        .iter()
        .map(|r| (r.subject, r.predicate.as_str(), r.object))
        .collect();
    let mut hit: BTreeSet<(usize, &str, usize)> = BTreeSet::new();
    let mut edges = 0;
    let mut correct = 0;
    for e in graph.edges() {
        edges += 1;
        if let (Some(&s), Some(&o)) = (object_of.get(&e.subject), object_of.get(&e.object)) {
            let t = truth
                .relations
                .iter()
                .find(|r| r.subject == s && r.object == o && r.predicate == e.predicate);
            if let Some(t) = t {
                correct += 1;
                hit.insert((t.subject, t.predicate.as_str(), t.object));
            }
        }
    }

    Ok(Metrics {
        nodes,
        objects: truth.objects.len(),
        matched_objects: primary.len(),
        duplicates,
        spurious_nodes: nodes - matches.len(),
        node_precision: ratio(primary.len(), nodes),
        node_recall: if truth.objects.is_empty() {
            1.0
        } else {
            primary.len() as f64 / truth.objects.len() as f64
        },
        position_rmse,
        edges,
        correct_edges: correct,
        spurious_edges: edges - correct,
        relations: gt.len(),
        recalled_relations: hit.len(),
        edge_precision: ratio(correct, edges),
        edge_recall: ratio(hit.len(), gt.len()),
        matches,
    })
}
