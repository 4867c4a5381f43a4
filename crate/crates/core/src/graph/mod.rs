//! The global scene graph: nodes fused across frames, voted relation edges,
//! same-node detection and persistence.

mod dot;
mod merge;
mod persist;
mod similarity;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::Label;
use crate::error::{Error, Result};
use crate::local_graph::{ColorHistogram, LocalNode, PositionEstimate, Thumbnail};

pub use dot::to_dot;
pub use merge::{find_same_node, merge, merge_nodes, update_node, MergeOutcome};
pub use persist::{from_json_str, load, save, to_canonical_json, GRAPH_VERSION};
pub use similarity::{
    color_similarity, label_similarity, position_similarity, std_normal_cdf, total_similarity, EmbeddingProvider,
    SimConfig, Similarity, SimilarityWeights,
};

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneNode {
    pub id: NodeId,
    /// Up to k candidates, descending by score, unique names.
    pub labels: Vec<Label>,
    pub position: PositionEstimate,
    pub histogram: ColorHistogram,
    /// Width and height in meters, averaged with point-count weights.
    pub size: [f64; 2],
    pub thumbnail: Option<Thumbnail>,
}

impl SceneNode {
    pub fn from_local(id: NodeId, local: &LocalNode) -> Self {
        SceneNode {
            id,
            labels: local.labels.clone(),
            position: local.position,
            histogram: local.histogram.clone(),
            size: local.size,
            thumbnail: Some(local.thumbnail.clone()),
        }
    }

    pub fn point_count(&self) -> u64 {
        self.position.n
    }

    pub fn top_label(&self) -> &str {
        self.labels.first().map(|l| l.name.as_str()).unwrap_or("")
    }

    pub fn max_score(&self) -> f64 {
        self.labels.iter().map(|l| l.score).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateCategory {
    Action,
    Spatial,
    Description,
    Preposition,
    Comparison,
}

impl PredicateCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            PredicateCategory::Action => "action",
            PredicateCategory::Spatial => "spatial",
            PredicateCategory::Description => "description",
            PredicateCategory::Preposition => "preposition",
            PredicateCategory::Comparison => "comparison",
        }
    }
}

impl fmt::Display for PredicateCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Predicate to category table; unknown predicates are prepositions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredicateCategories(HashMap<String, PredicateCategory>);

impl PredicateCategories {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: HashMap<String, PredicateCategory> =
            serde_json::from_str(text).map_err(|e| Error::json("predicate categories", e))?;
        Ok(PredicateCategories(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/predicate_categories.json")).expect("builtin categories parse")
    }

    pub fn category_of(&self, predicate: &str) -> PredicateCategory {
        self.0.get(predicate).copied().unwrap_or(PredicateCategory::Preposition)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneEdge {
    pub subject: NodeId,
    pub object: NodeId,
    pub predicate: String,
    pub category: PredicateCategory,
    pub votes: u64,
}

/// Where a graph came from; kept in memory and in build reports only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub bundle: String,
    pub config_digest: String,
}

type EdgeKey = (NodeId, NodeId, String);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGraph3D {
    nodes: BTreeMap<NodeId, SceneNode>,
    edges: BTreeMap<EdgeKey, (PredicateCategory, u64)>,
    next_id: NodeId,
    pub provenance: Provenance,
}

impl SceneGraph3D {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn next_id(&self) -> NodeId {
        self.next_id
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &SceneNode> + Clone {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&SceneNode> {
        self.nodes.get(&id)
    }

    /// Edges ordered by (subject, object, predicate).
    pub fn edges(&self) -> impl Iterator<Item = SceneEdge> + '_ {
        self.edges.iter().map(|((s, o, p), (c, v))| SceneEdge {
            subject: *s,
            object: *o,
            predicate: p.clone(),
            category: *c,
            votes: *v,
        })
    }

    pub fn edge(&self, subject: NodeId, object: NodeId, predicate: &str) -> Option<SceneEdge> {
        let key = (subject, object, predicate.to_string());
        self.edges.get(&key).map(|(c, v)| SceneEdge {
            subject,
            object,
            predicate: key.2.clone(),
            category: *c,
            votes: *v,
        })
    }

    /// Inserts a node under a fresh id and returns the id.
    pub fn insert_node(&mut self, mut node: SceneNode) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        node.id = id;
        self.nodes.insert(id, node);
        id
    }

    /// Replaces an existing node, keeping its id.
    pub fn replace_node(&mut self, node: SceneNode) -> Result<()> {
        match self.nodes.get_mut(&node.id) {
            Some(slot) => {
                *slot = node;
                Ok(())
            }
            None => Err(Error::Graph(format!("no node {}", node.id))),
        }
    }

    /// Adds `votes` to an existing edge or inserts it.
    pub fn upsert_edge(
        &mut self,
        subject: NodeId,
        object: NodeId,
        predicate: &str,
        category: PredicateCategory,
        votes: u64,
    ) -> Result<()> {
        if subject == object {
            return Err(Error::Graph(format!("self-loop on node {subject}")));
        }
        for id in [subject, object] {
            if !self.nodes.contains_key(&id) {
                return Err(Error::Graph(format!("edge endpoint {id} does not exist")));
            }
        }
        self.edges
            .entry((subject, object, predicate.to_string()))
            .and_modify(|e| e.1 += votes)
            .or_insert((category, votes));
        Ok(())
    }

    /// For each ordered pair and category keeps only the predicates with the
    /// highest vote count.
    pub fn prune_edges(&mut self) {
        let mut best: BTreeMap<(NodeId, NodeId, PredicateCategory), u64> = BTreeMap::new();
        for ((s, o, _), (c, v)) in &self.edges {
            let b = best.entry((*s, *o, *c)).or_default();
            *b = (*b).max(*v);
        }
        self.edges.retain(|(s, o, _), (c, v)| best[&(*s, *o, *c)] == *v);
    }

    pub(crate) fn from_parts(nodes: Vec<SceneNode>, edges: Vec<SceneEdge>) -> Result<Self> {
        let mut g = SceneGraph3D::new();
        for n in nodes {
            let id = n.id;
            if g.nodes.insert(id, n).is_some() {
                return Err(Error::Graph(format!("duplicate node id {id}")));
            }
            g.next_id = g.next_id.max(id + 1);
        }
        for e in edges {
            let key = (e.subject, e.object, e.predicate.clone());
            if g.edges.contains_key(&key) {
                return Err(Error::Graph(format!(
                    "duplicate edge ({}, {}, {:?})",
                    e.subject, e.object, e.predicate
                )));
            }
            if e.votes == 0 {
                return Err(Error::Graph("edge with zero votes".into()));
            }
            g.upsert_edge(e.subject, e.object, &e.predicate, e.category, e.votes)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests;
