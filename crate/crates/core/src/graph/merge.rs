use std::collections::BTreeMap;

use rayon::prelude::*;

use super::similarity::{total_similarity, EmbeddingProvider, SimConfig};
use super::{NodeId, PredicateCategories, SceneGraph3D, SceneNode};
use crate::detection::Label;
use crate::error::Result;
use crate::local_graph::LocalGraph;

/// Below this many resident nodes the scan stays on the calling thread.
const PARALLEL_MIN_NODES: usize = 64;

/// Best-scoring resident node clearing the threshold, lowest id on ties.
pub fn find_same_node(
    graph: &SceneGraph3D,
    candidate: &SceneNode,
    sim: &SimConfig,
    embeddings: &EmbeddingProvider,
) -> Result<Option<(NodeId, f64)>> {
    let weights = sim.weights();
    let score =
        |n: &SceneNode| total_similarity(n, candidate, &weights, embeddings, sim.sigma_floor).map(|s| (n.id, s.total));
    let scores: Vec<(NodeId, f64)> = if graph.node_count() >= PARALLEL_MIN_NODES {
        let nodes: Vec<&SceneNode> = graph.nodes().collect();
        nodes.par_iter().map(|n| score(n)).collect::<Result<_>>()?
    } else {
        graph.nodes().map(score).collect::<Result<_>>()?
    };
    // ids ascend, so strict improvement keeps the lowest id on ties
    let mut best: Option<(NodeId, f64)> = None;
    for (id, s) in scores {
        if s >= weights.threshold && best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    Ok(best)
}

fn merge_labels(a: &[Label], b: &[Label], k: usize) -> Vec<Label> {
    let mut by_name: BTreeMap<&str, f64> = BTreeMap::new();
    for l in a.iter().chain(b) {
        let s = by_name.entry(&l.name).or_insert(l.score);
        *s = s.max(l.score);
    }
    let mut out: Vec<Label> = by_name.into_iter().map(|(n, s)| Label::new(n, s)).collect();
    out.sort_by(|x, y| y.score.total_cmp(&x.score).then_with(|| x.name.cmp(&y.name)));
    out.truncate(k);
    out
}

/// Fuses an incoming observation `c` into resident node `o`.
pub fn update_node(o: &SceneNode, c: &SceneNode, k: usize) -> SceneNode {
    let position = o.position.pooled(&c.position);
    let (no, nc) = (o.position.n as f64, c.position.n as f64);
    let n = no + nc;
    let size = [
        (no * o.size[0] + nc * c.size[0]) / n,
        (no * o.size[1] + nc * c.size[1]) / n,
    ];
    let histogram = o.histogram.merge(&c.histogram).unwrap_or_else(|_| o.histogram.clone());
    let thumbnail = if o.thumbnail.is_none() || (c.thumbnail.is_some() && c.max_score() > o.max_score()) {
        c.thumbnail.clone()
    } else {
        o.thumbnail.clone()
    };
    SceneNode {
        id: o.id,
        labels: merge_labels(&o.labels, &c.labels, k),
        position,
        histogram,
        size,
        thumbnail,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutcome {
    /// Local detection id to global node id.
    pub id_map: BTreeMap<u32, NodeId>,
    pub inserted: usize,
    pub updated: usize,
}

/// Resolves every local node against the graph as it stood before this call,
/// then applies updates and insertions in local-id order.
pub fn merge_nodes(
    global: &mut SceneGraph3D,
    local: &LocalGraph,
    sim: &SimConfig,
    embeddings: &EmbeddingProvider,
) -> Result<MergeOutcome> {
    let candidates: Vec<SceneNode> = local.nodes.iter().map(|n| SceneNode::from_local(0, n)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| local.nodes[i].temp_id);

    let mut matches = Vec::with_capacity(candidates.len());
    for &i in &order {
        matches.push(find_same_node(global, &candidates[i], sim, embeddings)?.map(|(id, _)| id));
    }

    let mut out = MergeOutcome::default();
    for (&i, m) in order.iter().zip(matches) {
        let temp_id = local.nodes[i].temp_id;
        let cand = candidates[i].clone();
        let id = match m {
            Some(id) => {
                let merged = update_node(global.node(id).expect("matched node exists"), &cand, sim.k);
                global.replace_node(merged)?;
                out.updated += 1;
                id
            }
            None => {
                out.inserted += 1;
                global.insert_node(cand)
            }
        };
        out.id_map.insert(temp_id, id);
    }
    Ok(out)
}

/// Node merge followed by a one-vote upsert of every local edge.
pub fn merge(
    global: &mut SceneGraph3D,
    local: &LocalGraph,
    sim: &SimConfig,
    embeddings: &EmbeddingProvider,
    categories: &PredicateCategories,
) -> Result<MergeOutcome> {
    let outcome = merge_nodes(global, local, sim, embeddings)?;
    for e in &local.edges {
        let (Some(&s), Some(&o)) = (outcome.id_map.get(&e.subject), outcome.id_map.get(&e.object)) else {
            continue;
        };
        if s != o {
            global.upsert_edge(s, o, &e.predicate, categories.category_of(&e.predicate), 1)?;
        }
    }
    Ok(outcome)
}
