//! Structured queries over a scene graph: counting with attributes and
//! relations, and superlative lookups that return thumbnails.

mod color;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{NodeId, SceneGraph3D, SceneNode};

pub use color::{dominant_color, ColorTable};
pub use parser::{parse_query, ClassSel, Cmp, Cond, Dim, Query, Superlative};

/// Class name to its transitive ancestors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Taxonomy {
    ancestors: BTreeMap<String, BTreeSet<String>>,
}

impl Taxonomy {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds the closure of a direct-parent table, rejecting cycles.
    pub fn from_parents(parents: BTreeMap<String, Vec<String>>) -> Result<Self> {
        fn visit(
            c: &str,
            parents: &BTreeMap<String, Vec<String>>,
            done: &mut BTreeMap<String, BTreeSet<String>>,
            stack: &mut Vec<String>,
        ) -> Result<BTreeSet<String>> {
            if let Some(a) = done.get(c) {
                return Ok(a.clone());
            }
            if stack.iter().any(|s| s == c) {
                return Err(Error::Config(format!("taxonomy cycle through '{c}'")));
            }
            stack.push(c.to_string());
            let mut all = BTreeSet::new();
            for p in parents.get(c).into_iter().flatten() {
                all.insert(p.clone());
                all.extend(visit(p, parents, done, stack)?);
            }
            stack.pop();
            done.insert(c.to_string(), all.clone());
            Ok(all)
        }
        let mut done = BTreeMap::new();
        for c in parents.keys() {
            visit(c, &parents, &mut done, &mut Vec::new())?;
        }
        done.retain(|_, a| !a.is_empty());
        Ok(Taxonomy { ancestors: done })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parents: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| Error::json("taxonomy", e))?;
        Self::from_parents(parents)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// True when `class` is `label` or one of its ancestors.
    pub fn is_a(&self, label: &str, class: &str) -> bool {
        label == class || self.ancestors.get(label).is_some_and(|a| a.contains(class))
    }
}

/// Everything evaluation needs besides the graph.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub taxonomy: Taxonomy,
    pub colors: ColorTable,
    /// Graph file the thumbnails live next to.
    pub graph_path: Option<PathBuf>,
}

impl Default for QueryContext {
    fn default() -> Self {
        QueryContext {
            taxonomy: Taxonomy::empty(),
            colors: ColorTable::builtin(),
            graph_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResult {
    Count { count: usize, ids: Vec<NodeId> },
    Show { ids: Vec<NodeId>, thumbnails: Vec<String> },
}

impl QueryResult {
    /// One-line human answer.
    pub fn summary(&self) -> String {
        match self {
            QueryResult::Count { count, ids } => {
                let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                format!("{count} [{}]", ids.join(", "))
            }
            QueryResult::Show { ids, thumbnails } if ids.is_empty() && thumbnails.is_empty() => "none".into(),
            QueryResult::Show { ids, thumbnails } => {
                let mut parts: Vec<String> = ids.iter().map(|i| format!("node {i}")).collect();
                parts.extend(thumbnails.iter().cloned());
                parts.join(" ")
            }
        }
    }
}

fn class_matches(node: &SceneNode, class: &ClassSel, hierarchical: bool, tax: &Taxonomy) -> bool {
    match class {
        ClassSel::Any => true,
        ClassSel::Name(c) => {
            let top = node.top_label();
            top == c || (hierarchical && tax.is_a(top, c))
        }
    }
}

fn cond_holds(graph: &SceneGraph3D, node: &SceneNode, cond: &Cond, hier: bool, ctx: &QueryContext) -> bool {
    match cond {
        Cond::Color(name) => dominant_color(&node.histogram, &ctx.colors).is_ok_and(|c| c.eq_ignore_ascii_case(name)),
        Cond::Size { dim, cmp, value } => {
            let v = match dim {
                Dim::Width => node.size[0],
                Dim::Height => node.size[1],
            };
            cmp.holds(v, *value)
        }
        Cond::In { min, max } => (0..3).all(|j| {
            let (lo, hi) = (min[j].min(max[j]), min[j].max(max[j]));
            (lo..=hi).contains(&node.position.mean[j])
        }),
        Cond::Related { predicate, class } => graph.edges().any(|e| {
            e.subject == node.id
                && e.predicate == *predicate
                && graph
                    .node(e.object)
                    .is_some_and(|o| class_matches(o, class, hier, &ctx.taxonomy))
        }),
    }
}

fn thumbnail_ref(graph_path: &Path, id: NodeId) -> String {
    let stem = graph_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dir = graph_path.parent().unwrap_or(Path::new(""));
    dir.join(format!("{stem}_thumbs"))
        .join(format!("node_{id:06}.ppm"))
        .display()
        .to_string()
}

pub fn evaluate(graph: &SceneGraph3D, query: &Query, ctx: &QueryContext) -> QueryResult {
    let (class, hier) = match query {
        Query::Count {
            class, hierarchical, ..
        } => (class, *hierarchical),
        Query::Show { class, .. } => (class, false),
    };
    let matching = graph.nodes().filter(|n| {
        class_matches(n, class, hier, &ctx.taxonomy)
            && query.filters().iter().all(|c| cond_holds(graph, n, c, hier, ctx))
    });
    match query {
        Query::Count { .. } => {
            let ids: Vec<NodeId> = matching.map(|n| n.id).collect();
            QueryResult::Count { count: ids.len(), ids }
        }
        Query::Show { superlative, .. } => {
            let key = |n: &SceneNode| match superlative {
                Superlative::Biggest => -(n.size[0] * n.size[1]),
                Superlative::Smallest => n.size[0] * n.size[1],
                Superlative::Nearest => n.position.mean.norm(),
                Superlative::Farthest => -n.position.mean.norm(),
            };
            // ascending id order, strict improvement: ties keep the lowest id
            let best = matching.fold(None::<(&SceneNode, f64)>, |best, n| {
                let k = key(n);
                match best {
                    Some((_, bk)) if bk <= k => best,
                    _ => Some((n, k)),
                }
            });
            let ids: Vec<NodeId> = best.map(|(n, _)| n.id).into_iter().collect();
            let thumbnails = match &ctx.graph_path {
                Some(p) => best
                    .filter(|(n, _)| n.thumbnail.is_some())
                    .map(|(n, _)| thumbnail_ref(p, n.id))
                    .into_iter()
                    .collect(),
                None => Vec::new(),
            };
            QueryResult::Show { ids, thumbnails }
        }
    }
}

#[cfg(test)]
mod tests;
