use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SceneNode;
use crate::detection::Label;
use crate::error::{Error, Result};
use crate::local_graph::{ColorHistogram, PositionEstimate};

/// Word vectors, unit-normalized on load.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingProvider {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingProvider {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses `word v1 ... vd` records. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = EmbeddingProvider::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let v: Vec<f64> = fields
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Embedding {
                        line: lineno,
                        reason: format!("bad number {t:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if v.is_empty() {
                return Err(Error::Embedding {
                    line: lineno,
                    reason: "no vector components".into(),
                });
            }
            if p.dim == 0 {
                p.dim = v.len();
            } else if v.len() != p.dim {
                return Err(Error::Embedding {
                    line: lineno,
                    reason: format!("dimension {} differs from {}", v.len(), p.dim),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Embedding {
                    line: lineno,
                    reason: "vector cannot be normalized".into(),
                });
            }
            p.vectors
                .insert(word.to_string(), v.into_iter().map(|x| x / norm).collect());
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Small table covering common household classes.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/embeddings.txt")).expect("builtin embeddings parse")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (va, vb) = (self.vectors.get(a)?, self.vectors.get(b)?);
        Some(va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
    }

    /// `(1 - cos) / 2`; words missing from the table are maximally distant.
    pub fn distance(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 0.0;
        }
        match self.cosine(a, b) {
            Some(c) => (1.0 - c) / 2.0,
            None => 1.0,
        }
    }
}

fn top(labels: &[Label]) -> &Label {
    labels
        .iter()
        .reduce(|best, l| if l.score > best.score { l } else { best })
        .expect("non-empty")
}

pub fn label_similarity(o: &[Label], c: &[Label], embeddings: &EmbeddingProvider) -> Result<f64> {
    if o.is_empty() || c.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let score = o.iter().chain(c).map(|l| l.score).fold(f64::NEG_INFINITY, f64::max);
    let common = o.iter().filter(|a| c.iter().any(|b| b.name == a.name)).count();
    let s = if common > 0 {
        common as f64 * score
    } else {
        (1.0 - embeddings.distance(&top(o).name, &top(c).name)) * score
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Per-axis penalty, normalized by the resident node's spread: 1 inside one
/// standard deviation, `Phi(-|Z|) / Phi(-1)` beyond.
pub fn position_similarity(o: &PositionEstimate, c: &PositionEstimate, sigma_floor: f64) -> f64 {
    let tail = std_normal_cdf(-1.0);
    (0..3)
        .map(|j| {
            let delta = (c.mean[j] - o.mean[j]).abs();
            let sigma = o.var[j].max(0.0).sqrt().max(sigma_floor);
            if delta < sigma {
                1.0
            } else if sigma > 0.0 {
                (std_normal_cdf(-delta / sigma) / tail).min(1.0)
            } else {
                0.0
            }
        })
        .product()
}

/// Histogram intersection normalized by the smaller mass.
pub fn color_similarity(o: &ColorHistogram, c: &ColorHistogram) -> Result<f64> {
    if o.bins != c.bins || o.counts.len() != c.counts.len() {
        return Err(Error::BinMismatch(o.bins, c.bins));
    }
    match (o.total, c.total) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let inter: u64 = o.counts.iter().zip(&c.counts).map(|(a, b)| *a.min(b)).sum();
    Ok((inter as f64 / o.total.min(c.total) as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub w_label: f64,
    pub w_color: f64,
    pub w_position: f64,
    pub threshold: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            w_label: 0.375,
            w_color: 0.25,
            w_position: 0.375,
            threshold: 0.7,
        }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_label, self.w_color, self.w_position, self.threshold];
        if ws.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("sim weights and threshold must lie in [0,1]".into()));
        }
        let sum = self.w_label + self.w_color + self.w_position;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("sim weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// The `[sim]` configuration section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub w_label: f64,
    pub w_color: f64,
    pub w_position: f64,
    pub threshold: f64,
    /// Label candidates kept per node.
    pub k: usize,
    /// Meters; stands in for a zero standard deviation.
    pub sigma_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let w = SimilarityWeights::default();
        SimConfig {
            w_label: w.w_label,
            w_color: w.w_color,
            w_position: w.w_position,
            threshold: w.threshold,
            k: 5,
            sigma_floor: 0.01,
        }
    }
}

impl SimConfig {
    pub fn weights(&self) -> SimilarityWeights {
        SimilarityWeights {
            w_label: self.w_label,
            w_color: self.w_color,
            w_position: self.w_position,
            threshold: self.threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.k == 0 {
            return Err(Error::Config("sim.k must be >= 1".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::Config("sim.sigma_floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub label: f64,
    pub color: f64,
    pub position: f64,
    pub total: f64,
}

/// Weighted same-node score of candidate `c` against resident node `o`.
pub fn total_similarity(
    o: &SceneNode,
    c: &SceneNode,
    weights: &SimilarityWeights,
    embeddings: &EmbeddingProvider,
    sigma_floor: f64,
) -> Result<Similarity> {
    let label = label_similarity(&o.labels, &c.labels, embeddings)?;
    let color = color_similarity(&o.histogram, &c.histogram)?;
    let position = position_similarity(&o.position, &c.position, sigma_floor);
    let total = weights.w_label * label + weights.w_color * color + weights.w_position * position;
    Ok(Similarity {
        label,
        color,
        position,
        total: total.clamp(0.0, 1.0),
    })
}
