use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::local_graph::ColorHistogram;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColorRule {
    name: String,
    h: [usize; 2],
    s: [usize; 2],
    v: [usize; 2],
}

/// Maps quantized HSV bins to basic color terms. Rules are tried in order;
/// bins are inclusive ranges on a `bins`-per-axis grid.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorTable {
    bins: usize,
    rules: Vec<ColorRule>,
}

impl ColorTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: ColorTable = serde_json::from_str(text).map_err(|e| Error::json("color table", e))?;
        if t.bins == 0 {
            return Err(Error::Config("color table needs bins >= 1".into()));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../../data/color_names.json")).expect("builtin color table parses")
    }

    /// Name for bin `(h, s, v)` of a `c`-per-axis histogram.
    pub fn name_of(&self, c: usize, h: usize, s: usize, v: usize) -> Option<&str> {
        let scale = |b: usize| b * self.bins / c.max(1);
        let (h, s, v) = (scale(h), scale(s), scale(v));
        let inside = |x: usize, r: [usize; 2]| r[0] <= x && x <= r[1];
        self.rules
            .iter()
            .find(|r| inside(h, r.h) && inside(s, r.s) && inside(v, r.v))
            .map(|r| r.name.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }
}

/// Name of the fullest bin, lowest bin index on ties.
pub fn dominant_color<'t>(hist: &ColorHistogram, table: &'t ColorTable) -> Result<&'t str> {
    if hist.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let mut best = 0;
    for (i, &c) in hist.counts.iter().enumerate() {
        if c > hist.counts[best] {
            best = i;
        }
    }
    let (h, s, v) = hist.coords(best);
    table
        .name_of(hist.bins, h, s, v)
        .ok_or_else(|| Error::Config(format!("color table has no entry for bin ({h},{s},{v})")))
}
