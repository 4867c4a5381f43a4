//! Spurious detection rejection: box deduplication, class blocklisting,
//! relation voting within a keyframe group, and the relation-dictionary
//! prior that prunes implausible triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::CameraIntrinsics;

/// Axis-aligned pixel box `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub score: f64,
}

impl Label {
    pub fn new(name: impl Into<String>, score: f64) -> Self {
        Label {
            name: name.into(),
            score,
        }
    }
}

/// One recognizer output: a box with ranked label candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub id: u32,
    pub bbox: BBox,
    pub labels: Vec<Label>,
}

impl RawDetection {
    pub fn top_label(&self) -> Option<&Label> {
        self.labels.first()
    }

    pub fn top_score(&self) -> f64 {
        self.labels.first().map_or(0.0, |l| l.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationObservation {
    pub subject: u32,
    pub predicate: String,
    pub object: u32,
    pub score: f64,
    /// Index of the observing frame; filled in by the bundle loader.
    #[serde(skip)]
    pub frame: usize,
}

/// Contents of one `NNNNNN.det.json` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDetections {
    #[serde(default)]
    pub detections: Vec<RawDetection>,
    #[serde(default)]
    pub relations: Vec<RelationObservation>,
}

impl FrameDetections {
    pub fn validate(&self, k: &CameraIntrinsics) -> Result<()> {
        let mut ids = BTreeSet::new();
        for d in &self.detections {
            let b = &d.bbox;
            if !(b.x1 < b.x2 && b.y1 < b.y2) {
                return Err(Error::Bundle(format!("detection {}: degenerate bbox", d.id)));
            }
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > k.width as f64 || b.y2 > k.height as f64 {
                return Err(Error::Bundle(format!("detection {}: bbox outside image", d.id)));
            }
            if d.labels.is_empty() || d.labels.iter().any(|l| l.name.is_empty()) {
                return Err(Error::Bundle(format!("detection {}: empty label", d.id)));
            }
            if d.labels.iter().any(|l| !(0.0..=1.0).contains(&l.score)) {
                return Err(Error::Bundle(format!("detection {}: score outside [0,1]", d.id)));
            }
            if d.labels.windows(2).any(|w| w[0].score < w[1].score) {
                return Err(Error::Bundle(format!("detection {}: labels not descending", d.id)));
            }
            if !ids.insert(d.id) {
                return Err(Error::Bundle(format!("duplicate detection id {}", d.id)));
            }
        }
        for r in &self.relations {
            if r.subject == r.object {
                return Err(Error::Bundle(format!("self relation on detection {}", r.subject)));
            }
            if !ids.contains(&r.subject) || !ids.contains(&r.object) {
                return Err(Error::Bundle(format!(
                    "relation {} -{}-> {} references a missing detection",
                    r.subject, r.predicate, r.object
                )));
            }
        }
        Ok(())
    }
}

/// Greedy non-maximum suppression. Candidates are visited by top score
/// (descending) then id (ascending); a candidate is dropped when its IoU with
/// an already kept box reaches `iou_threshold`.
pub fn nms(dets: &[RawDetection], iou_threshold: f64) -> Vec<RawDetection> {
    let mut order: Vec<&RawDetection> = dets.iter().collect();
    order.sort_by(|a, b| b.top_score().total_cmp(&a.top_score()).then(a.id.cmp(&b.id)));
    let mut kept: Vec<RawDetection> = Vec::new();
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassBlocklist(BTreeSet<String>);

const DEFAULT_BLOCKLIST: &str = include_str!("../data/blocklist.txt");

impl ClassBlocklist {
    pub fn empty() -> Self {
        ClassBlocklist::default()
    }

    /// One label per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        ClassBlocklist(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    /// The shipped list of outdoor, structural and dynamic classes.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_BLOCKLIST)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Drops detections whose highest-score label is blocklisted.
pub fn filter_blocklist(dets: &[RawDetection], blocklist: &ClassBlocklist) -> Vec<RawDetection> {
    dets.iter()
        .filter(|d| d.top_label().is_none_or(|l| !blocklist.contains(&l.name)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct VotedRelation<N> {
    pub subject: N,
    pub object: N,
    pub predicate: String,
    pub count: usize,
}

/// Counts predicates per ordered `(subject, object)` pair and keeps every
/// predicate reaching the pair's maximum count. Output is sorted by pair,
/// then predicate.
pub fn vote_relations<N, I>(observations: I) -> Vec<VotedRelation<N>>
where
    N: Ord + Clone,
    I: IntoIterator<Item = (N, N, String)>,
{
    let mut tally: BTreeMap<(N, N), BTreeMap<String, usize>> = BTreeMap::new();
    for (s, o, p) in observations {
        *tally.entry((s, o)).or_default().entry(p).or_default() += 1;
    }
    let mut out = Vec::new();
    for ((s, o), preds) in tally {
        let best = preds.values().copied().max().unwrap_or(0);
        for (p, c) in preds {
            if c == best {
                out.push(VotedRelation {
                    subject: s.clone(),
                    object: o.clone(),
                    predicate: p,
                    count: c,
                });
            }
        }
    }
    out
}

/// Frequency prior with a Gaussian over subject/object pixel distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DictEntry {
    pub prob: f64,
    pub dist_mu: f64,
    pub dist_sigma: f64,
}

/// `Pr_dict * phi(d) / phi(mu)`, i.e. the frequency prior scaled by an
/// unnormalized Gaussian that equals one at the mean distance.
pub fn relation_probability(entry: &DictEntry, d_pixel: f64) -> f64 {
    let z = (d_pixel - entry.dist_mu) / entry.dist_sigma;
    entry.prob * (-0.5 * z * z).exp()
}

pub type TripleKey = (String, String, String);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationDictionary {
    entries: BTreeMap<TripleKey, DictEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictFile {
    entries: Vec<DictRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictRecord {
    subject: String,
    predicate: String,
    object: String,
    prob: f64,
    dist_mu: f64,
    dist_sigma: f64,
}

const SAMPLE_DICTIONARY: &str = include_str!("../data/sample_dictionary.json");

impl RelationDictionary {
    pub const DEFAULT_SIGMA_FLOOR: f64 = 10.0;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, subject: &str, predicate: &str, object: &str) -> Option<&DictEntry> {
        self.entries
            .get(&(subject.to_string(), predicate.to_string(), object.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&TripleKey, &DictEntry)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, key: TripleKey, entry: DictEntry) {
        self.entries.insert(key, entry);
    }

    /// Checks value ranges and that predicate probabilities for each
    /// subject/object pair sum to at most one.
    pub fn validate(&self) -> Result<()> {
        let mut mass: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for ((s, p, o), e) in &self.entries {
            if !(0.0..=1.0).contains(&e.prob) || e.dist_mu < 0.0 || e.dist_sigma <= 0.0 {
                return Err(Error::Dictionary(format!("bad entry ({s},{p},{o}): {e:?}")));
            }
            *mass.entry((s, o)).or_default() += e.prob;
        }
        if let Some(((s, o), m)) = mass.iter().find(|(_, &m)| m > 1.0 + 1e-6) {
            return Err(Error::Dictionary(format!("probabilities for ({s},*,{o}) sum to {m}")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DictFile = serde_json::from_str(text).map_err(|e| Error::json("relation dictionary", e))?;
        let dict = RelationDictionary {
            entries: file
                .entries
                .into_iter()
                .map(|r| {
                    (
                        (r.subject, r.predicate, r.object),
                        DictEntry {
                            prob: r.prob,
                            dist_mu: r.dist_mu,
                            dist_sigma: r.dist_sigma,
                        },
                    )
                })
                .collect(),
        };
        dict.validate()?;
        Ok(dict)
    }

    pub fn to_json(&self) -> String {
        let file = DictFile {
            entries: self
                .entries
                .iter()
                .map(|((s, p, o), e)| DictRecord {
                    subject: s.clone(),
                    predicate: p.clone(),
                    object: o.clone(),
                    prob: e.prob,
                    dist_mu: e.dist_mu,
                    dist_sigma: e.dist_sigma,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("dictionary serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Small bundled dictionary covering common indoor triples.
    pub fn sample() -> Self {
        Self::from_json(SAMPLE_DICTIONARY).expect("bundled dictionary is valid")
    }

    /// Builds the prior from a `subject,predicate,object,d_pixel` corpus.
    /// A leading header line naming the columns is tolerated.
    pub fn build_from_corpus<R: Read>(corpus: R, sigma_floor: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(corpus);
        let mut samples: BTreeMap<TripleKey, Vec<f64>> = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| Error::Corpus {
                line,
                reason: e.to_string(),
            })?;
            if rec.len() != 4 {
                return Err(Error::Corpus {
                    line,
                    reason: format!("expected 4 fields, found {}", rec.len()),
                });
            }
            if line == 1 && &rec[3] == "d_pixel" {
                continue;
            }
            let d: f64 = rec[3].parse().map_err(|_| Error::Corpus {
                line,
                reason: format!("bad distance {:?}", &rec[3]),
            })?;
            if !d.is_finite() || d < 0.0 || rec[0].is_empty() || rec[1].is_empty() || rec[2].is_empty() {
                return Err(Error::Corpus {
                    line,
                    reason: "empty name or invalid distance".into(),
                });
            }
            samples
                .entry((rec[0].to_string(), rec[1].to_string(), rec[2].to_string()))
                .or_default()
                .push(d);
        }

        let mut pair_totals: BTreeMap<(String, String), usize> = BTreeMap::new();
        for ((s, _, o), ds) in &samples {
            *pair_totals.entry((s.clone(), o.clone())).or_default() += ds.len();
        }
        let mut dict = RelationDictionary::new();
        for (key, ds) in samples {
            let n = ds.len();
            let total = pair_totals[&(key.0.clone(), key.2.clone())];
            let mu = ds.iter().sum::<f64>() / n as f64;
            let sigma = if n < 2 {
                sigma_floor
            } else {
                let ss: f64 = ds.iter().map(|d| (d - mu) * (d - mu)).sum();
                (ss / (n - 1) as f64).sqrt().max(sigma_floor)
            };
            dict.insert(
                key,
                DictEntry {
                    prob: n as f64 / total as f64,
                    dist_mu: mu,
                    dist_sigma: sigma,
                },
            );
        }
        Ok(dict)
    }
}

/// A voted relation resolved to node labels and an observed pixel distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRelation<N> {
    pub subject: N,
    pub object: N,
    pub subject_label: String,
    pub object_label: String,
    pub predicate: String,
    pub d_pixel: f64,
    pub count: usize,
}

/// Keeps relations whose prior probability reaches `threshold`. Triples the
/// dictionary has never seen pass through.
pub fn apply_prior<N: Clone>(
    relations: &[LabeledRelation<N>],
    dictionary: &RelationDictionary,
    threshold: f64,
) -> Vec<LabeledRelation<N>> {
    relations
        .iter()
        .filter(
            |r| match dictionary.get(&r.subject_label, &r.predicate, &r.object_label) {
                Some(entry) => relation_probability(entry, r.d_pixel) >= threshold,
                None => true,
            },
        )
        .cloned()
        .collect()
}
