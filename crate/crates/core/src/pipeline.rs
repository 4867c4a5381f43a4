//! End-to-end graph construction: blur gate, keyframe grouping, detection
//! filtering, local graphs, node merging and per-group relation voting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::{variance_of_laplacian, BlurDecision, BlurGate, BlurGateConfig};
use crate::bundle::{load_bundle, FrameBundle};
use crate::detection::{
    apply_prior, filter_blocklist, nms, vote_relations, ClassBlocklist, LabeledRelation, RelationDictionary,
    RelationObservation,
};
use crate::error::{Error, Result};
use crate::frame::{to_luminance, Frame};
use crate::graph::{
    merge, merge_nodes, EmbeddingProvider, MergeOutcome, NodeId, PredicateCategories, SceneGraph3D, SceneNode,
    SimConfig,
};
use crate::keyframe::{extract_groups, FrameClass, Grouping, KeyframeGroup, KgeConfig};
use crate::local_graph::{build_local_graph, LocalConfig, LocalGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdrConfig {
    pub nms_iou: f64,
    pub prior_threshold: f64,
    /// Bundled list when unset.
    pub blocklist_path: Option<PathBuf>,
    /// Bundled sample dictionary when unset.
    pub dictionary_path: Option<PathBuf>,
}

impl Default for SdrConfig {
    fn default() -> Self {
        SdrConfig {
            nms_iou: 0.3,
            prior_threshold: 0.5,
            blocklist_path: None,
            dictionary_path: None,
        }
    }
}

impl SdrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!(
                "sdr.nms_iou must be in [0,1], got {}",
                self.nms_iou
            )));
        }
        if !(0.0..=1.0).contains(&self.prior_threshold) {
            return Err(Error::Config(format!(
                "sdr.prior_threshold must be in [0,1], got {}",
                self.prior_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingsConfig {
    /// Bundled table when unset.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Predicate-to-category table; bundled when unset.
    pub predicate_categories: Option<PathBuf>,
}

/// Which stages run. All on is the full pipeline; turning stages off walks
/// back down the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub abir: bool,
    pub kge: bool,
    pub sdr: bool,
    pub same_node: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            abir: true,
            kge: true,
            sdr: true,
            same_node: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed, mixed into every sampling stream.
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub stages: Stages,
    pub abir: BlurGateConfig,
    pub kge: KgeConfig,
    pub sdr: SdrConfig,
    pub sim: SimConfig,
    pub local: LocalConfig,
    pub embeddings: EmbeddingsConfig,
    pub paths: PathsConfig,
}

fn toml_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.abir.validate()?;
        self.kge.validate()?;
        self.sdr.validate()?;
        self.sim.validate()?;
        self.local.validate()?;
        if self.sim.k != self.local.k {
            log::debug!("sim.k {} differs from local.k {}", self.sim.k, self.local.k);
        }
        Ok(())
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML, applies `key=value` overrides (dotted keys, TOML values;
    /// bare words become strings) and validates the result.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut t = &mut table;
            for part in &path[..path.len() - 1] {
                let entry = t
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                t = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a section")))?;
            }
            t.insert(path[path.len() - 1].to_string(), toml_value(value.trim()));
        }
        Self::from_table(table)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn kge_effective(&self) -> KgeConfig {
        KgeConfig {
            seed: self.kge.seed ^ self.seed,
            ..self.kge
        }
    }
}

/// Lookup tables the stages consult, loaded once per run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub blocklist: ClassBlocklist,
    pub dictionary: RelationDictionary,
    pub embeddings: EmbeddingProvider,
    pub categories: PredicateCategories,
}

impl Default for Resources {
    fn default() -> Self {
        Resources {
            blocklist: ClassBlocklist::builtin(),
            dictionary: RelationDictionary::sample(),
            embeddings: EmbeddingProvider::builtin(),
            categories: PredicateCategories::builtin(),
        }
    }
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let d = Resources::default();
        Ok(Resources {
            blocklist: cfg
                .sdr
                .blocklist_path
                .as_deref()
                .map_or(Ok(d.blocklist), ClassBlocklist::load)?,
            dictionary: cfg
                .sdr
                .dictionary_path
                .as_deref()
                .map_or(Ok(d.dictionary), RelationDictionary::load)?,
            embeddings: cfg
                .embeddings
                .path
                .as_deref()
                .map_or(Ok(d.embeddings), EmbeddingProvider::load)?,
            categories: cfg
                .paths
                .predicate_categories
                .as_deref()
                .map_or(Ok(d.categories), PredicateCategories::load)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameBlur {
    pub frame: usize,
    pub score: f64,
    pub threshold: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub load_ms: f64,
    pub blur_ms: f64,
    pub kge_ms: f64,
    pub local_ms: f64,
    pub merge_ms: f64,
    pub relations_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildReport {
    pub bundle: String,
    pub config_digest: String,
    pub stages: Stages,
    pub frames_total: usize,
    pub frames_kept: usize,
    pub frames_rejected: usize,
    pub frames_processed: usize,
    pub groups: usize,
    pub nodes: usize,
    pub edges: usize,
    pub nodes_inserted: usize,
    pub nodes_updated: usize,
    pub relations_voted: usize,
    pub relations_pruned: usize,
    pub blur: Vec<FrameBlur>,
    pub timings: StageTimings,
}

impl BuildReport {
    /// Short human summary.
    pub fn summary(&self) -> String {
        format!(
            "{} frames: {} kept, {} rejected, {} processed in {} groups; {} nodes, {} edges; {:.1} ms",
            self.frames_total,
            self.frames_kept,
            self.frames_rejected,
            self.frames_processed,
            self.groups,
            self.nodes,
            self.edges,
            self.timings.total_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub graph: SceneGraph3D,
    pub grouping: Grouping,
    pub report: BuildReport,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn fnv1a(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Relation observation resolved to graph nodes.
struct Observed {
    subject: NodeId,
    object: NodeId,
    predicate: String,
    d_pixel: f64,
}

fn local_for(frame: &Frame, cfg: &PipelineConfig, res: &Resources, k: &crate::frame::CameraIntrinsics) -> LocalGraph {
    let raw = &frame.detections.detections;
    let dets = if cfg.stages.sdr {
        filter_blocklist(&nms(raw, cfg.sdr.nms_iou), &res.blocklist)
    } else {
        raw.clone()
    };
    let rels: Vec<RelationObservation> = frame.detections.relations.clone();
    build_local_graph(frame, &dets, &rels, k, &cfg.local)
}

fn insert_all(global: &mut SceneGraph3D, local: &LocalGraph) -> MergeOutcome {
    let mut out = MergeOutcome::default();
    let mut nodes: Vec<_> = local.nodes.iter().collect();
    nodes.sort_by_key(|n| n.temp_id);
    for n in nodes {
        let id = global.insert_node(SceneNode::from_local(0, n));
        out.id_map.insert(n.temp_id, id);
        out.inserted += 1;
    }
    out
}

fn blur_pass(frames: &[Frame], cfg: &BlurGateConfig) -> Result<Vec<FrameBlur>> {
    let scores: Vec<f64> = frames
        .par_iter()
        .map(|f| variance_of_laplacian(&to_luminance(&f.color)))
        .collect::<Result<_>>()?;
    let mut gate = BlurGate::new(*cfg);
    Ok(frames
        .iter()
        .zip(scores)
        .map(|(f, s)| {
            let v = gate.classify(s);
            FrameBlur {
                frame: f.index,
                score: s,
                threshold: v.threshold,
                kept: v.decision == BlurDecision::Keep,
            }
        })
        .collect())
}

fn build_inner(bundle: &FrameBundle, cfg: &PipelineConfig, res: &Resources) -> Result<BuildOutput> {
    let start = Instant::now();
    let k = &bundle.intrinsics;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let blur = if cfg.stages.abir {
        blur_pass(&bundle.frames, &cfg.abir)?
    } else {
        Vec::new()
    };
    let kept: Vec<&Frame> = if cfg.stages.abir {
        bundle
            .frames
            .iter()
            .zip(&blur)
            .filter(|(_, b)| b.kept)
            .map(|(f, _)| f)
            .collect()
    } else {
        bundle.frames.iter().collect()
    };
    timings.blur_ms = ms(t);

    let t = Instant::now();
    let grouping = if cfg.stages.kge {
        extract_groups(&kept, k, &cfg.kge_effective())
    } else {
        // every kept frame stands alone
        Grouping {
            groups: kept
                .iter()
                .map(|f| KeyframeGroup {
                    keyframe: f.index,
                    anchors: vec![f.index],
                })
                .collect(),
            classes: kept.iter().map(|f| (f.index, FrameClass::Keyframe)).collect(),
        }
    };
    timings.kge_ms = ms(t);

    let by_index: BTreeMap<usize, &Frame> = kept.iter().map(|f| (f.index, *f)).collect();
    let mut graph = SceneGraph3D::new();
    let (mut inserted, mut updated, mut voted, mut pruned, mut processed) = (0, 0, 0, 0, 0);
    for group in &grouping.groups {
        let t = Instant::now();
        let frames: Vec<&Frame> = group.anchors.iter().map(|i| by_index[i]).collect();
        let locals: Vec<LocalGraph> = frames.par_iter().map(|f| local_for(f, cfg, res, k)).collect();
        processed += frames.len();
        timings.local_ms += ms(t);

        let t = Instant::now();
        let mut observed: Vec<Observed> = Vec::new();
        for local in &locals {
            let outcome = match (cfg.stages.same_node, cfg.stages.sdr) {
                (false, _) => insert_all(&mut graph, local),
                (true, true) => merge_nodes(&mut graph, local, &cfg.sim, &res.embeddings)?,
                (true, false) => merge(&mut graph, local, &cfg.sim, &res.embeddings, &res.categories)?,
            };
            inserted += outcome.inserted;
            updated += outcome.updated;
            if !cfg.stages.same_node && !cfg.stages.sdr {
                for e in &local.edges {
                    let (s, o) = (outcome.id_map[&e.subject], outcome.id_map[&e.object]);
                    graph.upsert_edge(s, o, &e.predicate, res.categories.category_of(&e.predicate), 1)?;
                }
            }
            if cfg.stages.sdr {
                for e in &local.edges {
                    let (Some(&s), Some(&o)) = (outcome.id_map.get(&e.subject), outcome.id_map.get(&e.object)) else {
                        continue;
                    };
                    let (Some(a), Some(b)) = (local.node(e.subject), local.node(e.object)) else {
                        continue;
                    };
                    observed.push(Observed {
                        subject: s,
                        object: o,
                        predicate: e.predicate.clone(),
                        d_pixel: a.bbox.center_distance(&b.bbox),
                    });
                }
            }
        }
        timings.merge_ms += ms(t);

        let t = Instant::now();
        if cfg.stages.sdr {
            let winners = vote_relations(
                observed
                    .iter()
                    .filter(|r| r.subject != r.object)
                    .map(|r| (r.subject, r.object, r.predicate.clone())),
            );
            let labeled: Vec<LabeledRelation<NodeId>> = winners
                .into_iter()
                .map(|w| {
                    let ds: Vec<f64> = observed
                        .iter()
                        .filter(|r| r.subject == w.subject && r.object == w.object && r.predicate == w.predicate)
                        .map(|r| r.d_pixel)
                        .collect();
                    let label = |id: NodeId| graph.node(id).map_or(String::new(), |n| n.top_label().to_string());
                    LabeledRelation {
                        subject_label: label(w.subject),
                        object_label: label(w.object),
                        subject: w.subject,
                        object: w.object,
                        predicate: w.predicate,
                        d_pixel: ds.iter().sum::<f64>() / ds.len() as f64,
                        count: w.count,
                    }
                })
                .collect();
            let survivors = apply_prior(&labeled, &res.dictionary, cfg.sdr.prior_threshold);
            voted += labeled.len();
            pruned += labeled.len() - survivors.len();
            for r in survivors {
                let cat = res.categories.category_of(&r.predicate);
                graph.upsert_edge(r.subject, r.object, &r.predicate, cat, r.count as u64)?;
            }
        }
        graph.prune_edges();
        timings.relations_ms += ms(t);
    }

    timings.total_ms = ms(start);
    let report = BuildReport {
        bundle: String::new(),
        config_digest: fnv1a(&cfg.to_toml()),
        stages: cfg.stages,
        frames_total: bundle.frames.len(),
        frames_kept: kept.len(),
        frames_rejected: bundle.frames.len() - kept.len(),
        frames_processed: processed,
        groups: grouping.groups.len(),
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        nodes_inserted: inserted,
        nodes_updated: updated,
        relations_voted: voted,
        relations_pruned: pruned,
        blur,
        timings,
    };
    graph.provenance.config_digest = report.config_digest.clone();
    Ok(BuildOutput {
        graph,
        grouping,
        report,
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Builds a graph from an in-memory bundle.
pub fn build(bundle: &FrameBundle, cfg: &PipelineConfig, res: &Resources) -> Result<BuildOutput> {
    cfg.validate()?;
    with_pool(cfg.threads, || build_inner(bundle, cfg, res))
}

/// Loads resources and the bundle at `dir`, then builds.
pub fn build_dir(dir: &Path, cfg: &PipelineConfig) -> Result<BuildOutput> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    with_pool(cfg.threads, || {
        let t = Instant::now();
        let bundle = load_bundle(dir)?;
        let load_ms = ms(t);
        let mut out = build_inner(&bundle, cfg, &res)?;
        out.report.timings.load_ms = load_ms;
        out.report.timings.total_ms += load_ms;
        out.report.bundle = dir.display().to_string();
        out.graph.provenance.bundle = out.report.bundle.clone();
        Ok(out)
    })
}
