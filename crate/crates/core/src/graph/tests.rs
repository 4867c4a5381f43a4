use super::*;
use crate::frame::ColorImage;
use crate::local_graph::{estimate_position, LocalEdge, LocalGraph, LocalNode};
use nalgebra::Vector3;
use proptest::prelude::*;

fn hist(pairs: &[(usize, u64)]) -> ColorHistogram {
    let mut h = ColorHistogram::empty(8);
    for &(i, c) in pairs {
        h.counts[i] += c;
        h.total += c;
    }
    h
}

fn pos(mean: [f64; 3], var: [f64; 3], n: u64) -> PositionEstimate {
    PositionEstimate {
        mean: Vector3::from(mean),
        var: Vector3::from(var),
        n,
    }
}

fn node(labels: &[(&str, f64)], mean: [f64; 3]) -> SceneNode {
    SceneNode {
        id: 0,
        labels: labels.iter().map(|(n, s)| Label::new(*n, *s)).collect(),
        position: pos(mean, [0.01, 0.01, 0.01], 20),
        histogram: hist(&[(7, 30), (63, 10)]),
        size: [0.1, 0.1],
        thumbnail: None,
    }
}

fn thumb(label: &str, score: f64) -> Thumbnail {
    Thumbnail {
        image: ColorImage::filled(3, 2, [9, 8, 7]),
        label: label.into(),
        score,
    }
}

fn cup_mug_table() -> EmbeddingProvider {
    let s = (1.0f64 - 0.49).sqrt();
    EmbeddingProvider::parse(&format!("cup 1 0\nmug 0.7 {s}\n")).unwrap()
}

// Independent CDF: composite Simpson integration of the density from -12.
fn numeric_cdf(x: f64) -> f64 {
    let (a, n) = (-12.0, 200_000);
    let h = (x - a) / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(x);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn label_similarity_fixtures() {
    let e = cup_mug_table();
    let l = |v: &[(&str, f64)]| v.iter().map(|(n, s)| Label::new(*n, *s)).collect::<Vec<_>>();
    let s = label_similarity(&l(&[("cup", 0.9)]), &l(&[("cup", 0.8)]), &e).unwrap();
    assert!((s - 0.9).abs() < 1e-12);
    let three = l(&[("cup", 0.9), ("mug", 0.5), ("glass", 0.2)]);
    assert_eq!(label_similarity(&three, &three, &e).unwrap(), 1.0);
    let s = label_similarity(&l(&[("cup", 0.9)]), &l(&[("mug", 0.8)]), &e).unwrap();
    assert!((e.distance("cup", "mug") - 0.15).abs() < 1e-12);
    assert!((s - 0.765).abs() < 1e-12);
    assert_eq!(
        label_similarity(&l(&[("cup", 0.9)]), &l(&[("zebra", 0.8)]), &e).unwrap(),
        0.0
    );
    assert!(matches!(label_similarity(&[], &three, &e), Err(Error::EmptyLabels)));
}

#[test]
fn embeddings_validate_input() {
    assert!(EmbeddingProvider::parse("a 1 2\nb 1\n").is_err());
    assert!(EmbeddingProvider::parse("a 0 0\n").is_err());
    assert!(EmbeddingProvider::parse("a 1 x\n").is_err());
    let e = EmbeddingProvider::builtin();
    assert!(e.len() > 20);
    assert!(e.distance("cup", "mug") < e.distance("cup", "car"));
    assert_eq!(e.distance("cup", "cup"), 0.0);
}

#[test]
fn normal_cdf_agrees_with_quadrature() {
    for x in [-3.0, -2.0, -1.0, 0.0, 0.5, 2.5] {
        assert!((std_normal_cdf(x) - numeric_cdf(x)).abs() < 1e-9);
    }
}

#[test]
fn position_similarity_fixtures() {
    let o = pos([0.0; 3], [0.04, 0.04, 0.04], 10);
    assert_eq!(position_similarity(&o, &o, 0.01), 1.0);
    let c = pos([0.4, 0.1, -0.1], [0.0; 3], 10);
    let expect = numeric_cdf(-2.0) / numeric_cdf(-1.0);
    let got = position_similarity(&o, &c, 0.01);
    assert!((got - expect).abs() < 1e-3);
    assert!((got - 0.14342).abs() < 1e-3);
    // continuity at one standard deviation
    let at = |d: f64| position_similarity(&o, &pos([d, 0.0, 0.0], [0.0; 3], 1), 0.01);
    assert!((at(0.2 - 1e-9) - at(0.2 + 1e-9)).abs() < 1e-6);
    // zero spread falls back to the floor
    let z = pos([1.0, 1.0, 1.0], [0.0; 3], 3);
    assert_eq!(position_similarity(&z, &z, 0.01), 1.0);
    assert!(position_similarity(&z, &pos([1.02, 1.0, 1.0], [0.0; 3], 3), 0.01) < 0.5);
    // normalized by the resident spread, so not symmetric
    let wide = pos([0.0; 3], [1.0; 3], 5);
    let narrow = pos([0.5, 0.0, 0.0], [0.01; 3], 5);
    assert_ne!(
        position_similarity(&wide, &narrow, 0.01),
        position_similarity(&narrow, &wide, 0.01)
    );
}

#[test]
fn color_similarity_fixtures() {
    let a = hist(&[(3, 10)]);
    assert_eq!(color_similarity(&a, &a).unwrap(), 1.0);
    assert_eq!(color_similarity(&a, &hist(&[(4, 10)])).unwrap(), 0.0);
    assert_eq!(color_similarity(&a, &hist(&[(3, 5), (9, 5)])).unwrap(), 0.5);
    let empty = ColorHistogram::empty(8);
    assert_eq!(color_similarity(&empty, &empty).unwrap(), 1.0);
    assert_eq!(color_similarity(&empty, &a).unwrap(), 0.0);
    assert!(color_similarity(&a, &ColorHistogram::empty(4)).is_err());
}

#[test]
fn total_similarity_fixtures() {
    let w = SimilarityWeights::default();
    assert_eq!(w.w_label + w.w_color + w.w_position, 1.0);
    let e = EmbeddingProvider::empty();
    let n = node(&[("cup", 0.9), ("mug", 0.6)], [1.0, 2.0, 3.0]);
    assert_eq!(total_similarity(&n, &n, &w, &e, 0.01).unwrap().total, 1.0);
    let certain = node(&[("cup", 1.0)], [1.0, 2.0, 3.0]);
    assert_eq!(total_similarity(&certain, &certain, &w, &e, 0.01).unwrap().total, 1.0);

    let mut other = n.clone();
    other.histogram = hist(&[(100, 40)]);
    let s = total_similarity(&n, &other, &w, &e, 0.01).unwrap();
    assert_eq!((s.label, s.color, s.position), (1.0, 0.0, 1.0));
    assert_eq!(s.total, 0.75);
    assert!(s.total >= w.threshold);

    let mut far = node(&[("zebra", 0.9)], [50.0, 0.0, 0.0]);
    far.histogram = hist(&[(100, 40)]);
    assert_eq!(total_similarity(&n, &far, &w, &e, 0.01).unwrap().total, 0.0);
}

#[test]
fn weights_validation() {
    assert!(SimConfig::default().validate().is_ok());
    let bad = SimConfig {
        w_label: 0.5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

fn graph_of(nodes: Vec<SceneNode>) -> SceneGraph3D {
    let mut g = SceneGraph3D::new();
    for n in nodes {
        g.insert_node(n);
    }
    g
}

#[test]
fn find_same_node_fixtures() {
    let sim = SimConfig::default();
    let e = EmbeddingProvider::empty();
    let cand = node(&[("cup", 0.9), ("mug", 0.5)], [0.0; 3]);
    assert_eq!(find_same_node(&SceneGraph3D::new(), &cand, &sim, &e).unwrap(), None);
    let g = graph_of(vec![node(&[("bowl", 0.9)], [5.0; 3]), cand.clone()]);
    assert_eq!(find_same_node(&g, &cand, &sim, &e).unwrap().map(|m| m.0), Some(1));

    // two qualifying nodes: brute-force the best
    let mut a = cand.clone();
    a.histogram = hist(&[(7, 30), (200, 10)]);
    let mut b = cand.clone();
    b.histogram = hist(&[(7, 30), (63, 2), (200, 8)]);
    let g = graph_of(vec![a, b]);
    let w = sim.weights();
    let scores: Vec<f64> = g
        .nodes()
        .map(|n| total_similarity(n, &cand, &w, &e, 0.01).unwrap().total)
        .collect();
    assert!(scores.iter().all(|s| *s >= 0.7) && scores[0] != scores[1]);
    let best = if scores[1] > scores[0] { 1 } else { 0 };
    assert_eq!(find_same_node(&g, &cand, &sim, &e).unwrap().unwrap().0, best);

    // ties go to the lower id
    let g = graph_of(vec![cand.clone(), cand.clone()]);
    assert_eq!(find_same_node(&g, &cand, &sim, &e).unwrap().unwrap().0, 0);
}

#[test]
fn update_node_fixtures() {
    let mut a = node(&[("cup", 0.9)], [0.0; 3]);
    a.position = pos([0.0; 3], [0.0; 3], 2);
    let self_merge = update_node(&a, &a, 5);
    assert_eq!(self_merge.point_count(), 4);
    assert_eq!(
        (self_merge.position.mean, self_merge.position.var),
        (a.position.mean, a.position.var)
    );
    assert_eq!(self_merge.histogram.total, 2 * a.histogram.total);

    let mut b = a.clone();
    b.position = pos([2.0; 3], [0.0; 3], 2);
    let m = update_node(&a, &b, 5);
    assert_eq!(m.position.mean, Vector3::new(1.0, 1.0, 1.0));
    assert_eq!(m.position.var, Vector3::new(1.0, 1.0, 1.0));

    a.thumbnail = Some(thumb("cup", 0.90));
    let mut c = node(&[("cup", 0.95), ("mug", 0.3)], [0.0; 3]);
    c.thumbnail = Some(thumb("cup", 0.95));
    assert_eq!(update_node(&a, &c, 5).thumbnail.unwrap().score, 0.95);
    assert_eq!(update_node(&c, &a, 5).thumbnail.unwrap().score, 0.95);

    let many = node(&[("a", 0.1), ("b", 0.9), ("c", 0.5)], [0.0; 3]);
    let more = node(&[("b", 0.2), ("d", 0.7), ("e", 0.05)], [0.0; 3]);
    let labels: Vec<_> = update_node(&many, &more, 3)
        .labels
        .into_iter()
        .map(|l| (l.name, l.score))
        .collect();
    assert_eq!(labels, vec![("b".into(), 0.9), ("d".into(), 0.7), ("c".into(), 0.5)]);
}

fn local_node(temp_id: u32, label: &str, mean: [f64; 3]) -> LocalNode {
    let n = node(&[(label, 0.9), ("thing", 0.4)], mean);
    LocalNode {
        temp_id,
        labels: n.labels,
        position: n.position,
        histogram: n.histogram,
        thumbnail: thumb(label, 0.9),
        size: [0.1, 0.2],
        bbox: [0.0, 0.0, 10.0, 10.0].into(),
    }
}

fn fixture_local() -> LocalGraph {
    LocalGraph {
        frame: 0,
        nodes: vec![
            local_node(3, "cup", [0.0, 0.0, 1.0]),
            local_node(7, "table", [0.0, 0.5, 1.0]),
        ],
        edges: vec![LocalEdge {
            subject: 3,
            object: 7,
            predicate: "on".into(),
            score: 0.9,
        }],
    }
}

#[test]
fn merge_fixtures() {
    let sim = SimConfig::default();
    let e = EmbeddingProvider::empty();
    let cats = PredicateCategories::builtin();
    let local = fixture_local();
    let mut g = SceneGraph3D::new();
    let out = merge(&mut g, &local, &sim, &e, &cats).unwrap();
    assert_eq!(out.inserted, 2);
    assert_eq!(out.id_map.values().copied().collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!((g.node_count(), g.edge_count()), (2, 1));
    assert_eq!(g.edge(0, 1, "on").unwrap().category, PredicateCategory::Spatial);

    let out = merge(&mut g, &local, &sim, &e, &cats).unwrap();
    assert_eq!((out.inserted, out.updated), (0, 2));
    assert_eq!((g.node_count(), g.edge_count()), (2, 1));
    assert!(g.nodes().all(|n| n.point_count() == 40));
    assert_eq!(g.edge(0, 1, "on").unwrap().votes, 2);
    assert_eq!(g.next_id(), 2);
}

#[test]
fn local_nodes_do_not_merge_with_each_other() {
    let sim = SimConfig::default();
    let e = EmbeddingProvider::empty();
    let mut local = fixture_local();
    local.nodes[1] = local_node(7, "cup", [0.0, 0.0, 1.0]);
    let mut g = SceneGraph3D::new();
    let out = merge_nodes(&mut g, &local, &sim, &e).unwrap();
    assert_eq!(out.inserted, 2);
}

#[test]
fn prune_keeps_top_predicates_per_category() {
    let mut g = graph_of(vec![node(&[("cup", 0.9)], [0.0; 3]), node(&[("table", 0.9)], [1.0; 3])]);
    g.upsert_edge(0, 1, "on", PredicateCategory::Spatial, 3).unwrap();
    g.upsert_edge(0, 1, "near", PredicateCategory::Spatial, 1).unwrap();
    g.upsert_edge(0, 1, "holding", PredicateCategory::Action, 1).unwrap();
    g.upsert_edge(1, 0, "under", PredicateCategory::Spatial, 1).unwrap();
    assert!(g.upsert_edge(0, 0, "on", PredicateCategory::Spatial, 1).is_err());
    assert!(g.upsert_edge(0, 9, "on", PredicateCategory::Spatial, 1).is_err());
    g.prune_edges();
    let kept: Vec<_> = g.edges().map(|e| e.predicate).collect();
    assert_eq!(kept, vec!["holding", "on", "under"]);
}

#[test]
fn categories_default_to_preposition() {
    let c = PredicateCategories::builtin();
    assert_eq!(c.category_of("on"), PredicateCategory::Spatial);
    assert_eq!(c.category_of("grinning_at"), PredicateCategory::Preposition);
}

#[test]
fn persistence_round_trip() {
    assert_eq!(
        to_canonical_json(&SceneGraph3D::new(), None),
        "{\"version\":1,\"nodes\":[],\"edges\":[]}\n"
    );
    let sim = SimConfig::default();
    let mut g = SceneGraph3D::new();
    merge(
        &mut g,
        &fixture_local(),
        &sim,
        &EmbeddingProvider::empty(),
        &PredicateCategories::builtin(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.json");
    save(&g, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.nodes().collect::<Vec<_>>(), g.nodes().collect::<Vec<_>>());
    assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    save(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(dir.path().join("graph_thumbs/node_000000.ppm").exists());

    let text = String::from_utf8(first).unwrap();
    let dangling = text.replace("\"object\":1", "\"object\":5");
    assert!(matches!(from_json_str(&dangling, None), Err(Error::Graph(_))));
    let v2 = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(
        from_json_str(&v2, None),
        Err(Error::SchemaVersion { found: 2, .. })
    ));
    let extra = text.replacen("\"version\":1", "\"version\":1,\"x\":0", 1);
    assert!(from_json_str(&extra, None).is_err());
}

#[test]
fn dot_output_shape() {
    let mut g = graph_of(vec![
        node(&[("cup", 0.9)], [0.0; 3]),
        node(&[("dining \"table\"", 0.9)], [1.0; 3]),
    ]);
    g.upsert_edge(0, 1, "on", PredicateCategory::Spatial, 1).unwrap();
    let dot = to_dot(&g);
    assert!(dot.starts_with("digraph scene {\n"));
    assert!(dot.contains("n0 [label=\"cup#0\"];"));
    assert!(dot.contains("n1 [label=\"dining \\\"table\\\"#1\"];"));
    assert!(dot.contains("n0 -> n1 [label=\"on\"];"));
    assert!(dot.ends_with("}\n"));
}

fn arb_hist() -> impl Strategy<Value = ColorHistogram> {
    proptest::collection::vec((0usize..512, 0u64..50), 0..8).prop_map(|v| hist(&v))
}

fn arb_pos() -> impl Strategy<Value = PositionEstimate> {
    (
        [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0],
        [0.0f64..0.5, 0.0f64..0.5, 0.0f64..0.5],
        1u64..500,
    )
        .prop_map(|(m, v, n)| pos(m, v, n))
}

fn arb_labels() -> impl Strategy<Value = Vec<Label>> {
    let names = prop_oneof![Just("cup"), Just("mug"), Just("bowl"), Just("plate"), Just("zebra")];
    proptest::collection::vec((names, 0.0f64..=1.0), 1..5)
        .prop_map(|v| v.into_iter().map(|(n, s)| Label::new(n, s)).collect())
}

fn arb_node() -> impl Strategy<Value = SceneNode> {
    (arb_labels(), arb_pos(), arb_hist()).prop_map(|(labels, position, histogram)| SceneNode {
        id: 0,
        labels,
        position,
        histogram,
        size: [0.1, 0.1],
        thumbnail: None,
    })
}

proptest! {
    #[test]
    fn similarities_are_bounded(o in arb_node(), c in arb_node()) {
        let e = EmbeddingProvider::builtin();
        let s = total_similarity(&o, &c, &SimilarityWeights::default(), &e, 0.01).unwrap();
        for v in [s.label, s.color, s.position, s.total] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(color_similarity(&o.histogram, &c.histogram).unwrap(),
                        color_similarity(&c.histogram, &o.histogram).unwrap());
    }

    #[test]
    fn copy_of_itself_always_matches(n in arb_node(), threshold in 0.0f64..=1.0) {
        let mut n = n;
        n.labels = vec![Label::new("cup", 0.9), Label::new("mug", 0.8)];
        let sim = SimConfig { threshold, ..Default::default() };
        let g = graph_of(vec![n.clone()]);
        let m = find_same_node(&g, &n, &sim, &EmbeddingProvider::empty()).unwrap();
        prop_assert_eq!(m, Some((0, 1.0)));
    }

    #[test]
    fn pooled_update_matches_batch(
        a in proptest::collection::vec([-4.0f64..4.0, -4.0f64..4.0, 0.2f64..6.0], 1..30),
        b in proptest::collection::vec([-4.0f64..4.0, -4.0f64..4.0, 0.2f64..6.0], 1..30),
    ) {
        let pts = |v: &[[f64; 3]]| v.iter().map(|p| Vector3::from(*p)).collect::<Vec<_>>();
        let mut na = node(&[("cup", 0.9)], [0.0; 3]);
        let mut nb = na.clone();
        na.position = estimate_position(&pts(&a), 1).unwrap();
        nb.position = estimate_position(&pts(&b), 1).unwrap();
        let merged = update_node(&na, &nb, 5).position;
        let all: Vec<_> = pts(&a).into_iter().chain(pts(&b)).collect();
        let batch = estimate_position(&all, 1).unwrap();
        for j in 0..3 {
            prop_assert!((merged.mean[j] - batch.mean[j]).abs() <= 1e-9 * batch.mean[j].abs().max(1.0));
            prop_assert!((merged.var[j] - batch.var[j]).abs() <= 1e-9 * batch.var[j].abs().max(1.0));
        }
    }

    #[test]
    fn merge_never_decreases_point_counts(mean in [-1.0f64..1.0, -1.0f64..1.0, 0.5f64..3.0]) {
        let sim = SimConfig::default();
        let mut g = SceneGraph3D::new();
        let mut local = fixture_local();
        merge_nodes(&mut g, &local, &sim, &EmbeddingProvider::empty()).unwrap();
        let before: Vec<(NodeId, u64)> = g.nodes().map(|n| (n.id, n.point_count())).collect();
        local.nodes[0].position.mean = Vector3::from(mean);
        merge_nodes(&mut g, &local, &sim, &EmbeddingProvider::empty()).unwrap();
        for (id, n) in before {
            prop_assert!(g.node(id).unwrap().point_count() >= n);
        }
    }
}
