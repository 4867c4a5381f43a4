use super::*;
use crate::detection::Label;
use crate::graph::PredicateCategory;
use crate::local_graph::{ColorHistogram, PositionEstimate};
use nalgebra::Vector3;
use proptest::prelude::*;

fn node(label: &str, mean: [f64; 3], size: [f64; 2], hsv_bin: (usize, usize, usize)) -> SceneNode {
    let mut h = ColorHistogram::empty(8);
    let i = h.index(hsv_bin.0, hsv_bin.1, hsv_bin.2);
    h.counts[i] = 50;
    h.total = 50;
    SceneNode {
        id: 0,
        labels: vec![Label::new(label, 0.9)],
        position: PositionEstimate {
            mean: Vector3::from(mean),
            var: Vector3::repeat(0.001),
            n: 50,
        },
        histogram: h,
        size,
        thumbnail: None,
    }
}

const RED: (usize, usize, usize) = (0, 7, 7);
const WHITE: (usize, usize, usize) = (0, 0, 7);
const BLUE: (usize, usize, usize) = (5, 7, 6);

/// ids: 0-2 cups (two red), 3 fork, 4 knife, 5 shelf, 6 big bowl, 7 small bowl, 8 chair (red)
fn fixture() -> SceneGraph3D {
    let mut g = SceneGraph3D::new();
    g.insert_node(node("cup", [0.1, 0.0, 1.0], [0.08, 0.1], RED));
    g.insert_node(node("cup", [0.4, 0.0, 1.0], [0.08, 0.1], WHITE));
    g.insert_node(node("cup", [2.0, 0.0, 3.0], [0.08, 0.1], RED));
    g.insert_node(node("fork", [0.2, 0.1, 1.0], [0.02, 0.18], WHITE));
    g.insert_node(node("knife", [0.3, 0.1, 1.0], [0.02, 0.2], WHITE));
    g.insert_node(node("shelf", [0.0, -1.0, 2.0], [1.0, 1.5], WHITE));
    g.insert_node(node("bowl", [1.0, 0.0, 1.5], [0.3, 0.12], BLUE));
    g.insert_node(node("bowl", [1.2, 0.0, 1.5], [0.15, 0.08], BLUE));
    g.insert_node(node("chair", [-1.0, 0.5, 2.0], [0.5, 0.9], RED));
    g.upsert_edge(0, 5, "on", PredicateCategory::Spatial, 1).unwrap();
    g.upsert_edge(6, 5, "on", PredicateCategory::Spatial, 2).unwrap();
    g.upsert_edge(1, 6, "in", PredicateCategory::Preposition, 1).unwrap();
    g.upsert_edge(5, 0, "under", PredicateCategory::Spatial, 1).unwrap();
    g
}

fn ctx() -> QueryContext {
    QueryContext {
        taxonomy: Taxonomy::from_json(r#"{"fork":["cutlery"],"knife":["cutlery"],"cutlery":["tableware"]}"#).unwrap(),
        ..Default::default()
    }
}

fn count(g: &SceneGraph3D, q: &str) -> usize {
    match evaluate(g, &parse_query(q).unwrap(), &ctx()) {
        QueryResult::Count { count, .. } => count,
        r => panic!("{r:?}"),
    }
}

fn show(g: &SceneGraph3D, q: &str) -> Vec<NodeId> {
    match evaluate(g, &parse_query(q).unwrap(), &ctx()) {
        QueryResult::Show { ids, .. } => ids,
        r => panic!("{r:?}"),
    }
}

#[test]
fn counting_fixtures() {
    let g = fixture();
    assert_eq!(count(&g, "COUNT cup"), 3);
    assert_eq!(count(&g, "COUNT cutlery HIER"), 2);
    assert_eq!(count(&g, "COUNT tableware HIER"), 2);
    assert_eq!(count(&g, "COUNT cutlery"), 0);
    assert_eq!(count(&g, "COUNT unicorn"), 0);
    assert_eq!(count(&g, "COUNT * WHERE on=shelf"), 2);
    assert_eq!(count(&g, "count cup where COLOR=red"), 2);
    assert_eq!(count(&g, "COUNT chair WHERE color=red"), 1);
    assert_eq!(count(&g, "COUNT * WHERE width >= 0.3"), 3);
    assert_eq!(count(&g, "COUNT cup WHERE in (0,-1,0)-(1,1,2)"), 2);
    assert_eq!(count(&g, "COUNT cup WHERE in=bowl"), 1);
    assert_eq!(count(&g, "COUNT * WHERE under=cup"), 1);
}

#[test]
fn superlative_fixtures() {
    let g = fixture();
    assert_eq!(show(&g, "SHOW biggest bowl"), vec![6]);
    assert_eq!(show(&g, "SHOW smallest bowl"), vec![7]);
    assert_eq!(show(&g, "SHOW nearest cup"), vec![0]);
    assert_eq!(show(&g, "SHOW farthest cup"), vec![2]);
    assert_eq!(show(&g, "SHOW biggest unicorn"), Vec::<NodeId>::new());
    // cups 0 and 1 share a size: lowest id wins
    assert_eq!(show(&g, "SHOW biggest cup WHERE in (-5,-5,0)-(5,5,2)"), vec![0]);
}

#[test]
fn show_reports_thumbnail_paths() {
    let mut g = SceneGraph3D::new();
    let mut n = node("bowl", [0.0; 3], [0.2, 0.1], BLUE);
    n.thumbnail = Some(crate::local_graph::Thumbnail {
        image: crate::frame::ColorImage::filled(2, 2, [0, 0, 255]),
        label: "bowl".into(),
        score: 0.9,
    });
    g.insert_node(n);
    let c = QueryContext {
        graph_path: Some(PathBuf::from("out/scene.json")),
        ..Default::default()
    };
    let r = evaluate(&g, &parse_query("SHOW biggest bowl").unwrap(), &c);
    assert_eq!(
        r,
        QueryResult::Show {
            ids: vec![0],
            thumbnails: vec!["out/scene_thumbs/node_000000.ppm".into()]
        }
    );
    assert_eq!(r.summary(), "node 0 out/scene_thumbs/node_000000.ppm");
}

#[test]
fn taxonomy_rejects_cycles() {
    assert!(Taxonomy::from_json(r#"{"a":["b"],"b":["a"]}"#).is_err());
    assert!(Taxonomy::from_json(r#"{"a":["a"]}"#).is_err());
}

#[test]
fn empty_taxonomy_matches_flat_counting() {
    let g = fixture();
    for class in ["cup", "fork", "cutlery", "*", "shelf"] {
        let flat = parse_query(&format!("COUNT {class}")).unwrap();
        let hier = parse_query(&format!("COUNT {class} HIER")).unwrap();
        let c = QueryContext::default();
        let n = |q: &Query| match evaluate(&g, q, &c) {
            QueryResult::Count { count, .. } => count,
            _ => unreachable!(),
        };
        assert_eq!(n(&flat), n(&hier));
    }
}

fn arb_cond() -> impl Strategy<Value = Cond> {
    prop_oneof![
        prop_oneof![Just("red"), Just("white"), Just("blue")].prop_map(|c| Cond::Color(c.into())),
        (0.0f64..1.0, any::<bool>()).prop_map(|(v, w)| Cond::Size {
            dim: if w { Dim::Width } else { Dim::Height },
            cmp: Cmp::Ge,
            value: v
        }),
        prop_oneof![Just("on"), Just("in"), Just("under")].prop_map(|p| Cond::Related {
            predicate: p.into(),
            class: ClassSel::Any
        }),
        (
            [-1.0f64..1.0, -1.0f64..1.0, 0.0f64..2.0],
            [0.0f64..3.0, 0.0f64..3.0, 1.0f64..4.0]
        )
            .prop_map(|(min, max)| Cond::In { min, max }),
    ]
}

proptest! {
    #[test]
    fn filters_never_increase_counts(
        class in prop_oneof![Just("cup"), Just("*"), Just("bowl"), Just("cutlery")],
        hier in any::<bool>(),
        base in proptest::collection::vec(arb_cond(), 0..3),
        extra in arb_cond(),
    ) {
        let g = fixture();
        let class = if class == "*" { ClassSel::Any } else { ClassSel::Name(class.into()) };
        let mut more = base.clone();
        more.push(extra);
        let q1 = Query::Count { class: class.clone(), hierarchical: hier, filters: base };
        let q2 = Query::Count { class, hierarchical: hier, filters: more };
        let n = |q: &Query| match evaluate(&g, q, &ctx()) {
            QueryResult::Count { count, .. } => count,
            _ => unreachable!(),
        };
        prop_assert!(n(&q2) <= n(&q1));
    }

    #[test]
    fn unfiltered_count_matches_scan(labels in proptest::collection::vec(prop_oneof![Just("cup"), Just("bowl"), Just("fork")], 0..20)) {
        let mut g = SceneGraph3D::new();
        for l in &labels {
            g.insert_node(node(l, [0.0; 3], [0.1, 0.1], RED));
        }
        for class in ["cup", "bowl", "fork"] {
            let naive = g.nodes().filter(|n| n.labels[0].name == class).count();
            prop_assert_eq!(count(&g, &format!("COUNT {class}")), naive);
        }
    }
}
