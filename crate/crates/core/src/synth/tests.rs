use super::*;
use crate::blur::variance_of_laplacian;
use crate::bundle::load_bundle;
use crate::detection::Label;
use crate::frame::{project, to_luminance};
use crate::graph::{SceneGraph3D, SceneNode};
use crate::local_graph::{ColorHistogram, PositionEstimate};
use proptest::prelude::*;

fn k() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 200.0,
        fy: 200.0,
        cx: 80.0,
        cy: 60.0,
        width: 160,
        height: 120,
        depth_scale: 1000.0,
    }
}

fn cube(class: &str, center: [f64; 3], side: f64) -> ObjectSpec {
    ObjectSpec {
        class: class.into(),
        center,
        extents: [side; 3],
        color: [200, 30, 30],
    }
}

fn room() -> RoomSpec {
    RoomSpec {
        min: [-3.0, -3.0, -3.0],
        max: [3.0, 3.0, 6.0],
        color: [180, 170, 150],
    }
}

fn one_box() -> WorldSpec {
    WorldSpec {
        objects: vec![cube("cup", [0.0, 0.0, 2.0], 0.4)],
        ..Default::default()
    }
}

/// Pixel bbox of the 8 projected corners, in the silhouette's exclusive
/// convention: first sampled column to one past the last.
fn corner_bbox(o: &ObjectSpec, pose: &Pose, k: &CameraIntrinsics) -> [f64; 4] {
    let inv = pose.inverse();
    let (lo, hi) = (o.min(), o.max());
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in 0..8 {
        let p = Vector3::new(
            if c & 1 == 0 { lo.x } else { hi.x },
            if c & 2 == 0 { lo.y } else { hi.y },
            if c & 4 == 0 { lo.z } else { hi.z },
        );
        let q = project(&inv.transform_point(&p), k).expect("corner in front");
        b = [b[0].min(q.x), b[1].min(q.y), b[2].max(q.x), b[3].max(q.y)];
    }
    [b[0].ceil(), b[1].ceil(), b[2].floor() + 1.0, b[3].floor() + 1.0]
}

#[test]
fn empty_world_is_background_only() {
    let (c, d) = render_frame(&WorldSpec::default(), &Pose::identity(), &k());
    assert!(d.data.iter().all(|&v| v == 0));
    assert!(variance_of_laplacian(&to_luminance(&c)).unwrap() > 0.0);
}

#[test]
fn box_on_axis_matches_corner_projection() {
    let w = one_box();
    let s = silhouettes(&w, &Pose::identity(), &k())[0];
    let b = corner_bbox(&w.objects[0], &Pose::identity(), &k());
    // front face 1.8 m away, half side 0.2 m: 200 * 0.2 / 1.8 = 22.2 px
    for (got, want) in [(s.x0, b[0]), (s.y0, b[1]), (s.x1, b[2]), (s.y1, b[3])] {
        assert!((got as f64 - want).abs() <= 1.0, "{s:?} vs {b:?}");
    }
    assert_eq!((s.x0, s.x1), (58, 103));
}

#[test]
fn center_depth_is_front_face_distance() {
    let (_, d) = render_frame(&one_box(), &Pose::identity(), &k());
    assert_eq!(d.raw(80, 60), 1800);
}

#[test]
fn room_walls_have_depth() {
    let w = WorldSpec {
        room: Some(room()),
        ..Default::default()
    };
    let (_, d) = render_frame(&w, &Pose::identity(), &k());
    assert!(d.data.iter().all(|&v| v > 0));
    assert_eq!(d.raw(80, 60), 6000);
}

#[test]
fn zero_noise_detections_are_exact() {
    let w = one_box();
    let det = emit_detections(&w, &Pose::identity(), &k(), &NoiseSpec::none(), 0);
    assert_eq!(det.detections.len(), 1);
    let s = silhouettes(&w, &Pose::identity(), &k())[0];
    let d = &det.detections[0];
    assert_eq!(
        <[f64; 4]>::from(d.bbox),
        [s.x0 as f64, s.y0 as f64, s.x1 as f64, s.y1 as f64]
    );
    assert_eq!(d.labels, vec![Label::new("cup", 1.0)]);
    det.validate(&k()).unwrap();
}

#[test]
fn objects_behind_the_camera_are_not_detected() {
    let w = WorldSpec {
        objects: vec![cube("cup", [0.0, 0.0, -2.0], 0.4)],
        ..Default::default()
    };
    assert!(emit_detections(&w, &Pose::identity(), &k(), &NoiseSpec::default(), 0)
        .detections
        .is_empty());
}

#[test]
fn tiny_objects_are_below_the_area_threshold() {
    let w = WorldSpec {
        objects: vec![cube("cup", [0.0, 0.0, 4.0], 0.1)],
        ..Default::default()
    };
    let s = silhouettes(&w, &Pose::identity(), &k())[0];
    assert!(s.area > 0 && s.area < A_MIN);
    assert!(emit_detections(&w, &Pose::identity(), &k(), &NoiseSpec::none(), 0)
        .detections
        .is_empty());
}

fn scene() -> WorldSpec {
    WorldSpec {
        objects: vec![
            ObjectSpec {
                class: "table".into(),
                center: [0.0, 0.0, 0.7],
                extents: [1.2, 0.8, 0.05],
                color: [140, 90, 40],
            },
            cube("cup", [-0.3, 0.1, 0.78], 0.1),
            cube("bowl", [0.3, -0.1, 0.78], 0.12),
        ],
        room: Some(room()),
        relations: vec![
            RelationSpec {
                subject: 1,
                predicate: "on".into(),
                object: 0,
            },
            RelationSpec {
                subject: 2,
                predicate: "on".into(),
                object: 0,
            },
        ],
        ..Default::default()
    }
}

fn orbit(frames: usize) -> TrajectorySpec {
    TrajectorySpec::Orbit {
        center: [0.0, 0.0, 0.7],
        radius: 1.5,
        height: 1.5,
        frames,
        start_deg: 0.0,
        sweep_deg: 360.0,
        target: None,
        facing: Facing::Center,
        tilt_deg: 0.0,
    }
}

#[test]
fn detections_are_deterministic() {
    let noise = NoiseSpec {
        spurious_rate: 0.5,
        confusion_rate: 0.5,
        ..Default::default()
    };
    let poses = orbit(8).poses().unwrap();
    for (i, p) in poses.iter().enumerate() {
        let a = serde_json::to_string(&emit_detections(&scene(), p, &k(), &noise, i)).unwrap();
        let b = serde_json::to_string(&emit_detections(&scene(), p, &k(), &noise, i)).unwrap();
        assert_eq!(a, b);
        emit_detections(&scene(), p, &k(), &noise, i).validate(&k()).unwrap();
    }
}

#[test]
fn look_at_points_the_optical_axis() {
    let p = look_at(Vector3::new(2.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let ahead = p.transform_point(&Vector3::new(0.0, 0.0, 1.0));
    assert!((ahead - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    // image down is world down
    let below = p.transform_point(&Vector3::new(0.0, 1.0, 0.0));
    assert!((below - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
}

#[test]
fn blur_schedule_drops_laplacian_variance() {
    let noise = NoiseSpec {
        blur: BlurSchedule {
            ranges: vec![[1, 2]],
            sigma: 3.0,
            ..Default::default()
        },
        ..NoiseSpec::none()
    };
    let traj = orbit(4);
    let (bundle, _) = synthesize_bundle(&scene(), &traj, &noise, &k()).unwrap();
    let sharp = synthesize_bundle(&scene(), &traj, &NoiseSpec::none(), &k()).unwrap().0;
    for i in 0..4 {
        let v = variance_of_laplacian(&to_luminance(&bundle.frames[i].color)).unwrap();
        let v0 = variance_of_laplacian(&to_luminance(&sharp.frames[i].color)).unwrap();
        if i == 1 || i == 2 {
            assert!(v < 0.25 * v0, "frame {i}: {v} vs {v0}");
        } else {
            assert_eq!(v, v0);
        }
    }
}

#[test]
fn generated_bundle_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseSpec::default();
    let truth = generate_bundle(&scene(), &orbit(6), &noise, &k(), dir.path()).unwrap();
    let b = load_bundle(dir.path()).unwrap();
    assert_eq!(b.frames.len(), 6);
    assert_eq!(b.intrinsics, k());
    let (mem, _) = synthesize_bundle(&scene(), &orbit(6), &noise, &k()).unwrap();
    for (a, m) in b.frames.iter().zip(&mem.frames) {
        assert_eq!(a.color, m.color);
        assert_eq!(a.depth, m.depth);
        assert_eq!(a.detections, m.detections);
        assert!((a.pose.matrix() - m.pose.matrix()).abs().max() < 1e-15);
    }
    assert!(b.frames[0]
        .pose
        .matrix()
        .relative_eq(Pose::identity().matrix(), 1e-12, 1e-12));
    let loaded = GroundTruth::load(&dir.path().join("ground_truth.json")).unwrap();
    assert_eq!(loaded, truth);
    assert_eq!(truth.visibility.len(), 6);
}

#[test]
fn empty_trajectory_gives_empty_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let t = TrajectorySpec::Poses { poses: vec![] };
    let truth = generate_bundle(&scene(), &t, &NoiseSpec::default(), &k(), dir.path()).unwrap();
    let b = load_bundle(dir.path()).unwrap();
    assert!(b.frames.is_empty());
    assert_eq!(b.intrinsics, k());
    // without a first camera the reference is the world frame
    assert_eq!(truth.objects[1].position, [-0.3, 0.1, 0.78]);
}

#[test]
fn spec_validation() {
    let mut w = scene();
    w.relations.push(RelationSpec {
        subject: 0,
        predicate: "on".into(),
        object: 9,
    });
    assert!(w.validate().is_err());
    let mut w = scene();
    w.objects[0].extents[1] = 0.0;
    assert!(w.validate().is_err());
    assert!(NoiseSpec {
        confusion_rate: 1.5,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(NoiseSpec {
        depth_noise: -0.1,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(NoiseSpec::from_json(r#"{"bogus": 1}"#).is_err());
    assert!(
        TrajectorySpec::from_json(r#"{"kind":"static","eye":[0,0,0],"target":[0,0,1],"frames":3}"#)
            .unwrap()
            .poses()
            .is_ok_and(|p| p.len() == 3)
    );
}

#[test]
fn corpus_covers_true_and_rare_triples() {
    let text = relation_corpus(&scene(), &orbit(36), &k(), &NoiseSpec::default()).unwrap();
    let dict = crate::detection::RelationDictionary::build_from_corpus(text.as_bytes(), 1.0).unwrap();
    let on = dict.get("cup", "on", "table").unwrap();
    assert!(on.prob > 0.85, "{on:?}");
    assert!(dict.get("table", "near", "cup").is_some());
    assert!(dict.get("cup", "riding", "bowl").unwrap().prob < 0.2);
}

fn gt_node(truth: &GroundTruth, j: usize, offset: f64) -> SceneNode {
    let o = &truth.objects[j];
    let mut h = ColorHistogram::empty(8);
    h.add([200, 30, 30]);
    SceneNode {
        id: 0,
        labels: vec![Label::new(o.class.clone(), 0.9)],
        position: PositionEstimate {
            mean: Vector3::from(o.position) + Vector3::new(offset, 0.0, 0.0),
            var: Vector3::repeat(1e-4),
            n: 10,
        },
        histogram: h,
        size: [0.1, 0.1],
        thumbnail: None,
    }
}

fn perfect_graph(truth: &GroundTruth) -> SceneGraph3D {
    let mut g = SceneGraph3D::new();
    for j in 0..truth.objects.len() {
        g.insert_node(gt_node(truth, j, 0.0));
    }
    for r in &truth.relations {
        g.upsert_edge(
            r.subject as u64,
            r.object as u64,
            &r.predicate,
            crate::graph::PredicateCategory::Spatial,
            1,
        )
        .unwrap();
    }
    g
}

fn truth() -> GroundTruth {
    synthesize_bundle(
        &scene(),
        &TrajectorySpec::Poses { poses: vec![] },
        &NoiseSpec::none(),
        &k(),
    )
    .unwrap()
    .1
}

#[test]
fn perfect_graph_scores_perfectly() {
    let t = truth();
    let m = evaluate_graph(&perfect_graph(&t), &t).unwrap();
    assert_eq!((m.node_precision, m.node_recall, m.duplicates), (1.0, 1.0, 0));
    assert_eq!((m.edge_precision, m.edge_recall), (1.0, 1.0));
    assert_eq!(m.position_rmse, Some(0.0));
}

#[test]
fn empty_graph_claims_nothing() {
    let m = evaluate_graph(&SceneGraph3D::new(), &truth()).unwrap();
    assert_eq!((m.node_precision, m.node_recall), (1.0, 0.0));
    assert_eq!(m.position_rmse, None);
}

#[test]
fn split_object_is_a_duplicate() {
    let t = truth();
    let mut g = perfect_graph(&t);
    g.insert_node(gt_node(&t, 1, 0.02));
    let m = evaluate_graph(&g, &t).unwrap();
    assert_eq!(m.duplicates, 1);
    assert!(m.node_precision < 1.0);
    assert_eq!(m.node_recall, 1.0);
    assert_eq!(m.position_rmse, Some(0.0));
}

#[test]
fn taxonomy_ancestors_match() {
    let mut t = truth();
    t.taxonomy.insert("cup".into(), vec!["container".into()]);
    let mut g = SceneGraph3D::new();
    let mut n = gt_node(&t, 1, 0.0);
    n.labels = vec![Label::new("container", 0.9)];
    g.insert_node(n);
    let m = evaluate_graph(&g, &t).unwrap();
    assert_eq!(m.matched_objects, 1);
    // wrong class never matches, however close
    let mut g = SceneGraph3D::new();
    let mut n = gt_node(&t, 1, 0.0);
    n.labels = vec![Label::new("bowl", 0.9)];
    g.insert_node(n);
    assert_eq!(evaluate_graph(&g, &t).unwrap().matched_objects, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn silhouette_within_dilated_corner_bbox(
        cx in -0.5f64..0.5, cy in -0.4f64..0.4, cz in 1.0f64..4.0,
        ex in 0.05f64..0.6, ey in 0.05f64..0.6, ez in 0.05f64..0.6,
    ) {
        let o = ObjectSpec { class: "box".into(), center: [cx, cy, cz], extents: [ex, ey, ez], color: [9, 9, 9] };
        prop_assume!(cz - ez / 2.0 > 0.1);
        let w = WorldSpec { objects: vec![o.clone()], ..Default::default() };
        let s = silhouettes(&w, &Pose::identity(), &k())[0];
        prop_assume!(s.area > 0);
        let b = corner_bbox(&o, &Pose::identity(), &k());
        prop_assert!(s.x0 as f64 >= b[0] - 1.0 && s.y0 as f64 >= b[1] - 1.0);
        prop_assert!(s.x1 as f64 <= b[2] + 1.0 && s.y1 as f64 <= b[3] + 1.0);
    }

    #[test]
    fn extra_nodes_never_raise_precision(offset in -1.0f64..1.0, j in 0usize..3) {
        let t = truth();
        let g = perfect_graph(&t);
        let before = evaluate_graph(&g, &t).unwrap().node_precision;
        let mut g2 = g.clone();
        g2.insert_node(gt_node(&t, j, offset));
        prop_assert!(evaluate_graph(&g2, &t).unwrap().node_precision <= before);
    }
}
