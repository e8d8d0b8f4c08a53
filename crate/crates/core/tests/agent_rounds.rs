mod common;

use common::warehouse;
use star_core::agent::{self, plan_query, run_rounds, Query, QueryKind, ReferenceGenerator};
use star_core::config::RetrievalConfig;
use star_core::evidence::{MidpointSelector, RetrievalIndex};
use star_core::store::{CaptionInput, KeyframeRecord, MemorySnapshot, PrimitiveInput, SnapshotBuilder};
use star_core::synth::{GroundTruth, TaskKind};
use star_core::vector::{Embedder, HashEmbedder};

fn cos(a: &str, b: &str) -> f64 {
    let e = HashEmbedder::default();
    let (x, y) = (e.embed(a).unwrap(), e.embed(b).unwrap());
    x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>().max(0.0)
}

struct Fixture {
    primitive: &'static str,
    detections: Vec<f64>,
    captions: Vec<(&'static str, f64)>,
    keyframes: Vec<(f64, Option<&'static str>)>,
    horizon: f64,
}

fn build(f: Fixture) -> MemorySnapshot {
    let mut b = SnapshotBuilder::new();
    b.add_primitive(PrimitiveInput {
        id: 7,
        centroid: [3.0, 4.0, 1.0],
        bbox: [[2.5, 3.5, 0.0], [3.5, 4.5, 2.0]],
        caption: f.primitive.into(),
        feature: None,
        detections: f.detections,
    });
    for (i, (text, t0)) in f.captions.iter().enumerate() {
        b.add_caption(CaptionInput {
            id: i as u64,
            t_start: *t0,
            t_end: t0 + 3.0,
            pose: [3.0, 2.0, 0.0, 0.0],
            text: text.to_string(),
            embedding: None,
            primitive_ids: vec![7],
        });
    }
    for (t, note) in f.keyframes {
        b.add_keyframe(KeyframeRecord {
            timestamp: t,
            image_ref: format!("kf_{t}.png"),
            visible_primitive_ids: vec![7],
            annotation: note.map(str::to_string),
        });
    }
    b.horizon(f.horizon);
    b.seal(&HashEmbedder::default()).unwrap()
}

fn ask(snap: &MemorySnapshot, query: &Query) -> agent::QueryResult {
    let index = RetrievalIndex::build(snap).unwrap();
    agent::answer_query(query, snap, &index, &RetrievalConfig::default(), &ReferenceGenerator, &MidpointSelector::default())
        .unwrap()
}

#[test]
fn planner_examples() {
    let d = plan_query(&Query::new("Where is the nearest police call pole?", 0.0)).unwrap();
    assert_eq!(d.query_kind, QueryKind::Spatial);
    assert!(d.cues.contains(&"police call pole".to_string()));

    let d = plan_query(&Query::new("When did you last see the forklift?", 0.0)).unwrap();
    assert_eq!(d.query_kind, QueryKind::Temporal);
    assert!(d.cues.contains(&"forklift".to_string()));

    let q = Query::new("Which shelf should this one be placed on?", 0.0).with_observation("white box labeled digital twin");
    let d = plan_query(&q).unwrap();
    assert_eq!(d.query_kind, QueryKind::Descriptive);
    assert!(d.cues.contains(&"digital twin box".to_string()));
    assert!(d.cues.contains(&"white box".to_string()));
}

#[test]
fn second_round_recovers_near_miss() {
    let caption = "pole police near red door";
    let s = cos(caption, "police call pole");
    let cfg = RetrievalConfig::default();
    assert!(s < cfg.tau && s >= cfg.tau - cfg.tau_relax, "fixture similarity {s}");
    let snap = build(Fixture {
        primitive: "yellow pole",
        detections: vec![1.0],
        captions: vec![(caption, 0.0)],
        keyframes: vec![],
        horizon: 10.0,
    });
    let index = RetrievalIndex::build(&snap).unwrap();
    let query = Query::new("Where is the nearest police call pole?", 10.0);
    let out = run_rounds(&query, &snap, &index, &cfg, &MidpointSelector::default()).unwrap();
    assert_eq!(out.rounds_used, 2);
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.evidence.text_evidence[0].record_id, 0);

    let one = RetrievalConfig { max_rounds: 1, ..cfg };
    let out = run_rounds(&query, &snap, &index, &one, &MidpointSelector::default()).unwrap();
    assert!(out.evidence.is_empty());
    assert_eq!(out.rounds_used, 1);
}

#[test]
fn last_seen_eight_minutes_ago() {
    let snap = build(Fixture {
        primitive: "yellow forklift",
        detections: vec![100.0, 300.0],
        captions: vec![("yellow forklift parked by the dock", 99.0), ("yellow forklift turning", 297.0)],
        keyframes: vec![],
        horizon: 800.0,
    });
    let r = ask(&snap, &Query::new("When did you last see the forklift?", 780.0));
    assert_eq!(r.answer.kind, QueryKind::Temporal);
    assert_eq!(r.answer.time_ago, Some(480.0));
    assert_eq!(r.answer.text, "8 mins ago");
}

#[test]
fn binary_falls_back_to_keyframe_annotation() {
    let snap = build(Fixture {
        primitive: "pole",
        detections: vec![1.5],
        captions: vec![("tall pole", 0.0)],
        keyframes: vec![(1.0, Some("yellow pole")), (2.0, None)],
        horizon: 3.0,
    });
    let r = ask(&snap, &Query::new("Is there a yellow pole?", 3.0));
    assert_eq!(r.answer.kind, QueryKind::Binary);
    assert!(!r.answer.evidence.keyframe_refs.is_empty());
    assert_eq!(r.answer.text, "yes");

    let bare = build(Fixture {
        primitive: "pole",
        detections: vec![1.5],
        captions: vec![("tall pole", 0.0)],
        keyframes: vec![(1.0, None)],
        horizon: 3.0,
    });
    assert_eq!(ask(&bare, &Query::new("Is there a yellow pole?", 3.0)).answer.text, "no");
}

#[test]
fn gibberish_is_not_found() {
    let (snap, _) = warehouse(42);
    let r = ask(&snap, &Query::new("Where is the zxqv wibblefrob?", 1200.0));
    assert!(!r.answer.found);
    assert!(r.answer.evidence.is_empty());
    assert_eq!(r.answer.rounds_used, 3);
    assert_eq!(r.answer.position, None);
}

#[test]
fn spatial_answers_are_bbox_centers() {
    let (snap, tasks) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let cfg = RetrievalConfig::default();
    let centers: Vec<[f64; 3]> = snap.primitives().values().map(|p| p.bbox_center()).collect();
    let mut n = 0;
    for t in tasks.iter().filter(|t| t.kind == TaskKind::Spatial) {
        let r = agent::answer_query(&t.query, &snap, &index, &cfg, &ReferenceGenerator, &MidpointSelector::default()).unwrap();
        let p = r.answer.position.expect("spatial answer");
        assert!(centers.contains(&p));
        if let GroundTruth::Position(gt) = t.ground_truth {
            let target = snap.primitive(t.target.unwrap()).unwrap();
            if target.bbox_center() == p {
                assert_eq!(star_core::store::distance(&p, &gt), 0.0);
            }
        }
        n += 1;
    }
    assert_eq!(n, 40);
}

#[test]
fn scheme_mismatch_is_rejected() {
    let (snap, _) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let cfg = RetrievalConfig {
        embedder: "external:clip".into(),
        ..RetrievalConfig::default()
    };
    let q = Query::new("Where is the forklift?", 10.0);
    assert!(run_rounds(&q, &snap, &index, &cfg, &MidpointSelector::default()).is_err());
}
