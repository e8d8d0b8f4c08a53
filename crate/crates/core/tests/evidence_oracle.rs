mod common;

use common::warehouse;
use star_core::agent::{self, Query};
use star_core::config::RetrievalConfig;
use star_core::evidence::{
    group_captions, induce_primitive_subset, phi, rank_evidence, retrieve_caption_pool, run_pipeline, MidpointSelector,
    Representative, RetrievalIndex,
};
use star_core::ib::{agglomerate_primitives, build_adjacency};
use star_core::relevance::TaskCueSet;
use star_core::store::{CaptionInput, MemorySnapshot, PrimitiveInput, SnapshotBuilder};
use star_core::vector::{HashEmbedder, SearchFilter, SearchHit};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

fn cues(texts: &[&str]) -> TaskCueSet {
    let cfg = RetrievalConfig::default();
    TaskCueSet::from_texts(texts, &HashEmbedder::default(), cfg.alpha, cfg.gamma_topk).unwrap()
}

#[test]
fn pool_is_max_score_union_of_per_cue_hits() {
    let (snap, _) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let set = cues(&["white box", "digital twin box", "shelf"]);
    let pool = retrieve_caption_pool(index.captions(), &set, 0.4).unwrap();
    let mut best: BTreeMap<u64, f64> = BTreeMap::new();
    for cue in set.cues() {
        for h in index.captions().search_above_threshold(&cue.embedding, 0.4, &SearchFilter::none()).unwrap() {
            let e = best.entry(h.record_id).or_insert(h.score);
            *e = e.max(h.score);
        }
    }
    let mut expected: Vec<SearchHit> = best.into_iter().map(|(record_id, score)| SearchHit { record_id, score }).collect();
    expected.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record_id.cmp(&b.record_id)));
    assert!(expected.len() > 10);
    assert_eq!(pool.hits, expected);
}

#[test]
fn working_set_is_union_over_pool_captions() {
    let (snap, _) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let set = cues(&["white box"]);
    let pool = retrieve_caption_pool(index.captions(), &set, 0.55).unwrap();
    let e = HashEmbedder::default();
    let q = star_core::vector::Embedder::embed(&e, "white box").unwrap();
    let mut expected = BTreeSet::new();
    for c in snap.captions() {
        let s = c.embedding.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>().max(0.0);
        if s >= 0.55 {
            expected.extend(c.primitive_ids.iter().copied());
        }
    }
    let ws = induce_primitive_subset(&pool, &snap).unwrap();
    assert!(!ws.is_empty());
    assert_eq!(ws, expected.into_iter().collect::<Vec<_>>());
}

#[test]
fn grouping_matches_intersection_test() {
    let (snap, tasks) = warehouse(42);
    let cfg = RetrievalConfig::default();
    let index = RetrievalIndex::build(&snap).unwrap();
    let mut checked = 0;
    for task in &tasks {
        let d = agent::plan_query(&task.query).unwrap();
        let set = TaskCueSet::from_texts(&d.cues, &HashEmbedder::default(), cfg.alpha, cfg.gamma_topk).unwrap();
        let pool = retrieve_caption_pool(index.captions(), &set, cfg.tau).unwrap();
        let ws = induce_primitive_subset(&pool, &snap).unwrap();
        if ws.is_empty() {
            continue;
        }
        let graph = build_adjacency(&snap, &ws, cfg.r_adj, cfg.cooccurrence_edges).unwrap();
        let agg = agglomerate_primitives(&snap, &set, &graph, cfg.delta_bar).unwrap();
        let grouping = group_captions(&pool, &agg.clusters, &snap).unwrap();
        for cluster in &agg.clusters {
            let expected: Vec<u64> = pool
                .hits
                .iter()
                .map(|h| snap.caption(h.record_id).unwrap())
                .filter(|c| c.primitive_ids.iter().any(|p| cluster.members.contains(p)))
                .map(|c| c.id)
                .collect();
            let got = grouping.groups.iter().find(|g| g.cluster_id == cluster.id).map(|g| g.caption_ids.clone());
            assert_eq!(got.unwrap_or_default(), expected, "task {}", task.id);
            checked += 1;
        }
        for id in &grouping.ungrouped {
            let c = snap.caption(*id).unwrap();
            assert!(c.primitive_ids.iter().all(|p| !ws.contains(p)));
        }
    }
    assert!(checked > 100);
}

fn tiny_snapshot(texts: &[&str]) -> MemorySnapshot {
    let mut b = SnapshotBuilder::new();
    b.add_primitive(PrimitiveInput {
        id: 0,
        centroid: [0.0, 0.0, 0.5],
        bbox: [[-0.5, -0.5, 0.0], [0.5, 0.5, 1.0]],
        caption: "yellow pole".into(),
        feature: None,
        detections: vec![1.0],
    });
    for (i, t) in texts.iter().enumerate() {
        b.add_caption(CaptionInput {
            id: i as u64,
            t_start: 3.0 * i as f64,
            t_end: 3.0 * (i + 1) as f64,
            pose: [0.0; 4],
            text: t.to_string(),
            embedding: None,
            primitive_ids: vec![0],
        });
    }
    b.seal(&HashEmbedder::default()).unwrap()
}

#[test]
fn verbatim_caption_wins_its_group() {
    let snap = tiny_snapshot(&["a tall pole by the door", "police call pole"]);
    let set = cues(&["police call pole"]);
    let (a, _) = phi(&snap.caption(0).unwrap().embedding, &set).unwrap();
    let (b, _) = phi(&snap.caption(1).unwrap().embedding, &set).unwrap();
    assert!(b > a);
    let index = RetrievalIndex::build(&snap).unwrap();
    let cfg = RetrievalConfig {
        tau: 0.0,
        ..RetrievalConfig::default()
    };
    let out = run_pipeline(&snap, &index, &set, &cfg, 0.0, &MidpointSelector::default()).unwrap();
    assert_eq!(out.evidence.text_evidence.len(), 1);
    assert_eq!(out.evidence.text_evidence[0].record_id, 1);
}

#[test]
fn ties_at_the_cut_follow_sort_order() {
    let reps: Vec<Representative> = (0..9)
        .map(|i| Representative {
            cluster_id: i,
            caption_id: 100 - i as u64,
            phi: if i < 3 { 0.9 } else { 0.5 },
            best_cue: 0,
            t_start: [30.0, 10.0, 20.0, 40.0, 40.0, 5.0, 60.0, 5.0, 7.0][i],
        })
        .collect();
    let ranked = rank_evidence(&reps, 6).unwrap();
    let mut oracle = reps.clone();
    oracle.sort_by(|a, b| {
        b.phi
            .total_cmp(&a.phi)
            .then(a.t_start.total_cmp(&b.t_start))
            .then(a.caption_id.cmp(&b.caption_id))
    });
    let got: Vec<u64> = ranked.iter().map(|r| r.rep.caption_id).collect();
    let expected: Vec<u64> = oracle.iter().take(6).map(|r| r.caption_id).collect();
    assert_eq!(got, expected);
    assert_eq!(ranked.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 1, 1, 2, 2, 2]);
    assert_eq!(rank_evidence(&reps, 6).unwrap(), ranked);
}

#[test]
fn one_entry_per_cluster_on_every_fixture() {
    let cfg = RetrievalConfig::default();
    for seed in [1, 7, 42, 99] {
        let (snap, tasks) = warehouse(seed);
        let index = RetrievalIndex::build(&snap).unwrap();
        for task in &tasks {
            let result = agent::answer_query(
                &task.query,
                &snap,
                &index,
                &cfg,
                &agent::ReferenceGenerator,
                &MidpointSelector::default(),
            )
            .unwrap();
            let ev = &result.answer.evidence;
            assert!(ev.text_evidence.len() <= cfg.k);
            let ids: BTreeSet<usize> = ev.text_evidence.iter().map(|e| e.cluster_id).collect();
            assert_eq!(ids.len(), ev.text_evidence.len(), "seed {seed} task {}", task.id);
            assert!(ev.keyframe_refs.len() <= 3);
            let stamps: BTreeSet<u64> = ev.keyframe_refs.iter().map(|k| k.timestamp.to_bits()).collect();
            assert_eq!(stamps.len(), ev.keyframe_refs.len());
        }
    }
}

#[test]
fn keyframes_resolve_to_nearest_within_tolerance() {
    let (snap, _) = warehouse(42);
    let cfg = RetrievalConfig::default();
    let index = RetrievalIndex::build(&snap).unwrap();
    let set = cues(&["yellow forklift"]);
    let out = run_pipeline(&snap, &index, &set, &cfg, cfg.tau, &MidpointSelector::default()).unwrap();
    let ev = out.evidence;
    assert!(!ev.text_evidence.is_empty());
    let mut expected = Vec::new();
    for e in ev.text_evidence.iter().take(3) {
        let mid = 0.5 * (e.t_start + e.t_end);
        let best = snap
            .keyframes()
            .iter()
            .filter(|k| (k.timestamp - mid).abs() <= cfg.keyframe_tol)
            .min_by(|a, b| (a.timestamp - mid).abs().total_cmp(&(b.timestamp - mid).abs()).then(a.timestamp.total_cmp(&b.timestamp)));
        if let Some(k) = best {
            if !expected.contains(&k.image_ref) {
                expected.push(k.image_ref.clone());
            }
        }
    }
    let got: Vec<String> = ev.keyframe_refs.iter().map(|k| k.image_ref.clone()).collect();
    assert_eq!(got, expected);
}

#[test]
fn golden_evidence_is_stable() {
    let (snap, _) = warehouse(42);
    let cfg = RetrievalConfig::default();
    let index = RetrievalIndex::build(&snap).unwrap();
    let query = Query::new("Which shelf should this one be placed on?", 1200.0).with_observation("white box labeled fragile");
    let result = agent::answer_query(&query, &snap, &index, &cfg, &agent::ReferenceGenerator, &MidpointSelector::default())
        .unwrap();
    let text = format!("{}\n", result.answer.evidence.to_canonical());
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/evidence_seed42.json");
    if std::env::var_os("STAR_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file; run with STAR_BLESS=1 to record");
    assert_eq!(text, golden);
}
