mod common;

use common::random_unit;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use star_core::vector::{Embedder, FlatIndex, HashEmbedder, SearchFilter, SearchHit};

fn linear_scan(data: &[Vec<f64>], q: &[f64]) -> Vec<SearchHit> {
    let mut hits: Vec<SearchHit> = data
        .iter()
        .enumerate()
        .map(|(i, v)| SearchHit {
            record_id: i as u64,
            score: v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>().max(0.0),
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.record_id.cmp(&b.record_id)));
    hits
}

fn build(data: &[Vec<f64>]) -> FlatIndex {
    let mut index = FlatIndex::new(data[0].len());
    for (i, v) in data.iter().enumerate() {
        index.insert(i as u64, v, None).unwrap();
    }
    index
}

#[test]
fn vector_17_at_tau_09() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data: Vec<Vec<f64>> = (0..100).map(|_| random_unit(&mut rng, 16)).collect();
    let index = build(&data);
    let hits = index.search_above_threshold(&data[17], 0.9, &SearchFilter::none()).unwrap();
    let expected: Vec<SearchHit> = linear_scan(&data, &data[17]).into_iter().filter(|h| h.score >= 0.9).collect();
    assert_eq!(hits, expected);
    assert_eq!(hits[0].record_id, 17);
}

#[test]
fn topk_is_prefix_of_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data: Vec<Vec<f64>> = (0..200).map(|_| random_unit(&mut rng, 8)).collect();
    let index = build(&data);
    let q = random_unit(&mut rng, 8);
    let all = index.search_above_threshold(&q, 0.0, &SearchFilter::none()).unwrap();
    assert_eq!(index.search_topk(&q, 6).unwrap(), all[..6].to_vec());
}

#[test]
fn shared_tokens_score_higher() {
    let e = HashEmbedder::default();
    let q = e.embed("yellow police pole").unwrap();
    let dot = |t: &str| {
        let v = e.embed(t).unwrap();
        v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>()
    };
    assert!(dot("yellow pole") > dot("blue barrel"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_and_topk_match_scan(seed in any::<u64>(), d in 2usize..12, n in 1usize..300, tau in 0.0f64..1.0, k in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let index = build(&data);
        let q = random_unit(&mut rng, d);
        let oracle = linear_scan(&data, &q);
        let above: Vec<SearchHit> = oracle.iter().copied().filter(|h| h.score >= tau).collect();
        prop_assert_eq!(index.search_above_threshold(&q, tau, &SearchFilter::none()).unwrap(), above);
        prop_assert_eq!(index.search_topk(&q, k).unwrap(), oracle[..k.min(n)].to_vec());
    }
}
