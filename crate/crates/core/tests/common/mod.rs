#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use star_core::relevance::relevance_distribution;
use star_core::store::MemorySnapshot;
use star_core::synth::{generate_synthetic_memory, QATask, ScenarioSpec};
use star_core::vector::HashEmbedder;
use std::collections::BTreeSet;

pub fn warehouse(seed: u64) -> (MemorySnapshot, Vec<QATask>) {
    generate_synthetic_memory(&ScenarioSpec::warehouse(seed), &HashEmbedder::default()).unwrap()
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn log2_ratio(a: f64, b: f64) -> f64 {
    (a / b).ln() / std::f64::consts::LN_2
}

/// Plug-in mutual information of a partition, from first principles.
pub fn oracle_mi(priors: &[f64], rows: &[Vec<f64>]) -> f64 {
    let width = rows[0].len();
    let mut py = vec![0.0; width];
    for (p, row) in priors.iter().zip(rows) {
        for (y, v) in row.iter().enumerate() {
            py[y] += p * v;
        }
    }
    let mut info = 0.0;
    for (p, row) in priors.iter().zip(rows) {
        for (y, v) in row.iter().enumerate() {
            if *v > 0.0 && *p > 0.0 {
                info += p * v * log2_ratio(*v, py[y]);
            }
        }
    }
    info
}

fn shannon(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * log2_ratio(*x, 1.0)).sum()
}

/// Weighted JS divergence via the entropy identity.
pub fn oracle_cost(pa: f64, a: &[f64], pb: f64, b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let t = pa + pb;
    let (wa, wb) = (pa / t, pb / t);
    let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect();
    t * (shannon(&m) - wa * shannon(a) - wb * shannon(b)).max(0.0)
}

/// Random IB instance: node ids, edges, one relevance row per node.
pub struct Instance {
    pub nodes: Vec<u64>,
    pub edges: Vec<(u64, u64)>,
    pub rows: Vec<Vec<f64>>,
    pub delta_bar: f64,
}

pub fn random_instance(seed: u64, max_n: usize, max_m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let mut ids: Vec<u64> = (0..(3 * n as u64)).collect();
    ids.shuffle(&mut rng);
    let mut nodes: Vec<u64> = ids[..n].to_vec();
    nodes.sort_unstable();
    let density = rng.gen_range(0.1..0.8);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(density) {
                edges.push((nodes[i], nodes[j]));
            }
        }
    }
    let palette: Vec<Vec<f64>> = (0..3).map(|_| random_row(&mut rng, m)).collect();
    let rows = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                palette.choose(&mut rng).unwrap().clone()
            } else {
                random_row(&mut rng, m)
            }
        })
        .collect();
    let delta_bar = *[0.0, 0.01, 0.05, 0.2, 0.5, 10.0].choose(&mut rng).unwrap();
    Instance {
        nodes,
        edges,
        rows,
        delta_bar,
    }
}

fn random_row(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let mut theta = vec![0.1];
    theta.extend((0..m).map(|_| rng.gen_range(0.0..1.0)));
    let k = rng.gen_range(1..=m);
    relevance_distribution(&theta, 0.1, k).unwrap().into_vec()
}

#[derive(Debug, PartialEq)]
pub struct OracleRun {
    pub merges: Vec<((u64, u64), f64)>,
    pub rejected: Option<(u64, u64)>,
    pub stop: &'static str,
    pub partition: Vec<Vec<u64>>,
}

/// Brute-force greedy agglomeration: every step rescans all cluster pairs.
pub fn oracle_agglomerate(inst: &Instance) -> OracleRun {
    let n = inst.nodes.len() as f64;
    let edges: BTreeSet<(u64, u64)> = inst.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut clusters: Vec<(Vec<u64>, Vec<f64>)> = inst
        .nodes
        .iter()
        .zip(&inst.rows)
        .map(|(id, r)| (vec![*id], r.clone()))
        .collect();
    let mi = |cs: &[(Vec<u64>, Vec<f64>)]| {
        let priors: Vec<f64> = cs.iter().map(|c| c.0.len() as f64 / n).collect();
        let rows: Vec<Vec<f64>> = cs.iter().map(|c| c.1.clone()).collect();
        oracle_mi(&priors, &rows)
    };
    let i0 = mi(&clusters);
    let mut merges = Vec::new();
    loop {
        if clusters.len() == 1 {
            return finish(merges, None, "single_cluster", clusters);
        }
        let mut best: Option<(f64, usize, usize)> = None;
        let mut cands = Vec::new();
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let adjacent = clusters[a]
                    .0
                    .iter()
                    .any(|x| clusters[b].0.iter().any(|y| edges.contains(&((*x).min(*y), (*x).max(*y)))));
                if !adjacent {
                    continue;
                }
                let pa = clusters[a].0.len() as f64 / n;
                let pb = clusters[b].0.len() as f64 / n;
                cands.push((oracle_cost(pa, &clusters[a].1, pb, &clusters[b].1), a, b));
            }
        }
        let Some(min) = cands.iter().map(|c| c.0).reduce(f64::min) else {
            return finish(merges, None, "graph_exhausted", clusters);
        };
        for c in cands.into_iter().filter(|c| c.0 <= min + 1e-12) {
            let key = (clusters[c.1].0[0], clusters[c.2].0[0]);
            if best.map_or(true, |b| key < (clusters[b.1].0[0], clusters[b.2].0[0])) {
                best = Some(c);
            }
        }
        let (cost, a, b) = best.unwrap();
        let pair = (clusters[a].0[0], clusters[b].0[0]);
        let delta = if cost == 0.0 { 0.0 } else { cost / i0 };
        if delta > inst.delta_bar {
            return finish(merges, Some(pair), "delta_exceeded", clusters);
        }
        let (mb, rb) = clusters.remove(b);
        let (ma, ra) = &mut clusters[a];
        let (pa, pb) = (ma.len() as f64, mb.len() as f64);
        if *ra != rb {
            *ra = ra.iter().zip(&rb).map(|(x, y)| (pa * x + pb * y) / (pa + pb)).collect();
        }
        ma.extend(mb);
        ma.sort_unstable();
        clusters.sort_by_key(|c| c.0[0]);
        merges.push((pair, cost));
    }
}

fn finish(
    merges: Vec<((u64, u64), f64)>,
    rejected: Option<(u64, u64)>,
    stop: &'static str,
    clusters: Vec<(Vec<u64>, Vec<f64>)>,
) -> OracleRun {
    OracleRun {
        merges,
        rejected,
        stop,
        partition: clusters.into_iter().map(|c| c.0).collect(),
    }
}
