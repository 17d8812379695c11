#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;

use collab::env::{GridState, Tile};
use collab::fingerprint::{feature_names, Fingerprint};
use collab::harness::ParetoPoint;
use collab::policies::TeammateType;
use collab::retrieval::{DbMetadata, TrajectoryDB, TrajectoryRecord, ZScoreStats};

pub const NUM_TYPES: usize = 5;

/// Fingerprint with every catalog feature drawn from a small integer grid, so
/// ties are common.
pub fn random_fingerprint<R: Rng>(rng: &mut R) -> Fingerprint {
    Fingerprint {
        features: feature_names()
            .into_iter()
            .map(|n| (n, rng.gen_range(0..6) as f64 * 0.5))
            .collect(),
        probe_length: 20,
    }
}

pub fn zero_fingerprint() -> Fingerprint {
    Fingerprint {
        features: feature_names().into_iter().map(|n| (n, 0.0)).collect(),
        probe_length: 20,
    }
}

/// Equal-frequency bin of each value: the number of strictly smaller values
/// scaled to `bins`.
pub fn bins_oracle(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    values
        .iter()
        .map(|v| values.iter().filter(|u| *u < v).count() * bins / n)
        .collect()
}

/// Plug-in MI from a contingency table filled by a double loop over the
/// distinct values of each variable.
pub fn mi_oracle(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut xs: Vec<usize> = x.to_vec();
    xs.sort_unstable();
    xs.dedup();
    let mut ys: Vec<usize> = y.to_vec();
    ys.sort_unstable();
    ys.dedup();
    let mut mi = 0.0;
    for &a in &xs {
        let na = x.iter().filter(|&&v| v == a).count() as f64;
        for &b in &ys {
            let nb = y.iter().filter(|&&v| v == b).count() as f64;
            let nab = x.iter().zip(y).filter(|(&u, &v)| u == a && v == b).count() as f64;
            if nab > 0.0 {
                mi += nab / n * ((nab / n) / ((na / n) * (nb / n))).ln();
            }
        }
    }
    mi
}

pub fn record(id: &str, ty: TeammateType, embedding: Vec<f64>) -> TrajectoryRecord {
    TrajectoryRecord {
        id: id.to_string(),
        layout: "test".into(),
        true_type: ty,
        probe_length: 20,
        fingerprint: zero_fingerprint(),
        description: String::new(),
        embedding,
        seed: 0,
        trace: Vec::new(),
    }
}

/// Database of `embeddings` with z-score metadata of matching dimension.
pub fn db_of(embeddings: &[Vec<f64>]) -> TrajectoryDB {
    let dim = embeddings[0].len();
    let stats = ZScoreStats {
        features: (0..dim).map(|i| format!("f{i}")).collect(),
        mean: vec![0.0; dim],
        std: vec![1.0; dim],
    };
    let mut db = TrajectoryDB::new(DbMetadata::zscore(stats));
    for (i, e) in embeddings.iter().enumerate() {
        let ty = TeammateType::ALL[i % NUM_TYPES];
        db.insert(record(&format!("r{i}"), ty, e.clone())).unwrap();
    }
    db
}

/// Indices and scores of the `k` best records by cosine, ties by index.
pub fn brute_topk(embeddings: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(usize, f64)> = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dot: f64 = e.iter().zip(q).map(|(a, b)| a * b).sum();
            (i, (dot / (norm(e) * norm(q))).clamp(-1.0, 1.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Points not strictly dominated by any other, in input order.
pub fn pareto_oracle(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let mut dominated = false;
        for (j, q) in points.iter().enumerate() {
            if i != j
                && q.accuracy >= p.accuracy
                && q.ret >= p.ret
                && (q.accuracy > p.accuracy || q.ret > p.ret)
            {
                dominated = true;
            }
        }
        if !dominated {
            out.push(p.clone());
        }
    }
    out
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<ParetoPoint> {
    (0..n)
        .map(|i| ParetoPoint {
            label: format!("p{i}"),
            accuracy: rng.gen_range(0..20) as f64 / 20.0,
            ret: rng.gen_range(0..50) as f64 * 4.0,
        })
        .collect()
}

/// Posterior from a uniform prior by summing log-likelihoods and
/// normalizing with log-sum-exp.
pub fn log_domain_posterior(log_likelihoods: &[[f64; NUM_TYPES]]) -> Vec<f64> {
    let mut acc = [(1.0 / NUM_TYPES as f64).ln(); NUM_TYPES];
    for row in log_likelihoods {
        for t in 0..NUM_TYPES {
            acc[t] += row[t];
        }
    }
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = hi + acc.iter().map(|a| (a - hi).exp()).sum::<f64>().ln();
    acc.iter().map(|a| (a - lse).exp()).collect()
}

/// Every structural invariant of a grid state; the first violation found.
pub fn check_state(state: &GridState, cook_time: u32) -> Result<(), String> {
    let layout = &state.layout;
    for (i, a) in state.agents.iter().enumerate() {
        if layout.tile(a.position) != Tile::Floor {
            return Err(format!("agent {i} off the floor at {:?}", a.position));
        }
    }
    if state.agents[0].position == state.agents[1].position {
        return Err("agents share a cell".into());
    }
    for pot in &state.pots {
        let p = pot.state;
        if p.onion_count > 3 {
            return Err(format!("pot {:?} holds {} onions", pot.cell, p.onion_count));
        }
        if p.cook_timer > cook_time {
            return Err(format!("pot {:?} timer {}", pot.cell, p.cook_timer));
        }
        if (p.cook_timer > 0 || p.ready) && p.onion_count != 3 {
            return Err(format!("pot {:?} cooks without 3 onions", pot.cell));
        }
        if p.ready && p.cook_timer != 0 {
            return Err(format!("pot {:?} ready while cooking", pot.cell));
        }
    }
    let mut seen = BTreeMap::new();
    for c in &state.counters {
        if layout.tile(c.cell) != Tile::Wall {
            return Err(format!("item on non-counter cell {:?}", c.cell));
        }
        if seen.insert(c.cell, ()).is_some() {
            return Err(format!("two items on counter {:?}", c.cell));
        }
    }
    Ok(())
}
