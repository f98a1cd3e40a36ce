//! Synthetic corpora with known Boolean ground truth.
//!
//! Items are sums of orthonormal concept directions plus noise. Component
//! vectors follow a toy encoder: atoms are pure concept directions, fused
//! pairs carry a pair-specific synergy direction, and monolithic vectors are
//! negation-blind and biased toward the first atom, the way real encoders
//! treat "not" and "or" as weak modifiers.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nsfl::embedding_store::{write_sidecar, EmbeddingMatrix, ItemRecord};
use nsfl::eval::QueryJudgment;
use nsfl::formula::{FormulaKind, FusionStyle, LogicalFormula, QueryPack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DIM: usize = 64;
pub const CONCEPTS: usize = 6;
pub const TOPICS: usize = 4;

pub struct Planted {
    pub store: EmbeddingMatrix,
    pub packs: Vec<QueryPack>,
    pub judgments: Vec<QueryJudgment>,
}

/// Random orthonormal frame of `k` vectors in `d` dimensions.
pub fn orthonormal_frame(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for u in &frame {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= p * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            frame.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    frame
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn combo(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let d = terms[0].1.len();
    let mut out = vec![0.0; d];
    for (w, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    out
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    unit((0..d).map(|_| StandardNormal.sample(rng)).collect())
}

fn concept(i: usize) -> String {
    format!("c{i}")
}

fn pair_index(i: usize, j: usize) -> usize {
    let (i, j) = (i.min(j), i.max(j));
    // position of (i, j), i < j, in row-major upper-triangular order
    i * (2 * CONCEPTS - i - 1) / 2 + (j - i - 1)
}

/// Builds `n_items` items and packs for every template.
pub fn planted(seed: u64, n_items: usize, queries_per_template: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = CONCEPTS * (CONCEPTS - 1) / 2;
    let frame = orthonormal_frame(&mut rng, CONCEPTS + n_pairs + TOPICS + 1, DIM);
    let cdir = &frame[..CONCEPTS];
    let pdir = &frame[CONCEPTS..CONCEPTS + n_pairs];
    let tdir = &frame[CONCEPTS + n_pairs..CONCEPTS + n_pairs + TOPICS];
    let zdir = &frame[CONCEPTS + n_pairs + TOPICS];

    let mut records = Vec::with_capacity(n_items);
    let mut data = Vec::with_capacity(n_items * DIM);
    for i in 0..n_items {
        let mut v = vec![0.0; DIM];
        let mut labels = Vec::new();
        let k = match rng.random_range(0.0..1.0) {
            u if u < 0.55 => 0,
            u if u < 0.80 => 1,
            u if u < 0.92 => 2,
            _ => 3,
        };
        let mut present: Vec<usize> = Vec::with_capacity(k);
        while present.len() < k {
            let c = rng.random_range(0..CONCEPTS);
            if !present.contains(&c) {
                present.push(c);
            }
        }
        for &c in &present {
            let w = rng.random_range(0.8..1.2);
            for (x, y) in v.iter_mut().zip(&cdir[c]) {
                *x += w * y;
            }
            labels.push(concept(c));
        }
        for (a, &ci) in present.iter().enumerate() {
            for &cj in &present[a + 1..] {
                if rng.random_bool(0.5) {
                    for (x, y) in v.iter_mut().zip(&pdir[pair_index(ci, cj)]) {
                        *x += 0.9 * y;
                    }
                }
            }
        }
        let t = rng.random_range(0..TOPICS);
        let tw = rng.random_range(0.3..0.9);
        for (x, y) in v.iter_mut().zip(&tdir[t]) {
            *x += tw * y;
        }
        labels.push(format!("topic{t}"));
        if present.is_empty() && rng.random_bool(0.5) {
            for (x, y) in v.iter_mut().zip(zdir) {
                *x += 1.0 * y;
            }
        }
        for x in v.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *x += 0.06 * e;
        }
        data.extend(v.iter().map(|&x| x as f32));
        records.push(ItemRecord {
            id: format!("item{i:04}"),
            labels: Some(labels),
        });
    }
    let store = EmbeddingMatrix::new(DIM, records, data).expect("planted store");

    let mut packs = Vec::new();
    for kind in FormulaKind::ALL {
        for q in 0..queries_per_template {
            let atoms: Vec<usize> = {
                let mut picked = Vec::new();
                while picked.len() < kind.arity() {
                    let c = rng.random_range(0..CONCEPTS);
                    if !picked.contains(&c) {
                        picked.push(c);
                    }
                }
                picked
            };
            let a = &cdir[atoms[0]];
            let b = &cdir[atoms[1]];
            let mut vectors = BTreeMap::new();
            vectors.insert("A".to_string(), a.clone());
            vectors.insert("B".to_string(), b.clone());
            let ab = unit(combo(&[(1.0, a), (1.0, b), (0.9, &pdir[pair_index(atoms[0], atoms[1])])]));
            vectors.insert("AB".to_string(), ab);
            let noise = random_unit(&mut rng, DIM);
            let m = if kind.arity() == 2 {
                match kind {
                    FormulaKind::And2 => combo(&[(1.0, a), (0.5, b)]),
                    FormulaKind::Not2 => combo(&[(1.0, a), (0.7, b)]),
                    _ => combo(&[(1.0, a), (0.4, b), (0.7, zdir)]),
                }
            } else {
                let c = &cdir[atoms[2]];
                vectors.insert("C".to_string(), c.clone());
                vectors.insert("ABC".to_string(), unit(combo(&[(1.0, a), (1.0, b), (1.0, c)])));
                match kind {
                    FormulaKind::And3 => combo(&[(1.0, a), (0.6, b), (0.3, c)]),
                    FormulaKind::AndNot3 => combo(&[(1.0, a), (1.0, b), (0.7, c)]),
                    _ => combo(&[(1.0, a), (0.4, b), (0.2, c), (0.7, zdir)]),
                }
            };
            vectors.insert("M".to_string(), unit(combo(&[(1.0, &m), (0.1, &noise)])));
            packs.push(QueryPack {
                qid: format!("{}-{q:02}", kind.as_str()),
                formula: LogicalFormula::new(kind, atoms.iter().map(|&c| concept(c)).collect())
                    .expect("distinct atoms"),
                fusion_style: FusionStyle::Simple,
                vectors,
                ground_truth: None,
            });
        }
    }
    let judgments = nsfl::eval::derive_judgments(&packs, &store);
    Planted {
        store,
        packs,
        judgments,
    }
}

/// Uniformly random unit-norm corpus.
pub fn random_store(seed: u64, n: usize, d: usize) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix::from_rows(
        d,
        (0..n).map(|i| {
            let v: Vec<f32> = random_unit(&mut rng, d).into_iter().map(|x| x as f32).collect();
            (format!("r{i:05}"), v)
        }),
    )
    .expect("random store")
}

/// Writes the store and its sidecar; returns `(bin, ids)` paths.
pub fn write_store(dir: &Path, store: &EmbeddingMatrix) -> (PathBuf, PathBuf) {
    let bin = dir.join("corpus.bin");
    let ids = dir.join("corpus.ids.jsonl");
    store.save(&bin, None).expect("save store");
    write_sidecar(&ids, &store.records()).expect("save sidecar");
    (bin, ids)
}
