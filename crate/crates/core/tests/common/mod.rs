//! Brute-force reference implementations and synthetic fixtures shared by the
//! integration tests. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cats_core::embed::HashEmbedder;
use cats_core::kg::{Graph, LabeledTriple, QueryBlock, BLOCK_SIZE};
use cats_core::neighbors::{select_neighbors, NeighborConfig};
use cats_core::paths::{extract_paths, filter_paths, path_degree, PathConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Step = (String, bool, String);

pub fn lt(h: &str, r: &str, t: &str) -> LabeledTriple {
    LabeledTriple::new(h, r, t)
}

/// Distinct random triples over `e0..e{entities}` and `r0..r{relations}`.
pub fn random_triples(rng: &mut impl Rng, max_triples: usize, entities: usize, relations: usize) -> Vec<LabeledTriple> {
    let target = rng.gen_range(0..=max_triples);
    let mut set = BTreeSet::new();
    for _ in 0..target * 4 {
        if set.len() == target {
            break;
        }
        set.insert(lt(
            &format!("e{}", rng.gen_range(0..entities)),
            &format!("r{}", rng.gen_range(0..relations)),
            &format!("e{}", rng.gen_range(0..entities)),
        ));
    }
    let mut v: Vec<_> = set.into_iter().collect();
    v.shuffle(rng);
    v
}

/// Every simple path from `h` to `t` with at most `n` steps, found by
/// recursive depth-first search straight over the triple list.
pub fn dfs_paths(
    triples: &[LabeledTriple],
    h: &str,
    t: &str,
    rq: Option<&str>,
    n: usize,
    bidirectional: bool,
) -> BTreeSet<Vec<Step>> {
    fn go(
        triples: &[LabeledTriple],
        t: &str,
        rq: Option<&str>,
        n: usize,
        bidirectional: bool,
        visited: &mut Vec<String>,
        cur: &mut Vec<Step>,
        out: &mut BTreeSet<Vec<Step>>,
    ) {
        if cur.len() == n {
            return;
        }
        let at = visited.last().unwrap().clone();
        for tr in triples {
            if Some(tr.relation.as_str()) == rq {
                continue;
            }
            let mut moves = Vec::new();
            if tr.head == at {
                moves.push((false, tr.tail.clone()));
            }
            if bidirectional && tr.tail == at {
                moves.push((true, tr.head.clone()));
            }
            for (inv, next) in moves {
                cur.push((tr.relation.clone(), inv, next.clone()));
                if next == t {
                    out.insert(cur.clone());
                } else if !visited.contains(&next) {
                    visited.push(next);
                    go(triples, t, rq, n, bidirectional, visited, cur, out);
                    visited.pop();
                }
                cur.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    go(triples, t, rq, n, bidirectional, &mut vec![h.to_string()], &mut Vec::new(), &mut out);
    out
}

pub fn relation_counts(triples: &[LabeledTriple]) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for t in triples {
        *m.entry(t.relation.clone()).or_insert(0) += 1;
    }
    m
}

pub fn degree_of(path: &[Step], counts: &BTreeMap<String, u64>) -> u64 {
    path.iter().map(|(r, _, _)| counts.get(r).copied().unwrap_or(0)).sum()
}

/// The `beta` lowest-degree paths; ties go to shorter paths, then to the
/// lexicographically smaller step sequence.
pub fn brute_filter(paths: &BTreeSet<Vec<Step>>, counts: &BTreeMap<String, u64>, beta: usize) -> Vec<(Vec<Step>, u64)> {
    let mut all: Vec<(Vec<Step>, u64)> = paths.iter().map(|p| (p.clone(), degree_of(p, counts))).collect();
    let mut out = Vec::new();
    while out.len() < beta && !all.is_empty() {
        let mut best = 0;
        for i in 1..all.len() {
            let (a, b) = (&all[i], &all[best]);
            if (a.1, a.0.len(), &a.0) < (b.1, b.0.len(), &b.0) {
                best = i;
            }
        }
        out.push(all.remove(best));
    }
    out
}

pub fn linearized(t: &LabeledTriple) -> String {
    format!(
        "({}, {}, {})",
        t.head.replace('_', " "),
        t.relation.replace('_', " "),
        t.tail.replace('_', " ")
    )
}

pub fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Picks `sigma` facts touching `entity` one at a time, each time taking the
/// remaining fact with the highest cosine to the query (smallest triple on ties).
pub fn argmax_neighbors(
    triples: &[LabeledTriple],
    q: &LabeledTriple,
    entity: &str,
    sigma: usize,
    emb: &HashEmbedder,
) -> Vec<(LabeledTriple, f64)> {
    let qv = emb.embed_one(&linearized(q));
    let mut pool: Vec<(LabeledTriple, f64)> = triples
        .iter()
        .filter(|t| (t.head == entity || t.tail == entity) && *t != q)
        .map(|t| (t.clone(), cosine64(&emb.embed_one(&linearized(t)), &qv)))
        .collect();
    let mut out = Vec::new();
    while out.len() < sigma && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let better = pool[i].1 > pool[best].1 || (pool[i].1 == pool[best].1 && pool[i].0 < pool[best].0);
            if better {
                best = i;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// A synthetic benchmark: a sparse graph plus tail-corrupted query blocks whose
/// positives are held out of the graph.
pub struct Synthetic {
    pub graph: Vec<LabeledTriple>,
    pub blocks: Vec<QueryBlock>,
}

pub fn synthetic(seed: u64, entities: usize, relations: usize, triples: usize, queries: usize, prefix: &str) -> Synthetic {
    assert!(entities > BLOCK_SIZE, "need more entities than block candidates");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let name = |i: usize| format!("{prefix}{i}");
    let mut set = BTreeSet::new();
    while set.len() < triples + queries {
        let h = rng.gen_range(0..entities);
        let t = rng.gen_range(0..entities);
        if h != t {
            set.insert(lt(&name(h), &format!("rel_{}", rng.gen_range(0..relations)), &name(t)));
        }
    }
    let mut all: Vec<_> = set.into_iter().collect();
    all.shuffle(&mut rng);
    let held_out = all.split_off(triples);
    let known: BTreeSet<_> = all.iter().chain(&held_out).cloned().collect();
    let blocks = held_out
        .iter()
        .enumerate()
        .map(|(i, pos)| {
            let mut negs = BTreeSet::new();
            while negs.len() < BLOCK_SIZE - 1 {
                let c = lt(&pos.head, &pos.relation, &name(rng.gen_range(0..entities)));
                if !known.contains(&c) {
                    negs.insert(c);
                }
            }
            let mut negs: Vec<_> = negs.into_iter().collect();
            negs.shuffle(&mut rng);
            QueryBlock::new(format!("synthetic:{i}"), pos.clone(), negs).unwrap()
        })
        .collect();
    Synthetic { graph: all, blocks }
}

pub fn write_triples(path: &std::path::Path, triples: &[LabeledTriple]) {
    let text: String = triples.iter().map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail)).collect();
    std::fs::write(path, text).unwrap();
}

pub fn write_blocks(path: &std::path::Path, blocks: &[QueryBlock]) {
    let rows: Vec<LabeledTriple> = blocks.iter().flat_map(|b| b.candidates().cloned()).collect();
    write_triples(path, &rows);
}

pub fn graph(name: &str, triples: &[LabeledTriple]) -> Graph {
    Graph::from_labeled(name, triples)
}

fn step_list(g: &Graph, p: &cats_core::paths::ReasoningPath) -> Vec<Step> {
    p.step_key(g)
        .into_iter()
        .map(|(r, inv, e)| (r.to_string(), inv, e.to_string()))
        .collect()
}

fn unlimited(n: usize, bidirectional: bool) -> PathConfig {
    PathConfig {
        max_len: n,
        bidirectional,
        max_raw_paths: usize::MAX,
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Compares `extract_paths` with [`dfs_paths`] for every ordered entity pair
/// and every choice of excluded relation (including none).
pub fn check_enumeration(triples: &[LabeledTriple], n: usize, bidirectional: bool) -> Result<usize, String> {
    let g = Graph::from_labeled("g", triples);
    let occ = g.occurrences();
    let mut rqs: Vec<Option<&str>> = vec![None];
    rqs.extend(g.relation_labels().iter().map(|r| Some(r.as_str())));
    let mut compared = 0;
    for h in g.entity_ids() {
        for t in g.entity_ids() {
            if h == t {
                continue;
            }
            for rq in &rqs {
                let got = extract_paths(&g, h, t, rq.and_then(|r| g.relation_id(r)), &unlimited(n, bidirectional), &occ, None)
                    .map_err(|e| e.to_string())?;
                let steps: Vec<Vec<Step>> = got.iter().map(|p| step_list(&g, p)).collect();
                let mut sorted = steps.clone();
                sorted.sort();
                ensure!(steps == sorted, "output not in step order");
                let set: BTreeSet<Vec<Step>> = steps.into_iter().collect();
                ensure!(set.len() == got.len(), "duplicate paths");
                let want = dfs_paths(triples, g.entity_label(h), g.entity_label(t), *rq, n, bidirectional);
                ensure!(set == want, "paths differ for {} -> {} excluding {:?}", g.entity_label(h), g.entity_label(t), rq);
                for p in &got {
                    ensure!(!p.steps.is_empty() && p.steps.len() <= n, "bad length");
                    ensure!(p.source == h && p.target() == t, "bad endpoints");
                    let ents = p.entities();
                    let distinct: BTreeSet<_> = ents.iter().collect();
                    ensure!(distinct.len() == ents.len(), "path revisits an entity");
                    ensure!(p.triples().iter().all(|tr| g.contains(tr)), "path uses a missing triple");
                }
                compared += 1;
            }
        }
    }
    Ok(compared)
}

/// `graphs` seeded graphs of up to 50 triples; every ordered entity pair.
/// Returns the number of pairs compared.
pub fn check_degree_and_filter(seed: u64, graphs: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = 0usize;
    for _ in 0..graphs {
        let triples = random_triples(&mut rng, 50, 14, 5);
        let g = Graph::from_labeled("g", &triples);
        let occ = g.occurrences();
        let counts = relation_counts(&triples);
        for h in g.entity_ids() {
            for t in g.entity_ids() {
                if h == t {
                    continue;
                }
                pairs += 1;
                let paths = extract_paths(&g, h, t, None, &unlimited(3, true), &occ, None).map_err(|e| e.to_string())?;
                for p in &paths {
                    let want = degree_of(&step_list(&g, p), &counts);
                    ensure!(path_degree(p, &occ) == want && p.degree == want, "degree mismatch");
                }
                let all = dfs_paths(&triples, g.entity_label(h), g.entity_label(t), None, 3, true);
                for beta in [0, 1, 6] {
                    let got: Vec<(Vec<Step>, u64)> = filter_paths(&g, paths.clone(), beta)
                        .iter()
                        .map(|p| (step_list(&g, p), p.degree))
                        .collect();
                    ensure!(got == brute_filter(&all, &counts, beta), "filter mismatch (beta={beta})");
                }
            }
        }
    }
    Ok(pairs)
}

/// `graphs` seeded graphs, ten random queries each, random sigma in 0..8.
/// Returns the number of queries compared.
pub fn check_neighbors(seed: u64, graphs: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = HashEmbedder::new(16);
    let mut queries = 0;
    for _ in 0..graphs {
        let triples = random_triples(&mut rng, 40, 10, 4);
        let g = Graph::from_labeled("g", &triples);
        let labels = g.entity_labels().to_vec();
        if labels.len() < 2 {
            continue;
        }
        for _ in 0..10 {
            // Sometimes query a triple that is itself in the graph.
            let q = if rng.gen_bool(0.3) && !triples.is_empty() {
                triples[rng.gen_range(0..triples.len())].clone()
            } else {
                let h = &labels[rng.gen_range(0..labels.len())];
                let t = &labels[rng.gen_range(0..labels.len())];
                lt(h, &format!("r{}", rng.gen_range(0..4)), t)
            };
            if q.head == q.tail {
                continue;
            }
            let sigma = rng.gen_range(0..8);
            let cfg = NeighborConfig {
                sigma,
                both_orientations: true,
            };
            let got = select_neighbors(&g, &q, &cfg, &emb, None).map_err(|e| e.to_string())?;
            let want_h = argmax_neighbors(&triples, &q, &q.head, sigma, &emb);
            let want_t = argmax_neighbors(&triples, &q, &q.tail, sigma, &emb);
            let got_h: Vec<_> = got.head_facts.iter().map(|f| (f.triple.clone(), f.score)).collect();
            let got_t: Vec<_> = got.tail_facts.iter().map(|f| (f.triple.clone(), f.score)).collect();
            ensure!(got_h == want_h, "head side of {q} differs");
            ensure!(got_t == want_t, "tail side of {q} differs");
            queries += 1;
        }
    }
    Ok(queries)
}
