//! Neighbor-fact selection by embedding similarity to the query triple.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder};
use crate::kg::{Graph, LabeledTriple, Triple};

#[derive(Debug, Error)]
pub enum NeighborError {
    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, NeighborError> {
    if a.len() != b.len() {
        return Err(NeighborError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(NeighborError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub triple: LabeledTriple,
    pub score: f64,
    /// Name of the graph the fact came from.
    pub graph: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub head_facts: Vec<ScoredFact>,
    pub tail_facts: Vec<ScoredFact>,
}

impl NeighborSet {
    pub fn is_empty(&self) -> bool {
        self.head_facts.is_empty() && self.tail_facts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborConfig {
    pub sigma: usize,
    /// Count triples where the entity sits in either slot. When false the head
    /// side only sees triples headed by the query head and the tail side only
    /// triples ending in the query tail.
    pub both_orientations: bool,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self {
            sigma: 6,
            both_orientations: true,
        }
    }
}

/// Descending score, then ascending triple labels.
pub fn fact_order(a: &ScoredFact, b: &ScoredFact) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.triple.cmp(&b.triple))
}

/// Picks the `sigma` facts around each query entity whose linearized text is
/// most similar to the linearized query. The query triple itself and `masked`
/// are never selected.
pub fn select_neighbors(
    evidence: &Graph,
    q: &LabeledTriple,
    cfg: &NeighborConfig,
    emb: &dyn Embedder,
    masked: Option<Triple>,
) -> Result<NeighborSet, NeighborError> {
    if cfg.sigma == 0 {
        return Ok(NeighborSet::default());
    }
    let eligible = |i: &usize| {
        let t = evidence.triple(*i);
        Some(t) != masked && evidence.label(&t) != *q
    };
    let side = |entity: &str, as_head: bool| -> Vec<usize> {
        let Some(e) = evidence.entity_id(entity) else {
            return Vec::new();
        };
        let mut idx: Vec<usize> = if cfg.both_orientations {
            evidence
                .outgoing(e)
                .iter()
                .chain(evidence.incoming(e))
                .copied()
                .collect()
        } else if as_head {
            evidence.outgoing(e).to_vec()
        } else {
            evidence.incoming(e).to_vec()
        };
        idx.sort_unstable();
        idx.dedup();
        idx.retain(eligible);
        idx
    };
    let head_idx = side(&q.head, true);
    let tail_idx = side(&q.tail, false);
    if head_idx.is_empty() && tail_idx.is_empty() {
        return Ok(NeighborSet::default());
    }

    let mut texts = vec![q.linearize()];
    texts.extend(
        head_idx
            .iter()
            .chain(&tail_idx)
            .map(|&i| evidence.linearize(&evidence.triple(i))),
    );
    let vectors = emb.embed(&texts)?;
    let query_vec = &vectors[0];

    let scored = |idx: &[usize], offset: usize| -> Result<Vec<ScoredFact>, NeighborError> {
        let mut facts = idx
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                Ok(ScoredFact {
                    triple: evidence.label(&evidence.triple(i)),
                    score: cosine(&vectors[offset + j], query_vec)?,
                    graph: evidence.name().to_string(),
                })
            })
            .collect::<Result<Vec<_>, NeighborError>>()?;
        facts.sort_by(fact_order);
        facts.truncate(cfg.sigma);
        Ok(facts)
    };
    let head_facts = scored(&head_idx, 1)?;
    let tail_facts = scored(&tail_idx, 1 + head_idx.len())?;
    Ok(NeighborSet {
        head_facts,
        tail_facts,
    })
}
