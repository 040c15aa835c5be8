//! Evidence gathering shared by evaluation and instruction-corpus generation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::embed::Embedder;
use crate::kg::{sample_relation_support, EntityId, Graph, LabeledTriple, OccurrenceTable, SupportExclusion, Triple};
use crate::neighbors::{select_neighbors, NeighborConfig, NeighborError};
use crate::paths::{extract_paths, filter_paths, PathConfig, PathError, PathRecord};
use crate::prompt::{build_sr_prompt, build_tar_prompt, Evidence, PromptError, PromptInstance, PromptLimits, SupportFact};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSettings {
    pub paths: PathConfig,
    /// Paths kept after degree filtering.
    pub beta: usize,
    pub neighbors: NeighborConfig,
    /// Relation examples in a TAR prompt.
    pub k: usize,
    pub support_exclusion: SupportExclusion,
    pub limits: PromptLimits,
}

impl Default for EvidenceSettings {
    fn default() -> Self {
        Self {
            paths: PathConfig::default(),
            beta: 6,
            neighbors: NeighborConfig::default(),
            k: 3,
            support_exclusion: SupportExclusion::default(),
            limits: PromptLimits::default(),
        }
    }
}

/// Builds prompts for arbitrary candidate triples against one evidence graph.
pub struct PromptFactory<'a> {
    evidence: &'a Graph,
    occurrences: OccurrenceTable,
    embedder: &'a dyn Embedder,
    settings: EvidenceSettings,
    seed: u64,
}

impl<'a> PromptFactory<'a> {
    /// `occurrences` must be indexed by the relation handles of `evidence`.
    pub fn new(
        evidence: &'a Graph,
        occurrences: OccurrenceTable,
        embedder: &'a dyn Embedder,
        settings: EvidenceSettings,
        seed: u64,
    ) -> Self {
        Self {
            evidence,
            occurrences,
            embedder,
            settings,
            seed,
        }
    }

    pub fn evidence(&self) -> &Graph {
        self.evidence
    }

    pub fn settings(&self) -> &EvidenceSettings {
        &self.settings
    }

    /// Degree-filtered paths for `q`, empty when either endpoint is unknown to
    /// the evidence graph or both endpoints coincide.
    pub fn paths_for(&self, q: &LabeledTriple, masked: Option<Triple>) -> Result<Vec<PathRecord>, EvidenceError> {
        let g = self.evidence;
        let (Some(h), Some(t)) = (g.entity_id(&q.head), g.entity_id(&q.tail)) else {
            return Ok(Vec::new());
        };
        if h == t {
            debug!(query = %q.linearize(), "self-loop candidate has no reasoning paths");
            return Ok(Vec::new());
        }
        let raw = extract_paths(
            g,
            h,
            t,
            g.relation_id(&q.relation),
            &self.settings.paths,
            &self.occurrences,
            masked,
        )?;
        Ok(filter_paths(g, raw, self.settings.beta)
            .iter()
            .map(|p| p.record(g))
            .collect())
    }

    /// Number of unfiltered paths between the query entities.
    pub fn raw_path_count(&self, q: &LabeledTriple) -> Result<usize, EvidenceError> {
        let g = self.evidence;
        let (Some(h), Some(t)) = (g.entity_id(&q.head), g.entity_id(&q.tail)) else {
            return Ok(0);
        };
        if h == t {
            return Ok(0);
        }
        Ok(extract_paths(g, h, t, g.relation_id(&q.relation), &self.settings.paths, &self.occurrences, None)?.len())
    }

    pub fn tar_prompt(&self, q: &LabeledTriple, masked: Option<Triple>) -> Result<PromptInstance, EvidenceError> {
        let g = self.evidence;
        let support = match g.relation_id(&q.relation) {
            Some(r) => {
                let exclude: BTreeSet<EntityId> = self
                    .settings
                    .support_exclusion
                    .excluded(q)
                    .into_iter()
                    .filter_map(|l| g.entity_id(l))
                    .collect();
                let mut rng = rng_for(self.seed, &["tar", &q.head, &q.relation, &q.tail]);
                sample_relation_support(g, r, &exclude, self.settings.k, &mut rng)
                    .into_iter()
                    .filter(|t| Some(*t) != masked)
                    .map(|t| SupportFact {
                        triple: g.label(&t),
                        graph: g.name().to_string(),
                    })
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(build_tar_prompt(q, support, &self.settings.limits)?)
    }

    pub fn sr_prompt(&self, q: &LabeledTriple, masked: Option<Triple>) -> Result<PromptInstance, EvidenceError> {
        let paths = self.paths_for(q, masked)?;
        let nbrs = select_neighbors(self.evidence, q, &self.settings.neighbors, self.embedder, masked)?;
        Ok(build_sr_prompt(
            q,
            paths,
            nbrs.head_facts,
            nbrs.tail_facts,
            &self.settings.limits,
        ))
    }
}

/// Evidence items that are not facts of `g` or are attributed to another graph.
pub fn evidence_outside(evidence: &Evidence, g: &Graph) -> Vec<LabeledTriple> {
    evidence
        .triples()
        .into_iter()
        .filter(|(t, graph)| *graph != g.name() || !g.contains_labeled(t))
        .map(|(t, _)| t)
        .collect()
}
