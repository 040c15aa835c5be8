//! Instruction-corpus generation for fine-tuning the Y/N judge.
//!
//! Every training triple yields, per task (TAR and SR), one `Y` record for the
//! triple itself and `m` `N` records for corrupted copies. All records built
//! from one training triple see the graph with that triple masked out.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::embed::Embedder;
use crate::kg::{EntityId, Graph, LabeledTriple, Triple};
use crate::pipeline::{EvidenceError, EvidenceSettings, PromptFactory};
use crate::prompt::{Evidence, PromptInstance, TaskKind};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum SftError {
    #[error("negative sampling needs at least 3 entities, graph has {0}")]
    TooFewEntities(usize),
    #[error("number of negatives per positive must be at least 1")]
    NoNegatives,
    #[error("triple {index}: {source}")]
    Evidence {
        index: usize,
        #[source]
        source: EvidenceError,
    },
    #[error("writing corpus: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    None,
    HeadReplaced,
    TailReplaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Negative {
    pub triple: Triple,
    pub corruption: Corruption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub negatives: Vec<Negative>,
    /// Fewer than the requested number of valid corruptions existed.
    pub exhausted: bool,
}

/// Draws `m` distinct corruptions of `t` that are not facts of `g`, replacing
/// the head or the tail (chosen uniformly) with a uniformly drawn entity.
pub fn gen_negatives<R: Rng + ?Sized>(
    g: &Graph,
    t: Triple,
    m: usize,
    rng: &mut R,
) -> Result<NegativeSample, SftError> {
    let n = g.num_entities();
    if n < 3 {
        return Err(SftError::TooFewEntities(n));
    }
    if m == 0 {
        return Err(SftError::NoNegatives);
    }
    let corrupt = |e: EntityId, head: bool| -> Negative {
        if head {
            Negative {
                triple: Triple::new(e, t.relation, t.tail),
                corruption: Corruption::HeadReplaced,
            }
        } else {
            Negative {
                triple: Triple::new(t.head, t.relation, e),
                corruption: Corruption::TailReplaced,
            }
        }
    };
    let valid = |c: &Negative| c.triple != t && !g.contains(&c.triple);

    let mut seen: HashSet<Triple> = HashSet::new();
    let mut out = Vec::with_capacity(m);
    let budget = 20 * m + 100;
    for _ in 0..budget {
        if out.len() == m {
            break;
        }
        let head = rng.gen_bool(0.5);
        let c = corrupt(EntityId(rng.gen_range(0..n) as u32), head);
        if valid(&c) && seen.insert(c.triple) {
            out.push(c);
        }
    }
    if out.len() < m {
        // Rejection sampling stalled: enumerate whatever is left.
        let mut rest: Vec<Negative> = g
            .entity_ids()
            .flat_map(|e| [corrupt(e, true), corrupt(e, false)])
            .filter(|c| valid(c) && !seen.contains(&c.triple))
            .collect();
        rest.sort_by_key(|c| c.triple);
        rest.dedup_by_key(|c| c.triple);
        rest.shuffle(rng);
        out.extend(rest.into_iter().take(m - out.len()));
    }
    let exhausted = out.len() < m;
    if exhausted {
        warn!(
            triple = %g.linearize(&t),
            requested = m,
            found = out.len(),
            "not enough valid corruptions"
        );
    }
    Ok(NegativeSample {
        negatives: out,
        exhausted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Y,
    N,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// The training triple this record was derived from.
    pub source: LabeledTriple,
    pub source_index: usize,
    /// The triple the prompt asks about.
    pub candidate: LabeledTriple,
    pub corruption: Corruption,
    pub master_seed: u64,
    pub negative_seed: u64,
    pub template_version: String,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub task: TaskKind,
    pub prompt: String,
    pub label: Label,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Negatives per positive.
    pub m: usize,
    pub seed: u64,
    pub evidence: EvidenceSettings,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            m: 12,
            seed: 42,
            evidence: EvidenceSettings::default(),
        }
    }
}

fn records_for(
    g: &Graph,
    factory: &PromptFactory<'_>,
    cfg: &CorpusConfig,
    index: usize,
) -> Result<Vec<InstructionRecord>, SftError> {
    let positive = g.triple(index);
    let source = g.label(&positive);
    let negative_seed = derive_seed(cfg.seed, &["negatives", &index.to_string()]);
    let mut rng = rng_for(cfg.seed, &["negatives", &index.to_string()]);
    let sample = gen_negatives(g, positive, cfg.m, &mut rng)?;

    let candidates: Vec<(LabeledTriple, Corruption)> = std::iter::once((source.clone(), Corruption::None))
        .chain(sample.negatives.iter().map(|n| (g.label(&n.triple), n.corruption)))
        .collect();
    let mut out = Vec::with_capacity(2 * candidates.len());
    for task in [TaskKind::Tar, TaskKind::Sr] {
        for (candidate, corruption) in &candidates {
            let prompt: PromptInstance = match task {
                TaskKind::Tar => factory.tar_prompt(candidate, Some(positive)),
                TaskKind::Sr => factory.sr_prompt(candidate, Some(positive)),
            }
            .map_err(|source| SftError::Evidence { index, source })?;
            out.push(InstructionRecord {
                task,
                prompt: prompt.text,
                label: if *corruption == Corruption::None {
                    Label::Y
                } else {
                    Label::N
                },
                meta: RecordMeta {
                    source: source.clone(),
                    source_index: index,
                    candidate: candidate.clone(),
                    corruption: *corruption,
                    master_seed: cfg.seed,
                    negative_seed,
                    template_version: prompt.template_version,
                    evidence: prompt.evidence,
                },
            });
        }
    }
    Ok(out)
}

/// Builds the full corpus in training-triple order. Evidence for every record
/// comes from `g` alone.
pub fn build_instruction_corpus(
    g: &Graph,
    cfg: &CorpusConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<InstructionRecord>, SftError> {
    let factory = PromptFactory::new(g, g.occurrences(), embedder, cfg.evidence.clone(), cfg.seed);
    let chunks: Vec<Vec<InstructionRecord>> = (0..g.len())
        .into_par_iter()
        .map(|i| records_for(g, &factory, cfg, i))
        .collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// JSON lines, one record per line.
pub fn write_corpus(path: impl AsRef<Path>, records: &[InstructionRecord]) -> Result<(), SftError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub records: usize,
    pub tar_yes: usize,
    pub tar_no: usize,
    pub sr_yes: usize,
    pub sr_no: usize,
}

pub fn summarize(records: &[InstructionRecord]) -> CorpusSummary {
    let mut s = CorpusSummary {
        records: records.len(),
        ..Default::default()
    };
    for r in records {
        match (r.task, r.label) {
            (TaskKind::Tar, Label::Y) => s.tar_yes += 1,
            (TaskKind::Tar, Label::N) => s.tar_no += 1,
            (TaskKind::Sr, Label::Y) => s.sr_yes += 1,
            (TaskKind::Sr, Label::N) => s.sr_no += 1,
        }
    }
    s
}
