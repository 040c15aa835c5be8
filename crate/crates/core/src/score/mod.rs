//! Candidate scoring, probability ensembling and block ranking.

pub mod cache;
pub mod remote;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::kg::{Direction, LabeledTriple, QueryBlock};
use crate::pipeline::{EvidenceError, PromptFactory};
use crate::prompt::{PromptInstance, TaskKind};
use crate::seed::unit_interval;

pub use cache::{CacheKey, ScoreCache, CACHE_FILE};
pub use remote::{RemoteLlmScorer, RemoteScorerConfig};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scoring request failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("refusing to score an empty prompt")]
    EmptyPrompt,
    #[error("scorer returned {0}, outside [0, 1]")]
    OutOfRange(f64),
    #[error("candidate has neither a TAR nor an SR probability")]
    NoProbability,
    #[error("invalid scorer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error("score cache write failed: {0}")]
    Cache(#[from] std::io::Error),
    #[error("query {query_id}: {source}")]
    Block {
        query_id: String,
        #[source]
        source: Box<ScoreError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    RemoteLlm,
    OracleMock,
    RandomMock,
    ConstantMock,
}

/// P(answer = 'Y'). `fallback` marks scores defaulted to 0.5 because neither
/// label token came back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesProbability {
    pub p: f64,
    pub fallback: bool,
}

impl YesProbability {
    pub fn certain(p: f64) -> Self {
        Self { p, fallback: false }
    }
}

pub trait Scorer: Send + Sync {
    /// Identifies the scorer and every setting that changes its output.
    fn name(&self) -> &str;
    fn kind(&self) -> ScorerKind;
    fn score(&self, prompt: &PromptInstance) -> Result<YesProbability, ScoreError>;
}

pub fn score_yes_probability(s: &dyn Scorer, p: &PromptInstance) -> Result<YesProbability, ScoreError> {
    if p.text.trim().is_empty() {
        return Err(ScoreError::EmptyPrompt);
    }
    let out = s.score(p)?;
    if !(0.0..=1.0).contains(&out.p) {
        return Err(ScoreError::OutOfRange(out.p));
    }
    Ok(out)
}

/// Knows which triples are true: 1.0 for those, 0.0 otherwise.
pub struct OracleScorer {
    truth: HashSet<LabeledTriple>,
}

impl OracleScorer {
    pub fn new(truth: impl IntoIterator<Item = LabeledTriple>) -> Self {
        Self {
            truth: truth.into_iter().collect(),
        }
    }
}

impl Scorer for OracleScorer {
    fn name(&self) -> &str {
        "oracle-mock"
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::OracleMock
    }

    fn score(&self, prompt: &PromptInstance) -> Result<YesProbability, ScoreError> {
        Ok(YesProbability::certain(if self.truth.contains(&prompt.query) {
            1.0
        } else {
            0.0
        }))
    }
}

pub struct ConstantScorer {
    value: f64,
    name: String,
}

impl ConstantScorer {
    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoreError::OutOfRange(value));
        }
        Ok(Self {
            value,
            name: format!("constant-mock:{value}"),
        })
    }
}

impl Scorer for ConstantScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::ConstantMock
    }

    fn score(&self, _prompt: &PromptInstance) -> Result<YesProbability, ScoreError> {
        Ok(YesProbability::certain(self.value))
    }
}

/// Uniform score in `[0, 1)`, a pure function of (seed, task, prompt text).
pub struct RandomScorer {
    seed: u64,
    name: String,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            name: format!("random-mock:{seed}"),
        }
    }
}

impl Scorer for RandomScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::RandomMock
    }

    fn score(&self, prompt: &PromptInstance) -> Result<YesProbability, ScoreError> {
        Ok(YesProbability::certain(unit_interval(
            self.seed,
            &[prompt.task.as_str(), &prompt.text],
        )))
    }
}

/// Mean of the two module probabilities.
pub fn ensemble_score(p_tar: f64, p_sr: f64) -> f64 {
    (p_tar + p_sr) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: LabeledTriple,
    pub p_tar: Option<f64>,
    pub p_sr: Option<f64>,
    pub score: f64,
}

impl ScoredCandidate {
    pub fn new(candidate: LabeledTriple, p_tar: Option<f64>, p_sr: Option<f64>) -> Result<Self, ScoreError> {
        let score = match (p_tar, p_sr) {
            (Some(a), Some(b)) => ensemble_score(a, b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Err(ScoreError::NoProbability),
        };
        Ok(Self {
            candidate,
            p_tar,
            p_sr,
            score,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tar,
    Sr,
    Full,
}

impl Mode {
    pub fn uses(&self, task: TaskKind) -> bool {
        matches!(
            (self, task),
            (Mode::Full, _) | (Mode::Tar, TaskKind::Tar) | (Mode::Sr, TaskKind::Sr)
        )
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tar => "TAR",
            Mode::Sr => "SR",
            Mode::Full => "FULL",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tar" => Ok(Mode::Tar),
            "sr" => Ok(Mode::Sr),
            "full" => Ok(Mode::Full),
            other => Err(format!("unknown mode {other:?} (expected tar, sr or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBlock {
    pub query_id: String,
    pub direction: Direction,
    pub positive: LabeledTriple,
    /// Sorted best first.
    pub scored: Vec<ScoredCandidate>,
    pub rank_of_positive: usize,
}

/// Sorts by descending score. Among equal scores negatives come before the
/// positive, and negatives are ordered by their labels.
pub fn rank_candidates(block: &QueryBlock, mut scored: Vec<ScoredCandidate>) -> RankedBlock {
    let positive = &block.positive;
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (a.candidate == *positive).cmp(&(b.candidate == *positive)))
            .then_with(|| a.candidate.cmp(&b.candidate))
    });
    let rank = scored
        .iter()
        .position(|c| c.candidate == *positive)
        .expect("positive is scored")
        + 1;
    RankedBlock {
        query_id: block.id.clone(),
        direction: block.direction,
        positive: positive.clone(),
        scored,
        rank_of_positive: rank,
    }
}

/// Everything needed to score candidates: prompt construction, the scorer,
/// and an optional cache shared across blocks.
pub struct ScoringContext<'a> {
    pub prompts: PromptFactory<'a>,
    pub scorer: &'a dyn Scorer,
    pub cache: Option<&'a ScoreCache>,
    fallbacks: AtomicU64,
}

impl<'a> ScoringContext<'a> {
    pub fn new(prompts: PromptFactory<'a>, scorer: &'a dyn Scorer, cache: Option<&'a ScoreCache>) -> Self {
        Self {
            prompts,
            scorer,
            cache,
            fallbacks: AtomicU64::new(0),
        }
    }

    /// Scores that fell back to 0.5 so far.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(AtomicOrdering::Relaxed)
    }

    pub fn score_prompt(&self, prompt: &PromptInstance) -> Result<f64, ScoreError> {
        let key = CacheKey::new(self.scorer.name(), &prompt.template_version, &prompt.text);
        let out = match self.cache.and_then(|c| c.get(&key)) {
            Some(hit) => hit,
            None => {
                let fresh = score_yes_probability(self.scorer, prompt)?;
                if let Some(c) = self.cache {
                    c.insert(key, fresh)?;
                }
                fresh
            }
        };
        if out.fallback {
            self.fallbacks.fetch_add(1, AtomicOrdering::Relaxed);
        }
        Ok(out.p)
    }

    pub fn score_candidate(&self, candidate: &LabeledTriple, mode: Mode) -> Result<ScoredCandidate, ScoreError> {
        let p_tar = if mode.uses(TaskKind::Tar) {
            Some(self.score_prompt(&self.prompts.tar_prompt(candidate, None)?)?)
        } else {
            None
        };
        let p_sr = if mode.uses(TaskKind::Sr) {
            Some(self.score_prompt(&self.prompts.sr_prompt(candidate, None)?)?)
        } else {
            None
        };
        ScoredCandidate::new(candidate.clone(), p_tar, p_sr)
    }

    pub fn rank_block(&self, block: &QueryBlock, mode: Mode) -> Result<RankedBlock, ScoreError> {
        let scored = block
            .candidates()
            .map(|c| self.score_candidate(c, mode))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| {
                warn!(query = %block.id, error = %e, "block scoring failed");
                ScoreError::Block {
                    query_id: block.id.clone(),
                    source: Box::new(e),
                }
            })?;
        Ok(rank_candidates(block, scored))
    }
}
