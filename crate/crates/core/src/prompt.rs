//! TAR and SR prompt rendering.
//!
//! Rendering is a pure function of (template version, query, evidence). The
//! evidence stored on a [`PromptInstance`] is exactly what appears in its text:
//! when a prompt is over the word budget, evidence is dropped from the
//! structured record before the final render.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::kg::{normalize_label, LabeledTriple};
use crate::neighbors::{fact_order, ScoredFact};
use crate::paths::PathRecord;

pub const TEMPLATE_VERSION: &str = "cats-prompt-v1";
pub const ANSWER_INSTRUCTION: &str = "Answer with Y or N.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("support triple {support} does not use the query relation {relation:?}")]
    RelationMismatch { support: String, relation: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "TAR")]
    Tar,
    #[serde(rename = "SR")]
    Sr,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Tar => "TAR",
            TaskKind::Sr => "SR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupportFact {
    pub triple: LabeledTriple,
    pub graph: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Evidence {
    Tar {
        support: Vec<SupportFact>,
    },
    Sr {
        paths: Vec<PathRecord>,
        head_facts: Vec<ScoredFact>,
        tail_facts: Vec<ScoredFact>,
    },
}

impl Evidence {
    /// Every evidence triple with the graph it was taken from.
    pub fn triples(&self) -> Vec<(LabeledTriple, &str)> {
        match self {
            Evidence::Tar { support } => support.iter().map(|s| (s.triple.clone(), s.graph.as_str())).collect(),
            Evidence::Sr {
                paths,
                head_facts,
                tail_facts,
            } => paths
                .iter()
                .flat_map(|p| p.triples().into_iter().map(move |t| (t, p.graph.as_str())))
                .chain(
                    head_facts
                        .iter()
                        .chain(tail_facts)
                        .map(|f| (f.triple.clone(), f.graph.as_str())),
                )
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub task: TaskKind,
    pub text: String,
    pub query: LabeledTriple,
    pub evidence: Evidence,
    pub template_version: String,
    /// Evidence items dropped to fit the word budget.
    #[serde(skip)]
    pub truncated: usize,
}

impl PromptInstance {
    pub fn render(&self) -> String {
        render(&self.query, &self.evidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLimits {
    /// Ceiling on whitespace-separated words.
    pub max_words: usize,
    /// Neighbors per side kept before any path is dropped.
    pub min_neighbors: usize,
}

impl Default for PromptLimits {
    fn default() -> Self {
        Self {
            max_words: 1500,
            min_neighbors: 3,
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn numbered<I: IntoIterator<Item = String>>(out: &mut String, items: I) {
    for (i, item) in items.into_iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, item));
    }
}

pub fn render(query: &LabeledTriple, evidence: &Evidence) -> String {
    match evidence {
        Evidence::Tar { support } => render_tar(query, support),
        Evidence::Sr {
            paths,
            head_facts,
            tail_facts,
        } => render_sr(query, paths, head_facts, tail_facts),
    }
}

fn render_tar(query: &LabeledTriple, support: &[SupportFact]) -> String {
    let rel = normalize_label(&query.relation);
    let mut out = String::new();
    if support.is_empty() {
        out.push_str(&format!(
            "No examples available for the relation \"{rel}\" in the knowledge graph.\n"
        ));
    } else {
        out.push_str(&format!(
            "The following triples from a knowledge graph all use the relation \"{rel}\":\n"
        ));
        numbered(&mut out, support.iter().map(|s| s.triple.linearize()));
    }
    out.push_str(
        "Consider what types of entities appear as heads and as tails of this relation. \
         Decide whether the query triple is consistent with the same pattern of head and tail entity types.\n",
    );
    out.push_str(&format!("Query triple: {}\n", query.linearize()));
    out.push_str(ANSWER_INSTRUCTION);
    out
}

fn render_sr(
    query: &LabeledTriple,
    paths: &[PathRecord],
    head_facts: &[ScoredFact],
    tail_facts: &[ScoredFact],
) -> String {
    let h = normalize_label(&query.head);
    let t = normalize_label(&query.tail);
    let mut out = String::from(
        "Decide whether the query triple is supported by the reasoning paths and neighboring facts \
         taken from the knowledge graph below.\n",
    );
    if paths.is_empty() {
        out.push_str(&format!("No reasoning paths found between {h} and {t}.\n"));
    } else {
        out.push_str(&format!("Reasoning paths from {h} to {t}:\n"));
        numbered(&mut out, paths.iter().map(PathRecord::render));
    }
    for (entity, facts) in [(&h, head_facts), (&t, tail_facts)] {
        if facts.is_empty() {
            out.push_str(&format!("No neighboring facts found for {entity}.\n"));
        } else {
            out.push_str(&format!("Neighboring facts of {entity}:\n"));
            numbered(&mut out, facts.iter().map(|f| f.triple.linearize()));
        }
    }
    out.push_str(&format!("Query triple: {}\n", query.linearize()));
    out.push_str(ANSWER_INSTRUCTION);
    out
}

pub fn build_tar_prompt(
    q: &LabeledTriple,
    support: Vec<SupportFact>,
    limits: &PromptLimits,
) -> Result<PromptInstance, PromptError> {
    if let Some(bad) = support.iter().find(|s| s.triple.relation != q.relation) {
        return Err(PromptError::RelationMismatch {
            support: bad.triple.linearize(),
            relation: q.relation.clone(),
        });
    }
    if support.is_empty() {
        info!(query = %q.linearize(), "no relation examples available for TAR prompt");
    }
    let mut support = support;
    let mut dropped = 0;
    let mut text = render_tar(q, &support);
    while word_count(&text) > limits.max_words && !support.is_empty() {
        support.pop();
        dropped += 1;
        text = render_tar(q, &support);
    }
    if dropped > 0 {
        info!(query = %q.linearize(), dropped, "truncated TAR prompt evidence");
    }
    Ok(PromptInstance {
        task: TaskKind::Tar,
        text,
        query: q.clone(),
        evidence: Evidence::Tar { support },
        template_version: TEMPLATE_VERSION.to_string(),
        truncated: dropped,
    })
}

/// Paths are ordered by ascending degree and neighbors by descending score
/// before rendering.
pub fn build_sr_prompt(
    q: &LabeledTriple,
    mut paths: Vec<PathRecord>,
    mut head_facts: Vec<ScoredFact>,
    mut tail_facts: Vec<ScoredFact>,
    limits: &PromptLimits,
) -> PromptInstance {
    paths.sort_by_key(|p| p.degree);
    head_facts.sort_by(fact_order);
    tail_facts.sort_by(fact_order);

    let mut dropped = 0;
    let mut text = render_sr(q, &paths, &head_facts, &tail_facts);
    while word_count(&text) > limits.max_words {
        let longer_is_head = head_facts.len() > tail_facts.len();
        let longest_side = head_facts.len().max(tail_facts.len());
        if longest_side > limits.min_neighbors {
            if longer_is_head {
                head_facts.pop();
            } else {
                tail_facts.pop();
            }
        } else if !paths.is_empty() {
            // Longest path goes first; among equals the one listed last.
            let (idx, _) = paths
                .iter()
                .enumerate()
                .max_by_key(|(i, p)| (p.steps.len(), *i))
                .expect("non-empty");
            paths.remove(idx);
        } else if longest_side > 0 {
            if longer_is_head {
                head_facts.pop();
            } else {
                tail_facts.pop();
            }
        } else {
            break;
        }
        dropped += 1;
        text = render_sr(q, &paths, &head_facts, &tail_facts);
    }
    if dropped > 0 {
        info!(query = %q.linearize(), dropped, "truncated SR prompt evidence");
    }
    PromptInstance {
        task: TaskKind::Sr,
        text,
        query: q.clone(),
        evidence: Evidence::Sr {
            paths,
            head_facts,
            tail_facts,
        },
        template_version: TEMPLATE_VERSION.to_string(),
        truncated: dropped,
    }
}
