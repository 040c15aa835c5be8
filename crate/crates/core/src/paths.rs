//! Reasoning-path extraction between a query's head and tail.
//!
//! Paths are enumerated breadth-first over the evidence graph, optionally
//! walking edges against their stored orientation (recorded as `inverted`).
//! Each path gets a degree, the sum of the occurrence counts of the relations
//! it uses, and [`filter_paths`] keeps the lowest-degree ones.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::kg::{normalize_label, EntityId, Graph, LabeledTriple, OccurrenceTable, RelationId, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("path endpoints must differ (both are {0:?})")]
    SameEndpoints(EntityId),
    #[error("maximum path length must be at least 1")]
    ZeroLength,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PathConfig {
    pub max_len: usize,
    pub bidirectional: bool,
    /// Raw paths collected per query before filtering.
    pub max_raw_paths: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            max_len: 3,
            bidirectional: true,
            max_raw_paths: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub relation: RelationId,
    pub target: EntityId,
    /// The stored triple is `(target, relation, previous)`.
    pub inverted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub source: EntityId,
    pub steps: Vec<PathStep>,
    pub degree: u64,
}

impl ReasoningPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn target(&self) -> EntityId {
        self.steps.last().map_or(self.source, |s| s.target)
    }

    /// Entities visited, source first.
    pub fn entities(&self) -> Vec<EntityId> {
        std::iter::once(self.source)
            .chain(self.steps.iter().map(|s| s.target))
            .collect()
    }

    /// The stored triples this path walks over, in order.
    pub fn triples(&self) -> Vec<Triple> {
        let mut prev = self.source;
        self.steps
            .iter()
            .map(|s| {
                let t = if s.inverted {
                    Triple::new(s.target, s.relation, prev)
                } else {
                    Triple::new(prev, s.relation, s.target)
                };
                prev = s.target;
                t
            })
            .collect()
    }

    /// Label-based ordering key; independent of handle assignment.
    pub fn step_key<'g>(&self, g: &'g Graph) -> Vec<(&'g str, bool, &'g str)> {
        self.steps
            .iter()
            .map(|s| (g.relation_label(s.relation), s.inverted, g.entity_label(s.target)))
            .collect()
    }

    pub fn record(&self, g: &Graph) -> PathRecord {
        PathRecord {
            source: g.entity_label(self.source).to_string(),
            steps: self
                .steps
                .iter()
                .map(|s| StepRecord {
                    relation: g.relation_label(s.relation).to_string(),
                    target: g.entity_label(s.target).to_string(),
                    inverted: s.inverted,
                })
                .collect(),
            degree: self.degree,
            graph: g.name().to_string(),
        }
    }
}

/// Graph-independent form of a path, carried as prompt evidence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathRecord {
    pub source: String,
    pub steps: Vec<StepRecord>,
    pub degree: u64,
    /// Name of the graph the path was extracted from.
    pub graph: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepRecord {
    pub relation: String,
    pub target: String,
    pub inverted: bool,
}

impl PathRecord {
    pub fn triples(&self) -> Vec<LabeledTriple> {
        let mut prev = self.source.as_str();
        self.steps
            .iter()
            .map(|s| {
                let t = if s.inverted {
                    LabeledTriple::new(&s.target, &s.relation, prev)
                } else {
                    LabeledTriple::new(prev, &s.relation, &s.target)
                };
                prev = &s.target;
                t
            })
            .collect()
    }

    /// `h -[works in]-> e -[inverse of city of]-> t`, labels normalized.
    pub fn render(&self) -> String {
        let mut out = normalize_label(&self.source);
        for s in &self.steps {
            let rel = normalize_label(&s.relation);
            if s.inverted {
                out.push_str(&format!(" -[inverse of {rel}]-> "));
            } else {
                out.push_str(&format!(" -[{rel}]-> "));
            }
            out.push_str(&normalize_label(&s.target));
        }
        out
    }
}

impl fmt::Display for PathRecord {
    /// Provenance form: `h -[r1]-> e1 -[inv r2]-> t (degree=D)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)?;
        for s in &self.steps {
            if s.inverted {
                write!(f, " -[inv {}]-> {}", s.relation, s.target)?;
            } else {
                write!(f, " -[{}]-> {}", s.relation, s.target)?;
            }
        }
        write!(f, " (degree={})", self.degree)
    }
}

/// Sum of `o_r` over the path's steps, counting a repeated relation once per hop.
pub fn path_degree(p: &ReasoningPath, occ: &OccurrenceTable) -> u64 {
    p.steps.iter().map(|s| occ.get(s.relation)).sum()
}

fn expansions(g: &Graph, from: EntityId, bidirectional: bool) -> Vec<(PathStep, Triple)> {
    let mut out: Vec<(PathStep, Triple)> = g
        .outgoing(from)
        .iter()
        .map(|&i| {
            let t = g.triple(i);
            (
                PathStep {
                    relation: t.relation,
                    target: t.tail,
                    inverted: false,
                },
                t,
            )
        })
        .collect();
    if bidirectional {
        out.extend(g.incoming(from).iter().map(|&i| {
            let t = g.triple(i);
            (
                PathStep {
                    relation: t.relation,
                    target: t.head,
                    inverted: true,
                },
                t,
            )
        }));
    }
    out.sort_by(|(a, _), (b, _)| {
        (g.relation_label(a.relation), a.inverted, g.entity_label(a.target)).cmp(&(
            g.relation_label(b.relation),
            b.inverted,
            g.entity_label(b.target),
        ))
    });
    out
}

/// All simple paths from `h` to `t` of at most `cfg.max_len` steps that never
/// use relation `r_q` (in either orientation). `masked`, when given, is treated
/// as absent from the graph. Output is sorted lexicographically by step labels.
pub fn extract_paths(
    evidence: &Graph,
    h: EntityId,
    t: EntityId,
    r_q: Option<RelationId>,
    cfg: &PathConfig,
    occ: &OccurrenceTable,
    masked: Option<Triple>,
) -> Result<Vec<ReasoningPath>, PathError> {
    if h == t {
        return Err(PathError::SameEndpoints(h));
    }
    if cfg.max_len == 0 {
        return Err(PathError::ZeroLength);
    }
    let n = evidence.num_entities();
    if h.index() >= n || t.index() >= n {
        return Ok(Vec::new());
    }

    let mut found: Vec<Vec<PathStep>> = Vec::new();
    let mut queue: VecDeque<(Vec<EntityId>, Vec<PathStep>)> = VecDeque::new();
    queue.push_back((vec![h], Vec::new()));
    'bfs: while let Some((visited, steps)) = queue.pop_front() {
        let here = *visited.last().expect("non-empty");
        let last_hop = steps.len() + 1 == cfg.max_len;
        for (step, triple) in expansions(evidence, here, cfg.bidirectional) {
            if Some(step.relation) == r_q || Some(triple) == masked {
                continue;
            }
            if step.target == t {
                let mut path = steps.clone();
                path.push(step);
                found.push(path);
                if found.len() >= cfg.max_raw_paths {
                    debug!(limit = cfg.max_raw_paths, "path enumeration cap reached");
                    break 'bfs;
                }
            } else if !last_hop && !visited.contains(&step.target) {
                let mut v = visited.clone();
                v.push(step.target);
                let mut s = steps.clone();
                s.push(step);
                queue.push_back((v, s));
            }
        }
    }

    let mut paths: Vec<ReasoningPath> = found
        .into_iter()
        .map(|steps| {
            let mut p = ReasoningPath {
                source: h,
                steps,
                degree: 0,
            };
            p.degree = path_degree(&p, occ);
            p
        })
        .collect();
    paths.sort_by(|a, b| a.step_key(evidence).cmp(&b.step_key(evidence)));
    Ok(paths)
}

fn filter_order(g: &Graph, a: &ReasoningPath, b: &ReasoningPath) -> Ordering {
    a.degree
        .cmp(&b.degree)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.step_key(g).cmp(&b.step_key(g)))
}

/// Keeps the `budget` lowest-degree paths, ties broken by shorter length and
/// then step labels. Output is sorted in that same order.
pub fn filter_paths(g: &Graph, mut paths: Vec<ReasoningPath>, budget: usize) -> Vec<ReasoningPath> {
    paths.sort_by(|a, b| filter_order(g, a, b));
    paths.truncate(budget);
    paths
}
