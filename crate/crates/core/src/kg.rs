//! Triple store, benchmark split loading and the inductive-split contract.
//!
//! A [`Graph`] interns entity and relation labels into dense handles and keeps
//! three adjacency indexes (by head, by tail, by relation). Labels are stored
//! exactly as they appear in the source file (after trimming); the
//! underscore-to-space normalization only happens in [`Graph::linearize`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

/// Number of candidates ranked together for one query.
pub const BLOCK_SIZE: usize = 50;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Parse { path: String, line: usize, found: usize },
    #[error("{path}:{line}: empty label")]
    EmptyLabel { path: String, line: usize },
    #[error("{path}: query block {block} is malformed: {reason}")]
    Block {
        path: String,
        block: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A triple of handles, valid only inside the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn touches(&self, e: EntityId) -> bool {
        self.head == e || self.tail == e
    }
}

/// A triple by surface labels. Query candidates are kept in this form because a
/// candidate entity need not occur in the evidence graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl LabeledTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// `(head, relation, tail)` with underscores rendered as spaces.
    pub fn linearize(&self) -> String {
        format!(
            "({}, {}, {})",
            normalize_label(&self.head),
            normalize_label(&self.relation),
            normalize_label(&self.tail)
        )
    }

    pub fn touches(&self, entity: &str) -> bool {
        self.head == entity || self.tail == entity
    }
}

impl fmt::Display for LabeledTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.head, self.relation, self.tail)
    }
}

pub fn normalize_label(label: &str) -> String {
    label.replace('_', " ")
}

/// Relation occurrence counts `o_r`, indexed by relation handle of one graph.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OccurrenceTable {
    counts: Vec<u64>,
}

impl OccurrenceTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// Occurrence of `r`; relations outside the table count as 0.
    pub fn get(&self, r: RelationId) -> u64 {
        self.counts.get(r.index()).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Re-index the counts of `source` onto the relation handles of `target`,
    /// matching relations by label. Relations unknown to `source` get 0.
    pub fn remap(&self, source: &Graph, target: &Graph) -> OccurrenceTable {
        let counts = (0..target.num_relations())
            .map(|i| {
                let label = target.relation_label(RelationId(i as u32));
                source.relation_id(label).map(|r| self.get(r)).unwrap_or(0)
            })
            .collect();
        OccurrenceTable { counts }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub relations: usize,
    pub entities: usize,
    pub triples: usize,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|R|={} |E|={} |T|={}",
            self.relations, self.entities, self.triples
        )
    }
}

/// Immutable interned triple store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    name: String,
    entity_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_labels: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    by_head: Vec<Vec<usize>>,
    by_tail: Vec<Vec<usize>>,
    by_relation: Vec<Vec<usize>>,
    duplicates_dropped: usize,
}

/// Accumulates labeled triples in insertion order and freezes into a [`Graph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    name: String,
    entity_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_labels: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    duplicates: usize,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    fn intern_entity(&mut self, label: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = EntityId(self.entity_labels.len() as u32);
        self.entity_labels.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        id
    }

    fn intern_relation(&mut self, label: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = RelationId(self.relation_labels.len() as u32);
        self.relation_labels.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }

    /// Adds a triple; returns false when it was already present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let (head, relation, tail) = (head.trim(), relation.trim(), tail.trim());
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        let triple = Triple::new(h, r, t);
        if self.triple_set.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            self.duplicates += 1;
            false
        }
    }

    pub fn add_labeled(&mut self, t: &LabeledTriple) -> bool {
        self.add(&t.head, &t.relation, &t.tail)
    }

    pub fn build(self) -> Graph {
        let mut by_head = vec![Vec::new(); self.entity_labels.len()];
        let mut by_tail = vec![Vec::new(); self.entity_labels.len()];
        let mut by_relation = vec![Vec::new(); self.relation_labels.len()];
        for (i, t) in self.triples.iter().enumerate() {
            by_head[t.head.index()].push(i);
            by_tail[t.tail.index()].push(i);
            by_relation[t.relation.index()].push(i);
        }
        Graph {
            name: self.name,
            entity_labels: self.entity_labels,
            entity_index: self.entity_index,
            relation_labels: self.relation_labels,
            relation_index: self.relation_index,
            triples: self.triples,
            triple_set: self.triple_set,
            by_head,
            by_tail,
            by_relation,
            duplicates_dropped: self.duplicates,
        }
    }
}

impl Graph {
    pub fn from_labeled<'a>(
        name: impl Into<String>,
        triples: impl IntoIterator<Item = &'a LabeledTriple>,
    ) -> Graph {
        let mut b = GraphBuilder::new(name);
        for t in triples {
            b.add_labeled(t);
        }
        b.build()
    }

    /// Provenance tag attached to evidence drawn from this graph.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            relations: self.relation_labels.len(),
            entities: self.entity_labels.len(),
            triples: self.triples.len(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: usize) -> Triple {
        self.triples[index]
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn contains_labeled(&self, t: &LabeledTriple) -> bool {
        self.resolve(t).is_some_and(|t| self.contains(&t))
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entity_labels[e.index()]
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relation_labels[r.index()]
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label.trim()).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label.trim()).copied()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_labels.len() as u32).map(EntityId)
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    /// Triple indexes whose head is `e`.
    pub fn outgoing(&self, e: EntityId) -> &[usize] {
        self.by_head.get(e.index()).map_or(&[], Vec::as_slice)
    }

    /// Triple indexes whose tail is `e`.
    pub fn incoming(&self, e: EntityId) -> &[usize] {
        self.by_tail.get(e.index()).map_or(&[], Vec::as_slice)
    }

    pub fn with_relation(&self, r: RelationId) -> &[usize] {
        self.by_relation.get(r.index()).map_or(&[], Vec::as_slice)
    }

    pub fn occurrences(&self) -> OccurrenceTable {
        OccurrenceTable::from_counts(self.by_relation.iter().map(|v| v.len() as u64).collect())
    }

    pub fn label(&self, t: &Triple) -> LabeledTriple {
        LabeledTriple::new(
            self.entity_label(t.head),
            self.relation_label(t.relation),
            self.entity_label(t.tail),
        )
    }

    /// Handles for a labeled triple, if all three labels are known here.
    pub fn resolve(&self, t: &LabeledTriple) -> Option<Triple> {
        Some(Triple::new(
            self.entity_id(&t.head)?,
            self.relation_id(&t.relation)?,
            self.entity_id(&t.tail)?,
        ))
    }

    pub fn linearize(&self, t: &Triple) -> String {
        self.label(t).linearize()
    }

    /// Inverse of [`Graph::linearize`]. Returns `None` when the text is not a
    /// linearized triple of this graph or when normalization made it ambiguous.
    pub fn parse_linearized(&self, text: &str) -> Option<Triple> {
        let inner = text.strip_prefix('(')?.strip_suffix(')')?;
        let entities = normalized_index(&self.entity_labels, EntityId);
        let relations = normalized_index(&self.relation_labels, RelationId);
        let seps: Vec<usize> = inner.match_indices(", ").map(|(i, _)| i).collect();
        let mut found = None;
        for (a, &i) in seps.iter().enumerate() {
            for &j in &seps[a + 1..] {
                let (h, r, t) = (&inner[..i], &inner[i + 2..j], &inner[j + 2..]);
                let (Some(hs), Some(rs), Some(ts)) =
                    (entities.get(h), relations.get(r), entities.get(t))
                else {
                    continue;
                };
                for &h in hs {
                    for &r in rs {
                        for &t in ts {
                            let cand = Triple::new(h, r, t);
                            if self.contains(&cand) {
                                if found.is_some_and(|f| f != cand) {
                                    return None;
                                }
                                found = Some(cand);
                            }
                        }
                    }
                }
            }
        }
        found
    }
}

fn normalized_index<I: Copy>(labels: &[String], mk: impl Fn(u32) -> I) -> HashMap<String, Vec<I>> {
    let mut map: HashMap<String, Vec<I>> = HashMap::new();
    for (i, l) in labels.iter().enumerate() {
        map.entry(normalize_label(l)).or_default().push(mk(i as u32));
    }
    map
}

fn read_to_string(path: &Path) -> Result<String, KgError> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_line(path: &Path, lineno: usize, line: &str) -> Result<LabeledTriple, KgError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(KgError::Parse {
            path: path.display().to_string(),
            line: lineno,
            found: fields.len(),
        });
    }
    if fields.iter().any(|f| f.trim().is_empty()) {
        return Err(KgError::EmptyLabel {
            path: path.display().to_string(),
            line: lineno,
        });
    }
    Ok(LabeledTriple::new(
        fields[0].trim(),
        fields[1].trim(),
        fields[2].trim(),
    ))
}

/// Non-empty lines of a triple file with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Loads a `head<TAB>relation<TAB>tail` file. The graph is named after the path.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph, KgError> {
    let path = path.as_ref();
    load_graph_named(path, path.display().to_string())
}

pub fn load_graph_named(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Graph, KgError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut b = GraphBuilder::new(name);
    for (lineno, line) in content_lines(&text) {
        b.add_labeled(&parse_line(path, lineno, line)?);
    }
    let g = b.build();
    if g.duplicates_dropped() > 0 {
        info!(path = %path.display(), dropped = g.duplicates_dropped(), "dropped duplicate triples");
    }
    debug!(path = %path.display(), stats = %g.stats(), "loaded graph");
    Ok(g)
}

/// Outcome of comparing a train graph against a test graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductiveCheck {
    pub shared_entities: Vec<String>,
    /// Relations of the test graph that never occur in training.
    pub unseen_relations: Vec<String>,
}

impl InductiveCheck {
    pub fn run(train: &Graph, test: &Graph) -> Self {
        let train_entities: HashSet<&str> = train.entity_labels.iter().map(String::as_str).collect();
        let mut shared: Vec<String> = test
            .entity_labels
            .iter()
            .filter(|l| train_entities.contains(l.as_str()))
            .cloned()
            .collect();
        shared.sort();
        let mut unseen: Vec<String> = test
            .relation_labels
            .iter()
            .filter(|l| train.relation_id(l).is_none())
            .cloned()
            .collect();
        unseen.sort();
        Self {
            shared_entities: shared,
            unseen_relations: unseen,
        }
    }

    pub fn disjoint(&self) -> bool {
        self.shared_entities.is_empty()
    }
}

/// True iff the entity-label sets are disjoint. Relations of `test` missing
/// from `train` are only logged.
pub fn check_inductive_disjointness(train: &Graph, test: &Graph) -> bool {
    let check = InductiveCheck::run(train, test);
    if !check.unseen_relations.is_empty() {
        warn!(
            count = check.unseen_relations.len(),
            "test relations not contained in training relations"
        );
    }
    check.disjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HeadCorrupted,
    TailCorrupted,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::HeadCorrupted => "head",
            Direction::TailCorrupted => "tail",
        })
    }
}

/// One positive triple and the 49 corrupted candidates ranked against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBlock {
    pub id: String,
    pub positive: LabeledTriple,
    pub negatives: Vec<LabeledTriple>,
    pub direction: Direction,
}

impl QueryBlock {
    /// Validates the block shape and infers which slot is corrupted.
    pub fn new(
        id: impl Into<String>,
        positive: LabeledTriple,
        negatives: Vec<LabeledTriple>,
    ) -> Result<Self, String> {
        if negatives.len() != BLOCK_SIZE - 1 {
            return Err(format!(
                "expected {} candidates, found {}",
                BLOCK_SIZE,
                negatives.len() + 1
            ));
        }
        let same_head = negatives.iter().all(|n| n.head == positive.head);
        let same_tail = negatives.iter().all(|n| n.tail == positive.tail);
        if negatives.iter().any(|n| n.relation != positive.relation) {
            return Err("relation varies within the block".into());
        }
        let direction = match (same_head, same_tail) {
            (true, false) => Direction::TailCorrupted,
            (false, true) => Direction::HeadCorrupted,
            (false, false) => return Err("both head and tail vary".into()),
            (true, true) => return Err("no slot varies".into()),
        };
        let mut seen = HashSet::with_capacity(BLOCK_SIZE);
        seen.insert(&positive);
        for n in &negatives {
            if !seen.insert(n) {
                return Err(format!("duplicate candidate ({n})"));
            }
        }
        Ok(Self {
            id: id.into(),
            positive,
            negatives,
            direction,
        })
    }

    /// Positive first, then negatives in file order.
    pub fn candidates(&self) -> impl Iterator<Item = &LabeledTriple> {
        std::iter::once(&self.positive).chain(self.negatives.iter())
    }
}

/// Reads 50-line candidate blocks; the first line of each block is the positive.
/// Block ids are `<file stem>:<block index>`.
pub fn load_query_blocks(path: impl AsRef<Path>) -> Result<Vec<QueryBlock>, KgError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in content_lines(&text) {
        rows.push(parse_line(path, lineno, line)?);
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut blocks = Vec::with_capacity(rows.len() / BLOCK_SIZE);
    for (i, chunk) in rows.chunks(BLOCK_SIZE).enumerate() {
        let block = QueryBlock::new(format!("{stem}:{i}"), chunk[0].clone(), chunk[1..].to_vec())
            .map_err(|reason| KgError::Block {
                path: path.display().to_string(),
                block: i,
                reason,
            })?;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Which query entities are kept out of relation-support samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportExclusion {
    #[default]
    HeadAndTail,
    HeadOnly,
    None,
}

impl SupportExclusion {
    pub fn excluded<'a>(&self, q: &'a LabeledTriple) -> Vec<&'a str> {
        match self {
            SupportExclusion::HeadAndTail => vec![q.head.as_str(), q.tail.as_str()],
            SupportExclusion::HeadOnly => vec![q.head.as_str()],
            SupportExclusion::None => Vec::new(),
        }
    }
}

/// Samples up to `k` distinct triples of relation `r` that avoid every entity
/// in `exclude`. The result is in graph order.
pub fn sample_relation_support<R: Rng + ?Sized>(
    g: &Graph,
    r: RelationId,
    exclude: &BTreeSet<EntityId>,
    k: usize,
    rng: &mut R,
) -> Vec<Triple> {
    let eligible: Vec<usize> = g
        .with_relation(r)
        .iter()
        .copied()
        .filter(|&i| {
            let t = g.triple(i);
            !exclude.contains(&t.head) && !exclude.contains(&t.tail)
        })
        .collect();
    if eligible.len() <= k {
        return eligible.into_iter().map(|i| g.triple(i)).collect();
    }
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| g.triple(i)).collect()
}
