//! End-to-end runs driven by a [`PipelineConfig`]: dataset statistics, path
//! availability, instruction corpus, score dumps and evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{ConfigError, EmbedderChoice, OccurrenceSource, PipelineConfig, ScorerChoice, Setting};
use crate::embed::{CachedEmbedder, EmbedError, Embedder, HashEmbedder, RemoteEmbedder};
use crate::eval::{run_evaluation, EvalMeta, EvalOutcome};
use crate::kg::{check_inductive_disjointness, load_graph_named, load_query_blocks, Graph, GraphStats, KgError, LabeledTriple, OccurrenceTable, QueryBlock};
use crate::pipeline::{evidence_outside, PromptFactory};
use crate::prompt::TaskKind;
use crate::reference;
use crate::score::cache::ScoreCache;
use crate::score::remote::RemoteLlmScorer;
use crate::score::{ConstantScorer, OracleScorer, RandomScorer, ScoreError, Scorer, ScoringContext};
use crate::sft::{build_instruction_corpus, summarize, write_corpus, CorpusConfig, CorpusSummary, SftError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} queries failed")]
    Partial(usize),
}

impl RunError {
    /// Configuration problems are reported with exit code 1, everything else with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub struct Dataset {
    pub train: Option<Graph>,
    pub test: Option<Graph>,
    pub blocks: Vec<QueryBlock>,
}

impl Dataset {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        cfg.check_files()?;
        let train = cfg.train_path().map(|p| load_graph_named(p, "train")).transpose()?;
        let test = cfg.test_path().map(|p| load_graph_named(p, "test")).transpose()?;
        if let (Some(tr), Some(te), Setting::Inductive) = (&train, &test, cfg.setting) {
            if !check_inductive_disjointness(tr, te) {
                warn!("train and test graphs share entities");
            }
        }
        let mut blocks = Vec::new();
        for p in cfg.query_paths() {
            blocks.extend(load_query_blocks(p)?);
        }
        Ok(Self { train, test, blocks })
    }

    /// Test graph in the inductive setting, training graph otherwise.
    pub fn evidence(&self, setting: Setting) -> Result<&Graph, RunError> {
        let g = match setting {
            Setting::Inductive => self.test.as_ref(),
            Setting::Transductive => self.train.as_ref(),
        };
        g.ok_or_else(|| {
            RunError::Config(ConfigError::Invalid(format!(
                "{setting} setting needs data.{}",
                if setting == Setting::Inductive { "test" } else { "train" }
            )))
        })
    }

    pub fn occurrences(&self, cfg: &PipelineConfig) -> Result<OccurrenceTable, RunError> {
        let evidence = self.evidence(cfg.setting)?;
        Ok(match (cfg.evidence.occurrences, &self.train) {
            (OccurrenceSource::Train, Some(train)) => train.occurrences().remap(train, evidence),
            (OccurrenceSource::Train, None) => {
                return Err(ConfigError::Invalid("evidence.occurrences = \"train\" needs data.train".into()).into())
            }
            (OccurrenceSource::Evidence, _) => evidence.occurrences(),
        })
    }

    /// Distinct positive triples in block order.
    pub fn positives(&self) -> Vec<LabeledTriple> {
        let mut seen = HashSet::new();
        self.blocks
            .iter()
            .filter(|b| seen.insert(b.positive.clone()))
            .map(|b| b.positive.clone())
            .collect()
    }
}

pub fn build_embedder(cfg: &PipelineConfig) -> Result<Arc<dyn Embedder>, RunError> {
    let inner: Arc<dyn Embedder> = match cfg.embedder.kind {
        EmbedderChoice::Hash => Arc::new(HashEmbedder::new(cfg.embedder.dim)),
        EmbedderChoice::Remote => {
            let r = cfg.embedder.remote.clone().ok_or_else(|| ConfigError::Invalid("missing [embedder.remote]".into()))?;
            Arc::new(RemoteEmbedder::new(r)?)
        }
    };
    Ok(Arc::new(CachedEmbedder::new(inner)))
}

/// The oracle knows the positive of every block and nothing else.
pub fn build_scorer(cfg: &PipelineConfig, ds: &Dataset) -> Result<Box<dyn Scorer>, RunError> {
    Ok(match cfg.scorer.kind {
        ScorerChoice::Oracle => Box::new(OracleScorer::new(ds.positives())),
        ScorerChoice::Constant => Box::new(ConstantScorer::new(cfg.scorer.constant)?),
        ScorerChoice::Random => Box::new(RandomScorer::new(cfg.seed)),
        ScorerChoice::Remote => {
            let r = cfg.scorer.remote.clone().ok_or_else(|| ConfigError::Invalid("missing [scorer.remote]".into()))?;
            Box::new(RemoteLlmScorer::new(r)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub split: String,
    pub path: PathBuf,
    pub stats: GraphStats,
    /// Published figures for this split, when known.
    pub reference: Option<GraphStats>,
}

impl StatsRow {
    pub fn matches_reference(&self) -> Option<bool> {
        self.reference.map(|r| r == self.stats)
    }
}

/// Loads every split in `data.splits` (or train and test when that table is
/// empty) and reports its size.
pub fn stats(cfg: &PipelineConfig) -> Result<Vec<StatsRow>, RunError> {
    cfg.check_files()?;
    let mut named: Vec<(String, PathBuf)> = cfg
        .data
        .splits
        .iter()
        .map(|(name, p)| (name.clone(), cfg.data_path(p)))
        .collect();
    if named.is_empty() {
        if let Some(p) = cfg.train_path() {
            named.push(("train".into(), p));
        }
        if let Some(p) = cfg.test_path() {
            named.push((format!("test-{}", cfg.setting), p));
        }
    }
    if named.is_empty() {
        warn!("no splits configured");
    }
    named
        .into_iter()
        .map(|(split, path)| {
            let g = load_graph_named(&path, split.clone())?;
            Ok(StatsRow {
                reference: reference::lookup(&cfg.dataset, &split),
                split,
                path,
                stats: g.stats(),
            })
        })
        .collect()
}

pub fn stats_table(rows: &[StatsRow]) -> String {
    let mut out = format!("{:<20} {:>6} {:>8} {:>8}  {}\n", "split", "|R|", "|E|", "|T|", "reference");
    for r in rows {
        let note = match (r.reference, r.matches_reference()) {
            (Some(_), Some(true)) => "match".to_string(),
            (Some(x), _) => format!("differs ({} / {} / {})", x.relations, x.entities, x.triples),
            (None, _) => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<20} {:>6} {:>8} {:>8}  {}\n",
            r.split, r.stats.relations, r.stats.entities, r.stats.triples, note
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub dataset: String,
    pub setting: Setting,
    pub max_len: usize,
    pub bidirectional: bool,
    pub queries: usize,
    pub zero_path: usize,
    pub zero_fraction: f64,
    /// Raw path count buckets.
    pub histogram: BTreeMap<String, usize>,
    /// Queries whose enumeration hit the raw path cap.
    pub capped: usize,
    /// Published zero-path figure `(zero, total)` when this is the
    /// FB15k-237 inductive test split.
    pub reference: Option<(usize, usize)>,
}

fn bucket(n: usize) -> &'static str {
    match n {
        0 => "0",
        1 => "1",
        2..=5 => "2-5",
        6..=20 => "6-20",
        21..=100 => "21-100",
        _ => ">100",
    }
}

/// Counts reasoning paths between head and tail of every distinct positive.
pub fn path_report(cfg: &PipelineConfig, ds: &Dataset) -> Result<PathReport, RunError> {
    let evidence = ds.evidence(cfg.setting)?;
    let embedder = HashEmbedder::new(8);
    let settings = cfg.evidence.settings();
    let cap = settings.paths.max_raw_paths;
    let factory = PromptFactory::new(evidence, ds.occurrences(cfg)?, &embedder, settings, cfg.seed);
    let positives = ds.positives();
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let (mut zero, mut capped) = (0, 0);
    for q in &positives {
        let n = factory
            .raw_path_count(q)
            .map_err(ScoreError::Evidence)?;
        if n == 0 {
            zero += 1;
        }
        if n >= cap {
            capped += 1;
        }
        *histogram.entry(bucket(n).to_string()).or_default() += 1;
    }
    let is_fb_ind = cfg.dataset.eq_ignore_ascii_case("FB15k-237") && cfg.setting == Setting::Inductive;
    Ok(PathReport {
        dataset: cfg.dataset.clone(),
        setting: cfg.setting,
        max_len: cfg.evidence.n,
        bidirectional: cfg.evidence.bidirectional,
        queries: positives.len(),
        zero_path: zero,
        zero_fraction: if positives.is_empty() { 0.0 } else { zero as f64 / positives.len() as f64 },
        histogram,
        capped,
        reference: is_fb_ind.then_some(reference::FB_INDUCTIVE_ZERO_PATH),
    })
}

/// Builds the instruction corpus from the configured training split and
/// writes it to `output_dir/corpus.jsonl`.
pub fn gen_sft(cfg: &PipelineConfig) -> Result<(PathBuf, CorpusSummary), RunError> {
    cfg.validate()?;
    cfg.check_files()?;
    let path = cfg
        .sft_train_path()
        .ok_or_else(|| ConfigError::Invalid("gen-sft needs data.train or data.sft_train".into()))?;
    let g = load_graph_named(path, "train")?;
    let embedder = build_embedder(cfg)?;
    let corpus_cfg = CorpusConfig {
        m: cfg.m,
        seed: cfg.seed,
        evidence: cfg.evidence.settings(),
    };
    let records = build_instruction_corpus(&g, &corpus_cfg, embedder.as_ref())?;
    fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.join("corpus.jsonl");
    write_corpus(&out, &records)?;
    let summary = summarize(&records);
    info!(records = summary.records, path = %out.display(), "corpus written");
    Ok((out, summary))
}

fn open_cache(cfg: &PipelineConfig) -> Result<Option<ScoreCache>, RunError> {
    Ok(match &cfg.cache_dir {
        Some(dir) => Some(ScoreCache::open(dir)?),
        None => None,
    })
}

/// Ranks every block and writes one JSON line per block to
/// `output_dir/scores.jsonl`. Failed blocks are logged and counted.
pub fn score_blocks(cfg: &PipelineConfig, ds: &Dataset) -> Result<(PathBuf, usize), RunError> {
    let outcome = evaluate_dataset(cfg, ds)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.join("scores.jsonl");
    let mut w = BufWriter::new(File::create(&out)?);
    for b in &outcome.ranked {
        serde_json::to_writer(&mut w, b).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if outcome.report.partial {
        return Err(RunError::Partial(outcome.report.failed.len()));
    }
    Ok((out, outcome.ranked.len()))
}

pub fn evaluate_dataset(cfg: &PipelineConfig, ds: &Dataset) -> Result<EvalOutcome, RunError> {
    cfg.validate()?;
    let evidence = ds.evidence(cfg.setting)?;
    let embedder = build_embedder(cfg)?;
    let scorer = build_scorer(cfg, ds)?;
    let cache = open_cache(cfg)?;
    let factory = PromptFactory::new(evidence, ds.occurrences(cfg)?, embedder.as_ref(), cfg.evidence.settings(), cfg.seed);
    let ctx = ScoringContext::new(factory, scorer.as_ref(), cache.as_ref());
    Ok(run_evaluation(
        &ctx,
        &ds.blocks,
        cfg.mode,
        cfg.concurrency,
        EvalMeta {
            fingerprint: cfg.fingerprint(),
            config: cfg.fingerprint_view(),
        },
    ))
}

/// Runs the evaluation and writes `report.json`, `report.txt` and
/// `timing.json` under `output_dir`.
pub fn evaluate(cfg: &PipelineConfig, ds: &Dataset) -> Result<(EvalOutcome, PathBuf), RunError> {
    let outcome = evaluate_dataset(cfg, ds)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let report_path = cfg.output_dir.join("report.json");
    fs::write(&report_path, outcome.report.to_json())?;
    fs::write(cfg.output_dir.join("report.txt"), outcome.report.table())?;
    fs::write(
        cfg.output_dir.join("timing.json"),
        serde_json::to_string_pretty(&outcome.timing).map_err(std::io::Error::from)?,
    )?;
    Ok((outcome, report_path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakedItem {
    pub query_id: String,
    pub candidate: LabeledTriple,
    pub task: TaskKind,
    pub item: LabeledTriple,
}

/// Rebuilds every prompt the evaluation would send and lists evidence items
/// that do not come from the evidence graph of the configured setting.
pub fn audit_evaluation_evidence(cfg: &PipelineConfig, ds: &Dataset) -> Result<Vec<LeakedItem>, RunError> {
    let evidence = ds.evidence(cfg.setting)?;
    let embedder = build_embedder(cfg)?;
    let factory = PromptFactory::new(evidence, ds.occurrences(cfg)?, embedder.as_ref(), cfg.evidence.settings(), cfg.seed);
    let mut leaks = Vec::new();
    for block in &ds.blocks {
        for c in block.candidates() {
            for task in [TaskKind::Tar, TaskKind::Sr] {
                if !cfg.mode.uses(task) {
                    continue;
                }
                let p = match task {
                    TaskKind::Tar => factory.tar_prompt(c, None),
                    TaskKind::Sr => factory.sr_prompt(c, None),
                }
                .map_err(ScoreError::Evidence)?;
                leaks.extend(evidence_outside(&p.evidence, evidence).into_iter().map(|item| LeakedItem {
                    query_id: block.id.clone(),
                    candidate: c.clone(),
                    task,
                    item,
                }));
            }
        }
    }
    Ok(leaks)
}
