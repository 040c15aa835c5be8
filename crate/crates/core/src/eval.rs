//! Ranking metrics and evaluation reports.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::kg::{Direction, QueryBlock, BLOCK_SIZE};
use crate::score::{Mode, RankedBlock, ScoringContext};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric is undefined over an empty rank list")]
    Empty,
    #[error("ranks start at 1")]
    ZeroRank,
    #[error("hits cutoff must be at least 1")]
    ZeroCutoff,
}

fn check(ranks: &[usize]) -> Result<(), MetricError> {
    if ranks.is_empty() {
        return Err(MetricError::Empty);
    }
    if ranks.contains(&0) {
        return Err(MetricError::ZeroRank);
    }
    Ok(())
}

pub fn mrr(ranks: &[usize]) -> Result<f64, MetricError> {
    check(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn hits_at(ranks: &[usize], k: usize) -> Result<f64, MetricError> {
    check(ranks)?;
    if k == 0 {
        return Err(MetricError::ZeroCutoff);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean of 1/rank when the rank is uniform over `1..=n`, i.e. H_n / n.
pub fn expected_random_mrr(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRank {
    pub query_id: String,
    pub direction: Direction,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedQuery {
    pub query_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub fingerprint: String,
    /// Resolved settings the run was made with (secrets excluded).
    pub config: Value,
    pub mode: Mode,
    pub scorer: String,
    pub template_version: String,
    pub queries: usize,
    pub per_query: Vec<QueryRank>,
    /// Aggregates over `per_query`; absent when no block was ranked.
    pub mrr: Option<f64>,
    pub hits1: Option<f64>,
    pub hits3: Option<f64>,
    pub hits10: Option<f64>,
    pub partial: bool,
    pub failed: Vec<FailedQuery>,
    /// Scores that fell back to 0.5 because neither label was returned.
    pub fallback_scores: u64,
}

impl EvalReport {
    pub fn ranks(&self) -> Vec<usize> {
        self.per_query.iter().map(|q| q.rank).collect()
    }

    /// True when the stored aggregates equal a recomputation from `per_query`.
    pub fn aggregates_consistent(&self) -> bool {
        let ranks = self.ranks();
        self.mrr == mrr(&ranks).ok()
            && self.hits1 == hits_at(&ranks, 1).ok()
            && self.hits3 == hits_at(&ranks, 3).ok()
            && self.hits10 == hits_at(&ranks, 10).ok()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}", "mode", "queries", "MRR", "Hits@1", "Hits@3", "Hits@10", "failed");
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            self.mode.to_string(),
            self.per_query.len(),
            fmt(self.mrr),
            fmt(self.hits1),
            fmt(self.hits3),
            fmt(self.hits10),
            self.failed.len()
        );
        let _ = writeln!(out, "scorer: {}", self.scorer);
        let _ = writeln!(out, "fingerprint: {}", self.fingerprint);
        if self.partial {
            let _ = writeln!(out, "PARTIAL: {} queries failed", self.failed.len());
        }
        if self.fallback_scores > 0 {
            let _ = writeln!(out, "fallback scores: {}", self.fallback_scores);
        }
        out
    }
}

/// Wall-clock figures kept apart from the report so reruns stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTiming {
    pub wall_secs: f64,
    pub secs_per_query: f64,
    pub candidates_per_query: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMeta {
    pub fingerprint: String,
    pub config: Value,
}

pub struct EvalOutcome {
    pub report: EvalReport,
    pub timing: EvalTiming,
    pub ranked: Vec<RankedBlock>,
}

/// Ranks every block with at most `concurrency` blocks in flight and
/// assembles the report in block order.
pub fn run_evaluation(
    ctx: &ScoringContext<'_>,
    blocks: &[QueryBlock],
    mode: Mode,
    concurrency: usize,
    meta: EvalMeta,
) -> EvalOutcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<_> = pool.install(|| blocks.par_iter().map(|b| ctx.rank_block(b, mode)).collect());

    let mut per_query = Vec::with_capacity(blocks.len());
    let mut ranked = Vec::with_capacity(blocks.len());
    let mut failed = Vec::new();
    for (block, result) in blocks.iter().zip(results) {
        match result {
            Ok(r) => {
                per_query.push(QueryRank {
                    query_id: r.query_id.clone(),
                    direction: r.direction,
                    rank: r.rank_of_positive,
                });
                ranked.push(r);
            }
            Err(e) => {
                warn!(query = %block.id, error = %e, "query failed");
                failed.push(FailedQuery {
                    query_id: block.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let ranks: Vec<usize> = per_query.iter().map(|q| q.rank).collect();
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fingerprint: meta.fingerprint,
        config: meta.config,
        mode,
        scorer: ctx.scorer.name().to_string(),
        template_version: crate::prompt::TEMPLATE_VERSION.to_string(),
        queries: blocks.len(),
        mrr: mrr(&ranks).ok(),
        hits1: hits_at(&ranks, 1).ok(),
        hits3: hits_at(&ranks, 3).ok(),
        hits10: hits_at(&ranks, 10).ok(),
        per_query,
        partial: !failed.is_empty(),
        failed,
        fallback_scores: ctx.fallbacks(),
    };
    let wall = start.elapsed().as_secs_f64();
    info!(queries = blocks.len(), wall_secs = wall, "evaluation finished");
    EvalOutcome {
        report,
        timing: EvalTiming {
            wall_secs: wall,
            secs_per_query: if blocks.is_empty() { 0.0 } else { wall / blocks.len() as f64 },
            candidates_per_query: BLOCK_SIZE,
        },
        ranked,
    }
}
