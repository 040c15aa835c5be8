use std::path::PathBuf;
use std::process::ExitCode;

use cats_core::config::{ConfigError, Overrides, PipelineConfig, ScorerChoice, Setting};
use cats_core::experiment::{self, Dataset, RunError};
use cats_core::score::Mode;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Inductive knowledge graph completion pipeline.
#[derive(Parser, Debug)]
#[command(name = "cats", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// TAR, SR or FULL.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// transductive or inductive.
    #[arg(long, global = true)]
    setting: Option<Setting>,
    /// oracle, constant, random or remote.
    #[arg(long, global = true)]
    scorer: Option<ScorerChoice>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base directory for relative data paths.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long = "out", global = true)]
    output_dir: Option<PathBuf>,
    /// Maximum reasoning-path length.
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Follow edges in their stored direction only.
    #[arg(long, global = true)]
    directed: bool,
    /// Print JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relation, entity and triple counts per split.
    Stats,
    /// How many query triples have reasoning paths.
    Paths,
    /// Write the instruction corpus for fine-tuning.
    GenSft,
    /// Score every query block and dump the ranked candidates.
    Score,
    /// Rank every query block and report MRR / Hits@k.
    Eval,
}

fn load_config(c: &Common) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        mode: c.mode,
        setting: c.setting,
        scorer: c.scorer,
        seed: c.seed,
        data_root: c.data_dir.clone(),
        concurrency: c.concurrency,
        cache_dir: c.cache_dir.clone(),
        output_dir: c.output_dir.clone(),
        n: c.max_len,
        bidirectional: c.directed.then_some(false),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let cfg = load_config(&cli.common)?;
    let json = cli.common.json;
    match cli.command {
        Command::Stats => {
            let rows = experiment::stats(&cfg)?;
            if json {
                print_json(&rows);
            } else {
                print!("{}", experiment::stats_table(&rows));
            }
        }
        Command::Paths => {
            let ds = Dataset::load(&cfg)?;
            let r = experiment::path_report(&cfg, &ds)?;
            if json {
                print_json(&r);
            } else {
                println!(
                    "{} ({}), n={}, {}",
                    r.dataset,
                    r.setting,
                    r.max_len,
                    if r.bidirectional { "bidirectional" } else { "directed" }
                );
                println!("queries: {}", r.queries);
                println!("zero-path queries: {} ({:.1}%)", r.zero_path, 100.0 * r.zero_fraction);
                for (bucket, count) in &r.histogram {
                    println!("  paths {bucket:>7}: {count}");
                }
                if r.capped > 0 {
                    println!("queries at the raw path cap: {}", r.capped);
                }
                if let Some((zero, total)) = r.reference {
                    println!("published reference: {zero} of {total}");
                }
            }
        }
        Command::GenSft => {
            let (path, s) = experiment::gen_sft(&cfg)?;
            if json {
                print_json(&s);
            } else {
                println!("wrote {} records to {}", s.records, path.display());
                println!("TAR: {} Y / {} N", s.tar_yes, s.tar_no);
                println!("SR:  {} Y / {} N", s.sr_yes, s.sr_no);
            }
        }
        Command::Score => {
            let ds = Dataset::load(&cfg)?;
            let (path, n) = experiment::score_blocks(&cfg, &ds)?;
            println!("scored {n} blocks into {}", path.display());
        }
        Command::Eval => {
            let ds = Dataset::load(&cfg)?;
            let (outcome, path) = experiment::evaluate(&cfg, &ds)?;
            if json {
                print!("{}", outcome.report.to_json());
            } else {
                print!("{}", outcome.report.table());
                println!("report: {}", path.display());
            }
            if outcome.report.partial {
                return Err(RunError::Partial(outcome.report.failed.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
