//! Run configuration (TOML or JSON) with command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embed::RemoteEmbedderConfig;
use crate::kg::SupportExclusion;
use crate::neighbors::NeighborConfig;
use crate::paths::PathConfig;
use crate::pipeline::EvidenceSettings;
use crate::prompt::{PromptLimits, TEMPLATE_VERSION};
use crate::score::remote::RemoteScorerConfig;
use crate::score::Mode;
use crate::seed::sha256_hex;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{what} not found: {path}")]
    MissingFile { what: String, path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Transductive,
    #[default]
    Inductive,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Transductive => "transductive",
            Setting::Inductive => "inductive",
        })
    }
}

impl FromStr for Setting {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transductive" => Ok(Setting::Transductive),
            "inductive" => Ok(Setting::Inductive),
            other => Err(ConfigError::Invalid(format!("unknown setting {other:?}"))),
        }
    }
}

/// Graph whose relation counts weight path degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccurrenceSource {
    #[default]
    Evidence,
    Train,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Base directory for relative data paths.
    pub root: Option<PathBuf>,
    pub train: Option<PathBuf>,
    /// Inductive test graph (evidence in the inductive setting).
    pub test: Option<PathBuf>,
    /// Query-block files.
    pub queries: Vec<PathBuf>,
    /// Graph used for the instruction corpus; defaults to `train`.
    pub sft_train: Option<PathBuf>,
    /// Extra named splits listed by `stats`.
    pub splits: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceConfig {
    /// Maximum path length.
    pub n: usize,
    pub beta: usize,
    pub sigma: usize,
    pub k: usize,
    pub bidirectional: bool,
    pub max_raw_paths: usize,
    pub neighbors_both_orientations: bool,
    pub support_exclusion: SupportExclusion,
    pub occurrences: OccurrenceSource,
    pub max_words: usize,
    pub min_neighbors: usize,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        let s = EvidenceSettings::default();
        Self {
            n: s.paths.max_len,
            beta: s.beta,
            sigma: s.neighbors.sigma,
            k: s.k,
            bidirectional: s.paths.bidirectional,
            max_raw_paths: s.paths.max_raw_paths,
            neighbors_both_orientations: s.neighbors.both_orientations,
            support_exclusion: s.support_exclusion,
            occurrences: OccurrenceSource::default(),
            max_words: s.limits.max_words,
            min_neighbors: s.limits.min_neighbors,
        }
    }
}

impl EvidenceConfig {
    pub fn settings(&self) -> EvidenceSettings {
        EvidenceSettings {
            paths: PathConfig {
                max_len: self.n,
                bidirectional: self.bidirectional,
                max_raw_paths: self.max_raw_paths,
            },
            beta: self.beta,
            neighbors: NeighborConfig {
                sigma: self.sigma,
                both_orientations: self.neighbors_both_orientations,
            },
            k: self.k,
            support_exclusion: self.support_exclusion,
            limits: PromptLimits {
                max_words: self.max_words,
                min_neighbors: self.min_neighbors,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerChoice {
    #[default]
    Oracle,
    Constant,
    Random,
    Remote,
}

impl FromStr for ScorerChoice {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(ScorerChoice::Oracle),
            "constant" => Ok(ScorerChoice::Constant),
            "random" => Ok(ScorerChoice::Random),
            "remote" => Ok(ScorerChoice::Remote),
            other => Err(ConfigError::Invalid(format!("unknown scorer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerChoice,
    /// Value returned by the constant scorer.
    pub constant: f64,
    pub remote: Option<RemoteScorerConfig>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerChoice::default(),
            constant: 0.5,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderChoice,
    /// Dimension of the hash embedder.
    pub dim: usize,
    pub remote: Option<RemoteEmbedderConfig>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderChoice::default(),
            dim: 256,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: String,
    pub setting: Setting,
    pub mode: Mode,
    pub seed: u64,
    /// Negatives per positive in the instruction corpus.
    pub m: usize,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub evidence: EvidenceConfig,
    pub scorer: ScorerConfig,
    pub embedder: EmbedderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: "unnamed".into(),
            setting: Setting::default(),
            mode: Mode::Full,
            seed: 42,
            m: 12,
            concurrency: 4,
            cache_dir: None,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            evidence: EvidenceConfig::default(),
            scorer: ScorerConfig::default(),
            embedder: EmbedderConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub setting: Option<Setting>,
    pub scorer: Option<ScorerChoice>,
    pub seed: Option<u64>,
    pub data_root: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub n: Option<usize>,
    pub bidirectional: Option<bool>,
}

impl PipelineConfig {
    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Reads a `.json` or TOML file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = Self::parse(&text, json).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self.data.root.as_mut() {
            Some(root) => abs(root),
            None => self.data.root = Some(base.to_path_buf()),
        }
        if let Some(c) = self.cache_dir.as_mut() {
            abs(c);
        }
        abs(&mut self.output_dir);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.setting {
            self.setting = v;
        }
        if let Some(v) = o.scorer {
            self.scorer.kind = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.data_root {
            self.data.root = Some(v.clone());
        }
        if let Some(v) = o.concurrency {
            self.concurrency = v;
        }
        if let Some(v) = &o.cache_dir {
            self.cache_dir = Some(v.clone());
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.n {
            self.evidence.n = v;
        }
        if let Some(v) = o.bidirectional {
            self.evidence.bidirectional = v;
        }
    }

    /// Resolves a data path against `data.root`.
    pub fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn train_path(&self) -> Option<PathBuf> {
        self.data.train.as_deref().map(|p| self.data_path(p))
    }

    pub fn test_path(&self) -> Option<PathBuf> {
        self.data.test.as_deref().map(|p| self.data_path(p))
    }

    pub fn sft_train_path(&self) -> Option<PathBuf> {
        self.data
            .sft_train
            .as_deref()
            .or(self.data.train.as_deref())
            .map(|p| self.data_path(p))
    }

    pub fn query_paths(&self) -> Vec<PathBuf> {
        self.data.queries.iter().map(|p| self.data_path(p)).collect()
    }

    /// Checks value ranges. File existence is checked by [`Self::check_files`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.evidence.n == 0 {
            return bad("evidence.n must be at least 1");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if self.evidence.max_words == 0 {
            return bad("evidence.max_words must be positive");
        }
        if !(0.0..=1.0).contains(&self.scorer.constant) {
            return bad("scorer.constant must lie in [0, 1]");
        }
        if self.scorer.kind == ScorerChoice::Remote && self.scorer.remote.is_none() {
            return bad("scorer.kind = \"remote\" needs a [scorer.remote] table");
        }
        if self.embedder.kind == EmbedderChoice::Remote && self.embedder.remote.is_none() {
            return bad("embedder.kind = \"remote\" needs an [embedder.remote] table");
        }
        if self.embedder.kind == EmbedderChoice::Hash && self.embedder.dim == 0 {
            return bad("embedder.dim must be positive");
        }
        Ok(())
    }

    /// Every configured data file must exist.
    pub fn check_files(&self) -> Result<(), ConfigError> {
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        if let Some(p) = self.train_path() {
            files.push(("train split".into(), p));
        }
        if let Some(p) = self.test_path() {
            files.push(("test split".into(), p));
        }
        if let Some(p) = self.data.sft_train.as_deref() {
            files.push(("sft train split".into(), self.data_path(p)));
        }
        for p in self.query_paths() {
            files.push(("query file".into(), p));
        }
        for (name, p) in &self.data.splits {
            files.push((format!("split {name}"), self.data_path(p)));
        }
        for (what, path) in files {
            if !path.is_file() {
                return Err(ConfigError::MissingFile { what, path });
            }
        }
        Ok(())
    }

    /// Settings that determine outputs. Concurrency and directories are left
    /// out so that they can change between a run and its resumption.
    pub fn fingerprint_view(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            for k in ["concurrency", "cache_dir", "output_dir"] {
                map.remove(k);
            }
            map.insert("template_version".into(), Value::String(TEMPLATE_VERSION.into()));
        }
        v
    }

    /// SHA-256 of the canonical JSON of [`Self::fingerprint_view`]. API keys
    /// are never part of the config, only the names of their variables.
    pub fn fingerprint(&self) -> String {
        // serde_json maps are ordered by key, so the text is canonical.
        sha256_hex(&self.fingerprint_view().to_string())
    }
}
