//! Context-aware inductive knowledge graph completion.
//!
//! The crate covers everything around the language model: loading benchmark
//! splits, extracting reasoning paths and neighboring facts, rendering the
//! type-aware (TAR) and subgraph (SR) prompts, scoring candidates through a
//! pluggable [`score::Scorer`], and computing MRR / Hits@k over ranked blocks.

pub mod config;
pub mod embed;
pub mod eval;
pub mod experiment;
pub mod kg;
pub mod neighbors;
pub mod paths;
pub mod pipeline;
pub mod prompt;
pub mod reference;
pub mod score;
pub mod seed;
pub mod sft;
