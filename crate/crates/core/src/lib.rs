//! Toolkit for turning real-world tables plus task definitions into
//! context-budget-compliant LLM prompts, and for running two
//! context-limit-defeating strategies over a pluggable model backend:
//! divide-and-merge classification for large label spaces and tree-rank for
//! large candidate pools. Ships JSONL ingestion, dynamic subtable
//! segmentation, the full prompt schema for eight table tasks, mock and
//! HTTP backends, and the matching evaluation metrics.

pub mod backend;
pub mod budget;
pub mod classify;
pub mod config;
pub mod error;
pub mod http;
pub mod metrics;
pub mod pipeline;
pub mod rank;
pub mod rng;
pub mod segment;
pub mod serialize;
pub mod table;

pub use error::{Error, Result};
