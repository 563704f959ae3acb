//! Token counting and the budget arithmetic that bounds subtable size.
//!
//! The budget for one prompt decomposes into a measured prologue/scaffold
//! reserve, a metadata reserve, a per-task instruction reserve, and the
//! overlap offset; whatever remains of the model limit is the room the
//! serialized subtable may occupy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::TaskKind;

/// Token counting contract. Implementations must be cheap, deterministic,
/// and safe to call from concurrent threads.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Characters counted as standalone tokens wherever they occur.
const SPLIT_CHARS: [char; 5] = ['|', '[', ']', ':', ','];

/// Deterministic stand-in for an LLM tokenizer: counts maximal runs of
/// non-whitespace, with `|`, `[`, `]`, `:` and `,` split off as their own
/// tokens. Real tokenizers plug in behind the [`Tokenizer`] trait.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_run = false;
        for ch in text.chars() {
            if ch.is_whitespace() {
                in_run = false;
            } else if SPLIT_CHARS.contains(&ch) {
                count += 1;
                in_run = false;
            } else if !in_run {
                count += 1;
                in_run = true;
            }
        }
        count
    }
}

/// Count tokens of `text` under the given tokenizer.
pub fn count_tokens(text: &str, tok: &dyn Tokenizer) -> usize {
    tok.count(text)
}

/// Reserved token lengths governing how much of the context window the
/// serialized subtable may use.
///
/// `allowed_subtable_len` subtracts every reserve *and* the offset from the
/// model limit, so a subtable extended by up to `offset` overlap tokens
/// still fits the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub model_limit: usize,
    pub metadata_reserve: usize,
    pub instruction_reserve: BTreeMap<TaskKind, usize>,
    pub offset: usize,
    pub prologue_reserve: usize,
}

/// Default reserves: 500 tokens for entity linking (long referent-entity
/// candidates), 50 for highlighted-cells QA, 100 for everything else.
fn default_reserves() -> BTreeMap<TaskKind, usize> {
    TaskKind::ALL
        .iter()
        .map(|&task| {
            let reserve = match task {
                TaskKind::EntityLinking => 500,
                TaskKind::HighlightedCellsQa => 50,
                _ => 100,
            };
            (task, reserve)
        })
        .collect()
}

impl BudgetPlan {
    pub const DEFAULT_MODEL_LIMIT: usize = 2048;
    pub const DEFAULT_METADATA_RESERVE: usize = 20;
    pub const DEFAULT_OFFSET: usize = 200;

    /// Plan with the default constants and a measured prologue reserve.
    pub fn with_prologue_reserve(prologue_reserve: usize) -> Self {
        BudgetPlan {
            model_limit: Self::DEFAULT_MODEL_LIMIT,
            metadata_reserve: Self::DEFAULT_METADATA_RESERVE,
            instruction_reserve: default_reserves(),
            offset: Self::DEFAULT_OFFSET,
            prologue_reserve,
        }
    }

    /// Plan with `prologue_reserve` measured from the actual prologue text
    /// plus the four-marker scaffold.
    pub fn for_prologue(prologue: &str, tok: &dyn Tokenizer) -> Self {
        Self::with_prologue_reserve(measure_prologue_reserve(prologue, tok))
    }

    /// Validity check: the limit must leave room for at least one table
    /// token under the largest reserve combination.
    pub fn validate(&self) -> Result<()> {
        if self.instruction_reserve.is_empty() {
            return Err(Error::InvalidPlan("no instruction reserves".into()));
        }
        let max_reserve = self
            .instruction_reserve
            .values()
            .copied()
            .max()
            .unwrap_or(0);
        let floor = self.prologue_reserve + self.metadata_reserve + max_reserve + self.offset;
        if self.model_limit <= floor {
            return Err(Error::InvalidPlan(format!(
                "model_limit {} leaves no room for a table (reserves + offset = {floor})",
                self.model_limit
            )));
        }
        Ok(())
    }

    /// Tokens the serialized subtable may occupy for the given task.
    pub fn allowed_subtable_len(&self, task: TaskKind) -> Result<usize> {
        let reserve = *self
            .instruction_reserve
            .get(&task)
            .ok_or_else(|| Error::MissingReserve(task.to_string()))?;
        let spent = self.prologue_reserve + self.metadata_reserve + reserve + self.offset;
        if spent >= self.model_limit {
            return Err(Error::InvalidPlan(format!(
                "reserves + offset ({spent}) exceed model_limit {} for task {task}",
                self.model_limit
            )));
        }
        Ok(self.model_limit - spent)
    }
}

/// Tokens to reserve for a prologue plus the `### ...:` section scaffold.
pub fn measure_prologue_reserve(prologue: &str, tok: &dyn Tokenizer) -> usize {
    const SCAFFOLD: &str = "### Instruction:\n### Input:\n### Question:\n### Response:";
    tok.count(prologue) + tok.count(SCAFFOLD)
}

/// Maximum generation length per task: 512 for row population, 128 for
/// highlighted-cells QA and schema augmentation, 64 otherwise.
pub fn max_generation_tokens(task: TaskKind) -> usize {
    match task {
        TaskKind::RowPopulation => 512,
        TaskKind::HighlightedCellsQa | TaskKind::SchemaAugmentation => 128,
        _ => 64,
    }
}
