//! Evaluation metrics: pooled micro precision/recall/F1 for multi-label
//! tasks, normalized exact accuracy for single-answer tasks, and mean
//! average precision for ranking tasks.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Pooled TP/FP/FN precision, recall and F1 over prediction/gold set pairs.
///
/// Zero-denominator conventions: precision is 0 when nothing was predicted,
/// recall is 0 when nothing is gold, F1 is 0 when both are 0.
pub fn micro_prf(predictions: &[Vec<String>], golds: &[Vec<String>]) -> Result<(f64, f64, f64)> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (pred, gold) in predictions.iter().zip(golds) {
        let pred: HashSet<&String> = pred.iter().collect();
        let gold: HashSet<&String> = gold.iter().collect();
        tp += pred.intersection(&gold).count();
        fp += pred.difference(&gold).count();
        fn_ += gold.difference(&pred).count();
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Normalization used before exact-match comparison: lowercase, trim, and
/// one trailing period stripped.
pub fn normalize_answer(text: &str) -> String {
    let trimmed = text.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed).trim_end();
    trimmed.to_lowercase()
}

/// Fraction of exact matches between predictions and golds.
pub fn exact_accuracy(predictions: &[String], golds: &[String], normalize: bool) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let matches = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| {
            if normalize {
                normalize_answer(p) == normalize_answer(g)
            } else {
                p == g
            }
        })
        .count();
    Ok(matches as f64 / predictions.len() as f64)
}

/// Average precision of one ranking against a non-empty relevant set.
///
/// AP = (1/|relevant|) * sum over relevant positions p of
/// (relevant items in the top p) / p, with 1-based positions.
pub fn average_precision(ranking: &[String], relevant: &HashSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let in_ranking: HashSet<&String> = ranking.iter().collect();
    for r in relevant {
        if !in_ranking.contains(r) {
            return Err(Error::RelevantNotRanked(r.clone()));
        }
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in ranking.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Mean AP over instances; instances with an empty relevant set are skipped
/// and tallied rather than failing the run.
pub fn mean_average_precision(
    instances: &[(Vec<String>, HashSet<String>)],
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for (ranking, relevant) in instances {
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        sum += average_precision(ranking, relevant)?;
        counted += 1;
    }
    let map = if counted == 0 {
        0.0
    } else {
        sum / counted as f64
    };
    Ok((map, skipped))
}

/// Metric values reported for one task; only the fields that task uses are
/// populated.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TaskMetrics {
    pub instances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
}

/// Per-task evaluation results plus warning tallies.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<String, TaskMetrics>,
    pub instances: usize,
    pub warnings: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn add_warning(&mut self, kind: &str, count: usize) {
        if count > 0 {
            *self.warnings.entry(kind.to_string()).or_insert(0) += count;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per task.
    pub fn to_table(&self) -> String {
        let name_width = self
            .tasks
            .keys()
            .map(String::len)
            .chain(std::iter::once("task".len()))
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>5}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
            "task", "n", "precision", "recall", "micro_f1", "accuracy", "map"
        );
        fn cell(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.4}"))
                .unwrap_or_else(|| "-".to_string())
        }
        for (task, m) in &self.tasks {
            let _ = writeln!(
                out,
                "{:<name_width$}  {:>5}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
                task,
                m.instances,
                cell(m.precision),
                cell(m.recall),
                cell(m.micro_f1),
                cell(m.accuracy),
                cell(m.map),
            );
        }
        let _ = writeln!(out, "total instances: {}", self.instances);
        for (kind, count) in &self.warnings {
            let _ = writeln!(out, "warning [{kind}]: {count}");
        }
        out
    }
}
