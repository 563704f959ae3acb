//! Divide-and-merge orchestration for large-label classification, plus
//! Pos/Neg training-record construction.
//!
//! The label space is divided into candidate subsets of a fixed size, each
//! with a none-of-the-above option appended. At inference every subset is
//! queried and the parsed answers are merged: the prediction is the union of
//! survivors minus none-of-the-above. At training time subsets containing a
//! gold label become Pos records and a sampled share of the remaining
//! subsets become Neg records answered with none-of-the-above.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::backend::{parse_multilabel, OracleBackend};
use crate::budget::max_generation_tokens;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::serialize::{format_label, response_sentence, PromptRecord};
use crate::table::TaskInstance;

/// An ordered set of unique labels plus the none-of-the-above token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    nota: String,
}

pub const DEFAULT_NOTA: &str = "none of the above";

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        Self::with_nota(labels, DEFAULT_NOTA)
    }

    pub fn with_nota(labels: Vec<String>, nota: impl Into<String>) -> Result<Self> {
        let nota = nota.into();
        if labels.is_empty() {
            return Err(Error::InvalidConfig("label space is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &labels {
            if !seen.insert(label) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate label {label:?} in label space"
                )));
            }
            if *label == nota {
                return Err(Error::InvalidConfig(format!(
                    "label space contains the none-of-the-above token {nota:?}"
                )));
            }
        }
        Ok(LabelSpace { labels, nota })
    }

    /// One label per line, blank lines skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut labels = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                labels.push(trimmed.to_string());
            }
        }
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nota(&self) -> &str {
        &self.nota
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Knobs for divide-and-merge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Labels per candidate subset, before none-of-the-above is appended.
    pub subset_size: usize,
    /// Pos records to Neg records, per instance.
    pub pos_neg_ratio: (u32, u32),
    /// Re-query rounds when a single-label task ends with several survivors.
    pub runoff_rounds: usize,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            subset_size: 10,
            pos_neg_ratio: (1, 3),
            runoff_rounds: 3,
            seed: 0,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "subset_size must be at least 2, got {}",
                self.subset_size
            )));
        }
        if self.pos_neg_ratio.0 == 0 {
            return Err(Error::InvalidConfig(
                "pos side of pos_neg_ratio must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Divide the label space into order-preserving chunks of `subset_size`
/// (the last may be smaller), each with none-of-the-above appended as its
/// final option.
pub fn divide_labels(space: &LabelSpace, subset_size: usize) -> Vec<Vec<String>> {
    space
        .labels
        .chunks(subset_size.max(1))
        .map(|chunk| {
            let mut subset = chunk.to_vec();
            subset.push(space.nota.clone());
            subset
        })
        .collect()
}

/// Outcome of classifying one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    /// Predicted labels in label-space order; may be empty.
    pub labels: Vec<String>,
    /// Response fragments that matched no option.
    pub unmatched_fragments: usize,
    /// Runoff rounds consumed resolving a single-label conflict.
    pub runoff_rounds_used: usize,
}

fn query_subsets(
    subsets: &[Vec<String>],
    max_tokens: usize,
    backend: &dyn OracleBackend,
    render: &mut dyn FnMut(&[String]) -> Result<String>,
) -> Result<(BTreeSet<String>, usize)> {
    let mut merged: BTreeSet<String> = BTreeSet::new();
    let mut unmatched = 0;
    for (i, subset) in subsets.iter().enumerate() {
        let prompt = render(subset)?;
        let response = backend
            .complete(&prompt, max_tokens)
            .map_err(|e| Error::SubsetFailed {
                failed: i,
                completed: i,
                total: subsets.len(),
                message: e.to_string(),
            })?;
        let parsed = parse_multilabel(&response, subset);
        unmatched += parsed.unmatched;
        merged.extend(parsed.labels);
    }
    Ok((merged, unmatched))
}

/// Classify one instance by querying every candidate subset and merging the
/// answers. The prediction is the union of parsed labels with
/// none-of-the-above removed; an empty set is a legal prediction.
///
/// Single-label tasks with more than one survivor are re-chunked and
/// re-queried up to `runoff_rounds` times, then the first survivor in label
/// order wins. A backend failure on any subset aborts the merge.
pub fn classify_instance(
    instance: &TaskInstance,
    space: &LabelSpace,
    cfg: &ClassifyConfig,
    backend: &dyn OracleBackend,
    mut render: impl FnMut(&[String]) -> Result<String>,
) -> Result<Classification> {
    if !instance.task.is_classification() {
        return Err(Error::InvalidInstance {
            instance: instance.effective_id(0),
            message: format!("{} is not a classification task", instance.task),
        });
    }
    cfg.validate()?;
    let max_tokens = max_generation_tokens(instance.task);

    let subsets = divide_labels(space, cfg.subset_size);
    let (mut merged, mut unmatched) = query_subsets(&subsets, max_tokens, backend, &mut render)?;
    merged.remove(space.nota());

    let mut rounds_used = 0;
    if instance.task.is_single_label() {
        while merged.len() > 1 && rounds_used < cfg.runoff_rounds {
            rounds_used += 1;
            let survivors: Vec<String> = space
                .labels
                .iter()
                .filter(|l| merged.contains(*l))
                .cloned()
                .collect();
            let runoff_space = LabelSpace::with_nota(survivors, space.nota())?;
            let runoff_subsets = divide_labels(&runoff_space, cfg.subset_size);
            let (survived, extra) =
                query_subsets(&runoff_subsets, max_tokens, backend, &mut render)?;
            unmatched += extra;
            merged = survived;
            merged.remove(space.nota());
        }
        if merged.len() > 1 {
            // tie-break: first survivor in label order
            let first = space
                .labels
                .iter()
                .find(|l| merged.contains(*l))
                .cloned()
                .expect("survivors come from the space");
            merged = BTreeSet::from([first]);
        }
    }

    let labels: Vec<String> = space
        .labels
        .iter()
        .filter(|l| merged.contains(*l))
        .cloned()
        .collect();
    Ok(Classification {
        labels,
        unmatched_fragments: unmatched,
        runoff_rounds_used: rounds_used,
    })
}

/// Training records built for a batch of instances, with sampling warnings.
#[derive(Debug)]
pub struct TrainingBuild {
    pub records: Vec<PromptRecord>,
    pub warnings: Vec<String>,
}

/// Build Pos/Neg training records for classification instances.
///
/// Per instance: every subset containing a gold label yields a Pos record
/// answered with the golds present in that subset; Neg subsets are sampled
/// without replacement at `pos_neg_ratio` negatives per Pos record and
/// answered with none-of-the-above. Record order is deterministic under a
/// fixed seed; when the ratio demands more negatives than exist, all
/// available are taken with a warning.
pub fn build_cls_training(
    instances: &[TaskInstance],
    space: &LabelSpace,
    cfg: &ClassifyConfig,
    mut render: impl FnMut(&TaskInstance, &[String]) -> Result<PromptRecord>,
) -> Result<TrainingBuild> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut build = TrainingBuild {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    for instance in instances {
        build_instance_records(instance, space, cfg, &mut rng, &mut render, &mut build)?;
    }
    Ok(build)
}

fn build_instance_records(
    instance: &TaskInstance,
    space: &LabelSpace,
    cfg: &ClassifyConfig,
    rng: &mut SplitMix64,
    render: &mut dyn FnMut(&TaskInstance, &[String]) -> Result<PromptRecord>,
    build: &mut TrainingBuild,
) -> Result<()> {
    let gold: BTreeSet<&String> = instance.gold.iter().collect();
    if !instance.gold.iter().any(|g| space.labels.contains(g)) {
        return Err(Error::InvalidInstance {
            instance: instance.effective_id(0),
            message: "no gold label is present in the label space".into(),
        });
    }

    let subsets = divide_labels(space, cfg.subset_size);
    let mut pos_indices = Vec::new();
    let mut neg_indices = Vec::new();
    for (i, subset) in subsets.iter().enumerate() {
        // last slot is always the none-of-the-above option, never gold
        let labels_only = &subset[..subset.len() - 1];
        if labels_only.iter().any(|l| gold.contains(l)) {
            pos_indices.push(i);
        } else {
            neg_indices.push(i);
        }
    }

    for &i in &pos_indices {
        let mut record = render(instance, &subsets[i])?;
        let answers: Vec<String> = subsets[i][..subsets[i].len() - 1]
            .iter()
            .filter(|l| gold.contains(*l))
            .map(|l| format_label(instance.task, l))
            .collect();
        record.response = response_sentence(&answers);
        build.records.push(record);
    }

    let (pos_share, neg_share) = cfg.pos_neg_ratio;
    let wanted = pos_indices.len() * (neg_share as usize) / (pos_share as usize);
    if wanted > neg_indices.len() {
        build.warnings.push(format!(
            "instance {}: ratio asks for {wanted} negative subsets, only {} exist",
            instance.effective_id(0),
            neg_indices.len()
        ));
    }
    let take = wanted.min(neg_indices.len());
    let picked = rng.sample_indices(neg_indices.len(), take);
    for p in picked {
        let i = neg_indices[p];
        let mut record = render(instance, &subsets[i])?;
        record.response = response_sentence(&[space.nota().to_string()]);
        build.records.push(record);
    }
    Ok(())
}
