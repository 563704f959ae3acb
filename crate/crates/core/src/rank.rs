//! Tournament-style ranking of large candidate pools by iterated
//! split-and-merge.
//!
//! Candidates are shuffled and divided into subsets of size `S`. Each layer
//! ranks its nodes, splits every ranking into a red (top) and blue (bottom)
//! half, pairs same-color halves into new full nodes, and recurses on the
//! red lineage before the blue lineage. An odd leftover half is carried to
//! the next layer of its lineage and rejoins the pairing there; a carry left
//! with no node to pair against is appended directly, keeping its parent's
//! internal order. Red-derived material always outranks blue-derived, so
//! with a reliable oracle the true top candidates funnel into the first
//! ranked node of the deepest layer.

use serde::{Deserialize, Serialize};

use crate::backend::OracleBackend;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Knobs for tree ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankConfig {
    /// Candidates per oracle call; must be even so halves pair back into
    /// full-size nodes.
    pub subset_size: usize,
    /// Output positions the caller cares about; the full order is always
    /// produced, this only truncates what gets written out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            subset_size: 20,
            top_k: None,
            seed: 0,
        }
    }
}

impl RankConfig {
    pub fn validate(&self, candidate_count: usize) -> Result<()> {
        if self.subset_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "subset_size must be at least 2, got {}",
                self.subset_size
            )));
        }
        if !self.subset_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "subset_size must be even, got {}",
                self.subset_size
            )));
        }
        if let Some(k) = self.top_k {
            if k > candidate_count {
                return Err(Error::InvalidConfig(format!(
                    "top_k {k} exceeds candidate count {candidate_count}"
                )));
            }
        }
        Ok(())
    }
}

/// Red halves hold the top-ranked elements of a split node, blue halves the
/// bottom-ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeColor {
    Red,
    Blue,
}

/// A node in the ranking tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankNode {
    pub items: Vec<String>,
    pub color: NodeColor,
    pub origin_layer: usize,
}

/// Bookkeeping for one tree-rank run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankStats {
    pub oracle_calls: usize,
    /// Depth of the layer tree: rank calls at the same recursion depth share
    /// a layer.
    pub layers: usize,
    pub shuffle_seed: u64,
}

/// Split a ranked list into its red (first half, rounding up) and blue
/// halves. Red followed by blue reproduces the input.
pub fn split_halves(ranked: &[String]) -> (Vec<String>, Vec<String>) {
    let mid = ranked.len().div_ceil(2);
    (ranked[..mid].to_vec(), ranked[mid..].to_vec())
}

/// Pair same-color halves into full nodes.
///
/// The carry, if any, is appended to the end of the priority-ordered half
/// list first; consecutive pairs concatenate higher-priority half first; an
/// odd leftover becomes the new carry.
pub fn pair_merge(
    halves: Vec<Vec<String>>,
    carry: Option<Vec<String>>,
) -> (Vec<Vec<String>>, Option<Vec<String>>) {
    let mut list = halves;
    if let Some(c) = carry {
        list.push(c);
    }
    let mut fulls = Vec::with_capacity(list.len() / 2);
    let mut new_carry = None;
    let mut iter = list.into_iter();
    while let Some(first) = iter.next() {
        match iter.next() {
            Some(second) => {
                let mut full = first;
                full.extend(second);
                fulls.push(full);
            }
            None => new_carry = Some(first),
        }
    }
    (fulls, new_carry)
}

struct RankRun<'a> {
    oracle: &'a dyn OracleBackend,
    context: &'a str,
    oracle_calls: usize,
    max_layer: usize,
}

impl RankRun<'_> {
    fn checked_rank(
        &mut self,
        items: &[String],
        layer: usize,
        index: usize,
    ) -> Result<Vec<String>> {
        self.oracle_calls += 1;
        self.max_layer = self.max_layer.max(layer);
        let ranked = self.oracle.rank(items, self.context)?;
        let mut got = ranked.clone();
        let mut want = items.to_vec();
        got.sort_unstable();
        want.sort_unstable();
        if got != want {
            return Err(Error::NonPermutation {
                node: format!("layer {layer}, node {}", index + 1),
                detail: format!(
                    "expected a permutation of {} items, got {}",
                    items.len(),
                    ranked.len()
                ),
            });
        }
        Ok(ranked)
    }

    /// Rank one lineage: the priority-ordered `nodes` of a layer plus an
    /// optional carried half of this lineage's color.
    fn rank_lineage(
        &mut self,
        nodes: Vec<Vec<String>>,
        carry: Option<Vec<String>>,
        layer: usize,
        color: NodeColor,
    ) -> Result<Vec<String>> {
        if nodes.is_empty() {
            // a carry with nothing left to pair against keeps the order it
            // had inside its parent's ranking
            return Ok(carry.unwrap_or_default());
        }
        let ranked: Vec<Vec<String>> = nodes
            .iter()
            .enumerate()
            .map(|(i, node)| self.checked_rank(node, layer, i))
            .collect::<Result<_>>()?;
        if ranked.len() == 1 && carry.is_none() {
            return Ok(ranked.into_iter().next().unwrap());
        }

        let mut reds = Vec::with_capacity(ranked.len());
        let mut blues = Vec::new();
        for node in &ranked {
            let (red, blue) = split_halves(node);
            reds.push(red);
            if !blue.is_empty() {
                blues.push(blue);
            }
        }

        // the carried half rejoins the pairing of its own color
        let (red_carry_in, blue_carry_in) = match color {
            NodeColor::Red => (carry, None),
            NodeColor::Blue => (None, carry),
        };
        let (red_fulls, red_carry) = pair_merge(reds, red_carry_in);
        let (blue_fulls, blue_carry) = pair_merge(blues, blue_carry_in);

        let mut result = self.rank_lineage(red_fulls, red_carry, layer + 1, NodeColor::Red)?;
        result.extend(self.rank_lineage(blue_fulls, blue_carry, layer + 1, NodeColor::Blue)?);
        Ok(result)
    }
}

/// Produce a total order over `candidates` using at most `subset_size`
/// candidates per oracle call.
///
/// `context` is handed to every `rank` call so text backends can build the
/// per-node prompt. Duplicates among the candidates are rejected; the output
/// is always a permutation of the input.
pub fn tree_rank(
    candidates: &[String],
    cfg: &RankConfig,
    oracle: &dyn OracleBackend,
    context: &str,
) -> Result<(Vec<String>, RankStats)> {
    cfg.validate(candidates.len())?;
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidates to rank".into()));
    }
    {
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        if let Some(dup) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateCandidate(dup[0].clone()));
        }
    }

    let mut run = RankRun {
        oracle,
        context,
        oracle_calls: 0,
        max_layer: 0,
    };

    let ranking = if candidates.len() <= cfg.subset_size {
        run.checked_rank(candidates, 1, 0)?
    } else {
        let mut shuffled = candidates.to_vec();
        SplitMix64::new(cfg.seed).shuffle(&mut shuffled);
        let subsets: Vec<Vec<String>> = shuffled
            .chunks(cfg.subset_size)
            .map(<[String]>::to_vec)
            .collect();
        run.rank_lineage(subsets, None, 1, NodeColor::Red)?
    };

    Ok((
        ranking,
        RankStats {
            oracle_calls: run.oracle_calls,
            layers: run.max_layer,
            shuffle_seed: cfg.seed,
        },
    ))
}
