//! The model backend contract, mock oracles for testing, and the parsers
//! that turn free-text model output back into structured predictions.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Contract through which the orchestrators consult a model.
///
/// Implementations must be shareable across concurrent calls. `rank` must
/// return each input item exactly once.
pub trait OracleBackend: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String>;
    fn rank(&self, items: &[String], context: &str) -> Result<Vec<String>>;
}

impl<T: OracleBackend + ?Sized> OracleBackend for std::sync::Arc<T> {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        (**self).complete(prompt, max_tokens)
    }

    fn rank(&self, items: &[String], context: &str) -> Result<Vec<String>> {
        (**self).rank(items, context)
    }
}

/// Labels recovered from a multi-choice response, plus the count of
/// fragments that matched nothing.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct ParsedLabels {
    pub labels: BTreeSet<String>,
    pub unmatched: usize,
}

fn normalize_fragment(fragment: &str) -> &str {
    let mut s = fragment.trim();
    s = s.strip_suffix('.').unwrap_or(s).trim();
    if let Some(inner) = s.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
        s = inner.trim();
    }
    s
}

/// Parse a multi-label response against the candidate options.
///
/// Splits on commas, trims whitespace, one trailing period, and one pair of
/// angle brackets, then matches case-insensitively against `options`.
/// Unmatched fragments are dropped and tallied, never errors. A response
/// that matches one option in full is taken whole, so options containing
/// commas survive.
pub fn parse_multilabel(response: &str, options: &[String]) -> ParsedLabels {
    let lookup: HashMap<String, &String> = options.iter().map(|o| (o.to_lowercase(), o)).collect();

    let whole = normalize_fragment(response).to_lowercase();
    if let Some(option) = lookup.get(&whole) {
        return ParsedLabels {
            labels: BTreeSet::from([(*option).clone()]),
            unmatched: 0,
        };
    }

    let mut parsed = ParsedLabels::default();
    if response.trim().is_empty() {
        return parsed;
    }
    for fragment in response.split(',') {
        let cleaned = normalize_fragment(fragment);
        if cleaned.is_empty() {
            continue;
        }
        match lookup.get(&cleaned.to_lowercase()) {
            Some(option) => {
                parsed.labels.insert((*option).clone());
            }
            None => parsed.unmatched += 1,
        }
    }
    parsed
}

fn normalize_item(item: &str) -> String {
    item.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Parse a ranked-list response into a full permutation of `candidates`.
///
/// `<...>` spans are extracted in order and matched case-insensitively with
/// whitespace normalized; duplicates keep their first occurrence and every
/// unmentioned candidate is appended in original order, so the output is
/// always a permutation.
pub fn parse_ranked_list(response: &str, candidates: &[String]) -> Vec<String> {
    let positions: HashMap<String, usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (normalize_item(c), i))
        .collect();

    let mut mentioned: Vec<usize> = Vec::new();
    let mut seen = vec![false; candidates.len()];
    let mut rest = response;
    while let Some(open) = rest.find('<') {
        let Some(close) = rest[open + 1..].find('>') else {
            break;
        };
        let span = &rest[open + 1..open + 1 + close];
        if let Some(&idx) = positions.get(&normalize_item(span)) {
            if !seen[idx] {
                seen[idx] = true;
                mentioned.push(idx);
            }
        }
        rest = &rest[open + 1 + close + 1..];
    }

    let mut order: Vec<String> = mentioned.iter().map(|&i| candidates[i].clone()).collect();
    for (i, candidate) in candidates.iter().enumerate() {
        if !seen[i] {
            order.push(candidate.clone());
        }
    }
    order
}

/// Rank `items` by descending relevance score (stable on ties), then swap
/// each adjacent pair independently with probability `noise` using a stream
/// seeded with `seed`.
pub fn mock_rank(
    items: &[String],
    relevance: &HashMap<String, f64>,
    noise: f64,
    seed: u64,
) -> Result<Vec<String>> {
    let mut rng = SplitMix64::new(seed);
    mock_rank_with(items, relevance, noise, &mut rng)
}

fn mock_rank_with(
    items: &[String],
    relevance: &HashMap<String, f64>,
    noise: f64,
    rng: &mut SplitMix64,
) -> Result<Vec<String>> {
    let mut scored: Vec<(&String, f64)> = Vec::with_capacity(items.len());
    for item in items {
        let score = *relevance
            .get(item)
            .ok_or_else(|| Error::MissingScore(item.clone()))?;
        scored.push((item, score));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranked: Vec<String> = scored.into_iter().map(|(i, _)| i.clone()).collect();
    if noise > 0.0 {
        for i in 0..ranked.len().saturating_sub(1) {
            if rng.next_f64() < noise {
                ranked.swap(i, i + 1);
            }
        }
    }
    Ok(ranked)
}

/// How a mock answers `complete` calls.
#[derive(Debug)]
pub enum MockCompletion {
    /// Echo the gold labels found among the prompt's candidates; answer the
    /// none-of-the-above token when none are present.
    EchoGold(BTreeSet<String>),
    /// The same response for every call.
    Fixed(String),
    /// Canned responses consumed in call order.
    Script(Mutex<VecDeque<String>>),
    /// Fail every call, as an unreachable backend would.
    Fail,
}

/// Deterministic oracle for tests and dry runs. With `noise` 0 its behavior
/// is perfect: ranking follows the relevance scores exactly and completions
/// echo gold labels.
#[derive(Debug)]
pub struct MockOracle {
    relevance: HashMap<String, f64>,
    noise: f64,
    rng: Mutex<SplitMix64>,
    completion: MockCompletion,
    nota: String,
}

/// Marker a gold-echoing mock scans for to locate the candidate section.
const CANDIDATE_MARKER: &str = "candidates are: ";

impl MockOracle {
    pub const DEFAULT_NOTA: &'static str = "none of the above";

    pub fn new(
        relevance: HashMap<String, f64>,
        noise: f64,
        seed: u64,
        completion: MockCompletion,
    ) -> Self {
        MockOracle {
            relevance,
            noise,
            rng: Mutex::new(SplitMix64::new(seed)),
            completion,
            nota: Self::DEFAULT_NOTA.to_string(),
        }
    }

    /// Noise-free ranker over the given scores.
    pub fn perfect_ranker(relevance: HashMap<String, f64>) -> Self {
        Self::new(relevance, 0.0, 0, MockCompletion::Fail)
    }

    /// Ranker that swaps adjacent pairs with probability `noise`.
    pub fn noisy_ranker(relevance: HashMap<String, f64>, noise: f64, seed: u64) -> Self {
        Self::new(relevance, noise, seed, MockCompletion::Fail)
    }

    /// Completion mock that answers with the gold labels present in each
    /// prompt's candidate section.
    pub fn gold_echo(gold: impl IntoIterator<Item = String>) -> Self {
        Self::new(
            HashMap::new(),
            0.0,
            0,
            MockCompletion::EchoGold(gold.into_iter().collect()),
        )
    }

    /// Completion mock that answers none-of-the-above to everything.
    pub fn all_nota() -> Self {
        Self::gold_echo(std::iter::empty())
    }

    pub fn fixed(response: impl Into<String>) -> Self {
        Self::new(
            HashMap::new(),
            0.0,
            0,
            MockCompletion::Fixed(response.into()),
        )
    }

    pub fn scripted(responses: impl IntoIterator<Item = String>) -> Self {
        Self::new(
            HashMap::new(),
            0.0,
            0,
            MockCompletion::Script(Mutex::new(responses.into_iter().collect())),
        )
    }

    pub fn with_nota(mut self, nota: impl Into<String>) -> Self {
        self.nota = nota.into();
        self
    }
}

impl OracleBackend for MockOracle {
    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String> {
        match &self.completion {
            MockCompletion::EchoGold(gold) => {
                // only look at the candidate section so gold labels in the
                // table content cannot leak into the answer
                let section = prompt
                    .rfind(CANDIDATE_MARKER)
                    .map(|i| &prompt[i + CANDIDATE_MARKER.len()..])
                    .unwrap_or(prompt);
                let present: Vec<String> = gold
                    .iter()
                    .filter(|g| section.contains(g.as_str()))
                    .cloned()
                    .collect();
                if present.is_empty() {
                    Ok(format!("{}.", self.nota))
                } else {
                    Ok(format!("{}.", present.join(", ")))
                }
            }
            MockCompletion::Fixed(response) => Ok(response.clone()),
            MockCompletion::Script(responses) => {
                responses
                    .lock()
                    .unwrap()
                    .pop_front()
                    .ok_or_else(|| Error::Backend {
                        message: "scripted mock ran out of responses".into(),
                        status: None,
                    })
            }
            MockCompletion::Fail => Err(Error::Backend {
                message: "mock backend configured to fail".into(),
                status: None,
            }),
        }
    }

    fn rank(&self, items: &[String], _context: &str) -> Result<Vec<String>> {
        let mut rng = self.rng.lock().unwrap();
        mock_rank_with(items, &self.relevance, self.noise, &mut rng)
    }
}
