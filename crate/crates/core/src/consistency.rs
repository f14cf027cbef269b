//! Answer extraction, self-consistency scores, and proxy-target construction.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{GenerationRecord, SampleSet};
use crate::seed;

const BOXED: &str = "\\boxed{";

/// Contents of every balanced top-level `\boxed{...}` group, in order.
///
/// Returns `None` if any group is left unclosed.
fn boxed_groups(text: &str) -> Option<Vec<&str>> {
    let bytes = text.as_bytes();
    let mut groups = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find(BOXED) {
        let start = pos + off + BOXED.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, &b) in bytes[start..].iter().enumerate() {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let end = end?;
        groups.push(&text[start..end]);
        pos = end + 1;
    }
    Some(groups)
}

/// Content of the last `\boxed{...}` group, nested braces included.
pub fn extract_boxed(response_text: &str) -> Option<String> {
    boxed_groups(response_text)?.last().map(|s| s.to_string())
}

/// All balanced boxed groups, for callers that need more than the last.
pub(crate) fn all_boxed(response_text: &str) -> Vec<String> {
    boxed_groups(response_text)
        .unwrap_or_default()
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Strips edge whitespace and case-folds. Nothing else is touched.
pub fn normalize_answer(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub canonical: String,
    pub aliases: Vec<String>,
}

impl AnswerKey {
    /// Builds a key from gold-answer strings; the first becomes canonical.
    pub fn from_gold(gold: &[String]) -> Option<Self> {
        let mut iter = gold.iter().map(|g| normalize_answer(g));
        let canonical = iter.next().filter(|c| !c.is_empty())?;
        let mut aliases: Vec<String> = iter.filter(|a| *a != canonical).collect();
        aliases.sort();
        aliases.dedup();
        Some(Self { canonical, aliases })
    }
}

pub fn is_match(answer: &str, key: &AnswerKey) -> bool {
    answer == key.canonical || key.aliases.iter().any(|a| a == answer)
}

/// Canonical answers per sample; `None` stands for the per-sample sentinel
/// that matches nothing.
fn canonical_answers(samples: &[&GenerationRecord]) -> Vec<Option<String>> {
    samples.iter().map(|s| s.canonical_answer()).collect()
}

/// Fraction of samples whose canonical answer equals `answer`.
pub fn self_consistency(set: &SampleSet, answer: &str) -> Result<f64> {
    if set.samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let hits = set
        .samples
        .iter()
        .filter(|s| s.canonical_answer().as_deref() == Some(answer))
        .count();
    Ok(hits as f64 / set.k() as f64)
}

/// Canonical answer to `(count, lowest sample_index)`.
fn answer_counts(samples: &[&GenerationRecord]) -> BTreeMap<String, (usize, u64)> {
    let mut counts: BTreeMap<String, (usize, u64)> = BTreeMap::new();
    for (s, a) in samples.iter().zip(canonical_answers(samples)) {
        if let Some(a) = a {
            let e = counts.entry(a).or_insert((0, s.sample_index));
            e.0 += 1;
            e.1 = e.1.min(s.sample_index);
        }
    }
    counts
}

/// Empirical answer distribution of a set; sentinel mass is excluded, so the
/// values sum to the fraction of samples with an extractable answer.
pub fn answer_distribution(set: &SampleSet) -> BTreeMap<String, f64> {
    let refs: Vec<&GenerationRecord> = set.samples.iter().collect();
    let k = refs.len() as f64;
    answer_counts(&refs)
        .into_iter()
        .map(|(a, (c, _))| (a, c as f64 / k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTarget {
    pub query_id: String,
    pub selected_sample_index: u64,
    #[serde(rename = "answer")]
    pub selected_answer: String,
    pub s: f64,
    pub k: usize,
}

fn target_from(query_id: &str, samples: &[&GenerationRecord]) -> Result<ConsistencyTarget> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    // BTreeMap iterates in ascending answer order, so `max_by` keeping the
    // first maximum gives the lexicographically smallest modal answer.
    let counts = answer_counts(samples);
    let (answer, &(count, index)) = counts
        .iter()
        .fold(None, |best: Option<(&String, &(usize, u64))>, cur| match best {
            Some(b) if b.1 .0 >= cur.1 .0 => Some(b),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::NoExtractableAnswer(query_id.to_string()))?;
    Ok(ConsistencyTarget {
        query_id: query_id.to_string(),
        selected_sample_index: index,
        selected_answer: answer.clone(),
        s: count as f64 / samples.len() as f64,
        k: samples.len(),
    })
}

/// Modal answer, its lowest-index representative, and its self-consistency.
///
/// Ties between modal answers go to the lexicographically smallest canonical form.
pub fn build_target(set: &SampleSet) -> Result<ConsistencyTarget> {
    let refs: Vec<&GenerationRecord> = set.samples.iter().collect();
    target_from(set.query_id(), &refs)
}

/// Test-time self-consistency: the modal answer and its empirical mass.
pub fn test_time_sc(set: &SampleSet) -> Result<(String, f64)> {
    let t = build_target(set)?;
    Ok((t.selected_answer, t.s))
}

/// [`build_target`] on `k` samples drawn without replacement from the seeded stream.
pub fn subsample_targets(set: &SampleSet, k: usize, seed: u64) -> Result<ConsistencyTarget> {
    if k == 0 || k > set.k() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            set.k()
        )));
    }
    if k == set.k() {
        return build_target(set);
    }
    let mut rng = seed::rng(seed);
    let picked: Vec<&GenerationRecord> = index::sample(&mut rng, set.k(), k)
        .into_iter()
        .map(|i| &set.samples[i])
        .collect();
    target_from(set.query_id(), &picked)
}
