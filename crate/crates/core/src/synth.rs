//! Synthetic generation logs with known answer distributions.
//!
//! Each query gets a categorical distribution over `1 + distractor_count`
//! candidate answers. Candidate 0 carries mass `π` drawn from the difficulty
//! distribution; the remaining `1 − π` is split over distractors by
//! stick-breaking with uniform breaks, the last distractor taking the rest.
//! Which candidate is gold depends on [`TruthModel`].
//!
//! Per-sample signals are functions of `m`, the mass of the sample's own answer:
//!
//! * embedding: `signal_strength · (2m − 1) · u + N(0, noise_scale²)` per
//!   dimension, with `u` a fixed unit direction drawn once per dataset;
//! * token log-probabilities: geometric mean `0.9 + 0.09·m`, jittered by a
//!   log-normal factor with σ = 0.7 on the log-probability, then spread over
//!   8–24 tokens with uniform weights renormalized to mean 1;
//! * answer-span log-probabilities: same scheme around `0.55 + 0.4·m` over
//!   1–4 tokens;
//! * verbalized confidence: `0.65 + 0.3·m + N(0, 0.1²)`, clamped and rounded
//!   to two decimals, omitted at `verbal_failure_rate`.
//!
//! The token-probability links squeeze every answer into a narrow high band,
//! which makes those baselines informative in rank but overconfident.
//!
//! The question embedding encodes the modal mass of the query the same way,
//! scaled by `question_signal_strength`.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::consistency::{is_match, normalize_answer, AnswerKey};
use crate::error::{Error, Result};
use crate::records::{write_jsonl, CorrectnessLabel, GenerationRecord, QueryRecord, SampleSet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Difficulty {
    Beta { alpha: f64, beta: f64 },
    Fixed { pi: f64 },
}

impl Difficulty {
    fn validate(&self) -> Result<()> {
        match *self {
            Difficulty::Beta { alpha, beta } if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() => Ok(()),
            Difficulty::Fixed { pi } if (0.0..=1.0).contains(&pi) => Ok(()),
            other => Err(Error::Config(format!("invalid difficulty {other:?}"))),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Difficulty::Beta { alpha, beta } => Beta::new(alpha, beta).unwrap().sample(rng),
            Difficulty::Fixed { pi } => pi,
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Difficulty::Beta { alpha, beta } => alpha / (alpha + beta),
            Difficulty::Fixed { pi } => pi,
        }
    }
}

/// How the gold answer relates to the answer distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthModel {
    /// Gold is drawn from the answer distribution itself, so every answer is
    /// correct with probability equal to its mass.
    #[default]
    Sampled,
    /// Gold is always candidate 0, so `π` is the gold mass.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGroup {
    pub group: String,
    pub n_queries: usize,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub k: usize,
    pub group: String,
    pub difficulty: Difficulty,
    pub distractor_count: usize,
    pub embedding_dim: usize,
    pub signal_strength: f64,
    pub question_signal_strength: f64,
    pub noise_scale: f64,
    pub truth: TruthModel,
    /// Fraction of samples whose response lacks a boxed answer.
    pub format_failure_rate: f64,
    pub verbal_failure_rate: f64,
    /// Recorded in `sampling_meta` only.
    pub temperature: f64,
    pub group_shift: Option<ShiftGroup>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_queries: 1000,
            k: 20,
            group: "base".into(),
            difficulty: Difficulty::Beta {
                alpha: 4.0,
                beta: 1.0,
            },
            distractor_count: 4,
            embedding_dim: 16,
            signal_strength: 2.0,
            question_signal_strength: 1.0,
            noise_scale: 0.5,
            truth: TruthModel::Sampled,
            format_failure_rate: 0.0,
            verbal_failure_rate: 0.02,
            temperature: 0.7,
            group_shift: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_queries == 0 {
            return fail("n_queries must be positive");
        }
        if self.k == 0 {
            return fail("k must be positive");
        }
        if self.distractor_count == 0 {
            return fail("distractor_count must be positive");
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive");
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("question_signal_strength", self.question_signal_strength),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(&format!("{name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("format_failure_rate", self.format_failure_rate),
            ("verbal_failure_rate", self.verbal_failure_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(&format!("{name} must lie in [0, 1]"));
            }
        }
        self.difficulty.validate()?;
        if let Some(shift) = &self.group_shift {
            if shift.n_queries == 0 {
                return fail("group_shift.n_queries must be positive");
            }
            if shift.group == self.group {
                return fail("group_shift.group must differ from group");
            }
            shift.difficulty.validate()?;
        }
        Ok(())
    }
}

/// Ground truth for one generated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query_id: String,
    /// Mass of the gold answer.
    pub pi: f64,
    pub modal_prob: f64,
    #[serde(skip)]
    pub masses: Vec<f64>,
    #[serde(skip)]
    pub gold_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub queries: Vec<QueryRecord>,
    pub generations: Vec<GenerationRecord>,
    pub labels: Vec<CorrectnessLabel>,
    pub truth: Vec<QueryTruth>,
}

/// Probability that a fresh sample equals the modal-by-mass answer.
///
/// Ties go to the earliest candidate in stick-breaking order (candidate 0 first).
pub fn modal_probability(masses: &[f64]) -> f64 {
    masses
        .iter()
        .copied()
        .fold(None, |best: Option<f64>, m| match best {
            Some(b) if b >= m => Some(b),
            _ => Some(m),
        })
        .unwrap_or(0.0)
}

impl SynthDataset {
    pub fn true_modal_probability(&self, query_id: &str) -> Result<f64> {
        self.truth
            .iter()
            .find(|t| t.query_id == query_id)
            .map(|t| modal_probability(&t.masses))
            .ok_or_else(|| Error::InvalidArgument(format!("query \"{query_id}\" was not generated here")))
    }

    /// Groups generations into one [`SampleSet`] per query, in query order.
    pub fn sample_sets(&self) -> Result<Vec<SampleSet>> {
        let mut by_query: HashMap<&str, Vec<GenerationRecord>> = HashMap::new();
        for g in &self.generations {
            by_query.entry(g.query_id.as_str()).or_default().push(g.clone());
        }
        self.queries
            .iter()
            .map(|q| SampleSet::new(q.clone(), by_query.remove(q.query_id.as_str()).unwrap_or_default()))
            .collect()
    }

    /// Query id to true modal-answer probability.
    pub fn truth_map(&self) -> HashMap<String, f64> {
        self.truth
            .iter()
            .map(|t| (t.query_id.clone(), t.modal_prob))
            .collect()
    }

    /// Mean gold mass and fraction of correct samples.
    pub fn summary(&self) -> (f64, f64) {
        let mean_pi = self.truth.iter().map(|t| t.pi).sum::<f64>() / self.truth.len() as f64;
        let acc = self.labels.iter().map(|l| f64::from(l.z)).sum::<f64>() / self.labels.len() as f64;
        (mean_pi, acc)
    }

    /// Writes `queries.jsonl`, `generations.jsonl`, `labels.jsonl` and `truth.jsonl`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(dir.join("queries.jsonl"), &self.queries)?;
        write_jsonl(dir.join("generations.jsonl"), &self.generations)?;
        write_jsonl(dir.join("labels.jsonl"), &self.labels)?;
        write_jsonl(dir.join("truth.jsonl"), &self.truth)
    }
}

/// Reads a truth sidecar into a map from query id to modal-answer probability.
pub fn load_truth(path: impl AsRef<Path>) -> Result<HashMap<String, f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let t: QueryTruth = serde_json::from_str(line)?;
        if !(0.0..=1.0).contains(&t.modal_prob) {
            return Err(Error::InvalidArgument(format!(
                "truth for \"{}\" has modal_prob {} outside [0, 1]",
                t.query_id, t.modal_prob
            )));
        }
        out.insert(t.query_id, t.modal_prob);
    }
    Ok(out)
}

fn stick_breaking(rng: &mut ChaCha8Rng, remaining: f64, pieces: usize) -> Vec<f64> {
    let mut left = remaining;
    let mut out = Vec::with_capacity(pieces);
    for _ in 0..pieces - 1 {
        let v: f64 = rng.random();
        out.push(left * v);
        left -= left * v;
    }
    out.push(left);
    out
}

const LOGPROB_JITTER: f64 = 0.7;

/// Log-probabilities whose geometric mean is `center` times log-normal jitter.
fn logprobs_around(rng: &mut ChaCha8Rng, center: f64, len: usize) -> Vec<f64> {
    let jitter = Normal::new(0.0, LOGPROB_JITTER).unwrap().sample(rng);
    let mean_lp = center.ln() * f64::exp(jitter);
    let weights: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 2.0).collect();
    let total: f64 = weights.iter().sum::<f64>() / len as f64;
    weights
        .iter()
        .map(|w| (mean_lp * w / total).min(0.0))
        .collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn embed(rng: &mut ChaCha8Rng, u: &[f64], strength: f64, noise: f64, mass: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let phi = 2.0 * mass - 1.0;
    u.iter()
        .map(|ui| strength * phi * ui + noise * normal.sample(rng))
        .collect()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Surface form of candidate `j`; occasional case and spacing variants
/// exercise answer normalization.
fn render_answer(rng: &mut ChaCha8Rng, canonical: &str) -> String {
    match rng.random_range(0..10) {
        0 => canonical.to_uppercase(),
        1 => format!(" {canonical} "),
        _ => canonical.to_string(),
    }
}

struct GroupSpec<'a> {
    tag: &'a str,
    n: usize,
    difficulty: Difficulty,
    id_prefix: &'a str,
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let u = unit_direction(&mut rng, config.embedding_dim);
    let mut out = SynthDataset {
        queries: Vec::new(),
        generations: Vec::new(),
        labels: Vec::new(),
        truth: Vec::new(),
    };
    let mut groups = vec![GroupSpec {
        tag: &config.group,
        n: config.n_queries,
        difficulty: config.difficulty,
        id_prefix: "q",
    }];
    if let Some(shift) = &config.group_shift {
        groups.push(GroupSpec {
            tag: &shift.group,
            n: shift.n_queries,
            difficulty: shift.difficulty,
            id_prefix: "s",
        });
    }
    let verbal_noise = Normal::new(0.0, 0.1).unwrap();
    for spec in &groups {
        let width = spec.n.to_string().len().max(4);
        for qi in 0..spec.n {
            let query_id = format!("{}{:0width$}", spec.id_prefix, qi);
            let pi = spec.difficulty.draw(&mut rng).clamp(0.0, 1.0);
            let mut masses = vec![pi];
            masses.extend(stick_breaking(&mut rng, 1.0 - pi, config.distractor_count));
            let gold_index = match config.truth {
                TruthModel::First => 0,
                TruthModel::Sampled => WeightedIndex::new(&masses).unwrap().sample(&mut rng),
            };
            let base: u32 = rng.random_range(10..100_000);
            let candidates: Vec<String> = (0..masses.len())
                .map(|j| format!("a{}", base + 7 * j as u32))
                .collect();
            let gold = candidates[gold_index].clone();
            let key = AnswerKey::from_gold(std::slice::from_ref(&gold)).unwrap();
            let modal = modal_probability(&masses);

            let qemb = embed(&mut rng, &u, config.question_signal_strength, config.noise_scale, modal);
            out.queries.push(QueryRecord {
                query_id: query_id.clone(),
                text: format!("Synthetic question {query_id}"),
                group: spec.tag.to_string(),
                gold_answers: Some(vec![gold.clone()]),
                question_embedding: Some(qemb),
                extra: Default::default(),
            });

            let sampler = WeightedIndex::new(&masses).unwrap();
            for j in 0..config.k {
                let a = sampler.sample(&mut rng);
                let mass = masses[a];
                let surface = render_answer(&mut rng, &candidates[a]);
                let boxed = rng.random::<f64>() >= config.format_failure_rate;
                let response_text = if boxed {
                    format!("Working through the problem step by step. Final answer: \\boxed{{{surface}}}")
                } else {
                    format!("Working through the problem step by step. I think it is {surface}.")
                };
                let n_tokens = rng.random_range(8..=24);
                let token_logprobs = logprobs_around(&mut rng, 0.9 + 0.09 * mass, n_tokens);
                let n_answer = rng.random_range(1..=4);
                let answer_token_logprobs = logprobs_around(&mut rng, 0.55 + 0.4 * mass, n_answer);
                let embedding = embed(&mut rng, &u, config.signal_strength, config.noise_scale, mass);
                let verbal = (0.65 + 0.3 * mass + verbal_noise.sample(&mut rng)).clamp(0.0, 1.0);
                let verbal_ok = rng.random::<f64>() >= config.verbal_failure_rate;
                let verbal_response = if verbal_ok {
                    format!("The reasoning looks sound.\n\\boxed{{{:.2}}}", round2(verbal))
                } else {
                    "I am fairly sure about this answer.".to_string()
                };
                let z = boxed && is_match(&normalize_answer(&surface), &key);
                out.generations.push(GenerationRecord {
                    query_id: query_id.clone(),
                    sample_index: j as u64,
                    response_text,
                    answer: None,
                    token_logprobs,
                    answer_token_logprobs: Some(answer_token_logprobs),
                    embedding,
                    verbal_response: Some(verbal_response),
                    external_embedding: None,
                    sampling_meta: Some(json!({
                        "temperature": config.temperature,
                        "top_p": 0.95,
                        "top_k": 20,
                        "prompt_id": "synthetic",
                    })),
                    extra: Default::default(),
                });
                out.labels.push(CorrectnessLabel {
                    query_id: query_id.clone(),
                    sample_index: j as u64,
                    z: u8::from(z),
                });
            }
            out.truth.push(QueryTruth {
                query_id,
                pi: masses[gold_index],
                modal_prob: modal,
                masses,
                gold_index,
            });
        }
    }
    Ok(out)
}

/// Mean of the configured difficulty distribution for the base group.
pub fn expected_pi(config: &SynthConfig) -> f64 {
    config.difficulty.mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::test_time_sc;
    use crate::records::{read_generations, read_labels, read_queries, SampleSet};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_queries: 30,
            k: 12,
            seed,
            ..Default::default()
        }
    }

    fn to_sets(ds: &SynthDataset) -> Vec<SampleSet> {
        let q: Vec<String> = ds.queries.iter().map(|q| serde_json::to_string(q).unwrap()).collect();
        let g: Vec<String> = ds.generations.iter().map(|g| serde_json::to_string(g).unwrap()).collect();
        let queries = read_queries(q.join("\n").as_bytes()).unwrap();
        let loaded = read_generations(g.join("\n").as_bytes(), &queries).unwrap();
        assert!(loaded.warnings.is_empty());
        loaded.value
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(5)).unwrap(), generate(&small(5)).unwrap());
        assert_ne!(generate(&small(5)).unwrap(), generate(&small(6)).unwrap());
    }

    #[test]
    fn output_passes_validation_and_labels_recompute() {
        let ds = generate(&small(1)).unwrap();
        let sets = to_sets(&ds);
        let l: Vec<String> = ds.labels.iter().map(|l| serde_json::to_string(l).unwrap()).collect();
        let labels = read_labels(l.join("\n").as_bytes(), &sets).unwrap();
        assert_eq!(labels.coverage, 1.0);
        let idx = labels.index();
        for set in &sets {
            let key = AnswerKey::from_gold(set.query.gold_answers.as_ref().unwrap()).unwrap();
            for s in &set.samples {
                let z = s.canonical_answer().is_some_and(|a| is_match(&a, &key));
                assert_eq!(idx[&(set.query_id(), s.sample_index)], u8::from(z));
            }
        }
    }

    #[test]
    fn pi_one_is_all_gold() {
        let cfg = SynthConfig {
            difficulty: Difficulty::Fixed { pi: 1.0 },
            ..small(2)
        };
        let ds = generate(&cfg).unwrap();
        assert!(ds.labels.iter().all(|l| l.z == 1));
        for set in to_sets(&ds) {
            assert_eq!(test_time_sc(&set).unwrap().1, 1.0);
        }
    }

    #[test]
    fn pi_zero_never_samples_gold() {
        let cfg = SynthConfig {
            difficulty: Difficulty::Fixed { pi: 0.0 },
            truth: TruthModel::First,
            ..small(3)
        };
        let ds = generate(&cfg).unwrap();
        assert!(ds.labels.iter().all(|l| l.z == 0));
    }

    #[test]
    fn modal_probability_examples() {
        assert_eq!(modal_probability(&[0.8, 0.15, 0.05]), 0.8);
        assert_eq!(modal_probability(&[0.5, 0.5, 0.0]), 0.5);
        assert_eq!(modal_probability(&[0.0, 1.0]), 1.0);
    }

    #[test]
    fn unknown_query_rejected() {
        let ds = generate(&small(4)).unwrap();
        assert!(ds.true_modal_probability("nope").is_err());
        let id = ds.queries[0].query_id.clone();
        assert_eq!(ds.true_modal_probability(&id).unwrap(), ds.truth[0].modal_prob);
    }

    #[test]
    fn frequencies_converge_to_masses() {
        let cfg = SynthConfig {
            n_queries: 1,
            k: 10_000,
            embedding_dim: 2,
            seed: 17,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let set = &to_sets(&ds)[0];
        let truth = &ds.truth[0];
        let gold = &ds.queries[0].gold_answers.as_ref().unwrap()[0];
        let base = gold[1..].parse::<usize>().unwrap() - 7 * truth.gold_index;
        let dist = crate::consistency::answer_distribution(set);
        for (j, mass) in truth.masses.iter().enumerate() {
            let p = dist.get(&format!("a{}", base + 7 * j)).copied().unwrap_or(0.0);
            assert!((p - mass).abs() < 0.02, "candidate {j}: {p} vs {mass}");
        }
    }

    #[test]
    fn config_errors() {
        assert!(generate(&SynthConfig { n_queries: 0, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { k: 0, ..Default::default() }).is_err());
        let bad = SynthConfig {
            difficulty: Difficulty::Beta { alpha: -1.0, beta: 1.0 },
            ..Default::default()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn shifted_group_is_tagged() {
        let cfg = SynthConfig {
            group_shift: Some(ShiftGroup {
                group: "hard".into(),
                n_queries: 10,
                difficulty: Difficulty::Beta { alpha: 1.5, beta: 1.5 },
            }),
            ..small(8)
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.queries.len(), 40);
        assert_eq!(ds.queries.iter().filter(|q| q.group == "hard").count(), 10);
    }
}
