//! Evaluation protocols: repeated calibration/test splits, distribution-shift
//! runs between query groups, and selective prediction.
//!
//! Every query contributes one scored response, the representative of its
//! modal answer. All methods score that same response, so they share one
//! correctness label per query.

use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    answer_prob_score, apply_platt, fit_platt, impute_verbal, parse_verbal_confidence,
    token_prob_score,
};
use crate::calibrator::{fit_pipeline, CalibratorModel, FeatureSource, FitOptions};
use crate::consistency::{build_target, is_match, subsample_targets, AnswerKey, ConsistencyTarget};
use crate::error::{Error, Result};
use crate::metrics::{self, BinStat, MetricReport};
use crate::records::{LabelSet, SampleSet};
use crate::seed;

pub const REPORT_FORMAT: &str = "conscal-report/1";
pub const DEFAULT_RATES: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The unsupervised calibrator.
    Ours,
    TokenProbs,
    AnswerProbs,
    VerbalConf,
    /// Platt scaling of token probabilities on calibration-side labels.
    Supervised,
    /// Modal-answer frequency over all samples.
    TtSc,
    /// True modal-answer probability from a synthetic truth file.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ours,
        Method::TokenProbs,
        Method::AnswerProbs,
        Method::VerbalConf,
        Method::Supervised,
        Method::TtSc,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::TokenProbs => "token_probs",
            Method::AnswerProbs => "answer_probs",
            Method::VerbalConf => "verbal_conf",
            Method::Supervised => "supervised",
            Method::TtSc => "tt_sc",
            Method::Oracle => "oracle",
        }
    }

    /// Usable with neither labels nor extra samples at test time.
    pub fn is_unsupervised(self) -> bool {
        matches!(
            self,
            Method::Ours | Method::TokenProbs | Method::AnswerProbs | Method::VerbalConf
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "ours" => Method::Ours,
            "token_probs" | "tp" => Method::TokenProbs,
            "answer_probs" | "ans_tp" => Method::AnswerProbs,
            "verbal_conf" | "verbal" | "vc" => Method::VerbalConf,
            "supervised" | "sup" => Method::Supervised,
            "tt_sc" | "ttsc" => Method::TtSc,
            "oracle" => Method::Oracle,
            other => return Err(Error::Config(format!("unknown method \"{other}\""))),
        })
    }
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Ours,
        Method::TokenProbs,
        Method::AnswerProbs,
        Method::VerbalConf,
        Method::Supervised,
        Method::TtSc,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub n_trials: usize,
    pub cal_fraction: f64,
    pub master_seed: u64,
    pub bins: usize,
    pub methods: Vec<Method>,
    pub feature_source: FeatureSource,
    /// Subsample this many generations per calibration query when building targets.
    pub k_subsample: Option<usize>,
    pub alpha: f64,
    /// Isotonic share of the calibration rows.
    pub split_frac: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            n_trials: 200,
            cal_fraction: 0.4,
            master_seed: 0,
            bins: metrics::DEFAULT_BINS,
            methods: default_methods(),
            feature_source: FeatureSource::ResponseEmbedding,
            k_subsample: None,
            alpha: 1.0,
            split_frac: 0.5,
        }
    }
}

impl TrialConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        let distinct: BTreeSet<Method> = self.methods.iter().copied().collect();
        if distinct.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if self.k_subsample == Some(0) {
            return Err(Error::Config("k_subsample must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluable query.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub query_id: String,
    pub group: String,
    /// Index into [`EvalDataset::sets`].
    pub set: usize,
    pub target: ConsistencyTarget,
    /// Correctness of the representative response, when known.
    pub z: Option<u8>,
    pub token_prob: f64,
    pub answer_prob: Option<f64>,
    pub verbal: Option<f64>,
    pub oracle: Option<f64>,
}

/// Sample sets reduced to one scored response each, ordered by query id.
#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub sets: Vec<SampleSet>,
    pub items: Vec<EvalItem>,
    pub warnings: Vec<String>,
}

impl EvalDataset {
    /// Builds items from loaded sets.
    ///
    /// Correctness comes from `labels` when it covers the representative
    /// response, otherwise from the query's gold answers. `truth` maps query
    /// ids to true modal probabilities for [`Method::Oracle`].
    pub fn build(
        sets: Vec<SampleSet>,
        labels: Option<&LabelSet>,
        truth: Option<&HashMap<String, f64>>,
    ) -> Result<Self> {
        let label_index = labels.map(LabelSet::index);
        let mut items = Vec::with_capacity(sets.len());
        let mut warnings = Vec::new();
        for (i, set) in sets.iter().enumerate() {
            let target = match build_target(set) {
                Ok(t) => t,
                Err(Error::NoExtractableAnswer(q)) => {
                    warnings.push(format!("query \"{q}\" has no extractable answer; skipped"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let rep = set
                .sample(target.selected_sample_index)
                .expect("target index comes from the set");
            let from_labels = label_index
                .as_ref()
                .and_then(|idx| idx.get(&(set.query_id(), rep.sample_index)).copied());
            let from_gold = set
                .query
                .gold_answers
                .as_deref()
                .and_then(AnswerKey::from_gold)
                .map(|key| u8::from(is_match(&target.selected_answer, &key)));
            items.push(EvalItem {
                query_id: set.query_id().to_string(),
                group: set.query.group.clone(),
                set: i,
                z: from_labels.or(from_gold),
                token_prob: token_prob_score(&rep.token_logprobs)?,
                answer_prob: rep
                    .answer_token_logprobs
                    .as_deref()
                    .map(|a| answer_prob_score(Some(a)))
                    .transpose()?,
                verbal: rep.verbal_response.as_deref().and_then(parse_verbal_confidence),
                oracle: truth.and_then(|t| t.get(set.query_id()).copied()),
                target,
            });
        }
        items.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        Ok(Self {
            sets,
            items,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.group.as_str()).collect()
    }

    /// Feature vector of a sample for the given source.
    fn feature_of(&self, item: &EvalItem, sample_index: u64, source: FeatureSource) -> Result<Vec<f64>> {
        let set = &self.sets[item.set];
        let sample = set.sample(sample_index).expect("sample index comes from the set");
        let missing = |what: &str| {
            Error::Config(format!("query \"{}\" has no {what}", item.query_id))
        };
        match source {
            FeatureSource::ResponseEmbedding => Ok(sample.embedding.clone()),
            FeatureSource::QuestionEmbedding => set
                .query
                .question_embedding
                .clone()
                .ok_or_else(|| missing("question_embedding")),
            FeatureSource::ExternalEmbedding => sample
                .external_embedding
                .clone()
                .ok_or_else(|| missing("external_embedding")),
        }
    }

    fn labels_of(&self, idx: &[usize]) -> Result<Vec<u8>> {
        idx.iter()
            .map(|&i| {
                let item = &self.items[i];
                item.z.ok_or_else(|| {
                    Error::Config(format!(
                        "query \"{}\" has neither a label nor gold answers",
                        item.query_id
                    ))
                })
            })
            .collect()
    }
}

/// Seeded calibration/test partition; calibration takes `floor(cal_fraction · n)`.
pub fn split_cal_test(n: usize, cal_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(cal_fraction > 0.0 && cal_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cal_fraction must lie in (0, 1), got {cal_fraction}"
        )));
    }
    if n < 5 {
        return Err(Error::InsufficientData(format!("cannot split {n} items")));
    }
    let n_cal = (cal_fraction * n as f64 + 1e-9).floor() as usize;
    let n_test = n - n_cal;
    if n_cal < 2 || n_test < 2 {
        return Err(Error::InsufficientData(format!(
            "split of {n} at {cal_fraction} gives {n_cal}/{n_test}; each side needs at least 2"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let cal = idx[..n_cal].to_vec();
    let test = idx[n_cal..].to_vec();
    Ok((cal, test))
}

/// Confidences of every requested method on one test side.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScores {
    pub trial: usize,
    pub seed: u64,
    /// Item indices, ascending (query-id order).
    pub test_items: Vec<usize>,
    pub labels: Vec<u8>,
    pub confidences: Vec<(Method, Vec<f64>)>,
}

fn train_calibrator(
    ds: &EvalDataset,
    cal: &[usize],
    cfg: &TrialConfig,
    trial_seed: u64,
) -> Result<CalibratorModel> {
    let mut features = Vec::with_capacity(cal.len());
    let mut targets = Vec::with_capacity(cal.len());
    for &i in cal {
        let item = &ds.items[i];
        let target = match cfg.k_subsample {
            Some(k) => {
                let set = &ds.sets[item.set];
                if k > set.k() {
                    return Err(Error::Config(format!(
                        "k_subsample = {k} exceeds the {} samples of query \"{}\"",
                        set.k(),
                        item.query_id
                    )));
                }
                match subsample_targets(set, k, seed::for_key(trial_seed, &item.query_id)) {
                    Ok(t) => t,
                    // A subsample may contain only unextractable answers.
                    Err(Error::NoExtractableAnswer(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            None => item.target.clone(),
        };
        features.push(ds.feature_of(item, target.selected_sample_index, cfg.feature_source)?);
        targets.push(target.s);
    }
    let opts = FitOptions {
        split_frac: cfg.split_frac,
        alpha: cfg.alpha,
        seed: seed::mix(trial_seed, 1),
        feature_source: cfg.feature_source,
    };
    fit_pipeline(&features, &targets, &opts)
}

fn score_split(
    ds: &EvalDataset,
    cal: &[usize],
    test: &[usize],
    cfg: &TrialConfig,
    trial: usize,
    trial_seed: u64,
) -> Result<TrialScores> {
    let mut test_items = test.to_vec();
    test_items.sort_unstable();
    let labels = ds.labels_of(&test_items)?;
    let mut confidences = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let scores: Vec<f64> = match method {
            Method::Ours => {
                let model = train_calibrator(ds, cal, cfg, trial_seed)?;
                test_items
                    .iter()
                    .map(|&i| {
                        let item = &ds.items[i];
                        let f = ds.feature_of(item, item.target.selected_sample_index, cfg.feature_source)?;
                        model.predict(&f)
                    })
                    .collect::<Result<_>>()?
            }
            Method::TokenProbs => test_items.iter().map(|&i| ds.items[i].token_prob).collect(),
            Method::AnswerProbs => test_items
                .iter()
                .map(|&i| {
                    let item = &ds.items[i];
                    item.answer_prob.ok_or_else(|| {
                        Error::Config(format!(
                            "query \"{}\" lacks answer_token_logprobs",
                            item.query_id
                        ))
                    })
                })
                .collect::<Result<_>>()?,
            Method::VerbalConf => {
                let raw: Vec<Option<f64>> = test_items.iter().map(|&i| ds.items[i].verbal).collect();
                impute_verbal(&raw).into_iter().map(|(v, _)| v).collect()
            }
            Method::Supervised => {
                let cal_scores: Vec<f64> = cal.iter().map(|&i| ds.items[i].token_prob).collect();
                let cal_labels = ds.labels_of(cal)?;
                let platt = fit_platt(&cal_scores, &cal_labels)?;
                test_items
                    .iter()
                    .map(|&i| apply_platt(&platt, ds.items[i].token_prob))
                    .collect()
            }
            Method::TtSc => test_items.iter().map(|&i| ds.items[i].target.s).collect(),
            Method::Oracle => test_items
                .iter()
                .map(|&i| {
                    let item = &ds.items[i];
                    item.oracle.ok_or_else(|| {
                        Error::Config(format!("no truth value for query \"{}\"", item.query_id))
                    })
                })
                .collect::<Result<_>>()?,
        };
        confidences.push((method, scores));
    }
    Ok(TrialScores {
        trial,
        seed: trial_seed,
        test_items,
        labels,
        confidences,
    })
}

/// Scalar metrics of one method in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub ece1: f64,
    pub ece2: f64,
    pub mce: f64,
    pub brier: f64,
    pub auroc: Option<f64>,
    pub n: usize,
}

/// Trial-averaged metrics plus reliability data pooled over all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub ece1: f64,
    pub ece2: f64,
    pub mce: f64,
    pub brier: f64,
    /// Mean over trials where it is defined.
    pub auroc: Option<f64>,
    /// Mean test-set size.
    pub n: f64,
    pub n_trials: usize,
    pub reliability: Vec<BinStat>,
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    /// Effective configuration, filled in by the caller.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_groups: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_groups: Option<Vec<String>>,
    pub methods: Vec<MethodSummary>,
    pub trials: Vec<TrialMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selective: Option<Vec<MethodCurve>>,
}

impl Report {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// One line per trial, method and metric: `trial,seed,method,metric,value`.
    pub fn trial_table(&self) -> String {
        let mut out = String::from("trial,seed,method,metric,value\n");
        for t in &self.trials {
            let mut row = |metric: &str, v: Option<f64>| {
                let v = v.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{metric},{v}\n", t.trial, t.seed, t.method));
            };
            row("ece1", Some(t.ece1));
            row("ece2", Some(t.ece2));
            row("mce", Some(t.mce));
            row("brier", Some(t.brier));
            row("auroc", t.auroc);
            row("n", Some(t.n as f64));
        }
        out
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn summarize(cfg: &TrialConfig, trials: &[TrialScores]) -> Result<(Vec<MethodSummary>, Vec<TrialMetrics>)> {
    let mut per_trial = Vec::new();
    for t in trials {
        for (method, conf) in &t.confidences {
            let r: MetricReport = metrics::evaluate(conf, &t.labels, cfg.bins)?;
            per_trial.push(TrialMetrics {
                trial: t.trial,
                seed: t.seed,
                method: *method,
                ece1: r.ece1,
                ece2: r.ece2,
                mce: r.mce,
                brier: r.brier,
                auroc: r.auroc,
                n: r.n,
            });
        }
    }
    let mut summaries = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let rows: Vec<&TrialMetrics> = per_trial.iter().filter(|r| r.method == method).collect();
        let pooled_conf: Vec<f64> = trials
            .iter()
            .flat_map(|t| t.confidences[mi].1.iter().copied())
            .collect();
        let pooled_z: Vec<u8> = trials.iter().flat_map(|t| t.labels.iter().copied()).collect();
        let (reliability, histogram) = metrics::reliability_data(&pooled_conf, &pooled_z, cfg.bins)?;
        summaries.push(MethodSummary {
            method,
            ece1: mean(rows.iter().map(|r| r.ece1)).unwrap_or(f64::NAN),
            ece2: mean(rows.iter().map(|r| r.ece2)).unwrap_or(f64::NAN),
            mce: mean(rows.iter().map(|r| r.mce)).unwrap_or(f64::NAN),
            brier: mean(rows.iter().map(|r| r.brier)).unwrap_or(f64::NAN),
            auroc: mean(rows.iter().filter_map(|r| r.auroc)),
            n: mean(rows.iter().map(|r| r.n as f64)).unwrap_or(0.0),
            n_trials: rows.len(),
            reliability,
            histogram,
        });
    }
    Ok((summaries, per_trial))
}

fn check_methods(ds: &EvalDataset, cfg: &TrialConfig) -> Result<()> {
    if ds.items.iter().any(|i| i.z.is_none()) {
        let q = &ds.items.iter().find(|i| i.z.is_none()).unwrap().query_id;
        return Err(Error::Config(format!(
            "evaluation needs labels or gold answers; query \"{q}\" has neither"
        )));
    }
    if cfg.methods.contains(&Method::Oracle) && ds.items.iter().any(|i| i.oracle.is_none()) {
        return Err(Error::Config("oracle method requested without a truth file".into()));
    }
    Ok(())
}

/// Per-trial scores for the repeated-split protocol. Trial `t` uses seed
/// `seed::mix(master_seed, t)`; trials run in parallel.
pub fn trial_scores(ds: &EvalDataset, cfg: &TrialConfig) -> Result<Vec<TrialScores>> {
    cfg.validate()?;
    check_methods(ds, cfg)?;
    let n = ds.len();
    let n_cal = (cfg.cal_fraction * n as f64 + 1e-9).floor() as usize;
    if n_cal < 4 {
        return Err(Error::Config(format!(
            "cal_fraction {} of {n} queries leaves {n_cal} calibration rows; need at least 4",
            cfg.cal_fraction
        )));
    }
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed::mix(cfg.master_seed, t as u64);
            let (cal, test) = split_cal_test(n, cfg.cal_fraction, trial_seed)?;
            score_split(ds, &cal, &test, cfg, t, trial_seed)
        })
        .collect()
}

/// Repeated calibration/test splits, averaged per method.
pub fn run_trials(ds: &EvalDataset, cfg: &TrialConfig) -> Result<Report> {
    let trials = trial_scores(ds, cfg)?;
    let (methods, per_trial) = summarize(cfg, &trials)?;
    Ok(Report {
        format: REPORT_FORMAT.to_string(),
        config: serde_json::Value::Null,
        train_groups: None,
        test_groups: None,
        methods,
        trials: per_trial,
        selective: None,
    })
}

fn group_indices(ds: &EvalDataset, groups: &BTreeSet<String>) -> Vec<usize> {
    ds.items
        .iter()
        .enumerate()
        .filter(|(_, it)| groups.contains(&it.group))
        .map(|(i, _)| i)
        .collect()
}

/// Trains on every query in `train_groups` and evaluates on `test_groups`.
pub fn shift_eval(
    train_groups: &BTreeSet<String>,
    test_groups: &BTreeSet<String>,
    ds: &EvalDataset,
    cfg: &TrialConfig,
) -> Result<Report> {
    let scores = shift_scores(train_groups, test_groups, ds, cfg)?;
    let single = TrialConfig {
        n_trials: 1,
        ..cfg.clone()
    };
    let (methods, per_trial) = summarize(&single, std::slice::from_ref(&scores))?;
    Ok(Report {
        format: REPORT_FORMAT.to_string(),
        config: serde_json::Value::Null,
        train_groups: Some(train_groups.iter().cloned().collect()),
        test_groups: Some(test_groups.iter().cloned().collect()),
        methods,
        trials: per_trial,
        selective: None,
    })
}

pub fn shift_scores(
    train_groups: &BTreeSet<String>,
    test_groups: &BTreeSet<String>,
    ds: &EvalDataset,
    cfg: &TrialConfig,
) -> Result<TrialScores> {
    cfg.validate()?;
    if train_groups.is_empty() || test_groups.is_empty() {
        return Err(Error::Config("train and test group selections must be nonempty".into()));
    }
    if let Some(g) = train_groups.intersection(test_groups).next() {
        return Err(Error::Config(format!("group \"{g}\" is in both train and test selections")));
    }
    let present = ds.groups();
    for g in train_groups.iter().chain(test_groups) {
        if !present.contains(g.as_str()) {
            return Err(Error::Config(format!("group \"{g}\" not present in the dataset")));
        }
    }
    check_methods(ds, cfg)?;
    let train = group_indices(ds, train_groups);
    let test = group_indices(ds, test_groups);
    let trial_seed = seed::mix(cfg.master_seed, 0);
    score_split(ds, &train, &test, cfg, 0, trial_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivePoint {
    pub rate: f64,
    pub abstained: usize,
    pub selected: usize,
    /// Accuracy of the selected side minus accuracy of the full set.
    pub accuracy_gain: Option<f64>,
    pub abstained_mean_confidence: Option<f64>,
    pub abstained_accuracy: Option<f64>,
    pub selected_mean_confidence: Option<f64>,
    pub selected_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveCurve {
    pub points: Vec<SelectivePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    pub curve: SelectiveCurve,
}

/// Abstain on the `ceil(r·n)` lowest-confidence examples at each rate `r`.
///
/// Confidence ties keep input order, so callers control tie-breaking by how
/// they order the rows.
pub fn selective_curve(confidences: &[f64], labels: &[u8], rates: &[f64]) -> Result<SelectiveCurve> {
    if confidences.is_empty() {
        return Err(Error::InsufficientData("selective curve of an empty set".into()));
    }
    if confidences.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: confidences.len(),
            found: labels.len(),
        });
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("abstention rate {r} outside [0, 1)")));
    }
    let n = confidences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));
    let overall = labels.iter().map(|&z| f64::from(z)).sum::<f64>() / n as f64;
    let side = |idx: &[usize]| -> (Option<f64>, Option<f64>) {
        (
            mean(idx.iter().map(|&i| confidences[i])),
            mean(idx.iter().map(|&i| f64::from(labels[i]))),
        )
    };
    let points = rates
        .iter()
        .map(|&rate| {
            let cut = crate::calibrator::ceil_count(rate, n).min(n);
            let (abst, sel) = order.split_at(cut);
            let (a_conf, a_acc) = side(abst);
            let (s_conf, s_acc) = side(sel);
            SelectivePoint {
                rate,
                abstained: abst.len(),
                selected: sel.len(),
                accuracy_gain: s_acc.map(|a| a - overall),
                abstained_mean_confidence: a_conf,
                abstained_accuracy: a_acc,
                selected_mean_confidence: s_conf,
                selected_accuracy: s_acc,
            }
        })
        .collect();
    Ok(SelectiveCurve { points })
}

/// Field-wise mean of curves over the same rates; undefined entries are skipped.
pub fn average_curves(curves: &[SelectiveCurve]) -> SelectiveCurve {
    let Some(first) = curves.first() else {
        return SelectiveCurve { points: Vec::new() };
    };
    let points = (0..first.points.len())
        .map(|j| {
            let col: Vec<&SelectivePoint> = curves.iter().map(|c| &c.points[j]).collect();
            let avg = |f: fn(&SelectivePoint) -> Option<f64>| mean(col.iter().filter_map(|p| f(p)));
            SelectivePoint {
                rate: first.points[j].rate,
                abstained: col.iter().map(|p| p.abstained).sum::<usize>() / col.len(),
                selected: col.iter().map(|p| p.selected).sum::<usize>() / col.len(),
                accuracy_gain: avg(|p| p.accuracy_gain),
                abstained_mean_confidence: avg(|p| p.abstained_mean_confidence),
                abstained_accuracy: avg(|p| p.abstained_accuracy),
                selected_mean_confidence: avg(|p| p.selected_mean_confidence),
                selected_accuracy: avg(|p| p.selected_accuracy),
            }
        })
        .collect();
    SelectiveCurve { points }
}

/// Selective-prediction curves over repeated splits, averaged per method.
pub fn run_selective(ds: &EvalDataset, cfg: &TrialConfig, rates: &[f64]) -> Result<Report> {
    let trials = trial_scores(ds, cfg)?;
    let (methods, per_trial) = summarize(cfg, &trials)?;
    let mut curves = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let per: Vec<SelectiveCurve> = trials
            .iter()
            .map(|t| selective_curve(&t.confidences[mi].1, &t.labels, rates))
            .collect::<Result<_>>()?;
        curves.push(MethodCurve {
            method,
            curve: average_curves(&per),
        });
    }
    Ok(Report {
        format: REPORT_FORMAT.to_string(),
        config: serde_json::Value::Null,
        train_groups: None,
        test_groups: None,
        methods,
        trials: per_trial,
        selective: Some(curves),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        let (cal, test) = split_cal_test(10, 0.4, 3).unwrap();
        assert_eq!((cal.len(), test.len()), (4, 6));
        let mut all: Vec<usize> = cal.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_cal_test(10, 0.4, 3).unwrap(), (cal, test));
        assert!(split_cal_test(10, 0.999, 3).is_err());
        assert!(split_cal_test(4, 0.5, 3).is_err());
        assert!(split_cal_test(10, 0.0, 3).is_err());
    }

    #[test]
    fn four_point_selective() {
        let c = [0.9, 0.8, 0.2, 0.1];
        let z = [1, 1, 0, 0];
        let curve = selective_curve(&c, &z, &[0.0, 0.5]).unwrap();
        let zero = &curve.points[0];
        assert_eq!(zero.accuracy_gain, Some(0.0));
        assert_eq!((zero.abstained, zero.selected), (0, 4));
        assert_eq!(zero.abstained_accuracy, None);
        assert_eq!(zero.abstained_mean_confidence, None);
        let half = &curve.points[1];
        assert_eq!(half.abstained, 2);
        assert_eq!(half.accuracy_gain, Some(0.5));
        assert_eq!(half.abstained_accuracy, Some(0.0));
        assert_eq!(half.selected_accuracy, Some(1.0));
        assert!((half.abstained_mean_confidence.unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn abstain_count_uses_ceiling() {
        let c: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let z = [0u8; 10];
        let curve = selective_curve(&c, &z, &[0.3, 0.25, 0.7]).unwrap();
        let counts: Vec<usize> = curve.points.iter().map(|p| p.abstained).collect();
        assert_eq!(counts, [3, 3, 7]);
    }

    #[test]
    fn perfect_ranking_maximizes_gain() {
        let z = [1, 0, 1, 0, 1, 1, 0, 1];
        let c: Vec<f64> = z.iter().map(|&v| f64::from(v)).collect();
        let p = &selective_curve(&c, &z, &[0.5]).unwrap().points[0];
        assert_eq!(p.selected_accuracy, Some(1.0));
        assert!((p.accuracy_gain.unwrap() - (1.0 - 5.0 / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn rate_errors() {
        assert!(selective_curve(&[0.5], &[1], &[1.0]).is_err());
        assert!(selective_curve(&[], &[], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn counts_and_complement(
            pairs in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..60),
        ) {
            let c: Vec<f64> = pairs.iter().map(|p| (p.0 * 10.0).round() / 10.0).collect();
            let z: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let n = c.len() as f64;
            let overall = z.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            let curve = selective_curve(&c, &z, &DEFAULT_RATES).unwrap();
            for p in &curve.points {
                prop_assert_eq!(p.abstained + p.selected, c.len());
                let a = p.abstained as f64 * p.abstained_accuracy.unwrap_or(0.0);
                let s = p.selected as f64 * p.selected_accuracy.unwrap_or(0.0);
                prop_assert!(((a + s) / n - overall).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_transform_keeps_accuracies(
            pairs in proptest::collection::vec((0.0f64..1.0, 0u8..2), 2..60),
        ) {
            let c: Vec<f64> = pairs.iter().map(|p| (p.0 * 20.0).round() / 20.0).collect();
            let z: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let t: Vec<f64> = c.iter().map(|v| v.powi(3) * 0.5 + 0.1).collect();
            let a = selective_curve(&c, &z, &DEFAULT_RATES).unwrap();
            let b = selective_curve(&t, &z, &DEFAULT_RATES).unwrap();
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert_eq!(p.selected_accuracy, q.selected_accuracy);
                prop_assert_eq!(p.abstained_accuracy, q.abstained_accuracy);
                prop_assert_eq!(p.accuracy_gain, q.accuracy_gain);
            }
            prop_assert_eq!(metrics::auroc(&c, &z), metrics::auroc(&t, &z));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
    }
}
