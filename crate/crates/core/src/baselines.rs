//! Comparison confidence scores: token probabilities, verbalized confidence,
//! and supervised Platt scaling.

use serde::{Deserialize, Serialize};

use crate::consistency::all_boxed;
use crate::error::{Error, Result};

fn geometric_mean(logprobs: &[f64], what: &'static str) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::InsufficientData(format!("{what} is empty")));
    }
    if !logprobs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    if logprobs.iter().any(|&v| v > 0.0) {
        return Err(Error::InvalidArgument(format!("{what} contains a positive log-probability")));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok(mean.exp())
}

/// Length-normalized probability of the whole response: `exp(mean(logprobs))`.
pub fn token_prob_score(token_logprobs: &[f64]) -> Result<f64> {
    geometric_mean(token_logprobs, "token_logprobs")
}

/// Same as [`token_prob_score`], restricted to the tokens of the boxed answer.
pub fn answer_prob_score(answer_token_logprobs: Option<&[f64]>) -> Result<f64> {
    let span = answer_token_logprobs.ok_or_else(|| {
        Error::InsufficientData("record lacks answer_token_logprobs".into())
    })?;
    geometric_mean(span, "answer_token_logprobs")
}

fn is_decimal_literal(s: &str) -> bool {
    let mut digits = 0;
    let mut dots = 0;
    for c in s.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    digits > 0 && dots <= 1
}

/// Last boxed decimal literal in the text, if it lies in `[0, 1]`.
pub fn parse_verbal_confidence(response_text: &str) -> Option<f64> {
    let groups = all_boxed(response_text);
    let literal = groups
        .iter()
        .rev()
        .map(|g| g.trim())
        .find(|g| is_decimal_literal(g))?;
    let p: f64 = literal.parse().ok()?;
    (0.0..=1.0).contains(&p).then_some(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerbalConfidence {
    pub raw: Option<f64>,
    pub imputed: bool,
}

/// Replaces missing estimates with the mean of the present ones (0.5 if none).
pub fn impute_verbal(values: &[Option<f64>]) -> Vec<(f64, VerbalConfidence)> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let fill = if present.is_empty() {
        0.5
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    values
        .iter()
        .map(|v| {
            (
                v.unwrap_or(fill),
                VerbalConfidence {
                    raw: *v,
                    imputed: v.is_none(),
                },
            )
        })
        .collect()
}

/// Sigmoid recalibration on logit-transformed scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattModel {
    pub slope: f64,
    pub bias: f64,
    pub input_clip: f64,
}

pub const PLATT_EPS: f64 = 1e-6;
pub const PLATT_PENALTY: f64 = 1e-6;
const PLATT_MAX_ITER: usize = 100;
const PLATT_TOL: f64 = 1e-8;

fn logit(p: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).ln()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Penalized Bernoulli negative log-likelihood of `σ(a·t + b)`.
pub fn platt_objective(logits: &[f64], labels: &[u8], slope: f64, bias: f64) -> f64 {
    let nll: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&t, &z)| {
            let u = slope * t + bias;
            // -[z ln σ(u) + (1-z) ln(1-σ(u))] = softplus(u) - z u
            softplus(u) - f64::from(z) * u
        })
        .sum();
    nll + PLATT_PENALTY * (slope * slope + bias * bias)
}

/// Maximum-likelihood Platt fit by damped Newton iteration.
pub fn fit_platt(scores: &[f64], labels: &[u8]) -> Result<PlattModel> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.len() < 2 {
        return Err(Error::InsufficientData("Platt scaling needs at least 2 points".into()));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("Platt scores"));
    }
    if labels.iter().any(|&z| z > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let t: Vec<f64> = scores.iter().map(|&s| logit(s, PLATT_EPS)).collect();
    let (mut a, mut b) = (1.0, 0.0);
    let mut f = platt_objective(&t, labels, a, b);
    for _ in 0..PLATT_MAX_ITER {
        let (mut ga, mut gb) = (2.0 * PLATT_PENALTY * a, 2.0 * PLATT_PENALTY * b);
        let (mut haa, mut hab, mut hbb) = (2.0 * PLATT_PENALTY, 0.0, 2.0 * PLATT_PENALTY);
        for (&ti, &z) in t.iter().zip(labels) {
            let p = sigmoid(a * ti + b);
            let r = p - f64::from(z);
            let w = p * (1.0 - p);
            ga += r * ti;
            gb += r;
            haa += w * ti * ti;
            hab += w * ti;
            hbb += w;
        }
        if ga.hypot(gb) < PLATT_TOL {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        // Halve the step until the objective decreases.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = platt_objective(&t, labels, na, nb);
            if nf < f {
                (a, b, f) = (na, nb, nf);
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(PlattModel {
        slope: a,
        bias: b,
        input_clip: PLATT_EPS,
    })
}

pub fn apply_platt(model: &PlattModel, score: f64) -> f64 {
    sigmoid(model.slope * logit(score, model.input_clip) + model.bias)
}

impl PlattModel {
    pub fn apply(&self, score: f64) -> f64 {
        apply_platt(self, score)
    }
}
