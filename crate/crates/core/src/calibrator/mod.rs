//! Unsupervised confidence calibrator.
//!
//! Training takes one feature vector and one self-consistency target per
//! query. The rows are split in two: the first part fits a standardizer and a
//! ridge regression, the second part fits an isotonic map from ridge scores to
//! targets. Prediction chains the three stages and always lands in `[0, 1]`.

mod isotonic;
mod ridge;
mod scaler;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use isotonic::{fit_isotonic, isotonic_predict, IsotonicModel};
pub use ridge::{fit_ridge, RidgeModel};
pub use scaler::{fit_scaler, ScalerParams};

use crate::error::{Error, Result};
use crate::seed;

pub const MODEL_FORMAT: &str = "conscal-model/1";

/// Which embedding feeds the calibrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Generator state after the last token of the response.
    #[default]
    ResponseEmbedding,
    /// Question only, available before any generation.
    QuestionEmbedding,
    /// Embedding from a separate model.
    ExternalEmbedding,
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response" | "response_embedding" => Ok(Self::ResponseEmbedding),
            "question" | "question_embedding" => Ok(Self::QuestionEmbedding),
            "external" | "external_embedding" => Ok(Self::ExternalEmbedding),
            other => Err(Error::Config(format!("unknown feature source \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub split_frac: f64,
    pub seed: u64,
    pub target_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fraction of rows reserved for the isotonic stage.
    pub split_frac: f64,
    pub alpha: f64,
    pub seed: u64,
    pub feature_source: FeatureSource,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            split_frac: 0.5,
            alpha: 1.0,
            seed: 0,
            feature_source: FeatureSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorModel {
    pub scaler: ScalerParams,
    pub ridge: RidgeModel,
    pub isotonic: IsotonicModel,
    pub feature_source: FeatureSource,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: String,
    #[serde(flatten)]
    model: CalibratorModel,
}

/// `(ridge rows, isotonic rows)` from a seeded shuffle; the isotonic side gets
/// `ceil(split_frac * n)` rows.
pub fn split_rows(n: usize, split_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split_frac must lie in (0, 1), got {split_frac}"
        )));
    }
    let n_b = ceil_count(split_frac, n);
    let n_a = n.saturating_sub(n_b);
    if n_a < 2 || n_b < 2 {
        return Err(Error::InsufficientData(format!(
            "{n} rows split {n_a}/{n_b}; each half needs at least 2"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let b = idx[..n_b].to_vec();
    let a = idx[n_b..].to_vec();
    Ok((a, b))
}

/// `ceil(frac * n)` with products within 1e-9 of an integer treated as exact.
pub(crate) fn ceil_count(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Fits the standardizer, ridge regression and isotonic map.
pub fn fit_pipeline(
    features: &[Vec<f64>],
    targets: &[f64],
    opts: &FitOptions,
) -> Result<CalibratorModel> {
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: targets.len(),
        });
    }
    if features.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "calibrator needs at least 4 rows, got {}",
            features.len()
        )));
    }
    if !targets.iter().all(|t| (0.0..=1.0).contains(t)) {
        return Err(Error::InvalidArgument("targets must lie in [0, 1]".into()));
    }
    let (a, b) = split_rows(features.len(), opts.split_frac, opts.seed)?;

    let xa: Vec<Vec<f64>> = a.iter().map(|&i| features[i].clone()).collect();
    let ya: Vec<f64> = a.iter().map(|&i| targets[i]).collect();
    let scaler = fit_scaler(&xa)?;
    let za = xa
        .iter()
        .map(|r| scaler.transform(r))
        .collect::<Result<Vec<_>>>()?;
    let ridge = fit_ridge(&za, &ya, opts.alpha)?;

    let mut scores_b = Vec::with_capacity(b.len());
    for &i in &b {
        scores_b.push(ridge.predict(&scaler.transform(&features[i])?)?);
    }
    let yb: Vec<f64> = b.iter().map(|&i| targets[i]).collect();
    let isotonic = fit_isotonic(&scores_b, &yb)?;

    Ok(CalibratorModel {
        scaler,
        ridge,
        isotonic,
        feature_source: opts.feature_source,
        training_meta: TrainingMeta {
            split_frac: opts.split_frac,
            seed: opts.seed,
            target_count: targets.len(),
        },
    })
}

impl CalibratorModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// Ridge score before the isotonic stage.
    pub fn linear_score(&self, feature: &[f64]) -> Result<f64> {
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature"));
        }
        self.ridge.predict(&self.scaler.transform(feature)?)
    }

    pub fn predict(&self, feature: &[f64]) -> Result<f64> {
        Ok(self.isotonic.predict(self.linear_score(feature)?))
    }

    pub fn to_json(&self) -> Result<String> {
        let artifact = Artifact {
            format: MODEL_FORMAT.to_string(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&artifact)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: Artifact = serde_json::from_str(text)?;
        if artifact.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "unsupported model format \"{}\" (expected {MODEL_FORMAT})",
                artifact.format
            )));
        }
        let m = artifact.model;
        if m.scaler.scales.len() != m.scaler.means.len()
            || m.ridge.weights.len() != m.scaler.means.len()
            || m.scaler.scales.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::Config("inconsistent model dimensions".into()));
        }
        m.isotonic.check()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Free-function form of [`CalibratorModel::predict`].
pub fn predict(model: &CalibratorModel, feature: &[f64]) -> Result<f64> {
    model.predict(feature)
}
