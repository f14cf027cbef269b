use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear nondecreasing map from a score to a value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    /// Strictly increasing.
    pub knot_inputs: Vec<f64>,
    /// Nondecreasing, within `[0, 1]`.
    pub knot_outputs: Vec<f64>,
}

impl IsotonicModel {
    pub const LOWER_CLIP: f64 = 0.0;
    pub const UPPER_CLIP: f64 = 1.0;

    pub fn predict(&self, score: f64) -> f64 {
        isotonic_predict(self, score)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let ok = !self.knot_inputs.is_empty()
            && self.knot_inputs.len() == self.knot_outputs.len()
            && self.knot_inputs.windows(2).all(|w| w[0] < w[1])
            && self.knot_outputs.windows(2).all(|w| w[0] <= w[1])
            && self
                .knot_outputs
                .iter()
                .all(|v| (Self::LOWER_CLIP..=Self::UPPER_CLIP).contains(v));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("malformed isotonic knots".into()))
        }
    }
}

/// A run of pooled points: its weighted mean and total weight.
#[derive(Clone, Copy)]
struct Block {
    mean: f64,
    weight: f64,
    groups: usize,
}

impl Block {
    fn absorb(&mut self, other: Block) {
        let w = self.weight + other.weight;
        // Mean update written so equal means stay bit-identical.
        self.mean += (other.mean - self.mean) * (other.weight / w);
        self.weight = w;
        self.groups += other.groups;
    }
}

/// Weighted pool-adjacent-violators. Returns one fitted value per input.
pub(crate) fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut stack: Vec<Block> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = Block {
            mean: v,
            weight: w,
            groups: 1,
        };
        while let Some(prev) = stack.last() {
            if prev.mean > cur.mean {
                let mut merged = stack.pop().unwrap();
                merged.absorb(cur);
                cur = merged;
            } else {
                break;
            }
        }
        stack.push(cur);
    }
    stack
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.mean, b.groups))
        .collect()
}

/// Nondecreasing least-squares fit of `targets` ordered by `scores`, clipped to `[0, 1]`.
///
/// Points with equal scores are averaged first, so each distinct score becomes one knot.
pub fn fit_isotonic(scores: &[f64], targets: &[f64]) -> Result<IsotonicModel> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: targets.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("isotonic fit needs at least 1 point".into()));
    }
    if !scores.iter().chain(targets).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("isotonic inputs"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut inputs: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in order {
        let (s, t) = (scores[i], targets[i]);
        match inputs.last() {
            Some(&last) if last == s => {
                let w = weights.last_mut().unwrap();
                *w += 1.0;
                let m = means.last_mut().unwrap();
                *m += (t - *m) / *w;
            }
            _ => {
                inputs.push(s);
                means.push(t);
                weights.push(1.0);
            }
        }
    }

    let knot_outputs = pava(&means, &weights)
        .into_iter()
        .map(|v| v.clamp(IsotonicModel::LOWER_CLIP, IsotonicModel::UPPER_CLIP))
        .collect();
    Ok(IsotonicModel {
        knot_inputs: inputs,
        knot_outputs,
    })
}

/// Linear interpolation between knots, constant beyond either end.
pub fn isotonic_predict(model: &IsotonicModel, score: f64) -> f64 {
    let xs = &model.knot_inputs;
    let ys = &model.knot_outputs;
    let last = xs.len() - 1;
    if score.is_nan() || score <= xs[0] {
        return ys[0];
    }
    if score >= xs[last] {
        return ys[last];
    }
    // xs[hi - 1] < score < xs[hi] or score == xs[hi - 1]
    let hi = xs.partition_point(|&x| x <= score);
    let (x0, x1, y0, y1) = (xs[hi - 1], xs[hi], ys[hi - 1], ys[hi]);
    if score == x0 {
        return y0;
    }
    let t = (score - x0) / (x1 - x0);
    (y0 + t * (y1 - y0)).clamp(y0, y1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted(scores: &[f64], targets: &[f64]) -> Vec<f64> {
        let m = fit_isotonic(scores, targets).unwrap();
        scores.iter().map(|&s| m.predict(s)).collect()
    }

    #[test]
    fn monotone_input_is_identity() {
        let m = fit_isotonic(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(m.knot_inputs, [1.0, 2.0, 3.0]);
        assert_eq!(m.knot_outputs, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn full_violation_pools_everything() {
        let f = fitted(&[1.0, 2.0, 3.0], &[0.3, 0.1, 0.2]);
        for v in f {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn adjacent_violation_pools_pair() {
        let f = fitted(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.3, 0.2, 0.4]);
        let want = [0.1, 0.25, 0.25, 0.4];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tied_scores_are_pre_pooled() {
        let m = fit_isotonic(&[1.0, 1.0, 2.0], &[0.0, 1.0, 0.9]).unwrap();
        assert_eq!(m.knot_inputs, [1.0, 2.0]);
        assert_eq!(m.knot_outputs, [0.5, 0.9]);
    }

    #[test]
    fn outputs_clipped() {
        let m = fit_isotonic(&[0.0, 1.0], &[-0.5, 1.7]).unwrap();
        assert_eq!(m.knot_outputs, [0.0, 1.0]);
    }

    #[test]
    fn interpolation_and_clipping() {
        let m = IsotonicModel {
            knot_inputs: vec![0.0, 1.0],
            knot_outputs: vec![0.0, 1.0],
        };
        assert_eq!(isotonic_predict(&m, 0.5), 0.5);
        assert_eq!(isotonic_predict(&m, -3.0), 0.0);
        assert_eq!(isotonic_predict(&m, 7.0), 1.0);
    }

    #[test]
    fn single_knot_is_constant() {
        let m = fit_isotonic(&[2.0, 2.0], &[0.7, 0.7]).unwrap();
        assert_eq!(m.knot_outputs, [0.7]);
        assert_eq!(m.predict(-1e9), 0.7);
        assert_eq!(m.predict(1e9), 0.7);
    }

    #[test]
    fn errors() {
        assert!(fit_isotonic(&[1.0], &[0.1, 0.2]).is_err());
        assert!(fit_isotonic(&[], &[]).is_err());
        assert!(fit_isotonic(&[f64::NAN], &[0.1]).is_err());
    }
}
