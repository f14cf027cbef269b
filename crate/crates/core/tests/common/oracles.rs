//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

/// Exact nondecreasing least squares by enumerating every contiguous
/// partition of the score-sorted points. Points with equal scores must share
/// a block. Returns fitted values in input order.
pub fn isotonic_brute(scores: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let y: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
    let s: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        // Bit j set: a block boundary between sorted positions j and j+1.
        if (0..n - 1).any(|j| mask >> j & 1 == 1 && s[j] == s[j + 1]) {
            continue;
        }
        let mut fit = vec![0.0; n];
        let mut start = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 1..=n {
            if end == n || mask >> (end - 1) & 1 == 1 {
                let m = y[start..end].iter().sum::<f64>() / (end - start) as f64;
                if m < prev - 1e-15 {
                    ok = false;
                    break;
                }
                fit[start..end].iter_mut().for_each(|v| *v = m);
                prev = m;
                start = end;
            }
        }
        if !ok {
            continue;
        }
        let sse: f64 = fit.iter().zip(&y).map(|(f, t)| (f - t).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fit));
        }
    }
    let fit = best.unwrap().1;
    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = fit[pos];
    }
    out
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Ridge with an unpenalized intercept from the full normal equations on the
/// design `[x, 1]`. Returns `(weights, intercept)`.
pub fn ridge_normal_equations(x: &[Vec<f64>], y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let rows: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; d + 1]; d + 1];
    let mut b = vec![0.0; d + 1];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..=d {
            b[i] += r[i] * t;
            for j in 0..=d {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().take(d) {
        row[i] += alpha;
    }
    let sol = solve_dense(a, b);
    (sol[..d].to_vec(), sol[d])
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
pub fn auroc_pairwise(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &zi) in labels.iter().enumerate() {
        for (j, &zj) in labels.iter().enumerate() {
            if zi == 1 && zj == 0 {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Penalized Bernoulli negative log-likelihood of `σ(a·logit(s) + b)`.
pub fn platt_nll(scores: &[f64], labels: &[u8], a: f64, b: f64, eps: f64, lambda: f64) -> f64 {
    let mut total = lambda * (a * a + b * b);
    for (&s, &z) in scores.iter().zip(labels) {
        let s = s.clamp(eps, 1.0 - eps);
        let t = (s / (1.0 - s)).ln();
        let p = 1.0 / (1.0 + (-(a * t + b)).exp());
        total -= if z == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total
}

/// Zooming grid search for the Platt optimum; returns `(a, b, nll)`.
pub fn platt_grid(scores: &[f64], labels: &[u8], eps: f64, lambda: f64) -> (f64, f64, f64) {
    let (mut ca, mut cb, mut span) = (0.0, 0.0, 20.0);
    let mut best = (0.0, 0.0, platt_nll(scores, labels, 0.0, 0.0, eps, lambda));
    for _ in 0..40 {
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = ca - span + 2.0 * span * i as f64 / steps as f64;
                let b = cb - span + 2.0 * span * j as f64 / steps as f64;
                let f = platt_nll(scores, labels, a, b, eps, lambda);
                if f < best.2 {
                    best = (a, b, f);
                }
            }
        }
        (ca, cb) = (best.0, best.1);
        span *= 0.5;
    }
    best
}

/// Equal-mass bins computed directly from the definition, for ECE checks.
pub fn ece_direct(conf: &[f64], labels: &[u8], bins: usize, p: i32) -> f64 {
    let n = conf.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| conf[a].partial_cmp(&conf[b]).unwrap());
    let mut total = 0.0;
    for b in 0..bins {
        let members = &idx[b * n / bins..(b + 1) * n / bins];
        let m = members.len() as f64;
        let c = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        let a = members.iter().map(|&i| f64::from(labels[i])).sum::<f64>() / m;
        total += m / n as f64 * (a - c).abs().powi(p);
    }
    total.powf(1.0 / f64::from(p))
}
