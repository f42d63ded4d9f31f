//! Sample statistics used to validate samplers and summarize estimator runs.

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    crate::par::pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd(xs: &[f64]) -> Result<f64> {
    Ok(sample_var(xs)?.sqrt())
}

pub fn sample_var(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::invalid(format!(
            "sample variance needs at least 2 values, got {}",
            xs.len()
        )));
    }
    let m = mean(xs);
    let ss: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Ok(crate::par::pairwise_sum(&ss) / (xs.len() - 1) as f64)
}

/// Type-1 empirical quantile `inf{x : F(x) >= p}` of an ascending sample.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * n as f64;
    // p * n that should be an integer must not round up to the next order statistic
    let k = if (pos - pos.round()).abs() <= 1e-9 * n as f64 {
        pos.round()
    } else {
        pos.ceil()
    };
    let k = (k as usize).clamp(1, n);
    sorted[k - 1]
}

/// Ordinary least squares fit `y = intercept + slope * x`; returns `(intercept, slope)`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::mismatch(x.len(), y.len(), "ols x/y lengths"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("ols needs at least 2 points"));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("ols regressor is constant".into()));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Kendall's tau-a of two paired samples in O(n log n) (Knight's algorithm).
///
/// Pairs tied in either coordinate count as neither concordant nor discordant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::mismatch(n, y.len(), "kendall_tau lengths"));
    }
    if n < 2 {
        return Err(Error::invalid("kendall_tau needs at least 2 pairs"));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let total = (n as u64) * (n as u64 - 1) / 2;
    let ties_x = tied_pairs(pairs.iter().map(|p| p.0));
    let ties_xy = {
        let mut t = 0u64;
        let mut run = 1u64;
        for w in pairs.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                t += run * (run - 1) / 2;
                run = 1;
            }
        }
        t + run * (run - 1) / 2
    };

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let ties_y = tied_pairs(ys.iter().copied());

    // concordant - discordant = total - ties_x - ties_y + ties_xy - 2 * discordant
    let diff = total as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    Ok(diff / total as f64)
}

fn tied_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut t = 0u64;
    let mut run = 0u64;
    let mut prev = f64::NAN;
    for v in sorted {
        if v == prev {
            run += 1;
        } else {
            t += run * run.saturating_sub(1) / 2;
            run = 1;
            prev = v;
        }
    }
    t + run * run.saturating_sub(1) / 2
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// One-sample Kolmogorov-Smirnov test against U(0,1); returns `(D, p_value)`.
///
/// The p-value uses the asymptotic Kolmogorov distribution with Stephens'
/// finite-sample correction.
pub fn ks_uniform(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::invalid("ks test on empty sample"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    Ok((d, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)))
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // Series below converges poorly; survival is 1 to double precision here.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u32 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::mismatch(x.len(), y.len(), "spearman lengths"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("spearman needs at least 2 pairs"));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
