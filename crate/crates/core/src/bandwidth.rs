//! Bandwidth selection and the schedules consulted by the training loop.
//!
//! Bandwidths are type-1 empirical quantiles of the pairwise Euclidean
//! distances within the training sample, taken at a probability vector that is
//! dense near the left tail of the distance distribution.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::mmd::{sq_dist, KernelBank};
use crate::par::{self, CHUNK_ROWS};
use crate::seed::{self, SeedTree};
use crate::stats::empirical_quantile;
use crate::{Error, Result};

/// Sequence of kernel counts used by successive bandwidth updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KernelSequence {
    /// `base * 2^k`: 6, 12, 24, ... for `base = 6`.
    Doubling { base: usize },
    /// A finite list; once exhausted no further updates happen.
    Explicit { counts: Vec<usize> },
}

impl KernelSequence {
    /// Kernel count for update `k` (0 = initial bank), if the sequence has one.
    pub fn get(&self, k: usize) -> Option<usize> {
        match self {
            KernelSequence::Doubling { base } => u32::try_from(k)
                .ok()
                .and_then(|k| 2usize.checked_pow(k))
                .and_then(|f| base.checked_mul(f)),
            KernelSequence::Explicit { counts } => counts.get(k).copied(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            KernelSequence::Doubling { base } if *base == 0 => {
                Err(Error::invalid("kernel sequence base must be positive"))
            }
            KernelSequence::Explicit { counts } => {
                if counts.is_empty() || counts[0] == 0 {
                    return Err(Error::invalid("kernel sequence must start with a positive count"));
                }
                if counts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("kernel counts must be strictly increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthPolicy {
    pub kernel_counts: KernelSequence,
    /// Largest quantile probability (first entry of every probability vector).
    pub prob_scale: f64,
    /// Probabilities decay as `prob_scale * 2^(-prob_rate (k-1)/n_krn)`.
    pub prob_rate: f64,
    /// Pairwise distances are computed on at most this many sampled rows.
    pub pair_cap: usize,
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        Self {
            kernel_counts: KernelSequence::Doubling { base: 6 },
            prob_scale: 0.95,
            prob_rate: 9.0,
            pair_cap: 2000,
        }
    }
}

impl BandwidthPolicy {
    pub fn validate(&self) -> Result<()> {
        self.kernel_counts.validate()?;
        if !(self.prob_scale > 0.0 && self.prob_scale <= 1.0) {
            return Err(Error::invalid("prob_scale must lie in (0, 1]"));
        }
        if !(self.prob_rate >= 0.0) {
            return Err(Error::invalid("prob_rate must be non-negative"));
        }
        if self.pair_cap < 2 {
            return Err(Error::invalid("pair_cap must be at least 2"));
        }
        Ok(())
    }

    pub fn probabilities(&self, n_krn: usize) -> Vec<f64> {
        prob_vector_with(n_krn, self.prob_scale, self.prob_rate)
    }

    /// Quantile bandwidth bank with `n_krn` kernels for the sample `x`.
    pub fn bank(&self, x: ArrayView2<'_, f64>, n_krn: usize, seed: u64) -> Result<KernelBank> {
        let probs = self.probabilities(n_krn);
        let h = pairwise_distance_quantiles(x, &probs, self.pair_cap, seed)?;
        KernelBank::new(h)
    }
}

/// `p_k = 0.95 * 2^(-9 (k-1) / n_krn)`, `k = 1..=n_krn`.
pub fn prob_vector(n_krn: usize) -> Vec<f64> {
    prob_vector_with(n_krn, 0.95, 9.0)
}

pub fn prob_vector_with(n_krn: usize, scale: f64, rate: f64) -> Vec<f64> {
    (0..n_krn)
        .map(|k| scale * (-rate * k as f64 / n_krn as f64).exp2())
        .collect()
}

/// Sorted pairwise Euclidean distances over all row pairs `i < j`.
pub fn pairwise_distances(x: ArrayView2<'_, f64>) -> Vec<f64> {
    let x = x.as_standard_layout();
    let n = x.nrows();
    let parts = par::map_chunks(n, CHUNK_ROWS, |s, e| {
        let mut out = Vec::new();
        for i in s..e {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("standard layout");
            for j in i + 1..n {
                out.push(sq_dist(xi, x.row(j).as_slice().expect("standard layout")).sqrt());
            }
        }
        out
    });
    let mut all: Vec<f64> = parts.into_iter().flatten().collect();
    all.sort_unstable_by(f64::total_cmp);
    all
}

/// Bandwidths at each probability in `probs`, returned ascending.
///
/// With more than `cap` rows, `cap` rows are drawn without replacement (seeded)
/// and only their pairwise distances are used.
pub fn pairwise_distance_quantiles(x: ArrayView2<'_, f64>, probs: &[f64], cap: usize, seed: u64) -> Result<Vec<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("bandwidth selection needs at least 2 rows"));
    }
    if cap < 2 {
        return Err(Error::invalid("pair cap must be at least 2"));
    }
    if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::invalid(format!("quantile probability {p} outside (0, 1]")));
    }
    let distances = if n <= cap {
        pairwise_distances(x)
    } else {
        let mut rng = SeedTree::new(seed).rng(seed::SUBSAMPLE, 0);
        let mut rows = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        rows.sort_unstable();
        pairwise_distances(x.select(ndarray::Axis(0), &rows).view())
    };
    if *distances.last().expect("at least one pair") == 0.0 {
        return Err(Error::Degenerate(
            "all rows are identical; bandwidths would be zero".into(),
        ));
    }
    let mut h: Vec<f64> = probs.iter().map(|&p| empirical_quantile(&distances, p)).collect();
    if h.iter().any(|&v| v <= 0.0) {
        return Err(Error::Degenerate(
            "a distance quantile is zero; too many duplicate rows for this probability".into(),
        ));
    }
    h.sort_by(f64::total_cmp);
    Ok(h)
}

/// Non-decreasing patience schedule
/// `floor + slope (t - offset)` clamped to `[floor, cap]` and floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatienceSchedule {
    pub floor: u32,
    pub cap: u32,
    pub slope: f64,
    pub offset: u32,
}

impl Default for PatienceSchedule {
    fn default() -> Self {
        Self {
            floor: 20,
            cap: 50,
            slope: 3.0 / 8.0,
            offset: 20,
        }
    }
}

impl PatienceSchedule {
    /// A constant patience.
    pub fn constant(p: u32) -> Self {
        Self {
            floor: p,
            cap: p,
            slope: 0.0,
            offset: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.floor == 0 || self.cap < self.floor || !(self.slope >= 0.0) {
            return Err(Error::invalid(
                "patience schedule needs 0 < floor <= cap and slope >= 0",
            ));
        }
        Ok(())
    }

    /// Patience in epoch `t`.
    pub fn at(&self, t: u32) -> u32 {
        if t <= self.offset {
            return self.floor;
        }
        let grown = f64::from(self.floor) + self.slope * f64::from(t - self.offset);
        (grown.floor() as u32).clamp(self.floor, self.cap)
    }
}

/// Patience with the default schedule: 20 up to epoch 20, then
/// `floor(20 + 3/8 (t - 20))`, capped at 50.
pub fn patience(t: u32) -> u32 {
    PatienceSchedule::default().at(t)
}

/// Learning rate after `n_up` bandwidth updates: `gamma0 / decay^n_up`.
pub fn learning_rate_with(n_up: u32, gamma0: f64, decay: f64) -> f64 {
    gamma0 / decay.powi(n_up as i32)
}

/// `0.001 * 5^(-n_up)`.
pub fn learning_rate(n_up: u32) -> f64 {
    learning_rate_with(n_up, 0.001, 5.0)
}
