//! Risk functionals, the MC/RQMC replication harness and sample-quality statistics.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::copulas::CopulaSpec;
use crate::lowdisc::{prs_from_model, qrs_from_model, SobolStream};
use crate::nn::MlpModel;
use crate::par::{self, CHUNK_ROWS};
use crate::seed::SeedTree;
use crate::special::{norm_quantile, StudentT};
use crate::stats::{self, empirical_quantile};
use crate::{Error, Matrix, Result};

/// Marginal distribution applied to copula samples through its quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Margin {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Terminal price of a geometric Brownian motion started at `s0`.
    LogNormal {
        s0: f64,
        sigma: f64,
        rate: f64,
        maturity: f64,
    },
    /// `loc + scale * T_df`.
    ScaledT {
        loc: f64,
        scale: f64,
        df: f64,
    },
}

impl Margin {
    pub fn standard_normal() -> Self {
        Margin::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Margin::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Margin::LogNormal {
                s0,
                sigma,
                rate,
                maturity,
            } => s0 > 0.0 && sigma > 0.0 && rate.is_finite() && maturity > 0.0,
            Margin::ScaledT { loc, scale, df } => loc.is_finite() && scale > 0.0 && df > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid margin {self:?}")))
        }
    }

    /// Quantile function; `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Margin::Normal { mean, sd } => mean + sd * norm_quantile(u),
            Margin::LogNormal {
                s0,
                sigma,
                rate,
                maturity,
            } => (s0.ln() + (rate - 0.5 * sigma * sigma) * maturity + sigma * maturity.sqrt() * norm_quantile(u)).exp(),
            Margin::ScaledT { loc, scale, df } => loc + scale * StudentT::new(df).expect("validated df").quantile(u),
        }
    }
}

/// `d` standard normal margins.
pub fn standard_normal_margins(d: usize) -> Vec<Margin> {
    vec![Margin::standard_normal(); d]
}

/// European basket call on `d` log-normal assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketCall {
    pub s0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rate: f64,
    pub maturity: f64,
    pub strike: f64,
}

impl BasketCall {
    /// Volatilities equidistant on `[sigma_lo, sigma_hi]`, all assets starting at `s0`.
    pub fn equidistant(d: usize, s0: f64, sigma_lo: f64, sigma_hi: f64, rate: f64, maturity: f64, strike: f64) -> Self {
        let sigma = if d == 1 {
            vec![sigma_lo]
        } else {
            (0..d)
                .map(|j| sigma_lo + (sigma_hi - sigma_lo) * j as f64 / (d - 1) as f64)
                .collect()
        };
        Self {
            s0: vec![s0; d],
            sigma,
            rate,
            maturity,
            strike,
        }
    }

    /// The standard test case: `S_0 = 1`, volatilities on `[0.01, 0.025]`,
    /// `r = 0.01`, one year to maturity, strike 1.01.
    pub fn standard(d: usize) -> Self {
        Self::equidistant(d, 1.0, 0.01, 0.025, 0.01, 1.0, 1.01)
    }

    pub fn margins(&self) -> Vec<Margin> {
        self.s0
            .iter()
            .zip(&self.sigma)
            .map(|(&s0, &sigma)| Margin::LogNormal {
                s0,
                sigma,
                rate: self.rate,
                maturity: self.maturity,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.s0.is_empty() || self.s0.len() != self.sigma.len() {
            return Err(Error::invalid("basket needs matching, non-empty s0 and sigma"));
        }
        if !(self.strike > 0.0) {
            return Err(Error::invalid("strike must be positive"));
        }
        self.margins().iter().try_for_each(Margin::validate)
    }
}

/// Discounted payoff `e^{-r T} max(mean(s_t) - K, 0)`.
pub fn basket_payoff(s_t: &[f64], strike: f64, rate: f64, maturity: f64) -> f64 {
    let avg = s_t.iter().sum::<f64>() / s_t.len() as f64;
    (-rate * maturity).exp() * (avg - strike).max(0.0)
}

fn check_margins(u: &ArrayView2<'_, f64>, margins: &[Margin]) -> Result<()> {
    if u.ncols() != margins.len() {
        return Err(Error::mismatch(margins.len(), u.ncols(), "number of margins"));
    }
    if u.nrows() == 0 {
        return Err(Error::invalid("empty sample"));
    }
    margins.iter().try_for_each(Margin::validate)
}

/// Rowwise sums of the marginal quantiles together with the quantiles of `component`.
fn losses(u: &ArrayView2<'_, f64>, margins: &[Margin], component: usize) -> (Vec<f64>, Vec<f64>) {
    let parts = par::map_chunks(u.nrows(), CHUNK_ROWS * 16, |s, e| {
        let mut sums = Vec::with_capacity(e - s);
        let mut comp = Vec::with_capacity(e - s);
        for i in s..e {
            let row = u.row(i);
            let mut total = 0.0;
            for (j, (&v, m)) in row.iter().zip(margins).enumerate() {
                let x = m.quantile(v);
                if j == component {
                    comp.push(x);
                }
                total += x;
            }
            sums.push(total);
        }
        (sums, comp)
    });
    let mut sums = Vec::with_capacity(u.nrows());
    let mut comp = Vec::with_capacity(u.nrows());
    for (s, c) in parts {
        sums.extend(s);
        comp.extend(c);
    }
    (sums, comp)
}

/// Mean of `values[i]` over the rows whose loss strictly exceeds its empirical
/// `alpha`-quantile.
fn tail_mean(sums: &[f64], values: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = sums.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = empirical_quantile(&sorted, alpha);
    let tail: Vec<f64> = sums
        .iter()
        .zip(values)
        .filter(|(s, _)| **s > threshold)
        .map(|(_, v)| *v)
        .collect();
    if tail.is_empty() {
        return Err(Error::Degenerate("no losses exceed the empirical quantile".into()));
    }
    Ok(stats::mean(&tail))
}

/// Expected shortfall at level `alpha` of the sum of the marginal quantiles.
pub fn psi1_es(u: ArrayView2<'_, f64>, margins: &[Margin], alpha: f64) -> Result<f64> {
    check_margins(&u, margins)?;
    let (sums, _) = losses(&u, margins, usize::MAX);
    tail_mean(&sums, &sums, alpha)
}

/// Expected shortfall contribution of `component` (0-based).
pub fn psi2_alloc(u: ArrayView2<'_, f64>, margins: &[Margin], alpha: f64, component: usize) -> Result<f64> {
    check_margins(&u, margins)?;
    if component >= margins.len() {
        return Err(Error::invalid(format!("component {component} out of range")));
    }
    let (sums, comp) = losses(&u, margins, component);
    tail_mean(&sums, &comp, alpha)
}

/// Monte Carlo price of a basket call from copula samples `u`.
pub fn psi3_basket(u: ArrayView2<'_, f64>, option: &BasketCall) -> Result<f64> {
    option.validate()?;
    let margins = option.margins();
    check_margins(&u, &margins)?;
    let payoffs = par::map_chunks(u.nrows(), CHUNK_ROWS * 16, |s, e| {
        let mut s_t = vec![0.0; margins.len()];
        (s..e)
            .map(|i| {
                for ((x, &v), m) in s_t.iter_mut().zip(u.row(i)).zip(&margins) {
                    *x = m.quantile(v);
                }
                basket_payoff(&s_t, option.strike, option.rate, option.maturity)
            })
            .collect::<Vec<f64>>()
    });
    let payoffs: Vec<f64> = payoffs.into_iter().flatten().collect();
    Ok(stats::mean(&payoffs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Functional {
    ExpectedShortfall {
        alpha: f64,
        margins: Vec<Margin>,
    },
    Allocation {
        alpha: f64,
        component: usize,
        margins: Vec<Margin>,
    },
    BasketCall(BasketCall),
}

impl Functional {
    pub fn name(&self) -> &'static str {
        match self {
            Functional::ExpectedShortfall { .. } => "psi1",
            Functional::Allocation { .. } => "psi2",
            Functional::BasketCall(_) => "psi3",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Functional::ExpectedShortfall { margins, .. } | Functional::Allocation { margins, .. } => margins.len(),
            Functional::BasketCall(b) => b.s0.len(),
        }
    }

    pub fn evaluate(&self, u: ArrayView2<'_, f64>) -> Result<f64> {
        match self {
            Functional::ExpectedShortfall { alpha, margins } => psi1_es(u, margins, *alpha),
            Functional::Allocation {
                alpha,
                component,
                margins,
            } => psi2_alloc(u, margins, *alpha, *component),
            Functional::BasketCall(b) => psi3_basket(u, b),
        }
    }
}

/// Source of samples on the copula scale.
#[derive(Debug, Clone, Copy)]
pub enum Generator<'a> {
    CopulaPrs(&'a CopulaSpec),
    CopulaQrs(&'a CopulaSpec),
    ModelPrs(&'a MlpModel),
    ModelQrs(&'a MlpModel),
}

impl Generator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::CopulaPrs(_) => "copula-prs",
            Generator::CopulaQrs(_) => "copula-qrs",
            Generator::ModelPrs(_) => "model-prs",
            Generator::ModelQrs(_) => "model-qrs",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::CopulaPrs(s) | Generator::CopulaQrs(s) => s.dim,
            Generator::ModelPrs(m) | Generator::ModelQrs(m) => m.output_dim(),
        }
    }

    /// Fails for quasi-random copula sampling of families without a Rosenblatt inverse.
    pub fn check(&self) -> Result<()> {
        match self {
            Generator::CopulaQrs(s) if !s.family.has_rosenblatt_inverse() => Err(Error::Unsupported(format!(
                "quasi-random sampling is not available for the {} copula",
                s.family.name()
            ))),
            Generator::CopulaPrs(s) | Generator::CopulaQrs(s) => s.resolve().map(|_| ()),
            _ => Ok(()),
        }
    }

    /// `n` points; `seed` drives the pseudo-random draws or the digital shift.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        self.check()?;
        match *self {
            Generator::CopulaPrs(s) => s.sample(n, seed),
            Generator::CopulaQrs(s) => {
                let v = SobolStream::shifted(s.dim, seed)?.points_at(0, n)?;
                s.rosenblatt_inverse(v.view())
            }
            Generator::ModelPrs(m) => prs_from_model(m, n, seed),
            Generator::ModelQrs(m) => qrs_from_model(m, &SobolStream::shifted(m.input_dim(), seed)?, n),
        }
    }
}

/// Sample sizes `round(2^e)` for `e = lo, lo + step, ..., hi`.
pub fn log2_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<usize>> {
    if !(step > 0.0) || hi < lo || lo < 0.0 {
        return Err(Error::invalid("grid needs 0 <= lo <= hi and step > 0"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| (lo + step * i as f64).exp2().round() as usize)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_gen: usize,
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRun {
    pub functional: String,
    pub generator: String,
    pub points: Vec<GridPoint>,
}

/// Evaluates `functional` on `b` independently seeded samples per grid size.
pub fn run_estimator(
    functional: &Functional,
    generator: Generator<'_>,
    grid: &[usize],
    b: usize,
    seed: u64,
) -> Result<EstimatorRun> {
    if b < 2 {
        return Err(Error::invalid(
            "at least 2 replications are needed for a standard deviation",
        ));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty sample-size grid"));
    }
    generator.check()?;
    if generator.dim() != functional.dim() {
        return Err(Error::mismatch(
            functional.dim(),
            generator.dim(),
            "generator dimension",
        ));
    }
    let tree = SeedTree::new(seed);
    let mut points = Vec::with_capacity(grid.len());
    for (g, &n) in grid.iter().enumerate() {
        let sub = tree.subtree(generator.name(), g as u64);
        let estimates = par::map_indices(b, |r| {
            let u = generator.sample(n, sub.derive("replicate", r as u64))?;
            functional.evaluate(u.view())
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        points.push(GridPoint {
            n_gen: n,
            mean: stats::mean(&estimates),
            sd: stats::sample_sd(&estimates)?,
            estimates,
        });
    }
    Ok(EstimatorRun {
        functional: functional.name().into(),
        generator: generator.name().into(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    /// Slope of `log2(sd)` on `log2(n)`.
    pub rate: f64,
    pub intercept: f64,
    /// Slope and intercept of the untransformed fit `sd = a + b n`.
    pub raw_slope: f64,
    pub raw_intercept: f64,
    pub points_used: usize,
}

/// Convergence rate of the replication standard deviations of `run`.
///
/// Grid points with zero standard deviation are skipped.
pub fn convergence_rate(run: &EstimatorRun) -> Result<ConvergenceFit> {
    let used: Vec<&GridPoint> = run.points.iter().filter(|p| p.sd > 0.0).collect();
    if used.len() < run.points.len() {
        log::warn!(
            "{} grid points with zero standard deviation excluded from the rate fit",
            run.points.len() - used.len()
        );
    }
    if used.len() < 3 {
        return Err(Error::invalid(
            "convergence rate needs at least 3 grid points with positive sd",
        ));
    }
    let n: Vec<f64> = used.iter().map(|p| p.n_gen as f64).collect();
    let sd: Vec<f64> = used.iter().map(|p| p.sd).collect();
    let log_n: Vec<f64> = n.iter().map(|v| v.log2()).collect();
    let log_sd: Vec<f64> = sd.iter().map(|v| v.log2()).collect();
    let (intercept, rate) = stats::ols(&log_n, &log_sd)?;
    let (raw_intercept, raw_slope) = stats::ols(&n, &sd)?;
    Ok(ConvergenceFit {
        rate,
        intercept,
        raw_slope,
        raw_intercept,
        points_used: used.len(),
    })
}

/// `|est - reference| / |reference|`.
pub fn rel_bias(est: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::invalid("relative bias against a zero reference"));
    }
    Ok((est - reference).abs() / reference.abs())
}

/// Variance-reduction factor `s2_other / s2_agmmn`.
pub fn vrf(s2_other: f64, s2_agmmn: f64) -> Result<f64> {
    if !(s2_other > 0.0) || !(s2_agmmn > 0.0) {
        return Err(Error::invalid("variance-reduction factor needs positive variances"));
    }
    Ok(s2_other / s2_agmmn)
}

/// `sum_i sum_j prod_k (1 - max(a_ik, b_jk))`.
fn copula_cross(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> f64 {
    let parts = par::map_chunks(a.nrows(), CHUNK_ROWS, |s, e| {
        let mut acc = Vec::with_capacity(e - s);
        for i in s..e {
            let ai = a.row(i);
            let row: Vec<f64> = b
                .rows()
                .into_iter()
                .map(|bj| ai.iter().zip(bj).map(|(x, y)| 1.0 - x.max(*y)).product())
                .collect();
            acc.push(par::pairwise_sum(&row));
        }
        par::pairwise_sum(&acc)
    });
    par::pairwise_sum(&parts)
}

/// Cramér-von Mises distance between the empirical copulas of `u` and `v`,
/// scaled by `1 / sqrt(1/n + 1/m)`.
pub fn cvm_statistic(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<f64> {
    if u.nrows() == 0 || v.nrows() == 0 {
        return Err(Error::invalid("Cramér-von Mises statistic of an empty sample"));
    }
    if u.ncols() != v.ncols() {
        return Err(Error::mismatch(u.ncols(), v.ncols(), "Cramér-von Mises columns"));
    }
    let (n, m) = (u.nrows() as f64, v.nrows() as f64);
    let uu = copula_cross(&u, &u) / (n * n);
    let uv = copula_cross(&u, &v) / (n * m);
    let vv = copula_cross(&v, &v) / (m * m);
    let integral = (uu - 2.0 * uv + vv).max(0.0);
    Ok(integral / (1.0 / n + 1.0 / m).sqrt())
}

/// Average Cramér-von Mises statistic of `u_dat` against replicated generated samples.
pub fn acvm(u_dat: ArrayView2<'_, f64>, samples: &[Matrix]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("ACvM needs at least one generated sample"));
    }
    let stats = samples
        .iter()
        .map(|s| cvm_statistic(u_dat, s.view()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(stats::mean(&stats))
}

/// ACvM of `u_dat` against `n_rep` samples of size `n_gen` from `generator`.
pub fn acvm_from(
    u_dat: ArrayView2<'_, f64>,
    generator: Generator<'_>,
    n_gen: usize,
    n_rep: usize,
    seed: u64,
) -> Result<f64> {
    let tree = SeedTree::new(seed);
    let samples = (0..n_rep)
        .map(|r| generator.sample(n_gen, tree.derive("acvm", r as u64)))
        .collect::<Result<Vec<Matrix>>>()?;
    acvm(u_dat, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copulas::Family;
    use ndarray::{array, Array2};

    fn identity_losses(s: &[f64]) -> (Matrix, Vec<Margin>) {
        // u = Phi(s) with standard normal margins reproduces s
        let u = Array2::from_shape_fn((s.len(), 1), |(i, _)| crate::special::norm_cdf(s[i]));
        (u, standard_normal_margins(1))
    }

    #[test]
    fn es_hand_enumeration() {
        let s: Vec<f64> = (1..=100).map(|i| f64::from(i) / 50.0).collect();
        let (u, m) = identity_losses(&s);
        let es = psi1_es(u.view(), &m, 0.99).unwrap();
        assert!((es - 2.0).abs() < 1e-9);
        let same = Array2::from_elem((10, 1), 0.3);
        assert!(matches!(psi1_es(same.view(), &m, 0.99), Err(Error::Degenerate(_))));
    }

    #[test]
    fn allocation_special_cases() {
        let u = CopulaSpec::from_tau(Family::Clayton, 1, 0.5)
            .unwrap()
            .sample(1000, 1)
            .unwrap();
        let m = standard_normal_margins(1);
        assert_eq!(
            psi1_es(u.view(), &m, 0.95).unwrap(),
            psi2_alloc(u.view(), &m, 0.95, 0).unwrap()
        );
        let c = u.column(0).to_owned();
        let both = ndarray::stack(ndarray::Axis(1), &[c.view(), c.view()]).unwrap();
        let m2 = standard_normal_margins(2);
        let p1 = psi1_es(both.view(), &m2, 0.95).unwrap();
        let p2 = psi2_alloc(both.view(), &m2, 0.95, 1).unwrap();
        assert!((p1 - 2.0 * p2).abs() < 1e-12);
        assert!(psi2_alloc(both.view(), &m2, 0.95, 2).is_err());
    }

    #[test]
    fn basket_payoff_direct() {
        assert!((basket_payoff(&[1.2], 1.01, 0.01, 1.0) - 0.188_109).abs() < 1e-6);
        let u = array![[0.9, 0.9], [0.1, 0.5]];
        let mut opt = BasketCall::standard(2);
        opt.strike = 1e6;
        assert_eq!(psi3_basket(u.view(), &opt).unwrap(), 0.0);
    }

    #[test]
    fn grid_half_powers() {
        let g = log2_grid(10.0, 11.0, 0.5).unwrap();
        assert_eq!(g, vec![1024, 1448, 2048]);
        assert_eq!(log2_grid(10.0, 20.0, 0.5).unwrap().len(), 21);
    }

    #[test]
    fn rate_of_exact_power_laws() {
        let mk = |p: f64, c: f64| EstimatorRun {
            functional: "psi1".into(),
            generator: "copula-prs".into(),
            points: [1024usize, 2048, 4096, 8192]
                .iter()
                .map(|&n| GridPoint {
                    n_gen: n,
                    estimates: vec![],
                    mean: 0.0,
                    sd: c * (n as f64).powf(p),
                })
                .collect(),
        };
        assert!((convergence_rate(&mk(-0.5, 1.0)).unwrap().rate + 0.5).abs() < 1e-12);
        assert!((convergence_rate(&mk(-1.0, 3.0)).unwrap().rate + 1.0).abs() < 1e-12);
        assert!((convergence_rate(&mk(-0.5, 10.0)).unwrap().rate + 0.5).abs() < 1e-12);
        let mut few = mk(-0.5, 1.0);
        few.points[0].sd = 0.0;
        few.points[1].sd = 0.0;
        assert!(convergence_rate(&few).is_err());
    }

    #[test]
    fn bias_and_vrf() {
        assert_eq!(rel_bias(2.0, 2.0).unwrap(), 0.0);
        assert!((rel_bias(1.12 * 3.0, 3.0).unwrap() - 0.12).abs() < 1e-12);
        assert!((rel_bias(0.88 * 3.0, 3.0).unwrap() - 0.12).abs() < 1e-12);
        assert!(rel_bias(1.0, 0.0).is_err());
        assert_eq!(vrf(4.0, 1.0).unwrap(), 4.0);
        assert_eq!(vrf(2.5, 5.0).unwrap() * vrf(5.0, 2.5).unwrap(), 1.0);
        assert!(vrf(1.0, 0.0).is_err());
    }

    #[test]
    fn cvm_hand_example() {
        let u = array![[0.5]];
        let v = array![[0.25]];
        assert!((cvm_statistic(u.view(), v.view()).unwrap() - 0.176_777).abs() < 1e-6);
        let w = array![[0.2, 0.9], [0.4, 0.1], [0.7, 0.6]];
        assert_eq!(acvm(w.view(), std::slice::from_ref(&w)).unwrap(), 0.0);
    }

    #[test]
    fn replications_need_two() {
        let spec = CopulaSpec::from_tau(Family::Gaussian, 2, 0.5).unwrap();
        let f = Functional::BasketCall(BasketCall::standard(2));
        assert!(run_estimator(&f, Generator::CopulaPrs(&spec), &[256], 1, 0).is_err());
        let run = run_estimator(&f, Generator::CopulaQrs(&spec), &[256, 512], 3, 0).unwrap();
        assert_eq!(run.points.len(), 2);
        assert_eq!(run.points[0].estimates.len(), 3);
        let gumbel = CopulaSpec::from_tau(Family::Gumbel, 2, 0.5).unwrap();
        assert!(matches!(
            run_estimator(&f, Generator::CopulaQrs(&gumbel), &[256], 2, 0),
            Err(Error::Unsupported(_))
        ));
    }
}
