//! Mixture-RBF kernels and the biased (V-statistic) sample MMD.
//!
//! Kernel matrices are never materialized: sums are streamed over row chunks
//! with compensated accumulation, so memory stays O(chunk) and the three terms
//! of the V-statistic cancel when both samples hold the same points.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::par::{self, CHUNK_ROWS};
use crate::{Error, Matrix, Result};

/// Fixed bandwidths of the validation MMD.
pub const VALIDATION_BANDWIDTHS: [f64; 11] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// Predetermined bandwidths of the classic GMMN baseline.
pub const HPZ_BANDWIDTHS: [f64; 6] = [0.001, 0.01, 0.15, 0.25, 0.50, 0.75];

/// Bandwidths of a mixture RBF kernel, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KernelBank {
    bandwidths: Vec<f64>,
    /// `1 / (2 h^2)` per bandwidth.
    #[serde(skip)]
    coef: Vec<f64>,
}

impl KernelBank {
    pub fn new(mut bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::invalid("kernel bank needs at least one bandwidth"));
        }
        if let Some(h) = bandwidths.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive and finite, got {h}"
            )));
        }
        bandwidths.sort_by(f64::total_cmp);
        let coef = bandwidths.iter().map(|h| 0.5 / (h * h)).collect();
        Ok(Self { bandwidths, coef })
    }

    pub fn validation() -> Self {
        Self::new(VALIDATION_BANDWIDTHS.to_vec()).expect("constant bandwidths are valid")
    }

    pub fn hpz() -> Self {
        Self::new(HPZ_BANDWIDTHS.to_vec()).expect("constant bandwidths are valid")
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    /// `(sum_l k_l, sum_l k_l / h_l^2)` for squared distance `r`.
    #[inline]
    fn eval(&self, r: f64) -> (f64, f64) {
        let mut k = 0.0;
        let mut w = 0.0;
        for &c in &self.coef {
            let e = (-r * c).exp();
            k += e;
            w += 2.0 * c * e;
        }
        (k, w)
    }

    #[inline]
    fn eval_value(&self, r: f64) -> f64 {
        self.coef.iter().map(|&c| (-r * c).exp()).sum()
    }
}

impl TryFrom<Vec<f64>> for KernelBank {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KernelBank> for Vec<f64> {
    fn from(b: KernelBank) -> Self {
        b.bandwidths
    }
}

/// Gaussian RBF kernel `exp(-|x - y|^2 / (2 h^2))`.
pub fn rbf(x: &[f64], y: &[f64], h: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::mismatch(x.len(), y.len(), "rbf vector lengths"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    Ok((-sq_dist(x, y) / (2.0 * h * h)).exp())
}

/// Sum of RBF kernels over the bank's bandwidths.
pub fn mixture_kernel(x: &[f64], y: &[f64], bank: &KernelBank) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::mismatch(x.len(), y.len(), "kernel vector lengths"));
    }
    Ok(bank.eval_value(sq_dist(x, y)))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neumaier-compensated running sum; `sum + comp` tracks the exact total to
/// O(n eps^2).
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    sum: f64,
    comp: f64,
}

impl Acc {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: Acc) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn scaled(self, k: f64) -> Acc {
        // exact for powers of two
        Acc {
            sum: self.sum * k,
            comp: self.comp * k,
        }
    }
}

fn check_cols(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::mismatch(x.ncols(), y.ncols(), "sample column counts"));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::invalid("MMD needs non-empty samples"));
    }
    Ok(())
}

#[inline]
fn row<'a>(m: &'a ArrayView2<'_, f64>, i: usize) -> &'a [f64] {
    m.row(i).to_slice().expect("standard layout rows")
}

/// `sum_{i,j} k(x_i, y_j)` over all ordered pairs.
fn cross_sum(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bank: &KernelBank) -> Acc {
    let parts = par::map_chunks(x.nrows(), CHUNK_ROWS, |s, e| {
        let mut acc = Acc::default();
        for i in s..e {
            let xi = row(&x, i);
            for j in 0..y.nrows() {
                acc.add(bank.eval_value(sq_dist(xi, row(&y, j))));
            }
        }
        acc
    });
    let mut total = Acc::default();
    parts.into_iter().for_each(|p| total.merge(p));
    total
}

/// `sum_{i,j} k(x_i, x_j)` using symmetry.
fn self_sum(x: ArrayView2<'_, f64>, bank: &KernelBank) -> Acc {
    let n = x.nrows();
    let parts = par::map_chunks(n, CHUNK_ROWS, |s, e| {
        let mut acc = Acc::default();
        for i in s..e {
            let xi = row(&x, i);
            for j in i + 1..n {
                acc.add(bank.eval_value(sq_dist(xi, row(&x, j))));
            }
        }
        acc
    });
    let mut off = Acc::default();
    parts.into_iter().for_each(|p| off.merge(p));
    let mut total = off.scaled(2.0);
    total.add(n as f64 * bank.len() as f64);
    total
}

fn standard<'a>(m: ArrayView2<'a, f64>) -> ndarray::CowArray<'a, f64, ndarray::Ix2> {
    if m.is_standard_layout() {
        m.into()
    } else {
        m.as_standard_layout().into_owned().into()
    }
}

/// `a * k` as an unevaluated sum of two doubles (exact).
#[inline]
fn two_prod(a: f64, k: f64) -> (f64, f64) {
    let p = a * k;
    (p, a.mul_add(k, -p))
}

/// `kxx/n^2 + kyy/m^2 - 2 kxy/(nm)`, evaluated as
/// `(m^2 kxx + n^2 kyy - 2nm kxy) / (n^2 m^2)` with every product and sum in
/// compensated arithmetic so identical samples cancel to rounding of the
/// exact total rather than of each term.
fn combine(kxx: Acc, kyy: Acc, kxy: Acc, n: usize, m: usize) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let mut total = Acc::default();
    for (acc, k) in [(kxx, mf * mf), (kyy, nf * nf), (kxy, -2.0 * nf * mf)] {
        for part in [acc.sum, acc.comp] {
            let (p, e) = two_prod(part, k);
            total.add(p);
            total.add(e);
        }
    }
    (total.sum + total.comp) / (nf * nf * mf * mf)
}

fn same_sample(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> bool {
    x.dim() == y.dim() && x.iter().zip(y.iter()).all(|(a, b)| a == b)
}

/// Squared biased MMD, clamped below at 0.
pub fn mmd_sq(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bank: &KernelBank) -> Result<f64> {
    check_cols(&x, &y)?;
    if same_sample(&x, &y) {
        return Ok(0.0);
    }
    let (x, y) = (standard(x), standard(y));
    let kxx = self_sum(x.view(), bank);
    let kyy = self_sum(y.view(), bank);
    let kxy = cross_sum(x.view(), y.view(), bank);
    Ok(combine(kxx, kyy, kxy, x.nrows(), y.nrows()).max(0.0))
}

/// Biased sample MMD between the rows of `x` and `y`.
pub fn mmd(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bank: &KernelBank) -> Result<f64> {
    Ok(mmd_sq(x, y, bank)?.sqrt())
}

/// Gradient of the squared MMD with respect to the rows of `y`.
pub fn mmd_sq_grad_y(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bank: &KernelBank) -> Result<Matrix> {
    Ok(mmd_sq_and_grad(x, y, bank)?.1)
}

/// Squared MMD together with its gradient with respect to `y`, in one pass.
///
/// `d MMD^2 / d y_j = 2/m^2 sum_i w(y_j, y_i) (y_i - y_j) - 2/(nm) sum_i w(y_j, x_i) (x_i - y_j)`
/// with `w = sum_l k_l / h_l^2`.
pub fn mmd_sq_and_grad(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bank: &KernelBank) -> Result<(f64, Matrix)> {
    check_cols(&x, &y)?;
    let (x, y) = (standard(x), standard(y));
    let (x, y) = (x.view(), y.view());
    let (n, m, d) = (x.nrows(), y.nrows(), y.ncols());

    let kxx = self_sum(x, bank);

    // Cross term: each chunk of y rows owns its gradient rows.
    let cross_parts = par::map_chunks(m, CHUNK_ROWS, |s, e| {
        let mut acc = Acc::default();
        let mut g = vec![0.0; (e - s) * d];
        for (gj, j) in g.chunks_mut(d).zip(s..e) {
            let yj = row(&y, j);
            for i in 0..n {
                let xi = row(&x, i);
                let (k, w) = bank.eval(sq_dist(yj, xi));
                acc.add(k);
                for ((g, a), b) in gj.iter_mut().zip(xi).zip(yj) {
                    *g += w * (a - b);
                }
            }
        }
        (acc, g)
    });
    let mut kxy = Acc::default();
    let mut cross_grad = Vec::with_capacity(m * d);
    for (acc, g) in cross_parts {
        kxy.merge(acc);
        cross_grad.extend(g);
    }

    // Self term over pairs i < j; each chunk of i accumulates into its own buffer.
    let self_chunk = CHUNK_ROWS.max(m.div_ceil(16));
    let self_parts = par::map_chunks(m, self_chunk, |s, e| {
        let mut acc = Acc::default();
        let mut g = vec![0.0; m * d];
        for i in s..e {
            let yi = row(&y, i);
            for j in i + 1..m {
                let yj = row(&y, j);
                let (k, w) = bank.eval(sq_dist(yi, yj));
                acc.add(k);
                for c in 0..d {
                    let delta = w * (yj[c] - yi[c]);
                    g[i * d + c] += delta;
                    g[j * d + c] -= delta;
                }
            }
        }
        (acc, g)
    });
    let mut kyy_off = Acc::default();
    let mut self_grad = vec![0.0; m * d];
    for (acc, g) in self_parts {
        kyy_off.merge(acc);
        for (t, v) in self_grad.iter_mut().zip(g) {
            *t += v;
        }
    }
    let mut kyy = kyy_off.scaled(2.0);
    kyy.add(m as f64 * bank.len() as f64);

    let value = combine(kxx, kyy, kxy, n, m).max(0.0);
    let (nf, mf) = (n as f64, m as f64);
    let a = 2.0 / (mf * mf);
    let b = 2.0 / (nf * mf);
    let grad: Vec<f64> = self_grad.iter().zip(&cross_grad).map(|(s, c)| a * s - b * c).collect();
    Ok((value, Matrix::from_shape_vec((m, d), grad).expect("shape")))
}

/// Reference sample for the validation MMD with its self term cached.
#[derive(Debug, Clone)]
pub struct ValidationReference {
    data: Matrix,
    bank: KernelBank,
    self_term: Acc,
}

impl ValidationReference {
    pub fn new(data: Matrix) -> Result<Self> {
        Self::with_bank(data, KernelBank::validation())
    }

    pub fn with_bank(data: Matrix, bank: KernelBank) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid("validation reference sample is empty"));
        }
        let data = data.as_standard_layout().into_owned();
        let self_term = self_sum(data.view(), &bank);
        Ok(Self { data, bank, self_term })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// MMD between the cached reference and `y`.
    pub fn mmd(&self, y: ArrayView2<'_, f64>) -> Result<f64> {
        check_cols(&self.data.view(), &y)?;
        if same_sample(&self.data.view(), &y) {
            return Ok(0.0);
        }
        let y = standard(y);
        let kyy = self_sum(y.view(), &self.bank);
        let kxy = cross_sum(self.data.view(), y.view(), &self.bank);
        Ok(combine(self.self_term, kyy, kxy, self.data.nrows(), y.nrows())
            .max(0.0)
            .sqrt())
    }

    /// Average MMD over replicated generated samples.
    pub fn average_mmd(&self, samples: &[Matrix]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("validation MMD needs at least one generated sample"));
        }
        let mut total = 0.0;
        for s in samples {
            if s.dim() != self.data.dim() {
                return Err(Error::mismatch(self.data.nrows(), s.nrows(), "validation sample shape"));
            }
            total += self.mmd(s.view())?;
        }
        Ok(total / samples.len() as f64)
    }
}

/// Average validation MMD of `samples` against `x` with the fixed validation bandwidths.
pub fn validation_mmd(x: ArrayView2<'_, f64>, samples: &[Matrix]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("validation MMD needs at least one generated sample"));
    }
    ValidationReference::new(x.to_owned())?.average_mmd(samples)
}
