//! Copula samplers, Kendall's tau parameterizations, pseudo-observations and
//! Rosenblatt inverses.
//!
//! Archimedean families are sampled through their frailty (Marshall-Olkin)
//! representation: Clayton with a Gamma frailty, Gumbel with a positive stable
//! frailty generated by the Chambers-Mallows-Stuck method. Elliptical families
//! use a Cholesky factor of the correlation matrix.

use ndarray::{Array2, ArrayView2};
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::par;
use crate::seed::{self, SeedTree};
use crate::special::{norm_cdf, norm_quantile, StudentT};
use crate::{Error, Matrix, Result};

/// Rows per independently seeded sampling chunk.
pub const SAMPLE_CHUNK: usize = 256;

/// Largest double below 1.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Family {
    Clayton,
    Gumbel,
    /// Gaussian copula.
    Gaussian,
    /// Student t copula with `df` degrees of freedom.
    StudentT {
        df: f64,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Gaussian => "gaussian",
            Family::StudentT { .. } => "t",
        }
    }

    /// Whether a Rosenblatt inverse is available for quasi-random sampling.
    pub fn has_rosenblatt_inverse(&self) -> bool {
        matches!(self, Family::Clayton | Family::Gaussian)
    }
}

/// How the strength of dependence is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dependence {
    /// Pairwise Kendall's tau in (0, 1).
    Tau(f64),
    /// Archimedean parameter.
    Theta(f64),
    /// Exchangeable correlation of an elliptical copula.
    Rho(f64),
    /// Full correlation matrix of an elliptical copula.
    Correlation(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: Family,
    pub dim: usize,
    pub dependence: Dependence,
}

/// Parameters after Kendall's tau conversion and validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Clayton { theta: f64 },
    Gumbel { theta: f64 },
    Gaussian { chol: Matrix },
    StudentT { chol: Matrix, df: f64 },
}

/// `theta = 2 tau / (1 - tau)`.
pub fn clayton_theta(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(2.0 * tau / (1.0 - tau))
}

/// `theta = 1 / (1 - tau)`.
pub fn gumbel_theta(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(1.0 / (1.0 - tau))
}

/// `rho = sin(pi tau / 2)`.
pub fn elliptical_rho(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok((std::f64::consts::FRAC_PI_2 * tau).sin())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("Kendall's tau must lie in (0, 1), got {tau}")))
    }
}

/// `(1 - rho) I + rho J`.
pub fn exchangeable_correlation(dim: usize, rho: f64) -> Matrix {
    Array2::from_shape_fn((dim, dim), |(i, j)| if i == j { 1.0 } else { rho })
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::mismatch(n, a.ncols(), "cholesky square matrix"));
    }
    let mut l = Matrix::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                let v = a[[i, i]] - s;
                if !(v > 0.0) {
                    return Err(Error::invalid("correlation matrix is not positive definite"));
                }
                l[[i, i]] = v.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    Ok(l)
}

impl CopulaSpec {
    pub fn from_tau(family: Family, dim: usize, tau: f64) -> Result<Self> {
        let spec = Self {
            family,
            dim,
            dependence: Dependence::Tau(tau),
        };
        spec.resolve()?;
        Ok(spec)
    }

    /// Converts the dependence description into sampler parameters.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.dim == 0 {
            return Err(Error::invalid("copula dimension must be positive"));
        }
        match (&self.family, &self.dependence) {
            (Family::Clayton, Dependence::Tau(t)) => Ok(Resolved::Clayton {
                theta: clayton_theta(*t)?,
            }),
            (Family::Clayton, Dependence::Theta(th)) if *th > 0.0 && th.is_finite() => {
                Ok(Resolved::Clayton { theta: *th })
            }
            (Family::Gumbel, Dependence::Tau(t)) => Ok(Resolved::Gumbel {
                theta: gumbel_theta(*t)?,
            }),
            (Family::Gumbel, Dependence::Theta(th)) if *th >= 1.0 && th.is_finite() => {
                Ok(Resolved::Gumbel { theta: *th })
            }
            (Family::Gaussian | Family::StudentT { .. }, dep) => {
                let corr = match dep {
                    Dependence::Tau(t) => exchangeable_correlation(self.dim, elliptical_rho(*t)?),
                    Dependence::Rho(r) => exchangeable_correlation(self.dim, *r),
                    Dependence::Correlation(rows) => self.correlation_matrix(rows)?,
                    Dependence::Theta(_) => {
                        return Err(Error::invalid(
                            "elliptical copulas take tau, rho or a correlation matrix",
                        ))
                    }
                };
                let chol = cholesky(&corr)?;
                match self.family {
                    Family::StudentT { df } => {
                        if !(df > 0.0 && df.is_finite()) {
                            return Err(Error::invalid(format!("t copula needs df > 0, got {df}")));
                        }
                        Ok(Resolved::StudentT { chol, df })
                    }
                    _ => Ok(Resolved::Gaussian { chol }),
                }
            }
            (f, d) => Err(Error::invalid(format!(
                "invalid dependence {d:?} for the {} copula",
                f.name()
            ))),
        }
    }

    fn correlation_matrix(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let d = self.dim;
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!("correlation matrix must be {d}x{d}")));
        }
        let m = Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]);
        for i in 0..d {
            if (m[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("correlation matrix needs a unit diagonal"));
            }
            for j in 0..i {
                if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 {
                    return Err(Error::invalid("correlation matrix must be symmetric"));
                }
            }
        }
        Ok(m)
    }

    /// Pairwise Kendall's tau of this copula (elliptical: first pair).
    pub fn kendall_tau(&self) -> Result<f64> {
        Ok(match self.resolve()? {
            Resolved::Clayton { theta } => theta / (theta + 2.0),
            Resolved::Gumbel { theta } => 1.0 - 1.0 / theta,
            Resolved::Gaussian { chol } | Resolved::StudentT { chol, .. } => {
                if self.dim < 2 {
                    0.0
                } else {
                    let rho = chol[[1, 0]] * chol[[0, 0]];
                    std::f64::consts::FRAC_2_PI * rho.asin()
                }
            }
        })
    }

    /// `n` iid draws in `(0,1)^d`, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let resolved = self.resolve()?;
        let d = self.dim;
        let tree = SeedTree::new(seed);
        let t_dist = match &resolved {
            Resolved::StudentT { df, .. } => Some((
                StudentT::new(*df)?,
                ChiSquared::new(*df).map_err(|e| Error::invalid(e.to_string()))?,
            )),
            _ => None,
        };
        let gamma = match &resolved {
            Resolved::Clayton { theta } => {
                Some(Gamma::new(1.0 / theta, 1.0).map_err(|e| Error::invalid(e.to_string()))?)
            }
            _ => None,
        };
        let mut data = vec![0.0; n * d];
        if n == 0 {
            return Ok(Matrix::zeros((0, d)));
        }
        par::fill_rows(&mut data, d, SAMPLE_CHUNK, |row0, block| {
            let mut rng = tree.rng(seed::DATA, (row0 / SAMPLE_CHUNK) as u64);
            let mut z = vec![0.0; d];
            for out in block.chunks_mut(d) {
                match &resolved {
                    Resolved::Clayton { theta } => {
                        let v: f64 = gamma.as_ref().expect("gamma").sample(&mut rng);
                        for u in out.iter_mut() {
                            let e: f64 = Exp1.sample(&mut rng);
                            *u = (-(e / v).ln_1p() / theta).exp();
                        }
                    }
                    Resolved::Gumbel { theta } => {
                        let v = positive_stable(&mut rng, 1.0 / theta);
                        for u in out.iter_mut() {
                            let e: f64 = Exp1.sample(&mut rng);
                            *u = (-(e / v).powf(1.0 / theta)).exp();
                        }
                    }
                    Resolved::Gaussian { chol } => {
                        correlated_normals(&mut rng, chol, &mut z, out);
                        for u in out.iter_mut() {
                            *u = norm_cdf(*u);
                        }
                    }
                    Resolved::StudentT { chol, df } => {
                        let (t, chi) = t_dist.as_ref().expect("t");
                        correlated_normals(&mut rng, chol, &mut z, out);
                        let w: f64 = chi.sample(&mut rng);
                        let scale = (df / w).sqrt();
                        for u in out.iter_mut() {
                            *u = t.cdf(*u * scale);
                        }
                    }
                }
                for u in out.iter_mut() {
                    *u = open_unit(*u);
                }
            }
        });
        Ok(Matrix::from_shape_vec((n, d), data).expect("shape"))
    }

    /// Maps points `v` of `[0,1)^d` through the inverse Rosenblatt transform.
    ///
    /// Only Clayton and Gaussian copulas are supported.
    pub fn rosenblatt_inverse(&self, v: ArrayView2<'_, f64>) -> Result<Matrix> {
        if v.ncols() != self.dim {
            return Err(Error::mismatch(self.dim, v.ncols(), "rosenblatt input columns"));
        }
        let resolved = self.resolve()?;
        let d = self.dim;
        let n = v.nrows();
        let v = v.as_standard_layout();
        let src = v.as_slice().expect("standard layout");
        let mut data = vec![0.0; n * d];
        match resolved {
            Resolved::Clayton { theta } => {
                par::fill_rows(&mut data, d, SAMPLE_CHUNK, |row0, block| {
                    for (r, out) in block.chunks_mut(d).enumerate() {
                        let i = row0 + r;
                        clayton_conditional_inverse(theta, &src[i * d..(i + 1) * d], out);
                    }
                });
            }
            Resolved::Gaussian { chol } => {
                par::fill_rows(&mut data, d, SAMPLE_CHUNK, |row0, block| {
                    let mut z = vec![0.0; d];
                    for (r, out) in block.chunks_mut(d).enumerate() {
                        let i = row0 + r;
                        for (zj, &vj) in z.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                            *zj = norm_quantile(open_unit(vj));
                        }
                        for (j, o) in out.iter_mut().enumerate() {
                            let x: f64 = (0..=j).map(|k| chol[[j, k]] * z[k]).sum();
                            *o = open_unit(norm_cdf(x));
                        }
                    }
                });
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "no Rosenblatt inverse for the {} copula",
                    self.family.name()
                )))
            }
        }
        Ok(Matrix::from_shape_vec((n, d), data).expect("shape"))
    }
}

/// Clayton conditional quantiles applied sequentially.
///
/// With `s = sum_{k<j} (u_k^-theta - 1)` and `a = theta / (1 + (j-1) theta)`,
/// `u_j = (1 + (1 + s)(v_j^-a - 1))^(-1/theta)`.
fn clayton_conditional_inverse(theta: f64, v: &[f64], out: &mut [f64]) {
    let mut s = 0.0;
    for (j, (&vj, o)) in v.iter().zip(out.iter_mut()).enumerate() {
        let u = if j == 0 {
            open_unit(vj)
        } else {
            let a = theta / (1.0 + j as f64 * theta);
            let phi = (1.0 + s) * (-a * open_unit(vj).ln()).exp_m1();
            open_unit((-phi.ln_1p() / theta).exp())
        };
        *o = u;
        s += (-theta * u.ln()).exp_m1();
    }
}

fn correlated_normals(rng: &mut seed::Rng, chol: &Matrix, z: &mut [f64], out: &mut [f64]) {
    for zj in z.iter_mut() {
        *zj = StandardNormal.sample(rng);
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..=j).map(|k| chol[[j, k]] * z[k]).sum();
    }
}

/// Positive stable variate with Laplace transform `exp(-s^alpha)`, `alpha` in (0, 1].
pub fn positive_stable(rng: &mut impl rand::Rng, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let theta = loop {
        let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
        if t > 0.0 {
            break t;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * theta).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

fn open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

/// Columnwise `rank / (n + 1)` where the rank of `y_ij` counts the `y_kj <= y_ij`.
pub fn pseudo_obs(y: ArrayView2<'_, f64>) -> Matrix {
    let (n, d) = y.dim();
    let cols = par::map_indices(d, |j| {
        let col = y.column(j);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut k = i;
            while k + 1 < n && col[idx[k + 1]] == col[idx[i]] {
                k += 1;
            }
            let r = (k + 1) as f64 / (n + 1) as f64;
            for &t in &idx[i..=k] {
                ranks[t] = r;
            }
            i = k + 1;
        }
        ranks
    });
    Array2::from_shape_fn((n, d), |(i, j)| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{kendall_tau, ks_uniform};
    use ndarray::array;

    #[test]
    fn tau_conversions() {
        assert_eq!(clayton_theta(0.5).unwrap(), 2.0);
        assert_eq!(gumbel_theta(0.5).unwrap(), 2.0);
        assert!((elliptical_rho(0.5).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(clayton_theta(0.0).is_err());
        assert!(gumbel_theta(1.0).is_err());
        for fam in [
            Family::Clayton,
            Family::Gumbel,
            Family::Gaussian,
            Family::StudentT { df: 4.0 },
        ] {
            let spec = CopulaSpec::from_tau(fam, 3, 0.3).unwrap();
            assert!((spec.kendall_tau().unwrap() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_in_open_cube_and_deterministic() {
        for fam in [
            Family::Clayton,
            Family::Gumbel,
            Family::Gaussian,
            Family::StudentT { df: 4.0 },
        ] {
            let spec = CopulaSpec::from_tau(fam, 3, 0.5).unwrap();
            let a = spec.sample(1000, 7).unwrap();
            assert_eq!(a, spec.sample(1000, 7).unwrap());
            assert_ne!(a, spec.sample(1000, 8).unwrap());
            assert!(a.iter().all(|&u| u > 0.0 && u < 1.0));
        }
    }

    #[test]
    fn clayton_sample_tau_and_margins() {
        let spec = CopulaSpec::from_tau(Family::Clayton, 2, 0.5).unwrap();
        let u = spec.sample(10_000, 1).unwrap();
        let c0 = u.column(0).to_vec();
        let c1 = u.column(1).to_vec();
        assert!((kendall_tau(&c0, &c1).unwrap() - 0.5).abs() < 0.03);
        assert!(ks_uniform(&c0).unwrap().1 > 0.01);
    }

    #[test]
    fn gumbel_theta_one_is_independence() {
        let spec = CopulaSpec {
            family: Family::Gumbel,
            dim: 2,
            dependence: Dependence::Theta(1.0),
        };
        let u = spec.sample(5000, 3).unwrap();
        let tau = kendall_tau(&u.column(0).to_vec(), &u.column(1).to_vec()).unwrap();
        assert!(tau.abs() < 0.03);
    }

    #[test]
    fn pseudo_obs_examples() {
        let y = array![[3.1], [-0.2], [0.7]];
        assert_eq!(pseudo_obs(y.view()), array![[0.75], [0.25], [0.5]]);
        let ties = array![[1.0], [1.0], [0.0]];
        assert_eq!(pseudo_obs(ties.view()), array![[0.75], [0.75], [0.25]]);
        let y = array![[0.3, 9.0], [0.1, 2.0], [0.7, 5.0], [0.2, -1.0]];
        let p = pseudo_obs(y.view());
        assert_eq!(pseudo_obs(p.view()), p);
    }

    #[test]
    fn rosenblatt_special_cases() {
        let v = array![[0.1, 0.9, 0.5], [0.3, 0.2, 0.999]];
        let g = CopulaSpec {
            family: Family::Gaussian,
            dim: 3,
            dependence: Dependence::Rho(0.0),
        };
        let u = g.rosenblatt_inverse(v.view()).unwrap();
        assert!(u.iter().zip(v.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let c = CopulaSpec {
            family: Family::Clayton,
            dim: 3,
            dependence: Dependence::Theta(1e-8),
        };
        let u = c.rosenblatt_inverse(v.view()).unwrap();
        assert!(u.iter().zip(v.iter()).all(|(a, b)| (a - b).abs() < 1e-5));
        let c = CopulaSpec::from_tau(Family::Clayton, 3, 0.5).unwrap();
        let u = c.rosenblatt_inverse(v.view()).unwrap();
        assert_eq!(u.column(0), v.column(0));
        let gu = CopulaSpec::from_tau(Family::Gumbel, 3, 0.5).unwrap();
        assert!(matches!(gu.rosenblatt_inverse(v.view()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn invalid_specs() {
        let bad = CopulaSpec {
            family: Family::Gaussian,
            dim: 2,
            dependence: Dependence::Correlation(vec![vec![1.0, 1.5], vec![1.5, 1.0]]),
        };
        assert!(bad.resolve().is_err());
        let bad = CopulaSpec {
            family: Family::Gumbel,
            dim: 2,
            dependence: Dependence::Theta(0.5),
        };
        assert!(bad.resolve().is_err());
        let bad = CopulaSpec {
            family: Family::Clayton,
            dim: 2,
            dependence: Dependence::Rho(0.5),
        };
        assert!(bad.resolve().is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = exchangeable_correlation(4, 0.6);
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        assert!(back.iter().zip(a.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
    }
}
