//! Digitally shifted Sobol' sequences and quasi-random sampling from generators.
//!
//! Points are generated in Gray-code order on a 32-bit integer lattice and the
//! all-zero first point is skipped, so point `k` of a stream is the Sobol' point
//! with index `k + 1`. Direction numbers are the Joe-Kuo `new-joe-kuo-6.1000`
//! table (1000 dimensions), embedded from `assets/` in its original text layout
//! `d s a m_1 .. m_s`; dimension 1 is implicit.
//!
//! Generation is index-addressable: each chunk starts from a directly computed
//! point and continues with the Gray-code recurrence.

use std::sync::OnceLock;

use ndarray::ArrayView2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::copulas::pseudo_obs;
use crate::nn::MlpModel;
use crate::par;
use crate::seed::{self, SeedTree};
use crate::special::norm_quantile;
use crate::stats;
use crate::{Error, Matrix, Result};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;
/// Points per index-addressed generation chunk.
const POINT_CHUNK: usize = 4096;

static DIRECTIONS: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();

/// Number of dimensions covered by the embedded direction numbers.
pub fn max_dim() -> usize {
    directions().len()
}

fn directions() -> &'static [[u32; BITS]] {
    DIRECTIONS.get_or_init(|| {
        parse_joe_kuo(include_str!("../assets/new-joe-kuo-6.1000.txt"))
            .expect("embedded direction numbers are well formed")
    })
}

/// Parses a Joe-Kuo direction-number table into per-dimension direction vectors.
pub fn parse_joe_kuo(text: &str) -> Result<Vec<[u32; BITS]>> {
    let mut dims = Vec::new();
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    dims.push(first);
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<u64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("direction numbers line {}: {e}", lineno + 1)))?;
        if fields.is_empty() {
            continue;
        }
        let [dim, s, a] = fields[..3.min(fields.len())] else {
            return Err(Error::invalid(format!(
                "direction numbers line {} too short",
                lineno + 1
            )));
        };
        let s = s as usize;
        let m = &fields[3..];
        if dim as usize != dims.len() + 1 || s == 0 || s > BITS || m.len() != s {
            return Err(Error::invalid(format!(
                "direction numbers line {} malformed",
                lineno + 1
            )));
        }
        let mut v = [0u32; BITS];
        for k in 0..BITS {
            if k < s {
                if m[k] == 0 || m[k].is_multiple_of(2) || m[k] >= 1 << (k + 1) {
                    return Err(Error::invalid(format!("invalid m value on line {}", lineno + 1)));
                }
                v[k] = (m[k] as u32) << (BITS - 1 - k);
            } else {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for i in 1..s {
                    if (a >> (s - 1 - i)) & 1 == 1 {
                        x ^= v[k - i];
                    }
                }
                v[k] = x;
            }
        }
        dims.push(v);
    }
    Ok(dims)
}

/// A digitally shifted Sobol' point stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SobolStream {
    dim: usize,
    shift: Vec<u32>,
    cursor: u64,
}

impl SobolStream {
    /// Unrandomized stream (zero shift).
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_shift(vec![0; dim])
    }

    /// Stream shifted by a mask drawn from `seed`.
    pub fn shifted(dim: usize, seed: u64) -> Result<Self> {
        let mut rng = SeedTree::new(seed).rng(seed::SOBOL_SHIFT, 0);
        Self::with_shift((0..dim).map(|_| rng.random::<u32>()).collect())
    }

    pub fn with_shift(shift: Vec<u32>) -> Result<Self> {
        let dim = shift.len();
        if dim == 0 {
            return Err(Error::invalid("Sobol' dimension must be positive"));
        }
        if dim > max_dim() {
            return Err(Error::invalid(format!(
                "Sobol' dimension {dim} exceeds the {} supported dimensions",
                max_dim()
            )));
        }
        Ok(Self { dim, shift, cursor: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> &[u32] {
        &self.shift
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// The next `n` points; advances the cursor.
    pub fn next_points(&mut self, n: usize) -> Result<Matrix> {
        let m = self.points_at(self.cursor, n)?;
        self.cursor += n as u64;
        Ok(m)
    }

    /// Points `start .. start + n` as integers on the 2^32 lattice, row-major.
    pub fn lattice_at(&self, start: u64, n: usize) -> Result<Vec<u32>> {
        if start.checked_add(n as u64).is_none_or(|e| e >= 1 << BITS) {
            return Err(Error::invalid("Sobol' index beyond 2^32 - 1"));
        }
        let d = self.dim;
        let dirs = &directions()[..d];
        let mut out = vec![0u32; n * d];
        let parts = par::map_chunks(n, POINT_CHUNK, |s, e| {
            let mut block = vec![0u32; (e - s) * d];
            let mut i = start + s as u64 + 1;
            let mut x = gray_point(dirs, i);
            for row in block.chunks_mut(d) {
                for ((o, xv), sh) in row.iter_mut().zip(&x).zip(&self.shift) {
                    *o = xv ^ sh;
                }
                i += 1;
                let c = i.trailing_zeros() as usize;
                if c < BITS {
                    for (xv, dir) in x.iter_mut().zip(dirs) {
                        *xv ^= dir[c];
                    }
                }
            }
            block
        });
        let mut pos = 0;
        for p in parts {
            out[pos..pos + p.len()].copy_from_slice(&p);
            pos += p.len();
        }
        Ok(out)
    }

    /// Points `start .. start + n` in `[0,1)^d`, without moving the cursor.
    pub fn points_at(&self, start: u64, n: usize) -> Result<Matrix> {
        let lattice = self.lattice_at(start, n)?;
        let data = lattice.into_iter().map(|v| f64::from(v) * SCALE).collect();
        Ok(Matrix::from_shape_vec((n, self.dim), data).expect("shape"))
    }
}

/// Sobol' point with Gray-code index `i` (unshifted).
fn gray_point(dirs: &[[u32; BITS]], i: u64) -> Vec<u32> {
    let g = i ^ (i >> 1);
    dirs.iter()
        .map(|dir| {
            let mut x = 0u32;
            for (b, v) in dir.iter().enumerate() {
                if (g >> b) & 1 == 1 {
                    x ^= v;
                }
            }
            x
        })
        .collect()
}

/// The first `n` points of `stream` (from index 0, whatever the cursor).
pub fn sobol_points(stream: &SobolStream, n: usize) -> Result<Matrix> {
    stream.points_at(0, n)
}

/// `n x d` matrix of iid standard normals drawn sequentially from `rng`.
pub fn normal_prior(rng: &mut seed::Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_shape_simple_fn((n, d), || StandardNormal.sample(rng))
}

/// Standard-normal prior points from uniform points; exact zeros become 2^-53.
pub fn normal_from_uniform(v: ArrayView2<'_, f64>) -> Matrix {
    v.mapv(|u| norm_quantile(if u == 0.0 { f64::EPSILON / 2.0 } else { u }))
}

/// Quasi-random sample from a generator: the first `n_gen` points of `stream`
/// mapped through the normal quantile, the model, and the pseudo-observation
/// transform.
pub fn qrs_from_model(model: &MlpModel, stream: &SobolStream, n_gen: usize) -> Result<Matrix> {
    if stream.dim() != model.input_dim() {
        return Err(Error::mismatch(
            model.input_dim(),
            stream.dim(),
            "Sobol' stream dimension",
        ));
    }
    let z = normal_from_uniform(sobol_points(stream, n_gen)?.view());
    Ok(pseudo_obs(model.predict(z.view())?.view()))
}

/// Pseudo-random counterpart of [`qrs_from_model`] with iid normal prior draws.
pub fn prs_from_model(model: &MlpModel, n_gen: usize, seed: u64) -> Result<Matrix> {
    let z = normal_prior(&mut SeedTree::new(seed).rng(seed::PRIOR, 0), n_gen, model.input_dim());
    Ok(pseudo_obs(model.predict(z.view())?.view()))
}

/// Source of points for the corner-count study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSampler {
    ShiftedSobol,
    Iid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailCountResult {
    pub dim: usize,
    pub n_gen: usize,
    pub n_tail: usize,
    pub threshold: f64,
    pub counts: Vec<u64>,
}

impl TailCountResult {
    pub fn mean(&self) -> f64 {
        let c: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        stats::mean(&c)
    }

    pub fn variance(&self) -> Result<f64> {
        let c: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        stats::sample_var(&c)
    }
}

/// Lower edge `1 - (n_tail / n_gen)^(1/d)` of the corner hypercube.
pub fn tail_threshold(d: usize, n_tail: usize, n_gen: usize) -> f64 {
    1.0 - (n_tail as f64 / n_gen as f64).powf(1.0 / d as f64)
}

/// For each `d`, counts the points of `b` independently randomized point sets of
/// size `n_gen = 5 * 2^d` that fall in the upper corner hypercube holding
/// `n_tail` points in expectation.
pub fn tail_count_study(
    dims: impl IntoIterator<Item = usize>,
    n_tail: usize,
    b: usize,
    seed: u64,
    sampler: TailSampler,
) -> Result<Vec<TailCountResult>> {
    let tree = SeedTree::new(seed);
    let mut results = Vec::new();
    for d in dims {
        if d == 0 || d > 40 {
            return Err(Error::invalid(format!("tail study dimension {d} out of range")));
        }
        let n_gen = 5usize << d;
        if n_tail == 0 || n_tail >= n_gen {
            return Err(Error::invalid("tail study needs 0 < n_tail < n_gen"));
        }
        let threshold = tail_threshold(d, n_tail, n_gen);
        let sub = tree.subtree("tail-study", d as u64);
        let counts = par::map_indices(b, |r| -> Result<u64> {
            match sampler {
                TailSampler::ShiftedSobol => {
                    let stream = SobolStream::shifted(d, sub.derive(seed::SOBOL_SHIFT, r as u64))?;
                    let mut count = 0u64;
                    let mut start = 0;
                    while start < n_gen {
                        let len = (n_gen - start).min(1 << 16);
                        let lat = stream.lattice_at(start as u64, len)?;
                        count += lat
                            .chunks(d)
                            .filter(|p| p.iter().all(|&v| f64::from(v) * SCALE > threshold))
                            .count() as u64;
                        start += len;
                    }
                    Ok(count)
                }
                TailSampler::Iid => {
                    let mut rng = sub.rng(seed::DATA, r as u64);
                    let mut count = 0u64;
                    for _ in 0..n_gen {
                        if (0..d).all(|_| rng.random::<f64>() > threshold) {
                            count += 1;
                        }
                    }
                    Ok(count)
                }
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        results.push(TailCountResult {
            dim: d,
            n_gen,
            n_tail,
            threshold,
            counts,
        });
    }
    Ok(results)
}
