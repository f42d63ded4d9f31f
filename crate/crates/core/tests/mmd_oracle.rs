use agmmn::mmd::{mixture_kernel, mmd_sq, validation_mmd, KernelBank, HPZ_BANDWIDTHS};
use agmmn::Matrix;
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| rng.random::<f64>())
}

/// Textbook triple loop.
fn naive_mmd_sq(x: &Matrix, y: &Matrix, h: &[f64]) -> f64 {
    let k = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        h.iter().map(|h| (-r2 / (2.0 * h * h)).exp()).sum()
    };
    let mean = |a: &Matrix, b: &Matrix| {
        let mut s = 0.0;
        for u in a.rows() {
            for v in b.rows() {
                s += k(u, v);
            }
        }
        s / (a.nrows() * b.nrows()) as f64
    };
    mean(x, x) - 2.0 * mean(x, y) + mean(y, y)
}

#[test]
fn matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = KernelBank::hpz();
    for _ in 0..20 {
        let d = rng.random_range(1..6);
        let (n, m) = (rng.random_range(2..40), rng.random_range(2..40));
        let x = uniform(&mut rng, n, d);
        let y = uniform(&mut rng, m, d);
        let got = mmd_sq(x.view(), y.view(), &bank).unwrap();
        let want = naive_mmd_sq(&x, &y, &HPZ_BANDWIDTHS);
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bank = KernelBank::validation();
    for _ in 0..100 {
        let x = uniform(&mut rng, 30, 4);
        assert!(mmd_sq(x.view(), x.view(), &bank).unwrap().abs() <= 1e-12);
        let p: Vec<f64> = x.row(0).to_vec();
        assert_eq!(mixture_kernel(&p, &p, &bank).unwrap(), bank.len() as f64);
    }
}

#[test]
fn validation_average_over_replicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = uniform(&mut rng, 50, 3);
    let a = uniform(&mut rng, 50, 3);
    let b = uniform(&mut rng, 50, 3);
    let bank = KernelBank::validation();
    let want =
        (mmd_sq(x.view(), a.view(), &bank).unwrap().sqrt() + mmd_sq(x.view(), b.view(), &bank).unwrap().sqrt()) / 2.0;
    let got = validation_mmd(x.view(), &[a, b]).unwrap();
    assert!((got - want).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_and_permutation_invariant(seed in any::<u64>(), n in 1usize..30, m in 1usize..30, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, n, d);
        let y = uniform(&mut rng, m, d);
        let bank = KernelBank::hpz();
        let xy = mmd_sq(x.view(), y.view(), &bank).unwrap();
        let yx = mmd_sq(y.view(), x.view(), &bank).unwrap();
        prop_assert!((xy - yx).abs() <= 1e-12);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let xp = x.select(Axis(0), &rows);
        let p = mmd_sq(xp.view(), y.view(), &bank).unwrap();
        prop_assert!((xy - p).abs() <= 1e-12);
        prop_assert!(xy >= 0.0);
    }
}
