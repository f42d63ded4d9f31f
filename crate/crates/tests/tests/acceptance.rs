//! Acceptance checks. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line.
//!
//! The checks run one at a time so each runtime budget is measured on its own.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use agmmn::bandwidth::{learning_rate, patience, prob_vector};
use agmmn::copulas::{CopulaSpec, Dependence, Family};
use agmmn::estimators::{convergence_rate, cvm_statistic, log2_grid, run_estimator, BasketCall, Functional, Generator};
use agmmn::lowdisc::{normal_prior, sobol_points, tail_count_study, SobolStream, TailSampler};
use agmmn::mmd::{mixture_kernel, mmd_sq, mmd_sq_grad_y, KernelBank};
use agmmn::nn::{MlpArchitecture, MlpModel};
use agmmn::seed::{self, SeedTree};
use agmmn::stats::{kendall_tau, ks_uniform, spearman};
use agmmn::trainer::{train, FixedBank, TrainConfig, TrainMode};
use agmmn::Matrix;
use agmmn_cli::{run, Experiment, RunConfig};
use ndarray::{array, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

struct Check {
    id: u32,
    title: &'static str,
    budget: Option<Duration>,
    start: Instant,
    notes: Vec<String>,
    ok: bool,
}

impl Check {
    fn new(id: u32, title: &'static str, budget_secs: Option<u64>) -> Self {
        Self {
            id,
            title,
            budget: budget_secs.map(Duration::from_secs),
            start: Instant::now(),
            notes: Vec::new(),
            ok: true,
        }
    }

    fn expect(&mut self, cond: bool, note: impl Into<String>) {
        let note = note.into();
        if !cond {
            self.ok = false;
            self.notes.push(format!("FAILED {note}"));
        } else {
            self.notes.push(note);
        }
    }

    fn finish(mut self) {
        let elapsed = self.start.elapsed();
        if let Some(b) = self.budget {
            self.expect(
                elapsed < b,
                format!("runtime {:.1}s < {}s", elapsed.as_secs_f64(), b.as_secs()),
            );
        }
        let verdict = if self.ok { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "ACCEPTANCE {:>2} {verdict} {} [{}]",
            self.id,
            self.title,
            self.notes.join("; ")
        )
        .unwrap();
        drop(out);
        assert!(self.ok, "criterion {} failed: {}", self.id, self.notes.join("; "));
    }
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn rng(label: &str) -> seed::Rng {
    SeedTree::new(2024).rng(label, 0)
}

fn uniform(rng: &mut seed::Rng, r: usize, c: usize) -> Matrix {
    Array2::from_shape_fn((r, c), |_| rng.random::<f64>())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

#[test]
fn criterion_01_gradients() {
    let _g = serial();
    let mut c = Check::new(1, "gradients match central finite differences", Some(10));
    let mut rng = rng("gradients");

    let mut worst_nn = 0.0f64;
    for case in 0..25 {
        let d_in = rng.random_range(1..5);
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..8)).collect();
        let d_out = rng.random_range(1..4);
        let arch = MlpArchitecture::new(d_in, hidden, d_out).unwrap();
        let model = MlpModel::init(arch.clone(), case).unwrap();
        let z = normal_prior(&mut rng, 7, d_in);
        let r = normal_prior(&mut rng, 7, d_out);
        let (_, tape) = model.forward(z.view()).unwrap();
        let analytic: Vec<f64> = model
            .backward(&tape, r.view())
            .unwrap()
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect();
        let loss = |p: &[f64]| (&MlpModel::from_flat(arch.clone(), p).unwrap().predict(z.view()).unwrap() * &r).sum();
        let theta = model.to_flat();
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[k] += 1e-6;
                dn[k] -= 1e-6;
                (loss(&up) - loss(&dn)) / 2e-6
            })
            .collect();
        worst_nn = worst_nn.max(rel_err(&analytic, &numeric));
    }
    c.expect(
        worst_nn < 1e-4,
        format!("network worst rel err {worst_nn:.2e} < 1e-4 over 25"),
    );

    let mut worst_mmd = 0.0f64;
    for _ in 0..25 {
        let d = rng.random_range(1..5);
        let (n, m) = (rng.random_range(3..10), rng.random_range(3..10));
        let x = uniform(&mut rng, n, d);
        let y = uniform(&mut rng, m, d);
        let bank = KernelBank::new(
            (0..rng.random_range(1..5))
                .map(|_| rng.random_range(0.2..1.5))
                .collect(),
        )
        .unwrap();
        let g = mmd_sq_grad_y(x.view(), y.view(), &bank).unwrap();
        let mut numeric = Matrix::zeros(y.dim());
        for j in 0..m {
            for k in 0..d {
                let (mut up, mut dn) = (y.clone(), y.clone());
                up[[j, k]] += 1e-5;
                dn[[j, k]] -= 1e-5;
                numeric[[j, k]] =
                    (mmd_sq(x.view(), up.view(), &bank).unwrap() - mmd_sq(x.view(), dn.view(), &bank).unwrap()) / 2e-5;
            }
        }
        worst_mmd = worst_mmd.max(rel_err(g.as_slice().unwrap(), numeric.as_slice().unwrap()));
    }
    c.expect(
        worst_mmd < 1e-6,
        format!("MMD worst rel err {worst_mmd:.2e} < 1e-6 over 25"),
    );
    c.finish();
}

#[test]
fn criterion_02_mmd_identities() {
    let _g = serial();
    let mut c = Check::new(2, "MMD identities", Some(5));
    let mut rng = rng("identities");
    let bank = KernelBank::validation();
    let (mut self_max, mut sym_max, mut perm_max) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..8);
        let (n, m) = (rng.random_range(2..60), rng.random_range(2..60));
        let x = uniform(&mut rng, n, d);
        let y = uniform(&mut rng, m, d);
        self_max = self_max.max(mmd_sq(x.view(), x.view(), &bank).unwrap().abs().sqrt());
        let xy = mmd_sq(x.view(), y.view(), &bank).unwrap();
        sym_max = sym_max.max((xy - mmd_sq(y.view(), x.view(), &bank).unwrap()).abs());
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let mut cols: Vec<usize> = (0..m).collect();
        cols.shuffle(&mut rng);
        let p = mmd_sq(x.select(Axis(0), &rows).view(), y.select(Axis(0), &cols).view(), &bank).unwrap();
        perm_max = perm_max.max((xy - p).abs());
    }
    c.expect(
        self_max <= 1e-12,
        format!("max mmd(X,X) {self_max:.1e} <= 1e-12 over 100"),
    );
    c.expect(sym_max <= 1e-12, format!("max symmetry gap {sym_max:.1e}"));
    c.expect(perm_max <= 1e-12, format!("max permutation gap {perm_max:.1e}"));
    let p = [0.3, 0.7, 0.1];
    let k = mixture_kernel(&p, &p, &bank).unwrap();
    c.expect(k == bank.len() as f64, format!("k(x,x) = {k} = n_krn"));
    c.finish();
}

#[test]
fn criterion_03_formula_tables() {
    let _g = serial();
    let mut c = Check::new(3, "probability vector, patience and learning-rate tables", None);
    let want = [0.95, 0.335876, 0.11875, 0.041985, 0.014844, 0.005248];
    let got = prob_vector(6);
    let gap = got.iter().zip(want).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    c.expect(
        got.len() == 6 && gap < 1e-6,
        format!("prob_vector(6) max gap {gap:.1e}"),
    );
    let table = [(1, 20), (20, 20), (21, 20), (60, 35), (100, 50), (101, 50), (500, 50)];
    let bad: Vec<_> = table.iter().filter(|(t, p)| patience(*t) != *p).collect();
    c.expect(bad.is_empty(), format!("patience table mismatches {bad:?}"));
    let lr = learning_rate(2);
    c.expect((lr - 4e-5).abs() < 1e-18, format!("learning_rate(2) = {lr:e}"));
    c.finish();
}

#[test]
fn criterion_04_copulas() {
    let _g = serial();
    let mut c = Check::new(4, "copula samplers: Kendall's tau and uniform margins", Some(60));
    for family in [
        Family::Clayton,
        Family::Gumbel,
        Family::Gaussian,
        Family::StudentT { df: 4.0 },
    ] {
        for tau in [0.25, 0.5] {
            let u = CopulaSpec::from_tau(family.clone(), 2, tau)
                .unwrap()
                .sample(20_000, 4)
                .unwrap();
            let (a, b) = (u.column(0).to_vec(), u.column(1).to_vec());
            let t = kendall_tau(&a, &b).unwrap();
            let p = ks_uniform(&a).unwrap().1.min(ks_uniform(&b).unwrap().1);
            c.expect(
                (t - tau).abs() <= 0.02 && p > 0.01,
                format!("{} {tau}: tau {t:.4}, min KS p {p:.3}", family.name()),
            );
        }
    }
    c.finish();
}

#[test]
fn criterion_05_rosenblatt_qmc() {
    let _g = serial();
    let mut c = Check::new(5, "conditional-inverse pushforward of Sobol' points", None);
    let clayton = CopulaSpec {
        family: Family::Clayton,
        dim: 2,
        dependence: Dependence::Theta(2.0),
    };
    let v = sobol_points(&SobolStream::new(2).unwrap(), 1 << 14).unwrap();
    let u = clayton.rosenblatt_inverse(v.view()).unwrap();
    let t = kendall_tau(&u.column(0).to_vec(), &u.column(1).to_vec()).unwrap();
    c.expect((t - 0.5).abs() <= 0.02, format!("Clayton theta 2 tau {t:.4}"));
    let gauss = CopulaSpec {
        family: Family::Gaussian,
        dim: 5,
        dependence: Dependence::Rho(0.0),
    };
    let v = sobol_points(&SobolStream::shifted(5, 3).unwrap(), 4096).unwrap();
    let u = gauss.rosenblatt_inverse(v.view()).unwrap();
    let worst = (&u - &v).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    c.expect(worst <= 1e-9, format!("Gaussian rho 0 max deviation {worst:.1e}"));
    c.finish();
}

fn is_net(lattice: &[u32], m: u32) -> bool {
    (0..=m).all(|k1| {
        let k2 = m - k1;
        let mut seen = vec![0u32; 1 << m];
        for p in lattice.chunks(2) {
            let a = if k1 == 0 { 0 } else { p[0] >> (32 - k1) };
            let b = if k2 == 0 { 0 } else { p[1] >> (32 - k2) };
            seen[((a << k2) | b) as usize] += 1;
        }
        seen.iter().all(|&c| c == 1)
    })
}

#[test]
fn criterion_06_sobol() {
    let _g = serial();
    let mut c = Check::new(6, "Sobol' prefix and elementary intervals", None);
    let p = SobolStream::new(1).unwrap().points_at(0, 4).unwrap();
    c.expect(
        p.column(0).to_vec() == [0.5, 0.75, 0.25, 0.375],
        "d=1 prefix 0.5, 0.75, 0.25, 0.375",
    );
    let plain = SobolStream::new(2).unwrap();
    let shifted = SobolStream::shifted(2, 7).unwrap();
    let (mut plain_ok, mut shifted_ok) = (true, true);
    for m in 0..=8u32 {
        let n = 1usize << m;
        let start = n as u64 - 1;
        plain_ok &= is_net(&plain.lattice_at(start, n).unwrap(), m);
        shifted_ok &= is_net(&shifted.lattice_at(start, n).unwrap(), m);
    }
    c.expect(plain_ok, "d=2 (0,m,2)-nets for m <= 8");
    c.expect(shifted_ok, "digitally shifted nets for m <= 8");
    c.finish();
}

#[test]
fn criterion_07_tail_count_variance() {
    let _g = serial();
    let mut c = Check::new(7, "tail-count variance grows with dimension", Some(600));
    let res = tail_count_study(10..=16, 1000, 100, 7, TailSampler::ShiftedSobol).unwrap();
    let dims: Vec<f64> = res.iter().map(|r| r.dim as f64).collect();
    let vars: Vec<f64> = res.iter().map(|r| r.variance().unwrap()).collect();
    let rho = spearman(&dims, &vars).unwrap();
    let shown: Vec<String> = res
        .iter()
        .zip(&vars)
        .map(|(r, v)| format!("d{} {v:.0}", r.dim))
        .collect();
    c.expect(rho > 0.8, format!("Spearman {rho:.3} > 0.8 ({})", shown.join(", ")));
    c.finish();
}

#[test]
fn criterion_08_adaptive_vs_fixed_training() {
    let _g = serial();
    let mut c = Check::new(8, "adaptive minimum validation MMD <= fixed-bank minimum", Some(1800));
    let x = CopulaSpec::from_tau(Family::Clayton, 10, 0.5)
        .unwrap()
        .sample(5000, 100)
        .unwrap();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in 1..=5u64 {
        let base = TrainConfig {
            n_mepo: 200,
            n_val: Some(1000),
            seed: s,
            ..TrainConfig::default()
        };
        let adaptive = TrainConfig {
            mode: TrainMode::Adaptive,
            early_stopping: true,
            ..base.clone()
        };
        let fixed = TrainConfig {
            mode: TrainMode::Fixed { bank: FixedBank::Hpz },
            early_stopping: false,
            ..base
        };
        let init = MlpModel::init(MlpArchitecture::new(10, vec![300], 10).unwrap(), s).unwrap();
        let a = train(x.view(), &adaptive, init.clone()).unwrap().min_val_loss();
        let f = train(x.view(), &fixed, init).unwrap().min_val_loss();
        if a <= f {
            wins += 1;
        }
        pairs.push(format!("{a:.4}/{f:.4}"));
    }
    c.expect(
        wins >= 4,
        format!("adaptive wins {wins}/5 (adaptive/fixed: {})", pairs.join(", ")),
    );
    c.finish();
}

#[test]
fn criterion_09_rqmc_ordering() {
    let _g = serial();
    let mut c = Check::new(
        9,
        "randomized quasi-Monte Carlo beats Monte Carlo for the basket call",
        Some(900),
    );
    let spec = CopulaSpec::from_tau(Family::Gaussian, 5, 0.5).unwrap();
    let psi3 = Functional::BasketCall(BasketCall::standard(5));
    let grid = log2_grid(10.0, 16.0, 0.5).unwrap();
    let prs = run_estimator(&psi3, Generator::CopulaPrs(&spec), &grid, 25, 9).unwrap();
    let qrs = run_estimator(&psi3, Generator::CopulaQrs(&spec), &grid, 25, 9).unwrap();
    let mut ordered = true;
    for (p, q) in prs.points.iter().zip(&qrs.points) {
        if p.n_gen >= 1 << 12 {
            ordered &= q.sd < p.sd;
        }
    }
    let ratio = prs.points.last().unwrap().sd / qrs.points.last().unwrap().sd;
    c.expect(
        ordered,
        format!("QRS sd < PRS sd for n >= 2^12 (sd ratio {ratio:.1} at 2^16)"),
    );
    let rate = convergence_rate(&prs).unwrap().rate;
    c.expect(
        (-0.60..=-0.40).contains(&rate),
        format!("PRS rate {rate:.3} in [-0.60, -0.40]"),
    );
    c.finish();
}

/// Exact cell-by-cell integral of the squared difference of two empirical copulas in d = 2.
fn quadrature(u: &Matrix, v: &Matrix) -> f64 {
    let grid = |k: usize| {
        let mut e: Vec<f64> = u
            .column(k)
            .iter()
            .chain(v.column(k).iter())
            .copied()
            .chain([0.0, 1.0])
            .collect();
        e.sort_by(f64::total_cmp);
        e.dedup();
        e
    };
    let ecdf = |s: &Matrix, t: [f64; 2]| {
        s.rows().into_iter().filter(|r| r[0] <= t[0] && r[1] <= t[1]).count() as f64 / s.nrows() as f64
    };
    let (ex, ey) = (grid(0), grid(1));
    let mut total = 0.0;
    for a in ex.windows(2) {
        for b in ey.windows(2) {
            let mid = [(a[0] + a[1]) / 2.0, (b[0] + b[1]) / 2.0];
            total += (ecdf(u, mid) - ecdf(v, mid)).powi(2) * (a[1] - a[0]) * (b[1] - b[0]);
        }
    }
    total
}

#[test]
fn criterion_10_acvm() {
    let _g = serial();
    let mut c = Check::new(10, "Cramer-von Mises closed form against quadrature", None);
    let mut rng = rng("acvm");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, m) = (rng.random_range(1..15), rng.random_range(1..15));
        let u = uniform(&mut rng, n, 2);
        let v = uniform(&mut rng, m, 2);
        let want = quadrature(&u, &v) / (1.0 / n as f64 + 1.0 / m as f64).sqrt();
        worst = worst.max((cvm_statistic(u.view(), v.view()).unwrap() - want).abs());
    }
    c.expect(worst < 1e-3, format!("max gap {worst:.1e} < 1e-3 over 20"));
    let u = uniform(&mut rng, 50, 3);
    let same = cvm_statistic(u.view(), u.view()).unwrap();
    c.expect(same == 0.0, format!("identical samples give {same}"));
    let hand = cvm_statistic(array![[0.5]].view(), array![[0.25]].view()).unwrap();
    c.expect((hand - 0.176777).abs() < 1e-6, format!("d=1 example {hand:.6}"));
    c.finish();
}

#[test]
fn criterion_11_train_determinism() {
    let _g = serial();
    let mut c = Check::new(11, "train pipeline is byte-reproducible", None);
    let cfg = RunConfig::from_toml(
        r#"
schema_version = 1
seed = 42

[data]
source = { kind = "copula", n = 500, copula = { family = { kind = "gumbel" }, dim = 4, dependence = { tau = 0.5 } } }

[model]
hidden_sizes = [32]

[train]
n_bat = 100
n_mepo = 15
n_val = 200
"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(Experiment::Train, &cfg, &a).unwrap();
    run(Experiment::Train, &cfg, &b).unwrap();
    for f in ["checkpoint.json", "losses.csv"] {
        let same = std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
        c.expect(same, format!("{f} identical"));
    }
    c.finish();
}
