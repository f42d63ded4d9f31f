//! Experiment pipelines and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agmmn::copulas::CopulaSpec;
use agmmn::estimators::{
    convergence_rate, cvm_statistic, log2_grid, rel_bias, run_estimator, vrf, EstimatorRun, Generator,
};
use agmmn::lowdisc::{prs_from_model, qrs_from_model, tail_count_study, SobolStream, TailSampler};
use agmmn::mmd::ValidationReference;
use agmmn::nn::{MlpArchitecture, MlpModel};
use agmmn::seed::{self, SeedTree};
use agmmn::trainer::train_with;
use agmmn::Matrix;
use anyhow::{Context, Result};
use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, Experiment, GeneratorKind, RunConfig, SampleMethod, TailSamplerKind, SCHEMA_VERSION};
use crate::io::{ingest_csv, write_loss_csv, write_matrix_csv, Checkpoint, CheckpointMeta};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    pub code_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputFile>,
    /// `complete`, or `partial` when the run failed after writing some outputs.
    pub status: String,
    pub error: Option<String>,
    pub summary: BTreeMap<String, Value>,
}

/// Named seeds fanned out from the global seed.
pub fn derived_seeds(root: u64) -> BTreeMap<String, u64> {
    let tree = SeedTree::new(root);
    [
        ("data", tree.derive(seed::DATA, 0)),
        ("split", tree.derive(seed::SUBSAMPLE, 0)),
        (seed::INIT, tree.derive(seed::INIT, 0)),
        ("train", tree.derive("train", 0)),
        ("sample", tree.derive(seed::PRIOR, 0)),
        ("estimate", tree.derive("estimate", 0)),
        ("evaluate", tree.derive("evaluate", 0)),
        ("sobol-study", tree.derive(seed::SOBOL_SHIFT, 0)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<OutputFile>,
    summary: BTreeMap<String, Value>,
}

impl Run<'_> {
    fn seed(&self, name: &str) -> u64 {
        self.seeds[name]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(name))?;
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    /// Training and evaluation rows of the configured data.
    fn data(&self) -> Result<(Matrix, Matrix)> {
        let data = self.cfg.data.as_ref().context("no [data] section")?;
        let all = match &data.source {
            DataSource::Copula { copula, n } => copula.sample(*n, self.seed("data"))?,
            DataSource::Csv { path } => ingest_csv(path)?.0,
        };
        let Some(frac) = data.test_fraction else {
            return Ok((all.clone(), all));
        };
        let n = all.nrows();
        let n_test = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut SeedTree::new(self.seed("split")).rng(seed::SUBSAMPLE, 0));
        let (test, train) = rows.split_at(n_test);
        let (mut test, mut train) = (test.to_vec(), train.to_vec());
        test.sort_unstable();
        train.sort_unstable();
        Ok((all.select(Axis(0), &train), all.select(Axis(0), &test)))
    }
}

/// Runs `experiment`, writing its artifacts and a manifest into `dir`.
///
/// The manifest is written even when the run fails; it is then marked partial
/// and carries the error message.
pub fn run(experiment: Experiment, cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate_for(experiment)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut run = Run {
        cfg,
        dir: dir.to_path_buf(),
        seeds: derived_seeds(cfg.seed),
        outputs: Vec::new(),
        summary: BTreeMap::new(),
    };
    let result = match experiment {
        Experiment::Train => train(&mut run),
        Experiment::Sample => sample(&mut run),
        Experiment::Estimate => estimate(&mut run),
        Experiment::Evaluate => evaluate(&mut run),
        Experiment::SobolStudy => sobol_study(&mut run),
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        experiment: experiment.name().to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        seeds: run.seeds,
        outputs: run.outputs,
        status: if result.is_ok() { "complete" } else { "partial" }.to_string(),
        error: result.as_ref().err().map(|e| format!("{e:#}")),
        summary: run.summary,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(dir.join(MANIFEST), text).context("writing manifest")?;
    result.map(|()| manifest)
}

fn train(run: &mut Run<'_>) -> Result<()> {
    let (x, _) = run.data()?;
    let d = x.ncols();
    let model_cfg = &run.cfg.model;
    let arch = MlpArchitecture::new(model_cfg.prior_dim.unwrap_or(d), model_cfg.hidden_sizes.clone(), d)?;
    let model = MlpModel::init(arch, run.seed(seed::INIT))?;
    let mut train_cfg = run.cfg.train.clone();
    train_cfg.seed = run.seed("train");
    let report = train_with(x.view(), &train_cfg, model, |r| {
        log::info!(
            "epoch {:>4}  train {:.6}  val {:.6}  kernels {:>3}  lr {:.2e}{}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.n_krn,
            r.learning_rate,
            if r.updated { "  [update]" } else { "" },
            if r.stopped { "  [stop armed]" } else { "" }
        );
    })?;

    write_loss_csv(&run.path("losses.csv"), &report.records)?;
    run.record("losses.csv")?;
    let seeds = ["data", seed::INIT, "train"]
        .iter()
        .map(|k| (k.to_string(), run.seed(k)))
        .collect();
    let meta = CheckpointMeta {
        epochs: report.records.len() as u32,
        stop_reason: report.stop_reason.to_string(),
        final_bandwidths: report.final_bank.bandwidths().to_vec(),
        min_val_loss: report.min_val_loss(),
        seeds,
    };
    Checkpoint::new(&report.model, meta).save(&run.path("checkpoint.json"))?;
    run.record("checkpoint.json")?;

    run.note("epochs", report.records.len());
    run.note("stop_reason", report.stop_reason.to_string());
    run.note("bandwidth_updates", report.n_updates);
    run.note("initial_val_loss", report.initial_val_loss);
    run.note("min_val_loss", report.min_val_loss());
    run.note("final_val_loss", report.final_val_loss());
    Ok(())
}

fn model_sample(model: &MlpModel, method: SampleMethod, n: usize, seed: u64) -> Result<Matrix> {
    Ok(match method {
        SampleMethod::Qrs => qrs_from_model(model, &SobolStream::shifted(model.input_dim(), seed)?, n)?,
        SampleMethod::Prs => prs_from_model(model, n, seed)?,
    })
}

fn sample(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.sample.as_ref().expect("validated");
    let model = Checkpoint::load(&cfg.checkpoint)?.model()?;
    let u = model_sample(&model, cfg.method, cfg.n, run.seed("sample"))?;
    write_matrix_csv(&run.path("samples.csv"), &u)?;
    run.record("samples.csv")?;
    run.note("rows", cfg.n);
    Ok(())
}

fn estimate(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.estimate.clone().expect("validated");
    let grid = log2_grid(cfg.grid.lo, cfg.grid.hi, cfg.grid.step)?;
    let model = cfg
        .checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?
        .map(|c| c.model())
        .transpose()?;
    let copula: Option<CopulaSpec> = cfg.copula.clone();

    let mut runs: Vec<(GeneratorKind, EstimatorRun)> = Vec::new();
    for &kind in &cfg.generators {
        let generator = match kind {
            GeneratorKind::CopulaPrs => Generator::CopulaPrs(copula.as_ref().expect("validated")),
            GeneratorKind::CopulaQrs => Generator::CopulaQrs(copula.as_ref().expect("validated")),
            GeneratorKind::ModelPrs => Generator::ModelPrs(model.as_ref().expect("validated")),
            GeneratorKind::ModelQrs => Generator::ModelQrs(model.as_ref().expect("validated")),
        };
        log::info!("estimating {} with {}", cfg.functional.name(), generator.name());
        let r = run_estimator(
            &cfg.functional,
            generator,
            &grid,
            cfg.replications,
            run.seed("estimate"),
        )
        .with_context(|| format!("generator {}", generator.name()))?;
        runs.push((kind, r));
    }

    let mut w = csv::Writer::from_path(run.path("estimates.csv"))?;
    w.write_record(["functional", "generator", "n_gen", "replicate", "estimate"])?;
    for (_, r) in &runs {
        for p in &r.points {
            for (i, e) in p.estimates.iter().enumerate() {
                w.write_record([
                    r.functional.clone(),
                    r.generator.clone(),
                    p.n_gen.to_string(),
                    i.to_string(),
                    e.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    drop(w);
    run.record("estimates.csv")?;

    let reference = cfg
        .reference
        .and_then(|k| runs.iter().find(|(g, _)| *g == k))
        .map(|(_, r)| r.clone());
    let mut w = csv::Writer::from_path(run.path("summary.csv"))?;
    w.write_record(["functional", "generator", "n_gen", "mean", "sd", "rel_bias", "vrf"])?;
    for (_, r) in &runs {
        for (i, p) in r.points.iter().enumerate() {
            let (bias, factor) = match &reference {
                Some(refr) => {
                    let last = refr.points.last().expect("non-empty grid");
                    let b = rel_bias(p.mean, last.mean).ok();
                    let v = vrf(refr.points[i].sd.powi(2), p.sd.powi(2)).ok();
                    (b, v)
                }
                None => (None, None),
            };
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
            w.write_record([
                r.functional.clone(),
                r.generator.clone(),
                p.n_gen.to_string(),
                p.mean.to_string(),
                p.sd.to_string(),
                opt(bias),
                opt(factor),
            ])?;
        }
    }
    w.flush()?;
    drop(w);
    run.record("summary.csv")?;

    let mut w = csv::Writer::from_path(run.path("rates.csv"))?;
    w.write_record([
        "functional",
        "generator",
        "rate",
        "intercept",
        "raw_slope",
        "raw_intercept",
        "points_used",
    ])?;
    for (_, r) in &runs {
        match convergence_rate(r) {
            Ok(fit) => {
                w.write_record([
                    r.functional.clone(),
                    r.generator.clone(),
                    fit.rate.to_string(),
                    fit.intercept.to_string(),
                    fit.raw_slope.to_string(),
                    fit.raw_intercept.to_string(),
                    fit.points_used.to_string(),
                ])?;
                run.summary.insert(format!("rate.{}", r.generator), fit.rate.into());
            }
            Err(e) => log::warn!("no convergence rate for {}: {e}", r.generator),
        }
    }
    w.flush()?;
    drop(w);
    run.record("rates.csv")?;
    Ok(())
}

fn evaluate(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.evaluate.clone().expect("validated");
    let (_, u_dat) = run.data()?;
    let model = Checkpoint::load(&cfg.checkpoint)?.model()?;
    let n_gen = cfg.n_gen.unwrap_or(u_dat.nrows());
    let reference = ValidationReference::new(u_dat.clone())?;
    let tree = SeedTree::new(run.seed("evaluate"));
    let mut w = csv::Writer::from_path(run.path("evaluate.csv"))?;
    w.write_record(["replicate", "validation_mmd", "cvm"])?;
    let (mut mmds, mut cvms) = (Vec::new(), Vec::new());
    for r in 0..cfg.n_rep {
        let u = model_sample(&model, cfg.method, n_gen, tree.derive("replicate", r as u64))?;
        let m = reference.mmd(u.view())?;
        let c = cvm_statistic(u_dat.view(), u.view())?;
        w.write_record([r.to_string(), m.to_string(), c.to_string()])?;
        mmds.push(m);
        cvms.push(c);
    }
    w.flush()?;
    drop(w);
    run.record("evaluate.csv")?;
    run.note("mean_validation_mmd", agmmn::stats::mean(&mmds));
    run.note("acvm", agmmn::stats::mean(&cvms));
    run.note("n_dat", u_dat.nrows());
    run.note("n_gen", n_gen);
    Ok(())
}

fn sobol_study(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.sobol_study.clone().expect("validated");
    let mut w = csv::Writer::from_path(run.path("tail_counts.csv"))?;
    w.write_record(["sampler", "d", "n_gen", "n_tail", "threshold", "replicate", "count"])?;
    for kind in &cfg.samplers {
        let (name, sampler) = match kind {
            TailSamplerKind::Sobol => ("sobol", TailSampler::ShiftedSobol),
            TailSamplerKind::Iid => ("iid", TailSampler::Iid),
        };
        let results = tail_count_study(
            cfg.d_min..=cfg.d_max,
            cfg.n_tail,
            cfg.replications,
            run.seed("sobol-study"),
            sampler,
        )?;
        for res in &results {
            for (i, c) in res.counts.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    res.dim.to_string(),
                    res.n_gen.to_string(),
                    res.n_tail.to_string(),
                    res.threshold.to_string(),
                    i.to_string(),
                    c.to_string(),
                ])?;
            }
            if let Ok(v) = res.variance() {
                run.summary.insert(format!("variance.{name}.d{}", res.dim), v.into());
            }
        }
    }
    w.flush()?;
    drop(w);
    run.record("tail_counts.csv")?;
    Ok(())
}
