//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use agmmn::copulas::CopulaSpec;
use agmmn::estimators::Functional;
use agmmn::trainer::TrainConfig;
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Train,
    Sample,
    Estimate,
    Evaluate,
    SobolStudy,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Train => "train",
            Experiment::Sample => "sample",
            Experiment::Estimate => "estimate",
            Experiment::Evaluate => "evaluate",
            Experiment::SobolStudy => "sobol-study",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub estimate: Option<EstimateConfig>,
    #[serde(default)]
    pub evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    pub sobol_study: Option<SobolStudyConfig>,
}

/// Training or evaluation data: a copula sample or pseudo-observations from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    Copula { copula: CopulaSpec, n: usize },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of rows held out for evaluation (seeded split).
    #[serde(default)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_sizes: Vec<usize>,
    /// Prior dimension; defaults to the data dimension.
    pub prior_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![300],
            prior_dim: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    Prs,
    Qrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub checkpoint: PathBuf,
    pub n: usize,
    #[serde(default = "default_method")]
    pub method: SampleMethod,
}

fn default_method() -> SampleMethod {
    SampleMethod::Qrs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    CopulaPrs,
    CopulaQrs,
    ModelPrs,
    ModelQrs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub functional: Functional,
    pub generators: Vec<GeneratorKind>,
    /// Copula for the copula generators.
    #[serde(default)]
    pub copula: Option<CopulaSpec>,
    /// Trained model for the model generators.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub grid: GridConfig,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Generator whose largest-grid mean and variances serve as the reference
    /// for relative bias and variance-reduction factors.
    #[serde(default)]
    pub reference: Option<GeneratorKind>,
}

fn default_replications() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: PathBuf,
    #[serde(default = "default_replications")]
    pub n_rep: usize,
    /// Generated sample size; defaults to the number of evaluation rows.
    #[serde(default)]
    pub n_gen: Option<usize>,
    #[serde(default = "default_method")]
    pub method: SampleMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailSamplerKind {
    Sobol,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolStudyConfig {
    pub d_min: usize,
    pub d_max: usize,
    #[serde(default = "default_n_tail")]
    pub n_tail: usize,
    #[serde(default = "default_study_reps")]
    pub replications: usize,
    #[serde(default = "default_samplers")]
    pub samplers: Vec<TailSamplerKind>,
}

fn default_n_tail() -> usize {
    1000
}

fn default_study_reps() -> usize {
    500
}

fn default_samplers() -> Vec<TailSamplerKind> {
    vec![TailSamplerKind::Sobol]
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing configuration")?;
        ensure!(
            cfg.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        );
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative input paths relative to the configuration file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(DataConfig {
            source: DataSource::Csv { path },
            ..
        }) = &mut self.data
        {
            fix(path);
        }
        if let Some(s) = &mut self.sample {
            fix(&mut s.checkpoint);
        }
        if let Some(e) = &mut self.estimate {
            if let Some(c) = &mut e.checkpoint {
                fix(c);
            }
        }
        if let Some(e) = &mut self.evaluate {
            fix(&mut e.checkpoint);
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    /// Checks that the sections needed by `experiment` are present and that
    /// referenced input files exist.
    pub fn validate_for(&self, experiment: Experiment) -> Result<()> {
        if let Some(e) = self.experiment {
            ensure!(
                e == experiment,
                "configuration is for '{}' but '{}' was requested",
                e.name(),
                experiment.name()
            );
        }
        let exists = |p: &Path| -> Result<()> {
            ensure!(p.exists(), "input file {} does not exist", p.display());
            Ok(())
        };
        if let Some(DataConfig {
            source: DataSource::Csv { path },
            ..
        }) = &self.data
        {
            exists(path)?;
        }
        if let Some(DataConfig {
            test_fraction: Some(f), ..
        }) = &self.data
        {
            ensure!(*f > 0.0 && *f < 1.0, "test_fraction must lie in (0, 1)");
        }
        match experiment {
            Experiment::Train => {
                ensure!(self.data.is_some(), "train needs a [data] section");
            }
            Experiment::Sample => {
                let s = self.sample.as_ref().context("sample needs a [sample] section")?;
                exists(&s.checkpoint)?;
                ensure!(s.n > 0, "sample size must be positive");
            }
            Experiment::Estimate => {
                let e = self.estimate.as_ref().context("estimate needs an [estimate] section")?;
                ensure!(!e.generators.is_empty(), "estimate needs at least one generator");
                for g in &e.generators {
                    match g {
                        GeneratorKind::CopulaPrs | GeneratorKind::CopulaQrs => {
                            ensure!(e.copula.is_some(), "copula generators need estimate.copula")
                        }
                        GeneratorKind::ModelPrs | GeneratorKind::ModelQrs => {
                            let c = e
                                .checkpoint
                                .as_ref()
                                .context("model generators need estimate.checkpoint")?;
                            exists(c)?;
                        }
                    }
                }
                if let Some(r) = e.reference {
                    ensure!(
                        e.generators.contains(&r),
                        "reference generator must be one of the generators"
                    );
                }
            }
            Experiment::Evaluate => {
                ensure!(self.data.is_some(), "evaluate needs a [data] section");
                let e = self.evaluate.as_ref().context("evaluate needs an [evaluate] section")?;
                exists(&e.checkpoint)?;
                ensure!(e.n_rep > 0, "n_rep must be positive");
            }
            Experiment::SobolStudy => {
                let s = self
                    .sobol_study
                    .as_ref()
                    .context("sobol-study needs a [sobol_study] section")?;
                if s.d_min == 0 || s.d_max < s.d_min {
                    bail!("sobol_study needs 1 <= d_min <= d_max");
                }
                ensure!(s.replications > 0, "replications must be positive");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&json))
    }
}
