//! The AGMMN training loop.
//!
//! Each epoch shuffles the training rows, takes one Adam step per mini-batch on
//! the squared MMD between the batch and an equally sized generated batch, then
//! records the epoch's training loss (mean mini-batch MMD) and validation loss
//! (validation-bandwidth MMD on a held-in subset). A plateau of the training
//! loss triggers a bandwidth update with more kernels and a smaller learning
//! rate; a plateau of the validation loss after an update arms early stopping,
//! and the next training plateau ends the run.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{learning_rate_with, BandwidthPolicy, PatienceSchedule};
use crate::lowdisc::normal_prior;
use crate::mmd::{self, KernelBank, ValidationReference};
use crate::nn::{AdamState, MlpModel};
use crate::seed::{self, SeedTree};
use crate::{Error, Matrix, Result};

/// How the kernel bank evolves during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrainMode {
    /// Quantile bandwidths re-estimated with the next kernel count on every plateau.
    Adaptive,
    /// A bank that never changes.
    Fixed { bank: FixedBank },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FixedBank {
    /// `(0.001, 0.01, 0.15, 0.25, 0.50, 0.75)`.
    Hpz,
    Explicit {
        bandwidths: Vec<f64>,
    },
    /// Quantile bandwidths of the training sample with a fixed kernel count.
    Quantile {
        n_krn: usize,
    },
}

/// How `L_trn(t)` is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrainLoss {
    /// Mean of the mini-batch MMDs seen during the epoch.
    BatchMean,
    /// MMD between at most `row_cap` training rows and as many generated rows,
    /// evaluated with the current bank after the epoch.
    FullSet { row_cap: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_bat: usize,
    pub n_mepo: u32,
    pub delta_trn: f64,
    pub delta_val: f64,
    pub early_stopping: bool,
    pub bandwidth: BandwidthPolicy,
    pub patience: PatienceSchedule,
    pub mode: TrainMode,
    pub train_loss: TrainLoss,
    /// Validation subset size; `None` uses `min(n_trn, 5000)`.
    pub n_val: Option<usize>,
    pub n_rep: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_bat: 500,
            n_mepo: 800,
            delta_trn: 1e-3,
            delta_val: 1e-3,
            early_stopping: true,
            bandwidth: BandwidthPolicy::default(),
            patience: PatienceSchedule::default(),
            mode: TrainMode::Adaptive,
            train_loss: TrainLoss::BatchMean,
            n_val: None,
            n_rep: 1,
            lr0: 1e-3,
            lr_decay: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_trn: usize) -> Result<()> {
        if self.n_bat == 0 || n_trn == 0 || !n_trn.is_multiple_of(self.n_bat) {
            return Err(Error::invalid(format!(
                "batch size {} must be positive and divide n_trn = {n_trn}",
                self.n_bat
            )));
        }
        if self.n_bat < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.n_mepo == 0 {
            return Err(Error::invalid("n_mepo must be at least 1"));
        }
        if !(self.delta_trn >= 0.0) || !(self.delta_val >= 0.0) {
            return Err(Error::invalid("plateau thresholds must be non-negative"));
        }
        if self.n_rep == 0 {
            return Err(Error::invalid("n_rep must be at least 1"));
        }
        if matches!(self.n_val, Some(0)) {
            return Err(Error::invalid("n_val must be positive"));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay >= 1.0) {
            return Err(Error::invalid("need lr0 > 0 and lr_decay >= 1"));
        }
        if let TrainLoss::FullSet { row_cap } = self.train_loss {
            if row_cap < 2 {
                return Err(Error::invalid("full-set training loss needs row_cap >= 2"));
            }
        }
        match &self.mode {
            TrainMode::Fixed {
                bank: FixedBank::Quantile { n_krn: 0 },
            } => return Err(Error::invalid("fixed kernel count must be positive")),
            TrainMode::Fixed {
                bank: FixedBank::Explicit { bandwidths },
            } => {
                KernelBank::new(bandwidths.clone())?;
            }
            _ => {}
        }
        self.bandwidth.validate()?;
        self.patience.validate()
    }

    pub fn n_val_for(&self, n_trn: usize) -> usize {
        self.n_val.unwrap_or(5000).min(n_trn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStop => "early-stop",
            StopReason::MaxEpochs => "max-epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub n_krn: usize,
    pub learning_rate: f64,
    pub patience: u32,
    /// The training-loss plateau test fired in this epoch.
    pub plateau: bool,
    /// The bank was replaced in this epoch.
    pub updated: bool,
    /// STOP is set at the end of this epoch.
    pub stopped: bool,
}

/// Mutable loop state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: u32,
    pub patience: u32,
    pub learning_rate: f64,
    pub n_up: u32,
    pub t_up: u32,
    pub stop: bool,
    /// `train_losses[t - 1] = L_trn(t)`.
    pub train_losses: Vec<f64>,
    /// `val_losses[t] = L_val(t)`, with `L_val(0)` for the initial model.
    pub val_losses: Vec<f64>,
    pub bank: KernelBank,
    pub adam: AdamState,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub model: MlpModel,
    pub stop_reason: StopReason,
    pub initial_val_loss: f64,
    pub final_bank: KernelBank,
    pub n_updates: u32,
}

impl TrainReport {
    /// Smallest validation loss over completed epochs.
    pub fn min_val_loss(&self) -> f64 {
        self.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn final_val_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_val_loss, |r| r.val_loss)
    }
}

/// Arithmetic mean of the per-batch MMDs of one epoch.
pub fn compute_epoch_training_loss(batch_losses: &[f64]) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::invalid("epoch has no mini-batches"));
    }
    Ok(crate::par::pairwise_sum(batch_losses) / batch_losses.len() as f64)
}

/// Validation MMD of `model` against `x_val` over `n_rep` prior batches of
/// `x_val.nrows()` rows drawn from `prior_seed`.
pub fn compute_validation_loss(
    x_val: ArrayView2<'_, f64>,
    model: &MlpModel,
    n_rep: usize,
    prior_seed: u64,
) -> Result<f64> {
    let reference = ValidationReference::new(x_val.to_owned())?;
    validation_loss(&reference, model, n_rep, prior_seed)
}

fn validation_loss(reference: &ValidationReference, model: &MlpModel, n_rep: usize, prior_seed: u64) -> Result<f64> {
    if n_rep == 0 {
        return Err(Error::invalid("n_rep must be at least 1"));
    }
    let n = reference.data().nrows();
    let tree = SeedTree::new(prior_seed);
    let mut total = 0.0;
    for r in 0..n_rep {
        let z = normal_prior(&mut tree.rng(seed::PRIOR, r as u64), n, model.input_dim());
        total += reference.mmd(model.predict(z.view())?.view())?;
    }
    Ok(total / n_rep as f64)
}

/// Training-loss plateau in epoch `t` with patience `p`:
/// `1 - L(t-k)/L(t-p) <= delta` for `k = 0..p-1`. Needs `t > p`.
/// `losses[i]` is `L(i + 1)`.
pub fn train_plateau(losses: &[f64], t: u32, p: u32, delta: f64) -> bool {
    if t <= p || (t as usize) > losses.len() {
        return false;
    }
    let at = |s: u32| losses[s as usize - 1];
    let base = at(t - p);
    (0..p).all(|k| 1.0 - at(t - k) / base <= delta)
}

/// Validation-loss plateau in epoch `t` since the last update at `t_up`:
/// `1 - L(t-k)/L(t_up) <= delta` for `k = 0..p-1`. `losses[i]` is `L(i)`.
pub fn val_plateau(losses: &[f64], t: u32, t_up: u32, p: u32, delta: f64) -> bool {
    if t < p || (t as usize) >= losses.len() || t_up > t {
        return false;
    }
    let base = losses[t_up as usize];
    (0..p).all(|k| 1.0 - losses[(t - k) as usize] / base <= delta)
}

/// Trains `model` on the rows of `x`.
pub fn train(x: ArrayView2<'_, f64>, cfg: &TrainConfig, model: MlpModel) -> Result<TrainReport> {
    train_with(x, cfg, model, |_| {})
}

/// As [`train`], calling `on_epoch` after every completed epoch.
pub fn train_with(
    x: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    mut model: MlpModel,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let n_trn = x.nrows();
    cfg.validate(n_trn)?;
    if x.ncols() != model.output_dim() {
        return Err(Error::mismatch(model.output_dim(), x.ncols(), "training data columns"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    let x = x.as_standard_layout().into_owned();
    let tree = SeedTree::new(cfg.seed);
    let d_pri = model.input_dim();

    let n_val = cfg.n_val_for(n_trn);
    let x_val = if n_val < n_trn {
        let mut rng = tree.rng(seed::VALIDATION, 0);
        let mut rows = rand::seq::index::sample(&mut rng, n_trn, n_val).into_vec();
        rows.sort_unstable();
        x.select(Axis(0), &rows)
    } else {
        x.clone()
    };
    let reference = ValidationReference::new(x_val)?;
    let val_seed = tree.derive(seed::VALIDATION, 1);

    let bank_seed = |k: u32| tree.derive(seed::SUBSAMPLE, u64::from(k));
    let (bank, adaptive) = match &cfg.mode {
        TrainMode::Adaptive => {
            let n_krn = cfg
                .bandwidth
                .kernel_counts
                .get(0)
                .ok_or_else(|| Error::invalid("kernel sequence is empty"))?;
            (cfg.bandwidth.bank(x.view(), n_krn, bank_seed(0))?, true)
        }
        TrainMode::Fixed { bank } => {
            let bank = match bank {
                FixedBank::Hpz => KernelBank::hpz(),
                FixedBank::Explicit { bandwidths } => KernelBank::new(bandwidths.clone())?,
                FixedBank::Quantile { n_krn } => cfg.bandwidth.bank(x.view(), *n_krn, bank_seed(0))?,
            };
            (bank, false)
        }
    };

    let initial_val = validation_loss(&reference, &model, cfg.n_rep, val_seed)?;
    check_finite(initial_val, "initial validation loss")?;
    let mut st = TrainState {
        epoch: 0,
        patience: cfg.patience.at(0),
        learning_rate: learning_rate_with(0, cfg.lr0, cfg.lr_decay),
        n_up: 0,
        t_up: 0,
        stop: false,
        train_losses: Vec::new(),
        val_losses: vec![initial_val],
        bank,
        adam: AdamState::new(&model),
    };

    let n_batches = n_trn / cfg.n_bat;
    let mut order: Vec<usize> = (0..n_trn).collect();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for t in 1..=cfg.n_mepo {
        st.epoch = t;
        order.shuffle(&mut tree.rng(seed::SHUFFLE, u64::from(t)));
        let mut batch_losses = Vec::with_capacity(n_batches);
        for b in 0..n_batches {
            let rows = &order[b * cfg.n_bat..(b + 1) * cfg.n_bat];
            let xb = x.select(Axis(0), rows);
            let step = u64::from(t - 1) * n_batches as u64 + b as u64;
            let z = normal_prior(&mut tree.rng(seed::PRIOR, step), cfg.n_bat, d_pri);
            let (y, tape) = model.forward(z.view())?;
            let (loss_sq, grad_y) = mmd::mmd_sq_and_grad(xb.view(), y.view(), &st.bank)?;
            check_finite(loss_sq, "mini-batch loss")?;
            let grad = model.backward(&tape, grad_y.view())?;
            st.adam.step(&mut model, &grad, st.learning_rate)?;
            batch_losses.push(loss_sq.sqrt());
        }
        let train_loss = match cfg.train_loss {
            TrainLoss::BatchMean => compute_epoch_training_loss(&batch_losses)?,
            TrainLoss::FullSet { row_cap } => {
                let rows = row_cap.min(n_trn);
                let z = normal_prior(&mut tree.rng(seed::PRIOR, u64::MAX - u64::from(t)), rows, d_pri);
                let y = model.predict(z.view())?;
                mmd::mmd(x.slice(ndarray::s![..rows, ..]), y.view(), &st.bank)?
            }
        };
        check_finite(train_loss, "training loss")?;
        let val_loss = validation_loss(&reference, &model, cfg.n_rep, val_seed)?;
        check_finite(val_loss, "validation loss")?;
        st.train_losses.push(train_loss);
        st.val_losses.push(val_loss);

        let mut updated = false;
        let plateau = t > st.t_up + st.patience && train_plateau(&st.train_losses, t, st.patience, cfg.delta_trn);
        if plateau {
            if st.stop {
                stop_reason = StopReason::EarlyStop;
            } else {
                let next = st.n_up + 1;
                let n_krn = if adaptive {
                    cfg.bandwidth.kernel_counts.get(next as usize)
                } else {
                    None
                };
                if let Some(n_krn) = n_krn {
                    st.bank = cfg.bandwidth.bank(x.view(), n_krn, bank_seed(next))?;
                    st.n_up = next;
                    st.learning_rate = learning_rate_with(next, cfg.lr0, cfg.lr_decay);
                    updated = true;
                    log::debug!("epoch {t}: bandwidth update to {n_krn} kernels");
                }
                // without a new bank the update is the identity, but the windows restart
                st.t_up = t;
                st.patience = cfg.patience.at(t);
            }
        }
        if stop_reason != StopReason::EarlyStop
            && cfg.early_stopping
            && t == st.t_up + st.patience
            && val_plateau(&st.val_losses, t, st.t_up, st.patience, cfg.delta_val)
        {
            st.stop = true;
            log::debug!("epoch {t}: validation plateau, STOP set");
        }

        let record = EpochRecord {
            epoch: t,
            train_loss,
            val_loss,
            n_krn: st.bank.len(),
            learning_rate: st.learning_rate,
            patience: st.patience,
            plateau,
            updated,
            stopped: st.stop,
        };
        on_epoch(&record);
        records.push(record);
        if stop_reason == StopReason::EarlyStop {
            break;
        }
    }

    Ok(TrainReport {
        records,
        model,
        stop_reason,
        initial_val_loss: initial_val,
        final_bank: st.bank,
        n_updates: st.n_up,
    })
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!("{what} is not finite")))
    }
}

/// Draws `n` rows from `model` with a standard-normal prior.
pub fn generate(model: &MlpModel, n: usize, seed: u64) -> Result<Matrix> {
    let z = normal_prior(&mut SeedTree::new(seed).rng(seed::PRIOR, 0), n, model.input_dim());
    model.predict(z.view())
}
