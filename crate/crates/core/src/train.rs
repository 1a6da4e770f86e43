//! Maximum-likelihood fitting of a flow for a fixed ordering or group
//! structure: deterministic splitting and standardization, the Adam loop
//! with plateau-triggered learning-rate decay, and held-out evaluation.
//!
//! All randomness (split permutation, net init, per-epoch shuffles) is
//! derived from `TrainConfig::seed` alone, so a fit is a pure function of
//! (data, structure, config).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Scaler};
use crate::flow::{BaseDistribution, CausalOrdering, FlowModel, FlowStructure};
use crate::nn::{adam_step_flat, Activation, AdamState, DEFAULT_LEAKY_SLOPE};
use crate::rng::{derive_seed, derive_seed_indexed, seeded};
use crate::{Error, Result};

/// Train-loss improvement (nats) that resets the plateau counter.
pub const MIN_IMPROVEMENT: f64 = 1e-4;

/// Conditioner architecture shared by every non-root group and layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub n_layers_flow: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            n_layers_flow: 2,
            hidden_dims: vec![10],
            activation: Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE),
        }
    }
}

/// Learning-rate decay on train-loss plateaux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub scheduler: SchedulerConfig,
    pub split_fraction: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub base_kind: BaseDistribution,
    pub additive_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            betas: (0.9, 0.999),
            scheduler: SchedulerConfig::default(),
            split_fraction: 0.8,
            seed: 0,
            architecture: Architecture::default(),
            base_kind: BaseDistribution::Laplace,
            additive_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for b in [self.betas.0, self.betas.1] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("betas must lie in [0,1), got {b}")));
            }
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor < 1.0) {
            return Err(Error::Config(format!(
                "scheduler factor must lie in (0,1), got {}",
                self.scheduler.factor
            )));
        }
        if self.scheduler.patience == 0 {
            return Err(Error::Config("scheduler patience must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0,1], got {}",
                self.split_fraction
            )));
        }
        if self.architecture.n_layers_flow == 0 {
            return Err(Error::Config("n_layers_flow must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic row split plus the train-split scaler.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: DataMatrix,
    pub test: DataMatrix,
    pub scaler: Scaler,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Permutes rows by seed and takes the first `ceil(fraction * n)` as the
/// train split. The scaler is fit on train rows only. `fraction = 1` keeps
/// every row for training and evaluates on the same rows (no held-out data).
pub fn split_standardize(data: &DataMatrix, fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0,1], got {fraction}"
        )));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    if fraction < 1.0 && n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 rows to hold out data, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded(seed));
    let n_train = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let train_idx: Vec<usize> = perm[..n_train].to_vec();
    let test_idx: Vec<usize> = if n_train == n {
        train_idx.clone()
    } else {
        perm[n_train..].to_vec()
    };
    let train = data.select_rows(&train_idx);
    let test = data.select_rows(&test_idx);
    let scaler = Scaler::fit(&train)?;
    Ok(SplitResult {
        train,
        test,
        scaler,
        train_idx,
        test_idx,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FlowModel,
    /// Per-epoch mean train log-likelihood, original data units.
    pub train_curve: Vec<f64>,
    /// Mean held-out log-likelihood, original data units.
    pub test_loglik: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Epochs at which the scheduler cut the learning rate.
    pub plateau_events: Vec<usize>,
    pub final_lr: f64,
}

/// Fits a per-variable autoregressive flow for the given ordering.
pub fn fit_flow(
    data: &DataMatrix,
    ordering: &CausalOrdering,
    config: &TrainConfig,
) -> Result<FitResult> {
    if data.n_cols() < 2 {
        return Err(Error::Data(format!(
            "causal fitting needs at least 2 columns, got {}",
            data.n_cols()
        )));
    }
    if ordering.d() != data.n_cols() {
        return Err(Error::Shape(format!(
            "ordering over {} variables vs {} data columns",
            ordering.d(),
            data.n_cols()
        )));
    }
    fit_flow_structure(data, FlowStructure::from_ordering(ordering), config)
}

/// Fits a flow over an arbitrary group structure (general entry point; the
/// two-block variant drives multi-dimensional cause/effect comparisons).
pub fn fit_flow_structure(
    data: &DataMatrix,
    structure: FlowStructure,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if structure.dim() != data.n_cols() {
        return Err(Error::Shape(format!(
            "structure over {} variables vs {} data columns",
            structure.dim(),
            data.n_cols()
        )));
    }
    if data.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("dataset contains non-finite values".into()));
    }
    let mut split =
        split_standardize(data, config.split_fraction, derive_seed(config.seed, "split"))?;
    if config.additive_only {
        // An additive flow has no scale freedom: x_j = t_j(..) + z_j with a
        // unit-scale base. Variance-normalizing the columns would silently
        // change what the model can express (the noise scale), so additive
        // fits center the data but keep original units.
        split.scaler.scale = vec![1.0; data.n_cols()];
    }
    let mut model = FlowModel::init(
        structure,
        config.architecture.n_layers_flow,
        &config.architecture.hidden_dims,
        config.architecture.activation,
        config.base_kind,
        config.additive_only,
        derive_seed(config.seed, "init"),
    )?;
    model.set_scaler(Some(split.scaler.clone()))?;

    let train_std = split.scaler.standardize_matrix(&split.train);
    let ll_offset = split.scaler.log_jacobian();
    let n_train = train_std.n_rows();

    let mut params = model.params().values;
    let mut adam = AdamState::new(
        params.len(),
        config.lr,
        config.betas.0,
        config.betas.1,
        1e-8,
    )?;
    let mut gws = model.make_grad_workspace();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut plateau_events = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut seeded(derive_seed_indexed(
            config.seed,
            "shuffle",
            epoch as u64,
        )));
        let mut ll_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let ll = model.batch_loglik_grad_std(&train_std, chunk, true, &mut gws, &mut grad)?;
            if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            for g in grad.iter_mut() {
                *g = -*g;
            }
            let (updated, next_state) = adam_step_flat(adam, &params, &grad)?;
            params = updated;
            adam = next_state;
            model.set_params_flat(&params)?;
            ll_sum += ll * chunk.len() as f64;
        }
        let epoch_ll = ll_sum / n_train as f64 + ll_offset;
        if !epoch_ll.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        train_curve.push(epoch_ll);
        if epoch_ll >= best + MIN_IMPROVEMENT {
            best = epoch_ll;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.scheduler.patience {
                adam.lr *= config.scheduler.factor;
                plateau_events.push(epoch);
                stale_epochs = 0;
            }
        }
    }

    let test_loglik = model.mean_log_likelihood(&split.test)?;
    let n_test = data.n_rows() - n_train;
    Ok(FitResult {
        model,
        train_curve,
        test_loglik,
        n_train,
        n_test,
        plateau_events,
        final_lr: adam.lr,
    })
}
