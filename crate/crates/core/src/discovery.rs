//! Causal-direction decisions by likelihood comparison: fit one flow per
//! candidate ordering on a shared train split, evaluate each on the shared
//! held-out split, and prefer the ordering with the higher test
//! log-likelihood.
//!
//! Because every fit derives its split, initialization, and shuffle streams
//! from the same config seed, the two directions of a bivariate comparison
//! see identical data partitions, and column-swapping the input mirrors the
//! decision exactly.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataMatrix;
use crate::flow::{CausalOrdering, FlowStructure};
use crate::train::{fit_flow_structure, Architecture, FitResult, TrainConfig};
use crate::{Error, Result};

/// Orderings over more variables than this are refused: the search cost is
/// d! maximum-likelihood fits.
pub const DEFAULT_MAX_ORDERING_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub train: TrainConfig,
    /// Decision threshold tau: |R| must exceed it to decide a direction.
    pub threshold: f64,
    /// When non-empty, every candidate architecture is fit per direction and
    /// the best held-out likelihood is kept before forming the ratio.
    pub architectures: Vec<Architecture>,
    pub max_d: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            threshold: 0.0,
            architectures: Vec::new(),
            max_d: DEFAULT_MAX_ORDERING_DIM,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::Config(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        if self.max_d < 2 {
            return Err(Error::Config("max_d must be at least 2".into()));
        }
        Ok(())
    }

    /// Stable digest of the full configuration, recorded in reports so runs
    /// can be matched to their settings.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let bytes = hasher.finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn candidate_architectures(&self) -> Vec<Architecture> {
        if self.architectures.is_empty() {
            vec![self.train.architecture.clone()]
        } else {
            self.architectures.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    X1CausesX2,
    X2CausesX1,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub config_digest: String,
    pub n_train: usize,
    pub n_test: usize,
    pub architectures_tried: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    /// Mean held-out log-likelihood under the ordering (x1, x2).
    pub loglik_forward: f64,
    /// Mean held-out log-likelihood under the ordering (x2, x1).
    pub loglik_backward: f64,
    /// R = loglik_forward - loglik_backward.
    pub r: f64,
    pub decision: Decision,
    /// |R|; larger means the directions are easier to tell apart.
    pub confidence: f64,
    pub fit_meta: FitMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingScore {
    pub ordering: CausalOrdering,
    pub test_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// Every ordering evaluated, sorted by descending test log-likelihood.
    pub entries: Vec<OrderingScore>,
    pub best: CausalOrdering,
    pub fit_meta: FitMeta,
}

fn best_fit_over_architectures(
    data: &DataMatrix,
    structure: &FlowStructure,
    config: &DiscoveryConfig,
) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    for arch in config.candidate_architectures() {
        let train = TrainConfig {
            architecture: arch,
            ..config.train.clone()
        };
        let fit = fit_flow_structure(data, structure.clone(), &train)?;
        if best
            .as_ref()
            .map_or(true, |b| fit.test_loglik > b.test_loglik)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one architecture"))
}

fn named_direction_fit(
    data: &DataMatrix,
    structure: &FlowStructure,
    config: &DiscoveryConfig,
    direction: &str,
) -> Result<FitResult> {
    best_fit_over_architectures(data, structure, config).map_err(|e| Error::DirectionFit {
        direction: direction.to_string(),
        source: Box::new(e),
    })
}

fn decide(r: f64, threshold: f64) -> Decision {
    if r > threshold {
        Decision::X1CausesX2
    } else if r < -threshold {
        Decision::X2CausesX1
    } else {
        Decision::Undecided
    }
}

fn direction_report(
    forward: FitResult,
    backward: FitResult,
    config: &DiscoveryConfig,
    architectures_tried: usize,
) -> DirectionReport {
    let r = forward.test_loglik - backward.test_loglik;
    DirectionReport {
        loglik_forward: forward.test_loglik,
        loglik_backward: backward.test_loglik,
        r,
        decision: decide(r, config.threshold),
        confidence: r.abs(),
        fit_meta: FitMeta {
            seed: config.train.seed,
            config_digest: config.digest(),
            n_train: forward.n_train,
            n_test: forward.n_test,
            architectures_tried,
        },
    }
}

/// Likelihood-ratio direction test between two scalar variables: fits the
/// orderings (x1, x2) and (x2, x1) on the same split and compares held-out
/// log-likelihoods. Positive R favors x1 -> x2.
pub fn likelihood_ratio_bivariate(
    data: &DataMatrix,
    config: &DiscoveryConfig,
) -> Result<DirectionReport> {
    config.validate()?;
    if data.n_cols() != 2 {
        return Err(Error::Shape(format!(
            "bivariate test needs exactly 2 columns, got {}",
            data.n_cols()
        )));
    }
    if data.n_rows() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 rows for a direction test, got {}",
            data.n_rows()
        )));
    }
    let fwd_structure = FlowStructure::from_ordering(&CausalOrdering::bivariate(true));
    let bwd_structure = FlowStructure::from_ordering(&CausalOrdering::bivariate(false));
    let forward = named_direction_fit(data, &fwd_structure, config, "x1->x2")?;
    let backward = named_direction_fit(data, &bwd_structure, config, "x2->x1")?;
    let tried = config.candidate_architectures().len();
    Ok(direction_report(forward, backward, config, tried))
}

/// Exhaustive search over all d! variable orderings; refuses dimensions
/// beyond `config.max_d` because the fit count grows factorially.
pub fn ordering_search(data: &DataMatrix, config: &DiscoveryConfig) -> Result<OrderingReport> {
    config.validate()?;
    let d = data.n_cols();
    if d < 2 {
        return Err(Error::Shape(format!(
            "ordering search needs at least 2 columns, got {d}"
        )));
    }
    if d > config.max_d {
        return Err(Error::Infeasible {
            d,
            max_d: config.max_d,
        });
    }
    if data.n_rows() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 rows for an ordering search, got {}",
            data.n_rows()
        )));
    }
    let mut entries = Vec::new();
    let mut meta: Option<FitMeta> = None;
    for seq in (0..d).permutations(d) {
        let ordering = CausalOrdering::from_sequence(&seq)?;
        let structure = FlowStructure::from_ordering(&ordering);
        let fit = named_direction_fit(data, &structure, config, &ordering.to_string())?;
        if meta.is_none() {
            meta = Some(FitMeta {
                seed: config.train.seed,
                config_digest: config.digest(),
                n_train: fit.n_train,
                n_test: fit.n_test,
                architectures_tried: config.candidate_architectures().len(),
            });
        }
        entries.push(OrderingScore {
            ordering,
            test_loglik: fit.test_loglik,
        });
    }
    entries.sort_by(|a, b| {
        b.test_loglik
            .partial_cmp(&a.test_loglik)
            .expect("test log-likelihoods are finite")
    });
    let best = entries[0].ordering.clone();
    Ok(OrderingReport {
        entries,
        best,
        fit_meta: meta.expect("at least two orderings evaluated"),
    })
}

/// Direction test between two vector-valued variables: a two-block flow
/// where the conditioners of the second block read the whole first block.
/// Positive R favors the x1 block causing the x2 block.
pub fn group_direction(
    data_x1: &DataMatrix,
    data_x2: &DataMatrix,
    config: &DiscoveryConfig,
) -> Result<DirectionReport> {
    config.validate()?;
    if data_x1.n_rows() != data_x2.n_rows() {
        return Err(Error::Data(format!(
            "blocks disagree on sample count: {} vs {}",
            data_x1.n_rows(),
            data_x2.n_rows()
        )));
    }
    if data_x1.n_rows() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 rows for a direction test, got {}",
            data_x1.n_rows()
        )));
    }
    let (d1, d2) = (data_x1.n_cols(), data_x2.n_cols());
    if d1 == 0 || d2 == 0 {
        return Err(Error::Shape("blocks must have at least one column".into()));
    }
    let data = DataMatrix::hstack(data_x1, data_x2)?;
    let forward = named_direction_fit(
        &data,
        &FlowStructure::two_block(d1, d2, true)?,
        config,
        "x1-block->x2-block",
    )?;
    let backward = named_direction_fit(
        &data,
        &FlowStructure::two_block(d1, d2, false)?,
        config,
        "x2-block->x1-block",
    )?;
    let tried = config.candidate_architectures().len();
    Ok(direction_report(forward, backward, config, tried))
}
