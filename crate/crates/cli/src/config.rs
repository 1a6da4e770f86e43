//! Run configuration: one JSON document carrying the library's training and
//! discovery settings plus per-subcommand fields (dataset path, query
//! values, benchmark grid). Precedence is defaults < config file < flags;
//! the resolved master seed is written through to every nested seed field
//! so one recorded number pins down all randomness.

use std::path::{Path, PathBuf};

use caflow::datagen::SyntheticSpec;
use caflow::discovery::{DiscoveryConfig, DEFAULT_MAX_ORDERING_DIM};
use caflow::queries::InterventionMode;
use caflow::train::{Architecture, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Direction decisions need |R| above this.
    pub threshold: f64,
    /// Candidate conditioner architectures; empty means `train.architecture`.
    pub architectures: Vec<Architecture>,
    /// Ordering search refuses more variables than this.
    pub max_d: usize,
    /// Master seed. The `--seed` flag overrides it; when neither is given an
    /// entropy-derived seed is drawn and echoed in the report.
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// 1-based variable sequence assumed when fitting a query model.
    pub ordering: Option<Vec<usize>>,
    /// 1-based target variable for interventions and counterfactuals.
    pub target: Option<usize>,
    pub value: Option<f64>,
    /// Monte Carlo draws per intervention.
    pub n_samples: usize,
    pub mode: InterventionMode,
    /// Observed vector for counterfactual queries.
    pub obs: Option<Vec<f64>>,
    /// Mechanism settings for `simulate` (family, n, coefficient, noise).
    pub synthetic: SyntheticSpec,
    /// Benchmark grid: every family is run at every sample size.
    pub families: Vec<String>,
    pub sample_sizes: Vec<usize>,
    pub reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            threshold: 0.0,
            architectures: Vec::new(),
            max_d: DEFAULT_MAX_ORDERING_DIM,
            seed: None,
            data: None,
            out: None,
            ordering: None,
            target: None,
            value: None,
            n_samples: 1000,
            mode: InterventionMode::Sequential,
            obs: None,
            synthetic: SyntheticSpec::default(),
            families: vec![
                "linear".into(),
                "nonlinear_additive".into(),
                "modulated_noise".into(),
                "sigmoid_nonlinear_noise".into(),
            ],
            sample_sizes: vec![25, 50, 100, 250, 500],
            reps: 25,
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Flag values that replace config-file fields.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ordering: Option<Vec<usize>>,
    pub target: Option<usize>,
    pub value: Option<f64>,
    pub n_samples: Option<usize>,
    pub mode: Option<InterventionMode>,
    pub obs: Option<Vec<f64>>,
    pub family: Option<String>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
}

/// Final configuration with the seed decided and written through.
pub struct Resolved {
    pub cfg: RunConfig,
    pub seed: u64,
    pub seed_source: &'static str,
}

pub fn resolve(mut cfg: RunConfig, ov: Overrides) -> Result<Resolved, CliError> {
    if ov.data.is_some() {
        cfg.data = ov.data;
    }
    if ov.out.is_some() {
        cfg.out = ov.out;
    }
    if ov.ordering.is_some() {
        cfg.ordering = ov.ordering;
    }
    if ov.target.is_some() {
        cfg.target = ov.target;
    }
    if ov.value.is_some() {
        cfg.value = ov.value;
    }
    if let Some(n) = ov.n_samples {
        cfg.n_samples = n;
    }
    if let Some(m) = ov.mode {
        cfg.mode = m;
    }
    if ov.obs.is_some() {
        cfg.obs = ov.obs;
    }
    if let Some(name) = ov.family {
        cfg.synthetic.family = name.parse()?;
        cfg.families = vec![name];
    }
    if let Some(n) = ov.n {
        cfg.synthetic.n = n;
        cfg.sample_sizes = vec![n];
    }
    if let Some(r) = ov.reps {
        cfg.reps = r;
    }

    let (seed, seed_source) = match (ov.seed, cfg.seed) {
        (Some(s), _) => (s, "flag"),
        (None, Some(s)) => (s, "config"),
        (None, None) => (entropy_seed(), "entropy"),
    };
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    cfg.synthetic.seed = seed;
    Ok(Resolved {
        cfg,
        seed,
        seed_source,
    })
}

fn entropy_seed() -> u64 {
    use rand::RngCore;
    rand::rngs::OsRng.next_u64()
}

impl Resolved {
    pub fn discovery_config(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            train: self.cfg.train.clone(),
            threshold: self.cfg.threshold,
            architectures: self.cfg.architectures.clone(),
            max_d: self.cfg.max_d,
        }
    }

    /// Digest of the fully resolved configuration, seed included, so every
    /// number in a report traces back to recorded settings.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.cfg).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn parse_index_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<usize>().map_err(|_| {
                CliError::Usage(format!("cannot parse '{t}' as a variable index"))
            })
        })
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse '{t}' as a number")))
        })
        .collect()
}

pub fn parse_mode(s: &str) -> Result<InterventionMode, CliError> {
    match s {
        "sequential" => Ok(InterventionMode::Sequential),
        "parallel" => Ok(InterventionMode::Parallel),
        other => Err(CliError::Usage(format!(
            "mode must be sequential or parallel, got '{other}'"
        ))),
    }
}
