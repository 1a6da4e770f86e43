//! Seeded generators for the synthetic structural equation families used in
//! the benchmarks: four bivariate cause-effect laws, a 10-to-10 dimensional
//! block pair, and a four-variable system with two sink nodes for
//! interventional and counterfactual evaluation.
//!
//! Every generator is a pure function of its [`SyntheticSpec`]: noise draws,
//! random coefficients, and per-coordinate mechanism choices all come from
//! streams derived from `spec.seed` with distinct tags, so regenerating any
//! one piece (for example the noise matrix alone) reproduces it bit-exactly.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::flow::CausalOrdering;
use crate::rng::{derive_seed, sample_laplace, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    NonlinearAdditive,
    ModulatedNoise,
    SigmoidNonlinearNoise,
    HighdimPair,
    InterventionSem,
}

impl Family {
    pub fn is_bivariate(self) -> bool {
        matches!(
            self,
            Family::Linear
                | Family::NonlinearAdditive
                | Family::ModulatedNoise
                | Family::SigmoidNonlinearNoise
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::NonlinearAdditive => "nonlinear_additive",
            Family::ModulatedNoise => "modulated_noise",
            Family::SigmoidNonlinearNoise => "sigmoid_nonlinear_noise",
            Family::HighdimPair => "highdim_pair",
            Family::InterventionSem => "intervention_sem",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Family::Linear),
            "nonlinear_additive" => Ok(Family::NonlinearAdditive),
            "modulated_noise" => Ok(Family::ModulatedNoise),
            "sigmoid_nonlinear_noise" => Ok(Family::SigmoidNonlinearNoise),
            "highdim_pair" => Ok(Family::HighdimPair),
            "intervention_sem" => Ok(Family::InterventionSem),
            other => Err(Error::Config(format!(
                "unknown family '{other}' (expected linear, nonlinear_additive, \
                 modulated_noise, sigmoid_nonlinear_noise, highdim_pair, intervention_sem)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Laplace,
    Gaussian,
    StudentT { dof: f64 },
}

impl NoiseKind {
    fn validate(self) -> Result<()> {
        if let NoiseKind::StudentT { dof } = self {
            if !(dof > 2.0) {
                return Err(Error::Config(format!(
                    "student_t dof must exceed 2 for finite variance, got {dof}"
                )));
            }
        }
        Ok(())
    }
}

/// Mechanism choices for the high-dimensional pair, drawn per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighdimForm {
    /// sigma(sigma(sum of all cause coordinates) + z_i)
    FullSum,
    /// sigma(sigma(sum of the first five cause coordinates) + z_i)
    FirstHalfSum,
    /// sigma(sum over the second half of sigma(x_1j)^(j-5) + z_i)
    SecondHalfPowers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    /// Mechanism coefficient for the linear, nonlinear_additive and
    /// sigmoid_nonlinear_noise families.
    pub coeff: f64,
    pub noise_kind: NoiseKind,
    /// Swap cause and effect columns (bivariate and highdim families).
    pub flip_direction: bool,
    /// Fixes (c1, c2) for intervention_sem instead of drawing them; supply
    /// the echoed values to regenerate a dataset bit-exactly.
    pub sem_coeffs: Option<(f64, f64)>,
    /// Fixes the per-coordinate mechanisms for highdim_pair (length 10)
    /// instead of drawing them.
    pub highdim_forms: Option<Vec<HighdimForm>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            family: Family::Linear,
            n: 500,
            seed: 0,
            coeff: 1.0,
            noise_kind: NoiseKind::Laplace,
            flip_direction: false,
            sem_coeffs: None,
            highdim_forms: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        self.noise_kind.validate()?;
        if let Some(forms) = &self.highdim_forms {
            if forms.len() != HIGHDIM_BLOCK {
                return Err(Error::Config(format!(
                    "highdim_forms must list {HIGHDIM_BLOCK} mechanisms, got {}",
                    forms.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which columns cause which in the generated data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Ordering { ordering: CausalOrdering },
    BlockPair {
        cause_cols: Vec<usize>,
        effect_cols: Vec<usize>,
    },
}

/// Echo of the spec plus every coefficient actually drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingParams {
    pub spec: SyntheticSpec,
    /// Seed of the noise stream, for regenerating draws independently.
    pub noise_seed: u64,
    pub sem_coeffs: Option<(f64, f64)>,
    pub highdim_forms: Option<Vec<HighdimForm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub data: DataMatrix,
    pub truth: GroundTruth,
    pub generating_params: GeneratingParams,
}

pub const HIGHDIM_BLOCK: usize = 10;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// An n-by-d matrix of independent draws from the given noise law, filled
/// row-major. Generators use this with `derive_seed(spec.seed, "noise")`, so
/// callers can regenerate the exact noise a dataset was built from.
pub fn noise_matrix(kind: NoiseKind, n: usize, d: usize, seed: u64) -> Result<DataMatrix> {
    kind.validate()?;
    if n == 0 || d == 0 {
        return Err(Error::Config("noise matrix must be non-empty".into()));
    }
    let mut rng = seeded(seed);
    let mut values = Vec::with_capacity(n * d);
    match kind {
        NoiseKind::Laplace => {
            for _ in 0..n * d {
                values.push(sample_laplace(&mut rng));
            }
        }
        NoiseKind::Gaussian => {
            for _ in 0..n * d {
                values.push(StandardNormal.sample(&mut rng));
            }
        }
        NoiseKind::StudentT { dof } => {
            let dist = StudentT::new(dof)
                .map_err(|e| Error::Config(format!("student_t({dof}): {e}")))?;
            for _ in 0..n * d {
                values.push(dist.sample(&mut rng));
            }
        }
    }
    DataMatrix::new(n, d, values)
}

/// Dispatch on `spec.family`.
pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedDataset> {
    match spec.family {
        f if f.is_bivariate() => generate_bivariate(spec),
        Family::HighdimPair => generate_multivariate_pair(spec),
        Family::InterventionSem => generate_intervention_sem(spec),
        _ => unreachable!(),
    }
}

/// Bivariate cause-effect families: x1 is pure noise and x2 = f(x1, z2) with
/// f one of
///   linear:                  a*x1 + z2
///   nonlinear_additive:      x1 + a*x1^3 + z2
///   modulated_noise:         sigmoid(x1) + x1^2/2 + sigmoid(x1)*z2
///   sigmoid_nonlinear_noise: sigmoid(sigmoid(a*x1) + z2)
pub fn generate_bivariate(spec: &SyntheticSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    if !spec.family.is_bivariate() {
        return Err(Error::Config(format!(
            "generate_bivariate cannot produce family {}",
            spec.family.name()
        )));
    }
    let noise_seed = derive_seed(spec.seed, "noise");
    let z = noise_matrix(spec.noise_kind, spec.n, 2, noise_seed)?;
    let a = spec.coeff;
    let mut data = DataMatrix::zeros(spec.n, 2);
    for i in 0..spec.n {
        let x1 = z.get(i, 0);
        let z2 = z.get(i, 1);
        let x2 = match spec.family {
            Family::Linear => a * x1 + z2,
            Family::NonlinearAdditive => x1 + a * x1.powi(3) + z2,
            Family::ModulatedNoise => sigmoid(x1) + 0.5 * x1 * x1 + sigmoid(x1) * z2,
            Family::SigmoidNonlinearNoise => sigmoid(sigmoid(a * x1) + z2),
            _ => unreachable!(),
        };
        data.set(i, 0, x1);
        data.set(i, 1, x2);
    }
    let ordering = if spec.flip_direction {
        data = data.select_columns(&[1, 0]);
        CausalOrdering::bivariate(false)
    } else {
        CausalOrdering::bivariate(true)
    };
    Ok(GeneratedDataset {
        data,
        truth: GroundTruth::Ordering { ordering },
        generating_params: GeneratingParams {
            spec: spec.clone(),
            noise_seed,
            sem_coeffs: None,
            highdim_forms: None,
        },
    })
}

/// Ten cause coordinates of standard Laplace noise drive ten effect
/// coordinates, each through one of three mechanisms picked at random per
/// coordinate (see [`HighdimForm`]).
pub fn generate_multivariate_pair(spec: &SyntheticSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    if spec.family != Family::HighdimPair {
        return Err(Error::Config(format!(
            "generate_multivariate_pair cannot produce family {}",
            spec.family.name()
        )));
    }
    let forms: Vec<HighdimForm> = match &spec.highdim_forms {
        Some(forms) => forms.clone(),
        None => {
            let mut rng = seeded(derive_seed(spec.seed, "forms"));
            (0..HIGHDIM_BLOCK)
                .map(|_| match rng.gen_range(0..3) {
                    0 => HighdimForm::FullSum,
                    1 => HighdimForm::FirstHalfSum,
                    _ => HighdimForm::SecondHalfPowers,
                })
                .collect()
        }
    };
    let noise_seed = derive_seed(spec.seed, "noise");
    let cause = noise_matrix(NoiseKind::Laplace, spec.n, HIGHDIM_BLOCK, noise_seed)?;
    let z = noise_matrix(
        spec.noise_kind,
        spec.n,
        HIGHDIM_BLOCK,
        derive_seed(spec.seed, "effect-noise"),
    )?;
    let mut data = DataMatrix::zeros(spec.n, 2 * HIGHDIM_BLOCK);
    for i in 0..spec.n {
        let x1 = cause.row(i);
        let full_sum: f64 = x1.iter().sum();
        let half_sum: f64 = x1[..HIGHDIM_BLOCK / 2].iter().sum();
        let power_sum: f64 = x1[HIGHDIM_BLOCK / 2..]
            .iter()
            .enumerate()
            .map(|(k, &v)| sigmoid(v).powi(k as i32 + 1))
            .sum();
        for (j, &v) in x1.iter().enumerate() {
            data.set(i, j, v);
        }
        for j in 0..HIGHDIM_BLOCK {
            let zi = z.get(i, j);
            let value = match forms[j] {
                HighdimForm::FullSum => sigmoid(sigmoid(full_sum) + zi),
                HighdimForm::FirstHalfSum => sigmoid(sigmoid(half_sum) + zi),
                HighdimForm::SecondHalfPowers => sigmoid(power_sum + zi),
            };
            data.set(i, HIGHDIM_BLOCK + j, value);
        }
    }
    let (cause_cols, effect_cols): (Vec<usize>, Vec<usize>) = (
        (0..HIGHDIM_BLOCK).collect(),
        (HIGHDIM_BLOCK..2 * HIGHDIM_BLOCK).collect(),
    );
    let truth = if spec.flip_direction {
        let order: Vec<usize> = effect_cols.iter().chain(&cause_cols).copied().collect();
        data = data.select_columns(&order);
        GroundTruth::BlockPair {
            cause_cols: effect_cols,
            effect_cols: cause_cols,
        }
    } else {
        GroundTruth::BlockPair {
            cause_cols,
            effect_cols,
        }
    };
    Ok(GeneratedDataset {
        data,
        truth,
        generating_params: GeneratingParams {
            spec: spec.clone(),
            noise_seed,
            sem_coeffs: None,
            highdim_forms: Some(forms),
        },
    })
}

/// Four-variable system with two sinks:
///   x1 = z1, x2 = z2,
///   x3 = x1 + c1*x2^3 + z3,
///   x4 = c2*x1^2 - x2 + z4,
/// with c1, c2 drawn uniform on [0.5, 1.5] from a stream separate from the
/// noise, so the echoed coefficients regenerate the data exactly.
pub fn generate_intervention_sem(spec: &SyntheticSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    if spec.family != Family::InterventionSem {
        return Err(Error::Config(format!(
            "generate_intervention_sem cannot produce family {}",
            spec.family.name()
        )));
    }
    let (c1, c2) = match spec.sem_coeffs {
        Some(pair) => pair,
        None => {
            let mut rng = seeded(derive_seed(spec.seed, "sem-coeffs"));
            (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5))
        }
    };
    let noise_seed = derive_seed(spec.seed, "noise");
    let z = noise_matrix(spec.noise_kind, spec.n, 4, noise_seed)?;
    let mut data = DataMatrix::zeros(spec.n, 4);
    for i in 0..spec.n {
        let (z1, z2, z3, z4) = (z.get(i, 0), z.get(i, 1), z.get(i, 2), z.get(i, 3));
        let x1 = z1;
        let x2 = z2;
        data.set(i, 0, x1);
        data.set(i, 1, x2);
        data.set(i, 2, x1 + c1 * x2.powi(3) + z3);
        data.set(i, 3, c2 * x1 * x1 - x2 + z4);
    }
    Ok(GeneratedDataset {
        data,
        truth: GroundTruth::Ordering {
            ordering: CausalOrdering::identity(4),
        },
        generating_params: GeneratingParams {
            spec: spec.clone(),
            noise_seed,
            sem_coeffs: Some((c1, c2)),
            highdim_forms: None,
        },
    })
}
