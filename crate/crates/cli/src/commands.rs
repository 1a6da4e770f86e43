//! The six subcommands. Each resolves its inputs, calls the library, and
//! emits one Report. User-facing variable indices and orderings are 1-based;
//! the library is 0-based throughout.

use std::path::PathBuf;
use std::time::Instant;

use caflow::data::DataMatrix;
use caflow::datagen::{self, Family, GroundTruth, HighdimForm, NoiseKind, SyntheticSpec};
use caflow::discovery::{
    group_direction, likelihood_ratio_bivariate, ordering_search, Decision, DirectionReport,
    DiscoveryConfig, FitMeta,
};
use caflow::flow::CausalOrdering;
use caflow::queries::{self, CounterfactualQuery, InterventionMode, InterventionQuery};
use caflow::rng::{derive_seed, derive_seed_indexed, seeded};
use caflow::train::{fit_flow, FitResult, TrainConfig};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Resolved;
use crate::csv::{load_csv, LoadedCsv};
use crate::report::{emit, DatasetEcho, Report};
use crate::CliError;

pub fn discover(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let (path, loaded) = require_data(r)?;
    let report = likelihood_ratio_bivariate(&loaded.data, &r.discovery_config())?;
    finish("discover", r, argv, started, Some((&path, &loaded)), report)
}

#[derive(Serialize)]
struct OrderEntry {
    /// Variables in causal order, 1-based.
    ordering: Vec<usize>,
    test_loglik: f64,
}

#[derive(Serialize)]
struct OrderResults {
    entries: Vec<OrderEntry>,
    best: Vec<usize>,
    fit_meta: FitMeta,
}

pub fn order(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let (path, loaded) = require_data(r)?;
    let report = ordering_search(&loaded.data, &r.discovery_config())?;
    let results = OrderResults {
        entries: report
            .entries
            .iter()
            .map(|e| OrderEntry {
                ordering: e.ordering.sequence_one_based(),
                test_loglik: e.test_loglik,
            })
            .collect(),
        best: report.best.sequence_one_based(),
        fit_meta: report.fit_meta,
    };
    finish("order", r, argv, started, Some((&path, &loaded)), results)
}

#[derive(Serialize)]
struct FitSummary {
    test_loglik: f64,
    n_train: usize,
    n_test: usize,
    final_lr: f64,
}

impl FitSummary {
    fn of(fit: &FitResult) -> Self {
        Self {
            test_loglik: fit.test_loglik,
            n_train: fit.n_train,
            n_test: fit.n_test,
            final_lr: fit.final_lr,
        }
    }
}

#[derive(Serialize)]
struct InterveneResults {
    /// Intervened variable, 1-based.
    target: usize,
    value: f64,
    n_samples: usize,
    mode: InterventionMode,
    query_seed: u64,
    ordering: Vec<usize>,
    /// Post-intervention Monte Carlo mean per variable.
    means: Vec<f64>,
    stderrs: Vec<f64>,
    fit: FitSummary,
}

pub fn intervene(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let (path, loaded) = require_data(r)?;
    let ordering = query_ordering(r, loaded.data.n_cols())?;
    let target = require_target(r, loaded.data.n_cols())?;
    let value = require_value(r)?;
    let fit = fit_flow(&loaded.data, &ordering, &r.cfg.train)?;
    let query = InterventionQuery {
        target_index: target,
        value,
        n_samples: r.cfg.n_samples,
        mode: r.cfg.mode,
        seed: derive_seed(r.seed, "intervention"),
    };
    let result = queries::intervene(&fit.model, &query)?;
    let results = InterveneResults {
        target: target + 1,
        value,
        n_samples: query.n_samples,
        mode: query.mode,
        query_seed: query.seed,
        ordering: ordering.sequence_one_based(),
        means: result.means,
        stderrs: result.stderrs,
        fit: FitSummary::of(&fit),
    };
    finish("intervene", r, argv, started, Some((&path, &loaded)), results)
}

#[derive(Serialize)]
struct CounterfactualResults {
    /// Forced variable, 1-based.
    target: usize,
    value: f64,
    ordering: Vec<usize>,
    x_obs: Vec<f64>,
    x_counterfactual: Vec<f64>,
    fit: FitSummary,
}

pub fn counterfactual(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let (path, loaded) = require_data(r)?;
    let obs = r
        .cfg
        .obs
        .clone()
        .ok_or_else(|| CliError::Usage("missing --obs (or `obs` in the config file)".into()))?;
    let ordering = query_ordering(r, loaded.data.n_cols())?;
    let target = require_target(r, loaded.data.n_cols())?;
    let value = require_value(r)?;
    let fit = fit_flow(&loaded.data, &ordering, &r.cfg.train)?;
    let x_cf = queries::counterfactual(
        &fit.model,
        &CounterfactualQuery {
            x_obs: obs.clone(),
            target_index: target,
            value,
        },
    )?;
    let results = CounterfactualResults {
        target: target + 1,
        value,
        ordering: ordering.sequence_one_based(),
        x_obs: obs,
        x_counterfactual: x_cf,
        fit: FitSummary::of(&fit),
    };
    finish(
        "counterfactual",
        r,
        argv,
        started,
        Some((&path, &loaded)),
        results,
    )
}

/// Ground truth of a generated dataset, 1-based for display.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TruthSummary {
    Ordering {
        sequence: Vec<usize>,
    },
    BlockPair {
        cause_cols: Vec<usize>,
        effect_cols: Vec<usize>,
    },
}

impl TruthSummary {
    fn of(truth: &GroundTruth) -> Self {
        match truth {
            GroundTruth::Ordering { ordering } => TruthSummary::Ordering {
                sequence: ordering.sequence_one_based(),
            },
            GroundTruth::BlockPair {
                cause_cols,
                effect_cols,
            } => TruthSummary::BlockPair {
                cause_cols: cause_cols.iter().map(|c| c + 1).collect(),
                effect_cols: effect_cols.iter().map(|c| c + 1).collect(),
            },
        }
    }
}

#[derive(Serialize)]
struct SimulateResults {
    family: &'static str,
    n: usize,
    noise_kind: NoiseKind,
    flip_direction: bool,
    truth: TruthSummary,
    noise_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sem_coeffs: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    highdim_forms: Option<Vec<HighdimForm>>,
    csv_path: String,
    truth_path: String,
    n_rows: usize,
    n_cols: usize,
}

/// Ground truth and drawn coefficients, written next to the dataset so
/// benchmark answers never have to be reverse-engineered from the CSV.
#[derive(Serialize)]
struct TruthSidecar<'a> {
    truth: &'a GroundTruth,
    generating_params: &'a datagen::GeneratingParams,
}

pub fn simulate(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let out = r.cfg.out.clone().ok_or_else(|| {
        CliError::Usage("simulate requires --out for the dataset CSV".into())
    })?;
    let spec = &r.cfg.synthetic;
    let ds = datagen::generate(spec)?;
    std::fs::write(&out, ds.data.to_csv_string())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
    let truth_path = out.with_extension("truth.json");
    let sidecar = TruthSidecar {
        truth: &ds.truth,
        generating_params: &ds.generating_params,
    };
    let mut sidecar_text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CliError::Data(format!("cannot serialize ground truth: {e}")))?;
    sidecar_text.push('\n');
    std::fs::write(&truth_path, sidecar_text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", truth_path.display())))?;
    let results = SimulateResults {
        family: spec.family.name(),
        n: spec.n,
        noise_kind: spec.noise_kind,
        flip_direction: spec.flip_direction,
        truth: TruthSummary::of(&ds.truth),
        noise_seed: ds.generating_params.noise_seed,
        sem_coeffs: ds.generating_params.sem_coeffs,
        highdim_forms: ds.generating_params.highdim_forms.clone(),
        csv_path: out.display().to_string(),
        truth_path: truth_path.display().to_string(),
        n_rows: ds.data.n_rows(),
        n_cols: ds.data.n_cols(),
    };
    finish("simulate", r, argv, started, None, results)
}

struct BenchRow {
    family: &'static str,
    n: usize,
    rep: usize,
    decision: Decision,
    r: f64,
    correct: bool,
}

#[derive(Serialize)]
struct AccuracyCell {
    family: &'static str,
    n: usize,
    accuracy: f64,
    undecided_rate: f64,
}

#[derive(Serialize)]
struct BenchmarkResults {
    families: Vec<&'static str>,
    sample_sizes: Vec<usize>,
    reps: usize,
    noise_kind: NoiseKind,
    additive_only: bool,
    csv_path: String,
    csv_rows: usize,
    accuracy: Vec<AccuracyCell>,
}

pub fn benchmark(r: &Resolved, argv: &[String], started: Instant) -> Result<(), CliError> {
    let out = r.cfg.out.clone().ok_or_else(|| {
        CliError::Usage("benchmark requires --out for the per-repetition CSV".into())
    })?;
    let families: Vec<Family> = r
        .cfg
        .families
        .iter()
        .map(|name| name.parse::<Family>().map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    if families.iter().any(|f| *f == Family::InterventionSem) {
        return Err(CliError::Usage(
            "intervention_sem has no pairwise direction truth; benchmark covers the pair families"
                .into(),
        ));
    }
    if families.is_empty() || r.cfg.sample_sizes.is_empty() || r.cfg.reps == 0 {
        return Err(CliError::Usage(
            "benchmark grid is empty: need at least one family, one sample size, reps >= 1".into(),
        ));
    }

    let mut jobs = Vec::new();
    for &family in &families {
        for &n in &r.cfg.sample_sizes {
            for rep in 0..r.cfg.reps {
                jobs.push((family, n, rep));
            }
        }
    }
    // Repetitions are independent given their derived seeds; output order is
    // the grid order regardless of scheduling.
    let rows: Vec<BenchRow> = jobs
        .par_iter()
        .map(|&(family, n, rep)| run_benchmark_rep(r, family, n, rep))
        .collect::<Result<_, _>>()?;

    let mut csv = String::from("family,n,repetition,decision,r,correct\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.family,
            row.n,
            row.rep,
            decision_str(row.decision),
            row.r,
            row.correct
        ));
    }
    std::fs::write(&out, &csv)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;

    let mut accuracy = Vec::new();
    for &family in &families {
        for &n in &r.cfg.sample_sizes {
            let cell: Vec<&BenchRow> = rows
                .iter()
                .filter(|row| row.family == family.name() && row.n == n)
                .collect();
            let hits = cell.iter().filter(|row| row.correct).count();
            let undecided = cell
                .iter()
                .filter(|row| row.decision == Decision::Undecided)
                .count();
            accuracy.push(AccuracyCell {
                family: family.name(),
                n,
                accuracy: hits as f64 / cell.len() as f64,
                undecided_rate: undecided as f64 / cell.len() as f64,
            });
        }
    }
    let results = BenchmarkResults {
        families: families.iter().map(|f| f.name()).collect(),
        sample_sizes: r.cfg.sample_sizes.clone(),
        reps: r.cfg.reps,
        noise_kind: r.cfg.synthetic.noise_kind,
        additive_only: r.cfg.train.additive_only,
        csv_path: out.display().to_string(),
        csv_rows: rows.len(),
        accuracy,
    };
    finish("benchmark", r, argv, started, None, results)
}

fn run_benchmark_rep(
    r: &Resolved,
    family: Family,
    n: usize,
    rep: usize,
) -> Result<BenchRow, CliError> {
    let cell = format!("bench:{}:{n}", family.name());
    let rep_seed = derive_seed_indexed(r.seed, &cell, rep as u64);
    let flip = seeded(derive_seed(rep_seed, "flip")).gen::<bool>();
    let spec = SyntheticSpec {
        family,
        n,
        seed: rep_seed,
        coeff: r.cfg.synthetic.coeff,
        noise_kind: r.cfg.synthetic.noise_kind,
        flip_direction: flip,
        sem_coeffs: None,
        highdim_forms: None,
    };
    let ds = datagen::generate(&spec)?;
    let dcfg = DiscoveryConfig {
        train: TrainConfig {
            seed: derive_seed(rep_seed, "fit"),
            ..r.cfg.train.clone()
        },
        threshold: r.cfg.threshold,
        architectures: r.cfg.architectures.clone(),
        max_d: r.cfg.max_d,
    };
    let (report, expected) = benchmark_decision(&ds.data, &ds.truth, &dcfg)?;
    Ok(BenchRow {
        family: family.name(),
        n,
        rep,
        decision: report.decision,
        r: report.r,
        correct: report.decision == expected,
    })
}

/// Runs the direction test matching the dataset's truth shape and returns
/// the report plus the decision a perfect detector would make.
fn benchmark_decision(
    data: &DataMatrix,
    truth: &GroundTruth,
    dcfg: &DiscoveryConfig,
) -> Result<(DirectionReport, Decision), CliError> {
    match truth {
        GroundTruth::Ordering { ordering } => {
            let report = likelihood_ratio_bivariate(data, dcfg)?;
            let expected = if ordering.rank_of(0) == 0 {
                Decision::X1CausesX2
            } else {
                Decision::X2CausesX1
            };
            Ok((report, expected))
        }
        GroundTruth::BlockPair { cause_cols, .. } => {
            let d = data.n_cols();
            let left: Vec<usize> = (0..d / 2).collect();
            let right: Vec<usize> = (d / 2..d).collect();
            let report = group_direction(
                &data.select_columns(&left),
                &data.select_columns(&right),
                dcfg,
            )?;
            let expected = if cause_cols.contains(&0) {
                Decision::X1CausesX2
            } else {
                Decision::X2CausesX1
            };
            Ok((report, expected))
        }
    }
}

fn decision_str(d: Decision) -> &'static str {
    match d {
        Decision::X1CausesX2 => "x1_causes_x2",
        Decision::X2CausesX1 => "x2_causes_x1",
        Decision::Undecided => "undecided",
    }
}

fn require_data(r: &Resolved) -> Result<(PathBuf, LoadedCsv), CliError> {
    let path = r
        .cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Usage("missing --data (or `data` in the config file)".into()))?;
    let loaded = load_csv(&path)?;
    Ok((path, loaded))
}

fn require_target(r: &Resolved, d: usize) -> Result<usize, CliError> {
    let target = r.cfg.target.ok_or_else(|| {
        CliError::Usage("missing --target (or `target` in the config file)".into())
    })?;
    if target == 0 {
        return Err(CliError::Usage("target is 1-based; 0 is not a variable".into()));
    }
    if target > d {
        return Err(CliError::Data(format!(
            "target x{target} out of range: the data has {d} variables"
        )));
    }
    Ok(target - 1)
}

fn require_value(r: &Resolved) -> Result<f64, CliError> {
    r.cfg
        .value
        .ok_or_else(|| CliError::Usage("missing --value (or `value` in the config file)".into()))
}

/// The model ordering for query fits: `--ordering` if given, else the column
/// order of the file.
fn query_ordering(r: &Resolved, d: usize) -> Result<CausalOrdering, CliError> {
    let Some(seq) = &r.cfg.ordering else {
        return Ok(CausalOrdering::identity(d));
    };
    if seq.iter().any(|&v| v == 0) {
        return Err(CliError::Usage(
            "ordering indices are 1-based; 0 is not a variable".into(),
        ));
    }
    let zero_based: Vec<usize> = seq.iter().map(|&v| v - 1).collect();
    let ordering = CausalOrdering::from_sequence(&zero_based)?;
    if ordering.d() != d {
        return Err(CliError::Data(format!(
            "ordering covers {} variables, the data has {d}",
            ordering.d()
        )));
    }
    Ok(ordering)
}

fn finish<T: Serialize>(
    command: &'static str,
    r: &Resolved,
    argv: &[String],
    started: Instant,
    dataset: Option<(&PathBuf, &LoadedCsv)>,
    results: T,
) -> Result<(), CliError> {
    // simulate/benchmark use --out for their CSV artifact; the report copy
    // only applies to the report-producing subcommands.
    let copy_to = match command {
        "simulate" | "benchmark" => None,
        _ => r.cfg.out.as_deref(),
    };
    let report = Report {
        command,
        argv: argv.iter().skip(1).cloned().collect(),
        config_digest: r.digest(),
        seed: r.seed,
        seed_source: r.seed_source,
        dataset: dataset.map(|(path, loaded)| DatasetEcho {
            path: path.display().to_string(),
            n_rows: loaded.data.n_rows(),
            n_cols: loaded.data.n_cols(),
            columns: loaded.columns.clone(),
        }),
        results,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    emit(&report, copy_to)
}
