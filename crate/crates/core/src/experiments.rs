//! Simulation studies: type I error, power surfaces, prevalidation ablation.
//!
//! Trial `t` of cell `c` simulates with seed `derive_seed(master_seed, [c, t])`
//! and analyzes with a seed derived from that, so every per-trial result can
//! be recomputed in isolation and the aggregate does not depend on how the
//! trials were scheduled.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::Sender;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, AnalysisConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::trial_data::{simulate_null_trial, simulate_sweetspot_trial, NullSimConfig, SimulatedTrial, SpotDefinition, SweetSpotSimConfig};

/// Clamped-patient share above which a run emits a warning.
pub const CLAMP_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n_trials_per_cell: usize,
    pub extra_effect_grid: Vec<f64>,
    pub spot_fraction_grid: Vec<f64>,
    pub alpha: f64,
    pub base_cfg: NullSimConfig,
    pub n_permutations: usize,
    pub n_bootstraps: usize,
    pub prevalidation: bool,
    pub master_seed: u64,
    pub n_folds: usize,
    pub ridge: f64,
    pub region_covariates: Vec<usize>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            n_trials_per_cell: 200,
            extra_effect_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            spot_fraction_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            alpha: 0.05,
            base_cfg: NullSimConfig::default(),
            n_permutations: 500,
            n_bootstraps: 100,
            prevalidation: true,
            master_seed: 2021,
            n_folds: 10,
            ridge: 1e-6,
            region_covariates: vec![0, 1, 2],
        }
    }
}

impl ExperimentGrid {
    /// Full-scale settings: 1000 trials per cell, 1000 permutations and
    /// bootstrap replicates.
    pub fn full(self) -> Self {
        Self {
            n_trials_per_cell: 1000,
            n_permutations: 1000,
            n_bootstraps: 1000,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials_per_cell == 0 {
            return Err(Error::Config("experiment has no trials (n_trials_per_cell = 0)".into()));
        }
        if self.extra_effect_grid.is_empty() || self.spot_fraction_grid.is_empty() {
            return Err(Error::Config("experiment grids must be nonempty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        self.base_cfg.validate()
    }

    fn analysis_config(&self, seed: u64) -> AnalysisConfig {
        AnalysisConfig {
            n_folds: self.n_folds,
            prevalidate: self.prevalidation,
            ridge: self.ridge,
            n_permutations: self.n_permutations,
            n_bootstraps: self.n_bootstraps,
            alpha: self.alpha,
            seed,
            // Bernoulli assignment leaves fewer controls than treated in
            // about half of all trials
            drop_surplus_treated: true,
            ..AnalysisConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub p_value: f64,
    pub rejected: bool,
    pub z_hat: f64,
    pub i_hat: usize,
    pub j_hat: usize,
    pub n_sets: usize,
    pub tau_hat: f64,
    pub tau_corrected: Option<f64>,
    pub clamp_count: usize,
    /// Overlap between estimated in-spot patients and true spot members.
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub extra_effect: f64,
    pub spot_fraction: Option<f64>,
    pub n_trials: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// `sqrt(r (1 - r) / m)`
    pub rejection_se: f64,
    pub mean_tau_corrected: Option<f64>,
    pub mean_jaccard: Option<f64>,
    pub clamp_fraction: f64,
    pub trials: Vec<TrialOutcome>,
}

impl CellSummary {
    pub fn p_values(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.p_value).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub level: f64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub kind: String,
    pub spot_definition: Option<SpotDefinition>,
    pub grid: ExperimentGrid,
    pub cells: Vec<CellSummary>,
    /// Empirical p-value CDF at levels 0.01, 0.02, ..., 1.00 (null runs only).
    pub calibration: Vec<CalibrationPoint>,
    /// Kolmogorov-Smirnov distance of the pooled p-values from Uniform(0, 1).
    pub ks_distance: Option<f64>,
    pub ks_critical_1pct: Option<f64>,
    pub clamp_fraction: f64,
    pub warnings: Vec<String>,
    /// Wall time; kept out of the JSON so outputs are byte-reproducible.
    #[serde(skip)]
    pub runtime: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub n_covariates: usize,
    pub prevalidated: ExperimentSummary,
    pub not_prevalidated: ExperimentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub arms: Vec<AblationArm>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProgressEvent {
    CellStarted { cell: usize, n_trials: usize },
    TrialFinished { cell: usize, trial: usize, p_value: f64 },
    CellFinished { cell: usize, rejection_rate: f64 },
}

pub type ProgressSink = Sender<ProgressEvent>;

fn send(progress: Option<&ProgressSink>, event: ProgressEvent) {
    if let Some(tx) = progress {
        // a dropped receiver just means nobody is listening
        let _ = tx.send(event);
    }
}

struct CellSpec {
    cell: usize,
    extra_effect: f64,
    spot_fraction: Option<f64>,
}

fn run_trial(sim: &SimulatedTrial, cfg: &AnalysisConfig, trial: usize, seed: u64, spot: bool) -> Result<TrialOutcome> {
    let analysis = analyze(&sim.dataset, cfg, None)?;
    let r = &analysis.report;
    let jaccard = spot.then(|| {
        let truth: HashSet<usize> = analysis
            .sequence
            .sets()
            .iter()
            .flat_map(|s| s.members.iter().copied())
            .filter(|&i| sim.truth.in_spot[i])
            .collect();
        let estimate: HashSet<usize> = analysis.sequence.sets()[r.location.i_hat - 1..r.location.j_hat]
            .iter()
            .flat_map(|s| s.members.iter().copied())
            .collect();
        let union = truth.union(&estimate).count();
        if union == 0 {
            0.0
        } else {
            truth.intersection(&estimate).count() as f64 / union as f64
        }
    });
    Ok(TrialOutcome {
        trial,
        seed,
        p_value: r.permutation.p_value,
        rejected: r.significant,
        z_hat: r.location.z_hat,
        i_hat: r.location.i_hat,
        j_hat: r.location.j_hat,
        n_sets: r.n_matched_sets,
        tau_hat: r.tau_hat,
        tau_corrected: r.tau_corrected,
        clamp_count: sim.truth.clamp_count,
        jaccard,
    })
}

fn run_cells<F>(grid: &ExperimentGrid, cells: &[CellSpec], simulate: F, progress: Option<&ProgressSink>) -> Result<Vec<CellSummary>>
where
    F: Fn(&CellSpec, u64) -> Result<SimulatedTrial> + Sync,
{
    let m = grid.n_trials_per_cell;
    let mut out = Vec::with_capacity(cells.len());
    for spec in cells {
        send(progress, ProgressEvent::CellStarted { cell: spec.cell, n_trials: m });
        let trials = (0..m)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(grid.master_seed, &[spec.cell as u64, trial as u64]);
                let wrap = |e: Error| Error::Trial {
                    trial,
                    seed,
                    source: Box::new(e),
                };
                let sim = simulate(spec, seed).map_err(wrap)?;
                let cfg = grid.analysis_config(derive_seed(seed, &[0]));
                let outcome = run_trial(&sim, &cfg, trial, seed, spec.spot_fraction.is_some()).map_err(wrap)?;
                send(progress, ProgressEvent::TrialFinished {
                    cell: spec.cell,
                    trial,
                    p_value: outcome.p_value,
                });
                Ok(outcome)
            })
            .collect::<Result<Vec<_>>>()?;
        let rejections = trials.iter().filter(|t| t.rejected).count();
        let rate = rejections as f64 / m as f64;
        let corrected: Vec<f64> = trials.iter().filter_map(|t| t.tau_corrected).collect();
        let jaccards: Vec<f64> = trials.iter().filter_map(|t| t.jaccard).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let clamped: usize = trials.iter().map(|t| t.clamp_count).sum();
        send(progress, ProgressEvent::CellFinished { cell: spec.cell, rejection_rate: rate });
        out.push(CellSummary {
            cell: spec.cell,
            extra_effect: spec.extra_effect,
            spot_fraction: spec.spot_fraction,
            n_trials: m,
            rejections,
            rejection_rate: rate,
            rejection_se: (rate * (1.0 - rate) / m as f64).sqrt(),
            mean_tau_corrected: mean(&corrected),
            mean_jaccard: mean(&jaccards),
            clamp_fraction: clamped as f64 / (m * grid.base_cfg.n_patients) as f64,
            trials,
        });
    }
    Ok(out)
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1).
pub fn ks_uniform_distance(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / m - x).max(x - i as f64 / m))
        .fold(0.0, f64::max)
}

/// 1% critical value of the one-sample KS statistic (Stephens' approximation).
pub fn ks_critical_1pct(m: usize) -> f64 {
    let rm = (m as f64).sqrt();
    1.628 / (rm + 0.12 + 0.11 / rm)
}

fn summarize(kind: &str, spot_definition: Option<SpotDefinition>, grid: &ExperimentGrid, cells: Vec<CellSummary>, null_run: bool, started: Instant) -> ExperimentSummary {
    let pooled: Vec<f64> = cells.iter().flat_map(|c| c.p_values()).collect();
    let calibration = if null_run {
        (1..=100)
            .map(|k| {
                let level = k as f64 / 100.0;
                let hits = pooled.iter().filter(|&&p| p <= level + 1e-12).count();
                CalibrationPoint {
                    level,
                    rejection_rate: hits as f64 / pooled.len() as f64,
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let clamp_fraction = cells.iter().map(|c| c.clamp_fraction).sum::<f64>() / cells.len() as f64;
    let mut warnings = Vec::new();
    if clamp_fraction > CLAMP_WARNING_FRACTION {
        let msg = format!(
            "{:.1}% of simulated patients had their treated outcome probability clamped at 0",
            100.0 * clamp_fraction
        );
        log::warn!("{kind}: {msg}");
        warnings.push(msg);
    }
    ExperimentSummary {
        kind: kind.to_string(),
        spot_definition,
        grid: grid.clone(),
        calibration,
        ks_distance: null_run.then(|| ks_uniform_distance(&pooled)),
        ks_critical_1pct: null_run.then(|| ks_critical_1pct(pooled.len())),
        cells,
        clamp_fraction,
        warnings,
        runtime: started.elapsed(),
    }
}

fn null_cells(grid: &ExperimentGrid, kind: &str, progress: Option<&ProgressSink>) -> Result<ExperimentSummary> {
    grid.validate()?;
    let started = Instant::now();
    let cells = [CellSpec {
        cell: 0,
        extra_effect: 0.0,
        spot_fraction: None,
    }];
    let base = &grid.base_cfg;
    let cells = run_cells(grid, &cells, |_, seed| simulate_null_trial(&NullSimConfig { seed, ..base.clone() }), progress)?;
    Ok(summarize(kind, None, grid, cells, true, started))
}

/// Type I error: null trials only; `extra_effect_grid` and
/// `spot_fraction_grid` are ignored.
pub fn run_type1(grid: &ExperimentGrid, progress: Option<&ProgressSink>) -> Result<ExperimentSummary> {
    if !grid.prevalidation {
        return Err(Error::Config("type I error runs use prevalidated scores".into()));
    }
    null_cells(grid, "type1", progress)
}

/// Power over every (extra effect, spot fraction) cell; cell index is
/// `effect_index * n_fractions + fraction_index`.
pub fn run_power(grid: &ExperimentGrid, spot_definition: SpotDefinition, progress: Option<&ProgressSink>) -> Result<ExperimentSummary> {
    grid.validate()?;
    if grid.extra_effect_grid.iter().any(|&e| e <= 0.0) {
        return Err(Error::Config("power runs need positive extra effects".into()));
    }
    let started = Instant::now();
    let nf = grid.spot_fraction_grid.len();
    let cells: Vec<CellSpec> = grid
        .extra_effect_grid
        .iter()
        .enumerate()
        .flat_map(|(a, &e)| {
            grid.spot_fraction_grid.iter().enumerate().map(move |(b, &f)| CellSpec {
                cell: a * nf + b,
                extra_effect: e,
                spot_fraction: Some(f),
            })
        })
        .collect();
    let base = &grid.base_cfg;
    let cells = run_cells(
        grid,
        &cells,
        |spec, seed| {
            simulate_sweetspot_trial(&SweetSpotSimConfig {
                base: NullSimConfig { seed, ..base.clone() },
                extra_effect: spec.extra_effect,
                spot_fraction: spec.spot_fraction.expect("power cells carry a fraction"),
                spot_definition,
                region_covariates: grid.region_covariates.clone(),
            })
        },
        progress,
    )?;
    let kind = match spot_definition {
        SpotDefinition::SeverityQuantileBand => "power",
        SpotDefinition::CovariateRegion => "power-covariate",
    };
    Ok(summarize(kind, Some(spot_definition), grid, cells, false, started))
}

/// Null trials with and without prevalidated control scores, for each
/// covariate count. Both arms of a pair see the same simulated trials, and
/// the non-prevalidated arm still fits on controls only.
pub fn run_prevalidation_ablation(grid: &ExperimentGrid, p_list: &[usize], progress: Option<&ProgressSink>) -> Result<AblationSummary> {
    let arms = p_list
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let base = ExperimentGrid {
                base_cfg: NullSimConfig {
                    n_covariates: p,
                    ..grid.base_cfg.clone()
                },
                master_seed: derive_seed(grid.master_seed, &[k as u64]),
                ..grid.clone()
            };
            let with = ExperimentGrid { prevalidation: true, ..base.clone() };
            let without = ExperimentGrid { prevalidation: false, ..base };
            Ok(AblationArm {
                n_covariates: p,
                prevalidated: null_cells(&with, "ablation-prevalidated", progress)?,
                not_prevalidated: null_cells(&without, "ablation-in-sample", progress)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationSummary { arms })
}

// ---------------------------------------------------------------------------
// Output

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn csv_string<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header).map_err(|e| Error::csv("<csv>", e))?;
    fill(&mut wtr).map_err(|e| Error::csv("<csv>", e))?;
    let bytes = wtr.into_inner().map_err(|e| Error::Integrity(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Integrity(e.to_string()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-trial results: one row per trial.
pub fn p_values_csv(summary: &ExperimentSummary) -> Result<String> {
    csv_string(
        &["cell", "extra_effect", "spot_fraction", "trial", "seed", "p_value", "rejected", "z_hat", "i_hat", "j_hat", "tau_hat", "tau_corrected", "jaccard"],
        |w| {
            for c in &summary.cells {
                for t in &c.trials {
                    w.write_record([
                        c.cell.to_string(),
                        c.extra_effect.to_string(),
                        opt(c.spot_fraction),
                        t.trial.to_string(),
                        t.seed.to_string(),
                        t.p_value.to_string(),
                        (t.rejected as u8).to_string(),
                        t.z_hat.to_string(),
                        t.i_hat.to_string(),
                        t.j_hat.to_string(),
                        t.tau_hat.to_string(),
                        opt(t.tau_corrected),
                        opt(t.jaccard),
                    ])?;
                }
            }
            Ok(())
        },
    )
}

/// Long format: `cell, extra_effect, spot_fraction, metric, value`.
pub fn tidy_csv(summary: &ExperimentSummary) -> Result<String> {
    csv_string(&["kind", "cell", "extra_effect", "spot_fraction", "metric", "value"], |w| {
        for c in &summary.cells {
            let metrics = [
                ("rejection_rate", Some(c.rejection_rate)),
                ("rejection_se", Some(c.rejection_se)),
                ("mean_tau_corrected", c.mean_tau_corrected),
                ("mean_jaccard", c.mean_jaccard),
                ("clamp_fraction", Some(c.clamp_fraction)),
            ];
            for (name, value) in metrics {
                if let Some(v) = value {
                    w.write_record([
                        summary.kind.clone(),
                        c.cell.to_string(),
                        c.extra_effect.to_string(),
                        opt(c.spot_fraction),
                        name.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        Ok(())
    })
}

/// Writes `summary.json`, `p_values.csv`, `tidy.csv` and `timing.json`
/// (the only non-reproducible file) into `dir`.
pub fn write_experiment_outputs(summary: &ExperimentSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(vec![
        write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(summary)?)?,
        write_file(&dir.join("p_values.csv"), &p_values_csv(summary)?)?,
        write_file(&dir.join("tidy.csv"), &tidy_csv(summary)?)?,
        write_file(
            &dir.join("timing.json"),
            &serde_json::to_string_pretty(&serde_json::json!({ "runtime_secs": summary.runtime.as_secs_f64() }))?,
        )?,
    ])
}

/// Writes one output directory per arm: `p<covariates>/{prevalidated,in_sample}`.
pub fn write_ablation_outputs(summary: &AblationSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for arm in &summary.arms {
        let base = dir.join(format!("p{}", arm.n_covariates));
        written.extend(write_experiment_outputs(&arm.prevalidated, &base.join("prevalidated"))?);
        written.extend(write_experiment_outputs(&arm.not_prevalidated, &base.join("in_sample"))?);
    }
    Ok(written)
}
