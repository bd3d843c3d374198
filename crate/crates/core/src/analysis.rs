//! The end-to-end pipeline: score, match, scan, test, debias, report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{bootstrap_debias, naive_cate, permutation_test, quantile, DebiasResult, PValueEstimator, PermutationResult};
use crate::matching::{compute_effects, optimal_match, optimal_match_dropping_treated, write_matched_sets_csv, EffectSequence};
use crate::predilection::{
    auprc, auroc, make_fold_plan, make_stratified_fold_plan, prevalidated_control_scores, score_arm, score_treated,
    score_with_external, GlmOptions, Link, PredilectionModel, Provenance, ScoredPatient,
};
use crate::rng::derive_seed;
use crate::scan::{find_sweet_spot, ScanConstraints, SweetSpotLocation};
use crate::trial_data::{OutcomeDirection, TrialDataset};

pub const REPORT_SCHEMA_VERSION: &str = "1.0";

const FOLD_STREAM: u64 = 1;
const PERMUTATION_STREAM: u64 = 2;
const BOOTSTRAP_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// `None` picks logistic for binary outcomes, linear otherwise.
    pub link: Option<Link>,
    pub n_folds: usize,
    pub stratify_folds: bool,
    /// Score controls out-of-fold. Turning this off exists for the ablation study.
    pub prevalidate: bool,
    pub ridge: f64,
    pub match_ratio: usize,
    /// With too few controls for every treated patient, form as many sets as
    /// possible instead of failing. The unmatched treated are reported.
    pub drop_surplus_treated: bool,
    pub scan: ScanConstraints,
    pub n_permutations: usize,
    pub n_bootstraps: usize,
    pub estimator: PValueEstimator,
    pub alpha: f64,
    /// Overrides the dataset's outcome orientation.
    pub outcome_direction: Option<OutcomeDirection>,
    pub seed: u64,
    /// Odd moving-average width for the plotted effect curve.
    pub smoothing_window: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            link: None,
            n_folds: 10,
            stratify_folds: false,
            prevalidate: true,
            ridge: 1e-6,
            match_ratio: 1,
            drop_surplus_treated: false,
            scan: ScanConstraints::default(),
            n_permutations: 1000,
            n_bootstraps: 1000,
            estimator: PValueEstimator::Plugin,
            alpha: 0.05,
            outcome_direction: None,
            seed: 0,
            smoothing_window: 51,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.match_ratio == 0 {
            return Err(Error::Config("match ratio must be at least 1".into()));
        }
        if self.n_permutations == 0 || self.n_bootstraps == 0 {
            return Err(Error::Config("permutation and bootstrap counts must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0, 1)", self.alpha)));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::Config(format!("smoothing window {} must be odd", self.smoothing_window)));
        }
        if self.n_folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.n_folds)));
        }
        self.scan.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub source: String,
    pub link: Link,
    pub intercept: f64,
    pub coefficients: IndexMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub odds_ratios: Option<IndexMap<String, f64>>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Discrimination of the control scores against control outcomes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_auprc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub p_value: f64,
    pub estimator: PValueEstimator,
    pub n_permutations: usize,
    pub exceedances: usize,
    pub null_mean: f64,
    pub null_q50: f64,
    pub null_q95: f64,
    pub null_q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_replicates: usize,
    pub tau_boot_mean: f64,
    /// 2.5%, 50% and 97.5% quantiles of the replicate spot starts.
    pub i_quantiles: [f64; 3],
    pub j_quantiles: [f64; 3],
    pub tau_quantiles: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub tool_version: String,
    pub seed: u64,
    pub config: AnalysisConfig,
    /// SHA-256 of the input file, when the data came from one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotReport {
    pub schema_version: String,
    pub model: ModelSummary,
    pub n_patients: usize,
    pub n_treated: usize,
    pub n_controls: usize,
    pub n_unmatched_controls: usize,
    pub n_unmatched_treated: usize,
    pub match_ratio: usize,
    pub n_matched_sets: usize,
    pub location: SweetSpotLocation,
    pub tau_hat: f64,
    pub tau_outside: Option<f64>,
    pub tau_boot_mean: Option<f64>,
    pub bias_hat: Option<f64>,
    pub tau_corrected: Option<f64>,
    pub tau_outside_corrected: Option<f64>,
    pub permutation: PermutationSummary,
    pub alpha: f64,
    pub significant: bool,
    pub bootstrap: Option<BootstrapSummary>,
    pub notes: Vec<String>,
    pub provenance: ReportProvenance,
}

impl SweetSpotReport {
    /// Structural checks run before a report is written anywhere.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Integrity(format!("report: {msg}")));
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return fail(format!("unknown schema version {}", self.schema_version));
        }
        let loc = &self.location;
        if !(1 <= loc.i_hat && loc.i_hat < loc.j_hat && loc.j_hat <= self.n_matched_sets) {
            return fail(format!("spot ({}, {}) outside 1..={}", loc.i_hat, loc.j_hat, self.n_matched_sets));
        }
        if loc.score_lo > loc.score_hi {
            return fail("score bounds reversed".into());
        }
        let p = self.permutation.p_value;
        if !(0.0..=1.0).contains(&p) {
            return fail(format!("p-value {p} outside [0, 1]"));
        }
        if self.significant != (p < self.alpha) {
            return fail("significance flag disagrees with p-value".into());
        }
        let mut numbers = vec![loc.z_hat, loc.score_lo, loc.score_hi, self.tau_hat, self.model.intercept];
        numbers.extend(self.model.coefficients.values());
        numbers.extend([self.tau_outside, self.tau_corrected, self.bias_hat, self.tau_boot_mean].into_iter().flatten());
        if numbers.iter().any(|v| !v.is_finite()) {
            return fail("non-finite value".into());
        }
        if let (Some(c), Some(m)) = (self.tau_corrected, self.tau_boot_mean) {
            if c != 2.0 * self.tau_hat - m {
                return fail("corrected estimate is not 2 * tau_hat - tau_boot_mean".into());
            }
        }
        if self.n_matched_sets * (self.match_ratio + 1) + self.n_unmatched_controls + self.n_unmatched_treated != self.n_patients {
            return fail("patient accounting does not add up".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything the pipeline produced, including intermediates.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: SweetSpotReport,
    pub model: PredilectionModel,
    pub control_scores: Vec<ScoredPatient>,
    pub treated_scores: Vec<ScoredPatient>,
    pub sequence: EffectSequence,
    pub permutation: PermutationResult,
    pub debias: Option<DebiasResult>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs the full pipeline. With `external_model` both arms are scored by that
/// model and no fitting happens.
pub fn analyze(dataset: &TrialDataset, cfg: &AnalysisConfig, external_model: Option<&PredilectionModel>) -> Result<Analysis> {
    cfg.validate()?;
    let mut notes = Vec::new();
    let dataset = match cfg.outcome_direction {
        Some(d) if d != dataset.outcome_direction() => std::borrow::Cow::Owned(dataset.clone().with_direction(d)),
        _ => std::borrow::Cow::Borrowed(dataset),
    };
    let dataset = dataset.as_ref();
    let link = cfg.link.unwrap_or_else(|| Link::for_outcome(dataset.outcome_kind()));
    let opts = GlmOptions::with_ridge(cfg.ridge);

    // 1. predilection scores
    let (model, control_scores, treated_scores, source) = match external_model {
        Some(m) => {
            let (c, t) = score_with_external(dataset, m).map_err(|e| e.in_stage("scoring"))?;
            (m.clone(), c, t, "external")
        }
        None => {
            let (model, treated) = score_treated(dataset, link, &opts).map_err(|e| e.in_stage("scoring"))?;
            let controls = if cfg.prevalidate {
                let n_controls = dataset.n_controls();
                let fold_seed = derive_seed(cfg.seed, &[FOLD_STREAM]);
                let plan = if cfg.stratify_folds {
                    let y: Vec<f64> = dataset.controls().map(|(_, p)| p.outcome).collect();
                    make_stratified_fold_plan(&y, cfg.n_folds, fold_seed)
                } else {
                    make_fold_plan(n_controls, cfg.n_folds, fold_seed)
                }
                .map_err(|e| e.in_stage("scoring"))?;
                prevalidated_control_scores(dataset, &plan, link, &opts)
                    .map_err(|e| e.in_stage("scoring"))?
                    .scores
            } else {
                notes.push("controls scored in-sample (no prevalidation)".to_string());
                score_arm(dataset, &model, false, Provenance::FullControlModel)
            };
            if !model.converged {
                notes.push(format!("score model did not converge in {} iterations", model.n_iterations));
            }
            (model, controls, treated, "fitted")
        }
    };

    // 2. matching and per-set effects
    let k = cfg.match_ratio;
    let groups = if control_scores.len() < k * treated_scores.len() {
        if cfg.drop_surplus_treated {
            let (groups, dropped) =
                optimal_match_dropping_treated(&control_scores, &treated_scores, k).map_err(|e| e.in_stage("matching"))?;
            notes.push(format!("{} treated patients left unmatched for lack of controls", dropped.len()));
            groups
        } else {
            log::warn!(
                "{} controls cannot fill {} sets at ratio {k}:1",
                control_scores.len(),
                treated_scores.len()
            );
            return Err(Error::Infeasible {
                controls: control_scores.len(),
                treated: treated_scores.len(),
                k,
                deficit: k * treated_scores.len() - control_scores.len(),
            }
            .in_stage("matching"));
        }
    } else {
        optimal_match(&control_scores, &treated_scores, k).map_err(|e| e.in_stage("matching"))?
    };
    let sequence = compute_effects(&groups, dataset).map_err(|e| e.in_stage("matching"))?;

    // 3. sweet spot
    let location = find_sweet_spot(&sequence, &cfg.scan).map_err(|e| e.in_stage("scan"))?;
    let t = sequence.effects();
    let (tau_hat, tau_outside) = naive_cate(t, location.i_hat, location.j_hat).map_err(|e| e.in_stage("scan"))?;

    // 4. permutation test
    let permutation = permutation_test(
        t,
        location.z_hat,
        &cfg.scan,
        cfg.n_permutations,
        derive_seed(cfg.seed, &[PERMUTATION_STREAM]),
        cfg.estimator,
    )
    .map_err(|e| e.in_stage("permutation test"))?;

    // 5. debiasing
    let debias = if tau_outside.is_some() {
        Some(
            bootstrap_debias(t, &location, &cfg.scan, cfg.n_bootstraps, derive_seed(cfg.seed, &[BOOTSTRAP_STREAM]))
                .map_err(|e| e.in_stage("bootstrap"))?,
        )
    } else {
        notes.push("sweet spot spans every matched set; bootstrap debiasing skipped".to_string());
        None
    };

    let report = build_report(dataset, cfg, &model, source, &control_scores, &sequence, location, tau_hat, tau_outside, &permutation, debias.as_ref(), notes);
    report.validate()?;
    Ok(Analysis {
        report,
        model,
        control_scores,
        treated_scores,
        sequence,
        permutation,
        debias,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    dataset: &TrialDataset,
    cfg: &AnalysisConfig,
    model: &PredilectionModel,
    source: &str,
    control_scores: &[ScoredPatient],
    sequence: &EffectSequence,
    location: SweetSpotLocation,
    tau_hat: f64,
    tau_outside: Option<f64>,
    permutation: &PermutationResult,
    debias: Option<&DebiasResult>,
    mut notes: Vec<String>,
) -> SweetSpotReport {
    let names = dataset.covariate_names();
    let coefficients: IndexMap<String, f64> = names.iter().cloned().zip(model.coefficients.iter().copied()).collect();
    let odds_ratios = model.odds_ratios().map(|(icpt, ors)| {
        let mut m = IndexMap::new();
        m.insert("intercept".to_string(), icpt);
        m.extend(names.iter().cloned().zip(ors));
        m
    });
    let (control_auroc, control_auprc) = if model.link == Link::Logistic {
        let scores: Vec<f64> = control_scores.iter().map(|s| s.score).collect();
        let labels: Vec<f64> = control_scores.iter().map(|s| dataset.patients()[s.index].outcome).collect();
        (auroc(&scores, &labels), auprc(&scores, &labels))
    } else {
        (None, None)
    };

    let null = &permutation.null_max_z;
    let q = |p| quantile(null, p).unwrap_or(f64::NAN);
    let significant = permutation.p_value < cfg.alpha;
    if !significant {
        notes.push(format!("not significant at alpha = {}", cfg.alpha));
    }

    let bootstrap = debias.map(|d| {
        let as_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let q3 = |v: &[f64]| [0.025, 0.5, 0.975].map(|p| quantile(v, p).unwrap_or(f64::NAN));
        BootstrapSummary {
            n_replicates: d.n_replicates(),
            tau_boot_mean: d.tau_boot_mean,
            i_quantiles: q3(&as_f(&d.boot_i)),
            j_quantiles: q3(&as_f(&d.boot_j)),
            tau_quantiles: q3(&d.boot_tau),
        }
    });

    let n_sets = sequence.len();
    SweetSpotReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        model: ModelSummary {
            source: source.to_string(),
            link: model.link,
            intercept: model.intercept,
            coefficients,
            odds_ratios,
            converged: model.converged,
            n_iterations: model.n_iterations,
            control_auroc,
            control_auprc,
        },
        n_patients: dataset.len(),
        n_treated: dataset.n_treated(),
        n_controls: dataset.n_controls(),
        n_unmatched_controls: dataset.n_controls() - n_sets * cfg.match_ratio,
        n_unmatched_treated: dataset.n_treated() - n_sets,
        match_ratio: cfg.match_ratio,
        n_matched_sets: n_sets,
        location,
        tau_hat,
        tau_outside,
        tau_boot_mean: debias.map(|d| d.tau_boot_mean),
        bias_hat: debias.map(|d| d.bias_hat),
        tau_corrected: debias.map(|d| d.tau_corrected),
        tau_outside_corrected: debias.and_then(|d| d.tau_outside_corrected),
        permutation: PermutationSummary {
            p_value: permutation.p_value,
            estimator: permutation.estimator,
            n_permutations: permutation.n_permutations,
            exceedances: permutation.exceedances,
            null_mean: null.iter().sum::<f64>() / null.len() as f64,
            null_q50: q(0.5),
            null_q95: q(0.95),
            null_q99: q(0.99),
        },
        alpha: cfg.alpha,
        significant,
        bootstrap,
        notes,
        provenance: ReportProvenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            input_sha256: None,
        },
    }
}

// ---------------------------------------------------------------------------
// Plot data and intermediates

/// Centred moving average, truncated (not padded) at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!("smoothing window {window} must be odd")));
    }
    if window > values.len() {
        return Err(Error::Config(format!("smoothing window {window} exceeds {} points", values.len())));
    }
    let half = window / 2;
    let n = values.len();
    Ok((0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut wtr = create(path)?;
    wtr.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        wtr.write_record(row.into_iter().collect::<Vec<_>>()).map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn histogram(values: &[f64], bins: usize, extra: f64) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(extra, f64::min);
    let hi = values.iter().copied().fold(extra, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}

/// Writes the CSVs needed to redraw the standard figures into `dir`:
/// effects with a smoothed curve, the null distribution with the observed
/// statistic, the bootstrap location distributions, and the in/out effect
/// segments.
pub fn emit_plot_data(analysis: &Analysis, dir: &Path, window: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seq = &analysis.sequence;
    let loc = &analysis.report.location;
    let mut written = Vec::new();

    let window = if window > seq.len() {
        let w = if seq.len() % 2 == 1 { seq.len() } else { seq.len() - 1 };
        log::warn!("smoothing window {window} exceeds {} matched sets; using {w}", seq.len());
        w
    } else {
        window
    };
    let smooth = moving_average(seq.effects(), window)?;
    written.push(write_rows(
        &dir.join("effects_by_score.csv"),
        &["position", "score", "effect", "smoothed", "in_spot"],
        (0..seq.len()).map(|k| {
            vec![
                (k + 1).to_string(),
                seq.scores()[k].to_string(),
                seq.effects()[k].to_string(),
                smooth[k].to_string(),
                (loc.contains(k + 1) as u8).to_string(),
            ]
        }),
    )?);

    let null = &analysis.permutation.null_max_z;
    written.push(write_rows(
        &dir.join("null_max_z.csv"),
        &["permutation", "max_z"],
        null.iter().enumerate().map(|(b, z)| vec![(b + 1).to_string(), z.to_string()]),
    )?);
    let z_hat = loc.z_hat;
    written.push(write_rows(
        &dir.join("null_histogram.csv"),
        &["bin_lo", "bin_hi", "count", "z_hat"],
        histogram(null, 30, z_hat)
            .into_iter()
            .map(|(a, b, c)| vec![a.to_string(), b.to_string(), c.to_string(), z_hat.to_string()]),
    )?);

    if let Some(d) = &analysis.debias {
        written.push(write_rows(
            &dir.join("bootstrap.csv"),
            &["replicate", "i", "j", "tau"],
            (0..d.n_replicates()).map(|b| {
                vec![(b + 1).to_string(), d.boot_i[b].to_string(), d.boot_j[b].to_string(), d.boot_tau[b].to_string()]
            }),
        )?);
        let mut counts = vec![(0usize, 0usize); seq.len() + 1];
        for (&i, &j) in d.boot_i.iter().zip(&d.boot_j) {
            counts[i].0 += 1;
            counts[j].1 += 1;
        }
        written.push(write_rows(
            &dir.join("bootstrap_location_histogram.csv"),
            &["position", "count_i", "count_j", "i_hat", "j_hat"],
            (1..=seq.len()).filter(|&k| counts[k] != (0, 0)).map(|k| {
                vec![
                    k.to_string(),
                    counts[k].0.to_string(),
                    counts[k].1.to_string(),
                    loc.i_hat.to_string(),
                    loc.j_hat.to_string(),
                ]
            }),
        )?);
    }

    let r = &analysis.report;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut segments = Vec::new();
    if loc.i_hat > 1 {
        segments.push(vec![
            "below".to_string(),
            "1".to_string(),
            (loc.i_hat - 1).to_string(),
            seq.scores()[0].to_string(),
            seq.scores()[loc.i_hat - 2].to_string(),
            fmt(r.tau_outside),
            fmt(r.tau_outside_corrected),
        ]);
    }
    segments.push(vec![
        "inside".to_string(),
        loc.i_hat.to_string(),
        loc.j_hat.to_string(),
        loc.score_lo.to_string(),
        loc.score_hi.to_string(),
        r.tau_hat.to_string(),
        fmt(r.tau_corrected),
    ]);
    if loc.j_hat < seq.len() {
        segments.push(vec![
            "above".to_string(),
            (loc.j_hat + 1).to_string(),
            seq.len().to_string(),
            seq.scores()[loc.j_hat].to_string(),
            seq.scores()[seq.len() - 1].to_string(),
            fmt(r.tau_outside),
            fmt(r.tau_outside_corrected),
        ]);
    }
    written.push(write_rows(
        &dir.join("cate_segments.csv"),
        &["segment", "position_lo", "position_hi", "score_lo", "score_hi", "tau", "tau_corrected"],
        segments,
    )?);
    Ok(written)
}

/// Writes the predilection scores, the matched sets, and the fitted model.
pub fn write_intermediate(analysis: &Analysis, dataset: &TrialDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let provenance = |p: &Provenance| match p {
        Provenance::Prevalidated { fold } => format!("prevalidated:{fold}"),
        Provenance::FullControlModel => "full_control_model".to_string(),
        Provenance::External => "external".to_string(),
    };
    written.push(write_rows(
        &dir.join("scores.csv"),
        &["id", "arm", "score", "provenance"],
        analysis
            .control_scores
            .iter()
            .map(|s| (s, "control"))
            .chain(analysis.treated_scores.iter().map(|s| (s, "treated")))
            .map(|(s, arm)| vec![s.id.clone(), arm.to_string(), s.score.to_string(), provenance(&s.provenance)]),
    )?);

    let path = dir.join("matched_sets.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_matched_sets_csv(&analysis.sequence, BufWriter::new(file))?;
    written.push(path);

    let path = dir.join("model.json");
    let json = analysis.model.to_json(dataset.covariate_names())?;
    let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(json.as_bytes()).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
