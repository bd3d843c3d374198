//! Baseline-prognosis ("predilection") scores.
//!
//! The score model is fitted on control patients only. Controls are scored
//! out-of-fold (prevalidation), treated patients by a model fitted on all
//! controls. Scores stay on the linear-predictor scale (log-odds for the
//! logistic link).

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::trial_data::{inv_logit, OutcomeKind, PatientRecord, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Logistic,
    Linear,
}

impl Link {
    /// Default link for an outcome type.
    pub fn for_outcome(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Binary => Link::Logistic,
            OutcomeKind::Continuous => Link::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    /// L2 penalty on the coefficients; the intercept is never penalized.
    pub ridge_penalty: f64,
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub tol: f64,
    /// Return an intercept-only model instead of failing on constant outcomes.
    pub allow_intercept_only: bool,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            ridge_penalty: 1e-6,
            max_iter: 100,
            tol: 1e-8,
            allow_intercept_only: false,
        }
    }
}

impl GlmOptions {
    pub fn with_ridge(ridge_penalty: f64) -> Self {
        Self {
            ridge_penalty,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredilectionModel {
    pub link: Link,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub ridge_penalty: f64,
    pub converged: bool,
    pub n_iterations: usize,
}

impl PredilectionModel {
    /// Linear predictor `intercept + coefficients . x`.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Predicted mean outcome (a probability for the logistic link).
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.link {
            Link::Logistic => inv_logit(self.score(x)),
            Link::Linear => self.score(x),
        }
    }

    /// `exp(intercept)` followed by `exp(coefficient)` per covariate.
    pub fn odds_ratios(&self) -> Option<(f64, Vec<f64>)> {
        (self.link == Link::Logistic)
            .then(|| (self.intercept.exp(), self.coefficients.iter().map(|b| b.exp()).collect()))
    }

    pub fn to_file(&self, names: &[String]) -> Result<ModelFile> {
        if names.len() != self.coefficients.len() {
            return Err(Error::Contract(format!(
                "{} names for {} coefficients",
                names.len(),
                self.coefficients.len()
            )));
        }
        Ok(ModelFile {
            link: self.link,
            intercept: self.intercept,
            coefficients: names.iter().cloned().zip(self.coefficients.iter().copied()).collect(),
            ridge_penalty: self.ridge_penalty,
        })
    }

    pub fn to_json(&self, names: &[String]) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file(names)?)?)
    }

    /// Reads an exported model and aligns its coefficients to `names`.
    pub fn from_json(json: &str, names: &[String]) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        file.into_model(names)
    }
}

/// On-disk model representation: coefficients keyed by covariate name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub link: Link,
    pub intercept: f64,
    pub coefficients: IndexMap<String, f64>,
    pub ridge_penalty: f64,
}

impl ModelFile {
    pub fn into_model(self, names: &[String]) -> Result<PredilectionModel> {
        if self.coefficients.len() != names.len() {
            return Err(Error::Validation(format!(
                "model has {} coefficients, dataset has {} covariates",
                self.coefficients.len(),
                names.len()
            )));
        }
        let coefficients = names
            .iter()
            .map(|n| {
                self.coefficients
                    .get(n)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("model has no coefficient for `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if !self.intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("model coefficients must be finite".into()));
        }
        Ok(PredilectionModel {
            link: self.link,
            intercept: self.intercept,
            coefficients,
            ridge_penalty: self.ridge_penalty,
            converged: true,
            n_iterations: 0,
        })
    }
}

// ---------------------------------------------------------------------------
// Fitting

/// Penalized log-likelihood (logistic) or negative half residual sum of
/// squares (linear), minus `ridge/2 * |beta|^2`.
pub fn penalized_objective(x: &[&[f64]], y: &[f64], model: &PredilectionModel) -> f64 {
    let penalty = 0.5 * model.ridge_penalty * model.coefficients.iter().map(|b| b * b).sum::<f64>();
    let fit: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let eta = model.score(row);
            match model.link {
                // y*eta - log(1 + e^eta), written to avoid overflow
                Link::Logistic => yi * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p()),
                Link::Linear => -0.5 * (yi - eta) * (yi - eta),
            }
        })
        .sum();
    fit - penalty
}

pub fn fit_glm(x: &[&[f64]], y: &[f64], link: Link, opts: &GlmOptions) -> Result<PredilectionModel> {
    fit_glm_traced(x, y, link, opts).map(|(m, _)| m)
}

/// Fits the model and also returns the penalized objective after every
/// iteration (starting with the initial value).
pub fn fit_glm_traced(
    x: &[&[f64]],
    y: &[f64],
    link: Link,
    opts: &GlmOptions,
) -> Result<(PredilectionModel, Vec<f64>)> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::Validation(format!("{n} covariate rows for {} outcomes", y.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Validation("covariate rows differ in length".into()));
    }
    if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in fitting data".into()));
    }
    if !(opts.ridge_penalty >= 0.0 && opts.ridge_penalty.is_finite()) {
        return Err(Error::Config(format!("ridge_penalty {} must be finite and >= 0", opts.ridge_penalty)));
    }
    if link == Link::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("logistic link needs 0/1 outcomes".into()));
    }

    let constant = y.iter().all(|&v| v == y[0]);
    // The unpenalized logistic intercept diverges on constant outcomes whatever
    // the ridge; the linear fit is only ill-posed without a ridge.
    if constant && (link == Link::Logistic || opts.ridge_penalty == 0.0) {
        if !opts.allow_intercept_only {
            return Err(Error::DegenerateFit(format!(
                "all {n} outcomes equal {}; pass allow_intercept_only for an intercept-only model",
                y[0]
            )));
        }
        let intercept = match link {
            Link::Logistic => {
                let m = y[0].clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64);
                (m / (1.0 - m)).ln()
            }
            Link::Linear => y[0],
        };
        let model = PredilectionModel {
            link,
            intercept,
            coefficients: vec![0.0; p],
            ridge_penalty: opts.ridge_penalty,
            converged: true,
            n_iterations: 0,
        };
        let obj = penalized_objective(x, y, &model);
        return Ok((model, vec![obj]));
    }

    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let mut penalty = DVector::from_element(p + 1, opts.ridge_penalty);
    penalty[0] = 0.0;

    let to_model = |theta: &DVector<f64>, converged: bool, iters: usize| PredilectionModel {
        link,
        intercept: theta[0],
        coefficients: theta.iter().skip(1).copied().collect(),
        ridge_penalty: opts.ridge_penalty,
        converged,
        n_iterations: iters,
    };

    match link {
        Link::Linear => {
            let mut gram = design.tr_mul(&design);
            for j in 0..=p {
                gram[(j, j)] += penalty[j];
            }
            let rhs = design.tr_mul(&yv);
            let theta = solve_spd(gram, &rhs);
            let model = to_model(&theta, true, 1);
            let start = penalized_objective(x, y, &to_model(&DVector::zeros(p + 1), false, 0));
            let end = penalized_objective(x, y, &model);
            Ok((model, vec![start, end]))
        }
        Link::Logistic => {
            let mean = y.iter().sum::<f64>() / n as f64;
            let mut theta = DVector::zeros(p + 1);
            theta[0] = (mean / (1.0 - mean)).ln();
            let mut objective = penalized_objective(x, y, &to_model(&theta, false, 0));
            let mut trace = vec![objective];
            let mut converged = false;
            let mut iters = 0;
            while iters < opts.max_iter {
                iters += 1;
                let eta = &design * &theta;
                let mu = eta.map(inv_logit);
                let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
                let mut grad = design.tr_mul(&(&yv - &mu));
                grad -= penalty.component_mul(&theta);
                let mut weighted = design.clone();
                for (i, mut row) in weighted.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                let mut hessian = design.tr_mul(&weighted);
                for j in 0..=p {
                    hessian[(j, j)] += penalty[j];
                }
                let step = solve_spd(hessian, &grad);

                // Step halving keeps the objective non-decreasing.
                let mut scale = 1.0;
                let mut accepted = None;
                for _ in 0..30 {
                    let candidate = &theta + &step * scale;
                    let value = penalized_objective(x, y, &to_model(&candidate, false, 0));
                    if value.is_finite() && value >= objective {
                        accepted = Some((candidate, value));
                        break;
                    }
                    scale *= 0.5;
                }
                let Some((candidate, value)) = accepted else {
                    // No ascent direction left at machine precision.
                    converged = true;
                    break;
                };
                let change = (&candidate - &theta).amax();
                theta = candidate;
                objective = value;
                trace.push(objective);
                if change < opts.tol {
                    converged = true;
                    break;
                }
            }
            let model = to_model(&theta, converged, iters);
            if model.coefficients.iter().any(|c| !c.is_finite()) || !model.intercept.is_finite() {
                return Err(Error::DegenerateFit("coefficients diverged".into()));
            }
            Ok((model, trace))
        }
    }
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match matrix.clone().cholesky() {
        Some(chol) => chol.solve(rhs),
        None => {
            // Singular without a ridge (e.g. a constant covariate): minimum-norm step.
            let svd = matrix.svd(true, true);
            svd.solve(rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(rhs.len()))
        }
    }
}

// ---------------------------------------------------------------------------
// Folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    /// Fold index of each control, in control order.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Consecutive blocks: the first `n/k` controls form fold 0, and so on.
    pub fn contiguous(n_controls: usize, n_folds: usize) -> Result<Self> {
        check_fold_args(n_controls, n_folds)?;
        Ok(Self {
            n_folds,
            assignment: (0..n_controls).map(|i| i * n_folds / n_controls).collect(),
            seed: 0,
        })
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }
}

fn check_fold_args(n_controls: usize, n_folds: usize) -> Result<()> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n_folds > n_controls {
        return Err(Error::Config(format!("{n_folds} folds for only {n_controls} controls")));
    }
    Ok(())
}

/// Uniformly random balanced partition of `n_controls` controls.
pub fn make_fold_plan(n_controls: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    check_fold_args(n_controls, n_folds)?;
    let mut order: Vec<usize> = (0..n_controls).collect();
    order.shuffle(&mut substream(seed, Domain::Folds, 0));
    let mut assignment = vec![0; n_controls];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        assignment,
        seed,
    })
}

/// Balanced partition that also spreads each outcome value evenly across folds.
pub fn make_stratified_fold_plan(outcomes: &[f64], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    check_fold_args(outcomes.len(), n_folds)?;
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.shuffle(&mut substream(seed, Domain::Folds, 0));
    // stable sort keeps the shuffled order within each stratum
    order.sort_by(|&a, &b| outcomes[a].total_cmp(&outcomes[b]));
    let mut assignment = vec![0; outcomes.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        assignment,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Scoring

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    /// Scored by the model fitted without this control's fold.
    Prevalidated { fold: usize },
    /// Scored by the model fitted on all controls.
    FullControlModel,
    /// Scored by a model supplied from outside the trial.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatient {
    /// Position of the patient in the dataset.
    pub index: usize,
    pub id: String,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub fold: usize,
    /// Dataset indices of the controls the model was trained on.
    pub training: Vec<usize>,
    pub model: PredilectionModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prevalidation {
    pub scores: Vec<ScoredPatient>,
    pub folds: Vec<FoldFit>,
}

fn fit_on(dataset: &TrialDataset, indices: &[usize], link: Link, opts: &GlmOptions) -> Result<PredilectionModel> {
    let patients = dataset.patients();
    let rows: Vec<&[f64]> = indices.iter().map(|&i| patients[i].covariates.as_slice()).collect();
    let y: Vec<f64> = indices.iter().map(|&i| patients[i].outcome).collect();
    fit_glm(&rows, &y, link, opts)
}

fn control_indices(dataset: &TrialDataset) -> Vec<usize> {
    dataset.controls().map(|(i, _)| i).collect()
}

/// Scores each control with the model trained on the other folds. `plan`
/// indexes the dataset's controls in file order.
pub fn prevalidated_control_scores(
    dataset: &TrialDataset,
    plan: &FoldPlan,
    link: Link,
    opts: &GlmOptions,
) -> Result<Prevalidation> {
    let controls = control_indices(dataset);
    if plan.assignment.len() != controls.len() {
        return Err(Error::Contract(format!(
            "fold plan covers {} controls, dataset has {}",
            plan.assignment.len(),
            controls.len()
        )));
    }
    if plan.assignment.iter().any(|&f| f >= plan.n_folds) {
        return Err(Error::Contract("fold plan assigns an out-of-range fold".into()));
    }
    let folds: Vec<FoldFit> = (0..plan.n_folds)
        .into_par_iter()
        .map(|fold| {
            let training: Vec<usize> = controls
                .iter()
                .zip(&plan.assignment)
                .filter(|(_, &f)| f != fold)
                .map(|(&i, _)| i)
                .collect();
            let model = fit_on(dataset, &training, link, opts).map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })?;
            Ok(FoldFit { fold, training, model })
        })
        .collect::<Result<_>>()?;

    let patients = dataset.patients();
    let scores = controls
        .iter()
        .zip(&plan.assignment)
        .map(|(&i, &fold)| ScoredPatient {
            index: i,
            id: patients[i].id.clone(),
            score: folds[fold].model.score(&patients[i].covariates),
            provenance: Provenance::Prevalidated { fold },
        })
        .collect();
    Ok(Prevalidation { scores, folds })
}

/// Fits one model on every control and scores the treated patients with it.
pub fn score_treated(
    dataset: &TrialDataset,
    link: Link,
    opts: &GlmOptions,
) -> Result<(PredilectionModel, Vec<ScoredPatient>)> {
    let model = fit_on(dataset, &control_indices(dataset), link, opts)?;
    let scored = score_arm(dataset, &model, true, Provenance::FullControlModel);
    Ok((model, scored))
}

/// Scores one arm with `model`.
pub fn score_arm(dataset: &TrialDataset, model: &PredilectionModel, treated: bool, provenance: Provenance) -> Vec<ScoredPatient> {
    dataset
        .patients()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.treated == treated)
        .map(|(i, p): (usize, &PatientRecord)| ScoredPatient {
            index: i,
            id: p.id.clone(),
            score: model.score(&p.covariates),
            provenance,
        })
        .collect()
}

/// External-model path: both arms scored by a pre-trained model.
pub fn score_with_external(dataset: &TrialDataset, model: &PredilectionModel) -> Result<(Vec<ScoredPatient>, Vec<ScoredPatient>)> {
    if model.coefficients.len() != dataset.n_covariates() {
        return Err(Error::Validation(format!(
            "external model has {} coefficients, dataset has {} covariates",
            model.coefficients.len(),
            dataset.n_covariates()
        )));
    }
    Ok((
        score_arm(dataset, model, false, Provenance::External),
        score_arm(dataset, model, true, Provenance::External),
    ))
}

/// Area under the ROC curve of `scores` for 0/1 `labels` (ties count half).
pub fn auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().map(|&l| l == 1.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = pairs.iter().filter(|p| p.1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid_rank * pairs[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Average precision (area under the precision-recall curve, step form).
pub fn auprc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().map(|&l| l == 1.0)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = pairs.iter().filter(|p| p.1).count();
    if n_pos == 0 {
        return None;
    }
    let (mut tp, mut ap) = (0usize, 0.0);
    for (rank, &(_, pos)) in pairs.iter().enumerate() {
        if pos {
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    Some(ap / n_pos as f64)
}
