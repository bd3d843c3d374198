//! Trial data model, CSV ingestion, and synthetic trial generators.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeDirection {
    #[default]
    HigherIsWorse,
    HigherIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
}

/// A validated randomized-trial dataset. Construction goes through
/// [`TrialDataset::new`], which enforces the invariants below, and the value is
/// immutable afterwards:
///
/// * every patient has the same covariate dimension `p >= 1`, matching
///   `covariate_names`;
/// * covariates and outcomes are finite, binary outcomes are exactly 0 or 1;
/// * both arms are nonempty; patient ids are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    patients: Vec<PatientRecord>,
    outcome_kind: OutcomeKind,
    outcome_direction: OutcomeDirection,
    covariate_names: Vec<String>,
}

impl TrialDataset {
    pub fn new(
        patients: Vec<PatientRecord>,
        outcome_kind: OutcomeKind,
        outcome_direction: OutcomeDirection,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        if p == 0 {
            return Err(Error::Validation("at least one covariate is required".into()));
        }
        let mut ids = HashSet::with_capacity(patients.len());
        for (row, patient) in patients.iter().enumerate() {
            if patient.covariates.len() != p {
                return Err(Error::Validation(format!(
                    "patient `{}` (row {}) has {} covariates, expected {p}",
                    patient.id,
                    row + 1,
                    patient.covariates.len()
                )));
            }
            if let Some(k) = patient.covariates.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "patient `{}` (row {}) has non-finite covariate `{}`",
                    patient.id,
                    row + 1,
                    covariate_names[k]
                )));
            }
            if !patient.outcome.is_finite() {
                return Err(Error::Validation(format!(
                    "patient `{}` (row {}) has non-finite outcome",
                    patient.id,
                    row + 1
                )));
            }
            if outcome_kind == OutcomeKind::Binary && patient.outcome != 0.0 && patient.outcome != 1.0 {
                return Err(Error::Validation(format!(
                    "patient `{}` (row {}) has binary outcome {}",
                    patient.id,
                    row + 1,
                    patient.outcome
                )));
            }
            if !ids.insert(patient.id.as_str()) {
                return Err(Error::Validation(format!("duplicate patient id `{}`", patient.id)));
            }
        }
        let n_treated = patients.iter().filter(|p| p.treated).count();
        if n_treated == 0 || n_treated == patients.len() {
            return Err(Error::Validation(
                "dataset needs at least one treated and one control patient".into(),
            ));
        }
        Ok(Self {
            patients,
            outcome_kind,
            outcome_direction,
            covariate_names,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn outcome_direction(&self) -> OutcomeDirection {
        self.outcome_direction
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn controls(&self) -> impl Iterator<Item = (usize, &PatientRecord)> {
        self.patients.iter().enumerate().filter(|(_, p)| !p.treated)
    }

    pub fn treated(&self) -> impl Iterator<Item = (usize, &PatientRecord)> {
        self.patients.iter().enumerate().filter(|(_, p)| p.treated)
    }

    pub fn n_treated(&self) -> usize {
        self.patients.iter().filter(|p| p.treated).count()
    }

    pub fn n_controls(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// Same patients, different outcome orientation.
    pub fn with_direction(mut self, direction: OutcomeDirection) -> Self {
        self.outcome_direction = direction;
        self
    }
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateColumns {
    Named(Vec<String>),
    /// Every column not claimed by the id, treatment, or outcome column.
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IdColumn {
    /// Use a column called `id` when the header has one, else 1-based row numbers.
    #[default]
    Auto,
    Named(String),
    RowNumber,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub treat_col: String,
    pub outcome_col: String,
    pub covariates: CovariateColumns,
    pub id_col: IdColumn,
    /// `None` infers binary when every outcome is 0 or 1.
    pub outcome_kind: Option<OutcomeKind>,
    pub outcome_direction: OutcomeDirection,
}

impl CsvSchema {
    pub fn new(treat_col: impl Into<String>, outcome_col: impl Into<String>, covariates: CovariateColumns) -> Self {
        Self {
            treat_col: treat_col.into(),
            outcome_col: outcome_col.into(),
            covariates,
            id_col: IdColumn::Auto,
            outcome_kind: None,
            outcome_direction: OutcomeDirection::HigherIsWorse,
        }
    }

    /// Schema matching the files written by [`write_trial_csv`].
    pub fn synthetic() -> Self {
        Self::new("treat", "outcome", CovariateColumns::Rest)
    }
}

pub fn load_trial_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trial_csv(file, schema).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

/// Parses a comma-separated, header-first, UTF-8 table.
pub fn read_trial_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv("<input>", e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let treat_idx = find(&schema.treat_col)?;
    let outcome_idx = find(&schema.outcome_col)?;
    let id_idx = match &schema.id_col {
        IdColumn::Auto => header.iter().position(|h| h == "id"),
        IdColumn::Named(name) => Some(find(name)?),
        IdColumn::RowNumber => None,
    };
    let cov_idx: Vec<usize> = match &schema.covariates {
        CovariateColumns::Named(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        CovariateColumns::Rest => (0..header.len())
            .filter(|&i| i != treat_idx && i != outcome_idx && Some(i) != id_idx)
            .collect(),
    };
    if cov_idx.is_empty() {
        return Err(Error::Validation("schema names no covariate columns".into()));
    }
    if cov_idx.iter().any(|&i| i == treat_idx || i == outcome_idx) {
        return Err(Error::Validation(
            "treatment and outcome columns cannot also be covariates".into(),
        ));
    }

    let parse = |row: usize, col: usize, raw: &str| -> Result<f64> {
        let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
            row,
            column: header[col].clone(),
            value: raw.to_string(),
        })?;
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "row {row}, column `{}`: non-finite value `{raw}`",
                header[col]
            )));
        }
        Ok(value)
    };

    let mut patients = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv("<input>", e))?;
        if record.len() != header.len() {
            return Err(Error::Validation(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let treat_raw = record[treat_idx].trim();
        let treated = match treat_raw.parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => {
                return Err(Error::Validation(format!(
                    "row {row}, column `{}`: treatment must be 0 or 1, got `{treat_raw}`",
                    header[treat_idx]
                )))
            }
        };
        let outcome = parse(row, outcome_idx, &record[outcome_idx])?;
        let covariates = cov_idx
            .iter()
            .map(|&c| parse(row, c, &record[c]))
            .collect::<Result<Vec<_>>>()?;
        let id = match id_idx {
            Some(c) => record[c].trim().to_string(),
            None => row.to_string(),
        };
        patients.push(PatientRecord {
            id,
            covariates,
            treated,
            outcome,
        });
    }

    let kind = schema.outcome_kind.unwrap_or_else(|| {
        if patients.iter().all(|p| p.outcome == 0.0 || p.outcome == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    });
    let names = cov_idx.iter().map(|&c| header[c].clone()).collect();
    TrialDataset::new(patients, kind, schema.outcome_direction, names)
}

/// Writes `id,treat,outcome,<covariates...>`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_trial_csv<W: Write>(dataset: &TrialDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::csv("<output>", e);
    let mut header = vec!["id".to_string(), "treat".to_string(), "outcome".to_string()];
    header.extend(dataset.covariate_names.iter().cloned());
    wtr.write_record(&header).map_err(to_err)?;
    for p in &dataset.patients {
        let mut row = Vec::with_capacity(header.len());
        row.push(p.id.clone());
        row.push(if p.treated { "1" } else { "0" }.to_string());
        row.push(format!("{}", p.outcome));
        row.extend(p.covariates.iter().map(|x| format!("{x}")));
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn save_trial_csv(dataset: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trial_csv(dataset, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSimConfig {
    pub n_patients: usize,
    pub n_covariates: usize,
    pub treat_prob: f64,
    pub base_treatment_effect: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Replaces the drawn coefficient vector. Test hook.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient_override: Option<Vec<f64>>,
}

impl Default for NullSimConfig {
    fn default() -> Self {
        Self {
            n_patients: 400,
            n_covariates: 10,
            treat_prob: 0.5,
            base_treatment_effect: 0.05,
            noise_sd: 1.0,
            seed: 0,
            coefficient_override: None,
        }
    }
}

impl NullSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 2 {
            return Err(Error::Config("n_patients must be at least 2".into()));
        }
        if self.n_covariates == 0 {
            return Err(Error::Config("n_covariates must be at least 1".into()));
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::Config(format!("treat_prob {} not in (0, 1)", self.treat_prob)));
        }
        if !(0.0..1.0).contains(&self.base_treatment_effect) {
            return Err(Error::Config(format!(
                "base_treatment_effect {} not in [0, 1)",
                self.base_treatment_effect
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd {} must be finite and >= 0", self.noise_sd)));
        }
        if let Some(beta) = &self.coefficient_override {
            if beta.len() != self.n_covariates || beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Config(
                    "coefficient_override must hold n_covariates finite values".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotDefinition {
    #[default]
    SeverityQuantileBand,
    CovariateRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotSimConfig {
    pub base: NullSimConfig,
    pub extra_effect: f64,
    pub spot_fraction: f64,
    pub spot_definition: SpotDefinition,
    pub region_covariates: Vec<usize>,
}

impl Default for SweetSpotSimConfig {
    fn default() -> Self {
        Self {
            base: NullSimConfig::default(),
            extra_effect: 0.3,
            spot_fraction: 0.3,
            spot_definition: SpotDefinition::SeverityQuantileBand,
            region_covariates: vec![0, 1, 2],
        }
    }
}

impl SweetSpotSimConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(0.0..1.0).contains(&self.extra_effect) {
            return Err(Error::Config(format!("extra_effect {} not in [0, 1)", self.extra_effect)));
        }
        if !(self.spot_fraction > 0.0 && self.spot_fraction < 1.0) {
            return Err(Error::Config(format!("spot_fraction {} not in (0, 1)", self.spot_fraction)));
        }
        if self.spot_definition == SpotDefinition::CovariateRegion {
            if self.region_covariates.is_empty() {
                return Err(Error::Config("region_covariates is empty".into()));
            }
            let mut seen = HashSet::new();
            for &c in &self.region_covariates {
                if c >= self.base.n_covariates || !seen.insert(c) {
                    return Err(Error::Config(format!(
                        "region covariate {c} is out of range or repeated"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One side of the rectangular covariate region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBound {
    pub covariate: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub coefficients: Vec<f64>,
    /// Outcome probability without treatment, per patient.
    pub control_prob: Vec<f64>,
    /// Probability the patient's outcome was actually drawn from.
    pub outcome_prob: Vec<f64>,
    pub in_spot: Vec<bool>,
    /// Treated patients whose lowered probability was clamped at 0.
    pub clamp_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<RegionBound>>,
}

impl GroundTruth {
    pub fn clamp_fraction(&self) -> f64 {
        self.clamp_count as f64 / self.control_prob.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTrial {
    pub dataset: TrialDataset,
    pub truth: GroundTruth,
}

impl SimulatedTrial {
    /// Writes the JSON sidecar holding the ground truth.
    pub fn save_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.truth)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Draws {
    covariates: Vec<Vec<f64>>,
    treated: Vec<bool>,
    control_prob: Vec<f64>,
    uniforms: Vec<f64>,
    coefficients: Vec<f64>,
}

fn draw_patients(cfg: &NullSimConfig) -> Draws {
    let p = cfg.n_covariates;
    let coefficients = match &cfg.coefficient_override {
        Some(beta) => beta.clone(),
        None => {
            let mut rng = substream(cfg.seed, Domain::Coefficients, 0);
            (0..p).map(|_| rng.sample(StandardNormal)).collect()
        }
    };
    let n = cfg.n_patients;
    let mut covariates = Vec::with_capacity(n);
    let mut treated = Vec::with_capacity(n);
    let mut control_prob = Vec::with_capacity(n);
    let mut uniforms = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = substream(cfg.seed, Domain::Patient, i as u64);
        let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let is_treated = rng.random::<f64>() < cfg.treat_prob;
        let eps: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let eta: f64 = x.iter().zip(&coefficients).map(|(a, b)| a * b).sum::<f64>() + cfg.noise_sd * eps;
        covariates.push(x);
        treated.push(is_treated);
        control_prob.push(inv_logit(eta));
        uniforms.push(u);
    }
    Draws {
        covariates,
        treated,
        control_prob,
        uniforms,
        coefficients,
    }
}

fn assemble(cfg: &NullSimConfig, draws: Draws, in_spot: Vec<bool>, extra: f64, region: Option<Vec<RegionBound>>) -> Result<SimulatedTrial> {
    let n = cfg.n_patients;
    let mut clamp_count = 0;
    let mut outcome_prob = Vec::with_capacity(n);
    let mut patients = Vec::with_capacity(n);
    for (i, x) in draws.covariates.into_iter().enumerate() {
        let pc = draws.control_prob[i];
        let prob = if draws.treated[i] {
            let lowered = pc - cfg.base_treatment_effect - if in_spot[i] { extra } else { 0.0 };
            if lowered < 0.0 {
                clamp_count += 1;
            }
            lowered.clamp(0.0, 1.0)
        } else {
            pc
        };
        outcome_prob.push(prob);
        patients.push(PatientRecord {
            id: format!("p{:05}", i + 1),
            covariates: x,
            treated: draws.treated[i],
            outcome: if draws.uniforms[i] < prob { 1.0 } else { 0.0 },
        });
    }
    let names = (1..=cfg.n_covariates).map(|k| format!("x{k}")).collect();
    let dataset = TrialDataset::new(patients, OutcomeKind::Binary, OutcomeDirection::HigherIsWorse, names)
        .map_err(|e| match e {
            Error::Validation(msg) => Error::Config(format!("seed {} produced an invalid trial: {msg}", cfg.seed)),
            other => other,
        })?;
    Ok(SimulatedTrial {
        dataset,
        truth: GroundTruth {
            coefficients: draws.coefficients,
            control_prob: draws.control_prob,
            outcome_prob,
            in_spot,
            clamp_count,
            region,
        },
    })
}

/// Simulates a trial with a homogeneous treatment effect.
///
/// Patient `i` draws, in order, its covariates, a treatment uniform, a
/// logit-scale noise term, and an outcome uniform from its own substream, so
/// the draws of one patient never depend on another's.
pub fn simulate_null_trial(cfg: &NullSimConfig) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let draws = draw_patients(cfg);
    let in_spot = vec![false; cfg.n_patients];
    assemble(cfg, draws, in_spot, 0.0, None)
}

/// Simulates a trial where members of a sweet spot receive `extra_effect` on
/// top of the base effect when treated.
pub fn simulate_sweetspot_trial(cfg: &SweetSpotSimConfig) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let base = &cfg.base;
    let draws = draw_patients(base);
    let n = base.n_patients;
    let (in_spot, region) = match cfg.spot_definition {
        SpotDefinition::SeverityQuantileBand => (severity_band(&draws.control_prob, cfg.spot_fraction), None),
        SpotDefinition::CovariateRegion => {
            let bounds = covariate_region(base.seed, &cfg.region_covariates, cfg.spot_fraction);
            let members = (0..n)
                .map(|i| {
                    bounds
                        .iter()
                        .all(|b| (b.lo..b.hi).contains(&draws.covariates[i][b.covariate]))
                })
                .collect();
            (members, Some(bounds))
        }
    };
    assemble(base, draws, in_spot, cfg.extra_effect, region)
}

/// Central band of the control-probability ranks, centred at the median.
fn severity_band(control_prob: &[f64], fraction: f64) -> Vec<bool> {
    let n = control_prob.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| control_prob[a].total_cmp(&control_prob[b]).then(a.cmp(&b)));
    let lo = ((0.5 - fraction / 2.0) * n as f64).round() as usize;
    let hi = (((0.5 + fraction / 2.0) * n as f64).round() as usize).min(n);
    let mut members = vec![false; n];
    for &i in &order[lo..hi] {
        members[i] = true;
    }
    members
}

/// Axis-aligned box on standard-normal covariates with marginal coverage
/// `fraction^(1/d)` per side, so the expected joint coverage is `fraction`.
/// Each side's position is drawn from the region substream of `seed`.
fn covariate_region(seed: u64, covariates: &[usize], fraction: f64) -> Vec<RegionBound> {
    let normal = Normal::standard();
    let q = fraction.powf(1.0 / covariates.len() as f64);
    let mut rng = substream(seed, Domain::Region, 0);
    covariates
        .iter()
        .map(|&c| {
            let start = rng.random::<f64>() * (1.0 - q);
            let lo = if start <= 0.0 { f64::NEG_INFINITY } else { normal.inverse_cdf(start) };
            let end = start + q;
            let hi = if end >= 1.0 { f64::INFINITY } else { normal.inverse_cdf(end) };
            RegionBound { covariate: c, lo, hi }
        })
        .collect()
}
