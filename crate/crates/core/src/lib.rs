//! Sweet-spot detection for randomized trials.
//!
//! Controls are scored by a predilection model (risk of the outcome absent
//! treatment), treated patients are matched to controls on that score, and
//! the resulting sequence of matched-set treatment effects is scanned for
//! the score interval where the benefit is concentrated. A permutation test
//! calibrates the scan and a parametric bootstrap corrects the selection
//! bias of the in-spot effect.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod matching;
pub mod predilection;
pub mod rng;
pub mod scan;
pub mod trial_data;

pub use analysis::{analyze, Analysis, AnalysisConfig, SweetSpotReport, REPORT_SCHEMA_VERSION};
pub use error::{Error, Result};
pub use inference::{bootstrap_debias, permutation_test, DebiasResult, PValueEstimator, PermutationResult};
pub use matching::{compute_effects, optimal_match, optimal_match_dropping_treated, EffectSequence, MatchGroup, MatchedSet};
pub use predilection::{fit_glm, GlmOptions, Link, PredilectionModel, Provenance, ScoredPatient};
pub use scan::{find_sweet_spot, scan_max, z_statistic, ScanConstraints, SweetSpotLocation};
pub use trial_data::{
    load_trial_csv, simulate_null_trial, simulate_sweetspot_trial, CsvSchema, NullSimConfig, OutcomeDirection, OutcomeKind,
    PatientRecord, SimulatedTrial, SpotDefinition, SweetSpotSimConfig, TrialDataset,
};
