//! Calibration and debiasing of a located sweet spot.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::scan::{scan_max, ScanConstraints, SweetSpotLocation};

/// Relative slack under which a permuted maximum counts as equal to the
/// observed one. Integer-valued effects are compared exactly anyway (see
/// [`crate::scan::z_statistic`]); this absorbs summation-order rounding for
/// real-valued effects.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueEstimator {
    /// `k / B`
    #[default]
    Plugin,
    /// `(k + 1) / (B + 1)`, valid at every sample size.
    AddOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub n_permutations: usize,
    pub exceedances: usize,
    pub null_max_z: Vec<f64>,
    pub z_hat: f64,
    pub estimator: PValueEstimator,
}

impl PermutationResult {
    pub fn from_null(z_hat: f64, null_max_z: Vec<f64>, estimator: PValueEstimator) -> Result<Self> {
        if null_max_z.is_empty() {
            return Err(Error::Contract("null distribution is empty".into()));
        }
        let exceedances = count_exceedances(&null_max_z, z_hat);
        Ok(Self {
            p_value: p_value(exceedances, null_max_z.len(), estimator),
            n_permutations: null_max_z.len(),
            exceedances,
            null_max_z,
            z_hat,
            estimator,
        })
    }

    /// p-value the stored null distribution assigns to an arbitrary statistic.
    pub fn p_value_for(&self, z: f64, estimator: PValueEstimator) -> f64 {
        p_value(count_exceedances(&self.null_max_z, z), self.null_max_z.len(), estimator)
    }
}

fn count_exceedances(null: &[f64], z_hat: f64) -> usize {
    let threshold = z_hat - TIE_TOLERANCE * (1.0 + z_hat.abs());
    null.iter().filter(|&&z| z >= threshold).count()
}

pub fn p_value(exceedances: usize, n_permutations: usize, estimator: PValueEstimator) -> f64 {
    match estimator {
        PValueEstimator::Plugin => exceedances as f64 / n_permutations as f64,
        PValueEstimator::AddOne => (exceedances + 1) as f64 / (n_permutations + 1) as f64,
    }
}

/// Maximum of `Z` over one uniformly shuffled copy of `t`.
pub fn permuted_max_z(t: &[f64], constraints: &ScanConstraints, seed: u64, b: usize) -> Result<f64> {
    let mut shuffled = t.to_vec();
    shuffled.shuffle(&mut substream(seed, Domain::Permutation, b as u64));
    scan_max(&shuffled, constraints).map(|(_, _, z)| z)
}

/// Permutation test of "no sweet spot": permutation `b` is drawn from
/// substream `b` of `seed`, so the result does not depend on scheduling.
pub fn permutation_test(
    t: &[f64],
    z_hat: f64,
    constraints: &ScanConstraints,
    n_permutations: usize,
    seed: u64,
    estimator: PValueEstimator,
) -> Result<PermutationResult> {
    if n_permutations == 0 {
        return Err(Error::Contract("need at least one permutation".into()));
    }
    let null = (0..n_permutations)
        .into_par_iter()
        .map(|b| permuted_max_z(t, constraints, seed, b))
        .collect::<Result<Vec<_>>>()?;
    PermutationResult::from_null(z_hat, null, estimator)
}

/// Mean effect inside `[i, j]` (1-based, inclusive) and outside it. The
/// outside mean is `None` when the interval covers everything.
pub fn naive_cate(t: &[f64], i: usize, j: usize) -> Result<(f64, Option<f64>)> {
    let n = t.len();
    if i < 1 || i >= j || j > n {
        return Err(Error::Contract(format!("interval ({i}, {j}) invalid for length {n}")));
    }
    let inside = mean(&t[i - 1..j]);
    let outside_len = n - (j - i + 1);
    let outside = (outside_len > 0).then(|| {
        let s: f64 = t[..i - 1].iter().chain(&t[j..]).sum();
        s / outside_len as f64
    });
    Ok((inside, outside))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Indices into the inside and outside pools, one per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResampleDraw {
    pub inside: Vec<usize>,
    pub outside: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub i: usize,
    pub j: usize,
    /// Mean effect inside the replicate's own spot.
    pub tau: f64,
    pub tau_outside: Option<f64>,
}

fn pools(t: &[f64], loc: &SweetSpotLocation) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.len();
    if loc.i_hat < 1 || loc.i_hat >= loc.j_hat || loc.j_hat > n {
        return Err(Error::Contract(format!("spot ({}, {}) invalid for length {n}", loc.i_hat, loc.j_hat)));
    }
    let inside = t[loc.i_hat - 1..loc.j_hat].to_vec();
    let outside: Vec<f64> = t[..loc.i_hat - 1].iter().chain(&t[loc.j_hat..]).copied().collect();
    if outside.is_empty() {
        return Err(Error::Contract("sweet spot covers the whole sequence; nothing outside to resample".into()));
    }
    Ok((inside, outside))
}

/// Runs one bootstrap replicate from explicit pool indices: positions inside
/// the spot take `inside_pool[draw.inside[..]]`, the rest take
/// `outside_pool[draw.outside[..]]` in sequence order.
pub fn replicate_from_draw(
    t: &[f64],
    loc: &SweetSpotLocation,
    constraints: &ScanConstraints,
    draw: &ResampleDraw,
) -> Result<Replicate> {
    let (inside, outside) = pools(t, loc)?;
    if draw.inside.len() != inside.len() || draw.outside.len() != outside.len() {
        return Err(Error::Contract("resample draw does not match the pool sizes".into()));
    }
    let mut resampled = Vec::with_capacity(t.len());
    let mut out_iter = draw.outside.iter();
    for k in 1..=t.len() {
        if loc.contains(k) {
            resampled.push(inside[draw.inside[k - loc.i_hat]]);
        } else {
            resampled.push(outside[*out_iter.next().expect("outside draw length checked")]);
        }
    }
    let (i, j, _) = scan_max(&resampled, constraints)?;
    let (tau, tau_outside) = naive_cate(&resampled, i, j)?;
    Ok(Replicate { i, j, tau, tau_outside })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub tau_hat: f64,
    pub tau_boot_mean: f64,
    pub bias_hat: f64,
    pub tau_corrected: f64,
    pub tau_outside: f64,
    /// Same correction applied to the outside mean, over replicates whose
    /// spot leaves something outside.
    pub tau_outside_corrected: Option<f64>,
    pub boot_i: Vec<usize>,
    pub boot_j: Vec<usize>,
    pub boot_tau: Vec<f64>,
}

impl DebiasResult {
    /// Aggregates replicates in the given order.
    pub fn from_replicates(tau_hat: f64, tau_outside: f64, replicates: &[Replicate]) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::Contract("no bootstrap replicates".into()));
        }
        let boot_tau: Vec<f64> = replicates.iter().map(|r| r.tau).collect();
        let tau_boot_mean = mean(&boot_tau);
        let outside: Vec<f64> = replicates.iter().filter_map(|r| r.tau_outside).collect();
        let tau_outside_corrected = (!outside.is_empty()).then(|| 2.0 * tau_outside - mean(&outside));
        Ok(Self {
            tau_hat,
            tau_boot_mean,
            bias_hat: tau_boot_mean - tau_hat,
            tau_corrected: 2.0 * tau_hat - tau_boot_mean,
            tau_outside,
            tau_outside_corrected,
            boot_i: replicates.iter().map(|r| r.i).collect(),
            boot_j: replicates.iter().map(|r| r.j).collect(),
            boot_tau,
        })
    }

    pub fn n_replicates(&self) -> usize {
        self.boot_tau.len()
    }
}

/// Parametric bootstrap around a located spot: each replicate resamples the
/// inside and outside values with replacement within their own pools,
/// re-runs the scan, and records the effect inside its own spot. Replicate
/// `b` uses substream `b` of `seed`.
pub fn bootstrap_debias(
    t: &[f64],
    loc: &SweetSpotLocation,
    constraints: &ScanConstraints,
    n_replicates: usize,
    seed: u64,
) -> Result<DebiasResult> {
    if n_replicates == 0 {
        return Err(Error::Contract("need at least one bootstrap replicate".into()));
    }
    let (inside, outside) = pools(t, loc)?;
    let (tau_hat, tau_outside) = naive_cate(t, loc.i_hat, loc.j_hat)?;
    let replicates = (0..n_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, Domain::Bootstrap, b as u64);
            let draw = ResampleDraw {
                inside: (0..inside.len()).map(|_| rng.random_range(0..inside.len())).collect(),
                outside: (0..outside.len()).map(|_| rng.random_range(0..outside.len())).collect(),
            };
            replicate_from_draw(t, loc, constraints, &draw)
        })
        .collect::<Result<Vec<_>>>()?;
    DebiasResult::from_replicates(tau_hat, tau_outside.expect("outside pool is nonempty"), &replicates)
}

/// Linear-interpolation quantile (type 7) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}
