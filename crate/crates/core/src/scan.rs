//! Interval scan: the statistic `Z(i, j)` and its maximizer.
//!
//! `Z(i, j) = (j - i + 1) * (mean(t[i..=j]) - mean(t))`, with 1-based
//! inclusive indices. The search evaluates every admissible interval from a
//! cumulative sum, one pass per interval length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::EffectSequence;

/// Restrictions on the intervals the scan may return. Lengths count
/// elements, i.e. `j - i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConstraints {
    pub min_len: usize,
    pub max_len: Option<usize>,
    /// Only lengths with `(j - i) % stride == 0` are searched.
    pub stride: usize,
    /// Overrides `min_len` with `ceil(min_fraction * n)` (at least 2).
    pub min_fraction: Option<f64>,
    /// Overrides `max_len` with `floor(max_fraction * n)`.
    pub max_fraction: Option<f64>,
    /// Sequences at least this long use compensated prefix sums.
    pub compensated_threshold: usize,
}

impl Default for ScanConstraints {
    fn default() -> Self {
        Self {
            min_len: 2,
            max_len: None,
            stride: 1,
            min_fraction: None,
            max_fraction: None,
            compensated_threshold: 1_000_000,
        }
    }
}

impl ScanConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 2 {
            return Err(Error::Config(format!("min_len {} must be at least 2", self.min_len)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if let Some(max) = self.max_len {
            if max < self.min_len {
                return Err(Error::Config(format!("max_len {max} below min_len {}", self.min_len)));
            }
        }
        for f in [self.min_fraction, self.max_fraction].into_iter().flatten() {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("length fraction {f} not in (0, 1]")));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_fraction, self.max_fraction) {
            if hi < lo {
                return Err(Error::Config(format!("max_fraction {hi} below min_fraction {lo}")));
            }
        }
        Ok(())
    }

    /// Effective `(min, max)` interval length for a sequence of length `n`.
    pub fn length_bounds(&self, n: usize) -> (usize, usize) {
        let min = match self.min_fraction {
            Some(f) => ((f * n as f64).ceil() as usize).max(2),
            None => self.min_len,
        };
        let max = match self.max_fraction {
            Some(f) => (f * n as f64).floor() as usize,
            None => self.max_len.unwrap_or(n),
        };
        (min, max.min(n))
    }

    /// Interval lengths the scan visits, ascending.
    pub fn lengths(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        let (min, max) = self.length_bounds(n);
        (min..=max).filter(move |len| (len - 1) % self.stride == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotLocation {
    /// 1-based, inclusive.
    pub i_hat: usize,
    pub j_hat: usize,
    pub z_hat: f64,
    pub score_lo: f64,
    pub score_hi: f64,
}

impl SweetSpotLocation {
    pub fn len(&self) -> usize {
        self.j_hat - self.i_hat + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether the 1-based position `k` lies inside the spot.
    pub fn contains(&self, k: usize) -> bool {
        (self.i_hat..=self.j_hat).contains(&k)
    }
}

fn check_interval(n: usize, i: usize, j: usize) -> Result<()> {
    if i < 1 || i >= j || j > n {
        return Err(Error::Contract(format!("interval ({i}, {j}) invalid for length {n}")));
    }
    Ok(())
}

/// `Z(i, j)` for 1-based inclusive `i < j`.
///
/// Evaluated as `(n * S - L * T) / n` with `S` the interval sum, `T` the
/// total and `L` the length, which is exact before the final division
/// whenever the effects are integers, so equal statistics compare equal no
/// matter how the sequence was ordered. Values are taken relative to `t[0]`
/// first (Z is shift invariant), so a constant sequence gives exactly zero.
pub fn z_statistic(t: &[f64], i: usize, j: usize) -> Result<f64> {
    let n = t.len();
    check_interval(n, i, j)?;
    let origin = t[0];
    let inside: f64 = t[i - 1..j].iter().map(|x| x - origin).sum();
    let total: f64 = t.iter().map(|x| x - origin).sum();
    let len = (j - i + 1) as f64;
    Ok((n as f64 * inside - len * total) / n as f64)
}

/// Prefix sums with a leading zero: `prefix[w] = t[0] + ... + t[w - 1]`.
pub fn prefix_sums(t: &[f64], compensated: bool) -> Vec<f64> {
    centred_prefix_sums(t, 0.0, compensated)
}

/// Prefix sums of `t[k] - origin`.
fn centred_prefix_sums(t: &[f64], origin: f64, compensated: bool) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(t.len() + 1);
    prefix.push(0.0);
    if compensated {
        // Neumaier summation
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for x in t.iter().map(|x| x - origin) {
            let next = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - next) + x;
            } else {
                comp += (x - next) + sum;
            }
            sum = next;
            prefix.push(sum + comp);
        }
    } else {
        let mut sum = 0.0;
        for x in t.iter().map(|x| x - origin) {
            sum += x;
            prefix.push(sum);
        }
    }
    prefix
}

/// Best interval of a raw effect vector: `(i, j, z)` with 1-based indices.
///
/// For each admissible length `L` the candidates `Z(i, i + L - 1)` form the
/// vector `prefix[L..=n] - prefix[0..=n-L] - L * total / n`; the pass below
/// evaluates it scaled by `n`, which preserves the ordering. Ties go to the
/// lexicographically smallest `(i, j)`.
pub fn scan_max(t: &[f64], constraints: &ScanConstraints) -> Result<(usize, usize, f64)> {
    let n = t.len();
    constraints.validate()?;
    let (min_len, _) = constraints.length_bounds(n);
    if n < min_len.max(2) {
        return Err(Error::Constraint(format!("sequence of length {n} is shorter than the minimum interval {min_len}")));
    }
    let prefix = centred_prefix_sums(t, t[0], n >= constraints.compensated_threshold);
    let total = prefix[n];
    let nf = n as f64;

    let mut best: Option<(f64, usize, usize)> = None;
    for len in constraints.lengths(n) {
        let offset = len as f64 * total;
        let mut pass_best = f64::NEG_INFINITY;
        let mut pass_start = 0;
        for (start, (hi, lo)) in prefix[len..].iter().zip(&prefix[..=n - len]).enumerate() {
            let v = nf * (hi - lo) - offset;
            if v > pass_best {
                pass_best = v;
                pass_start = start;
            }
        }
        let (i, j) = (pass_start + 1, pass_start + len);
        best = match best {
            None => Some((pass_best, i, j)),
            Some((bv, bi, bj)) if pass_best > bv || (pass_best == bv && (i, j) < (bi, bj)) => {
                Some((pass_best, i, j))
            }
            keep => keep,
        };
    }
    let (v, i, j) = best.ok_or_else(|| {
        let (lo, hi) = constraints.length_bounds(n);
        Error::Constraint(format!(
            "no interval length in [{lo}, {hi}] with stride {} fits a sequence of length {n}",
            constraints.stride
        ))
    })?;
    Ok((i, j, v / nf))
}

/// Locates the sweet spot of an effect sequence.
pub fn find_sweet_spot(seq: &EffectSequence, constraints: &ScanConstraints) -> Result<SweetSpotLocation> {
    locate(seq.effects(), seq.scores(), constraints)
}

/// [`find_sweet_spot`] on raw vectors; `scores` supplies the bounds.
pub fn locate(t: &[f64], scores: &[f64], constraints: &ScanConstraints) -> Result<SweetSpotLocation> {
    if scores.len() != t.len() {
        return Err(Error::Contract("effects and scores differ in length".into()));
    }
    let (i, j, _) = scan_max(t, constraints)?;
    Ok(SweetSpotLocation {
        i_hat: i,
        j_hat: j,
        z_hat: z_statistic(t, i, j)?,
        score_lo: scores[i - 1],
        score_hi: scores[j - 1],
    })
}
