//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweetspot::predilection::{Provenance, ScoredPatient};
use sweetspot::ScanConstraints;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn admissible(c: &ScanConstraints, n: usize, len: usize) -> bool {
    let (lo, hi) = c.length_bounds(n);
    len >= lo && len <= hi && (len - 1) % c.stride == 0
}

/// Double loop over every admissible interval, straight from the definition
/// `Z = len * (mean inside - mean overall)`. Strict `>` keeps the first
/// maximizer in (i, j) order.
pub fn naive_scan(t: &[f64], c: &ScanConstraints) -> Option<(usize, usize, f64)> {
    let n = t.len();
    let overall = t.iter().sum::<f64>() / n as f64;
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 1..n {
        for j in i + 1..=n {
            if !admissible(c, n, j - i + 1) {
                continue;
            }
            let len = (j - i + 1) as f64;
            let inside = t[i - 1..j].iter().sum::<f64>() / len;
            let z = len * (inside - overall);
            if best.is_none_or(|(_, _, b)| z > b) {
                best = Some((i, j, z));
            }
        }
    }
    best
}

/// Exact scan for integer effects: compares `n * S - len * T` in integers.
/// Returns the maximizer and `Z` as the exact rational `num / n`.
pub fn exact_integer_scan(t: &[i64], c: &ScanConstraints) -> Option<(usize, usize, i64)> {
    let n = t.len();
    let total: i64 = t.iter().sum();
    let mut best: Option<(usize, usize, i64)> = None;
    for i in 1..n {
        for j in i + 1..=n {
            let len = j - i + 1;
            if !admissible(c, n, len) {
                continue;
            }
            let s: i64 = t[i - 1..j].iter().sum();
            let num = n as i64 * s - len as i64 * total;
            if best.is_none_or(|(_, _, b)| num > b) {
                best = Some((i, j, num));
            }
        }
    }
    best
}

/// Effects in {-1, 0, 1} or uniform on (-1, 1), chosen per sequence.
pub fn mixed_effects(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, bool) {
    let discrete = rng.random_bool(0.5);
    let t = (0..n)
        .map(|_| {
            if discrete {
                rng.random_range(-1i64..=1) as f64
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    (t, discrete)
}

pub fn scored(prefix: &str, offset: usize, scores: &[f64]) -> Vec<ScoredPatient> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &score)| ScoredPatient {
            index: offset + i,
            id: format!("{prefix}{i:02}"),
            score,
            provenance: Provenance::External,
        })
        .collect()
}

/// Minimum total |control - treated| over every way of giving each treated
/// patient `k` distinct controls.
pub fn brute_force_match_cost(controls: &[f64], treated: &[f64], k: usize) -> f64 {
    fn go(controls: &[f64], treated: &[f64], k: usize, used: &mut Vec<bool>, ti: usize, start: usize, filled: usize) -> f64 {
        if ti == treated.len() {
            return 0.0;
        }
        if filled == k {
            return go(controls, treated, k, used, ti + 1, 0, 0);
        }
        let mut best = f64::INFINITY;
        // controls within one set are chosen in increasing index order
        for c in start..controls.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            let rest = go(controls, treated, k, used, ti, c + 1, filled + 1);
            used[c] = false;
            best = best.min((controls[c] - treated[ti]).abs() + rest);
        }
        best
    }
    go(controls, treated, k, &mut vec![false; controls.len()], 0, 0, 0)
}

/// Kolmogorov-Smirnov distance to Uniform(0, 1), computed independently of
/// the library.
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / m - x).max(x - i as f64 / m);
    }
    d
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashSet;
    let a: HashSet<_> = a.iter().collect();
    let b: HashSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}
