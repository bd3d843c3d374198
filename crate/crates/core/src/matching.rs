//! Optimal k:1 matching on scalar scores and per-set treatment effects.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predilection::ScoredPatient;
use crate::trial_data::{OutcomeDirection, TrialDataset};

/// One treated patient and the `k` controls matched to it, before outcomes
/// are looked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGroup {
    pub treated: ScoredPatient,
    pub controls: Vec<ScoredPatient>,
}

impl MatchGroup {
    /// Mean score over all `k + 1` members.
    pub fn mean_score(&self) -> f64 {
        let sum = self.treated.score + self.controls.iter().map(|c| c.score).sum::<f64>();
        sum / (self.controls.len() + 1) as f64
    }

    /// Sum of absolute control-to-treated score distances.
    pub fn cost(&self) -> f64 {
        self.controls.iter().map(|c| (c.score - self.treated.score).abs()).sum()
    }
}

/// Total distance of a matching, summed in set order.
pub fn total_cost(groups: &[MatchGroup]) -> f64 {
    groups.iter().map(MatchGroup::cost).sum()
}

fn sorted_by_score(patients: &[ScoredPatient]) -> Vec<&ScoredPatient> {
    let mut v: Vec<&ScoredPatient> = patients.iter().collect();
    v.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
    v
}

/// Matches `k` distinct controls to every treated patient, minimizing the
/// total absolute score distance. Surplus controls stay unmatched.
///
/// With absolute distance on a line, some optimal assignment never crosses:
/// walking both lists in score order, the matched controls are handed out in
/// blocks of `k` to successive treated patients. The dynamic program runs over
/// (slots decided, controls passed over), so it needs
/// `O(n_treated * k * (surplus + 1))` time and space.
///
/// Returned groups follow the treated patients' score order.
pub fn optimal_match(controls: &[ScoredPatient], treated: &[ScoredPatient], k: usize) -> Result<Vec<MatchGroup>> {
    if k == 0 {
        return Err(Error::Contract("match ratio k must be at least 1".into()));
    }
    let slots = treated.len() * k;
    if controls.len() < slots {
        return Err(Error::Infeasible {
            controls: controls.len(),
            treated: treated.len(),
            k,
            deficit: slots - controls.len(),
        });
    }
    banded_match(controls, treated, k).map(|(groups, _)| groups)
}

/// Like [`optimal_match`], but when the controls cannot fill every set it
/// forms as many sets as they can (`floor(n_controls / k)`) and leaves the
/// treated patients whose omission is cheapest unmatched. Returns the sets
/// and the unmatched treated patients.
pub fn optimal_match_dropping_treated(
    controls: &[ScoredPatient],
    treated: &[ScoredPatient],
    k: usize,
) -> Result<(Vec<MatchGroup>, Vec<ScoredPatient>)> {
    if k == 0 {
        return Err(Error::Contract("match ratio k must be at least 1".into()));
    }
    if controls.len() < k {
        return Err(Error::Infeasible {
            controls: controls.len(),
            treated: treated.len(),
            k,
            deficit: k - controls.len(),
        });
    }
    banded_match(controls, treated, k)
}

const NONE: u8 = 0;
const TAKE: u8 = 1;
const SKIP_CONTROL: u8 = 2;
const SKIP_TREATED: u8 = 3;

fn banded_match(controls: &[ScoredPatient], treated: &[ScoredPatient], k: usize) -> Result<(Vec<MatchGroup>, Vec<ScoredPatient>)> {
    if let Some(p) = controls.iter().chain(treated).find(|p| !p.score.is_finite()) {
        return Err(Error::Validation(format!("patient `{}` has a non-finite score", p.id)));
    }
    let c = sorted_by_score(controls);
    let t = sorted_by_score(treated);
    let (nt, nc) = (t.len(), c.len());
    let sets = nt.min(nc / k);
    let slots = nt * k;
    // Exactly `drops` treated and `spare` controls go unmatched. At most one
    // of the two exceeds k - 1, so the state space stays near `slots * k`.
    let drops = nt - sets;
    let spare = nc - sets * k;
    let (nd, ne) = (drops + 1, spare + 1);

    // State (s, d, e): the first `s` slots are decided, `d` treated were
    // skipped whole (k slots each) and `e` controls passed over. The controls
    // consumed so far number `s - k d + e`.
    let mut cost = vec![f64::INFINITY; (slots + 1) * nd * ne];
    let mut step = vec![NONE; (slots + 1) * nd * ne];
    let at = |s: usize, d: usize, e: usize| (s * nd + d) * ne + e;
    cost[at(0, 0, 0)] = 0.0;
    for s in 0..=slots {
        for d in 0..nd.min(s / k + 1) {
            for e in 0..ne {
                if s == 0 && e == 0 {
                    continue;
                }
                let taken = s - k * d;
                let mut best = (f64::INFINITY, NONE);
                if taken > 0 && taken + e <= nc {
                    let b = taken + e;
                    let v = cost[at(s - 1, d, e)] + (c[b - 1].score - t[(s - 1) / k].score).abs();
                    if v < best.0 {
                        best = (v, TAKE);
                    }
                }
                if e > 0 && taken + e <= nc {
                    let v = cost[at(s, d, e - 1)];
                    if v < best.0 {
                        best = (v, SKIP_CONTROL);
                    }
                }
                if d > 0 && s % k == 0 {
                    let v = cost[at(s - k, d - 1, e)];
                    if v < best.0 {
                        best = (v, SKIP_TREATED);
                    }
                }
                cost[at(s, d, e)] = best.0;
                step[at(s, d, e)] = best.1;
            }
        }
    }

    let mut chosen: Vec<Option<usize>> = vec![None; slots];
    let (mut s, mut d, mut e) = (slots, drops, spare);
    while (s, d, e) != (0, 0, 0) {
        match step[at(s, d, e)] {
            TAKE => {
                chosen[s - 1] = Some(s - k * d + e - 1);
                s -= 1;
            }
            SKIP_CONTROL => e -= 1,
            SKIP_TREATED => {
                s -= k;
                d -= 1;
            }
            _ => return Err(Error::Integrity("matching backtrack reached an unreachable state".into())),
        }
    }

    let mut groups = Vec::with_capacity(sets);
    let mut dropped = Vec::new();
    for (a, tp) in t.iter().enumerate() {
        let block = &chosen[a * k..(a + 1) * k];
        if block[0].is_some() {
            groups.push(MatchGroup {
                treated: (*tp).clone(),
                controls: block.iter().map(|j| c[j.expect("sets are filled whole")].clone()).collect(),
            });
        } else {
            dropped.push((*tp).clone());
        }
    }
    Ok((groups, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSet {
    pub treated_id: String,
    pub control_ids: Vec<String>,
    /// Dataset positions: treated patient first, then the controls.
    pub members: Vec<usize>,
    pub mean_score: f64,
    /// Benefit-positive treatment effect estimate for the set.
    pub effect: f64,
}

/// Matched-set effects ordered by increasing mean score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSequence {
    effects: Vec<f64>,
    scores: Vec<f64>,
    sets: Vec<MatchedSet>,
}

impl EffectSequence {
    pub fn new(effects: Vec<f64>, scores: Vec<f64>, sets: Vec<MatchedSet>) -> Result<Self> {
        if effects.len() < 2 {
            return Err(Error::Contract(format!("need at least 2 matched sets, got {}", effects.len())));
        }
        if effects.len() != scores.len() || !(sets.is_empty() || sets.len() == effects.len()) {
            return Err(Error::Contract("effects, scores and sets differ in length".into()));
        }
        if effects.iter().chain(&scores).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite effect or score".into()));
        }
        if scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Contract("scores must be non-decreasing".into()));
        }
        Ok(Self { effects, scores, sets })
    }

    /// A sequence with no matched-set provenance; scores are the 1-based positions.
    pub fn from_effects(effects: Vec<f64>) -> Result<Self> {
        let scores = (1..=effects.len()).map(|i| i as f64).collect();
        Self::new(effects, scores, Vec::new())
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sets(&self) -> &[MatchedSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// Computes each set's effect (treated outcome minus mean control outcome,
/// negated when higher outcomes are worse) and orders sets by mean score,
/// breaking ties by treated id.
pub fn compute_effects(groups: &[MatchGroup], dataset: &TrialDataset) -> Result<EffectSequence> {
    let patients = dataset.patients();
    let lookup = |sp: &ScoredPatient, treated: bool| {
        patients
            .get(sp.index)
            .filter(|p| p.id == sp.id && p.treated == treated)
            .ok_or_else(|| Error::Integrity(format!("matched patient `{}` not found in dataset", sp.id)))
    };
    let sign = match dataset.outcome_direction() {
        OutcomeDirection::HigherIsBetter => 1.0,
        OutcomeDirection::HigherIsWorse => -1.0,
    };
    let mut sets = groups
        .iter()
        .map(|g| {
            if g.controls.is_empty() {
                return Err(Error::Integrity(format!("set of `{}` has no controls", g.treated.id)));
            }
            let yt = lookup(&g.treated, true)?.outcome;
            let mut yc = 0.0;
            for c in &g.controls {
                yc += lookup(c, false)?.outcome;
            }
            yc /= g.controls.len() as f64;
            let mut members = vec![g.treated.index];
            members.extend(g.controls.iter().map(|c| c.index));
            Ok(MatchedSet {
                treated_id: g.treated.id.clone(),
                control_ids: g.controls.iter().map(|c| c.id.clone()).collect(),
                members,
                mean_score: g.mean_score(),
                effect: sign * (yt - yc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sets.sort_by(|a, b| a.mean_score.total_cmp(&b.mean_score).then_with(|| a.treated_id.cmp(&b.treated_id)));
    let effects = sets.iter().map(|s| s.effect).collect();
    let scores = sets.iter().map(|s| s.mean_score).collect();
    EffectSequence::new(effects, scores, sets)
}

/// Audit export: `position,treated_id,control_ids,mean_score,effect` with
/// control ids joined by `;`.
pub fn write_matched_sets_csv<W: Write>(seq: &EffectSequence, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::csv("<matched sets>", e);
    wtr.write_record(["position", "treated_id", "control_ids", "mean_score", "effect"]).map_err(err)?;
    for (i, s) in seq.sets().iter().enumerate() {
        wtr.write_record([
            (i + 1).to_string(),
            s.treated_id.clone(),
            s.control_ids.join(";"),
            s.mean_score.to_string(),
            s.effect.to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("<matched sets>", e))
}
