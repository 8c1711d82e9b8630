//! Evaluation metrics for a fitted decision model.
//!
//! * negative log-likelihood of the observed counts under `B(m, P(d0, d1))`,
//! * agreement of judgements (AJ) between the binomial mode and `n`,
//! * the 2AFC score of a binary decision rule,
//! * the same AJ and NLL on judgements simulated from the model itself, as a
//!   reference for data that follow the fitted model exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{split_by_group, JudgementDataset, TripletRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::surface::ChoiceModel;

/// Lower bound applied to probabilities before taking logs.
pub const P_FLOOR: f64 = 1e-12;

/// Binomial probability mass `C(m, j) p^j (1 - p)^(m - j)` with `0^0 = 1`.
pub fn binomial_pmf(j: u32, m: u32, p: f64) -> Result<f64> {
    if j > m {
        return Err(Error::Input(format!("outcome {j} exceeds number of trials {m}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("probability {p} outside [0, 1]")));
    }
    Ok(pmf_unchecked(j, m, p))
}

/// `ln C(m, j)`.
pub fn ln_binomial_coef(m: u32, j: u32) -> f64 {
    let k = j.min(m - j);
    (1..=k).map(|i| ((m - k + i) as f64 / i as f64).ln()).sum()
}

fn pmf_unchecked(j: u32, m: u32, p: f64) -> f64 {
    let k = j.min(m - j);
    let mut coef = 1.0f64;
    for i in 1..=k {
        coef = coef * (m - k + i) as f64 / i as f64;
    }
    coef * powi(p, j) * powi(1.0 - p, m - j)
}

fn powi(x: f64, e: u32) -> f64 {
    if e == 0 {
        1.0
    } else {
        x.powi(e as i32)
    }
}

/// `-ln Pr(n; m, p)` with the probability floored at [`P_FLOOR`].
pub fn record_nll(n: u32, m: u32, p: f64) -> f64 {
    -pmf_unchecked(n, m, p.clamp(0.0, 1.0)).max(P_FLOOR).ln()
}

/// Most likely outcome of `B(m, p)`: `floor((m + 1) p)`, clamped to `[0, m]`.
pub fn binomial_mode(m: u32, p: f64) -> u32 {
    let mode = ((m as f64 + 1.0) * p).floor();
    mode.clamp(0.0, m as f64) as u32
}

fn record_aj_error(r: &TripletRecord, p: f64) -> f64 {
    (binomial_mode(r.m, p) as f64 - r.n as f64).abs() / r.m as f64
}

/// Mean negative log-likelihood per record, in nats, using each record's own `m`.
pub fn nll(ds: &JudgementDataset, model: &dyn ChoiceModel) -> f64 {
    let total = par::sum_by(ds.records(), |_, r| record_nll(r.n, r.m, model.prob(r.d0, r.d1)));
    total / ds.len() as f64
}

/// Agreement of judgements, as a percentage.
pub fn aj(ds: &JudgementDataset, model: &dyn ChoiceModel) -> f64 {
    let total = par::sum_by(ds.records(), |_, r| record_aj_error(r, model.prob(r.d0, r.d1)));
    100.0 - 100.0 * total / ds.len() as f64
}

/// Binary decision `p̂` used by the 2AFC score.
#[derive(Clone, Copy)]
pub enum DecisionRule<'a> {
    /// `p̂ = 1` iff `d0 > d1`.
    DistanceOnly,
    /// `p̂ = 1` iff the model probability exceeds one half.
    Threshold(&'a dyn ChoiceModel),
}

impl DecisionRule<'_> {
    /// The decision for one pair; exact ties give 0.5.
    pub fn decide(&self, d0: f64, d1: f64) -> f64 {
        let (a, b) = match self {
            DecisionRule::DistanceOnly => (d0, d1),
            DecisionRule::Threshold(model) => (model.prob(d0, d1), 0.5),
        };
        if a > b {
            1.0
        } else if a < b {
            0.0
        } else {
            0.5
        }
    }
}

/// Per-record 2AFC agreement `p̂ n/m + (1 - n/m)(1 - p̂)`.
pub fn afc2_record(p_hat: f64, n: u32, m: u32) -> f64 {
    let rate = n as f64 / m as f64;
    p_hat * rate + (1.0 - rate) * (1.0 - p_hat)
}

/// 2AFC score, as a percentage.
pub fn afc2(ds: &JudgementDataset, rule: DecisionRule<'_>) -> f64 {
    let total = par::sum_by(ds.records(), |_, r| afc2_record(rule.decide(r.d0, r.d1), r.n, r.m));
    100.0 * total / ds.len() as f64
}

/// Replaces every `n` by a draw from `B(m, P(d0, d1))`. Record `t` uses its own
/// random stream derived from `(seed, t)`.
pub fn simulate_judgements(ds: &JudgementDataset, model: &dyn ChoiceModel, seed: u64) -> JudgementDataset {
    let records = par::map_indexed(ds.records(), |t, r| {
        let p = model.prob(r.d0, r.d1).clamp(0.0, 1.0);
        let mut stream = rng::stream(rng::DOMAIN_SIMULATE, seed, t as u64);
        TripletRecord {
            n: rng::binomial(&mut stream, r.m, p),
            ..r.clone()
        }
    });
    ds.with_records(records).expect("simulated records stay valid")
}

/// Metrics for one set of records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub t_count: usize,
    pub aj: f64,
    pub nll: f64,
    pub afc2_distance_only: f64,
    pub afc2_surface: f64,
    pub aj_simulated: f64,
    pub nll_simulated: f64,
}

impl GroupMetrics {
    fn compute(real: &JudgementDataset, simulated: &JudgementDataset, model: &dyn ChoiceModel) -> Self {
        Self {
            t_count: real.len(),
            aj: aj(real, model),
            nll: nll(real, model),
            afc2_distance_only: afc2(real, DecisionRule::DistanceOnly),
            afc2_surface: afc2(real, DecisionRule::Threshold(model)),
            aj_simulated: aj(simulated, model),
            nll_simulated: nll(simulated, model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub distance_name: String,
    pub aj: f64,
    pub nll: f64,
    pub afc2_distance_only: f64,
    pub afc2_surface: f64,
    pub aj_simulated: f64,
    pub nll_simulated: f64,
    pub t_count: usize,
    pub seed: u64,
    pub per_group: BTreeMap<String, GroupMetrics>,
}

impl EvalReport {
    pub fn overall(&self) -> GroupMetrics {
        GroupMetrics {
            t_count: self.t_count,
            aj: self.aj,
            nll: self.nll,
            afc2_distance_only: self.afc2_distance_only,
            afc2_surface: self.afc2_surface,
            aj_simulated: self.aj_simulated,
            nll_simulated: self.nll_simulated,
        }
    }

    /// Count-weighted mean of the per-group metrics.
    pub fn recombined(&self) -> GroupMetrics {
        let total: usize = self.per_group.values().map(|g| g.t_count).sum();
        let w = |f: fn(&GroupMetrics) -> f64| -> f64 {
            self.per_group
                .values()
                .map(|g| f(g) * g.t_count as f64)
                .sum::<f64>()
                / total as f64
        };
        GroupMetrics {
            t_count: total,
            aj: w(|g| g.aj),
            nll: w(|g| g.nll),
            afc2_distance_only: w(|g| g.afc2_distance_only),
            afc2_surface: w(|g| g.afc2_surface),
            aj_simulated: w(|g| g.aj_simulated),
            nll_simulated: w(|g| g.nll_simulated),
        }
    }
}

/// All metrics on real and simulated judgements, overall and per group.
pub fn full_report(ds: &JudgementDataset, model: &dyn ChoiceModel, seed: u64) -> EvalReport {
    let simulated = simulate_judgements(ds, model, seed);
    let overall = GroupMetrics::compute(ds, &simulated, model);
    let real_parts = split_by_group(ds);
    let sim_parts = split_by_group(&simulated);
    let per_group = real_parts
        .iter()
        .map(|(label, part)| {
            (
                label.clone(),
                GroupMetrics::compute(part, &sim_parts[label], model),
            )
        })
        .collect();
    EvalReport {
        distance_name: ds.distance_name().to_owned(),
        aj: overall.aj,
        nll: overall.nll,
        afc2_distance_only: overall.afc2_distance_only,
        afc2_surface: overall.afc2_surface,
        aj_simulated: overall.aj_simulated,
        nll_simulated: overall.nll_simulated,
        t_count: overall.t_count,
        seed,
        per_group,
    }
}
