//! Synthetic 2AFC datasets drawn from known decision surfaces.
//!
//! Each record uses its own random stream keyed by `(seed, index)`, so the
//! generated dataset does not depend on the thread count.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::data::{JudgementDataset, TripletRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use crate::surface::{cell_center, ChoiceModel, DecisionSurface};

/// Ground-truth probability of choosing `x1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Truth {
    /// `1 / (1 + exp(-k (d0 - d1)))`.
    Logistic { k: f64 },
    /// `c` everywhere. Only `c = 0.5` satisfies `P(a, b) + P(b, a) = 1`.
    Constant { c: f64 },
    /// Linear ramp from 0 to 1 over `|d0 - d1| <= width / 2`, a hard step
    /// with value 0.5 on the diagonal when `width` is 0.
    Step { width: f64 },
}

impl Truth {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Truth::Logistic { k } => k.is_finite(),
            Truth::Constant { c } => (0.0..=1.0).contains(&c),
            Truth::Step { width } => width.is_finite() && width >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid truth parameters {self:?}")))
        }
    }

    pub fn prob(&self, d0: f64, d1: f64) -> f64 {
        let diff = d0 - d1;
        match *self {
            Truth::Logistic { k } => 1.0 / (1.0 + (-k * diff).exp()),
            Truth::Constant { c } => c,
            Truth::Step { width: 0.0 } => {
                if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            Truth::Step { width } => (0.5 + diff / width).clamp(0.0, 1.0),
        }
    }

    /// Whether `P(a, b) + P(b, a) = 1` holds everywhere.
    pub fn is_symmetric(&self) -> bool {
        !matches!(*self, Truth::Constant { c } if c != 0.5)
    }
}

impl ChoiceModel for Truth {
    fn prob(&self, d0: f64, d1: f64) -> f64 {
        Truth::prob(self, d0, d1)
    }
}

/// How the number of observers per triplet is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MScheme {
    Fixed(u32),
    /// `(m, weight)` pairs; weights need not sum to one.
    Weighted(Vec<(u32, f64)>),
}

impl MScheme {
    fn validate(&self) -> Result<()> {
        match self {
            MScheme::Fixed(0) => Err(Error::Config("m must be at least 1".into())),
            MScheme::Fixed(_) => Ok(()),
            MScheme::Weighted(choices) => {
                if choices.iter().any(|&(m, _)| m == 0) {
                    return Err(Error::Config("m must be at least 1".into()));
                }
                let weights = choices.iter().map(|&(_, w)| w);
                WeightedIndex::new(weights)
                    .map(|_| ())
                    .map_err(|e| Error::Config(format!("invalid m weights: {e}")))
            }
        }
    }
}

/// Distribution of the distance pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceSampler {
    /// Independent `U(0, 1)` coordinates.
    Uniform,
    /// Independent lognormal coordinates, for exercising the uniformiser.
    LogNormal { mu: f64, sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub truth: Truth,
    pub t_count: usize,
    pub m_scheme: MScheme,
    pub sampler: DistanceSampler,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(truth: Truth, t_count: usize, m: u32, seed: u64) -> Self {
        Self {
            truth,
            t_count,
            m_scheme: MScheme::Fixed(m),
            sampler: DistanceSampler::Uniform,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.m_scheme.validate()?;
        if self.t_count == 0 {
            return Err(Error::Config("t_count must be positive".into()));
        }
        if let DistanceSampler::LogNormal { mu, sigma } = self.sampler {
            LogNormal::new(mu, sigma).map_err(|e| Error::Config(format!("invalid lognormal: {e}")))?;
        }
        Ok(())
    }
}

/// Draws a dataset from `spec`. When the truth is evaluated on lognormal
/// distances it sees the raw values, not uniformised ones.
pub fn generate(spec: &SyntheticSpec) -> Result<(JudgementDataset, Truth)> {
    spec.validate()?;
    let lognormal = match spec.sampler {
        DistanceSampler::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).ok(),
        DistanceSampler::Uniform => None,
    };
    let weighted = match &spec.m_scheme {
        MScheme::Weighted(choices) => Some((
            WeightedIndex::new(choices.iter().map(|&(_, w)| w)).expect("validated weights"),
            choices.iter().map(|&(m, _)| m).collect::<Vec<_>>(),
        )),
        MScheme::Fixed(_) => None,
    };
    let records = par::map_range(spec.t_count, |t| {
        let mut s = rng::stream(rng::DOMAIN_GENERATE, spec.seed, t as u64);
        let (d0, d1) = match &lognormal {
            Some(dist) => (dist.sample(&mut s), dist.sample(&mut s)),
            None => (s.random::<f64>(), s.random::<f64>()),
        };
        let m = match (&spec.m_scheme, &weighted) {
            (_, Some((index, ms))) => ms[index.sample(&mut s)],
            (MScheme::Fixed(m), None) => *m,
            _ => unreachable!(),
        };
        let n = rng::binomial(&mut s, m, spec.truth.prob(d0, d1));
        TripletRecord::new(format!("t{t}"), d0, d1, n, m)
    });
    let name = match spec.truth {
        Truth::Logistic { .. } => "synthetic-logistic",
        Truth::Constant { .. } => "synthetic-constant",
        Truth::Step { .. } => "synthetic-step",
    };
    Ok((JudgementDataset::new(records, name)?, spec.truth.clone()))
}

/// Root-mean-square difference between the surface and `truth` at the centers
/// of defined cells. Returns NaN when no cell is defined.
pub fn surface_rmse(surface: &DecisionSurface, truth: &dyn ChoiceModel) -> f64 {
    let g = surface.resolution;
    let (sum, count) = (0..g * g)
        .filter(|&c| !surface.undefined_mask[c])
        .map(|c| {
            let (i, k) = (c / g, c % g);
            let e = surface.values[c] - truth.prob(cell_center(i, g), cell_center(k, g));
            e * e
        })
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    (sum / count as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_surface, DensityConfig};
    use crate::metrics::binomial_pmf;

    #[test]
    fn constant_one_gives_unanimous_counts() {
        let (ds, _) = generate(&SyntheticSpec::new(Truth::Constant { c: 1.0 }, 500, 4, 1)).unwrap();
        assert!(ds.records().iter().all(|r| r.n == r.m));
        let (ds, _) = generate(&SyntheticSpec::new(Truth::Constant { c: 0.0 }, 500, 4, 1)).unwrap();
        assert!(ds.records().iter().all(|r| r.n == 0));
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::new(Truth::Logistic { k: 8.0 }, 3000, 5, 99);
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&SyntheticSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_families_are_symmetric() {
        let families = [
            Truth::Logistic { k: 8.0 },
            Truth::Logistic { k: 1e9 },
            Truth::Constant { c: 0.5 },
            Truth::Step { width: 0.2 },
            Truth::Step { width: 0.0 },
        ];
        for truth in families {
            assert!(truth.is_symmetric());
            for (a, b) in [(0.1, 0.7), (0.5, 0.5), (0.33, 0.31), (0.0, 1.0)] {
                assert!((truth.prob(a, b) + truth.prob(b, a) - 1.0).abs() < 1e-15, "{truth:?}");
            }
        }
        assert!(!Truth::Constant { c: 1.0 }.is_symmetric());
    }

    #[test]
    fn weighted_m_scheme() {
        let spec = SyntheticSpec {
            m_scheme: MScheme::Weighted(vec![(2, 1.0), (5, 3.0)]),
            ..SyntheticSpec::new(Truth::Logistic { k: 4.0 }, 8000, 1, 3)
        };
        let (ds, _) = generate(&spec).unwrap();
        assert_eq!(ds.fixed_m(), None);
        let fives = ds.records().iter().filter(|r| r.m == 5).count() as f64 / 8000.0;
        assert!((fives - 0.75).abs() < 0.02, "{fives}");
        assert!(ds.records().iter().all(|r| r.m == 2 || r.m == 5));
    }

    #[test]
    fn lognormal_sampler_is_positive() {
        let spec = SyntheticSpec {
            sampler: DistanceSampler::LogNormal { mu: 0.0, sigma: 1.0 },
            ..SyntheticSpec::new(Truth::Logistic { k: 2.0 }, 2000, 2, 5)
        };
        let (ds, _) = generate(&spec).unwrap();
        assert!(ds.records().iter().all(|r| r.d0 > 0.0 && r.d1 > 0.0));
        assert!(ds.records().iter().any(|r| r.d0 > 1.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SyntheticSpec::new(Truth::Logistic { k: 8.0 }, 10, 2, 0);
        assert!(generate(&SyntheticSpec { t_count: 0, ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec { m_scheme: MScheme::Fixed(0), ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec { truth: Truth::Constant { c: 1.5 }, ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec {
            m_scheme: MScheme::Weighted(vec![(2, 0.0)]),
            ..base
        })
        .is_err());
    }

    // Counts inside one distance bucket against the mixture of binomials implied
    // by the truth at each record's own coordinates.
    #[test]
    fn bucket_counts_follow_binomial() {
        let m = 5;
        let (ds, truth) = generate(&SyntheticSpec::new(Truth::Logistic { k: 8.0 }, 100_000, m, 11)).unwrap();
        let mut observed = [0.0; 6];
        let mut expected = [0.0; 6];
        for r in ds.records() {
            if (0.55..0.65).contains(&r.d0) && (0.35..0.45).contains(&r.d1) {
                observed[r.n as usize] += 1.0;
                let p = truth.prob(r.d0, r.d1);
                for (j, e) in expected.iter_mut().enumerate() {
                    *e += binomial_pmf(j as u32, m, p).unwrap();
                }
            }
        }
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .filter(|(_, &e)| e > 0.0)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        // Upper 1e-3 quantile of chi-square with 5 degrees of freedom.
        assert!(chi2 < 20.515, "chi2 = {chi2}");
    }

    #[test]
    fn rmse_trivial_cases() {
        let half = DecisionSurface::constant(10, 0.5).unwrap();
        assert_eq!(surface_rmse(&half, &Truth::Constant { c: 0.5 }), 0.0);
        let g = 8;
        let values = (0..g * g)
            .map(|c| Truth::Logistic { k: 3.0 }.prob(cell_center(c / g, g), cell_center(c % g, g)))
            .collect();
        let exact = DecisionSurface::new(g, 0.0, half.source, values, vec![false; g * g]).unwrap();
        assert_eq!(surface_rmse(&exact, &Truth::Logistic { k: 3.0 }), 0.0);
    }

    #[test]
    fn rmse_against_hard_step() {
        // Off-diagonal cells miss by 0.5, diagonal cells are exact.
        for g in [2, 5, 20, 100] {
            let half = DecisionSurface::constant(g, 0.5).unwrap();
            let expect = 0.5 * (1.0 - 1.0 / g as f64).sqrt();
            for truth in [Truth::Logistic { k: 1e12 }, Truth::Step { width: 0.0 }] {
                assert!((surface_rmse(&half, &truth) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rmse_skips_undefined_cells() {
        let mut s = DecisionSurface::constant(2, 0.5).unwrap();
        s.values[1] = 0.0;
        s.undefined_mask[1] = true;
        assert_eq!(surface_rmse(&s, &Truth::Constant { c: 0.5 }), 0.0);
    }

    #[test]
    fn density_fit_recovers_logistic() {
        let (ds, truth) = generate(&SyntheticSpec::new(Truth::Logistic { k: 8.0 }, 20_000, 2, 7)).unwrap();
        let surface = fit_surface(&ds, &DensityConfig::default()).unwrap();
        let rmse = surface_rmse(&surface, &truth);
        assert!(rmse < 0.08, "rmse {rmse}");
    }
}
