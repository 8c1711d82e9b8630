//! Marginal uniformisation by histogram equalisation.
//!
//! Both distance coordinates are pooled into one sample of `2T` values and a
//! single empirical CDF is fitted to it. The CDF is a piecewise-linear
//! interpolation of the cumulative histogram mass at the bin edges, so the
//! transform is continuous and nondecreasing and maps the fitted range onto
//! `[0, 1]`. Values outside the fitted range clamp to `0` or `1`.

use serde::{Deserialize, Serialize};

use crate::data::{JudgementDataset, TripletRecord};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformiserMap {
    bins: usize,
    bin_edges: Vec<f64>,
    cum_mass: Vec<f64>,
    /// Identifier of the fit that produced this map, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_id: Option<String>,
}

impl UniformiserMap {
    /// Builds a map from explicit edges and cumulative masses, checking the
    /// invariants.
    pub fn from_parts(bin_edges: Vec<f64>, cum_mass: Vec<f64>) -> Result<Self> {
        let map = Self {
            bins: bin_edges.len().saturating_sub(1),
            bin_edges,
            cum_mass,
            fit_id: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(format!("invalid uniformiser map: {m}")));
        if self.bins < 1 || self.bin_edges.len() != self.bins + 1 {
            return bad("expected bins + 1 edges");
        }
        if self.cum_mass.len() != self.bin_edges.len() {
            return bad("cum_mass and bin_edges lengths differ");
        }
        if self.bin_edges.iter().any(|e| !e.is_finite())
            || self.bin_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("bin edges must be finite and strictly increasing");
        }
        if self.cum_mass[0] != 0.0 || self.cum_mass[self.bins] != 1.0 {
            return bad("cumulative mass must start at 0 and end at 1");
        }
        if self.cum_mass.windows(2).any(|w| w[0] > w[1]) {
            return bad("cumulative mass must be nondecreasing");
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn cum_mass(&self) -> &[f64] {
        &self.cum_mass
    }

    /// Maps a raw distance into `[0, 1]`.
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Input(format!("cannot uniformise non-finite value {x}")));
        }
        Ok(self.apply_finite(x))
    }

    fn apply_finite(&self, x: f64) -> f64 {
        let edges = &self.bin_edges;
        if x <= edges[0] {
            return 0.0;
        }
        if x >= edges[self.bins] {
            return 1.0;
        }
        // First edge strictly greater than x; x lies in bin b = upper - 1.
        let upper = edges.partition_point(|&e| e <= x);
        let b = upper - 1;
        let t = (x - edges[b]) / (edges[b + 1] - edges[b]);
        let lo = self.cum_mass[b];
        (lo + t * (self.cum_mass[b + 1] - lo)).clamp(0.0, 1.0)
    }

    /// Quantile function: the smallest raw value mapping to `u`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Input(format!("cannot invert non-finite value {u}")));
        }
        let u = u.clamp(0.0, 1.0);
        let cm = &self.cum_mass;
        if u <= 0.0 {
            // Skip leading empty bins.
            let b = cm.partition_point(|&c| c <= 0.0).saturating_sub(1);
            return Ok(self.bin_edges[b]);
        }
        let upper = cm.partition_point(|&c| c < u).min(self.bins);
        let b = upper.max(1) - 1;
        let span = cm[b + 1] - cm[b];
        let t = if span > 0.0 { (u - cm[b]) / span } else { 0.0 };
        Ok(self.bin_edges[b] + t * (self.bin_edges[b + 1] - self.bin_edges[b]))
    }
}

/// Fits the histogram-equalisation CDF to the pooled `{d0} ∪ {d1}` sample.
pub fn fit_uniformiser(ds: &JudgementDataset, bins: usize) -> Result<UniformiserMap> {
    if ds.len() < 2 {
        return Err(Error::Config(format!(
            "uniformiser needs at least 2 records, got {}",
            ds.len()
        )));
    }
    let pooled: Vec<f64> = ds.records().iter().flat_map(|r| [r.d0, r.d1]).collect();
    fit_pooled(&pooled, bins)
}

/// Fits the CDF to an explicit sample.
pub fn fit_pooled(values: &[f64], bins: usize) -> Result<UniformiserMap> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("sample contains non-finite values".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || lo >= hi {
        return Err(Error::Degenerate(
            "all pooled distances are identical; the transform is undefined".into(),
        ));
    }
    let width = hi - lo;
    let mut bin_edges: Vec<f64> = (0..=bins)
        .map(|i| lo + width * (i as f64 / bins as f64))
        .collect();
    bin_edges[bins] = hi;
    if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Degenerate(format!(
            "range [{lo}, {hi}] too narrow for {bins} bins"
        )));
    }

    let mut counts = vec![0u64; bins];
    for &v in values {
        // The maximum falls in the last bin.
        let upper = bin_edges.partition_point(|&e| e <= v).min(bins);
        counts[upper.max(1) - 1] += 1;
    }
    let total = values.len() as f64;
    let mut cum_mass = Vec::with_capacity(bins + 1);
    let mut acc = 0u64;
    cum_mass.push(0.0);
    for c in &counts {
        acc += c;
        cum_mass.push(acc as f64 / total);
    }
    cum_mass[bins] = 1.0;

    Ok(UniformiserMap {
        bins,
        bin_edges,
        cum_mass,
        fit_id: None,
    })
}

/// Replaces both distances of every record by their uniformised images.
pub fn transform_dataset(map: &UniformiserMap, ds: &JudgementDataset) -> JudgementDataset {
    let records: Vec<TripletRecord> = ds
        .records()
        .iter()
        .map(|r| TripletRecord {
            d0: map.apply_finite(r.d0),
            d1: map.apply_finite(r.d1),
            ..r.clone()
        })
        .collect();
    ds.with_records(records)
        .expect("uniformised records stay valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds_from_pairs(pairs: &[(f64, f64)]) -> JudgementDataset {
        let records = pairs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| TripletRecord::new(i.to_string(), a, b, 0, 1))
            .collect();
        JudgementDataset::new(records, "u").unwrap()
    }

    #[test]
    fn four_values_four_bins() {
        let map = fit_uniformiser(&ds_from_pairs(&[(1.0, 2.0), (3.0, 4.0)]), 4).unwrap();
        assert_eq!(map.bin_edges(), &[1.0, 1.75, 2.5, 3.25, 4.0]);
        assert_eq!(map.cum_mass(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn endpoints_map_to_zero_and_one() {
        let map = fit_uniformiser(&ds_from_pairs(&[(1.0, 2.0), (3.0, 4.0)]), 4).unwrap();
        assert_eq!(map.apply(1.0).unwrap(), 0.0);
        assert_eq!(map.apply(4.0).unwrap(), 1.0);
        assert_eq!(map.apply(-10.0).unwrap(), 0.0);
        assert_eq!(map.apply(10.0).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let map = fit_uniformiser(&ds_from_pairs(&[(1.0, 2.0), (3.0, 4.0)]), 4).unwrap();
        assert!(map.apply(f64::NAN).is_err());
        assert!(map.apply(f64::INFINITY).is_err());
    }

    #[test]
    fn two_point_mass_midpoint() {
        // Brute-force empirical CDF: half the sample sits at 0, half at 1, so the
        // midpoint of the range has CDF 0.5.
        let pairs: Vec<(f64, f64)> = (0..50).map(|_| (0.0, 1.0)).collect();
        let map = fit_uniformiser(&ds_from_pairs(&pairs), 10).unwrap();
        let brute = pairs.iter().flat_map(|&(a, b)| [a, b]).filter(|&v| v <= 0.5).count() as f64 / 100.0;
        assert_eq!(brute, 0.5);
        assert!((map.apply(0.5).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn interpolation_within_bin() {
        // Bin [1, 2) carries 40% of the mass starting at cumulative 0.3.
        let map = UniformiserMap::from_parts(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.3, 0.7, 1.0]).unwrap();
        assert!((map.apply(1.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sample_is_error() {
        let err = fit_uniformiser(&ds_from_pairs(&[(2.0, 2.0), (2.0, 2.0)]), 10).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn config_checks() {
        assert!(matches!(
            fit_uniformiser(&ds_from_pairs(&[(1.0, 2.0), (3.0, 4.0)]), 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(fit_uniformiser(&ds_from_pairs(&[(1.0, 2.0)]), 4), Err(Error::Config(_))));
    }

    #[test]
    fn from_parts_rejects_bad_maps() {
        assert!(UniformiserMap::from_parts(vec![0.0, 1.0], vec![0.0, 0.9]).is_err());
        assert!(UniformiserMap::from_parts(vec![0.0, 0.0, 1.0], vec![0.0, 0.5, 1.0]).is_err());
        assert!(UniformiserMap::from_parts(vec![0.0, 1.0, 2.0], vec![0.0, 0.6, 0.5]).is_err());
    }

    #[test]
    fn transform_keeps_counts_and_clamps() {
        let train = ds_from_pairs(&[(1.0, 2.0), (3.0, 4.0)]);
        let map = fit_uniformiser(&train, 4).unwrap();
        let test = JudgementDataset::new(
            vec![TripletRecord::new("x", 100.0, 2.5, 3, 5).with_group("g")],
            "t",
        )
        .unwrap();
        let out = transform_dataset(&map, &test);
        let r = &out.records()[0];
        assert_eq!(r.d0, 1.0);
        assert_eq!(r.d1, 0.5);
        assert_eq!((r.n, r.m, r.group.as_deref()), (3, 5, Some("g")));
    }

    #[test]
    fn fitting_set_deciles_are_uniform() {
        // Deterministic skewed sample: squares of a uniform grid.
        let pairs: Vec<(f64, f64)> = (0..10_000)
            .map(|i| {
                let a = (i as f64 + 0.5) / 10_000.0;
                let b = ((i * 7919) % 10_000) as f64 / 10_000.0 + 0.3e-4;
                (a * a, b * b)
            })
            .collect();
        let ds = ds_from_pairs(&pairs);
        let map = fit_uniformiser(&ds, 200).unwrap();
        let out = transform_dataset(&map, &ds);
        let mut counts = [0usize; 10];
        for r in out.records() {
            for u in [r.d0, r.d1] {
                counts[((u * 10.0) as usize).min(9)] += 1;
            }
        }
        for c in counts {
            let frac = c as f64 / 20_000.0;
            assert!((frac - 0.1).abs() < 0.015, "decile fraction {frac}");
        }
    }

    #[test]
    fn inverse_round_trips_inside_range() {
        let map = UniformiserMap::from_parts(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 0.3, 0.7, 1.0]).unwrap();
        for x in [0.0, 0.25, 1.0, 1.5, 2.9, 3.0] {
            let u = map.apply(x).unwrap();
            assert!((map.inverse(u).unwrap() - x).abs() < 1e-12, "x = {x}");
        }
    }

    proptest! {
        #[test]
        fn apply_is_monotone(
            sample in prop::collection::vec(0.0f64..100.0, 4..200),
            bins in 2usize..50,
            mut xs in prop::collection::vec(-10.0f64..110.0, 2..50),
        ) {
            prop_assume!(sample.iter().any(|&v| v != sample[0]));
            let map = fit_pooled(&sample, bins).unwrap();
            prop_assert_eq!(map.cum_mass()[0], 0.0);
            prop_assert_eq!(map.cum_mass()[bins], 1.0);
            prop_assert!(map.cum_mass().windows(2).all(|w| w[0] <= w[1]));
            xs.sort_by(f64::total_cmp);
            let us: Vec<f64> = xs.iter().map(|&x| map.apply(x).unwrap()).collect();
            prop_assert!(us.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(us.iter().all(|u| (0.0..=1.0).contains(u)));
        }

        #[test]
        fn swap_commutes_with_transform(
            pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..60),
        ) {
            let ds = ds_from_pairs(&pairs);
            prop_assume!(pairs.iter().any(|&(a, b)| a != pairs[0].0 || b != pairs[0].0));
            let map = fit_uniformiser(&ds, 16).unwrap();
            let swapped = ds.with_records(ds.records().iter().map(|r| r.mirrored()).collect()).unwrap();
            let a = transform_dataset(&map, &swapped);
            let b = transform_dataset(&map, &ds);
            for (x, y) in a.records().iter().zip(b.records()) {
                prop_assert_eq!(x.d0.to_bits(), y.d1.to_bits());
                prop_assert_eq!(x.d1.to_bits(), y.d0.to_bits());
            }
        }
    }
}
