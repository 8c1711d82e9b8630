//! Decision surfaces: gridded estimates of the binomial choice parameter
//! `P(d0, d1)` over the unit square, with bilinear lookup at arbitrary points.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything that yields the probability of choosing `x1` for a distance pair.
pub trait ChoiceModel: Sync {
    /// `d0` and `d1` are assumed finite.
    fn prob(&self, d0: f64, d1: f64) -> f64;
}

impl<F> ChoiceModel for F
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    fn prob(&self, d0: f64, d1: f64) -> f64 {
        self(d0, d1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceSource {
    Density,
    Mlp,
}

/// Center of cell `i` on a `g`-cell axis over `[0, 1]`.
pub fn cell_center(i: usize, g: usize) -> f64 {
    (i as f64 + 0.5) / g as f64
}

/// `values[i * g + k]` is the estimate at `(d0, d1) = (center(i), center(k))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionSurface {
    pub sigma: f64,
    #[serde(rename = "G")]
    pub resolution: usize,
    pub source: SurfaceSource,
    pub values: Vec<f64>,
    pub undefined_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_id: Option<String>,
}

impl DecisionSurface {
    pub fn new(
        resolution: usize,
        sigma: f64,
        source: SurfaceSource,
        values: Vec<f64>,
        undefined_mask: Vec<bool>,
    ) -> Result<Self> {
        let s = Self {
            sigma,
            resolution,
            source,
            values,
            undefined_mask,
            fit_id: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// A surface holding the same value everywhere.
    pub fn constant(resolution: usize, value: f64) -> Result<Self> {
        Self::new(
            resolution,
            0.0,
            SurfaceSource::Density,
            vec![value; resolution * resolution],
            vec![false; resolution * resolution],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.resolution;
        if g < 2 {
            return Err(Error::Input(format!("surface resolution must be at least 2, got {g}")));
        }
        if self.values.len() != g * g || self.undefined_mask.len() != g * g {
            return Err(Error::Input(format!(
                "surface of resolution {g} needs {} values and mask entries",
                g * g
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("surface value {v} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.resolution + k]
    }

    pub fn is_defined(&self, i: usize, k: usize) -> bool {
        !self.undefined_mask[i * self.resolution + k]
    }

    pub fn undefined_count(&self) -> usize {
        self.undefined_mask.iter().filter(|&&u| u).count()
    }

    /// Bilinear interpolation between cell centers. Coordinates are clamped to
    /// `[0, 1]` and edge values extend beyond the outer centers.
    pub fn lookup(&self, d0: f64, d1: f64) -> Result<f64> {
        if !d0.is_finite() || !d1.is_finite() {
            return Err(Error::Input(format!("cannot look up ({d0}, {d1})")));
        }
        Ok(self.lookup_finite(d0, d1))
    }

    fn lookup_finite(&self, d0: f64, d1: f64) -> f64 {
        let g = self.resolution;
        let axis = |x: f64| -> (usize, f64) {
            let p = x.clamp(0.0, 1.0) * g as f64 - 0.5;
            let i = (p.floor().max(0.0) as usize).min(g - 2);
            (i, (p - i as f64).clamp(0.0, 1.0))
        };
        let (i, ti) = axis(d0);
        let (k, tk) = axis(d1);
        let v = |a: usize, b: usize| self.values[a * g + b];
        let lo = v(i, k) + tk * (v(i, k + 1) - v(i, k));
        let hi = v(i + 1, k) + tk * (v(i + 1, k + 1) - v(i + 1, k));
        (lo + ti * (hi - lo)).clamp(0.0, 1.0)
    }

    /// Largest `|values + transpose - 1|` over all cells.
    pub fn symmetry_error(&self) -> f64 {
        let g = self.resolution;
        (0..g)
            .flat_map(|i| (0..g).map(move |k| (i, k)))
            .map(|(i, k)| (self.value(i, k) + self.value(k, i) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Mean of `|values + transpose - 1|` over all cells.
    pub fn mean_symmetry_error(&self) -> f64 {
        let g = self.resolution;
        let total: f64 = (0..g)
            .flat_map(|i| (0..g).map(move |k| (i, k)))
            .map(|(i, k)| (self.value(i, k) + self.value(k, i) - 1.0).abs())
            .sum();
        total / (g * g) as f64
    }

    /// Flat CSV `i,k,d0_center,d1_center,p_hat,defined` for plotting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.resolution;
        let mut out = String::from("i,k,d0_center,d1_center,p_hat,defined\n");
        for i in 0..g {
            for k in 0..g {
                out.push_str(&format!(
                    "{i},{k},{},{},{},{}\n",
                    cell_center(i, g),
                    cell_center(k, g),
                    self.value(i, k),
                    u8::from(self.is_defined(i, k))
                ));
            }
        }
        w.write_all(out.as_bytes())
            .map_err(|e| Error::Input(format!("writing surface csv: {e}")))
    }
}

impl ChoiceModel for DecisionSurface {
    fn prob(&self, d0: f64, d1: f64) -> f64 {
        self.lookup_finite(d0, d1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surface(g: usize, f: impl Fn(usize, usize) -> f64) -> DecisionSurface {
        let values = (0..g * g).map(|c| f(c / g, c % g)).collect();
        DecisionSurface::new(g, 0.1, SurfaceSource::Density, values, vec![false; g * g]).unwrap()
    }

    #[test]
    fn cell_center_lookup_is_exact() {
        let s = surface(5, |i, k| (i * 5 + k) as f64 / 25.0);
        for i in 0..5 {
            for k in 0..5 {
                let v = s.lookup(cell_center(i, 5), cell_center(k, 5)).unwrap();
                assert!((v - s.value(i, k)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn midpoint_between_cells() {
        // Values vary along d1 only: cell (·, 1) = 0.2 and (·, 2) = 0.6.
        let s = surface(4, |_, k| [0.0, 0.2, 0.6, 1.0][k]);
        let mid = 0.5 * (cell_center(1, 4) + cell_center(2, 4));
        assert!((s.lookup(cell_center(0, 4), mid).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn edges_extend() {
        let s = surface(4, |i, _| [0.1, 0.2, 0.3, 0.4][i]);
        assert!((s.lookup(0.0, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.lookup(1.0, 0.5).unwrap() - 0.4).abs() < 1e-15);
        assert!((s.lookup(-3.0, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.lookup(7.0, 0.5).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn non_finite_lookup_rejected() {
        let s = DecisionSurface::constant(3, 0.5).unwrap();
        assert!(s.lookup(f64::NAN, 0.2).is_err());
        assert!(s.lookup(0.2, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn validation() {
        assert!(DecisionSurface::new(2, 0.1, SurfaceSource::Mlp, vec![0.5; 3], vec![false; 4]).is_err());
        assert!(DecisionSurface::new(2, 0.1, SurfaceSource::Mlp, vec![1.5; 4], vec![false; 4]).is_err());
        assert!(DecisionSurface::new(1, 0.1, SurfaceSource::Mlp, vec![0.5], vec![false]).is_err());
    }

    #[test]
    fn csv_export_layout() {
        let s = surface(2, |i, k| if i == k { 0.5 } else if i > k { 0.9 } else { 0.1 });
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,k,d0_center,d1_center,p_hat,defined");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[3], "1,0,0.75,0.25,0.9,1");
    }

    #[test]
    fn json_field_names() {
        let s = DecisionSurface::constant(2, 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        for key in ["sigma", "G", "source", "values", "undefined_mask"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["source"], "density");
    }

    proptest! {
        #[test]
        fn symmetric_surface_gives_complementary_lookup(
            upper in prop::collection::vec(0.0f64..1.0, 28),
            a in -0.2f64..1.2,
            b in -0.2f64..1.2,
        ) {
            let g = 7;
            let mut values = vec![0.5; g * g];
            let mut it = upper.iter();
            for i in 0..g {
                for k in (i + 1)..g {
                    let v = *it.next().unwrap();
                    values[i * g + k] = v;
                    values[k * g + i] = 1.0 - v;
                }
            }
            let s = DecisionSurface::new(g, 0.1, SurfaceSource::Density, values, vec![false; g * g]).unwrap();
            let sum = s.lookup(a, b).unwrap() + s.lookup(b, a).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
