//! Kernel-smoothed estimation of the binomial decision surface.
//!
//! For every outcome `j = 0..=M` the events `{(d0, d1), n = j}` are smoothed
//! with an isotropic Gaussian kernel onto a `G x G` grid of cell centers over
//! the (uniformised) unit square. Each record also contributes its mirror
//! `(d1, d0, M - n)`. Per cell the sheets give the conditional outcome
//! distribution `Pr(n = j | cell)`, and the likelihood-maximising binomial
//! parameter is its mean divided by `M`.
//!
//! Each kernel is normalised to unit mass over the grid before it is added,
//! so every sample carries the same weight regardless of how much of its
//! kernel falls outside the square. The per-outcome sheets are then scaled so
//! that sheet `j` holds mass `P(j)`, the empirical outcome frequency in the
//! mirrored sample.

use serde::{Deserialize, Serialize};

use crate::data::{expand_binary, JudgementDataset};
use crate::error::{Error, Result};
use crate::par;
use crate::surface::{cell_center, DecisionSurface, SurfaceSource};

pub const DEFAULT_SIGMA: f64 = 1.0 / 44.0;
pub const DEFAULT_GRID: usize = 20;
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Kernel standard deviation in uniformised units.
    pub sigma: f64,
    /// Cells per axis.
    pub grid: usize,
    /// Cells whose total mass is below this are undefined.
    pub epsilon: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            grid: DEFAULT_GRID,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl DensityConfig {
    pub fn new(sigma: f64, grid: usize) -> Self {
        Self {
            sigma,
            grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.grid < 2 {
            return Err(Error::Config(format!("grid must be at least 2, got {}", self.grid)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-outcome smoothed masses on the grid. `per_j_mass[j][i * G + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub sigma: f64,
    pub m_max: u32,
    pub per_j_mass: Vec<Vec<f64>>,
}

impl DensityGrid {
    pub fn cells(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn total_mass(&self) -> f64 {
        self.per_j_mass.iter().flatten().sum()
    }

    pub fn sheet_mass(&self, j: usize) -> f64 {
        self.per_j_mass[j].iter().sum()
    }

    /// Mass at one cell summed over outcomes.
    pub fn cell_mass(&self, cell: usize) -> f64 {
        self.per_j_mass.iter().map(|s| s[cell]).sum()
    }
}

/// Conditional outcome distributions per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditionals {
    pub resolution: usize,
    pub m_max: u32,
    /// `probs[cell * (M + 1) + j]`; zero for undefined cells.
    pub probs: Vec<f64>,
    pub undefined: Vec<bool>,
}

impl Conditionals {
    pub fn at(&self, cell: usize) -> &[f64] {
        let w = self.m_max as usize + 1;
        &self.probs[cell * w..(cell + 1) * w]
    }
}

/// Kernel weights of `x` on the `g` cell centers, normalised to sum 1.
///
/// Exponents are shifted by the largest one so the nearest center always
/// receives a positive weight, however small `sigma` is.
pub(crate) fn axis_weights(x: f64, g: usize, sigma: f64, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut min_sq = f64::INFINITY;
    for (i, w) in out.iter_mut().enumerate() {
        let d = x - cell_center(i, g);
        *w = d * d;
        min_sq = min_sq.min(*w);
    }
    let mut total = 0.0;
    for w in out.iter_mut() {
        *w = (-(*w - min_sq) * inv).exp();
        total += *w;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// Smooths the mirrored sample onto per-outcome sheets.
pub fn accumulate(ds: &JudgementDataset, config: &DensityConfig) -> Result<DensityGrid> {
    config.validate()?;
    let m_max = ds.fixed_m().ok_or_else(|| {
        Error::Config("kernel accumulation needs a fixed number of judgements; use binary_surface".into())
    })?;
    if let Some((i, r)) = ds
        .records()
        .iter()
        .enumerate()
        .find(|(_, r)| !(0.0..=1.0).contains(&r.d0) || !(0.0..=1.0).contains(&r.d1))
    {
        return Err(Error::Input(format!(
            "record {} has coordinates ({}, {}) outside the unit square; uniformise first",
            i + 1,
            r.d0,
            r.d1
        )));
    }

    let g = config.grid;
    let cells = g * g;
    let outcomes = m_max as usize + 1;

    let partials = par::map_partitions(ds.records(), |_, chunk| {
        let mut sheets = vec![0.0f64; outcomes * cells];
        let mut wx = vec![0.0; g];
        let mut wy = vec![0.0; g];
        let mut counts = vec![0u64; outcomes];
        for r in chunk {
            axis_weights(r.d0, g, config.sigma, &mut wx);
            axis_weights(r.d1, g, config.sigma, &mut wy);
            let j = r.n as usize;
            let jm = (r.m - r.n) as usize;
            counts[j] += 1;
            counts[jm] += 1;
            // Record at (d0, d1) into sheet j, mirror at (d1, d0) into sheet M - n.
            add_outer(&mut sheets[j * cells..(j + 1) * cells], &wx, &wy);
            add_outer(&mut sheets[jm * cells..(jm + 1) * cells], &wy, &wx);
        }
        (sheets, counts)
    });

    let mut sheets = vec![0.0f64; outcomes * cells];
    let mut counts = vec![0u64; outcomes];
    for (part, part_counts) in partials {
        for (a, b) in sheets.iter_mut().zip(&part) {
            *a += b;
        }
        for (a, b) in counts.iter_mut().zip(&part_counts) {
            *a += b;
        }
    }

    let mirrored_total = 2.0 * ds.len() as f64;
    let per_j_mass = sheets
        .chunks(cells)
        .zip(&counts)
        .map(|(sheet, &count)| {
            let target = count as f64 / mirrored_total;
            let sum: f64 = sheet.iter().sum();
            if sum > 0.0 {
                let scale = target / sum;
                sheet.iter().map(|v| v * scale).collect()
            } else {
                vec![0.0; cells]
            }
        })
        .collect();

    Ok(DensityGrid {
        resolution: g,
        sigma: config.sigma,
        m_max,
        per_j_mass,
    })
}

fn add_outer(sheet: &mut [f64], rows: &[f64], cols: &[f64]) {
    let g = cols.len();
    for (row, &a) in sheet.chunks_exact_mut(g).zip(rows) {
        if a == 0.0 {
            continue;
        }
        for (v, &b) in row.iter_mut().zip(cols) {
            *v += a * b;
        }
    }
}

/// Normalises the sheets per cell. Cells with total mass below `epsilon`
/// are flagged undefined.
pub fn conditionals(grid: &DensityGrid, epsilon: f64) -> Conditionals {
    let outcomes = grid.m_max as usize + 1;
    let cells = grid.cells();
    let mut probs = vec![0.0; cells * outcomes];
    let mut undefined = vec![false; cells];
    for cell in 0..cells {
        let total = grid.cell_mass(cell);
        if total < epsilon || total <= 0.0 {
            undefined[cell] = true;
            continue;
        }
        for j in 0..outcomes {
            probs[cell * outcomes + j] = grid.per_j_mass[j][cell] / total;
        }
    }
    Conditionals {
        resolution: grid.resolution,
        m_max: grid.m_max,
        probs,
        undefined,
    }
}

/// Likelihood-maximising binomial parameter for one conditional outcome
/// distribution: `(1 / M) * sum_j j * Pr(n = j)`.
pub fn mle_parameter(conditional: &[f64]) -> f64 {
    let m = (conditional.len() - 1) as f64;
    let mean: f64 = conditional
        .iter()
        .enumerate()
        .map(|(j, p)| j as f64 * p)
        .sum();
    (mean / m).clamp(0.0, 1.0)
}

/// Fitted surface from the per-outcome sheets. Undefined cells are set to 0.5
/// and masked; values and mask are then symmetrised so that
/// `P(i, k) + P(k, i) = 1`.
pub fn mle_surface(grid: &DensityGrid, epsilon: f64) -> DecisionSurface {
    let cond = conditionals(grid, epsilon);
    let g = grid.resolution;
    let raw: Vec<f64> = (0..g * g)
        .map(|c| {
            if cond.undefined[c] {
                0.5
            } else {
                mle_parameter(cond.at(c))
            }
        })
        .collect();

    let mut values = vec![0.5; g * g];
    let mut mask = vec![false; g * g];
    for i in 0..g {
        for k in 0..g {
            let a = i * g + k;
            let b = k * g + i;
            let undefined = cond.undefined[a] || cond.undefined[b];
            mask[a] = undefined;
            values[a] = if undefined {
                0.5
            } else {
                (0.5 * (raw[a] + 1.0 - raw[b])).clamp(0.0, 1.0)
            };
        }
    }
    DecisionSurface {
        sigma: grid.sigma,
        resolution: g,
        source: SurfaceSource::Density,
        values,
        undefined_mask: mask,
        fit_id: None,
    }
}

/// Accumulate then solve, for a dataset with a fixed number of judgements.
pub fn fit_surface(ds: &JudgementDataset, config: &DensityConfig) -> Result<DecisionSurface> {
    let grid = accumulate(ds, config)?;
    Ok(mle_surface(&grid, config.epsilon))
}

/// Surface from the dataset expanded into single judgements (`M = 1`).
/// Handles a variable number of judgements per record.
pub fn binary_surface(ds: &JudgementDataset, config: &DensityConfig) -> Result<DecisionSurface> {
    let binary = expand_binary(ds);
    fit_surface(&binary, config)
}

/// Picks [`fit_surface`] for fixed-`M` data and [`binary_surface`] otherwise.
pub fn fit_auto(ds: &JudgementDataset, config: &DensityConfig) -> Result<DecisionSurface> {
    if ds.fixed_m().is_some() {
        fit_surface(ds, config)
    } else {
        binary_surface(ds, config)
    }
}
