//! Fit and evaluation steps shared by `fit`, `eval` and `sweep`.

use std::fs::File;
use std::path::Path;

use afcfit::data::{load_dataset_with, LoadOptions};
use afcfit::density::{fit_auto, DensityConfig};
use afcfit::mlp::{mlp_surface, train_mlp, InputSpace, MlpConfig, MlpModel};
use afcfit::surface::{cell_center, SurfaceSource};
use afcfit::uniformise::{fit_uniformiser, transform_dataset};
use afcfit::{full_report, ChoiceModel, DecisionSurface, Error, EvalReport, JudgementDataset, UniformiserMap};
use anyhow::{bail, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::manifest::{read_json, write_json};

pub const UNIFORMISER_FILE: &str = "uniformiser.json";
pub const SURFACE_FILE: &str = "surface.json";
pub const SURFACE_CSV: &str = "surface.csv";
pub const MODEL_FILE: &str = "model.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Density,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub sigma: f64,
    pub grid: usize,
    pub bins: usize,
    pub seed: u64,
    pub group_col: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpConfig>,
}

impl FitConfig {
    pub fn density(&self) -> DensityConfig {
        DensityConfig::new(self.sigma, self.grid)
    }

    pub fn validate(&self) -> afcfit::Result<()> {
        self.density().validate()?;
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be at least 2, got {}", self.bins)));
        }
        if let Some(mlp) = &self.mlp {
            mlp.validate()?;
        }
        Ok(())
    }

    fn raw_mlp_input(&self) -> bool {
        self.mlp.as_ref().is_some_and(|c| c.input == InputSpace::Raw)
    }
}

pub fn load(path: &Path, group_col: &str) -> Result<JudgementDataset> {
    let opts = LoadOptions {
        group_column: group_col.to_owned(),
        distance_name: None,
    };
    Ok(load_dataset_with(path, &opts)?)
}

/// Everything a fit produces.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub uniformiser: UniformiserMap,
    pub surface: DecisionSurface,
    pub model: Option<MlpModel>,
}

impl Artifacts {
    /// The function evaluated on (possibly uniformised) test distances.
    fn choice_model(&self) -> &dyn ChoiceModel {
        match &self.model {
            Some(model) => model,
            None => &self.surface,
        }
    }

    /// Fitted probability at uniformised coordinates `(u0, u1)`.
    pub fn prob_at(&self, u0: f64, u1: f64) -> Result<f64> {
        Ok(match &self.model {
            Some(m) if m.config.input == InputSpace::Raw => {
                m.predict(self.uniformiser.inverse(u0)?, self.uniformiser.inverse(u1)?)
            }
            Some(m) => m.predict(u0, u1),
            None => self.surface.lookup(u0, u1)?,
        })
    }

    pub fn fit_id(&self) -> Option<&str> {
        self.surface.fit_id.as_deref()
    }

    pub fn set_fit_id(&mut self, id: &str) {
        self.uniformiser.fit_id = Some(id.to_owned());
        self.surface.fit_id = Some(id.to_owned());
        if let Some(m) = &mut self.model {
            m.fit_id = Some(id.to_owned());
        }
    }

    pub fn save(&self, dir: &Path, outputs: &mut Vec<String>) -> Result<()> {
        write_json(dir, UNIFORMISER_FILE, &self.uniformiser, outputs)?;
        write_json(dir, SURFACE_FILE, &self.surface, outputs)?;
        let csv_path = dir.join(SURFACE_CSV);
        let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.surface.write_csv(std::io::BufWriter::new(file))?;
        outputs.push(SURFACE_CSV.to_owned());
        if let Some(model) = &self.model {
            write_json(dir, MODEL_FILE, model, outputs)?;
        }
        Ok(())
    }

    /// Loads a fit directory and checks that all parts come from the same fit.
    pub fn load(dir: &Path, method: Method) -> Result<Self> {
        let uniformiser: UniformiserMap = read_json(&dir.join(UNIFORMISER_FILE))?;
        uniformiser.validate()?;
        let surface: DecisionSurface = read_json(&dir.join(SURFACE_FILE))?;
        surface.validate()?;
        let model = match method {
            Method::Mlp => {
                let m: MlpModel = read_json(&dir.join(MODEL_FILE))?;
                m.validate()?;
                Some(m)
            }
            Method::Density => None,
        };
        let ids = [
            uniformiser.fit_id.as_deref(),
            surface.fit_id.as_deref(),
            model.as_ref().map_or(surface.fit_id.as_deref(), |m| m.fit_id.as_deref()),
        ];
        if ids.iter().any(|id| *id != ids[0]) {
            bail!(
                "fit artifacts in {} come from different fits: uniformiser {:?}, surface {:?}, model {:?}",
                dir.display(),
                ids[0],
                ids[1],
                ids[2]
            );
        }
        Ok(Self {
            uniformiser,
            surface,
            model,
        })
    }
}

pub fn fit(train: &JudgementDataset, cfg: &FitConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let uniformiser = fit_uniformiser(train, cfg.bins)?;
    let uniform = transform_dataset(&uniformiser, train);
    let (surface, model) = match (cfg.method, &cfg.mlp) {
        (Method::Density, _) => (fit_auto(&uniform, &cfg.density())?, None),
        (Method::Mlp, mlp_cfg) => {
            let mlp_cfg = mlp_cfg.clone().unwrap_or_default();
            let raw = mlp_cfg.input == InputSpace::Raw;
            let model = train_mlp(if raw { train } else { &uniform }, &mlp_cfg, cfg.seed)?;
            let surface = if raw {
                raw_mlp_surface(&model, &uniformiser, cfg.grid)?
            } else {
                mlp_surface(&model, cfg.grid)?
            };
            (surface, Some(model))
        }
    };
    Ok(Artifacts {
        uniformiser,
        surface,
        model,
    })
}

/// Surface of a raw-input network, tabulated at the raw distances that map to
/// the uniformised cell centers.
fn raw_mlp_surface(model: &MlpModel, uniformiser: &UniformiserMap, g: usize) -> Result<DecisionSurface> {
    let centers = (0..g)
        .map(|i| uniformiser.inverse(cell_center(i, g)))
        .collect::<afcfit::Result<Vec<_>>>()?;
    let values = (0..g * g)
        .map(|c| model.predict(centers[c / g], centers[c % g]))
        .collect();
    Ok(DecisionSurface::new(g, 0.0, SurfaceSource::Mlp, values, vec![false; g * g])?)
}

/// Runs the full report on `test`. The test distances are mapped with the
/// training uniformiser unless `refit` asks for a map fitted on `test` itself.
pub fn evaluate(
    artifacts: &Artifacts,
    cfg: &FitConfig,
    test: &JudgementDataset,
    seed: u64,
    refit: bool,
) -> Result<EvalReport> {
    let input = if cfg.method == Method::Mlp && cfg.raw_mlp_input() {
        test.clone()
    } else if refit {
        transform_dataset(&fit_uniformiser(test, cfg.bins)?, test)
    } else {
        transform_dataset(&artifacts.uniformiser, test)
    };
    Ok(full_report(&input, artifacts.choice_model(), seed))
}
