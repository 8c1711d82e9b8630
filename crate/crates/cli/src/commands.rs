use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use afcfit::data::save_dataset;
use afcfit::density::DEFAULT_SIGMA;
use afcfit::distances::{load_patch, triplet_distances, Metric};
use afcfit::metrics::EvalReport;
use afcfit::mlp::{InputSpace, MlpConfig};
use afcfit::surface::cell_center;
use afcfit::synthetic::{generate, DistanceSampler, MScheme, SyntheticSpec, Truth};
use afcfit::{par, Error, JudgementDataset, TripletRecord};
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::manifest::{create_dir, finish, fit_id, read_json, write_json, Manifest, MANIFEST_FILE};
use crate::pipeline::{self, Artifacts, FitConfig, Method};
use crate::report::eval_table;
use crate::{DistancesArgs, EvalArgs, ExportArgs, FitArgs, SamplerKind, SimulateArgs, SweepArgs, TruthKind};

pub const REPORT_FILE: &str = "report.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EXPORT_FILE: &str = "surface_export.csv";

/// Grid used for every point of a sigma sweep.
const SIGMA_SWEEP_GRID: usize = 100;

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn most_common_m(ds: &JudgementDataset) -> u32 {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in ds.records() {
        *counts.entry(r.m).or_default() += 1;
    }
    counts.into_iter().max_by_key(|&(m, c)| (c, std::cmp::Reverse(m))).map_or(0, |(m, _)| m)
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mlp = (a.method == Method::Mlp).then(|| {
        let mut c = MlpConfig::default();
        c.epochs = a.epochs.unwrap_or(c.epochs);
        c.batch_size = a.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = a.lr.unwrap_or(c.learning_rate);
        if a.raw_mlp_input {
            c.input = InputSpace::Raw;
        }
        c
    });
    if mlp.is_none() && (a.epochs.is_some() || a.batch_size.is_some() || a.lr.is_some() || a.raw_mlp_input) {
        return Err(Error::Config("MLP options require --method mlp".into()).into());
    }
    let cfg = FitConfig {
        method: a.method,
        sigma: a.sigma,
        grid: a.grid,
        bins: a.bins,
        seed: a.seed,
        group_col: a.group_col,
        mlp,
    };
    cfg.validate()?;
    let train = pipeline::load(&a.train, &cfg.group_col)?;

    let mut manifest = Manifest::new("fit", &cfg, cfg.seed)?;
    manifest.add_input("train", &a.train)?;
    let id = fit_id(&cfg, &[&manifest.inputs["train"].sha256])?;
    manifest.fit_id = Some(id.clone());

    let mut artifacts = pipeline::fit(&train, &cfg)?;
    artifacts.set_fit_id(&id);
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    artifacts.save(&a.out, &mut outputs)?;
    finish(&a.out, manifest, outputs)?;

    let s = &artifacts.surface;
    let cells = s.resolution * s.resolution;
    let defined = cells - s.undefined_count();
    let method = match cfg.method {
        Method::Density => "density",
        Method::Mlp => "mlp",
    };
    println!("fit {id} ({method})");
    println!("  records        {}", train.len());
    match train.fixed_m() {
        Some(m) => println!("  observers      M = {m}"),
        None => println!("  observers      variable, mode {} max {}", most_common_m(&train), train.max_m()),
    }
    println!("  surface        sigma = {}, G = {}", s.sigma, s.resolution);
    println!(
        "  coverage       {defined}/{cells} cells defined ({:.1}%), {} undefined",
        100.0 * defined as f64 / cells as f64,
        s.undefined_count()
    );
    println!("  symmetry error {:.3e}", s.symmetry_error());
    if let Some(model) = &artifacts.model {
        if let Some(loss) = model.loss_history.last() {
            println!("  mlp loss       {loss:.5} after {} epochs", model.loss_history.len());
        }
    }
    println!("  written to     {}", a.out.display());
    Ok(())
}

fn load_fit(dir: &Path) -> Result<(Manifest, FitConfig, Artifacts)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let cfg: FitConfig = manifest.config_as()?;
    let artifacts = Artifacts::load(dir, cfg.method)?;
    if artifacts.fit_id() != manifest.fit_id.as_deref() {
        bail!(
            "fit id mismatch in {}: manifest {:?}, artifacts {:?}",
            dir.display(),
            manifest.fit_id,
            artifacts.fit_id()
        );
    }
    Ok((manifest, cfg, artifacts))
}

#[derive(Serialize)]
struct EvalConfig<'a> {
    fit_dir: String,
    fit_id: Option<&'a str>,
    fit: &'a FitConfig,
    refit_uniformiser: bool,
    group_col: &'a str,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (fit_manifest, cfg, artifacts) = load_fit(&a.fit)?;
    let group_col = a.group_col.unwrap_or_else(|| cfg.group_col.clone());
    let test = pipeline::load(&a.test, &group_col)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let report = pipeline::evaluate(&artifacts, &cfg, &test, seed, a.refit_uniformiser)?;

    let eval_cfg = EvalConfig {
        fit_dir: a.fit.display().to_string(),
        fit_id: fit_manifest.fit_id.as_deref(),
        fit: &cfg,
        refit_uniformiser: a.refit_uniformiser,
        group_col: &group_col,
    };
    let mut manifest = Manifest::new("eval", &eval_cfg, seed)?;
    manifest.fit_id = fit_manifest.fit_id.clone();
    manifest.add_input("test", &a.test)?;
    manifest.add_input("fit_manifest", &a.fit.join(MANIFEST_FILE))?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    write_json(&a.out, REPORT_FILE, &report, &mut outputs)?;
    finish(&a.out, manifest, outputs)?;

    print!("{}", eval_table(&report));
    Ok(())
}

fn parse_m_weights(text: &str) -> Result<Vec<(u32, f64)>> {
    text.split(',')
        .map(|part| {
            let (m, w) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected m:weight, got `{part}`")))?;
            let m = m.trim().parse().map_err(|e| Error::Config(format!("bad m `{m}`: {e}")))?;
            let w = w.trim().parse().map_err(|e| Error::Config(format!("bad weight `{w}`: {e}")))?;
            Ok((m, w))
        })
        .collect()
}

#[derive(Serialize)]
struct TruthDescriptor<'a> {
    truth: &'a Truth,
    symmetric: bool,
    spec: &'a SyntheticSpec,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let truth = match a.truth {
        TruthKind::Logistic => Truth::Logistic { k: a.k },
        TruthKind::Constant => Truth::Constant { c: a.c },
        TruthKind::Step => Truth::Step { width: a.width },
    };
    let m_scheme = match &a.m_weights {
        Some(text) => MScheme::Weighted(parse_m_weights(text)?),
        None => MScheme::Fixed(a.m),
    };
    let sampler = match a.sampler {
        SamplerKind::Uniform => DistanceSampler::Uniform,
        SamplerKind::Lognormal => DistanceSampler::LogNormal {
            mu: a.mu,
            sigma: a.log_sigma,
        },
    };
    let spec = SyntheticSpec {
        truth,
        t_count: a.t_count,
        m_scheme,
        sampler,
        seed: a.seed,
    };
    let (ds, truth) = generate(&spec)?;

    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    save_dataset(&ds, a.out.join(DATASET_FILE))?;
    outputs.push(DATASET_FILE.to_owned());
    let descriptor = TruthDescriptor {
        truth: &truth,
        symmetric: truth.is_symmetric(),
        spec: &spec,
    };
    write_json(&a.out, TRUTH_FILE, &descriptor, &mut outputs)?;
    finish(&a.out, Manifest::new("simulate", &spec, spec.seed)?, outputs)?;
    println!("wrote {} records to {}", ds.len(), a.out.join(DATASET_FILE).display());
    Ok(())
}

struct TripletRow {
    id: String,
    paths: [PathBuf; 3],
    n: u32,
    m: u32,
    group: Option<String>,
}

fn read_triplet_manifest(path: &Path) -> Result<Vec<TripletRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().context("reading triplet manifest header")?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(["id", "ref", "x0", "x1", "n", "m"]) {
        *slot = col(name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column `{name}`"),
        })?;
    }
    let group = col("group");
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            message: e.to_string(),
        })?;
        let parse = |c: usize, name: &str| -> Result<u32> {
            rec[c].parse().map_err(|e| {
                Error::Parse {
                    row: line,
                    message: format!("bad {name} `{}`: {e}", &rec[c]),
                }
                .into()
            })
        };
        rows.push(TripletRow {
            id: rec[idx[0]].to_owned(),
            paths: [1, 2, 3].map(|k| base.join(&rec[idx[k]])),
            n: parse(idx[4], "n")?,
            m: parse(idx[5], "m")?,
            group: group.map(|g| rec[g].to_owned()).filter(|g| !g.is_empty()),
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct DistancesConfig {
    metric: Metric,
    description: &'static str,
}

pub fn distances(a: DistancesArgs) -> Result<()> {
    let metric: Metric = a.metric.into();
    let rows = read_triplet_manifest(&a.manifest)?;
    let records = par::map_indexed(&rows, |_, row| -> Result<TripletRecord> {
        let [r, x0, x1] = [0, 1, 2].map(|k| load_patch(&row.paths[k]));
        let (d0, d1) = triplet_distances(&r?, &x0?, &x1?, metric)
            .with_context(|| format!("triplet `{}`", row.id))?;
        let rec = TripletRecord::new(row.id.clone(), d0, d1, row.n, row.m);
        Ok(match &row.group {
            Some(g) => rec.with_group(g.clone()),
            None => rec,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ds = JudgementDataset::new(records, metric.name())?;

    let cfg = DistancesConfig {
        metric,
        description: metric.description(),
    };
    let mut manifest = Manifest::new("distances", &cfg, 0)?;
    manifest.add_input("triplets", &a.manifest)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    save_dataset(&ds, a.out.join(DATASET_FILE))?;
    outputs.push(DATASET_FILE.to_owned());
    finish(&a.out, manifest, outputs)?;
    println!("wrote {} {} distances to {}", ds.len(), metric.name(), a.out.join(DATASET_FILE).display());
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum SweepParam {
    Sigma,
    Grid,
}

#[derive(Serialize)]
struct SweepConfig<'a> {
    sigmas: &'a [f64],
    grids: &'a [usize],
    sigma_sweep_grid: usize,
    grid_sweep_sigma: f64,
    bins: usize,
    seed: u64,
    group_col: &'a str,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    if a.sigmas.is_empty() && a.grids.is_empty() {
        return Err(Error::Config("give at least one of --sigmas or --grids".into()).into());
    }
    let train = pipeline::load(&a.train, &a.group_col)?;
    let test = pipeline::load(&a.test, &a.group_col)?;
    let base = FitConfig {
        method: Method::Density,
        sigma: DEFAULT_SIGMA,
        grid: SIGMA_SWEEP_GRID,
        bins: a.bins,
        seed: a.seed,
        group_col: a.group_col.clone(),
        mlp: None,
    };
    let points: Vec<(SweepParam, f64, FitConfig)> = a
        .sigmas
        .iter()
        .map(|&s| (SweepParam::Sigma, s, FitConfig { sigma: s, ..base.clone() }))
        .chain(a.grids.iter().map(|&g| {
            (SweepParam::Grid, g as f64, FitConfig { grid: g, sigma: DEFAULT_SIGMA, ..base.clone() })
        }))
        .collect();
    let results = par::map_indexed(&points, |_, (_, _, cfg)| -> Result<EvalReport> {
        let artifacts = pipeline::fit(&train, cfg)?;
        pipeline::evaluate(&artifacts, cfg, &test, cfg.seed, false)
    });

    create_dir(&a.out)?;
    let path = a.out.join(SWEEP_FILE);
    let mut w = create_file(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "param,value,nll,aj").map_err(io)?;
    let mut failures = 0;
    for ((param, value, _), result) in points.iter().zip(results) {
        let name = match param {
            SweepParam::Sigma => "sigma",
            SweepParam::Grid => "grid",
        };
        let (nll, aj) = match result {
            Ok(r) => (r.nll, r.aj),
            Err(e) => {
                eprintln!("warning: {name} = {value} failed: {e:#}");
                failures += 1;
                (f64::NAN, f64::NAN)
            }
        };
        writeln!(w, "{name},{value},{nll},{aj}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let cfg = SweepConfig {
        sigmas: &a.sigmas,
        grids: &a.grids,
        sigma_sweep_grid: SIGMA_SWEEP_GRID,
        grid_sweep_sigma: DEFAULT_SIGMA,
        bins: a.bins,
        seed: a.seed,
        group_col: &a.group_col,
    };
    let mut manifest = Manifest::new("sweep", &cfg, a.seed)?;
    manifest.add_input("train", &a.train)?;
    manifest.add_input("test", &a.test)?;
    finish(&a.out, manifest, vec![SWEEP_FILE.to_owned()])?;
    println!(
        "swept {} points ({failures} failed), wrote {}",
        points.len(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ExportConfig {
    fit_dir: String,
    grid: usize,
}

pub fn export_surface(a: ExportArgs) -> Result<()> {
    let (fit_manifest, _, artifacts) = load_fit(&a.fit)?;
    let source = &artifacts.surface;
    let g = a.grid.unwrap_or(source.resolution);
    if g < 2 {
        return Err(Error::Config(format!("grid must be at least 2, got {g}")).into());
    }
    create_dir(&a.out)?;
    let path = a.out.join(EXPORT_FILE);
    let mut w = create_file(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "i,k,d0_center,d1_center,d0_raw,d1_raw,p_hat,defined").map_err(io)?;
    let raw: Vec<f64> = (0..g)
        .map(|i| artifacts.uniformiser.inverse(cell_center(i, g)))
        .collect::<afcfit::Result<_>>()?;
    let nearest = |u: f64| ((u * source.resolution as f64) as usize).min(source.resolution - 1);
    for i in 0..g {
        for k in 0..g {
            let (u0, u1) = (cell_center(i, g), cell_center(k, g));
            let p = if g == source.resolution {
                source.value(i, k)
            } else {
                artifacts.prob_at(u0, u1)?
            };
            let defined = source.is_defined(nearest(u0), nearest(u1));
            writeln!(w, "{i},{k},{u0},{u1},{},{},{p},{}", raw[i], raw[k], u8::from(defined)).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let cfg = ExportConfig {
        fit_dir: a.fit.display().to_string(),
        grid: g,
    };
    let mut manifest = Manifest::new("export-surface", &cfg, fit_manifest.seed)?;
    manifest.fit_id = fit_manifest.fit_id;
    manifest.add_input("fit_manifest", &a.fit.join(MANIFEST_FILE))?;
    finish(&a.out, manifest, vec![EXPORT_FILE.to_owned()])?;
    println!("wrote {g}x{g} surface to {}", path.display());
    Ok(())
}
