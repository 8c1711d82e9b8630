//! Small fully connected network mapping `(d0, d1)` to the choice probability,
//! trained by minimising the binomial negative log-likelihood of the observed
//! counts with Adam. Gradients are computed by hand.
//!
//! The training set is the data plus its mirror `(d1, d0, m - n)`, which makes
//! the fit approximately, but not exactly, symmetric.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{JudgementDataset, TripletRecord};
use crate::error::{Error, Result};
use crate::metrics::ln_binomial_coef;
use crate::rng;
use crate::surface::{cell_center, ChoiceModel, DecisionSurface, SurfaceSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative in terms of the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Which coordinates the network consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSpace {
    Uniformised,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub input: InputSpace,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            epochs: 5,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            input: InputSpace::Uniformised,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must have at least one unit".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

/// Gradient (or any other per-parameter quantity) shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(dims: &[usize]) -> Self {
        Self {
            weights: dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: dims[1..].iter().map(|&o| vec![0.0; o]).collect(),
        }
    }

    /// Flattened in [`MlpModel::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Layer `l` maps `dims[l]` inputs to `dims[l + 1]` outputs with a row-major
/// `dims[l + 1] x dims[l]` weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub config: MlpConfig,
    pub seed: u64,
    /// Mean NLL on the mirrored training set after each epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_id: Option<String>,
}

/// Per-sample forward pass cache.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    logit: f64,
}

impl MlpModel {
    /// Fan-in scaled uniform initialisation: weights and biases of a layer
    /// with `k` inputs are drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        let mut stream = rng::stream(rng::DOMAIN_MLP, seed, 0);
        let mut shape = Gradients::zeros(&dims);
        for (l, (w, b)) in shape.weights.iter_mut().zip(&mut shape.biases).enumerate() {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            for p in w.iter_mut().chain(b.iter_mut()) {
                *p = stream.random_range(-bound..bound);
            }
        }
        Ok(Self {
            dims,
            activation: config.activation,
            weights: shape.weights,
            biases: shape.biases,
            config: config.clone(),
            seed,
            loss_history: Vec::new(),
            fit_id: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.dims.len().saturating_sub(1);
        let ok = self.dims.len() >= 2
            && self.dims[0] == 2
            && self.dims[layers] == 1
            && self.weights.len() == layers
            && self.biases.len() == layers
            && (0..layers).all(|l| {
                self.weights[l].len() == self.dims[l] * self.dims[l + 1]
                    && self.biases[l].len() == self.dims[l + 1]
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Input("network shapes do not match dims".into()))
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    fn trace(&self, d0: f64, d1: f64) -> Trace {
        let layers = self.weights.len();
        let mut post = vec![vec![d0, d1]];
        let mut pre = Vec::with_capacity(layers);
        for l in 0..layers {
            let inputs = self.dims[l];
            let input = post.last().unwrap();
            let a: Vec<f64> = self.weights[l]
                .chunks_exact(inputs)
                .zip(&self.biases[l])
                .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if l + 1 < layers {
                post.push(a.iter().map(|&x| self.activation.apply(x)).collect());
            }
            pre.push(a);
        }
        let logit = pre[layers - 1][0];
        Trace { pre, post, logit }
    }

    pub fn logit(&self, d0: f64, d1: f64) -> f64 {
        self.trace(d0, d1).logit
    }

    pub fn predict(&self, d0: f64, d1: f64) -> f64 {
        sigmoid(self.logit(d0, d1))
    }

    /// Mean loss over `records`, including the constant log-binomial term.
    pub fn loss(&self, records: &[TripletRecord]) -> f64 {
        records
            .iter()
            .map(|r| sample_loss(self.logit(r.d0, r.d1), r.n, r.m))
            .sum::<f64>()
            / records.len() as f64
    }

    /// Mean loss over `records` and its gradient.
    pub fn loss_and_gradient(&self, records: &[TripletRecord]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros(&self.dims);
        let scale = 1.0 / records.len() as f64;
        let mut total = 0.0;
        for r in records {
            let tr = self.trace(r.d0, r.d1);
            total += sample_loss(tr.logit, r.n, r.m);
            // d loss / d logit = m p - n
            let mut delta = vec![(r.m as f64 * sigmoid(tr.logit) - r.n as f64) * scale];
            for l in (0..self.weights.len()).rev() {
                let inputs = self.dims[l];
                let input = &tr.post[l];
                for (o, &d) in delta.iter().enumerate() {
                    grads.biases[l][o] += d;
                    let row = &mut grads.weights[l][o * inputs..(o + 1) * inputs];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut next = vec![0.0; inputs];
                for (row, &d) in self.weights[l].chunks_exact(inputs).zip(&delta) {
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for ((n, &x), &y) in next.iter_mut().zip(&tr.pre[l - 1]).zip(&tr.post[l]) {
                    *n *= self.activation.derivative(x, y);
                }
                delta = next;
            }
        }
        (total * scale, grads)
    }

    /// Evaluates the network at the `g x g` cell centers of its input space.
    /// No symmetrisation is applied.
    pub fn surface(&self, g: usize) -> Result<DecisionSurface> {
        mlp_surface(self, g)
    }
}

impl ChoiceModel for MlpModel {
    fn prob(&self, d0: f64, d1: f64) -> f64 {
        self.predict(d0, d1)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binomial NLL of `n` out of `m` at logit `z`, in a numerically stable form.
fn sample_loss(z: f64, n: u32, m: u32) -> f64 {
    // -ln p = softplus(-z), -ln(1 - p) = softplus(z)
    n as f64 * softplus(-z) + (m - n) as f64 * softplus(z) - ln_binomial_coef(m, n)
}

/// Record plus its mirror, in that order, for every record.
pub fn mirrored_training_set(ds: &JudgementDataset) -> Vec<TripletRecord> {
    ds.records()
        .iter()
        .flat_map(|r| [r.clone(), r.mirrored()])
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        let cfg = model.config.clone();
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let flat = grads.flatten();
        for (((p, g), m), v) in model
            .params_mut()
            .zip(&flat)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Trains on the mirrored `2T` sample. Deterministic for a fixed seed.
pub fn train_mlp(ds: &JudgementDataset, config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    let mut model = MlpModel::init(config, seed)?;
    let samples = mirrored_training_set(ds);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam = Adam::new(model.parameter_count());
    let mut batch: Vec<TripletRecord> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(rng::DOMAIN_MLP, seed, epoch as u64 + 1));
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| samples[i].clone()));
            let (loss, grads) = model.loss_and_gradient(&batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam.update(&mut model, &grads);
        }
        let loss = model.loss(&samples);
        if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                batch: samples.len().div_ceil(config.batch_size),
                loss,
            });
        }
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Evaluates `model` at the `g x g` cell centers.
pub fn mlp_surface(model: &MlpModel, g: usize) -> Result<DecisionSurface> {
    if g < 2 {
        return Err(Error::Config(format!("grid must be at least 2, got {g}")));
    }
    let values = (0..g * g)
        .map(|c| model.predict(cell_center(c / g, g), cell_center(c % g, g)))
        .collect();
    DecisionSurface::new(g, 0.0, SurfaceSource::Mlp, values, vec![false; g * g])
}

/// Floor on the denominator of the relative gradient error, so that
/// parameters with vanishing gradients are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative difference between the analytic gradient and central
/// finite differences with step `1e-5`, over all parameters.
pub fn grad_check(model: &MlpModel, records: &[TripletRecord]) -> f64 {
    const STEP: f64 = 1e-5;
    let (_, grads) = model.loss_and_gradient(records);
    let analytic = grads.flatten();
    let base = model.params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        params[i] = base[i] + STEP;
        probe.set_params(&params).expect("same shape");
        let up = probe.loss(records);
        params[i] = base[i] - STEP;
        probe.set_params(&params).expect("same shape");
        let down = probe.loss(records);
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * STEP);
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, seed: u64) -> Vec<TripletRecord> {
        let mut s = rng::stream(99, seed, 0);
        (0..n)
            .map(|i| {
                let m = s.random_range(1..=5u32);
                let k = s.random_range(0..=m);
                TripletRecord::new(i.to_string(), s.random(), s.random(), k, m)
            })
            .collect()
    }

    #[test]
    fn default_architecture_size() {
        let model = MlpModel::init(&MlpConfig::default(), 0).unwrap();
        assert_eq!(model.dims, vec![2, 32, 32, 1]);
        assert_eq!(model.parameter_count(), 2 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert_eq!(model.parameter_count(), 1185);
    }

    #[test]
    fn loss_matches_metric_nll() {
        let model = MlpModel::init(&MlpConfig::default(), 3).unwrap();
        let rs = records(20, 1);
        let ds = JudgementDataset::new(rs.clone(), "t").unwrap();
        let direct = crate::metrics::nll(&ds, &model);
        assert!((model.loss(&rs) - direct).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let model = MlpModel::init(&MlpConfig::default(), seed).unwrap();
            let err = grad_check(&model, &records(64, seed + 100));
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn single_record_gradient() {
        let model = MlpModel::init(&MlpConfig::default(), 17).unwrap();
        assert!(grad_check(&model, &records(1, 5)) < 1e-4);
    }

    #[test]
    fn zero_model_gradient_on_symmetric_batch() {
        let mut model = MlpModel::init(&MlpConfig::default(), 1).unwrap();
        let zeros = vec![0.0; model.parameter_count()];
        model.set_params(&zeros).unwrap();
        let ds = JudgementDataset::new(records(16, 8), "t").unwrap();
        let batch = mirrored_training_set(&ds);
        let (loss, grads) = model.loss_and_gradient(&batch);
        assert!(loss.is_finite());
        assert!(grads.flatten().iter().all(|g| g.is_finite()));
        assert!(grad_check(&model, &batch) < 1e-4);
    }

    #[test]
    fn tanh_gradients() {
        let cfg = MlpConfig {
            activation: Activation::Tanh,
            ..MlpConfig::default()
        };
        let model = MlpModel::init(&cfg, 4).unwrap();
        assert!(grad_check(&model, &records(32, 4)) < 1e-4);
    }

    #[test]
    fn untrained_surface_is_valid() {
        let model = MlpModel::init(&MlpConfig::default(), 2).unwrap();
        let s = mlp_surface(&model, 10).unwrap();
        assert_eq!(s.source, SurfaceSource::Mlp);
        assert!(s.values.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constant_rate_is_recovered() {
        let rs: Vec<_> = (0..2000).map(|i| TripletRecord::new(i.to_string(), 0.3, 0.6, 1, 2)).collect();
        let ds = JudgementDataset::new(rs, "t").unwrap();
        let model = train_mlp(&ds, &MlpConfig::default(), 5).unwrap();
        let p = model.predict(0.3, 0.6);
        assert!((p - 0.5).abs() < 0.02, "{p}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = JudgementDataset::new(records(500, 3), "t").unwrap();
        let cfg = MlpConfig {
            epochs: 2,
            ..MlpConfig::default()
        };
        let a = train_mlp(&ds, &cfg, 42).unwrap();
        let b = train_mlp(&ds, &cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(&ds, &cfg, 43).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = JudgementDataset::new(records(300, 3), "t").unwrap();
        let cfg = MlpConfig {
            learning_rate: 1e300,
            ..MlpConfig::default()
        };
        match train_mlp(&ds, &cfg, 1) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let model = MlpModel::init(&MlpConfig::default(), 9).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: MlpModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["dims", "activation", "weights", "biases", "config", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn sample_loss_is_stable() {
        assert!(sample_loss(800.0, 2, 2).abs() < 1e-12);
        assert!(sample_loss(-800.0, 0, 2).abs() < 1e-12);
        assert!((sample_loss(800.0, 0, 1) - 800.0).abs() < 1e-9);
    }
}
