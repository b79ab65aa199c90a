//! Chaos training of the single-step rule.
//!
//! Each optimisation step draws a fresh batch of random intermediate states
//! `(G^k, G^(k+1))` from the exact rule and regresses `G^k + f(G^k)` onto
//! `G^(k+1)` with a squared-error loss. Gradients are derived by hand for
//! the two-layer network; the projection is not part of the loss.
//!
//! Work inside a step is split into fixed-size chunks whose partial
//! gradients are summed in chunk order, so results do not depend on the
//! number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::AnyModel;
use crate::model::{nca_step, MlpModel, ModelKind, NcaModel, RuleNet};
use crate::rng;
use crate::rule::{sample_chaos_state, ChaosSample};

const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_PROBE: u64 = 2;

/// Samples per parallel work unit.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Operand widths are drawn uniformly from `n_min..=n_max`.
    pub n_min: usize,
    pub n_max: usize,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Nca,
            hidden: 16,
            total_steps: 30_000,
            batch_size: 256,
            lr0: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            n_min: 2,
            n_max: 6,
            eval_every: 500,
            eval_samples: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the pointwise control: same protocol, 32 hidden units.
    pub fn mlp() -> Self {
        TrainConfig {
            kind: ModelKind::Mlp,
            hidden: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("n range must be non-empty and start at 1 or more");
        }
        if self.eval_every == 0 || self.eval_samples == 0 {
            return bad("eval_every and eval_samples must be at least 1");
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad("lr0 must be finite and non-negative");
        }
        Ok(())
    }

    /// Cosine-annealed learning rate for 1-based `step`; zero at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.total_steps as f64;
        0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam moments and progress for one model.
#[derive(Clone, Debug)]
pub struct TrainState<M: RuleNet> {
    pub model: M,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub single_step_acc: Option<f64>,
    pub loss_history: Vec<f64>,
}

impl<M: RuleNet> TrainState<M> {
    pub fn new(model: M) -> Self {
        let p = model.param_count();
        TrainState {
            model,
            m: vec![0.0; p],
            v: vec![0.0; p],
            step: 0,
            single_step_acc: None,
            loss_history: Vec::new(),
        }
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: usize,
    pub lr: f64,
    /// Mean batch loss since the previous row.
    pub loss: f64,
    pub single_step_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub points: Vec<MetricPoint>,
    pub loss_history: Vec<f64>,
    /// First evaluation step at which every probe sample was exact.
    pub first_perfect_step: Option<usize>,
    pub final_single_step_acc: f64,
}

impl TrainMetrics {
    /// CSV with columns `step,lr,loss,single_step_acc`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(p)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidConfig(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Forward and backward for one sample. Adds `scale · ∂(Σ err²)/∂θ` into
/// `grads` and returns the sample's mean squared error.
pub fn sample_loss_and_gradients<M: RuleNet>(
    model: &M,
    sample: &ChaosSample,
    scale: f64,
    grads: &mut [f64],
) -> f64 {
    let x = crate::grid::parity_encode(&sample.state);
    let k = model.kernel_size();
    let off = 1 - k / 2;
    let (rows, cols) = sample.state.shape();
    let mut patch = vec![0.0; 2 * k * k];
    let mut hidden = vec![0.0; model.hidden()];
    let mut sse = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let mut idx = 0;
            for c in 0..2 {
                for dy in 0..k {
                    for dx in 0..k {
                        patch[idx] = x.at(c, i + off + dy, j + off + dx);
                        idx += 1;
                    }
                }
            }
            let out = model.cell_output(&patch, &mut hidden);
            let err = f64::from(sample.state.get(i, j)) + out - f64::from(sample.next.get(i, j));
            sse += err * err;
            model.cell_backward(&patch, &hidden, 2.0 * err * scale, grads);
        }
    }
    sse / (rows * cols) as f64
}

/// Batch loss and its exact gradient.
///
/// Loss is the squared error averaged over the cells of each sample, then
/// averaged over samples, so grids of different sizes weigh the same.
pub fn loss_and_gradients<M: RuleNet>(model: &M, batch: &[ChaosSample]) -> (f64, Vec<f64>) {
    let p = model.param_count();
    if batch.is_empty() {
        return (0.0, vec![0.0; p]);
    }
    let b = batch.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = vec![0.0; p];
            let mut loss = 0.0;
            for s in chunk {
                let cells = (s.state.rows() * s.state.cols()) as f64;
                loss += sample_loss_and_gradients(model, s, 1.0 / (cells * b), &mut grads);
            }
            (loss, grads)
        })
        .collect();
    let mut grads = vec![0.0; p];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        for (acc, x) in grads.iter_mut().zip(g) {
            *acc += x;
        }
    }
    (loss / b, grads)
}

/// Bias-corrected Adam with the cosine schedule. `state.step` is advanced
/// first, so the update uses the 1-based step index.
pub fn adam_update<M: RuleNet>(state: &mut TrainState<M>, grads: &[f64], config: &TrainConfig) -> Result<()> {
    let step = state.step + 1;
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step, index });
    }
    let lr = config.lr_at(step);
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let params = state.model.params_mut();
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    state.step = step;
    Ok(())
}

fn draw_sample(config: &TrainConfig, stream: u64, step: usize, index: usize) -> ChaosSample {
    let mut rng = rng::stream(config.seed, &[stream, step as u64, index as u64]);
    let n = rng.random_range(config.n_min..=config.n_max);
    sample_chaos_state(n, &mut rng).expect("n >= 1")
}

/// The training batch for 1-based `step`.
pub fn training_batch(config: &TrainConfig, step: usize) -> Vec<ChaosSample> {
    (0..config.batch_size)
        .into_par_iter()
        .map(|i| draw_sample(config, STREAM_BATCH, step, i))
        .collect()
}

/// Fresh probe samples for the single-step accuracy check at `step`.
pub fn probe_batch(config: &TrainConfig, step: usize) -> Vec<ChaosSample> {
    (0..config.eval_samples)
        .into_par_iter()
        .map(|i| draw_sample(config, STREAM_PROBE, step, i))
        .collect()
}

/// Fraction of samples whose projected prediction equals `G^(k+1)` on
/// every cell.
pub fn single_step_accuracy<M: RuleNet>(model: &M, samples: &[ChaosSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .par_iter()
        .filter(|s| nca_step(model, &s.state).map(|g| g == s.next).unwrap_or(false))
        .count();
    hits as f64 / samples.len() as f64
}

pub fn init_model<M: InitModel>(config: &TrainConfig) -> M {
    M::init_from(config.hidden, &mut rng::stream(config.seed, &[STREAM_INIT]))
}

/// Models that can be freshly initialised for training.
pub trait InitModel: RuleNet {
    fn init_from(hidden: usize, rng: &mut rng::SeededRng) -> Self;
}

impl InitModel for NcaModel {
    fn init_from(hidden: usize, rng: &mut rng::SeededRng) -> Self {
        NcaModel::init(hidden, rng)
    }
}

impl InitModel for MlpModel {
    fn init_from(hidden: usize, rng: &mut rng::SeededRng) -> Self {
        MlpModel::init(hidden, rng)
    }
}

/// Train `model` under `config`, calling `on_eval` after every probe.
pub fn train_with<M: RuleNet, F: FnMut(&MetricPoint)>(
    model: M,
    config: &TrainConfig,
    mut on_eval: F,
) -> Result<(M, TrainMetrics)> {
    config.validate()?;
    let mut state = TrainState::new(model);
    let mut metrics = TrainMetrics::default();
    let mut interval_loss = 0.0;
    let mut interval_len = 0usize;
    while state.step < config.total_steps {
        let step = state.step + 1;
        let batch = training_batch(config, step);
        let (loss, grads) = loss_and_gradients(&state.model, &batch);
        adam_update(&mut state, &grads, config)?;
        state.loss_history.push(loss);
        interval_loss += loss;
        interval_len += 1;

        if step.is_multiple_of(config.eval_every) || step == config.total_steps {
            let acc = single_step_accuracy(&state.model, &probe_batch(config, step));
            state.single_step_acc = Some(acc);
            if acc == 1.0 && metrics.first_perfect_step.is_none() {
                metrics.first_perfect_step = Some(step);
            }
            let point = MetricPoint {
                step,
                lr: config.lr_at(step),
                loss: interval_loss / interval_len as f64,
                single_step_acc: acc,
            };
            on_eval(&point);
            metrics.points.push(point);
            interval_loss = 0.0;
            interval_len = 0;
        }
    }
    metrics.loss_history = std::mem::take(&mut state.loss_history);
    metrics.final_single_step_acc = state.single_step_acc.unwrap_or(0.0);
    Ok((state.model, metrics))
}

/// Initialise and train a model of the kind named in `config`.
pub fn train(config: &TrainConfig) -> Result<(AnyModel, TrainMetrics)> {
    train_reporting(config, |_| {})
}

pub fn train_reporting<F: FnMut(&MetricPoint)>(config: &TrainConfig, on_eval: F) -> Result<(AnyModel, TrainMetrics)> {
    config.validate()?;
    Ok(match config.kind {
        ModelKind::Nca => {
            let (m, metrics) = train_with(init_model::<NcaModel>(config), config, on_eval)?;
            (AnyModel::Nca(m), metrics)
        }
        ModelKind::Mlp => {
            let (m, metrics) = train_with(init_model::<MlpModel>(config), config, on_eval)?;
            (AnyModel::Mlp(m), metrics)
        }
    })
}
