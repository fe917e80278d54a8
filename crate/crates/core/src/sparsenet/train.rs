//! Optimizer, learning-rate schedule and the training loop.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;

use super::model::{self, LossParts, LossWeights, Mode, TrainItem};
use super::params::{enc_base, dec_base, is_running_stat, ModelParams, ModelSpec, LEVELS};
use super::{predict, Prediction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, RmseAccumulator};
use crate::seeding;
use crate::voxgrid::Voxel;

/// 1cycle: cosine warm-up from `peak / div` to `peak`, then cosine decay to
/// `peak / div / final_div`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total: u64,
    pub warmup: f64,
    pub div: f64,
    pub final_div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total: u64) -> Self {
        Self {
            peak,
            total,
            warmup: 0.1,
            div: 25.0,
            final_div: 1e4,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        ((self.warmup * self.total as f64).round() as u64).max(1)
    }

    pub fn lr(&self, step: u64) -> f64 {
        let init = self.peak / self.div;
        let last = init / self.final_div;
        let up = self.warmup_steps();
        let cos = |a: f64, b: f64, t: f64| b + (a - b) * 0.5 * (1.0 + (std::f64::consts::PI * t.clamp(0.0, 1.0)).cos());
        if step <= up {
            cos(init, self.peak, step as f64 / up as f64)
        } else {
            let down = self.total.saturating_sub(up).max(1);
            cos(self.peak, last, (step - up) as f64 / down as f64)
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(p: &ModelParams<f32>, weight_decay: f64) -> Self {
        let z: Vec<Vec<f64>> = p.params.iter().map(|q| vec![0.0; q.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: z.clone(),
            v: z,
        }
    }

    pub fn step(&mut self, p: &mut ModelParams<f32>, grads: &[Vec<f32>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, q) in p.params.iter_mut().enumerate() {
            if is_running_stat(i) {
                continue;
            }
            for (j, x) in q.data.iter_mut().enumerate() {
                let g = grads[i][j] as f64;
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mut w = *x as f64;
                w -= lr * self.weight_decay * w;
                w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *x = w as f32;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    pub bn_momentum: f64,
    /// Validation period in steps; 0 evaluates only after the last step.
    pub val_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            loss: LossWeights::default(),
            bn_momentum: 0.1,
            val_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::usage("batch must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.weight_decay < 0.0 {
            return Err(Error::usage("bn_momentum must be in [0,1] and weight_decay >= 0"));
        }
        let w = &self.loss;
        if !(w.bce >= 0.0 && w.mse >= 0.0 && 0.0 < w.pos_weight_min && w.pos_weight_min <= w.pos_weight_max) {
            return Err(Error::usage("invalid loss weights"));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: LossParts,
    pub val_rmse: Option<Option<f64>>,
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} lr={:.6e} loss={:.6} mse={:.6}", self.step, self.lr, self.loss.total, self.loss.mse)?;
        for (d, b) in self.loss.bce.iter().enumerate() {
            write!(f, " bce{d}={b:.6}")?;
        }
        match self.val_rmse {
            Some(Some(r)) => write!(f, " val_rmse={r:.6}"),
            Some(None) => write!(f, " val_rmse=undefined"),
            None => Ok(()),
        }
    }
}

pub fn prediction_map(p: &Prediction) -> BTreeMap<Voxel, Vec<f32>> {
    p.coords
        .iter()
        .zip(p.scores.chunks_exact(p.channels.max(1)))
        .map(|(c, s)| (Voxel::new(c[0], c[1], c[2]), s.to_vec()))
        .collect()
}

/// Inference-mode error of `params` over every window of `ds`.
pub fn evaluate(params: &ModelParams<f32>, ds: &Dataset) -> EvalReport {
    let mut acc = RmseAccumulator::new(params.spec.out);
    for w in &ds.windows {
        let pred = predict(params, &w.input.iter().map(|v| v.as_array()).collect::<Vec<_>>());
        acc.add(&prediction_map(&pred), &w.labels);
    }
    acc.report()
}

fn layer_norms(p: &ModelParams<f32>, grads: &[Vec<f32>]) -> String {
    let norm = |x: &[f32]| x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    p.params
        .iter()
        .zip(grads)
        .map(|(q, g)| format!("{}:{:.3e}/{:.3e}", q.name, norm(&q.data), norm(g)))
        .collect::<Vec<_>>()
        .join(",")
}

fn update_running(p: &mut ModelParams<f32>, base: usize, mean: &[f32], var: &[f32], momentum: f32) {
    if mean.is_empty() {
        return;
    }
    for (r, &m) in p.params[base + 3].data.iter_mut().zip(mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, &v) in p.params[base + 4].data.iter_mut().zip(var) {
        *r = (1.0 - momentum) * *r + momentum * v;
    }
}

/// Indices of the batch drawn at `step`.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = seeding::rng(seeding::mix(seed, step), 8);
    let mut idx = if batch <= n {
        index::sample(&mut rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.gen_range(0..n)).collect()
    };
    idx.sort_unstable();
    idx
}

/// Output of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<MetricRecord>,
}

/// Trains from a seeded initialization. `on_record` sees every log line as it
/// is produced.
pub fn train(
    spec: ModelSpec,
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    mut on_record: impl FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if train_set.windows.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    if train_set.head.channels() != spec.out || val_set.is_some_and(|v| v.head.channels() != spec.out) {
        return Err(Error::usage("dataset head does not match the model output channels"));
    }
    let items: Vec<TrainItem> = train_set.windows.iter().map(|w| TrainItem::new(&spec, w)).collect();
    let mut params = ModelParams::<f32>::init(spec, cfg.seed)?;
    let mut opt = AdamW::new(&params, cfg.weight_decay);
    let sched = OneCycle::new(cfg.lr, cfg.steps);
    let mut log = Vec::new();
    let momentum = cfg.bn_momentum as f32;

    for step in 0..cfg.steps {
        let lr = sched.lr(step);
        let batch: Vec<&TrainItem> = batch_indices(cfg.seed, step, items.len(), cfg.batch).into_iter().map(|i| &items[i]).collect();
        let mut plans: Vec<_> = batch.iter().map(|it| Cow::Borrowed(&it.plan)).collect();
        let tape = model::forward(&params, &mut plans, Mode::Train);
        let (loss, grads) = model::loss_and_backward(&params, &batch, &tape, &cfg.loss);
        if !loss.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step}: loss={} norms={}",
                loss.total,
                layer_norms(&params, &grads)
            )));
        }
        opt.step(&mut params, &grads, lr);
        for e in 0..LEVELS {
            let bn = &tape.enc[e].bn;
            update_running(&mut params, enc_base(e), &bn.mean, &bn.var, momentum);
        }
        for d in 0..LEVELS {
            let bn = &tape.dec[d].block.bn;
            update_running(&mut params, dec_base(d), &bn.mean, &bn.var, momentum);
        }
        let last = step + 1 == cfg.steps;
        let val_rmse = match val_set {
            Some(v) if last || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) => Some(evaluate(&params, v).rmse),
            _ => None,
        };
        let rec = MetricRecord {
            step,
            lr,
            loss,
            val_rmse,
        };
        on_record(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome { params, log })
}
