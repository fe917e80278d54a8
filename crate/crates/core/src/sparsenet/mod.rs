//! Sparse 3D encoder-decoder with generative upsampling and learned pruning,
//! its gradients, optimizer and checkpoints.

mod kmap;
mod layers;
mod model;
mod params;
mod real;
mod train;

use std::borrow::Cow;
use std::io::Write;
use std::path::Path;

pub use kmap::{Coord, KernelMap, KVOL};
pub use layers::{generative_transposed_conv, prune, sparse_conv, MaskSource};
pub use model::{dec_stride, level_target, pos_weight, ItemPlan, LossParts, LossWeights, TrainItem, WINDOW_BOUNDS};
pub use params::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, ModelParams, ModelSpec, Param, SkipVariant, LEVELS,
};
pub use real::Real;
pub use train::{batch_indices, evaluate, prediction_map, train, AdamW, MetricRecord, OneCycle, TrainConfig, TrainOutcome};

use crate::binio::{Reader, Writer};
use crate::dataset::{Window, WindowFrame, WINDOW_DIMS};
use crate::voxgrid::GridMeta;
use crate::error::{Error, Result};

/// Pruning logits of one decoder level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLogits {
    pub stride: i32,
    pub coords: Vec<Coord>,
    pub logits: Vec<f32>,
}

/// Network output: final coordinates with `channels` scores each, and the
/// pruning logits of every decoder level.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub channels: usize,
    pub coords: Vec<Coord>,
    pub scores: Vec<f32>,
    pub levels: Vec<LevelLogits>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn score(&self, row: usize) -> &[f32] {
        &self.scores[row * self.channels..(row + 1) * self.channels]
    }
}

fn collect_prediction<T: Real>(spec: &ModelSpec, plan: &ItemPlan, tape: &model::Tape<T>) -> Prediction {
    let levels = (0..LEVELS)
        .map(|d| LevelLogits {
            stride: dec_stride(d),
            coords: plan.dec[d].coords.clone(),
            logits: tape.dec[d].logits.iter().map(|x| x.f64() as f32).collect(),
        })
        .collect();
    Prediction {
        channels: spec.out,
        coords: plan.final_coords().to_vec(),
        scores: tape.scores.iter().map(|x| x.f64() as f32).collect(),
        levels,
    }
}

/// Inference: running batch-norm statistics and predicted pruning masks.
/// Input coordinates outside the window are rejected by being ignored.
pub fn predict<T: Real>(params: &ModelParams<T>, input: &[Coord]) -> Prediction {
    let mut coords: Vec<Coord> = input
        .iter()
        .copied()
        .filter(|c| (0..3).all(|a| (0..WINDOW_BOUNDS[a]).contains(&c[a])))
        .collect();
    coords.sort_unstable();
    coords.dedup();
    let mut plans = vec![Cow::Owned(ItemPlan::encoder_only(coords))];
    let tape = model::forward(params, &mut plans, model::Mode::Infer);
    collect_prediction(&params.spec, &plans[0], &tape)
}

/// Runs one window. Training mode uses batch statistics and teacher-forced
/// masks from the window labels; otherwise this is [`predict`].
pub fn forward<T: Real>(params: &ModelParams<T>, window: &Window, training: bool) -> Prediction {
    if !training {
        return predict(params, &window.input.iter().map(|v| v.as_array()).collect::<Vec<_>>());
    }
    let item = TrainItem::new(&params.spec, window);
    let mut plans = vec![Cow::Owned(item.plan)];
    let tape = model::forward(params, &mut plans, model::Mode::Train);
    collect_prediction(&params.spec, &plans[0], &tape)
}

/// Loss and gradients of a teacher-forced batch.
pub fn loss_and_grads<T: Real>(params: &ModelParams<T>, batch: &[&TrainItem], weights: &LossWeights) -> (LossParts, Vec<Vec<T>>) {
    let mut plans: Vec<_> = batch.iter().map(|it| Cow::Borrowed(&it.plan)).collect();
    let tape = model::forward(params, &mut plans, model::Mode::Train);
    model::loss_and_backward(params, batch, &tape, weights)
}

const PRED_MAGIC: &[u8; 4] = b"VTPR";
const PRED_VERSION: u32 = 1;

/// Sparse prediction file: magic, version, window frame (f64 origin xyz,
/// resolution, center xyz, yaw), u8 channels, u32 count, then per voxel
/// three i32 window coordinates and `channels` f32 scores.
pub fn encode_prediction(p: &Prediction, frame: &WindowFrame) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(PRED_MAGIC);
    w.u32(PRED_VERSION);
    for &x in frame.meta.origin.iter().chain([frame.meta.resolution].iter()).chain(&frame.center).chain([frame.yaw].iter()) {
        w.f64(x);
    }
    w.u8(p.channels as u8);
    w.u32(p.coords.len() as u32);
    for (r, c) in p.coords.iter().enumerate() {
        for &x in c {
            w.u32(x as u32);
        }
        for &s in p.score(r) {
            w.f32(s);
        }
    }
    w.into_inner()
}

/// Decodes the frame, coordinates and scores; per-level logits are not
/// stored.
pub fn decode_prediction(data: &[u8]) -> Result<(WindowFrame, Prediction)> {
    let mut r = Reader::new(data);
    r.header(PRED_MAGIC, PRED_VERSION)?;
    let mut v = [0.0; 8];
    for x in &mut v {
        let at = r.offset();
        *x = r.f64()?;
        if !x.is_finite() {
            return Err(Error::format(at, "non-finite frame value"));
        }
    }
    let meta = GridMeta::new(WINDOW_DIMS, [v[0], v[1], v[2]], v[3]).map_err(|e| Error::format(8, e.to_string()))?;
    let frame = WindowFrame {
        meta,
        center: [v[4], v[5], v[6]],
        yaw: v[7],
    };
    let at = r.offset();
    let channels = r.u8()? as usize;
    if channels == 0 {
        return Err(Error::format(at, "zero channels"));
    }
    let n = r.u32()? as usize;
    r.check_count(n as u64, 12 + 4 * channels)?;
    let mut coords = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * channels);
    for _ in 0..n {
        let at = r.offset();
        let c = [r.u32()? as i32, r.u32()? as i32, r.u32()? as i32];
        if coords.last().is_some_and(|&l: &Coord| l >= c) {
            return Err(Error::format(at, "coordinates not strictly increasing"));
        }
        if !(0..3).all(|a| (0..WINDOW_BOUNDS[a]).contains(&c[a])) {
            return Err(Error::format(at, format!("coordinate {c:?} outside the window")));
        }
        coords.push(c);
        for _ in 0..channels {
            let at = r.offset();
            let s = r.f32()?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::format(at, format!("score {s} outside [0,1]")));
            }
            scores.push(s);
        }
    }
    r.finish()?;
    let p = Prediction {
        channels,
        coords,
        scores,
        levels: Vec::new(),
    };
    Ok((frame, p))
}

pub fn write_prediction(path: &Path, p: &Prediction, frame: &WindowFrame) -> Result<()> {
    crate::binio::write_file(path, &encode_prediction(p, frame))
}

pub fn read_prediction(path: &Path) -> Result<(WindowFrame, Prediction)> {
    decode_prediction(&crate::binio::read_file(path)?)
}

/// Writes the metrics log as one `key=value` line per record.
pub fn write_metrics(out: &mut impl Write, log: &[MetricRecord]) -> std::io::Result<()> {
    for r in log {
        writeln!(out, "{r}")?;
    }
    Ok(())
}
