//! Forward and reverse passes of the encoder-decoder over a batch of
//! windows, with per-item coordinate plans.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kmap::{self, Coord, KernelMap};
use super::layers::{self, BnCache, MapRef};
use super::params::{dec_base, enc_base, ModelParams, ModelSpec, HEAD, LEVELS};
use super::real::Real;
use crate::dataset::{Label, Window, WINDOW_DIMS};

pub const WINDOW_BOUNDS: [i32; 3] = [WINDOW_DIMS[0] as i32, WINDOW_DIMS[1] as i32, WINDOW_DIMS[2] as i32];

/// Output stride of decoder level `d`.
pub fn dec_stride(d: usize) -> i32 {
    1 << (LEVELS - 1 - d)
}

/// Coordinates of decoder level `d` that cover the label support.
pub fn level_target(labels: &[Coord], d: usize) -> Vec<Coord> {
    let s = dec_stride(d);
    let mut t: Vec<Coord> = labels.iter().map(|c| c.map(|x| x.div_euclid(s) * s)).collect();
    t.sort_unstable();
    t.dedup();
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecPlan {
    /// Children generated by the transposed convolution.
    pub gen: Vec<Coord>,
    pub tmap: KernelMap,
    /// Coordinates after the skip union (equal to `gen` without a skip).
    pub coords: Vec<Coord>,
    /// Rows of `coords` receiving generated rows and encoder rows.
    pub from_gen: Vec<u32>,
    pub from_enc: Vec<u32>,
    /// Teacher target membership of each row of `coords`.
    pub target: Option<Vec<bool>>,
    pub keep: Vec<u32>,
    pub kept: Vec<Coord>,
}

/// Coordinate structure of one window through the network. Teacher-forced
/// plans are complete up front; inference plans grow level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPlan {
    pub input: Vec<Coord>,
    pub enc: Vec<(Vec<Coord>, KernelMap)>,
    pub dec: Vec<DecPlan>,
}

impl ItemPlan {
    /// Plan with only the encoder levels; decoder levels are added during inference.
    pub fn encoder_only(input: Vec<Coord>) -> Self {
        let mut enc = Vec::with_capacity(LEVELS);
        let mut prev = input.clone();
        let mut stride = 1;
        for _ in 0..LEVELS {
            let (out, map) = kmap::conv_map(&prev, stride);
            prev = out.clone();
            enc.push((out, map));
            stride *= 2;
        }
        Self {
            input,
            enc,
            dec: Vec::new(),
        }
    }

    fn prev_coords(&self, d: usize) -> &[Coord] {
        if d == 0 {
            &self.enc[LEVELS - 1].0
        } else {
            &self.dec[d - 1].kept
        }
    }

    fn push_level(&mut self, spec: &ModelSpec, teacher: Option<&[Coord]>) {
        let d = self.dec.len();
        let (gen, tmap) = kmap::tconv_map(self.prev_coords(d), dec_stride(d) * 2, Some(WINDOW_BOUNDS));
        let (coords, from_gen, from_enc) = if spec.skips[d] {
            kmap::union(&gen, &self.enc[3 - d].0)
        } else {
            let n = gen.len() as u32;
            (gen.clone(), (0..n).collect(), Vec::new())
        };
        let target = teacher.map(|t| coords.iter().map(|c| t.binary_search(c).is_ok()).collect::<Vec<_>>());
        let keep: Vec<u32> = match &target {
            Some(t) => (0..coords.len() as u32).filter(|&r| t[r as usize]).collect(),
            None => Vec::new(),
        };
        let kept = keep.iter().map(|&r| coords[r as usize]).collect();
        self.dec.push(DecPlan {
            gen,
            tmap,
            coords,
            from_gen,
            from_enc,
            target,
            keep,
            kept,
        });
    }

    fn set_keep(&mut self, d: usize, keep: Vec<u32>) {
        let l = &mut self.dec[d];
        l.kept = keep.iter().map(|&r| l.coords[r as usize]).collect();
        l.keep = keep;
    }

    /// Complete plan with every pruning decision forced to the label support.
    pub fn teacher(spec: &ModelSpec, input: Vec<Coord>, labels: &[Coord]) -> Self {
        let mut p = Self::encoder_only(input);
        for d in 0..LEVELS {
            let t = level_target(labels, d);
            p.push_level(spec, Some(&t));
        }
        p
    }

    pub fn final_coords(&self) -> &[Coord] {
        &self.dec[LEVELS - 1].kept
    }
}

/// A training example: teacher plan plus labels aligned with the final rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub plan: ItemPlan,
    pub labels: Vec<f32>,
    pub present: Vec<bool>,
}

impl TrainItem {
    pub fn new(spec: &ModelSpec, w: &Window) -> Self {
        let input: Vec<Coord> = w.input.iter().map(|v| v.as_array()).collect();
        let label_coords: Vec<Coord> = w.labels.keys().map(|v| v.as_array()).collect();
        let plan = ItemPlan::teacher(spec, input, &label_coords);
        let by_coord: BTreeMap<Coord, &Label> = w.labels.iter().map(|(v, l)| (v.as_array(), l)).collect();
        let mut labels = Vec::new();
        let mut present = Vec::new();
        for c in plan.final_coords() {
            let l = by_coord[c];
            labels.extend_from_slice(&l.values);
            present.extend_from_slice(&l.present);
        }
        Self { plan, labels, present }
    }
}

/// Row offsets of each batch item within a level's concatenated features.
fn bases(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v = vec![0];
    for s in sizes {
        v.push(v.last().unwrap() + s);
    }
    v
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BlockTape<T> {
    /// Output after batch norm and ELU.
    pub act: Vec<T>,
    pub bn: BnCache<T>,
    pub base: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct DecTape<T> {
    pub block: BlockTape<T>,
    /// Features after the skip union.
    pub union: Vec<T>,
    pub union_base: Vec<usize>,
    pub logits: Vec<T>,
    /// Features of the kept rows.
    pub kept: Vec<T>,
    pub kept_base: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tape<T> {
    pub input: Vec<T>,
    pub input_base: Vec<usize>,
    pub enc: Vec<BlockTape<T>>,
    pub dec: Vec<DecTape<T>>,
    /// Final scores after the logistic head.
    pub scores: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Train,
    Infer,
}

fn norm_act<T: Real>(p: &ModelParams<T>, base: usize, z: Vec<T>, c: usize, mode: Mode) -> (Vec<T>, BnCache<T>) {
    let (g, b) = (p.get(base + 1), p.get(base + 2));
    let (mut y, cache) = if z.is_empty() {
        (z, BnCache::default())
    } else {
        match mode {
            Mode::Train => layers::bn_train(&z, c, g, b),
            Mode::Infer => (layers::bn_infer(&z, c, g, b, p.get(base + 3), p.get(base + 4)), BnCache::default()),
        }
    };
    layers::elu(&mut y);
    (y, cache)
}

/// Runs the network over `plans`. In `Infer` mode missing decoder levels are
/// generated and pruned by the predicted logits.
pub(crate) fn forward<T: Real>(p: &ModelParams<T>, plans: &mut [Cow<'_, ItemPlan>], mode: Mode) -> Tape<T> {
    let spec = p.spec;
    let mut tape = Tape::<T> {
        input_base: bases(plans.iter().map(|pl| pl.input.len())),
        ..Default::default()
    };
    tape.input = vec![T::one(); *tape.input_base.last().unwrap()];

    for e in 0..LEVELS {
        let (x, xb, cin) = if e == 0 {
            (&tape.input, &tape.input_base, 1)
        } else {
            let t = &tape.enc[e - 1];
            (&t.act, &t.base, spec.enc[e - 1])
        };
        let base = bases(plans.iter().map(|pl| pl.enc[e].0.len()));
        let maps: Vec<MapRef> = plans
            .iter()
            .enumerate()
            .map(|(i, pl)| MapRef {
                map: &pl.enc[e].1,
                in_base: xb[i],
                out_base: base[i],
            })
            .collect();
        let c = spec.enc[e];
        let z = layers::conv_forward(&maps, x, cin, p.get(enc_base(e)), c, *base.last().unwrap());
        let (act, bn) = norm_act(p, enc_base(e), z, c, mode);
        tape.enc.push(BlockTape { act, bn, base });
    }

    for d in 0..LEVELS {
        for pl in plans.iter_mut() {
            if pl.dec.len() == d {
                pl.to_mut().push_level(&spec, None);
            }
        }
        let (x, xb, cin) = if d == 0 {
            let t = &tape.enc[LEVELS - 1];
            (&t.act, &t.base, spec.enc[LEVELS - 1])
        } else {
            let t = &tape.dec[d - 1];
            (&t.kept, &t.kept_base, spec.dec[d - 1])
        };
        let base = bases(plans.iter().map(|pl| pl.dec[d].gen.len()));
        let maps: Vec<MapRef> = plans
            .iter()
            .enumerate()
            .map(|(i, pl)| MapRef {
                map: &pl.dec[d].tmap,
                in_base: xb[i],
                out_base: base[i],
            })
            .collect();
        let c = spec.dec[d];
        let db = dec_base(d);
        let z = layers::conv_forward(&maps, x, cin, p.get(db), c, *base.last().unwrap());
        let (act, bn) = norm_act(p, db, z, c, mode);

        let union_base = bases(plans.iter().map(|pl| pl.dec[d].coords.len()));
        let mut union = vec![T::zero(); union_base.last().unwrap() * c];
        for (i, pl) in plans.iter().enumerate() {
            let l = &pl.dec[d];
            for (j, &r) in l.from_gen.iter().enumerate() {
                let (src, dst) = ((base[i] + j) * c, (union_base[i] + r as usize) * c);
                union[dst..dst + c].copy_from_slice(&act[src..src + c]);
            }
            if spec.skips[d] {
                let enc = &tape.enc[3 - d];
                for (j, &r) in l.from_enc.iter().enumerate() {
                    let (src, dst) = ((enc.base[i] + j) * c, (union_base[i] + r as usize) * c);
                    for (u, &v) in union[dst..dst + c].iter_mut().zip(&enc.act[src..src + c]) {
                        *u += v;
                    }
                }
            }
        }
        let logits = layers::linear(&union, c, p.get(db + 5), p.get(db + 6));
        if mode == Mode::Infer {
            for (i, pl) in plans.iter_mut().enumerate() {
                if pl.dec[d].target.is_none() {
                    let n = pl.dec[d].coords.len();
                    let lg = &logits[union_base[i]..union_base[i] + n];
                    let keep = (0..n as u32).filter(|&r| lg[r as usize] > T::zero()).collect();
                    pl.to_mut().set_keep(d, keep);
                }
            }
        }
        let kept_base = bases(plans.iter().map(|pl| pl.dec[d].keep.len()));
        let mut kept = Vec::with_capacity(kept_base.last().unwrap() * c);
        for (i, pl) in plans.iter().enumerate() {
            for &r in &pl.dec[d].keep {
                let s = (union_base[i] + r as usize) * c;
                kept.extend_from_slice(&union[s..s + c]);
            }
        }
        tape.dec.push(DecTape {
            block: BlockTape { act, bn, base },
            union,
            union_base,
            logits,
            kept,
            kept_base,
        });
    }

    let last = &tape.dec[LEVELS - 1];
    let mut s = layers::linear(&last.kept, spec.dec[LEVELS - 1], p.get(HEAD), p.get(HEAD + 1));
    for v in &mut s {
        *v = sigmoid(*v);
    }
    tape.scores = s;
    tape
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub bce: f64,
    pub mse: f64,
    pub pos_weight_min: f64,
    pub pos_weight_max: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            bce: 1.0,
            mse: 1.0,
            pos_weight_min: 1.0,
            pos_weight_max: 100.0,
        }
    }
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub bce: [f64; LEVELS],
    pub pos_weight: [f64; LEVELS],
    pub mse: f64,
    pub total: f64,
}

/// Positive-class weight `clamp(neg / pos, lo, hi)`; `hi` when there are no
/// positives.
pub fn pos_weight(pos: usize, neg: usize, w: &LossWeights) -> f64 {
    if pos == 0 {
        return w.pos_weight_max;
    }
    (neg as f64 / pos as f64).clamp(w.pos_weight_min, w.pos_weight_max)
}

/// Loss of a teacher-forced forward pass and its gradient with respect to
/// every parameter (zero for running statistics).
pub(crate) fn loss_and_backward<T: Real>(
    p: &ModelParams<T>,
    items: &[&TrainItem],
    tape: &Tape<T>,
    w: &LossWeights,
) -> (LossParts, Vec<Vec<T>>) {
    let spec = p.spec;
    let mut grads = p.zeros_like();
    let mut parts = LossParts::default();
    let c_out = spec.out;

    // final head: MSE over present channels of the kept rows
    let labels: Vec<T> = items.iter().flat_map(|it| it.labels.iter().map(|&x| T::c(x as f64))).collect();
    let present: Vec<bool> = items.iter().flat_map(|it| it.present.iter().copied()).collect();
    let n_present = present.iter().filter(|&&b| b).count();
    let mut d_logit = vec![T::zero(); tape.scores.len()];
    if n_present > 0 {
        let scale = T::c(w.mse / n_present as f64);
        let mut sum = 0.0;
        for i in 0..tape.scores.len() {
            if present[i] {
                let e = tape.scores[i] - labels[i];
                sum += (e * e).f64();
                let s = tape.scores[i];
                d_logit[i] = T::c(2.0) * e * scale * s * (T::one() - s);
            }
        }
        parts.mse = sum / n_present as f64;
    }
    let c_last = spec.dec[LEVELS - 1];
    let mut d_kept = {
        let (gw, rest) = grads[HEAD..].split_at_mut(1);
        layers::linear_backward(&tape.dec[LEVELS - 1].kept, c_last, p.get(HEAD), &d_logit, &mut gw[0], &mut rest[0])
    };
    debug_assert_eq!(d_logit.len(), tape.dec[LEVELS - 1].kept_base.last().unwrap() * c_out);

    let mut d_enc: Vec<Vec<T>> = tape.enc.iter().map(|t| vec![T::zero(); t.act.len()]).collect();

    for d in (0..LEVELS).rev() {
        let t = &tape.dec[d];
        let c = spec.dec[d];
        let db = dec_base(d);
        let n_rows = *t.union_base.last().unwrap();
        let mut d_union = vec![T::zero(); n_rows * c];
        for (i, it) in items.iter().enumerate() {
            for (j, &r) in it.plan.dec[d].keep.iter().enumerate() {
                let (src, dst) = ((t.kept_base[i] + j) * c, (t.union_base[i] + r as usize) * c);
                for (a, &b) in d_union[dst..dst + c].iter_mut().zip(&d_kept[src..src + c]) {
                    *a += b;
                }
            }
        }
        // pruning head: weighted BCE against the teacher target
        let mut y = Vec::with_capacity(n_rows);
        for it in items {
            y.extend(it.plan.dec[d].target.as_ref().expect("teacher plan").iter().copied());
        }
        let pos = y.iter().filter(|&&b| b).count();
        let pw = pos_weight(pos, n_rows - pos, w);
        parts.pos_weight[d] = pw;
        if n_rows > 0 {
            let mut sum = 0.0;
            let mut dl = vec![T::zero(); n_rows];
            let inv_n = T::c(w.bce / n_rows as f64);
            let pwt = T::c(pw);
            for r in 0..n_rows {
                let l = t.logits[r];
                if y[r] {
                    sum += pw * softplus(-l).f64();
                    dl[r] = pwt * (sigmoid(l) - T::one()) * inv_n;
                } else {
                    sum += softplus(l).f64();
                    dl[r] = sigmoid(l) * inv_n;
                }
            }
            parts.bce[d] = sum / n_rows as f64;
            let (gw, rest) = grads[db + 5..].split_at_mut(1);
            let du = layers::linear_backward(&t.union, c, p.get(db + 5), &dl, &mut gw[0], &mut rest[0]);
            for (a, b) in d_union.iter_mut().zip(du) {
                *a += b;
            }
        }
        // skip union
        let gen_n = *t.block.base.last().unwrap();
        let mut d_act = vec![T::zero(); gen_n * c];
        for (i, it) in items.iter().enumerate() {
            let l = &it.plan.dec[d];
            for (j, &r) in l.from_gen.iter().enumerate() {
                let (dst, src) = ((t.block.base[i] + j) * c, (t.union_base[i] + r as usize) * c);
                d_act[dst..dst + c].copy_from_slice(&d_union[src..src + c]);
            }
            if spec.skips[d] {
                let e = 3 - d;
                let eb = &tape.enc[e].base;
                for (j, &r) in l.from_enc.iter().enumerate() {
                    let (dst, src) = ((eb[i] + j) * c, (t.union_base[i] + r as usize) * c);
                    for (a, &b) in d_enc[e][dst..dst + c].iter_mut().zip(&d_union[src..src + c]) {
                        *a += b;
                    }
                }
            }
        }
        let dz = block_backward(p, &mut grads, db, &t.block, d_act, c);
        // transposed convolution
        let (x, xb, cin) = if d == 0 {
            let t = &tape.enc[LEVELS - 1];
            (&t.act, &t.base, spec.enc[LEVELS - 1])
        } else {
            let t = &tape.dec[d - 1];
            (&t.kept, &t.kept_base, spec.dec[d - 1])
        };
        let maps: Vec<MapRef> = items
            .iter()
            .enumerate()
            .map(|(i, it)| MapRef {
                map: &it.plan.dec[d].tmap,
                in_base: xb[i],
                out_base: t.block.base[i],
            })
            .collect();
        let mut dx = vec![T::zero(); x.len()];
        layers::conv_backward(&maps, x, cin, p.get(db), c, &dz, Some(&mut dx), &mut grads[db]);
        if d == 0 {
            for (a, b) in d_enc[LEVELS - 1].iter_mut().zip(dx) {
                *a += b;
            }
        } else {
            d_kept = dx;
        }
    }

    for e in (0..LEVELS).rev() {
        let t = &tape.enc[e];
        let c = spec.enc[e];
        let eb = enc_base(e);
        let dy = std::mem::take(&mut d_enc[e]);
        let dz = block_backward(p, &mut grads, eb, t, dy, c);
        let (x, xb, cin) = if e == 0 {
            (&tape.input, &tape.input_base, 1)
        } else {
            let t = &tape.enc[e - 1];
            (&t.act, &t.base, spec.enc[e - 1])
        };
        let maps: Vec<MapRef> = items
            .iter()
            .enumerate()
            .map(|(i, it)| MapRef {
                map: &it.plan.enc[e].1,
                in_base: xb[i],
                out_base: t.base[i],
            })
            .collect();
        if e == 0 {
            layers::conv_backward(&maps, x, cin, p.get(eb), c, &dz, None, &mut grads[eb]);
        } else {
            let (lo, hi) = d_enc.split_at_mut(e);
            let _ = hi;
            layers::conv_backward(&maps, x, cin, p.get(eb), c, &dz, Some(&mut lo[e - 1]), &mut grads[eb]);
        }
    }

    parts.total = w.bce * parts.bce.iter().sum::<f64>() + w.mse * parts.mse;
    (parts, grads)
}

/// Backward through ELU and batch norm of one block; returns the gradient
/// at the convolution output.
fn block_backward<T: Real>(p: &ModelParams<T>, grads: &mut [Vec<T>], base: usize, t: &BlockTape<T>, mut dy: Vec<T>, c: usize) -> Vec<T> {
    if dy.is_empty() {
        return dy;
    }
    layers::elu_backward(&mut dy, &t.act);
    let (g, rest) = grads[base + 1..].split_at_mut(1);
    layers::bn_backward(&dy, c, p.get(base + 1), &t.bn, &mut g[0], &mut rest[0])
}

