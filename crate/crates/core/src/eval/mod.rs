//! Prediction-versus-target classification and the RMSE over true
//! positives, false positives and false negatives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dataset::{window_contains, Label, WINDOW_DIMS};
use crate::voxgrid::Voxel;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Classification {
    pub tp: BTreeSet<Voxel>,
    pub fp: BTreeSet<Voxel>,
    pub fn_: BTreeSet<Voxel>,
}

/// Splits predicted and target voxels; predictions outside the window are
/// ignored.
pub fn classify<'a>(pred: impl IntoIterator<Item = &'a Voxel>, target: &BTreeSet<Voxel>) -> Classification {
    let pred: BTreeSet<Voxel> = pred.into_iter().copied().filter(|v| window_contains(*v)).collect();
    Classification {
        tp: pred.intersection(target).copied().collect(),
        fp: pred.difference(target).copied().collect(),
        fn_: target.difference(&pred).copied().collect(),
    }
}

/// Running sums for the error over one or more windows.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseAccumulator {
    channels: usize,
    sum_sq: f64,
    n: u64,
    ch_sum: Vec<f64>,
    ch_n: Vec<u64>,
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

impl RmseAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            sum_sq: 0.0,
            n: 0,
            ch_sum: vec![0.0; channels],
            ch_n: vec![0; channels],
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
        }
    }

    fn push(&mut self, pred: Option<&[f32]>, label: Option<&Label>) {
        let mut s = 0.0;
        let mut k = 0;
        for ch in 0..self.channels {
            let (y, on) = match label {
                Some(l) => (l.values[ch] as f64, l.present[ch]),
                None => (0.0, true),
            };
            if !on {
                continue;
            }
            let yh = pred.map_or(0.0, |p| p[ch] as f64);
            let e = (y - yh) * (y - yh);
            s += e;
            k += 1;
            self.ch_sum[ch] += e;
            self.ch_n[ch] += 1;
        }
        if k > 0 {
            self.sum_sq += s / k as f64;
            self.n += 1;
        }
    }

    /// Adds one window. `pred` maps voxels to `channels` scores.
    pub fn add(&mut self, pred: &BTreeMap<Voxel, Vec<f32>>, target: &BTreeMap<Voxel, Label>) {
        let support: BTreeSet<Voxel> = target.keys().copied().collect();
        let cls = classify(pred.keys(), &support);
        for v in &cls.tp {
            self.push(Some(&pred[v]), Some(&target[v]));
        }
        for v in &cls.fp {
            self.push(Some(&pred[v]), None);
        }
        for v in &cls.fn_ {
            self.push(None, Some(&target[v]));
        }
        let (tp, fp, fn_) = (cls.tp.len() as u64, cls.fp.len() as u64, cls.fn_.len() as u64);
        self.tp += tp;
        self.fp += fp;
        self.fn_ += fn_;
        let volume: u64 = WINDOW_DIMS.iter().map(|&d| d as u64).product();
        self.tn += volume - tp - fp - fn_;
    }

    pub fn report(&self) -> EvalReport {
        let root = |s: f64, n: u64| (n > 0).then(|| (s / n as f64).sqrt());
        EvalReport {
            rmse: root(self.sum_sq, self.n),
            n: self.n,
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            tn_excluded: self.tn,
            per_channel: if self.channels > 1 {
                self.ch_sum.iter().zip(&self.ch_n).map(|(&s, &n)| root(s, n)).collect()
            } else {
                Vec::new()
            },
        }
    }
}

/// Error summary. `rmse` is `None` when no voxel contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: Option<f64>,
    pub n: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn_excluded: u64,
    pub per_channel: Vec<Option<f64>>,
}

/// Single-window convenience wrapper.
pub fn rmse(pred: &BTreeMap<Voxel, Vec<f32>>, target: &BTreeMap<Voxel, Label>, channels: usize) -> EvalReport {
    let mut acc = RmseAccumulator::new(channels);
    acc.add(pred, target);
    acc.report()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rmse={}", opt(self.rmse))?;
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "tp={}", self.tp)?;
        writeln!(f, "fp={}", self.fp)?;
        writeln!(f, "fn={}", self.fn_)?;
        writeln!(f, "tn_excluded={}", self.tn_excluded)?;
        for (ch, v) in self.per_channel.iter().enumerate() {
            writeln!(f, "rmse_ch{ch}={}", opt(*v))?;
        }
        Ok(())
    }
}
