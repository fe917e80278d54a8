use std::path::Path;

use rand::Rng;

use super::kmap::KVOL;
use super::real::Real;
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::seeding;

pub const LEVELS: usize = 5;

/// Which decoder levels receive an encoder skip connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipVariant {
    /// Every decoder level that has an encoder level of the same stride.
    Full,
    /// Only the two lowest-resolution decoder levels.
    Reduced,
}

impl std::str::FromStr for SkipVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m1" | "full" => Ok(SkipVariant::Full),
            "m2" | "reduced" => Ok(SkipVariant::Reduced),
            _ => Err(Error::usage(format!("unknown skip variant {s:?} (expected m1 or m2)"))),
        }
    }
}

impl std::fmt::Display for SkipVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SkipVariant::Full => "m1",
            SkipVariant::Reduced => "m2",
        })
    }
}

/// Architecture of the encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    /// Encoder block widths; block `e` outputs stride `2^(e+1)`.
    pub enc: [usize; LEVELS],
    /// Decoder block widths; block `d` outputs stride `2^(4-d)`.
    pub dec: [usize; LEVELS],
    /// Output channels of the final head.
    pub out: usize,
    /// Decoder levels with a skip connection from the encoder.
    pub skips: [bool; LEVELS],
}

impl ModelSpec {
    pub fn new(out: usize, variant: SkipVariant) -> Self {
        Self::with_widths([8, 16, 32, 64, 128], out, variant)
    }

    /// Decoder widths mirror the encoder: block `d < 4` matches encoder
    /// block `3 - d`, the last block matches the first encoder block.
    pub fn with_widths(enc: [usize; LEVELS], out: usize, variant: SkipVariant) -> Self {
        let dec = [enc[3], enc[2], enc[1], enc[0], enc[0]];
        let skips = match variant {
            SkipVariant::Full => [true, true, true, true, false],
            SkipVariant::Reduced => [true, true, false, false, false],
        };
        Self { enc, dec, out, skips }
    }

    pub fn variant(&self) -> Option<SkipVariant> {
        match self.skips {
            [true, true, true, true, false] => Some(SkipVariant::Full),
            [true, true, false, false, false] => Some(SkipVariant::Reduced),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc.iter().chain(&self.dec).any(|&c| c == 0) || self.out == 0 {
            return Err(Error::usage("layer widths must be positive"));
        }
        if self.skips[LEVELS - 1] {
            return Err(Error::usage("the stride-1 decoder level has no encoder counterpart"));
        }
        for d in 0..LEVELS - 1 {
            if self.skips[d] && self.dec[d] != self.enc[3 - d] {
                return Err(Error::usage(format!("skip at decoder level {d} joins unequal widths")));
            }
        }
        Ok(())
    }

    fn enc_in(&self, e: usize) -> usize {
        if e == 0 {
            1
        } else {
            self.enc[e - 1]
        }
    }

    fn dec_in(&self, d: usize) -> usize {
        if d == 0 {
            self.enc[LEVELS - 1]
        } else {
            self.dec[d - 1]
        }
    }

    /// Names and shapes of every parameter array, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for e in 0..LEVELS {
            let c = self.enc[e];
            v.push((format!("enc{e}.conv.weight"), vec![KVOL, self.enc_in(e), c]));
            for s in ["gamma", "beta", "running_mean", "running_var"] {
                v.push((format!("enc{e}.bn.{s}"), vec![c]));
            }
        }
        for d in 0..LEVELS {
            let c = self.dec[d];
            v.push((format!("dec{d}.tconv.weight"), vec![KVOL, self.dec_in(d), c]));
            for s in ["gamma", "beta", "running_mean", "running_var"] {
                v.push((format!("dec{d}.bn.{s}"), vec![c]));
            }
            v.push((format!("dec{d}.prune.weight"), vec![c, 1]));
            v.push((format!("dec{d}.prune.bias"), vec![1]));
        }
        v.push(("head.weight".into(), vec![self.dec[LEVELS - 1], self.out]));
        v.push(("head.bias".into(), vec![self.out]));
        v
    }
}

pub(crate) const ENC_BLOCK: usize = 5;
pub(crate) const DEC_BLOCK: usize = 7;
pub(crate) fn enc_base(e: usize) -> usize {
    e * ENC_BLOCK
}
pub(crate) fn dec_base(d: usize) -> usize {
    LEVELS * ENC_BLOCK + d * DEC_BLOCK
}
pub(crate) const HEAD: usize = LEVELS * ENC_BLOCK + LEVELS * DEC_BLOCK;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Every parameter array of a model, in the order of [`ModelSpec::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub spec: ModelSpec,
    pub params: Vec<Param<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization: uniform fan-in scaled kernels, unit batch-norm
    /// scale, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeding::rng(seed, 6);
        let params = spec
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with("gamma") || name.ends_with("running_var") {
                    vec![T::one(); n]
                } else if name.ends_with("beta") || name.ends_with("bias") || name.ends_with("running_mean") {
                    vec![T::zero(); n]
                } else {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let b = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| T::c(rng.gen_range(-b..b))).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn get(&self, i: usize) -> &[T] {
        &self.params[i].data
    }

    pub fn is_trainable(i: usize) -> bool {
        !is_running_stat(i)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&x| U::c(x.f64())).collect(),
                })
                .collect(),
        }
    }
}

pub(crate) fn is_running_stat(i: usize) -> bool {
    if i < HEAD {
        let (block, off) = if i < dec_base(0) {
            (ENC_BLOCK, i)
        } else {
            (DEC_BLOCK, i - dec_base(0))
        };
        let r = off % block;
        r == 3 || r == 4
    } else {
        false
    }
}

const MAGIC: &[u8; 4] = b"VTCK";
const VERSION: u32 = 1;
const SKIP_LAYER: &str = "spec.skips";

pub fn encode_checkpoint(p: &ModelParams<f32>) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(p.spec.out as u8);
    w.u32(p.params.len() as u32 + 1);
    let skips: Vec<f32> = p.spec.skips.iter().map(|&s| s as u8 as f32).collect();
    let extra = Param {
        name: SKIP_LAYER.to_string(),
        shape: vec![LEVELS],
        data: skips,
    };
    for l in p.params.iter().chain(std::iter::once(&extra)) {
        w.u32(l.name.len() as u32);
        w.bytes(l.name.as_bytes());
        w.u8(l.shape.len() as u8);
        for &d in &l.shape {
            w.u32(d as u32);
        }
        for &x in &l.data {
            w.f32(x);
        }
    }
    w.into_inner()
}

fn read_layer(r: &mut Reader) -> Result<Param<f32>> {
    let at = r.offset();
    let len = r.u32()? as u64;
    let len = r.check_count(len, 1)?;
    let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(at, "layer name is not UTF-8"))?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
    let n = match n {
        Some(n) => r.check_count(n, 4)?,
        None => return Err(Error::format(at, format!("layer {name}: shape overflows"))),
    };
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let x = r.f32()?;
        if !x.is_finite() {
            return Err(Error::format(at, format!("layer {name}: non-finite value")));
        }
        data.push(x);
    }
    Ok(Param { name, shape, data })
}

fn width(layers: &[Param<f32>], name: &str, axis: usize) -> Result<usize> {
    layers
        .iter()
        .find(|l| l.name == name)
        .and_then(|l| l.shape.get(axis).copied())
        .ok_or_else(|| Error::format(0, format!("layer {name} missing or malformed")))
}

/// Decodes a checkpoint. With `expected`, the stored model must match it
/// exactly; otherwise the architecture is read from the file.
pub fn decode_checkpoint(data: &[u8], expected: Option<&ModelSpec>) -> Result<ModelParams<f32>> {
    let mut r = Reader::new(data);
    r.header(MAGIC, VERSION)?;
    let out = r.u8()? as usize;
    let n = r.u32()? as u64;
    let n = r.check_count(n, 5)?;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        layers.push(read_layer(&mut r)?);
    }
    r.finish()?;
    let skip_layer = match layers.pop() {
        Some(l) if l.name == SKIP_LAYER && l.data.len() == LEVELS => l,
        _ => return Err(Error::format(0, format!("layer {SKIP_LAYER} missing"))),
    };
    let mut skips = [false; LEVELS];
    for (s, &v) in skips.iter_mut().zip(&skip_layer.data) {
        *s = v != 0.0;
    }
    let mut enc = [0; LEVELS];
    let mut dec = [0; LEVELS];
    for e in 0..LEVELS {
        enc[e] = width(&layers, &format!("enc{e}.conv.weight"), 2)?;
        dec[e] = width(&layers, &format!("dec{e}.tconv.weight"), 2)?;
    }
    let spec = ModelSpec { enc, dec, out, skips };
    if let Some(want) = expected {
        if want.out != out {
            return Err(Error::format(8, format!("checkpoint head has {out} channels, expected {}", want.out)));
        }
        if *want != spec {
            return Err(Error::format(0, format!("checkpoint architecture {spec:?} differs from {want:?}")));
        }
    }
    spec.validate().map_err(|e| Error::format(0, e.to_string()))?;
    let layout = spec.layout();
    if layout.len() != layers.len() {
        return Err(Error::format(0, format!("{} layers, expected {}", layers.len(), layout.len())));
    }
    for (l, (name, shape)) in layers.iter().zip(&layout) {
        if &l.name != name {
            return Err(Error::format(0, format!("layer {}: expected {name} at this position", l.name)));
        }
        if &l.shape != shape {
            return Err(Error::format(0, format!("layer {name}: shape {:?}, expected {shape:?}", l.shape)));
        }
        if name.ends_with("running_var") && l.data.iter().any(|&v| v <= 0.0) {
            return Err(Error::format(0, format!("layer {name}: running variance must be positive")));
        }
    }
    Ok(ModelParams { spec, params: layers })
}

pub fn save_checkpoint(path: &Path, p: &ModelParams<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(p))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelSpec>) -> Result<ModelParams<f32>> {
    decode_checkpoint(&read_file(path)?, expected)
}
