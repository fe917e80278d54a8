//! Batched layer kernels over row-concatenated sparse features, plus the
//! single-tensor sparse operations built on them.

use super::kmap::{self, Coord, KernelMap, KVOL};
use super::real::{matmul, Mat, Real};
use crate::error::{Error, Result};
use crate::voxgrid::SparseTensor;

/// One batch item's rule book with its row offsets in the concatenated
/// input and output feature matrices.
#[derive(Clone, Copy)]
pub(crate) struct MapRef<'a> {
    pub map: &'a KernelMap,
    pub in_base: usize,
    pub out_base: usize,
}

fn gather<T: Real>(maps: &[MapRef], o: usize, src: &[T], width: usize, side: usize, buf: &mut Vec<T>) -> usize {
    buf.clear();
    let mut n = 0;
    for m in maps {
        let base = if side == 0 { m.in_base } else { m.out_base };
        for p in m.map.group(o) {
            let r = base + p[side] as usize;
            buf.extend_from_slice(&src[r * width..(r + 1) * width]);
            n += 1;
        }
    }
    n
}

fn scatter_add<T: Real>(maps: &[MapRef], o: usize, src: &[T], dst: &mut [T], width: usize, side: usize) {
    let mut row = 0;
    for m in maps {
        let base = if side == 0 { m.in_base } else { m.out_base };
        for p in m.map.group(o) {
            let r = base + p[side] as usize;
            let d = &mut dst[r * width..(r + 1) * width];
            for (a, &b) in d.iter_mut().zip(&src[row * width..(row + 1) * width]) {
                *a += b;
            }
            row += 1;
        }
    }
}

/// `y[out] += W[o]^T-applied x[in]` over every pair: rows are `x_row * W[o]`
/// with `W[o]` a `cin x cout` block.
pub(crate) fn conv_forward<T: Real>(maps: &[MapRef], x: &[T], cin: usize, w: &[T], cout: usize, n_out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n_out * cout];
    let kvol = w.len() / (cin * cout).max(1);
    let mut a = Vec::new();
    let mut c = Vec::new();
    for o in 0..kvol {
        let n = gather(maps, o, x, cin, 0, &mut a);
        if n == 0 {
            continue;
        }
        c.resize(n * cout, T::zero());
        let wo = &w[o * cin * cout..(o + 1) * cin * cout];
        matmul(Mat::new(&a, n, cin), Mat::new(wo, cin, cout), &mut c, false);
        scatter_add(maps, o, &c, &mut y, cout, 1);
    }
    y
}

/// Gradients of [`conv_forward`]: accumulates into `dw` and, when given, `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    maps: &[MapRef],
    x: &[T],
    cin: usize,
    w: &[T],
    cout: usize,
    dy: &[T],
    mut dx: Option<&mut [T]>,
    dw: &mut [T],
) {
    let kvol = w.len() / (cin * cout).max(1);
    let mut a = Vec::new();
    let mut g = Vec::new();
    let mut da = Vec::new();
    for o in 0..kvol {
        let n = gather(maps, o, dy, cout, 1, &mut g);
        if n == 0 {
            continue;
        }
        gather(maps, o, x, cin, 0, &mut a);
        let wo = &w[o * cin * cout..(o + 1) * cin * cout];
        let dwo = &mut dw[o * cin * cout..(o + 1) * cin * cout];
        matmul(Mat::new(&a, n, cin).t(), Mat::new(&g, n, cout), dwo, true);
        if let Some(dx) = dx.as_deref_mut() {
            da.resize(n * cin, T::zero());
            matmul(Mat::new(&g, n, cout), Mat::new(wo, cin, cout).t(), &mut da, false);
            scatter_add(maps, o, &da, dx, cin, 0);
        }
    }
}

pub(crate) const BN_EPS: f64 = 1e-5;

/// Batch-normalization intermediates kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub invstd: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel batch statistics (biased variance) over all rows, reduced in
/// row order.
pub(crate) fn bn_train<T: Real>(x: &[T], c: usize, gamma: &[T], beta: &[T]) -> (Vec<T>, BnCache<T>) {
    let n = x.len() / c;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for row in x.chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    let invstd: Vec<T> = var.iter().map(|&v| T::c(1.0 / (v + BN_EPS).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::c(m)).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for r in 0..n {
        for ch in 0..c {
            let i = r * c + ch;
            let h = (x[i] - mean_t[ch]) * invstd[ch];
            xhat[i] = h;
            y[i] = gamma[ch] * h + beta[ch];
        }
    }
    let cache = BnCache {
        xhat,
        invstd,
        mean: mean_t,
        var: var.iter().map(|&v| T::c(v)).collect(),
    };
    (y, cache)
}

pub(crate) fn bn_infer<T: Real>(x: &[T], c: usize, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Vec<T> {
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] / (var[ch] + T::c(BN_EPS)).sqrt()).collect();
    x.chunks_exact(c)
        .flat_map(|row| (0..c).map(|ch| (row[ch] - mean[ch]) * scale[ch] + beta[ch]).collect::<Vec<_>>())
        .collect()
}

pub(crate) fn bn_backward<T: Real>(dy: &[T], c: usize, gamma: &[T], cache: &BnCache<T>, dgamma: &mut [T], dbeta: &mut [T]) -> Vec<T> {
    let n = dy.len() / c;
    let mut sum_d = vec![T::zero(); c];
    let mut sum_dx = vec![T::zero(); c];
    for r in 0..n {
        for ch in 0..c {
            let i = r * c + ch;
            dbeta[ch] += dy[i];
            dgamma[ch] += dy[i] * cache.xhat[i];
            let dh = dy[i] * gamma[ch];
            sum_d[ch] += dh;
            sum_dx[ch] += dh * cache.xhat[i];
        }
    }
    let nf = T::c(n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for r in 0..n {
        for ch in 0..c {
            let i = r * c + ch;
            let dh = dy[i] * gamma[ch];
            dx[i] = cache.invstd[ch] / nf * (nf * dh - sum_d[ch] - cache.xhat[i] * sum_dx[ch]);
        }
    }
    dx
}

pub(crate) fn elu<T: Real>(x: &mut [T]) {
    for v in x {
        if *v <= T::zero() {
            *v = v.exp_m1();
        }
    }
}

/// Backward of ELU given its output `y`.
pub(crate) fn elu_backward<T: Real>(dy: &mut [T], y: &[T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d *= v + T::one();
        }
    }
}

/// Rows of `x` (width `c`) times a `c x out` matrix plus a bias.
pub(crate) fn linear<T: Real>(x: &[T], c: usize, w: &[T], b: &[T]) -> Vec<T> {
    let out = b.len();
    let n = x.len() / c;
    let mut y: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
    matmul(Mat::new(x, n, c), Mat::new(w, c, out), &mut y, true);
    y
}

pub(crate) fn linear_backward<T: Real>(x: &[T], c: usize, w: &[T], dy: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let out = db.len();
    let n = x.len() / c;
    for row in dy.chunks_exact(out) {
        for (a, &b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    matmul(Mat::new(x, n, c).t(), Mat::new(dy, n, out), dw, true);
    let mut dx = vec![T::zero(); n * c];
    matmul(Mat::new(dy, n, out), Mat::new(w, c, out).t(), &mut dx, false);
    dx
}

fn check_kernel<T>(x: &SparseTensor<T>, w: &[T], cout: usize, kvol: usize) -> Result<()>
where
    T: Copy,
{
    if w.len() != kvol * x.width() * cout {
        return Err(Error::usage(format!(
            "kernel has {} values, expected {kvol} x {} x {cout}",
            w.len(),
            x.width()
        )));
    }
    Ok(())
}

/// Sparse convolution of kernel size `k` (1 or 4) and stride `s` (1 or 2).
/// The kernel holds `k^3` blocks of `in x cout` values, block order
/// `(dx + 1) * 16 + (dy + 1) * 4 + (dz + 1)` for offsets in `-1..=2`.
pub fn sparse_conv<T: Real>(x: &SparseTensor<T>, w: &[T], cout: usize, k: usize, s: usize) -> Result<SparseTensor<T>> {
    let (coords, map) = match (k, s) {
        (1, 1) => (x.coords().to_vec(), KernelMap::identity(x.len())),
        (4, 2) => kmap::conv_map(x.coords(), x.stride()),
        _ => return Err(Error::usage(format!("unsupported kernel {k} / stride {s}"))),
    };
    check_kernel(x, w, cout, k * k * k)?;
    let maps = [MapRef {
        map: &map,
        in_base: 0,
        out_base: 0,
    }];
    let feats = conv_forward(&maps, x.feats(), x.width(), w, cout, coords.len());
    let stride = if s == 2 { x.stride() * 2 } else { x.stride() };
    Ok(SparseTensor::from_sorted(stride, cout, coords, feats))
}

/// Generative transposed convolution (kernel 4, stride 2): creates every
/// kernel-reachable child at half the input stride, optionally clipped to
/// `[0, bounds)`. Kernel blocks are `in x cout`.
pub fn generative_transposed_conv<T: Real>(
    x: &SparseTensor<T>,
    w: &[T],
    cout: usize,
    bounds: Option<[i32; 3]>,
) -> Result<SparseTensor<T>> {
    if x.stride() < 2 {
        return Err(Error::usage("transposed convolution needs an input stride of at least 2"));
    }
    check_kernel(x, w, cout, KVOL)?;
    let (coords, map) = kmap::tconv_map(x.coords(), x.stride(), bounds);
    let maps = [MapRef {
        map: &map,
        in_base: 0,
        out_base: 0,
    }];
    let feats = conv_forward(&maps, x.feats(), x.width(), w, cout, coords.len());
    Ok(SparseTensor::from_sorted(x.stride() / 2, cout, coords, feats))
}

/// Where the keep decision of a pruning step comes from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    /// Keep coordinates whose logit is positive (probability above 0.5).
    Predicted,
    /// Keep coordinates contained in the sorted teacher list.
    Teacher(&'a [Coord]),
}

/// Rows to keep under `source`.
pub(crate) fn keep_rows<T: Real>(coords: &[Coord], logits: &[T], source: MaskSource) -> Vec<u32> {
    match source {
        MaskSource::Predicted => (0..coords.len() as u32).filter(|&r| logits[r as usize] > T::zero()).collect(),
        MaskSource::Teacher(t) => (0..coords.len() as u32)
            .filter(|&r| t.binary_search(&coords[r as usize]).is_ok())
            .collect(),
    }
}

pub fn prune<T: Real>(x: &SparseTensor<T>, logits: &[T], source: MaskSource) -> Result<SparseTensor<T>> {
    if logits.len() != x.len() {
        return Err(Error::usage(format!("{} logits for {} coordinates", logits.len(), x.len())));
    }
    let keep = keep_rows(x.coords(), logits, source);
    Ok(select_rows(x, &keep))
}

pub(crate) fn select_rows<T: Real>(x: &SparseTensor<T>, rows: &[u32]) -> SparseTensor<T> {
    let c = x.width();
    let coords = rows.iter().map(|&r| x.coords()[r as usize]).collect();
    let feats = rows.iter().flat_map(|&r| x.feature(r as usize).iter().copied()).collect();
    SparseTensor::from_sorted(x.stride(), c, coords, feats)
}
