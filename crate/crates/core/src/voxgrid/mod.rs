//! Spatial data structures shared by every stage of the pipeline.
//!
//! Voxel cells are half-open, `[lo, lo + res)` on every axis, and world
//! positions quantize with `floor`. Voxel membership is keyed by a packed
//! 64-bit index (see [`Voxel::pack`]) so that numeric key order equals
//! lexicographic `(i, j, k)` order, which is also the order every reduction
//! iterates in.

mod io;
pub(crate) mod ops;
mod sparse;
mod trav;

pub use io::{read_grid, read_trav, write_grid, write_trav, decode_grid, decode_trav, encode_grid, encode_trav};
pub use ops::{flood_fill_reachable, rotate_coords_about_z, FloodFill};
pub use sparse::SparseTensor;
pub use trav::{TravKey, TravTensor, TrialCount};

use crate::error::{Error, Result};

/// Integer voxel index. Ordering is lexicographic in `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Voxel {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

const PACK_BITS: u32 = 21;
const PACK_MASK: u64 = (1 << PACK_BITS) - 1;

impl Voxel {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn offset(self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    /// Packs a non-negative index as `i << 42 | j << 21 | k`.
    ///
    /// Each component must lie in `[0, 2^21)`. The packing is part of the
    /// on-disk contract: numeric order of packed keys is lexicographic order.
    pub fn pack(self) -> u64 {
        debug_assert!(self.i >= 0 && self.j >= 0 && self.k >= 0);
        ((self.i as u64 & PACK_MASK) << (2 * PACK_BITS))
            | ((self.j as u64 & PACK_MASK) << PACK_BITS)
            | (self.k as u64 & PACK_MASK)
    }

    pub fn unpack(key: u64) -> Self {
        Self::new(
            ((key >> (2 * PACK_BITS)) & PACK_MASK) as i32,
            ((key >> PACK_BITS) & PACK_MASK) as i32,
            (key & PACK_MASK) as i32,
        )
    }

    pub fn as_array(self) -> [i32; 3] {
        [self.i, self.j, self.k]
    }
}

impl From<[i32; 3]> for Voxel {
    fn from(a: [i32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Grid geometry: dimensions, world position of the minimum corner, and the
/// voxel edge length in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMeta {
    pub dims: [u32; 3],
    pub origin: [f64; 3],
    pub resolution: f64,
}

impl GridMeta {
    pub fn new(dims: [u32; 3], origin: [f64; 3], resolution: f64) -> Result<Self> {
        if dims.iter().any(|&d| d == 0 || d as u64 > PACK_MASK) {
            return Err(Error::usage(format!("grid dims {dims:?} out of range")));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::usage(format!("resolution {resolution} must be > 0")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::usage("grid origin must be finite"));
        }
        Ok(Self {
            dims,
            origin,
            resolution,
        })
    }

    pub fn contains(&self, v: Voxel) -> bool {
        v.i >= 0
            && v.j >= 0
            && v.k >= 0
            && (v.i as u32) < self.dims[0]
            && (v.j as u32) < self.dims[1]
            && (v.k as u32) < self.dims[2]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    /// Unclamped floor quantization; may produce indices outside the grid.
    pub fn quantize(&self, p: [f64; 3]) -> Voxel {
        let q = |a: usize| ((p[a] - self.origin[a]) / self.resolution).floor() as i32;
        Voxel::new(q(0), q(1), q(2))
    }

    pub fn world_to_index(&self, p: [f64; 3]) -> Option<Voxel> {
        if p.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let v = self.quantize(p);
        self.contains(v).then_some(v)
    }

    pub fn index_to_center(&self, v: Voxel) -> Result<[f64; 3]> {
        if !self.contains(v) {
            return Err(Error::usage(format!(
                "voxel {:?} outside grid dims {:?}",
                v.as_array(),
                self.dims
            )));
        }
        Ok(self.center_unchecked(v))
    }

    /// Center of a voxel that may lie outside the grid.
    pub fn center_unchecked(&self, v: Voxel) -> [f64; 3] {
        let r = self.resolution;
        [
            self.origin[0] + (v.i as f64 + 0.5) * r,
            self.origin[1] + (v.j as f64 + 0.5) * r,
            self.origin[2] + (v.k as f64 + 0.5) * r,
        ]
    }

    /// World height of the top face of layer `k`.
    pub fn layer_top(&self, k: i32) -> f64 {
        self.origin[2] + (k + 1) as f64 * self.resolution
    }

    fn linear(&self, v: Voxel) -> usize {
        ((v.i as usize * self.dims[1] as usize) + v.j as usize) * self.dims[2] as usize
            + v.k as usize
    }

    fn voxel_at_linear(&self, idx: usize) -> Voxel {
        let nz = self.dims[2] as usize;
        let ny = self.dims[1] as usize;
        Voxel::new(
            (idx / (ny * nz)) as i32,
            ((idx / nz) % ny) as i32,
            (idx % nz) as i32,
        )
    }
}

/// Binary occupancy over a [`GridMeta`]. Stored as a dense bitset laid out in
/// lexicographic index order, so iteration is sorted for free.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    meta: GridMeta,
    bits: Vec<u64>,
    count: usize,
}

impl OccupancyGrid {
    pub fn new(meta: GridMeta) -> Self {
        let words = meta.voxel_count().div_ceil(64);
        Self {
            meta,
            bits: vec![0; words],
            count: 0,
        }
    }

    pub fn from_voxels(meta: GridMeta, voxels: impl IntoIterator<Item = Voxel>) -> Result<Self> {
        let mut g = Self::new(meta);
        for v in voxels {
            g.insert(v)?;
        }
        Ok(g)
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Returns whether the voxel was newly inserted.
    pub fn insert(&mut self, v: Voxel) -> Result<bool> {
        if !self.meta.contains(v) {
            return Err(Error::usage(format!(
                "voxel {:?} outside grid dims {:?}",
                v.as_array(),
                self.meta.dims
            )));
        }
        let idx = self.meta.linear(v);
        let (w, b) = (idx / 64, idx % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        self.count += fresh as usize;
        Ok(fresh)
    }

    pub fn remove(&mut self, v: Voxel) -> bool {
        if !self.meta.contains(v) {
            return false;
        }
        let idx = self.meta.linear(v);
        let (w, b) = (idx / 64, idx % 64);
        let had = self.bits[w] & (1 << b) != 0;
        self.bits[w] &= !(1 << b);
        self.count -= had as usize;
        had
    }

    /// O(x,y,z) as a boolean; out-of-grid voxels are free.
    #[inline]
    pub fn is_occupied(&self, v: Voxel) -> bool {
        if !self.meta.contains(v) {
            return false;
        }
        let idx = self.meta.linear(v);
        self.bits[idx / 64] & (1 << (idx % 64)) != 0
    }

    /// Occupied voxels in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = Voxel> + '_ {
        self.bits.iter().enumerate().flat_map(move |(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(self.meta.voxel_at_linear(w * 64 + b))
            })
        })
    }

    /// Occupied voxels within an inclusive index box, lexicographic order.
    pub fn iter_box(&self, lo: Voxel, hi: Voxel) -> impl Iterator<Item = Voxel> + '_ {
        let d = self.meta.dims;
        let lo = Voxel::new(lo.i.max(0), lo.j.max(0), lo.k.max(0));
        let hi = Voxel::new(
            hi.i.min(d[0] as i32 - 1),
            hi.j.min(d[1] as i32 - 1),
            hi.k.min(d[2] as i32 - 1),
        );
        (lo.i..=hi.i).flat_map(move |i| {
            (lo.j..=hi.j).flat_map(move |j| {
                (lo.k..=hi.k)
                    .map(move |k| Voxel::new(i, j, k))
                    .filter(|&v| self.is_occupied(v))
            })
        })
    }
}

/// Robot base pose. `p` is the center of the body's underside; heading is
/// `10° * heading_idx`, counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: [f64; 3],
    pub heading_idx: u8,
    pub roll: f64,
    pub pitch: f64,
}

pub const HEADING_COUNT: u8 = 36;

impl Pose {
    pub fn heading(&self) -> f64 {
        (self.heading_idx as f64 * 10.0).to_radians()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn meta(dims: [u32; 3], origin: [f64; 3], res: f64) -> GridMeta {
        GridMeta::new(dims, origin, res).unwrap()
    }

    #[test]
    fn world_to_index_examples() {
        let m = meta([10, 10, 10], [0.0; 3], 0.1);
        assert_eq!(m.world_to_index([0.05, 0.05, 0.05]), Some(Voxel::new(0, 0, 0)));
        assert_eq!(m.world_to_index([1.0, 0.0, 0.0]), None);
        let m = meta([100, 100, 100], [-1.0, -1.0, 0.0], 0.1);
        assert_eq!(m.world_to_index([0.0, 0.0, 0.25]), Some(Voxel::new(10, 10, 2)));
    }

    #[test]
    fn index_to_center_examples() {
        let m = meta([10, 10, 10], [0.0; 3], 0.1);
        let c = m.index_to_center(Voxel::new(0, 0, 0)).unwrap();
        assert!(c.iter().all(|&x| (x - 0.05).abs() < 1e-12));
        let c = m.index_to_center(Voxel::new(9, 0, 0)).unwrap();
        assert!((c[0] - 0.95).abs() < 1e-12 && (c[1] - 0.05).abs() < 1e-12);
        assert!(m.index_to_center(Voxel::new(10, 0, 0)).is_err());
    }

    #[test]
    fn center_round_trip() {
        let m = meta([37, 53, 19], [-1.3, 2.7, -0.4], 0.07);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = Voxel::new(rng.gen_range(0..37), rng.gen_range(0..53), rng.gen_range(0..19));
            assert_eq!(m.world_to_index(m.index_to_center(v).unwrap()), Some(v));
        }
    }

    #[test]
    fn bad_meta_rejected() {
        assert!(GridMeta::new([0, 1, 1], [0.0; 3], 0.1).is_err());
        assert!(GridMeta::new([1, 1, 1], [0.0; 3], 0.0).is_err());
    }

    #[test]
    fn pack_order_is_lexicographic() {
        let a = Voxel::new(1, 0, 5);
        let b = Voxel::new(0, 7, 9);
        assert!(a > b);
        assert!(a.pack() > b.pack());
        assert_eq!(Voxel::unpack(a.pack()), a);
    }

    #[test]
    fn grid_insert_idempotent_and_sorted() {
        let m = meta([4, 5, 6], [0.0; 3], 0.1);
        let mut g = OccupancyGrid::new(m);
        assert!(g.insert(Voxel::new(3, 1, 2)).unwrap());
        assert!(!g.insert(Voxel::new(3, 1, 2)).unwrap());
        g.insert(Voxel::new(0, 4, 5)).unwrap();
        g.insert(Voxel::new(0, 4, 0)).unwrap();
        assert_eq!(g.len(), 3);
        let got: Vec<_> = g.iter().collect();
        let mut sorted = got.clone();
        sorted.sort();
        assert_eq!(got, sorted);
        assert!(g.insert(Voxel::new(4, 0, 0)).is_err());
        assert!(!g.is_occupied(Voxel::new(-1, 0, 0)));
    }
}
