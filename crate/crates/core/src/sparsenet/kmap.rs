//! Coordinate bookkeeping for sparse convolutions: output coordinate sets
//! and per-offset (input row, output row) pairs.

use rustc_hash::FxHashMap;

pub type Coord = [i32; 3];

/// Number of offsets of a size-4 kernel.
pub const KVOL: usize = 64;

/// Offset `(dx, dy, dz)`, each in `-1..=2` (units of the fine stride).
pub fn offset_of(index: usize) -> [i32; 3] {
    [(index / 16) as i32 - 1, ((index / 4) % 4) as i32 - 1, (index % 4) as i32 - 1]
}

#[cfg(test)]
pub fn offset_index(d: [i32; 3]) -> usize {
    ((d[0] + 1) * 16 + (d[1] + 1) * 4 + (d[2] + 1)) as usize
}

fn key(c: Coord) -> u64 {
    const B: i64 = 1 << 20;
    let p = |x: i32| ((x as i64 + B) as u64) & 0x1F_FFFF;
    p(c[0]) << 42 | p(c[1]) << 21 | p(c[2])
}

/// Row lookup for a sorted coordinate list.
pub struct CoordIndex {
    map: FxHashMap<u64, u32>,
}

impl CoordIndex {
    pub fn new(coords: &[Coord]) -> Self {
        let mut map = FxHashMap::default();
        map.reserve(coords.len());
        for (r, &c) in coords.iter().enumerate() {
            map.insert(key(c), r as u32);
        }
        Self { map }
    }

    #[inline]
    pub fn get(&self, c: Coord) -> Option<u32> {
        self.map.get(&key(c)).copied()
    }
}

/// Rule book of one convolution: pairs grouped by kernel offset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelMap {
    /// `(input row, output row)`.
    pub pairs: Vec<[u32; 2]>,
    /// `pairs[ranges[o]..ranges[o + 1]]` belong to offset `o`.
    pub ranges: Vec<u32>,
}

impl KernelMap {
    fn from_groups(groups: Vec<Vec<[u32; 2]>>) -> Self {
        let mut ranges = Vec::with_capacity(groups.len() + 1);
        let mut pairs = Vec::with_capacity(groups.iter().map(Vec::len).sum());
        ranges.push(0);
        for g in groups {
            pairs.extend_from_slice(&g);
            ranges.push(pairs.len() as u32);
        }
        Self { pairs, ranges }
    }

    pub fn offsets(&self) -> usize {
        self.ranges.len().saturating_sub(1)
    }

    pub fn group(&self, o: usize) -> &[[u32; 2]] {
        &self.pairs[self.ranges[o] as usize..self.ranges[o + 1] as usize]
    }

    /// Identity map for kernel size 1.
    pub fn identity(n: usize) -> Self {
        Self {
            pairs: (0..n as u32).map(|r| [r, r]).collect(),
            ranges: vec![0, n as u32],
        }
    }
}

/// Strided size-4 convolution: output coordinates are the input coordinates
/// floor-divided by `2 * stride`; output `o` reads inputs `o + d * stride`.
pub fn conv_map(input: &[Coord], stride: i32) -> (Vec<Coord>, KernelMap) {
    let s2 = 2 * stride;
    let mut out: Vec<Coord> = input.iter().map(|c| c.map(|x| x.div_euclid(s2) * s2)).collect();
    out.sort_unstable();
    out.dedup();
    let index = CoordIndex::new(input);
    let mut groups = vec![Vec::new(); KVOL];
    for (ro, o) in out.iter().enumerate() {
        for (k, g) in groups.iter_mut().enumerate() {
            let d = offset_of(k);
            let c = [o[0] + d[0] * stride, o[1] + d[1] * stride, o[2] + d[2] * stride];
            if let Some(ri) = index.get(c) {
                g.push([ri, ro as u32]);
            }
        }
    }
    (out, KernelMap::from_groups(groups))
}

/// Generative transposed convolution from `stride` to `stride / 2`: every
/// input spawns its 64 kernel children; children outside `[0, bounds)` are
/// dropped.
pub fn tconv_map(input: &[Coord], stride: i32, bounds: Option<[i32; 3]>) -> (Vec<Coord>, KernelMap) {
    let s = stride / 2;
    let inside = |c: &Coord| bounds.is_none_or(|b| (0..3).all(|a| c[a] >= 0 && c[a] < b[a]));
    let child = |p: &Coord, k: usize| {
        let d = offset_of(k);
        [p[0] + d[0] * s, p[1] + d[1] * s, p[2] + d[2] * s]
    };
    let mut out: Vec<Coord> = Vec::with_capacity(input.len() * 16);
    for p in input {
        out.extend((0..KVOL).map(|k| child(p, k)).filter(inside));
    }
    out.sort_unstable();
    out.dedup();
    let index = CoordIndex::new(&out);
    let mut groups = vec![Vec::new(); KVOL];
    for (ri, p) in input.iter().enumerate() {
        for (k, g) in groups.iter_mut().enumerate() {
            if let Some(ro) = index.get(child(p, k)) {
                g.push([ri as u32, ro]);
            }
        }
    }
    (out, KernelMap::from_groups(groups))
}

/// Sorted union of two sorted coordinate lists with each side's row map.
pub fn union(a: &[Coord], b: &[Coord]) -> (Vec<Coord>, Vec<u32>, Vec<u32>) {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut ia = Vec::with_capacity(a.len());
    let mut ib = Vec::with_capacity(b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let r = out.len() as u32;
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            ia.push(r);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            ib.push(r);
            j += 1;
        } else {
            out.push(a[i]);
            ia.push(r);
            ib.push(r);
            i += 1;
            j += 1;
        }
    }
    (out, ia, ib)
}
