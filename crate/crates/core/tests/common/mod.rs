#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxtrav::dataset::{Head, Label, Window};
use voxtrav::oracle::{rollout, sample_start_poses, Action, CollectConfig, RobotModel, StartSampling, TrialRandomization};
use voxtrav::terrain::{generate_terrain, TerrainConfig};
use voxtrav::voxelize::voxelize_mesh;
use voxtrav::voxgrid::{GridMeta, OccupancyGrid, Pose, SparseTensor, TravTensor, Voxel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fill(g: &mut OccupancyGrid, lo: [i32; 3], hi: [i32; 3]) {
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                g.insert(Voxel::new(i, j, k)).unwrap();
            }
        }
    }
}

/// One-voxel-thick floor filling layer 0.
pub fn floor(dims: [u32; 3], res: f64, z0: f64) -> OccupancyGrid {
    let m = GridMeta::new(dims, [0.0, 0.0, z0], res).unwrap();
    let mut g = OccupancyGrid::new(m);
    fill(&mut g, [0, 0, 0], [dims[0] as i32 - 1, dims[1] as i32 - 1, 0]);
    g
}

/// Feasible start pose whose base lies in the column of `(x, y)`.
pub fn start_pose(g: &OccupancyGrid, x: f64, y: f64, heading_idx: u8) -> Pose {
    let robot = RobotModel::default();
    let limits = TrialRandomization::default().nominal();
    let sampling = StartSampling {
        xy_step: 1,
        heading_step: 1,
    };
    let target = g.meta().quantize([x, y, 0.0]);
    sample_start_poses(g, &robot, &limits, sampling)
        .into_iter()
        .find(|s| s.heading_idx == heading_idx && s.voxel.i == target.i && s.voxel.j == target.j)
        .unwrap_or_else(|| panic!("no start pose at ({x}, {y}) heading {heading_idx}"))
        .pose
}

/// Fraction of successful rollouts over `n` trials for each seed.
pub fn success_rate(g: &OccupancyGrid, pose: &Pose, a: Action, seeds: std::ops::Range<u64>, n: u32) -> f64 {
    let robot = RobotModel::default();
    let r = TrialRandomization::default();
    let mut ok = 0u32;
    let mut total = 0u32;
    for s in seeds {
        for t in 0..n {
            ok += rollout(g, pose, a, &robot, &r.sample(s, t)) as u32;
            total += 1;
        }
    }
    ok as f64 / total as f64
}

/// Flat floor with a handful of random boxes.
pub fn random_scene(seed: u64) -> OccupancyGrid {
    let mut r = rng(seed);
    let mut g = floor([24, 24, 16], 0.1, 0.0);
    for _ in 0..r.gen_range(2..6) {
        let lo = [r.gen_range(0..22), r.gen_range(0..22), r.gen_range(0..6)];
        let size = [r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..4)];
        fill(&mut g, lo, [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]].map(|x: i32| x.min(15)));
    }
    g
}

pub fn desk_terrain() -> TerrainConfig {
    TerrainConfig {
        patch_size: 8.0,
        height_budget: 4.0,
        z_min: -1.0,
        n_objects: (8, 16),
        diameter_range: (0.2, 2.0),
        ..TerrainConfig::default()
    }
}

/// Generated 8 x 8 m patch, voxelized at 0.1 m and labelled by the oracle.
pub fn desk_patch(seed: u64, sampling: StartSampling) -> (OccupancyGrid, TravTensor) {
    let cfg = desk_terrain();
    let t = generate_terrain(seed, &cfg).unwrap();
    let grid = voxelize_mesh(&t.mesh, &cfg.grid_meta(0.1).unwrap());
    let cc = CollectConfig {
        seed,
        sampling,
        ..CollectConfig::default()
    };
    let (trav, _) = voxtrav::oracle::collect(&grid, &cc, 1).unwrap();
    (grid, trav)
}

/// A bumpy patch of ground with labels on the voxels above it.
pub fn synthetic_window(seed: u64, n: i32) -> Window {
    let mut r = rng(seed);
    let mut input = BTreeSet::new();
    let mut labels = BTreeMap::new();
    let o = 40 - n / 2;
    for i in 0..n {
        for j in 0..n {
            let h = 18 + r.gen_range(0..2);
            for k in 16..=h {
                input.insert(Voxel::new(o + i, o + j, k));
            }
            if r.gen_bool(0.8) {
                labels.insert(
                    Voxel::new(o + i, o + j, h + 1),
                    Label {
                        values: vec![r.gen_range(0.0..1.0)],
                        present: vec![true],
                    },
                );
            }
        }
    }
    Window {
        head: Head::Total,
        yaw: 0.0,
        center: Voxel::new(0, 0, 0),
        input,
        labels,
    }
}

pub fn random_tensor(r: &mut ChaCha8Rng, stride: i32, extent: i32, n: usize, width: usize) -> SparseTensor<f64> {
    let mut m = BTreeMap::new();
    for _ in 0..n {
        let c = [0; 3].map(|_| r.gen_range(0..extent / stride) * stride);
        m.insert(c, (0..width).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
    }
    SparseTensor::from_entries(stride, width, m).unwrap()
}

/// Kernel offset of flat tap index `k` in the 4 x 4 x 4 kernel, each axis in -1..=2.
pub fn tap(k: usize) -> [i32; 3] {
    [(k / 16) as i32 - 1, ((k / 4) % 4) as i32 - 1, (k % 4) as i32 - 1]
}

/// Dense zero-padded cube of feature vectors.
pub struct Dense {
    pub lo: i32,
    pub n: i32,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn new(lo: i32, n: i32, width: usize) -> Self {
        Self {
            lo,
            n,
            width,
            data: vec![0.0; (n * n * n) as usize * width],
        }
    }

    pub fn from_sparse(x: &SparseTensor<f64>, lo: i32, n: i32) -> Self {
        let mut d = Self::new(lo, n, x.width());
        for (r, &c) in x.coords().iter().enumerate() {
            d.at_mut(c).unwrap().copy_from_slice(x.feature(r));
        }
        d
    }

    fn idx(&self, c: [i32; 3]) -> Option<usize> {
        let q = c.map(|v| v - self.lo);
        q.iter()
            .all(|&v| (0..self.n).contains(&v))
            .then(|| ((q[0] * self.n + q[1]) * self.n + q[2]) as usize * self.width)
    }

    pub fn at(&self, c: [i32; 3]) -> Vec<f64> {
        match self.idx(c) {
            Some(i) => self.data[i..i + self.width].to_vec(),
            None => vec![0.0; self.width],
        }
    }

    pub fn at_mut(&mut self, c: [i32; 3]) -> Option<&mut [f64]> {
        let w = self.width;
        self.idx(c).map(move |i| &mut self.data[i..i + w])
    }
}

fn apply(block: &[f64], x: &[f64], cout: usize, acc: &mut [f64]) {
    for (i, &xv) in x.iter().enumerate() {
        for j in 0..cout {
            acc[j] += xv * block[i * cout + j];
        }
    }
}

/// Strided dense convolution: every output lattice point at stride `2s`
/// gathers `W[k]^T x(c + s * tap(k))`.
pub fn dense_conv(x: &Dense, s: i32, w: &[f64], cout: usize) -> Dense {
    let cin = x.width;
    let mut y = Dense::new(x.lo, x.n, cout);
    let lattice: Vec<i32> = (x.lo..x.lo + x.n).filter(|v| v.rem_euclid(2 * s) == 0).collect();
    for &a in &lattice {
        for &b in &lattice {
            for &c in &lattice {
                let mut acc = vec![0.0; cout];
                for k in 0..64 {
                    let d = tap(k);
                    let src = [a + d[0] * s, b + d[1] * s, c + d[2] * s];
                    apply(&w[k * cin * cout..(k + 1) * cin * cout], &x.at(src), cout, &mut acc);
                }
                y.at_mut([a, b, c]).unwrap().copy_from_slice(&acc);
            }
        }
    }
    y
}

/// Dense transposed convolution from stride `s` to `s / 2`: every input
/// point scatters `W[k]^T x` to `c + (s / 2) * tap(k)`.
pub fn dense_tconv(x: &Dense, s: i32, w: &[f64], cout: usize) -> Dense {
    let cin = x.width;
    let mut y = Dense::new(x.lo, x.n, cout);
    let h = s / 2;
    let lattice: Vec<i32> = (x.lo..x.lo + x.n).filter(|v| v.rem_euclid(s) == 0).collect();
    for &a in &lattice {
        for &b in &lattice {
            for &c in &lattice {
                let xv = x.at([a, b, c]);
                if xv.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for k in 0..64 {
                    let d = tap(k);
                    if let Some(out) = y.at_mut([a + d[0] * h, b + d[1] * h, c + d[2] * h]) {
                        apply(&w[k * cin * cout..(k + 1) * cin * cout], &xv, cout, out);
                    }
                }
            }
        }
    }
    y
}
