//! Robot-centric training windows: extraction from (grid, traversability)
//! pairs, label marginalization for the three output heads, augmentation,
//! and the TWND dataset file.

mod io;

pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::Action;
use crate::seeding;
use crate::voxgrid::{flood_fill_reachable, GridMeta, OccupancyGrid, Pose, TravTensor, Voxel};

pub const WINDOW_DIMS: [u32; 3] = [80, 80, 40];
pub const WINDOW_CENTER: Voxel = Voxel::new(40, 40, 20);

/// Output head of the network, i.e. how the traversability tensor is
/// marginalized into per-voxel labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Mean over all headings and actions.
    Total,
    /// Four motion-direction bins in the robot frame.
    Dir4,
    /// 18 heading channels, folding each heading with its opposite.
    Orient,
}

impl Head {
    pub fn channels(self) -> usize {
        match self {
            Head::Total => 1,
            Head::Dir4 => 4,
            Head::Orient => 18,
        }
    }

    pub fn from_channels(c: usize) -> Option<Head> {
        match c {
            1 => Some(Head::Total),
            4 => Some(Head::Dir4),
            18 => Some(Head::Orient),
            _ => None,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Total => "total",
            Head::Dir4 => "dir4",
            Head::Orient => "orient",
        })
    }
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Head::Total),
            "dir4" => Ok(Head::Dir4),
            "orient" => Ok(Head::Orient),
            _ => Err(Error::usage(format!("unknown head {s:?} (expected total, dir4 or orient)"))),
        }
    }
}

/// Per-voxel label: one value per channel plus a presence mask. Absent
/// channels carry 0 and are excluded from losses and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub values: Vec<f32>,
    pub present: Vec<bool>,
}

impl Label {
    /// Mean over present channels; `None` when no channel is present.
    pub fn mean(&self) -> Option<f64> {
        let (s, n) = self
            .values
            .iter()
            .zip(&self.present)
            .filter(|(_, &p)| p)
            .fold((0.0, 0), |(s, n), (&v, _)| (s + v as f64, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Direction bin of a world-frame motion angle in degrees:
/// up `[315, 45)`, right `[45, 135)`, down `[135, 225)`, left `[225, 315)`.
pub fn dir4_bin(theta_deg: i32) -> usize {
    (((theta_deg + 45).rem_euclid(360)) / 90) as usize
}

/// Collapses every `(heading_idx, action_idx, score)` entry of one voxel into
/// the head's channels. `frame_heading` re-expresses heading-dependent
/// channels relative to a robot frame (0 for the world frame).
pub fn marginalize(entries: &[(u8, u8, f64)], head: Head, frame_heading: u8) -> Result<Label> {
    if entries.is_empty() {
        return Err(Error::usage("marginalize needs at least one entry"));
    }
    let c = head.channels();
    let mut sum = vec![0.0f64; c];
    let mut n = vec![0u32; c];
    for &(h, a, s) in entries {
        let action = Action::from_index(a).ok_or_else(|| Error::usage(format!("action index {a} out of range")))?;
        let rel = h as i32 - frame_heading as i32;
        let ch = match head {
            Head::Total => Some(0),
            Head::Orient => Some(rel.rem_euclid(18) as usize),
            Head::Dir4 => action.direction_offset_deg().map(|off| dir4_bin(rel * 10 + off)),
        };
        if let Some(ch) = ch {
            sum[ch] += s;
            n[ch] += 1;
        }
    }
    Ok(Label {
        values: sum.iter().zip(&n).map(|(&s, &k)| if k > 0 { (s / k as f64) as f32 } else { 0.0 }).collect(),
        present: n.iter().map(|&k| k > 0).collect(),
    })
}

/// One robot-centric training example in window coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub head: Head,
    /// Yaw of the centering pose, radians.
    pub yaw: f32,
    /// Source-grid voxel of the robot base.
    pub center: Voxel,
    pub input: BTreeSet<Voxel>,
    pub labels: BTreeMap<Voxel, Label>,
}

/// Geometry of the window frame of a pose on `src`: the destination grid and
/// the rotation center, placed so the base voxel lands on `WINDOW_CENTER`.
pub fn window_frame(src: &GridMeta, base: Voxel) -> Result<(GridMeta, [f64; 3])> {
    let c = src.index_to_center(base)?;
    let r = src.resolution;
    let half = [
        WINDOW_CENTER.i as f64 + 0.5,
        WINDOW_CENTER.j as f64 + 0.5,
        WINDOW_CENTER.k as f64 + 0.5,
    ];
    let origin = [c[0] - half[0] * r, c[1] - half[1] * r, c[2] - half[2] * r];
    Ok((GridMeta::new(WINDOW_DIMS, origin, r)?, c))
}

/// Rigid map between world meters and the window frame of a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFrame {
    pub meta: GridMeta,
    pub center: [f64; 3],
    pub yaw: f64,
}

impl WindowFrame {
    pub fn for_pose(src: &GridMeta, pose: &Pose) -> Result<Self> {
        let base = src
            .world_to_index(pose.p)
            .ok_or_else(|| Error::usage(format!("pose {:?} lies outside the grid", pose.p)))?;
        let (meta, center) = window_frame(src, base)?;
        Ok(Self {
            meta,
            center,
            yaw: pose.heading(),
        })
    }

    pub fn to_window(&self, q: [f64; 3]) -> [f64; 3] {
        let (c, s) = crate::voxgrid::ops::yaw_trig(self.yaw);
        crate::voxgrid::ops::rotate_point(q, self.center, c, s)
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (c, s) = crate::voxgrid::ops::yaw_trig(self.yaw);
        crate::voxgrid::ops::rotate_point(p, self.center, c, -s)
    }
}

fn window_source_box(base: Voxel) -> (Voxel, Voxel) {
    // horizontal reach of the rotated square, vertical reach of the window
    let reach = ((WINDOW_DIMS[0] as f64 / 2.0 + 1.0) * std::f64::consts::SQRT_2).ceil() as i32;
    let kz = WINDOW_DIMS[2] as i32 / 2 + 1;
    (base.offset(-reach, -reach, -kz), base.offset(reach, reach, kz))
}

/// Per-voxel grouped traversability entries, as consumed by window extraction.
pub type VoxelEntries = BTreeMap<Voxel, Vec<(u8, u8, f64)>>;

pub fn extract_window(grid: &OccupancyGrid, trav: &TravTensor, pose: &Pose, head: Head) -> Result<Window> {
    extract_window_from(grid, &trav.by_voxel(), pose, head)
}

/// [`extract_window`] over pre-grouped entries.
pub fn extract_window_from(grid: &OccupancyGrid, entries: &VoxelEntries, pose: &Pose, head: Head) -> Result<Window> {
    let src = grid.meta();
    let base = src
        .world_to_index(pose.p)
        .ok_or_else(|| Error::usage(format!("pose {:?} lies outside the grid", pose.p)))?;
    let (dst, center) = window_frame(src, base)?;
    let yaw = pose.heading();
    let (lo, hi) = window_source_box(base);
    let input = crate::voxgrid::rotate_coords_about_z(grid.iter_box(lo, hi), src, yaw, center, &dst);

    let (c, s) = crate::voxgrid::ops::yaw_trig(yaw);
    let mut acc: BTreeMap<Voxel, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
    for (v, e) in entries.range(lo..=hi) {
        if v.j < lo.j || v.j > hi.j || v.k < lo.k || v.k > hi.k {
            continue;
        }
        let p = crate::voxgrid::ops::rotate_point(src.center_unchecked(*v), center, c, s);
        let Some(w) = dst.world_to_index(p) else {
            continue;
        };
        let label = marginalize(e, head, pose.heading_idx)?;
        let slot = acc
            .entry(w)
            .or_insert_with(|| (vec![0.0; head.channels()], vec![0; head.channels()]));
        for ch in 0..head.channels() {
            if label.present[ch] {
                slot.0[ch] += label.values[ch] as f64;
                slot.1[ch] += 1;
            }
        }
    }
    let labels = acc
        .into_iter()
        .filter(|(_, (_, n))| n.iter().any(|&k| k > 0))
        .map(|(w, (sum, n))| {
            let label = Label {
                values: sum.iter().zip(&n).map(|(&s, &k)| if k > 0 { (s / k as f64) as f32 } else { 0.0 }).collect(),
                present: n.iter().map(|&k| k > 0).collect(),
            };
            (w, label)
        })
        .collect();
    Ok(Window {
        head,
        yaw: yaw as f32,
        center: base,
        input,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Input dropout probability at the window center.
    pub dropout_min: f64,
    /// Input dropout probability at (and beyond) the window edge.
    pub dropout_max: f64,
    /// Per occupied voxel probability of spawning a neighbor.
    pub noise_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            dropout_min: 0.02,
            dropout_max: 0.20,
            noise_prob: 0.02,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            dropout_min: 0.0,
            dropout_max: 0.0,
            noise_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.dropout_min) || !unit(self.dropout_max) || !unit(self.noise_prob) {
            return Err(Error::usage("augmentation probabilities must lie in [0, 1]"));
        }
        if self.dropout_min > self.dropout_max {
            return Err(Error::usage("dropout_min must not exceed dropout_max"));
        }
        Ok(())
    }

    /// Dropout probability at horizontal distance `r` from the center, in
    /// voxels of a window whose edge lies `edge` voxels away.
    pub fn dropout_at(&self, r: f64, edge: f64) -> f64 {
        self.dropout_min + (self.dropout_max - self.dropout_min) * (r / edge).min(1.0)
    }
}

pub fn window_contains(v: Voxel) -> bool {
    (0..WINDOW_DIMS[0] as i32).contains(&v.i)
        && (0..WINDOW_DIMS[1] as i32).contains(&v.j)
        && (0..WINDOW_DIMS[2] as i32).contains(&v.k)
}

/// Zeroes every label not connected to the window center through voxels of
/// positive mean label. Labels keep their place in the target support.
pub fn restrict_to_reachable(window: &mut Window) -> bool {
    let scores: BTreeMap<Voxel, f64> = window
        .labels
        .iter()
        .map(|(v, l)| (*v, l.mean().unwrap_or(0.0)))
        .collect();
    let fill = flood_fill_reachable(&scores, WINDOW_CENTER);
    for (v, l) in window.labels.iter_mut() {
        if !fill.reached.contains(v) {
            l.values.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    !fill.seed_rejected
}

/// Reachability restriction, radial input dropout and surface noise.
pub fn augment(window: &Window, seed: u64, cfg: &AugmentConfig) -> Window {
    let mut out = window.clone();
    restrict_to_reachable(&mut out);
    let mut rng = seeding::rng(seed, 3);
    let edge = WINDOW_DIMS[0] as f64 / 2.0;
    let c = [WINDOW_CENTER.i as f64, WINDOW_CENTER.j as f64];
    let kept: BTreeSet<Voxel> = window
        .input
        .iter()
        .copied()
        .filter(|v| {
            let r = (v.i as f64 - c[0]).hypot(v.j as f64 - c[1]);
            let p = cfg.dropout_at(r, edge);
            !(p > 0.0 && rng.gen_bool(p))
        })
        .collect();
    let mut noisy = kept.clone();
    if cfg.noise_prob > 0.0 {
        for v in &kept {
            if !rng.gen_bool(cfg.noise_prob) {
                continue;
            }
            let free: Vec<Voxel> = (0..27)
                .filter(|&d| d != 13)
                .map(|d| v.offset(d / 9 - 1, (d / 3) % 3 - 1, d % 3 - 1))
                .filter(|n| window_contains(*n) && !kept.contains(n))
                .collect();
            if let Some(n) = free.choose(&mut rng) {
                noisy.insert(*n);
            }
        }
    }
    out.input = noisy;
    out
}

/// Window sampling for a whole scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub head: Head,
    /// Windows per scene; capped by the number of start configurations.
    pub count: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            head: Head::Total,
            count: 32,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

/// Samples windows centered on evaluated start configurations of `trav`.
pub fn build_windows(grid: &OccupancyGrid, trav: &TravTensor, cfg: &WindowConfig, jobs: usize) -> Result<Vec<Window>> {
    if let Some(a) = &cfg.augment {
        a.validate()?;
    }
    let mut starts = trav.start_keys();
    let mut rng = seeding::rng(cfg.seed, 4);
    starts.shuffle(&mut rng);
    starts.truncate(cfg.count);
    let entries = trav.by_voxel();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        starts
            .par_iter()
            .enumerate()
            .map(|(n, &(v, h))| {
                let pose = Pose {
                    p: grid.meta().index_to_center(v)?,
                    heading_idx: h,
                    roll: 0.0,
                    pitch: 0.0,
                };
                let w = extract_window_from(grid, &entries, &pose, cfg.head)?;
                Ok(match &cfg.augment {
                    Some(a) => augment(&w, seeding::mix(cfg.seed, n as u64), a),
                    None => w,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub head: Head,
    pub windows: Vec<Window>,
}

impl Dataset {
    pub fn new(head: Head, windows: Vec<Window>) -> Result<Self> {
        if let Some(w) = windows.iter().find(|w| w.head != head) {
            return Err(Error::usage(format!("window head {} does not match dataset head {head}", w.head)));
        }
        Ok(Self { head, windows })
    }
}

#[cfg(test)]
mod tests;
