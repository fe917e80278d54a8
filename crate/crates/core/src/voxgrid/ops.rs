use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::FRAC_PI_2;

use super::{GridMeta, Voxel};

/// Result of a reachability flood fill.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FloodFill {
    pub reached: BTreeSet<Voxel>,
    /// Set when the seed is missing from the score map or scores zero.
    pub seed_rejected: bool,
}

/// Voxels connected to `seed` through 26-neighbor steps over voxels whose
/// score is strictly positive.
pub fn flood_fill_reachable(scores: &BTreeMap<Voxel, f64>, seed: Voxel) -> FloodFill {
    match scores.get(&seed) {
        Some(&s) if s > 0.0 => {}
        _ => {
            return FloodFill {
                reached: BTreeSet::new(),
                seed_rejected: true,
            }
        }
    }
    let mut reached = BTreeSet::from([seed]);
    let mut queue = VecDeque::from([seed]);
    while let Some(v) = queue.pop_front() {
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let n = v.offset(di, dj, dk);
                    if reached.contains(&n) {
                        continue;
                    }
                    if scores.get(&n).is_some_and(|&s| s > 0.0) {
                        reached.insert(n);
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    FloodFill {
        reached,
        seed_rejected: false,
    }
}

/// `(cos, sin)` of `yaw`, exact for multiples of a quarter turn.
pub(crate) fn yaw_trig(yaw: f64) -> (f64, f64) {
    let quarters = yaw / FRAC_PI_2;
    let r = quarters.round();
    if (quarters - r).abs() < 1e-12 {
        match (r as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (yaw.cos(), yaw.sin())
    }
}

/// Rotates a world point by `-yaw` about the vertical axis through `center`.
pub(crate) fn rotate_point(p: [f64; 3], center: [f64; 3], cos: f64, sin: f64) -> [f64; 3] {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    [
        center[0] + cos * dx + sin * dy,
        center[1] - sin * dx + cos * dy,
        p[2],
    ]
}

/// Maps voxel centers of `src` through a rotation by `-yaw` about the
/// vertical axis through `center`, then re-quantizes into `dst`. Duplicates
/// collapse and coordinates falling outside `dst` are dropped.
pub fn rotate_coords_about_z(
    coords: impl IntoIterator<Item = Voxel>,
    src: &GridMeta,
    yaw: f64,
    center: [f64; 3],
    dst: &GridMeta,
) -> BTreeSet<Voxel> {
    let (c, s) = yaw_trig(yaw);
    coords
        .into_iter()
        .filter_map(|v| dst.world_to_index(rotate_point(src.center_unchecked(v), center, c, s)))
        .collect()
}
