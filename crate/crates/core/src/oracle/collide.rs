use crate::voxelize::BodyState;
use crate::voxgrid::{OccupancyGrid, Voxel};

use super::RobotModel;

const TOUCH: f64 = 1e-9;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Separating-axis test between an oriented box and an axis-aligned box.
/// Boxes that only touch do not overlap.
pub(crate) fn obb_aabb_overlap(
    center: [f64; 3],
    axes: &[[f64; 3]; 3],
    half: [f64; 3],
    box_center: [f64; 3],
    box_half: [f64; 3],
) -> bool {
    let t = [
        center[0] - box_center[0],
        center[1] - box_center[1],
        center[2] - box_center[2],
    ];
    // r[i][j]: component i of obb axis j
    let mut r = [[0.0; 3]; 3];
    let mut ar = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = axes[j][i];
            ar[i][j] = r[i][j].abs() + 1e-12;
        }
    }
    for i in 0..3 {
        let rb = half[0] * ar[i][0] + half[1] * ar[i][1] + half[2] * ar[i][2];
        if t[i].abs() >= box_half[i] + rb - TOUCH {
            return false;
        }
    }
    for j in 0..3 {
        let ra = box_half[0] * ar[0][j] + box_half[1] * ar[1][j] + box_half[2] * ar[2][j];
        if dot(t, axes[j]).abs() >= ra + half[j] - TOUCH {
            return false;
        }
    }
    for i in 0..3 {
        let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
        for j in 0..3 {
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            // axis e_i x b_j
            let ra = box_half[i1] * ar[i2][j] + box_half[i2] * ar[i1][j];
            let rb = half[j1] * ar[i][j2] + half[j2] * ar[i][j1];
            let d = (t[i2] * r[i1][j] - t[i1] * r[i2][j]).abs();
            let len = (1.0 - r[i][j] * r[i][j]).max(0.0).sqrt();
            if d >= ra + rb - TOUCH * len {
                return false;
            }
        }
    }
    true
}

/// Whether the posed body box overlaps any occupied voxel.
pub fn body_collides(grid: &OccupancyGrid, body: &BodyState, robot: &RobotModel) -> bool {
    let axes = body.axes();
    let half = [robot.body[0] / 2.0, robot.body[1] / 2.0, robot.body[2] / 2.0];
    let u = axes[2];
    let center = [
        body.base[0] + u[0] * half[2],
        body.base[1] + u[1] * half[2],
        body.base[2] + u[2] * half[2],
    ];
    let m = grid.meta();
    let r = m.resolution;
    let mut lo = [0i32; 3];
    let mut hi = [0i32; 3];
    for a in 0..3 {
        let ext: f64 = (0..3).map(|j| half[j] * axes[j][a].abs()).sum();
        lo[a] = ((center[a] - ext - m.origin[a]) / r).floor() as i32;
        hi[a] = ((center[a] + ext - m.origin[a]) / r).floor() as i32;
    }
    let vh = [r / 2.0; 3];
    grid.iter_box(Voxel::new(lo[0], lo[1], lo[2]), Voxel::new(hi[0], hi[1], hi[2]))
        .any(|v| obb_aabb_overlap(center, &axes, half, m.center_unchecked(v), vh))
}
