//! Mesh voxelization plus the geometric queries the traversal oracle runs
//! on occupancy grids: per-column support height and terrain-aligned poses.

mod tribox;

pub use tribox::tri_box_overlap;

use crate::oracle::RobotModel;
use crate::terrain::TriMesh;
use crate::voxgrid::{GridMeta, OccupancyGrid, Pose, Voxel};

/// Fraction of a voxel trimmed from the max faces so that closed-box tests
/// implement half-open cells.
pub(crate) const HALF_OPEN_EPS: f64 = 1e-9;

/// Occupancy of every voxel whose half-open cell intersects a triangle.
/// Triangles (or parts of them) outside `bounds` are ignored.
pub fn voxelize_mesh(mesh: &TriMesh, bounds: &GridMeta) -> OccupancyGrid {
    let mut grid = OccupancyGrid::new(*bounds);
    let r = bounds.resolution;
    let eps = HALF_OPEN_EPS * r;
    let half = [(r - eps) / 2.0; 3];
    let d = bounds.dims.map(|x| x as i32);
    for t in &mesh.triangles {
        let tri = mesh.triangle(t);
        let mut lo = [0i32; 3];
        let mut hi = [0i32; 3];
        for a in 0..3 {
            let mn = tri[0][a].min(tri[1][a]).min(tri[2][a]);
            let mx = tri[0][a].max(tri[1][a]).max(tri[2][a]);
            lo[a] = (((mn - bounds.origin[a]) / r).floor() as i32).max(0);
            hi[a] = (((mx - bounds.origin[a]) / r).floor() as i32).min(d[a] - 1);
        }
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let v = Voxel::new(i, j, k);
                    if grid.is_occupied(v) {
                        continue;
                    }
                    let c = [
                        bounds.origin[0] + i as f64 * r + half[0],
                        bounds.origin[1] + j as f64 * r + half[1],
                        bounds.origin[2] + k as f64 * r + half[2],
                    ];
                    if tri_box_overlap(c, half, tri) {
                        grid.insert(v).expect("index clamped to bounds");
                    }
                }
            }
        }
    }
    grid
}

/// Limits used when searching for a foot support surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportParams {
    pub step_up_max: f64,
    pub drop_max: f64,
    /// Free space required directly above a support surface.
    pub clearance_height: f64,
}

impl Default for SupportParams {
    fn default() -> Self {
        Self {
            step_up_max: 0.17,
            drop_max: 0.22,
            clearance_height: 0.2,
        }
    }
}

const Q_EPS: f64 = 1e-9;

/// Top-face height of the highest occupied voxel in the column under
/// `(x, y)` whose top lies in `[z_ref - drop_max, z_ref + step_up_max]` and
/// that has `clearance_height` of free voxels directly above it.
pub fn support_at(grid: &OccupancyGrid, x: f64, y: f64, z_ref: f64, params: &SupportParams) -> Option<f64> {
    let m = grid.meta();
    let col = m.quantize([x, y, m.origin[2]]);
    if !m.contains(Voxel::new(col.i, col.j, 0)) {
        return None;
    }
    let r = m.resolution;
    let oz = m.origin[2];
    let k_max = ((z_ref + params.step_up_max - oz) / r + Q_EPS).floor() as i64 - 1;
    let k_min = ((z_ref - params.drop_max - oz) / r - Q_EPS).ceil() as i64 - 1;
    let k_max = k_max.min(m.dims[2] as i64 - 1);
    let k_min = k_min.max(0);
    let need = (params.clearance_height / r - Q_EPS).ceil().max(0.0) as i32;
    let mut k = k_max;
    while k >= k_min {
        let v = Voxel::new(col.i, col.j, k as i32);
        if grid.is_occupied(v) && (1..=need).all(|d| !grid.is_occupied(v.offset(0, 0, d))) {
            return Some(m.layer_top(k as i32));
        }
        k -= 1;
    }
    None
}

/// Horizontal unit direction of a yaw given in 5° units.
///
/// Opposite yaws return exactly negated vectors, which keeps the oracle's
/// fore-aft symmetry bit-exact.
pub fn yaw_dir(units5: i32) -> (f64, f64) {
    let u = units5.rem_euclid(72);
    if u >= 36 {
        let (c, s) = yaw_dir(u - 36);
        return (-c, -s);
    }
    match u {
        0 => (1.0, 0.0),
        18 => (0.0, 1.0),
        _ => {
            let a = (u as f64 * 5.0).to_radians();
            (a.cos(), a.sin())
        }
    }
}

/// A ground-following body configuration, the intermediate result behind
/// [`Pose`]. Yaw is kept in 5° units so sweeps can pass between headings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub base: [f64; 3],
    pub yaw5: i32,
    pub roll: f64,
    pub pitch: f64,
    /// Support heights, in the robot's fixed foot order.
    pub feet: [f64; 4],
    /// Ground plane gradient `(dz/dx, dz/dy)`.
    pub gradient: [f64; 2],
}

impl BodyState {
    /// Body axes `(forward, left, up)` tilted with the fitted ground plane.
    pub fn axes(&self) -> [[f64; 3]; 3] {
        let (dx, dy) = yaw_dir(self.yaw5);
        let (lx, ly) = (-dy, dx);
        let g = self.gradient;
        let norm = |v: [f64; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let f = norm([dx, dy, g[0] * dx + g[1] * dy]);
        let l0 = norm([lx, ly, g[0] * lx + g[1] * ly]);
        let u = norm([
            f[1] * l0[2] - f[2] * l0[1],
            f[2] * l0[0] - f[0] * l0[2],
            f[0] * l0[1] - f[1] * l0[0],
        ]);
        let l = [
            u[1] * f[2] - u[2] * f[1],
            u[2] * f[0] - u[0] * f[2],
            u[0] * f[1] - u[1] * f[0],
        ];
        [f, l, u]
    }

    pub fn to_pose(&self) -> Pose {
        debug_assert!(self.yaw5 % 2 == 0);
        Pose {
            p: self.base,
            heading_idx: (self.yaw5.rem_euclid(72) / 2) as u8,
            roll: self.roll,
            pitch: self.pitch,
        }
    }
}

/// World xy of the robot's feet for a base at `(x, y)` and yaw in 5° units.
pub fn foot_positions(robot: &RobotModel, x: f64, y: f64, yaw5: i32) -> [[f64; 2]; 4] {
    let (c, s) = yaw_dir(yaw5);
    robot.foot_offsets().map(|[fx, fy]| [x + c * fx - s * fy, y + s * fx + c * fy])
}

/// Ground-follows the robot at `(x, y)` with per-foot reference heights.
pub fn align_body(
    grid: &OccupancyGrid,
    x: f64,
    y: f64,
    yaw5: i32,
    foot_refs: [f64; 4],
    robot: &RobotModel,
    params: &SupportParams,
) -> Option<BodyState> {
    let feet_xy = foot_positions(robot, x, y, yaw5);
    let mut feet = [0.0; 4];
    for f in 0..4 {
        feet[f] = support_at(grid, feet_xy[f][0], feet_xy[f][1], foot_refs[f], params)?;
    }
    let mut pts: [[f64; 3]; 4] = std::array::from_fn(|f| [feet_xy[f][0], feet_xy[f][1], feet[f]]);
    // order-independent fit: identical point sets give identical planes
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    let (gradient, mean_z) = fit_plane(&pts);
    let (dx, dy) = yaw_dir(yaw5);
    let pitch = (gradient[0] * dx + gradient[1] * dy).atan();
    let roll = (gradient[0] * -dy + gradient[1] * dx).atan();
    Some(BodyState {
        base: [x, y, mean_z + robot.standing_clearance],
        yaw5,
        roll,
        pitch,
        feet,
        gradient,
    })
}

/// Least-squares plane `z = mean + g·(p - centroid)`; returns `(g, mean z)`.
fn fit_plane(pts: &[[f64; 3]; 4]) -> ([f64; 2], f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mz = pts.iter().map(|p| p[2]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pts {
        let (x, y, z) = (p[0] - mx, p[1] - my, p[2] - mz);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() < 1e-12 {
        return ([0.0, 0.0], mz);
    }
    let gx = (sxz * syy - syz * sxy) / det;
    let gy = (syz * sxx - sxz * sxy) / det;
    ([gx, gy], mz)
}

/// Terrain-aligned pose at `(x, y)` with every foot searching for support
/// around `z_ref`; `None` when any foot lacks support.
pub fn align_pose(
    grid: &OccupancyGrid,
    x: f64,
    y: f64,
    z_ref: f64,
    heading_idx: u8,
    robot: &RobotModel,
    params: &SupportParams,
) -> Option<Pose> {
    align_body(grid, x, y, heading_idx as i32 * 2, [z_ref; 4], robot, params).map(|b| b.to_pose())
}

#[cfg(test)]
mod tests;
