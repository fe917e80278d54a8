use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn meta(n: [u32; 3], res: f64) -> GridMeta {
    GridMeta::new(n, [0.0; 3], res).unwrap()
}

fn mesh_of(tris: &[[[f64; 3]; 3]]) -> TriMesh {
    let mut m = TriMesh::default();
    for t in tris {
        let b = m.vertices.len() as u32;
        m.vertices.extend_from_slice(t);
        m.triangles.push([b, b + 1, b + 2]);
    }
    m
}

/// Clips a polygon against the closed box `[lo, hi]`; non-empty result means overlap.
fn clip_overlap(tri: [[f64; 3]; 3], lo: [f64; 3], hi: [f64; 3]) -> bool {
    let mut poly: Vec<[f64; 3]> = tri.to_vec();
    for a in 0..3 {
        for (bound, keep_above) in [(lo[a], true), (hi[a], false)] {
            let inside = |p: &[f64; 3]| if keep_above { p[a] >= bound } else { p[a] <= bound };
            let mut out = Vec::new();
            for idx in 0..poly.len() {
                let p = poly[idx];
                let q = poly[(idx + 1) % poly.len()];
                let (pin, qin) = (inside(&p), inside(&q));
                if pin {
                    out.push(p);
                }
                if pin != qin {
                    let t = (bound - p[a]) / (q[a] - p[a]);
                    let mut x = [0.0; 3];
                    for c in 0..3 {
                        x[c] = p[c] + t * (q[c] - p[c]);
                    }
                    x[a] = bound;
                    out.push(x);
                }
            }
            poly = out;
            if poly.is_empty() {
                return false;
            }
        }
    }
    true
}

#[test]
fn single_triangle_in_one_cell() {
    let m = meta([10, 10, 10], 0.1);
    let t = [[0.52, 0.31, 0.45], [0.58, 0.31, 0.45], [0.52, 0.38, 0.45]];
    let g = voxelize_mesh(&mesh_of(&[t]), &m);
    assert_eq!(g.iter().collect::<Vec<_>>(), vec![Voxel::new(5, 3, 4)]);
}

#[test]
fn plane_at_zero_fills_bottom_layer() {
    let m = meta([10, 10, 10], 0.1);
    let mut mesh = TriMesh::default();
    mesh.push_quad([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
    let g = voxelize_mesh(&mesh, &m);
    assert_eq!(g.len(), 100);
    assert!(g.iter().all(|v| v.k == 0));
}

#[test]
fn outside_triangles_ignored() {
    let m = meta([4, 4, 4], 0.1);
    let t = [[2.0, 2.0, 2.0], [2.5, 2.0, 2.0], [2.0, 2.5, 2.0]];
    assert!(voxelize_mesh(&mesh_of(&[t]), &m).is_empty());
}

fn random_tri(rng: &mut ChaCha8Rng, span: f64) -> [[f64; 3]; 3] {
    let c = [rng.gen_range(0.0..span), rng.gen_range(0.0..span), rng.gen_range(0.0..span)];
    std::array::from_fn(|_| std::array::from_fn(|a| c[a] + rng.gen_range(-0.35..0.35)))
}

#[test]
fn matches_brute_force_clipping() {
    let res = 0.1;
    let m = meta([12, 12, 12], res);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let tris: Vec<_> = (0..4).map(|_| random_tri(&mut rng, 1.2)).collect();
        let g = voxelize_mesh(&mesh_of(&tris), &m);
        let eps = HALF_OPEN_EPS * res;
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    let lo = [i as f64 * res, j as f64 * res, k as f64 * res];
                    let hi = lo.map(|x| x + res - eps);
                    let want = tris.iter().any(|&t| clip_overlap(t, lo, hi));
                    assert_eq!(g.is_occupied(Voxel::new(i, j, k)), want, "voxel {i} {j} {k}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn voxelization_is_monotone(seed in 0u64..1000) {
        let m = meta([10, 10, 10], 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<_> = (0..3).map(|_| random_tri(&mut rng, 1.0)).collect();
        let mut b = a.clone();
        b.extend((0..3).map(|_| random_tri(&mut rng, 1.0)));
        let ga = voxelize_mesh(&mesh_of(&a), &m);
        let gb = voxelize_mesh(&mesh_of(&b), &m);
        prop_assert!(ga.iter().all(|v| gb.is_occupied(v)));
    }
}

fn floor_grid(n: [u32; 3]) -> OccupancyGrid {
    let m = meta(n, 0.1);
    let cells = (0..n[0] as i32).flat_map(|i| (0..n[1] as i32).map(move |j| Voxel::new(i, j, 0)));
    OccupancyGrid::from_voxels(m, cells).unwrap()
}

#[test]
fn support_examples() {
    let p = SupportParams::default();
    let mut g = floor_grid([10, 10, 10]);
    let s = support_at(&g, 0.55, 0.55, 0.1, &p).unwrap();
    assert!((s - 0.1).abs() < 1e-12);
    g.remove(Voxel::new(5, 5, 0));
    assert_eq!(support_at(&g, 0.55, 0.55, 0.1, &p), None);
    // ceiling one voxel above the floor: gap 0.1 < 0.2
    g.insert(Voxel::new(4, 4, 2)).unwrap();
    assert_eq!(support_at(&g, 0.45, 0.45, 0.1, &p), None);
    assert!(support_at(&g, 0.35, 0.45, 0.1, &p).is_some());
}

#[test]
fn support_prefers_highest_within_window() {
    let p = SupportParams::default();
    let mut g = floor_grid([4, 4, 20]);
    // a ledge 0.1 above the floor with enough headroom
    g.insert(Voxel::new(1, 1, 1)).unwrap();
    assert!((support_at(&g, 0.15, 0.15, 0.1, &p).unwrap() - 0.2).abs() < 1e-12);
    // a shelf too high to reach is ignored, and its headroom test does not matter
    g.insert(Voxel::new(2, 2, 9)).unwrap();
    assert!((support_at(&g, 0.25, 0.25, 0.1, &p).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn support_ignores_far_overhead_voxels() {
    let p = SupportParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let m = meta([3, 3, 30], 0.1);
        let mut g = OccupancyGrid::new(m);
        for k in 0..30 {
            if rng.gen_bool(0.3) {
                g.insert(Voxel::new(1, 1, k)).unwrap();
            }
        }
        let z_ref = rng.gen_range(0.0..2.0);
        let base = support_at(&g, 0.15, 0.15, z_ref, &p);
        let cut = z_ref + p.step_up_max + p.clearance_height;
        let mut h = g.clone();
        for k in 0..30 {
            if m.layer_top(k) - 0.1 > cut + 1e-9 {
                h.insert(Voxel::new(1, 1, k)).unwrap();
            }
        }
        assert_eq!(support_at(&h, 0.15, 0.15, z_ref, &p), base);
    }
}

#[test]
fn flat_floor_pose() {
    let g = floor_grid([30, 30, 20]);
    let robot = RobotModel::default();
    for h in 0..36 {
        let pose = align_pose(&g, 1.55, 1.55, 0.1, h, &robot, &SupportParams::default()).unwrap();
        assert_eq!(pose.roll, 0.0);
        assert_eq!(pose.pitch, 0.0);
        assert!((pose.p[2] - 0.3).abs() < 1e-12);
        assert_eq!(pose.heading_idx, h);
    }
}

/// Solid ramp rising along +x with slope `num/den`; the top voxel of each
/// column contains the ramp height at the column center.
fn ramp(num: i64, den: i64) -> OccupancyGrid {
    let m = meta([40, 12, 40], 0.1);
    let mut g = OccupancyGrid::new(m);
    for i in 0..40 {
        let top = ((2 * i as i64 + 1) * num).div_euclid(2 * den) as i32;
        for j in 0..12 {
            for k in 0..=top.min(39) {
                g.insert(Voxel::new(i, j, k)).unwrap();
            }
        }
    }
    g
}

#[test]
fn ramp_pitch_matches_inclination() {
    let robot = RobotModel::default();
    let p = SupportParams {
        step_up_max: 0.5,
        drop_max: 0.5,
        clearance_height: 0.2,
    };
    for (num, den) in [(1, 6), (1, 3), (1, 2)] {
        let g = ramp(num, den);
        let theta = (num as f64 / den as f64).atan();
        let (x, y) = (1.55, 0.65);
        let z_ref = g.meta().layer_top(((31 * num).div_euclid(2 * den)) as i32);
        let up = align_pose(&g, x, y, z_ref, 0, &robot, &p).unwrap();
        assert!((up.pitch - theta).abs() <= 3f64.to_radians(), "{num}/{den}: {}", up.pitch);
        assert!(up.roll.abs() < 1e-9);
        let down = align_pose(&g, x, y, z_ref, 18, &robot, &p).unwrap();
        assert!((down.pitch + theta).abs() <= 3f64.to_radians());
        let side = align_pose(&g, x, y, z_ref, 9, &robot, &p).unwrap();
        assert!(side.pitch.abs() < 1e-9);
        // sideways the feet span four columns, so only slopes with a whole
        // number of voxels over that span are exact
        if (4 * num) % den == 0 {
            assert!((side.roll + theta).abs() <= 3f64.to_radians());
        }
    }
}

#[test]
fn foot_over_deep_pit_fails() {
    let mut g = floor_grid([30, 30, 20]);
    let robot = RobotModel::default();
    let p = SupportParams::default();
    assert!(align_pose(&g, 1.55, 1.55, 0.1, 0, &robot, &p).is_some());
    // front-left foot lands at (1.85, 1.75)
    let m = *g.meta();
    let v = m.quantize([1.85, 1.75, 0.05]);
    g.remove(v);
    assert!(align_pose(&g, 1.55, 1.55, 0.1, 0, &robot, &p).is_none());
}

#[test]
fn tilt_bounded_by_support_window() {
    let robot = RobotModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (step, drop) in [(0.17, 0.22), (0.2, 0.2), (0.12, 0.17)] {
        let p = SupportParams {
            step_up_max: step,
            drop_max: drop,
            clearance_height: 0.2,
        };
        let pitch_bound = ((step + drop) / robot.feet[0]).atan() + 1e-12;
        let roll_bound = ((step + drop) / robot.feet[1]).atan() + 1e-12;
        for _ in 0..300 {
            let m = meta([16, 16, 20], 0.1);
            let mut g = OccupancyGrid::new(m);
            for i in 0..16 {
                for j in 0..16 {
                    for k in 0..rng.gen_range(1..12) {
                        g.insert(Voxel::new(i, j, k)).unwrap();
                    }
                }
            }
            let z_ref = rng.gen_range(0.3..1.0);
            let h = rng.gen_range(0..36);
            if let Some(pose) = align_pose(&g, 0.8, 0.8, z_ref, h, &robot, &p) {
                assert!(pose.pitch.abs() <= pitch_bound);
                assert!(pose.roll.abs() <= roll_bound);
                if step == drop {
                    let spacing = robot.feet[0].min(robot.feet[1]);
                    assert!(pose.roll.abs().max(pose.pitch.abs()) <= (2.0 * step / spacing).atan() + 1e-12);
                }
            }
        }
    }
}

#[test]
fn yaw_dir_is_antisymmetric() {
    for u in -80..80 {
        let (c, s) = yaw_dir(u);
        let (c2, s2) = yaw_dir(u + 36);
        assert_eq!((c, s), (-c2, -s2));
        let a = (u as f64 * 5.0).to_radians();
        assert!((c - a.cos()).abs() < 1e-12 && (s - a.sin()).abs() < 1e-12);
    }
}
