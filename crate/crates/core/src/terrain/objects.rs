use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{TerrainConfig, TriMesh};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObstacleKind {
    Box,
    Cylinder,
    Sphere,
    Wedge,
    Table,
    Arch,
}

impl ObstacleKind {
    pub const ALL: [ObstacleKind; 6] = [
        ObstacleKind::Box,
        ObstacleKind::Cylinder,
        ObstacleKind::Sphere,
        ObstacleKind::Wedge,
        ObstacleKind::Table,
        ObstacleKind::Arch,
    ];

    /// Kinds that leave a pass-under void below a top member.
    pub fn has_overhang(self) -> bool {
        matches!(self, ObstacleKind::Table | ObstacleKind::Arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstaclePrimitive {
    pub kind: ObstacleKind,
    /// Diagonal of the local axis-aligned bounding box after scaling.
    pub diameter: f64,
    /// Base center; z is the bottom of the primitive.
    pub position: [f64; 3],
    pub yaw: f64,
    /// Local bounding box extents `(length, width, height)`.
    pub extents: [f64; 3],
    /// Height of the primitive base above the local ground.
    pub lift: f64,
}

/// Highest ground vertex per heightfield sample bin.
pub struct GroundHeight {
    spacing: f64,
    bins: HashMap<(i64, i64), f64>,
}

impl GroundHeight {
    pub fn from_mesh(mesh: &TriMesh, spacing: f64) -> Self {
        let mut bins: HashMap<(i64, i64), f64> = HashMap::new();
        for v in &mesh.vertices {
            let key = ((v[0] / spacing).round() as i64, (v[1] / spacing).round() as i64);
            let e = bins.entry(key).or_insert(f64::NEG_INFINITY);
            *e = e.max(v[2]);
        }
        Self { spacing, bins }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let key = ((x / self.spacing).round() as i64, (y / self.spacing).round() as i64);
        self.bins.get(&key).copied().unwrap_or(0.0)
    }
}

/// Scatters obstacle primitives over the ground and returns the union mesh.
///
/// Diameters follow a log-uniform law on `diameter_range` (density ∝ 1/D),
/// then get scaled by a uniform factor from `scale_range`.
pub fn spawn_objects(
    seed: u64,
    ground: &TriMesh,
    cfg: &TerrainConfig,
) -> (TriMesh, Vec<ObstaclePrimitive>) {
    let heights = GroundHeight::from_mesh(ground, cfg.sample_spacing);
    let mut rng = seeding::rng(seed, 2);
    let n = rng.gen_range(cfg.n_objects.0..=cfg.n_objects.1);
    let mut mesh = ground.clone();
    let mut prims = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let p = sample_primitive(&mut rng, &heights, cfg);
        mesh.append(&primitive_mesh(&p));
        prims.push(p);
    }
    (mesh, prims)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub(crate) fn sample_primitive(
    rng: &mut ChaCha8Rng,
    ground: &GroundHeight,
    cfg: &TerrainConfig,
) -> ObstaclePrimitive {
    let kind = ObstacleKind::ALL[rng.gen_range(0..ObstacleKind::ALL.len())];
    let (dlo, dhi) = cfg.diameter_range;
    let nominal = uniform(rng, (dlo.ln(), dhi.ln())).exp();
    let diameter = nominal * uniform(rng, cfg.scale_range);
    let x = rng.gen_range(0.0..cfg.patch_size);
    let y = rng.gen_range(0.0..cfg.patch_size);
    let yaw = rng.gen_range(0.0..TAU);
    let lift = if rng.gen_bool(cfg.ground_align_prob) {
        0.0
    } else {
        uniform(rng, cfg.float_height_range)
    };
    let shape: [f64; 3] = match kind {
        ObstacleKind::Box => [1.0, rng.gen_range(0.3..1.0), rng.gen_range(0.2..1.0)],
        ObstacleKind::Cylinder => [2.0, 2.0, rng.gen_range(0.3..2.0)],
        ObstacleKind::Sphere => [1.0, 1.0, 1.0],
        ObstacleKind::Wedge => [1.0, rng.gen_range(0.4..1.0), rng.gen_range(0.1..0.5)],
        ObstacleKind::Table => [1.0, rng.gen_range(0.5..1.0), rng.gen_range(0.3..0.6)],
        ObstacleKind::Arch => [1.0, rng.gen_range(0.2..0.5), rng.gen_range(0.4..0.8)],
    };
    let norm = (shape[0] * shape[0] + shape[1] * shape[1] + shape[2] * shape[2]).sqrt();
    let extents = shape.map(|s| s / norm * diameter);
    ObstaclePrimitive {
        kind,
        diameter,
        position: [x, y, ground.at(x, y) + lift],
        yaw,
        extents,
        lift,
    }
}

/// Axis-aligned box `[lo, hi]` as 12 triangles.
fn push_box(m: &mut TriMesh, lo: [f64; 3], hi: [f64; 3]) {
    let c = |i: usize| {
        [
            if i & 1 == 0 { lo[0] } else { hi[0] },
            if i & 2 == 0 { lo[1] } else { hi[1] },
            if i & 4 == 0 { lo[2] } else { hi[2] },
        ]
    };
    for face in [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]] {
        m.push_quad(face.map(c));
    }
}

fn push_tri(m: &mut TriMesh, a: [f64; 3], b: [f64; 3], c: [f64; 3]) {
    let base = m.vertices.len() as u32;
    m.vertices.extend_from_slice(&[a, b, c]);
    m.triangles.push([base, base + 1, base + 2]);
}

const SEGMENTS: usize = 16;

fn local_mesh(p: &ObstaclePrimitive) -> TriMesh {
    let [l, w, h] = p.extents;
    let (hl, hw) = (l / 2.0, w / 2.0);
    let mut m = TriMesh::default();
    match p.kind {
        ObstacleKind::Box => push_box(&mut m, [-hl, -hw, 0.0], [hl, hw, h]),
        ObstacleKind::Cylinder => {
            let r = hl;
            let ring = |a: usize, z: f64| {
                let t = TAU * a as f64 / SEGMENTS as f64;
                [r * t.cos(), r * t.sin(), z]
            };
            for a in 0..SEGMENTS {
                let b = (a + 1) % SEGMENTS;
                m.push_quad([ring(a, 0.0), ring(b, 0.0), ring(b, h), ring(a, h)]);
                push_tri(&mut m, [0.0, 0.0, h], ring(a, h), ring(b, h));
                push_tri(&mut m, [0.0, 0.0, 0.0], ring(b, 0.0), ring(a, 0.0));
            }
        }
        ObstacleKind::Sphere => {
            let r = hl;
            let rings = SEGMENTS / 2;
            let pt = |lat: usize, lon: usize| {
                let th = PI * lat as f64 / rings as f64;
                let ph = TAU * lon as f64 / SEGMENTS as f64;
                [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r - r * th.cos()]
            };
            for lat in 0..rings {
                for lon in 0..SEGMENTS {
                    let lon2 = (lon + 1) % SEGMENTS;
                    if lat > 0 {
                        push_tri(&mut m, pt(lat, lon), pt(lat, lon2), pt(lat + 1, lon2));
                    }
                    if lat + 1 < rings {
                        push_tri(&mut m, pt(lat, lon), pt(lat + 1, lon2), pt(lat + 1, lon));
                    }
                }
            }
        }
        ObstacleKind::Wedge => {
            // slope rises along +x from z=0 at x=-l/2 to z=h at x=+l/2
            let a = [-hl, -hw, 0.0];
            let b = [hl, -hw, 0.0];
            let c = [hl, hw, 0.0];
            let d = [-hl, hw, 0.0];
            let e = [hl, -hw, h];
            let f = [hl, hw, h];
            m.push_quad([a, d, c, b]);
            m.push_quad([a, e, f, d]);
            m.push_quad([b, c, f, e]);
            push_tri(&mut m, a, b, e);
            push_tri(&mut m, d, f, c);
        }
        ObstacleKind::Table => {
            let top = (0.15 * h).max(0.02);
            let leg = (0.12 * l.min(w)).max(0.02);
            push_box(&mut m, [-hl, -hw, h - top], [hl, hw, h]);
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let cx = sx * (hl - leg / 2.0);
                let cy = sy * (hw - leg / 2.0);
                push_box(
                    &mut m,
                    [cx - leg / 2.0, cy - leg / 2.0, 0.0],
                    [cx + leg / 2.0, cy + leg / 2.0, h - top],
                );
            }
        }
        ObstacleKind::Arch => {
            let pillar = 0.2 * l;
            let lintel = 0.2 * h;
            push_box(&mut m, [-hl, -hw, 0.0], [-hl + pillar, hw, h - lintel]);
            push_box(&mut m, [hl - pillar, -hw, 0.0], [hl, hw, h - lintel]);
            push_box(&mut m, [-hl, -hw, h - lintel], [hl, hw, h]);
        }
    }
    m
}

/// Primitive triangles in world coordinates.
pub fn primitive_mesh(p: &ObstaclePrimitive) -> TriMesh {
    let mut m = local_mesh(p);
    let (c, s) = (p.yaw.cos(), p.yaw.sin());
    for v in &mut m.vertices {
        let (x, y) = (v[0], v[1]);
        *v = [
            p.position[0] + c * x - s * y,
            p.position[1] + s * x + c * y,
            p.position[2] + v[2],
        ];
    }
    m
}
