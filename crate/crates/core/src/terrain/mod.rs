//! Procedural training worlds: a Perlin-noise ground (smooth or terraced)
//! plus randomly scattered parametric obstacles, some of them floating.

mod mesh;
mod noise;
mod objects;

pub use mesh::{parse_obj, read_obj, write_obj, TriMesh};
pub use noise::{perlin2, Perlin};
pub use objects::{spawn_objects, GroundHeight, ObstacleKind, ObstaclePrimitive};

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding;
use crate::voxgrid::GridMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMode {
    Smooth,
    Stepped,
}

impl std::str::FromStr for GroundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(GroundMode::Smooth),
            "stepped" => Ok(GroundMode::Stepped),
            _ => Err(Error::usage(format!("unknown ground mode {s:?} (smooth|stepped)"))),
        }
    }
}

impl std::fmt::Display for GroundMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GroundMode::Smooth => "smooth",
            GroundMode::Stepped => "stepped",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerlinParams {
    pub octaves: u32,
    pub base_wavelength: f64,
    pub amplitude: f64,
    pub persistence: f64,
}

impl Default for PerlinParams {
    fn default() -> Self {
        Self {
            octaves: 4,
            base_wavelength: 8.0,
            amplitude: 0.5,
            persistence: 0.5,
        }
    }
}

impl PerlinParams {
    /// Analytic bound on `|perlin2|`: amplitude times the octave weight sum.
    pub fn bound(&self) -> f64 {
        self.amplitude * (0..self.octaves).map(|o| self.persistence.powi(o as i32)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainConfig {
    /// Patch extent in x and y, meters.
    pub patch_size: f64,
    /// Vertical extent of the voxel grid built over the patch.
    pub height_budget: f64,
    /// World z of the grid bottom.
    pub z_min: f64,
    pub ground_mode: GroundMode,
    pub perlin: PerlinParams,
    pub step_height_range: (f64, f64),
    /// Spacing of the ground heightfield samples.
    pub sample_spacing: f64,
    pub n_objects: (u32, u32),
    pub diameter_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub ground_align_prob: f64,
    pub float_height_range: (f64, f64),
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 32.0,
            height_budget: 16.0,
            z_min: -2.0,
            ground_mode: GroundMode::Smooth,
            perlin: PerlinParams::default(),
            step_height_range: (0.1, 0.2),
            sample_spacing: 0.1,
            n_objects: (300, 1000),
            diameter_range: (0.1, 6.0),
            scale_range: (0.5, 1.5),
            ground_align_prob: 0.9,
            float_height_range: (0.0, 3.0),
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(self.patch_size > 0.0 && self.height_budget > 0.0 && self.sample_spacing > 0.0) {
            return Err(Error::usage("terrain sizes must be positive"));
        }
        if !range_ok(self.step_height_range)
            || !range_ok(self.diameter_range)
            || !range_ok(self.scale_range)
            || !range_ok(self.float_height_range)
            || self.n_objects.0 > self.n_objects.1
        {
            return Err(Error::usage("terrain ranges must be nonempty"));
        }
        if self.diameter_range.0 <= 0.0 || self.scale_range.0 <= 0.0 || self.step_height_range.0 <= 0.0 {
            return Err(Error::usage("diameters, scales and step heights must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ground_align_prob) {
            return Err(Error::usage("ground_align_prob must lie in [0, 1]"));
        }
        if self.perlin.octaves == 0 || !(self.perlin.base_wavelength > 0.0) {
            return Err(Error::usage("perlin needs >= 1 octave and a positive wavelength"));
        }
        Ok(())
    }

    /// Voxel grid bounds covering the patch at `resolution`.
    pub fn grid_meta(&self, resolution: f64) -> Result<GridMeta> {
        let n = (self.patch_size / resolution).round() as u32;
        let nz = (self.height_budget / resolution).round() as u32;
        GridMeta::new([n, n, nz], [0.0, 0.0, self.z_min], resolution)
    }
}

/// Step height used for a terraced ground, drawn from the configured range.
pub fn sample_step_height(seed: u64, cfg: &TerrainConfig) -> f64 {
    let (lo, hi) = cfg.step_height_range;
    if lo == hi {
        return lo;
    }
    seeding::rng(seed, 1).gen_range(lo..hi)
}

/// Triangulated heightfield over the patch.
///
/// In stepped mode each sample cell is a flat quad at the noise height
/// quantized to the step height, with vertical riser quads between cells of
/// different level.
pub fn generate_ground(seed: u64, cfg: &TerrainConfig) -> TriMesh {
    let perlin = Perlin::new(seed);
    let h = cfg.sample_spacing;
    let n = (cfg.patch_size / h).round() as usize;
    let mut mesh = TriMesh::default();
    match cfg.ground_mode {
        GroundMode::Smooth => {
            for i in 0..=n {
                for j in 0..=n {
                    let (x, y) = (i as f64 * h, j as f64 * h);
                    mesh.vertices.push([x, y, perlin.sample(x, y, &cfg.perlin)]);
                }
            }
            let id = |i: usize, j: usize| (i * (n + 1) + j) as u32;
            for i in 0..n {
                for j in 0..n {
                    mesh.triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    mesh.triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
        GroundMode::Stepped => {
            let step = sample_step_height(seed, cfg);
            let level: Vec<i64> = (0..n * n)
                .map(|c| {
                    let (i, j) = (c / n, c % n);
                    let z = perlin.sample((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, &cfg.perlin);
                    (z / step).round() as i64
                })
                .collect();
            let z = |l: i64| l as f64 * step;
            for i in 0..n {
                for j in 0..n {
                    let l = level[i * n + j];
                    let (x0, y0, x1, y1) = (i as f64 * h, j as f64 * h, (i + 1) as f64 * h, (j + 1) as f64 * h);
                    mesh.push_quad([[x0, y0, z(l)], [x1, y0, z(l)], [x1, y1, z(l)], [x0, y1, z(l)]]);
                    if i + 1 < n {
                        let m = level[(i + 1) * n + j];
                        if m != l {
                            mesh.push_quad([[x1, y0, z(l)], [x1, y1, z(l)], [x1, y1, z(m)], [x1, y0, z(m)]]);
                        }
                    }
                    if j + 1 < n {
                        let m = level[i * n + j + 1];
                        if m != l {
                            mesh.push_quad([[x0, y1, z(l)], [x1, y1, z(l)], [x1, y1, z(m)], [x0, y1, z(m)]]);
                        }
                    }
                }
            }
        }
    }
    mesh
}

/// A generated world: ground plus obstacles merged into one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub mesh: TriMesh,
    pub primitives: Vec<ObstaclePrimitive>,
}

pub fn generate_terrain(seed: u64, cfg: &TerrainConfig) -> Result<Terrain> {
    cfg.validate()?;
    let ground = generate_ground(seed, cfg);
    let (mesh, primitives) = spawn_objects(seed, &ground, cfg);
    Ok(Terrain { mesh, primitives })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: GroundMode) -> TerrainConfig {
        TerrainConfig {
            patch_size: 4.0,
            ground_mode: mode,
            ..TerrainConfig::default()
        }
    }

    #[test]
    fn flat_when_amplitude_zero() {
        let mut cfg = small(GroundMode::Smooth);
        cfg.perlin.amplitude = 0.0;
        let m = generate_ground(4, &cfg);
        assert!(m.vertices.iter().all(|v| v[2] == 0.0));
        assert_eq!(m.triangles.len(), 2 * 40 * 40);
    }

    #[test]
    fn smooth_matches_noise_samples() {
        let cfg = small(GroundMode::Smooth);
        let m = generate_ground(17, &cfg);
        for v in m.vertices.iter().step_by(37) {
            assert_eq!(v[2], perlin2(17, v[0], v[1], &cfg));
        }
    }

    #[test]
    fn stepped_heights_are_step_multiples() {
        let mut cfg = small(GroundMode::Stepped);
        cfg.perlin.amplitude = 1.5;
        let seed = 23;
        let step = sample_step_height(seed, &cfg);
        assert!((0.1..0.2).contains(&step));
        let m = generate_ground(seed, &cfg);
        for v in &m.vertices {
            assert_eq!((v[2] / step).round() * step, v[2]);
        }
        // every triangle is flat unless it is a vertical riser
        let mut risers = 0;
        for t in &m.triangles {
            let p: Vec<[f64; 3]> = t.iter().map(|&i| m.vertices[i as usize]).collect();
            let flat = p.iter().all(|q| q[2] == p[0][2]);
            let vertical = (p[0][0] == p[1][0] && p[1][0] == p[2][0]) || (p[0][1] == p[1][1] && p[1][1] == p[2][1]);
            assert!(flat || vertical);
            risers += (!flat) as usize;
            assert!(m.triangle_area(t) > 0.0);
        }
        assert!(risers > 0);
    }

    #[test]
    fn deterministic_terrain() {
        let cfg = TerrainConfig {
            patch_size: 8.0,
            n_objects: (20, 40),
            ..TerrainConfig::default()
        };
        let a = generate_terrain(99, &cfg).unwrap();
        let b = generate_terrain(99, &cfg).unwrap();
        assert_eq!(write_obj(&a.mesh), write_obj(&b.mesh));
        let c = generate_terrain(100, &cfg).unwrap();
        assert_ne!(write_obj(&a.mesh), write_obj(&c.mesh));
    }

    #[test]
    fn grid_meta_covers_patch() {
        let cfg = TerrainConfig::default();
        let m = cfg.grid_meta(0.1).unwrap();
        assert_eq!(m.dims, [320, 320, 160]);
        assert_eq!(m.origin, [0.0, 0.0, -2.0]);
    }
}
