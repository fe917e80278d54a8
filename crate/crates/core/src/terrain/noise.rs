use rand::seq::SliceRandom;

use super::{PerlinParams, TerrainConfig};
use crate::seeding;

/// Classic 2D gradient noise with a seeded permutation table.
///
/// Gradients are the eight unit vectors at 45° spacing, so a single octave
/// stays within `±sqrt(2)/2` and vanishes on integer lattice points.
#[derive(Debug, Clone)]
pub struct Perlin {
    perm: [u8; 512],
}

const GRADIENTS: [(f64, f64); 8] = {
    const D: f64 = std::f64::consts::FRAC_1_SQRT_2;
    [(1.0, 0.0), (D, D), (0.0, 1.0), (-D, D), (-1.0, 0.0), (-D, -D), (0.0, -1.0), (D, -D)]
};

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(&mut seeding::rng(seed, 0));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn grad(&self, ix: i64, iy: i64, dx: f64, dy: f64) -> f64 {
        let h = self.perm[self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize] & 7;
        let (gx, gy) = GRADIENTS[h as usize];
        gx * dx + gy * dy
    }

    /// One octave at unit frequency.
    pub fn noise(&self, x: f64, y: f64) -> f64 {
        let (xf, yf) = (x.floor(), y.floor());
        let (ix, iy) = (xf as i64, yf as i64);
        let (dx, dy) = (x - xf, y - yf);
        let (u, v) = (fade(dx), fade(dy));
        let n00 = self.grad(ix, iy, dx, dy);
        let n10 = self.grad(ix + 1, iy, dx - 1.0, dy);
        let n01 = self.grad(ix, iy + 1, dx, dy - 1.0);
        let n11 = self.grad(ix + 1, iy + 1, dx - 1.0, dy - 1.0);
        lerp(lerp(n00, n10, u), lerp(n01, n11, u), v)
    }

    /// Octave sum: frequency doubles and weight scales by `persistence` per octave.
    pub fn sample(&self, x: f64, y: f64, p: &PerlinParams) -> f64 {
        let mut freq = 1.0 / p.base_wavelength;
        let mut amp = p.amplitude;
        let mut sum = 0.0;
        for _ in 0..p.octaves {
            sum += amp * self.noise(x * freq, y * freq);
            freq *= 2.0;
            amp *= p.persistence;
        }
        sum
    }
}

/// Ground height from seeded noise at `(x, y)` meters.
pub fn perlin2(seed: u64, x: f64, y: f64, cfg: &TerrainConfig) -> f64 {
    Perlin::new(seed).sample(x, y, &cfg.perlin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn vanishes_on_lattice() {
        let mut cfg = TerrainConfig::default();
        cfg.perlin.octaves = 1;
        for seed in 0..5 {
            for (i, j) in [(0, 0), (1, 3), (-2, 5), (7, 7)] {
                let (x, y) = (i as f64 * 8.0, j as f64 * 8.0);
                assert_eq!(perlin2(seed, x, y, &cfg), 0.0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = TerrainConfig::default();
        assert_eq!(perlin2(5, 1.234, 5.678, &cfg), perlin2(5, 1.234, 5.678, &cfg));
        assert_ne!(perlin2(5, 1.234, 5.678, &cfg), perlin2(6, 1.234, 5.678, &cfg));
    }

    #[test]
    fn within_amplitude_bound() {
        let cfg = TerrainConfig::default();
        let bound = cfg.perlin.bound();
        let p = Perlin::new(42);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut max_abs: f64 = 0.0;
        for _ in 0..10_000 {
            let (x, y) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            let v = p.sample(x, y, &cfg.perlin);
            max_abs = max_abs.max(v.abs());
            assert!(v.abs() <= bound, "{v} exceeds {bound}");
        }
        assert!(max_abs > 0.1 * bound);
    }
}
