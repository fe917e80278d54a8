//! Flat `key=value` pipeline configuration with per-module defaults.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{AugmentConfig, Head, WindowConfig};
use crate::error::{Error, Result};
use crate::oracle::{CollectConfig, RobotModel, StartSampling, TrialRandomization};
use crate::planner::GraphParams;
use crate::sparsenet::{LossWeights, ModelSpec, SkipVariant, TrainConfig};
use crate::terrain::{GroundMode, PerlinParams, TerrainConfig};

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::usage(format!("invalid value {v:?} for config key {key}")))
}

macro_rules! config_keys {
    ($($key:literal => $field:ident: $ty:ty = $default:expr, $doc:literal;)*) => {
        /// Every tunable of the pipeline.
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $(pub $field: $ty,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        /// `(key, description)` of every configuration key.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc),)*];

        impl PipelineConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$field = parse::<$ty>(key, value)?,)*
                    _ => return Err(Error::usage(format!("unknown config key {key}"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(show(&self.$field)),)*
                    _ => None,
                }
            }
        }
    };
}

fn show<T: Display>(v: &T) -> String {
    v.to_string()
}

config_keys! {
    "terrain.seed" => terrain_seed: u64 = 0, "terrain generator seed";
    "terrain.patch_size" => patch_size: f64 = 32.0, "patch edge length, m";
    "terrain.height_budget" => height_budget: f64 = 16.0, "vertical grid extent, m";
    "terrain.z_min" => z_min: f64 = -2.0, "world z of the grid bottom, m";
    "terrain.ground_mode" => ground_mode: GroundMode = GroundMode::Smooth, "smooth or stepped";
    "terrain.perlin_octaves" => perlin_octaves: u32 = 4, "noise octaves";
    "terrain.perlin_wavelength" => perlin_wavelength: f64 = 8.0, "base noise wavelength, m";
    "terrain.perlin_amplitude" => perlin_amplitude: f64 = 0.5, "base noise amplitude, m";
    "terrain.perlin_persistence" => perlin_persistence: f64 = 0.5, "amplitude ratio between octaves";
    "terrain.step_height_min" => step_height_min: f64 = 0.1, "terrace step height lower bound, m";
    "terrain.step_height_max" => step_height_max: f64 = 0.2, "terrace step height upper bound, m";
    "terrain.sample_spacing" => sample_spacing: f64 = 0.1, "ground heightfield spacing, m";
    "terrain.objects_min" => objects_min: u32 = 300, "fewest obstacles";
    "terrain.objects_max" => objects_max: u32 = 1000, "most obstacles";
    "terrain.diameter_min" => diameter_min: f64 = 0.1, "smallest obstacle diameter, m";
    "terrain.diameter_max" => diameter_max: f64 = 6.0, "largest obstacle diameter, m";
    "terrain.scale_min" => scale_min: f64 = 0.5, "obstacle scale lower bound";
    "terrain.scale_max" => scale_max: f64 = 1.5, "obstacle scale upper bound";
    "terrain.ground_align_prob" => ground_align_prob: f64 = 0.9, "probability an obstacle rests on the ground";
    "terrain.float_min" => float_min: f64 = 0.0, "lift of floating obstacles, lower bound, m";
    "terrain.float_max" => float_max: f64 = 3.0, "lift of floating obstacles, upper bound, m";
    "voxel.resolution" => resolution: f64 = 0.1, "voxel edge length, m";
    "robot.length" => robot_length: f64 = 0.9, "body length, m";
    "robot.width" => robot_width: f64 = 0.55, "body width, m";
    "robot.height" => robot_height: f64 = 0.4, "body height, m";
    "robot.clearance" => robot_clearance: f64 = 0.2, "body bottom above support, m";
    "robot.feet_length" => feet_length: f64 = 0.6, "foot rectangle length, m";
    "robot.feet_width" => feet_width: f64 = 0.4, "foot rectangle width, m";
    "robot.speed" => robot_speed: f64 = 0.5, "nominal speed, m/s";
    "oracle.seed" => oracle_seed: u64 = 0, "trial randomization seed";
    "oracle.trials" => trials: u8 = 10, "trials per start pose and action";
    "oracle.step_up_min" => step_up_min: f64 = 0.12, "per-trial step-up limit, lower bound, m";
    "oracle.step_up_max" => step_up_max: f64 = 0.22, "per-trial step-up limit, upper bound, m";
    "oracle.slope_min_deg" => slope_min_deg: f64 = 25.0, "per-trial slope limit, lower bound, deg";
    "oracle.slope_max_deg" => slope_max_deg: f64 = 35.0, "per-trial slope limit, upper bound, deg";
    "oracle.drop_margin" => drop_margin: f64 = 0.05, "drop limit minus step-up limit, m";
    "oracle.clearance_height" => clearance_height: f64 = 0.2, "free space required above a support, m";
    "oracle.xy_step" => xy_step: u32 = 1, "start pose column spacing, voxels";
    "oracle.heading_step" => heading_step: u8 = 3, "start pose heading spacing, 10 deg units";
    "jobs" => jobs: usize = 1, "worker threads for collect and windows";
    "windows.seed" => windows_seed: u64 = 0, "window sampling and augmentation seed";
    "windows.head" => head: Head = Head::Total, "total, dir4 or orient";
    "windows.count" => window_count: usize = 32, "windows per scene";
    "windows.augment" => augment: bool = true, "apply flood fill, dropout and noise";
    "augment.dropout_min" => dropout_min: f64 = 0.02, "dropout probability at the window center";
    "augment.dropout_max" => dropout_max: f64 = 0.2, "dropout probability at the window edge";
    "augment.noise_prob" => noise_prob: f64 = 0.02, "surface noise probability per voxel";
    "train.seed" => train_seed: u64 = 0, "initialization and batch sampling seed";
    "train.variant" => variant: SkipVariant = SkipVariant::Reduced, "m2 (two skips) or m1 (four skips)";
    "train.steps" => steps: u64 = 5000, "optimizer steps";
    "train.batch" => batch: usize = 8, "windows per step";
    "train.lr" => lr: f64 = 1e-3, "peak learning rate";
    "train.weight_decay" => weight_decay: f64 = 1e-4, "decoupled weight decay";
    "train.bce_weight" => bce_weight: f64 = 1.0, "weight of each pruning loss";
    "train.mse_weight" => mse_weight: f64 = 1.0, "weight of the score loss";
    "train.pos_weight_min" => pos_weight_min: f64 = 1.0, "lower clamp of the positive-class weight";
    "train.pos_weight_max" => pos_weight_max: f64 = 100.0, "upper clamp of the positive-class weight";
    "train.bn_momentum" => bn_momentum: f64 = 0.1, "running statistics momentum";
    "train.val_every" => val_every: u64 = 500, "validation period in steps, 0 for the end only";
    "plan.lambda" => lambda: f64 = 0.1, "risk weight";
    "plan.tau" => tau: f64 = 0.05, "minimum score of a traversable voxel";
}

impl PipelineConfig {
    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("config line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Every key with its resolved value, one `key=value` per line.
    pub fn resolved(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k}={}\n", self.get(k).unwrap_or_default())).collect()
    }

    pub fn terrain(&self) -> TerrainConfig {
        TerrainConfig {
            patch_size: self.patch_size,
            height_budget: self.height_budget,
            z_min: self.z_min,
            ground_mode: self.ground_mode,
            perlin: PerlinParams {
                octaves: self.perlin_octaves,
                base_wavelength: self.perlin_wavelength,
                amplitude: self.perlin_amplitude,
                persistence: self.perlin_persistence,
            },
            step_height_range: (self.step_height_min, self.step_height_max),
            sample_spacing: self.sample_spacing,
            n_objects: (self.objects_min, self.objects_max),
            diameter_range: (self.diameter_min, self.diameter_max),
            scale_range: (self.scale_min, self.scale_max),
            ground_align_prob: self.ground_align_prob,
            float_height_range: (self.float_min, self.float_max),
        }
    }

    pub fn collect(&self) -> CollectConfig {
        CollectConfig {
            robot: RobotModel {
                body: [self.robot_length, self.robot_width, self.robot_height],
                standing_clearance: self.robot_clearance,
                feet: [self.feet_length, self.feet_width],
                nominal_speed: self.robot_speed,
            },
            randomization: TrialRandomization {
                step_up_range: (self.step_up_min, self.step_up_max),
                slope_range_deg: (self.slope_min_deg, self.slope_max_deg),
                drop_margin: self.drop_margin,
                clearance_height: self.clearance_height,
            },
            n_total: self.trials,
            seed: self.oracle_seed,
            sampling: StartSampling {
                xy_step: self.xy_step,
                heading_step: self.heading_step,
            },
        }
    }

    pub fn windows(&self) -> WindowConfig {
        WindowConfig {
            head: self.head,
            count: self.window_count,
            seed: self.windows_seed,
            augment: self.augment.then_some(AugmentConfig {
                dropout_min: self.dropout_min,
                dropout_max: self.dropout_max,
                noise_prob: self.noise_prob,
            }),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            weight_decay: self.weight_decay,
            loss: LossWeights {
                bce: self.bce_weight,
                mse: self.mse_weight,
                pos_weight_min: self.pos_weight_min,
                pos_weight_max: self.pos_weight_max,
            },
            bn_momentum: self.bn_momentum,
            val_every: self.val_every,
            seed: self.train_seed,
        }
    }

    pub fn model(&self, out: usize) -> ModelSpec {
        ModelSpec::new(out, self.variant)
    }

    pub fn graph(&self) -> GraphParams {
        GraphParams {
            tau: self.tau,
            lambda: self.lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.terrain(), TerrainConfig::default());
        assert_eq!(c.collect(), CollectConfig::default());
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.graph(), GraphParams::default());
        let w = c.windows();
        assert_eq!((w.head, w.count, w.augment), (Head::Total, 32, Some(AugmentConfig::default())));
    }

    #[test]
    fn every_key_round_trips() {
        let c = PipelineConfig::default();
        let mut d = PipelineConfig::default();
        d.apply_text(&c.resolved()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.resolved().lines().count(), KEYS.len());
    }

    #[test]
    fn parses_and_rejects() {
        let mut c = PipelineConfig::default();
        c.apply_text("# comment\n train.steps = 12 \nplan.lambda=1.5 # trailing\nwindows.head=dir4\n\n").unwrap();
        assert_eq!((c.steps, c.lambda, c.head), (12, 1.5, Head::Dir4));
        let e = c.apply_text("train.stepz=3").unwrap_err();
        assert!(e.to_string().contains("train.stepz"));
        assert!(c.apply_text("train.steps=many").is_err());
        assert!(c.apply_text("no equals sign").is_err());
    }
}
