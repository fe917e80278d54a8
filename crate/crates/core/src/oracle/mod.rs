//! Randomized quasi-static traversal oracle and the data-collection loop.
//!
//! A rollout sweeps the robot body from its start pose to the commanded
//! goal offset in small increments, re-fitting the body to the ground at
//! every increment. It fails on a lost foot contact, a foot height change
//! beyond the step/drop limits, a base tilt beyond the slope limit, or any
//! body-environment collision. Per-trial limits are randomized, so success
//! rates near capability boundaries land strictly between 0 and 1.

mod collide;

pub use collide::body_collides;

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeding;
use crate::voxelize::{align_body, yaw_dir, BodyState, SupportParams};
use crate::voxgrid::{OccupancyGrid, Pose, TravKey, TravTensor, TrialCount, Voxel, HEADING_COUNT};

/// Rigid-body proxy of the legged robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    /// Body box `(length, width, height)`, meters.
    pub body: [f64; 3],
    /// Height of the body underside above the mean support surface.
    pub standing_clearance: f64,
    /// Foot rectangle `(length, width)` centered on the base.
    pub feet: [f64; 2],
    pub nominal_speed: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            body: [0.9, 0.55, 0.4],
            standing_clearance: 0.2,
            feet: [0.6, 0.4],
            nominal_speed: 0.5,
        }
    }
}

impl RobotModel {
    /// Foot offsets in the body frame: front-left, front-right, rear-right, rear-left.
    pub fn foot_offsets(&self) -> [[f64; 2]; 4] {
        let (hx, hy) = (self.feet[0] / 2.0, self.feet[1] / 2.0);
        [[hx, hy], [hx, -hy], [-hx, -hy], [-hx, hy]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.body.iter().chain(&self.feet).any(|&d| !(d > 0.0))
            || !(self.standing_clearance > 0.0)
            || !(self.nominal_speed > 0.0)
        {
            return Err(Error::usage("robot dimensions must be positive"));
        }
        if self.feet[0] > self.body[0] || self.feet[1] > self.body[1] {
            return Err(Error::usage("foot rectangle must lie inside the body footprint"));
        }
        Ok(())
    }
}

/// Kinematic capability limits for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub step_up_max: f64,
    pub drop_max: f64,
    /// Maximum |roll| and |pitch|, radians.
    pub slope_max: f64,
    pub clearance_height: f64,
}

impl Limits {
    pub fn support(&self) -> SupportParams {
        SupportParams {
            step_up_max: self.step_up_max,
            drop_max: self.drop_max,
            clearance_height: self.clearance_height,
        }
    }
}

/// Per-trial randomization of the capability limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRandomization {
    pub step_up_range: (f64, f64),
    /// Slope limit range, degrees.
    pub slope_range_deg: (f64, f64),
    /// `drop_max = step_up_max + drop_margin`.
    pub drop_margin: f64,
    pub clearance_height: f64,
}

impl Default for TrialRandomization {
    fn default() -> Self {
        Self {
            step_up_range: (0.12, 0.22),
            slope_range_deg: (25.0, 35.0),
            drop_margin: 0.05,
            clearance_height: 0.2,
        }
    }
}

impl TrialRandomization {
    /// Limits for `trial`, a pure function of `(seed, trial)`.
    pub fn sample(&self, seed: u64, trial: u32) -> Limits {
        let mut rng = seeding::rng(seeding::mix(seed, trial as u64), 7);
        let mut draw = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let step = draw(self.step_up_range);
        let slope = draw(self.slope_range_deg);
        Limits {
            step_up_max: step,
            drop_max: step + self.drop_margin,
            slope_max: slope.to_radians(),
            clearance_height: self.clearance_height,
        }
    }

    /// Range midpoints; used for start-pose feasibility.
    pub fn nominal(&self) -> Limits {
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let step = mid(self.step_up_range);
        Limits {
            step_up_max: step,
            drop_max: step + self.drop_margin,
            slope_max: mid(self.slope_range_deg).to_radians(),
            clearance_height: self.clearance_height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Forward,
    Backward,
    Left,
    Right,
    YawPlus45,
    YawMinus45,
}

pub const TRANSLATION: f64 = 0.40;
pub const ROTATION_DEG: i32 = 45;
const TRANSLATION_INCREMENT: f64 = 0.05;
/// Rotation increment, in 5° yaw units.
const ROTATION_INCREMENT: i32 = 1;

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Forward,
        Action::Backward,
        Action::Left,
        Action::Right,
        Action::YawPlus45,
        Action::YawMinus45,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Action> {
        Action::ALL.get(i as usize).copied()
    }

    /// Same world motion seen from the opposite heading.
    pub fn mirror(self) -> Action {
        match self {
            Action::Forward => Action::Backward,
            Action::Backward => Action::Forward,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            r => r,
        }
    }

    /// Motion direction relative to the heading in degrees, for translations.
    pub fn direction_offset_deg(self) -> Option<i32> {
        match self {
            Action::Forward => Some(0),
            Action::Left => Some(90),
            Action::Backward => Some(180),
            Action::Right => Some(-90),
            _ => None,
        }
    }

    /// Quasi-static sweep duration at the robot's nominal speed, seconds.
    pub fn sweep_duration(self, robot: &RobotModel) -> f64 {
        match self {
            Action::YawPlus45 | Action::YawMinus45 => {
                // arc length swept by the foot furthest from the base
                let r = robot.feet[0].hypot(robot.feet[1]) / 2.0;
                r * (ROTATION_DEG as f64).to_radians() / robot.nominal_speed
            }
            _ => TRANSLATION / robot.nominal_speed,
        }
    }

    /// Intermediate `(x, y, yaw5)` states, excluding the start.
    fn sweep(self, start: &Pose) -> Vec<(f64, f64, i32)> {
        let yaw5 = start.heading_idx as i32 * 2;
        let (x, y) = (start.p[0], start.p[1]);
        let (dx, dy) = yaw_dir(yaw5);
        let dir = match self {
            Action::Forward => Some((dx, dy)),
            Action::Backward => Some((-dx, -dy)),
            Action::Left => Some((-dy, dx)),
            Action::Right => Some((dy, -dx)),
            _ => None,
        };
        match dir {
            Some((ux, uy)) => {
                let n = (TRANSLATION / TRANSLATION_INCREMENT).round() as usize;
                (1..=n)
                    .map(|t| {
                        let s = TRANSLATION * t as f64 / n as f64;
                        (x + s * ux, y + s * uy, yaw5)
                    })
                    .collect()
            }
            None => {
                let sign = if self == Action::YawPlus45 { 1 } else { -1 };
                let n = ROTATION_DEG / 5 / ROTATION_INCREMENT;
                (1..=n).map(|t| (x, y, yaw5 + sign * t * ROTATION_INCREMENT)).collect()
            }
        }
    }
}

fn tilt_ok(b: &BodyState, limits: &Limits) -> bool {
    b.roll.abs() <= limits.slope_max && b.pitch.abs() <= limits.slope_max
}

/// Re-fits the body at a start pose, with every foot searching around the
/// pose's mean support height.
fn settle(grid: &OccupancyGrid, pose: &Pose, robot: &RobotModel, limits: &Limits) -> Option<BodyState> {
    let z_ref = pose.p[2] - robot.standing_clearance;
    align_body(
        grid,
        pose.p[0],
        pose.p[1],
        pose.heading_idx as i32 * 2,
        [z_ref; 4],
        robot,
        &limits.support(),
    )
}

/// Standing check for a start pose: supported feet, tilt within limits, and
/// a collision-free body.
pub fn static_feasible(grid: &OccupancyGrid, pose: &Pose, robot: &RobotModel, limits: &Limits) -> bool {
    match settle(grid, pose, robot, limits) {
        Some(b) => tilt_ok(&b, limits) && !body_collides(grid, &b, robot),
        None => false,
    }
}

/// Collision results keyed by sweep increment and foot heights; the body
/// configuration is a function of exactly these, so trials share them.
type CollisionCache = HashMap<(usize, [u64; 4]), bool>;

fn rollout_cached(
    grid: &OccupancyGrid,
    start: &Pose,
    action: Action,
    robot: &RobotModel,
    limits: &Limits,
    cache: &mut CollisionCache,
) -> bool {
    let support = limits.support();
    let mut check = |t: usize, b: &BodyState| {
        if !tilt_ok(b, limits) {
            return false;
        }
        let key = (t, b.feet.map(f64::to_bits));
        !*cache.entry(key).or_insert_with(|| body_collides(grid, b, robot))
    };
    let Some(first) = settle(grid, start, robot, limits) else {
        return false;
    };
    if !check(0, &first) {
        return false;
    }
    let mut prev = first.feet;
    for (t, (x, y, yaw5)) in action.sweep(start).into_iter().enumerate() {
        let Some(b) = align_body(grid, x, y, yaw5, prev, robot, &support) else {
            return false;
        };
        let contacts_ok = (0..4).all(|f| {
            let dz = b.feet[f] - prev[f];
            dz <= limits.step_up_max + 1e-9 && dz >= -limits.drop_max - 1e-9
        });
        if !contacts_ok || !check(t + 1, &b) {
            return false;
        }
        prev = b.feet;
    }
    true
}

/// One randomized attempt of `action` from `start`.
pub fn rollout(grid: &OccupancyGrid, start: &Pose, action: Action, robot: &RobotModel, limits: &Limits) -> bool {
    rollout_cached(grid, start, action, robot, limits, &mut CollisionCache::new())
}

/// Subsampling of the start-pose lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartSampling {
    /// Evaluate every `xy_step`-th column in x and y.
    pub xy_step: u32,
    /// Evaluate every `heading_step`-th of the 36 headings.
    pub heading_step: u8,
}

impl Default for StartSampling {
    fn default() -> Self {
        Self {
            xy_step: 1,
            heading_step: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartPose {
    pub voxel: Voxel,
    pub heading_idx: u8,
    pub pose: Pose,
}

/// Feasible start poses: at most one per `(voxel, heading)`, where the voxel
/// is the one containing the pose position.
pub fn sample_start_poses(
    grid: &OccupancyGrid,
    robot: &RobotModel,
    limits: &Limits,
    sampling: StartSampling,
) -> Vec<StartPose> {
    let m = grid.meta();
    let step = sampling.xy_step.max(1) as i32;
    let support = limits.support();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for v in grid.iter() {
        if v.i % step != 0 || v.j % step != 0 || grid.is_occupied(v.offset(0, 0, 1)) {
            continue;
        }
        let c = m.center_unchecked(v);
        let z_ref = m.layer_top(v.k);
        for h in (0..HEADING_COUNT).step_by(sampling.heading_step.max(1) as usize) {
            let Some(b) = align_body(grid, c[0], c[1], h as i32 * 2, [z_ref; 4], robot, &support) else {
                continue;
            };
            let pose = b.to_pose();
            let Some(voxel) = m.world_to_index(pose.p) else {
                continue;
            };
            if seen.contains(&(voxel, h)) {
                continue;
            }
            if static_feasible(grid, &pose, robot, limits) {
                seen.insert((voxel, h));
                out.push(StartPose {
                    voxel,
                    heading_idx: h,
                    pose,
                });
            }
        }
    }
    out.sort_by_key(|s| (s.voxel, s.heading_idx));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectConfig {
    pub robot: RobotModel,
    pub randomization: TrialRandomization,
    pub n_total: u8,
    pub seed: u64,
    pub sampling: StartSampling,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            robot: RobotModel::default(),
            randomization: TrialRandomization::default(),
            n_total: 10,
            seed: 0,
            sampling: StartSampling::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CollectStats {
    pub start_poses: usize,
    pub entries: usize,
    pub rollouts: usize,
    pub successes: usize,
}

impl CollectStats {
    pub fn mean_score(&self) -> f64 {
        if self.rollouts == 0 {
            0.0
        } else {
            self.successes as f64 / self.rollouts as f64
        }
    }
}

/// Success counts of every action from one start pose.
pub fn evaluate_start(grid: &OccupancyGrid, start: &Pose, cfg: &CollectConfig, trials: &[Limits]) -> [u8; 6] {
    let mut out = [0u8; 6];
    for a in Action::ALL {
        let mut cache = CollisionCache::new();
        out[a.index() as usize] = trials
            .iter()
            .filter(|l| rollout_cached(grid, start, a, &cfg.robot, l, &mut cache))
            .count() as u8;
    }
    out
}

/// Runs the full collection protocol over `grid`. The result depends only on
/// `(grid, cfg)`; `jobs` changes wall time, never bytes.
pub fn collect(grid: &OccupancyGrid, cfg: &CollectConfig, jobs: usize) -> Result<(TravTensor, CollectStats)> {
    cfg.robot.validate()?;
    if cfg.n_total == 0 {
        return Err(Error::usage("n_total must be at least 1"));
    }
    let starts = sample_start_poses(grid, &cfg.robot, &cfg.randomization.nominal(), cfg.sampling);
    let trials: Vec<Limits> = (0..cfg.n_total as u32)
        .map(|t| cfg.randomization.sample(cfg.seed, t))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    let results: Vec<[u8; 6]> = pool.install(|| {
        starts
            .par_iter()
            .map(|s| evaluate_start(grid, &s.pose, cfg, &trials))
            .collect()
    });
    let mut trav = TravTensor::new(*grid.meta());
    let mut stats = CollectStats {
        start_poses: starts.len(),
        ..Default::default()
    };
    for (s, counts) in starts.iter().zip(&results) {
        for a in Action::ALL {
            let n_suc = counts[a.index() as usize];
            trav.insert(
                TravKey {
                    voxel: s.voxel,
                    heading_idx: s.heading_idx,
                    action_idx: a.index(),
                },
                TrialCount {
                    n_suc,
                    n_total: cfg.n_total,
                },
            )?;
            stats.rollouts += cfg.n_total as usize;
            stats.successes += n_suc as usize;
        }
    }
    stats.entries = trav.len();
    Ok((trav, stats))
}
