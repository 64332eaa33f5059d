//! Kinematic planar manipulator and lever simulator.
//!
//! The arm has a fixed base yaw that points its vertical working plane at
//! the lever base; the agent drives joints 2-4 and the gripper. The lever
//! pivots about an axis perpendicular to that plane, so the whole task is
//! planar and lifted to 3-D only for the observation.

mod config;
mod dynamics;
pub mod kinematics;
mod episode_log;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub use config::{EnvConfig, EnvConfigOverrides, Fidelity};
pub use dynamics::{lever_dynamics, reward, sparse_reward, SUCCESS_TOL};
pub use episode_log::{read_episode_log, write_episode_log, StepRecord};

use kinematics::{base_yaw, lift, planar_fk, planar_ik};

pub const OBS_DIM: usize = 20;
pub const ACTION_DIM: usize = 4;
/// Observation slot holding the current lever angle (the achieved goal).
pub const ACHIEVED_SLOT: usize = 18;
/// Observation slot holding the desired lever angle.
pub const GOAL_SLOT: usize = 19;

pub type Observation = [f64; OBS_DIM];
pub type Action = [f64; ACTION_DIM];

/// Human-readable names of the observation slots.
pub const FEATURE_NAMES: [&str; OBS_DIM] = [
    "joint1_angle",
    "joint2_angle",
    "joint3_angle",
    "joint4_angle",
    "joint1_velocity",
    "joint2_velocity",
    "joint3_velocity",
    "joint4_velocity",
    "finger_left_position",
    "finger_right_position",
    "finger_left_velocity",
    "finger_right_velocity",
    "lever_base_x",
    "lever_base_y",
    "lever_base_z",
    "ee_minus_lever_base_x",
    "ee_minus_lever_base_y",
    "ee_minus_lever_base_z",
    "lever_angle",
    "goal_angle",
];

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("lever base at the arm origin; base yaw is undefined")]
    DegeneratePose,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("episode log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How episodes start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curriculum {
    /// Home pose, gripper open.
    Free,
    /// Gripper closed on the lever handle.
    Grasping,
    /// Grasp start on every other episode, beginning with a grasp start.
    Alternate,
}

/// Complete simulator state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LeverWorld {
    /// Joints 2-4 (rad).
    pub joint_angles: [f64; 3],
    pub joint_velocities: [f64; 3],
    /// Mirrored finger openings (m).
    pub gripper_fingers: [f64; 2],
    pub gripper_finger_velocities: [f64; 2],
    /// Joint 1, fixed for the episode.
    pub base_yaw: f64,
    /// Lever pivot relative to the arm base (m).
    pub lever_base: [f64; 3],
    pub lever_angle: f64,
    pub goal_angle: f64,
    pub grasped: bool,
    /// Lever angle minus the end effector's polar angle about the pivot,
    /// latched when the grasp engages.
    pub grasp_offset: f64,
    pub step_count: usize,
}

/// Fixed initial condition for an episode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scenario {
    pub lever_start: f64,
    pub goal: f64,
    pub lever_base: [f64; 3],
    #[serde(default)]
    pub grasp_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepInfo {
    pub achieved_goal: f64,
    pub is_success: bool,
    pub grasped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

impl LeverWorld {
    /// Horizontal distance of the lever pivot from the arm axis.
    pub fn lever_distance(&self) -> f64 {
        self.lever_base[0].hypot(self.lever_base[1])
    }

    /// Lever pivot in the arm plane `(rho, z)`.
    pub fn pivot_plane(&self) -> [f64; 2] {
        [self.lever_distance(), self.lever_base[2]]
    }

    /// End effector in the arm plane, measured from the arm base.
    pub fn ee_plane(&self, config: &EnvConfig) -> [f64; 2] {
        let p = planar_fk(&self.joint_angles, &config.link_lengths);
        [p[0], p[1] + config.shoulder_height]
    }

    pub fn ee_position(&self, config: &EnvConfig) -> [f64; 3] {
        lift(self.ee_plane(config), self.base_yaw)
    }

    pub fn handle_plane(&self, config: &EnvConfig) -> [f64; 2] {
        handle_point(self.pivot_plane(), self.lever_angle, config.lever_handle_length)
    }

    pub fn gripper_closed(&self, config: &EnvConfig) -> bool {
        self.gripper_fingers.iter().all(|&f| f <= config.finger_closed_threshold)
    }

    pub fn observation(&self, config: &EnvConfig) -> Observation {
        let ee = self.ee_position(config);
        let mut obs = [0.0; OBS_DIM];
        obs[0] = self.base_yaw;
        obs[1..4].copy_from_slice(&self.joint_angles);
        obs[4] = 0.0;
        obs[5..8].copy_from_slice(&self.joint_velocities);
        obs[8..10].copy_from_slice(&self.gripper_fingers);
        obs[10..12].copy_from_slice(&self.gripper_finger_velocities);
        obs[12..15].copy_from_slice(&self.lever_base);
        for i in 0..3 {
            obs[15 + i] = ee[i] - self.lever_base[i];
        }
        obs[ACHIEVED_SLOT] = self.lever_angle;
        obs[GOAL_SLOT] = self.goal_angle;
        obs
    }

    pub fn is_success(&self, config: &EnvConfig) -> bool {
        sparse_reward(self.lever_angle, self.goal_angle, config.success_tol) == 0.0
    }
}

/// Handle position for a lever pivoting at `pivot`; angle 0 is upright and
/// positive angles tilt away from the arm.
pub fn handle_point(pivot: [f64; 2], lever_angle: f64, handle_length: f64) -> [f64; 2] {
    [
        pivot[0] + handle_length * lever_angle.sin(),
        pivot[1] + handle_length * lever_angle.cos(),
    ]
}

/// Polar angle of `point` about `pivot`, on the same convention as the lever angle.
pub fn angle_about(pivot: [f64; 2], point: [f64; 2]) -> f64 {
    (point[0] - pivot[0]).atan2(point[1] - pivot[1])
}

/// Start and goal lever angles, uniform in the goal range and at least
/// `min_goal_gap` apart (rejection sampling).
pub fn sample_goal_pair<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> (f64, f64) {
    let [lo, hi] = config.goal_range;
    loop {
        let start = rng.random_range(lo..=hi);
        let goal = rng.random_range(lo..=hi);
        if (start - goal).abs() > config.min_goal_gap {
            return (start, goal);
        }
    }
}

fn sample_lever_base<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> [f64; 3] {
    if let Some(base) = config.fixed_lever_base {
        return base;
    }
    let d = rng.random_range(config.lever_base_range[0]..=config.lever_base_range[1]);
    let [ylo, yhi] = config.lever_yaw_range;
    let yaw = if ylo < yhi { rng.random_range(ylo..=yhi) } else { ylo };
    [d * yaw.cos(), d * yaw.sin(), 0.0]
}

/// Builds the initial world for a scenario. A grasp start that has no
/// inverse-kinematics solution falls back to the home pose and is logged.
pub fn world_from_scenario(config: &EnvConfig, scenario: &Scenario) -> Result<LeverWorld, EnvError> {
    let yaw = base_yaw(scenario.lever_base[0], scenario.lever_base[1])?;
    let limit = config.lever_angle_limit;
    if scenario.lever_start.abs() > limit || !scenario.lever_start.is_finite() || !scenario.goal.is_finite() {
        return Err(EnvError::InvalidScenario(format!(
            "lever start {} outside ±{limit}",
            scenario.lever_start
        )));
    }
    let mut world = LeverWorld {
        joint_angles: config.home_pose,
        joint_velocities: [0.0; 3],
        gripper_fingers: [config.finger_max; 2],
        gripper_finger_velocities: [0.0; 2],
        base_yaw: yaw,
        lever_base: scenario.lever_base,
        lever_angle: scenario.lever_start,
        goal_angle: scenario.goal,
        grasped: false,
        grasp_offset: 0.0,
        step_count: 0,
    };
    if scenario.grasp_start {
        let handle = world.handle_plane(config);
        let target = [handle[0], handle[1] - config.shoulder_height];
        match planar_ik(target, &config.link_lengths, &config.joint_limits) {
            Some(q) => {
                world.joint_angles = q;
                world.gripper_fingers = [0.0; 2];
                world.grasped = true;
                world.grasp_offset = world.lever_angle - angle_about(world.pivot_plane(), world.ee_plane(config));
            }
            None => log::warn!("no grasp pose for handle at {handle:?}; starting from home pose"),
        }
    }
    Ok(world)
}

/// Samples lever placement and start/goal angles and builds the initial world.
pub fn reset<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R, grasp_start: bool) -> Result<LeverWorld, EnvError> {
    let lever_base = sample_lever_base(config, rng);
    let (lever_start, goal) = sample_goal_pair(config, rng);
    world_from_scenario(config, &Scenario { lever_start, goal, lever_base, grasp_start })
}

fn sanitize(action: &Action) -> Action {
    let mut a = [0.0; ACTION_DIM];
    for (dst, &src) in a.iter_mut().zip(action) {
        *dst = if src.is_nan() { 0.0 } else { src.clamp(-1.0, 1.0) };
    }
    a
}

/// Advances the world by one control step.
pub fn step(world: &mut LeverWorld, action: &Action, config: &EnvConfig) -> StepOutcome {
    let action = sanitize(action);
    for i in 0..3 {
        let [lo, hi] = config.joint_limits[i];
        let target = (world.joint_angles[i] + config.action_scale * action[i]).clamp(lo, hi);
        world.joint_velocities[i] = (target - world.joint_angles[i]) / config.dt;
        world.joint_angles[i] = target;
    }
    // a4 >= 0 opens, a4 < 0 closes
    let finger_target = if action[3] >= 0.0 { config.finger_max } else { 0.0 };
    let max_move = config.finger_speed * config.dt;
    for i in 0..2 {
        let f = world.gripper_fingers[i];
        let next = f + (finger_target - f).clamp(-max_move, max_move);
        world.gripper_finger_velocities[i] = (next - f) / config.dt;
        world.gripper_fingers[i] = next;
    }
    let ee = world.ee_plane(config);
    let closed = world.gripper_closed(config);
    lever_dynamics(world, ee, closed, config);
    world.step_count += 1;

    let reward = sparse_reward(world.lever_angle, world.goal_angle, config.success_tol);
    StepOutcome {
        observation: world.observation(config),
        reward,
        done: world.step_count >= config.max_steps,
        info: StepInfo {
            achieved_goal: world.lever_angle,
            is_success: reward == 0.0,
            grasped: world.grasped,
        },
    }
}

/// Stateful wrapper owning a world, its config and a private RNG stream.
#[derive(Debug, Clone)]
pub struct LeverEnv {
    config: EnvConfig,
    curriculum: Curriculum,
    rng: ChaCha8Rng,
    world: Option<LeverWorld>,
    episodes_started: u64,
}

impl LeverEnv {
    pub fn new(config: EnvConfig, curriculum: Curriculum, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            curriculum,
            rng: ChaCha8Rng::seed_from_u64(seed),
            world: None,
            episodes_started: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn curriculum(&self) -> Curriculum {
        self.curriculum
    }

    pub fn world(&self) -> Option<&LeverWorld> {
        self.world.as_ref()
    }

    /// Starts a new episode according to the curriculum.
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let grasp_start = match self.curriculum {
            Curriculum::Free => false,
            Curriculum::Grasping => true,
            Curriculum::Alternate => self.episodes_started % 2 == 0,
        };
        self.episodes_started += 1;
        let world = reset(&self.config, &mut self.rng, grasp_start)?;
        let obs = world.observation(&self.config);
        self.world = Some(world);
        Ok(obs)
    }

    /// Starts a new episode from a fixed initial condition.
    pub fn reset_to(&mut self, scenario: &Scenario) -> Result<Observation, EnvError> {
        let world = world_from_scenario(&self.config, scenario)?;
        let obs = world.observation(&self.config);
        self.episodes_started += 1;
        self.world = Some(world);
        Ok(obs)
    }

    /// # Panics
    /// If called before the first reset.
    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let world = self.world.as_mut().expect("reset before step");
        step(world, action, &self.config)
    }

    pub fn reward(&self, achieved: f64, desired: f64) -> f64 {
        sparse_reward(achieved, desired, self.config.success_tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_world(grasp: bool) -> (EnvConfig, LeverWorld) {
        let config = EnvConfig::coarse();
        let scenario = Scenario { lever_start: 0.3, goal: -0.4, lever_base: [0.2, 0.05, 0.0], grasp_start: grasp };
        let world = world_from_scenario(&config, &scenario).unwrap();
        (config, world)
    }

    #[test]
    fn goal_pairs_respect_range_and_gap() {
        let config = EnvConfig::coarse();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let (s, g) = sample_goal_pair(&config, &mut rng);
            assert!((-1.0..=1.0).contains(&s) && (-1.0..=1.0).contains(&g));
            assert!((s - g).abs() > 0.4);
        }
        let a = sample_goal_pair(&config, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_goal_pair(&config, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let gap: f64 = 0.93192543 - (-0.28526712);
        assert!((gap - 1.21719255).abs() < 1e-8 && gap > 0.4);
    }

    #[test]
    fn observation_layout() {
        let (config, world) = env_world(false);
        let obs = world.observation(&config);
        assert_eq!(obs[0], world.base_yaw);
        assert_eq!(obs[4], 0.0);
        assert_eq!(&obs[12..15], &world.lever_base);
        assert_eq!(obs[ACHIEVED_SLOT], 0.3);
        assert_eq!(obs[GOAL_SLOT], -0.4);
        let ee = world.ee_position(&config);
        assert!((obs[15] + world.lever_base[0] - ee[0]).abs() < 1e-15);
        assert_eq!(obs[8], config.finger_max);
    }

    #[test]
    fn zero_action_keeps_joints_and_opens_gripper() {
        let (config, mut world) = env_world(true);
        let before = world.joint_angles;
        let out = step(&mut world, &[0.0; 4], &config);
        assert_eq!(world.joint_angles, before);
        assert!(world.gripper_fingers[0] > 0.0);
        assert_eq!(out.observation[5], 0.0);
    }

    #[test]
    fn action_scale_moves_joint_two() {
        let (config, mut world) = env_world(false);
        let before = world.joint_angles[0];
        step(&mut world, &[1.0, 0.0, 0.0, 1.0], &config);
        assert!((world.joint_angles[0] - before - 0.1).abs() < 1e-12);
        assert!((world.joint_velocities[0] - 0.1 / config.dt).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_and_nan_actions_are_sanitized() {
        let (config, mut a) = env_world(false);
        let mut b = a.clone();
        step(&mut a, &[5.0, f64::NAN, -3.0, 2.0], &config);
        step(&mut b, &[1.0, 0.0, -1.0, 1.0], &config);
        assert_eq!(a, b);
    }

    #[test]
    fn joint_limits_clamp() {
        let (config, mut world) = env_world(false);
        for _ in 0..50 {
            step(&mut world, &[1.0, 1.0, 1.0, 1.0], &config);
        }
        assert!(world.joint_angles.iter().all(|&q| q <= 1.9));
    }

    #[test]
    fn episode_ends_at_step_limit() {
        let (config, mut world) = env_world(false);
        let mut done = false;
        for t in 0..config.max_steps {
            let out = step(&mut world, &[0.0; 4], &config);
            done = out.done;
            assert_eq!(done, t + 1 == config.max_steps);
        }
        assert!(done);
    }

    #[test]
    fn grasp_start_places_gripper_on_handle() {
        let (config, world) = env_world(true);
        assert!(world.grasped);
        let ee = world.ee_plane(&config);
        let h = world.handle_plane(&config);
        assert!((ee[0] - h[0]).hypot(ee[1] - h[1]) < config.grasp_radius);
        assert!(world.grasp_offset.abs() < 1e-9);
    }

    #[test]
    fn grasp_poses_exist_across_the_sampling_range() {
        for config in [EnvConfig::coarse(), EnvConfig::fine()] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..2000 {
                let w = reset(&config, &mut rng, true).unwrap();
                assert!(w.grasped, "no grasp pose for {:?} at {}", w.lever_base, w.lever_angle);
            }
            let [dlo, dhi] = config.lever_base_range;
            for (d, angle) in [(dlo, -1.0), (dlo, 1.0), (dhi, 1.0), (dhi, -1.0)] {
                let s = Scenario { lever_start: angle, goal: 0.0, lever_base: [d, 0.0, 0.0], grasp_start: true };
                assert!(world_from_scenario(&config, &s).unwrap().grasped, "d={d} angle={angle}");
            }
        }
    }

    #[test]
    fn alternate_curriculum_is_half_grasped() {
        let mut env = LeverEnv::new(EnvConfig::coarse(), Curriculum::Alternate, 1).unwrap();
        let mut grasped = 0;
        for _ in 0..100 {
            env.reset().unwrap();
            grasped += env.world().unwrap().grasped as usize;
        }
        assert_eq!(grasped, 50);
    }

    #[test]
    fn reset_places_goal_in_last_slot() {
        let mut env = LeverEnv::new(EnvConfig::coarse(), Curriculum::Free, 4).unwrap();
        let obs = env.reset().unwrap();
        assert_eq!(obs[GOAL_SLOT], env.world().unwrap().goal_angle);
    }

    #[test]
    fn replaying_actions_reproduces_observations() {
        let run = || {
            let mut env = LeverEnv::new(EnvConfig::fine(), Curriculum::Alternate, 9).unwrap();
            let mut obs = vec![env.reset().unwrap()];
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..100 {
                let a: Action = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                obs.push(env.step(&a).observation);
            }
            obs
        };
        let (a, b) = (run(), run());
        assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn degenerate_lever_base_is_rejected() {
        let config = EnvConfig::coarse();
        let s = Scenario { lever_start: 0.0, goal: 0.5, lever_base: [0.0, 0.0, 0.0], grasp_start: false };
        assert!(matches!(world_from_scenario(&config, &s), Err(EnvError::DegeneratePose)));
    }
}
