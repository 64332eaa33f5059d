use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    /// Lever follows the grasp instantly and never slips.
    Coarse,
    /// Lever lags the grasp with a first-order response and the grasp can slip.
    Fine,
}

/// Simulator parameters. Lengths in metres, angles in radians, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub fidelity: Fidelity,
    pub dt: f64,
    pub max_steps: usize,
    pub link_lengths: [f64; 3],
    /// Height of joint 2 above the arm base.
    pub shoulder_height: f64,
    pub joint_limits: [[f64; 2]; 3],
    /// Joints 2-4 at the start of a free episode.
    pub home_pose: [f64; 3],
    pub lever_handle_length: f64,
    pub lever_angle_limit: f64,
    pub grasp_radius: f64,
    /// Grasp is lost when the end effector strays this far from the handle.
    pub slip_radius: Option<f64>,
    /// First-order lag of the lever behind the grasp; 0 means instantaneous.
    pub lever_lag_time_constant: f64,
    /// Horizontal distance range of the lever base from the arm axis.
    pub lever_base_range: [f64; 2],
    /// Azimuth range of the lever base around the arm.
    pub lever_yaw_range: [f64; 2],
    /// Pins the lever base instead of sampling it.
    pub fixed_lever_base: Option<[f64; 3]>,
    pub success_tol: f64,
    pub min_goal_gap: f64,
    pub goal_range: [f64; 2],
    pub action_scale: f64,
    /// Fully open finger position.
    pub finger_max: f64,
    pub finger_speed: f64,
    /// Fingers at or below this opening count as a closed gripper.
    pub finger_closed_threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::coarse()
    }
}

impl EnvConfig {
    pub fn coarse() -> Self {
        Self {
            fidelity: Fidelity::Coarse,
            dt: 0.05,
            max_steps: 100,
            link_lengths: [0.128, 0.124, 0.126],
            shoulder_height: 0.077,
            joint_limits: [[-1.9, 1.9]; 3],
            home_pose: [1.2, -0.8, -1.2],
            lever_handle_length: 0.10,
            lever_angle_limit: 1.2,
            grasp_radius: 0.03,
            slip_radius: None,
            lever_lag_time_constant: 0.0,
            lever_base_range: [0.15, 0.28],
            lever_yaw_range: [-0.5, 0.5],
            fixed_lever_base: None,
            success_tol: 0.025,
            min_goal_gap: 0.4,
            goal_range: [-1.0, 1.0],
            action_scale: 0.1,
            finger_max: 0.019,
            finger_speed: 0.2,
            finger_closed_threshold: 0.005,
        }
    }

    pub fn fine() -> Self {
        Self {
            fidelity: Fidelity::Fine,
            lever_handle_length: 0.12,
            slip_radius: Some(0.05),
            lever_lag_time_constant: 0.1,
            // keeps the longer handle inside the arm's reach at ±1 rad
            lever_base_range: [0.15, 0.26],
            ..Self::coarse()
        }
    }

    pub fn for_fidelity(fidelity: Fidelity) -> Self {
        match fidelity {
            Fidelity::Coarse => Self::coarse(),
            Fidelity::Fine => Self::fine(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |msg: String| Err(EnvError::InvalidConfig(msg));
        let reach: f64 = self.link_lengths.iter().sum();
        if !(self.dt > 0.0) || self.max_steps == 0 {
            return fail("dt and max_steps must be positive".into());
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return fail("link lengths must be positive".into());
        }
        if self.joint_limits.iter().any(|[lo, hi]| !(lo < hi)) {
            return fail("every joint limit needs lo < hi".into());
        }
        if self
            .home_pose
            .iter()
            .zip(&self.joint_limits)
            .any(|(q, [lo, hi])| q < lo || q > hi)
        {
            return fail("home pose violates the joint limits".into());
        }
        if !(self.success_tol > 0.0) {
            return fail("success_tol must be positive".into());
        }
        let [glo, ghi] = self.goal_range;
        if !(glo < ghi) || !(self.min_goal_gap >= 0.0) || self.min_goal_gap >= ghi - glo {
            return fail(format!(
                "min_goal_gap {} must be smaller than the goal range width {}",
                self.min_goal_gap,
                ghi - glo
            ));
        }
        if glo.abs().max(ghi.abs()) > self.lever_angle_limit {
            return fail("goal range exceeds the lever angle limit".into());
        }
        let [dlo, dhi] = self.lever_base_range;
        if !(dlo > 0.0) || dlo > dhi || dhi >= reach {
            return fail(format!("lever base range [{dlo}, {dhi}] must lie inside the arm reach {reach}"));
        }
        if self.lever_yaw_range[0] > self.lever_yaw_range[1] {
            return fail("lever yaw range is reversed".into());
        }
        if !(self.lever_handle_length > 0.0) || !(self.grasp_radius > 0.0) || !(self.action_scale > 0.0) {
            return fail("handle length, grasp radius and action scale must be positive".into());
        }
        if self.slip_radius.is_some_and(|r| r < self.grasp_radius) {
            return fail("slip radius must not be smaller than the grasp radius".into());
        }
        if !(self.lever_lag_time_constant >= 0.0) {
            return fail("lever lag time constant must be non-negative".into());
        }
        if !(self.finger_max > 0.0) || !(self.finger_speed > 0.0) || self.finger_closed_threshold >= self.finger_max {
            return fail("gripper parameters are inconsistent".into());
        }
        Ok(())
    }
}

/// Partial config as read from a file section; unset keys keep the
/// defaults of the section's fidelity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfigOverrides {
    pub dt: Option<f64>,
    pub max_steps: Option<usize>,
    pub link_lengths: Option<[f64; 3]>,
    pub shoulder_height: Option<f64>,
    pub joint_limits: Option<[[f64; 2]; 3]>,
    pub home_pose: Option<[f64; 3]>,
    pub lever_handle_length: Option<f64>,
    pub lever_angle_limit: Option<f64>,
    pub grasp_radius: Option<f64>,
    pub slip_radius: Option<f64>,
    pub lever_lag_time_constant: Option<f64>,
    pub lever_base_range: Option<[f64; 2]>,
    pub lever_yaw_range: Option<[f64; 2]>,
    pub fixed_lever_base: Option<[f64; 3]>,
    pub success_tol: Option<f64>,
    pub min_goal_gap: Option<f64>,
    pub goal_range: Option<[f64; 2]>,
    pub action_scale: Option<f64>,
    pub finger_max: Option<f64>,
    pub finger_speed: Option<f64>,
    pub finger_closed_threshold: Option<f64>,
}

impl EnvConfigOverrides {
    pub fn apply(&self, fidelity: Fidelity) -> EnvConfig {
        let mut c = EnvConfig::for_fidelity(fidelity);
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            dt,
            max_steps,
            link_lengths,
            shoulder_height,
            joint_limits,
            home_pose,
            lever_handle_length,
            lever_angle_limit,
            grasp_radius,
            lever_lag_time_constant,
            lever_base_range,
            lever_yaw_range,
            success_tol,
            min_goal_gap,
            goal_range,
            action_scale,
            finger_max,
            finger_speed,
            finger_closed_threshold
        );
        if self.slip_radius.is_some() {
            c.slip_radius = self.slip_radius;
        }
        if self.fixed_lever_base.is_some() {
            c.fixed_lever_base = self.fixed_lever_base;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EnvConfig::coarse().validate().unwrap();
        EnvConfig::fine().validate().unwrap();
        assert_eq!(EnvConfig::coarse().success_tol, 0.025);
        assert_eq!(EnvConfig::fine().lever_lag_time_constant, 0.1);
    }

    #[test]
    fn gap_wider_than_goal_range_is_invalid() {
        let c = EnvConfig { min_goal_gap: 2.5, ..EnvConfig::coarse() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn lever_outside_reach_is_invalid() {
        let c = EnvConfig { lever_base_range: [0.15, 0.5], ..EnvConfig::coarse() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn overrides_keep_fidelity_defaults() {
        let o = EnvConfigOverrides { dt: Some(0.02), ..Default::default() };
        let fine = o.apply(Fidelity::Fine);
        assert_eq!(fine.dt, 0.02);
        assert_eq!(fine.slip_radius, Some(0.05));
        assert_eq!(fine.lever_handle_length, 0.12);
    }
}
