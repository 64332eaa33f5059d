use super::{angle_about, EnvConfig, Fidelity, LeverWorld};

/// Lever-angle tolerance inside which the goal counts as reached.
pub const SUCCESS_TOL: f64 = 0.025;

/// Sparse reward: 0 inside the tolerance, -1 otherwise (the boundary fails).
pub fn sparse_reward(achieved: f64, desired: f64, tol: f64) -> f64 {
    if (achieved - desired).abs() < tol {
        0.0
    } else {
        -1.0
    }
}

pub fn reward(achieved: f64, desired: f64) -> f64 {
    sparse_reward(achieved, desired, SUCCESS_TOL)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Updates the grasp flag and the lever angle for an end effector at
/// `ee` (arm-plane coordinates).
///
/// An open gripper releases the lever, which then holds its angle. A closed
/// gripper within the grasp radius of the handle engages; while engaged the
/// lever is driven towards the end effector's polar angle about the pivot
/// plus the offset latched at the grasp instant.
pub fn lever_dynamics(world: &mut LeverWorld, ee: [f64; 2], gripper_closed: bool, config: &EnvConfig) {
    if !gripper_closed {
        world.grasped = false;
        return;
    }
    let pivot = world.pivot_plane();
    let polar = angle_about(pivot, ee);
    if !world.grasped && distance(ee, world.handle_plane(config)) < config.grasp_radius {
        world.grasped = true;
        world.grasp_offset = world.lever_angle - polar;
    }
    if !world.grasped {
        return;
    }
    let limit = config.lever_angle_limit;
    let commanded = (polar + world.grasp_offset).clamp(-limit, limit);
    let tau = config.lever_lag_time_constant;
    world.lever_angle = match config.fidelity {
        Fidelity::Fine if tau > 0.0 => {
            let blend = 1.0 - (-config.dt / tau).exp();
            world.lever_angle + (commanded - world.lever_angle) * blend
        }
        _ => commanded,
    };
    if let Some(slip) = config.slip_radius {
        if config.fidelity == Fidelity::Fine && distance(ee, world.handle_plane(config)) > slip {
            world.grasped = false;
        }
    }
}
