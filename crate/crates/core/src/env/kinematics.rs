//! Planar three-joint arm kinematics in the vertical plane selected by the
//! fixed base yaw.
//!
//! In-plane coordinates are `(rho, z)`: `rho` along the horizontal axis that
//! the base yaw points at, `z` up. Joint angles are relative, counter-clockwise
//! positive, and zero means the link continues straight along its parent.

use std::f64::consts::PI;

use super::EnvError;

/// Base yaw that points the arm's working plane at the lever base.
pub fn base_yaw(lever_base_x: f64, lever_base_y: f64) -> Result<f64, EnvError> {
    if lever_base_x == 0.0 && lever_base_y == 0.0 {
        return Err(EnvError::DegeneratePose);
    }
    Ok(lever_base_y.atan2(lever_base_x))
}

/// End-effector position relative to the shoulder joint, in the arm plane.
pub fn planar_fk(joint_angles: &[f64; 3], link_lengths: &[f64; 3]) -> [f64; 2] {
    let mut heading = 0.0;
    let mut p = [0.0, 0.0];
    for (angle, len) in joint_angles.iter().zip(link_lengths) {
        heading += angle;
        p[0] += len * heading.cos();
        p[1] += len * heading.sin();
    }
    p
}

/// Lifts an in-plane point (relative to the arm base axis) to 3-D using the base yaw.
pub fn lift(plane: [f64; 2], yaw: f64) -> [f64; 3] {
    [plane[0] * yaw.cos(), plane[0] * yaw.sin(), plane[1]]
}

/// Joint angles placing the end effector at `target` (relative to the
/// shoulder), or `None` if no configuration within `limits` exists.
///
/// The redundant degree of freedom is resolved by scanning the approach
/// heading of the last link, starting from pointing straight down.
pub fn planar_ik(target: [f64; 2], link_lengths: &[f64; 3], limits: &[[f64; 2]; 3]) -> Option<[f64; 3]> {
    let [l1, l2, l3] = *link_lengths;
    let within = |q: &[f64; 3]| q.iter().zip(limits).all(|(a, lim)| *a >= lim[0] && *a <= lim[1]);
    const STEPS: usize = 72;
    for i in 0..=2 * STEPS {
        // -pi/2, then alternate either side of it
        let offset = (i.div_ceil(2)) as f64 * (PI / STEPS as f64);
        let heading = -PI / 2.0 + if i % 2 == 0 { offset } else { -offset };
        let wrist = [target[0] - l3 * heading.cos(), target[1] - l3 * heading.sin()];
        let r2 = wrist[0] * wrist[0] + wrist[1] * wrist[1];
        let c = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c) {
            continue;
        }
        for elbow in [c.acos(), -c.acos()] {
            let shoulder = wrist[1].atan2(wrist[0]) - (l2 * elbow.sin()).atan2(l1 + l2 * elbow.cos());
            let q = [wrap(shoulder), elbow, wrap(heading - shoulder - elbow)];
            if within(&q) {
                return Some(q);
            }
        }
    }
    None
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}
