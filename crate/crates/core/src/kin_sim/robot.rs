//! Three-joint articulated arm used as ground truth.
//!
//! Convention: joint 1 rotates about the vertical `z` axis; joints 2 and 3
//! rotate about parallel horizontal axes. Link 1 is a horizontal offset from
//! the base axis, links 2 and 3 form the planar elbow. At `q = 0` every link
//! points along `+x`, so the end effector sits at `(l1 + l2 + l3, 0, 0)`.
//!
//! ```text
//! r = l1 + l2 cos q2 + l3 cos(q2 + q3)
//! z =      l2 sin q2 + l3 sin(q2 + q3)
//! x = (r cos q1, r sin q1, z)
//! ```

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    /// Meters.
    pub links: [f64; 3],
    /// Radians, `(min, max)` per joint.
    pub joint_limits: [(f64, f64); 3],
    /// Control period in seconds.
    pub dt: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            links: [0.4, 0.3, 0.2],
            joint_limits: [(-PI, PI), (-PI, PI), (-3.0, 3.0)],
            dt: 0.01,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !self.links.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "link lengths must be positive, got {:?}",
                self.links
            )));
        }
        if !self.joint_limits.iter().all(|&(lo, hi)| lo < hi) {
            return Err(Error::InvalidArgument(
                "joint limits must satisfy min < max".into(),
            ));
        }
        Ok(())
    }

    pub fn reach(&self) -> f64 {
        self.links.iter().sum()
    }

    pub fn within_limits(&self, q: &Vector3<f64>) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(&v, &(lo, hi))| v.is_finite() && v >= lo && v <= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmState {
    pub q: Vector3<f64>,
    pub qd: Vector3<f64>,
}

impl ArmState {
    pub fn at_rest(q: Vector3<f64>) -> Self {
        Self {
            q,
            qd: Vector3::zeros(),
        }
    }
}

pub fn fk(robot: &RobotModel, q: &Vector3<f64>) -> Vector3<f64> {
    let [l1, l2, l3] = robot.links;
    let q23 = q[1] + q[2];
    let r = l1 + l2 * q[1].cos() + l3 * q23.cos();
    let z = l2 * q[1].sin() + l3 * q23.sin();
    Vector3::new(r * q[0].cos(), r * q[0].sin(), z)
}

pub fn analytic_jacobian(robot: &RobotModel, q: &Vector3<f64>) -> Matrix3<f64> {
    let [l1, l2, l3] = robot.links;
    let (s1, c1) = q[0].sin_cos();
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let r = l1 + l2 * c2 + l3 * c23;
    let dr2 = -l2 * s2 - l3 * s23;
    let dz2 = l2 * c2 + l3 * c23;
    let dr3 = -l3 * s23;
    let dz3 = l3 * c23;
    Matrix3::new(
        -r * s1,
        dr2 * c1,
        dr3 * c1, //
        r * c1,
        dr2 * s1,
        dr3 * s1, //
        0.0,
        dz2,
        dz3,
    )
}

/// Joint angles placing the end effector at `x`. `elbow_up` picks
/// `q3 <= 0` (upper arm raised, forearm folding down).
pub fn analytic_ik(robot: &RobotModel, x: &Vector3<f64>, elbow_up: bool) -> Result<Vector3<f64>> {
    let [l1, l2, l3] = robot.links;
    let q1 = x[1].atan2(x[0]);
    let r = x[0].hypot(x[1]) - l1;
    let z = x[2];
    let c3 = (r * r + z * z - l2 * l2 - l3 * l3) / (2.0 * l2 * l3);
    if !(-1.0..=1.0).contains(&c3) {
        return Err(Error::InvalidArgument(format!(
            "target {x:?} is out of reach"
        )));
    }
    let q3 = if elbow_up { -c3.acos() } else { c3.acos() };
    let q2 = z.atan2(r) - (l3 * q3.sin()).atan2(l2 + l3 * q3.cos());
    Ok(Vector3::new(q1, q2, q3))
}
