//! Desired end-effector paths.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal circle traced counter-clockwise from `center + (radius, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    /// Meters.
    pub center: [f64; 3],
    pub radius: f64,
    /// Seconds per lap.
    pub period: f64,
    /// Seconds tracked.
    pub duration: f64,
}

impl Default for Trajectory {
    /// The tracking circle used throughout: 0.1 m radius, one 20 s lap.
    fn default() -> Self {
        Self {
            center: [0.65, 0.0, 0.2],
            radius: 0.1,
            period: 20.0,
            duration: 20.0,
        }
    }
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.period > 0.0 && self.duration >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "trajectory needs radius >= 0, period > 0, duration >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        TAU / self.period
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let (s, c) = (self.omega() * t).sin_cos();
        Vector3::from(self.center) + self.radius * Vector3::new(c, s, 0.0)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let w = self.omega();
        let (s, c) = (w * t).sin_cos();
        self.radius * w * Vector3::new(-s, c, 0.0)
    }

    /// Number of control ticks, `duration / dt` rounded to the nearest integer.
    pub fn steps(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lap_geometry() {
        let t = Trajectory::default();
        assert!((t.position(0.0) - Vector3::new(0.75, 0.0, 0.2)).norm() < 1e-15);
        assert!((t.position(20.0) - t.position(0.0)).norm() < 1e-12);
        assert_eq!(t.steps(0.01), 2000);
        assert!(Trajectory { period: 0.0, ..t }.validate().is_err());
    }

    proptest! {
        #[test]
        fn velocity_is_time_derivative(time in 0.0f64..40.0) {
            let t = Trajectory::default();
            let h = 1e-5;
            let fd = (t.position(time + h) - t.position(time - h)) / (2.0 * h);
            prop_assert!((fd - t.velocity(time)).amax() < 1e-9);
        }
    }
}
