//! Offline training data gathered around the tracking circle.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::robot::{analytic_ik, analytic_jacobian, RobotModel};
use super::trajectory::Trajectory;
use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};

const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSampler {
    /// Standard deviation of the Gaussian joint jitter around each nominal
    /// pose (rad).
    pub jitter: f64,
    /// Standard deviation of Gaussian noise added to the nominal joint rates
    /// (rad/s). Without it every sample moves along the circle and the
    /// Jacobian is only observed in one direction per pose.
    pub rate_noise: f64,
    pub laps: usize,
    pub elbow_up: bool,
    pub seed: u64,
}

impl Default for OfflineSampler {
    fn default() -> Self {
        Self {
            jitter: 0.05,
            rate_noise: 0.2,
            laps: 1,
            elbow_up: true,
            seed: 0,
        }
    }
}

/// Samples `(q, qd, xd = J(q) qd)` triples: one per control tick of each lap,
/// posed on the circle by inverse kinematics, jittered, and moving with the
/// resolved-rate joint velocity of the nominal pose plus noise. Jittered
/// poses outside the joint limits are redrawn.
pub fn collect_offline(
    robot: &RobotModel,
    trajectory: &Trajectory,
    sampler: &OfflineSampler,
) -> Result<LabeledDataset> {
    robot.validate()?;
    trajectory.validate()?;
    let normal = |what: &str, sd: f64| {
        if sd >= 0.0 && sd.is_finite() {
            Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(format!("{what}: {e}")))
        } else {
            Err(Error::InvalidArgument(format!(
                "{what} must be >= 0, got {sd}"
            )))
        }
    };
    let jitter = normal("jitter", sampler.jitter)?;
    let noise = normal("rate_noise", sampler.rate_noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);

    let steps = trajectory.steps(robot.dt);
    let n = steps * sampler.laps;
    let mut inputs = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for k in 0..n {
        let t = (k % steps.max(1)) as f64 * robot.dt;
        let q_nom = analytic_ik(robot, &trajectory.position(t), sampler.elbow_up)?;
        let qd_nom = analytic_jacobian(robot, &q_nom)
            .lu()
            .solve(&trajectory.velocity(t))
            .ok_or(Error::Singular("jacobian at nominal pose"))?;

        let mut tries = 0;
        let q = loop {
            let q = q_nom + Vector3::from_fn(|_, _| jitter.sample(&mut rng));
            if robot.within_limits(&q) {
                break q;
            }
            tries += 1;
            if tries == MAX_REDRAWS {
                return Err(Error::InvalidArgument(format!(
                    "no jittered pose within joint limits near {q_nom:?}"
                )));
            }
        };
        let qd = qd_nom + Vector3::from_fn(|_, _| noise.sample(&mut rng));
        let xd = analytic_jacobian(robot, &q) * qd;
        inputs.push(q.as_slice().to_vec());
        velocities.push(xd.as_slice().to_vec());
        rates.push(qd.as_slice().to_vec());
    }
    LabeledDataset::with_rates(inputs, velocities, rates)
}
