//! Resolved-rate tracking with a learned Jacobian and online adaptation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::robot::{analytic_ik, analytic_jacobian, fk, ArmState, RobotModel};
use super::trajectory::Trajectory;
use crate::collab_net::CollabNetwork;
use crate::error::{Error, Result};
use crate::trainer::{train_sample, CollabTarget, GainSchedule, LearnRates, SampleReport, Target};

/// Reads a 9-entry network output as a column-major 3x3 Jacobian.
pub fn jacobian_from_output(output: &[f64]) -> Result<Matrix3<f64>> {
    if output.len() != 9 {
        return Err(Error::shape("jacobian output", 9, output.len()));
    }
    Ok(Matrix3::from_column_slice(output))
}

/// Jacobian estimate of subsystem `j` at joint angles `q`.
pub fn jacobian_from_net(net: &CollabNetwork, j: usize, q: &Vector3<f64>) -> Result<Matrix3<f64>> {
    jacobian_from_output(&net.forward_subsystem(j, q.as_slice())?.output)
}

/// Jacobian estimate of the collaborative output.
pub fn jacobian_from_collab(net: &CollabNetwork, q: &Vector3<f64>) -> Result<Matrix3<f64>> {
    jacobian_from_output(&net.predict(q.as_slice())?)
}

/// `J^T (J J^T + lambda^2 I)^-1`; plain inverse-based pseudoinverse when
/// `lambda = 0`.
pub fn damped_pinv(j: &Matrix3<f64>, lambda: f64) -> Result<Matrix3<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "damping must be >= 0, got {lambda}"
        )));
    }
    let gram = j * j.transpose() + Matrix3::identity() * (lambda * lambda);
    let inv = gram
        .try_inverse()
        .ok_or(Error::Singular("jacobian gram matrix"))?;
    let p = j.transpose() * inv;
    if p.iter().all(|v| v.is_finite()) {
        Ok(p)
    } else {
        Err(Error::Singular("jacobian gram matrix"))
    }
}

/// `J_hat^+ v`.
pub fn resolved_rate(j_hat: &Matrix3<f64>, v: &Vector3<f64>, lambda: f64) -> Result<Vector3<f64>> {
    Ok(damped_pinv(j_hat, lambda)? * v)
}

/// Commanded joint rates `J_hat^+ (xd_d - alpha (x - x_d))` using the last
/// subsystem's Jacobian estimate.
pub fn control_step(
    net: &CollabNetwork,
    robot: &RobotModel,
    state: &ArmState,
    x_d: &Vector3<f64>,
    xd_d: &Vector3<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<Vector3<f64>> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "control gain must be > 0, got {alpha}"
        )));
    }
    let j_hat = jacobian_from_net(net, net.subsystem_count() - 1, &state.q)?;
    let dx = fk(robot, &state.q) - x_d;
    resolved_rate(&j_hat, &(xd_d - alpha * dx), lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineUpdate {
    /// Feedback error `(xd - xd_d) + alpha (x - x_d)`.
    pub eps: Vector3<f64>,
    pub report: SampleReport,
}

/// Adapts every layer from one control tick.
///
/// The last subsystem is driven by the feedback error `eps`; earlier
/// subsystems by their own velocity error `xd - J_j qd`; the collaborative
/// layer by `xd - J_n qd`. `xd_measured` must come from the plant, never
/// from the model.
#[allow(clippy::too_many_arguments)]
pub fn online_update(
    net: &mut CollabNetwork,
    state: &ArmState,
    x: &Vector3<f64>,
    xd_measured: &Vector3<f64>,
    x_d: &Vector3<f64>,
    xd_d: &Vector3<f64>,
    alpha: f64,
    rates: &LearnRates,
    gains: &mut GainSchedule,
) -> Result<OnlineUpdate> {
    let eps = (xd_measured - xd_d) + alpha * (x - x_d);
    let s = net.subsystem_count();
    let velocity = Target::Velocity {
        rates: state.qd.as_slice(),
        velocity: xd_measured.as_slice(),
    };
    let mut targets = vec![velocity; s];
    targets[s - 1] = Target::FeedbackError {
        rates: state.qd.as_slice(),
        error: eps.as_slice(),
    };
    let report = train_sample(
        net,
        state.q.as_slice(),
        &targets,
        CollabTarget::Fixed(velocity),
        rates,
        gains,
    )?;
    Ok(OnlineUpdate { eps, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    OfflineOnly,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Task-space feedback gain (1/s).
    pub alpha: f64,
    /// Damping of the pseudoinverse.
    pub lambda: f64,
    /// Base gain for online adaptation.
    pub c0: f64,
    pub beta: f64,
    pub rates: LearnRates,
    /// Inverse-kinematics branch for the start pose.
    pub elbow_up: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            lambda: 0.01,
            c0: 1.0,
            beta: 0.9,
            rates: LearnRates::new(1.0, 1.0, 1.0),
            elbow_up: true,
        }
    }
}

/// Per-tick record of a tracking run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingLog {
    pub t: Vec<f64>,
    /// `x - x_d` (m).
    pub dx: Vec<[f64; 3]>,
    /// Feedback error (m/s).
    pub eps: Vec<[f64; 3]>,
    /// Commanded joint rates (rad/s).
    pub qd: Vec<[f64; 3]>,
    /// Subsystem gains followed by the collaborative gain; empty rows in
    /// offline-only runs.
    pub gains: Vec<Vec<f64>>,
    pub gain_violations: usize,
    /// Why the run stopped early, if it did.
    pub terminated: Option<String>,
}

impl TrackingLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Root mean square of `|x - x_d|`.
    pub fn rms_dx(&self) -> f64 {
        if self.dx.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .dx
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>())
            .sum();
        (sum / self.dx.len() as f64).sqrt()
    }
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Tracks `trajectory` from the pose on its start point, integrating
/// `q <- q + qd dt` each tick. In online mode every tick also adapts the
/// network. Leaving the joint limits stops the run and sets
/// [`TrackingLog::terminated`].
pub fn run_tracking(
    net: &mut CollabNetwork,
    robot: &RobotModel,
    trajectory: &Trajectory,
    mode: TrackingMode,
    cfg: &TrackingConfig,
) -> Result<TrackingLog> {
    robot.validate()?;
    trajectory.validate()?;
    cfg.rates.validate()?;
    let mut gains = GainSchedule::new(cfg.c0, cfg.beta, net.subsystem_count())?;
    let mut state = ArmState::at_rest(analytic_ik(robot, &trajectory.position(0.0), cfg.elbow_up)?);
    let steps = trajectory.steps(robot.dt);
    let mut log = TrackingLog::default();
    for k in 0..steps {
        let t = k as f64 * robot.dt;
        let x_d = trajectory.position(t);
        let xd_d = trajectory.velocity(t);
        let x = fk(robot, &state.q);
        state.qd = control_step(net, robot, &state, &x_d, &xd_d, cfg.alpha, cfg.lambda)?;
        let xd = analytic_jacobian(robot, &state.q) * state.qd;
        let eps = match mode {
            TrackingMode::OfflineOnly => (xd - xd_d) + cfg.alpha * (x - x_d),
            TrackingMode::Online => {
                let up = online_update(
                    net, &state, &x, &xd, &x_d, &xd_d, cfg.alpha, &cfg.rates, &mut gains,
                )?;
                log.gain_violations += up.report.gain_violations;
                let mut g = gains.subsystem_gains().to_vec();
                g.push(gains.collab());
                log.gains.push(g);
                up.eps
            }
        };
        log.t.push(t);
        log.dx.push(arr(&(x - x_d)));
        log.eps.push(arr(&eps));
        log.qd.push(arr(&state.qd));
        if mode == TrackingMode::OfflineOnly {
            log.gains.push(Vec::new());
        }

        state.q += state.qd * robot.dt;
        if !robot.within_limits(&state.q) {
            log.terminated = Some(format!("joint limits left at t = {:.2} s", t + robot.dt));
            break;
        }
    }
    Ok(log)
}

/// Total variation `sum |qd(k+1) - qd(k)|_1` over ticks `k` where some
/// component of the feedback error changes sign between `k` and `k+1`.
pub fn chattering_metric(log: &TrackingLog) -> f64 {
    let mut total = 0.0;
    for k in 0..log.len().saturating_sub(1) {
        let flips = (0..3).any(|i| log.eps[k][i] * log.eps[k + 1][i] < 0.0);
        if flips {
            total += (0..3)
                .map(|i| (log.qd[k + 1][i] - log.qd[k][i]).abs())
                .sum::<f64>();
        }
    }
    total
}
