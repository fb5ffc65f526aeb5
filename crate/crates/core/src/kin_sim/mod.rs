//! Simulated 3-DOF arm whose Jacobian is learned by a collaborative network.
//!
//! The network maps joint angles `q` to a column-major 3x3 Jacobian
//! estimate, so the predicted end-effector velocity is `J_hat(q) qd`. It is
//! trained offline on samples gathered around a circle, then used for
//! resolved-rate tracking of that circle, optionally adapting every layer
//! online from the feedback error.

mod collect;
mod control;
mod robot;
mod trajectory;

pub use collect::{collect_offline, OfflineSampler};
pub use control::{
    chattering_metric, control_step, damped_pinv, jacobian_from_collab, jacobian_from_net,
    jacobian_from_output, online_update, resolved_rate, run_tracking, OnlineUpdate, TrackingConfig,
    TrackingLog, TrackingMode,
};
pub use robot::{analytic_ik, analytic_jacobian, fk, ArmState, RobotModel};
pub use trajectory::Trajectory;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::collab_net::{CollabNetwork, CollabSpec};
use crate::data_io::LabeledDataset;
use crate::error::Result;
use crate::trainer::{train_two_phase, EpochRecord, TrainConfig, TrainRun};

/// `3 -> widths -> 9` with identity output and collaborative layers.
pub fn kin_spec(widths: &[usize], hidden: ActivationKind) -> CollabSpec {
    CollabSpec::uniform(
        3,
        widths,
        hidden,
        9,
        ActivationKind::Identity,
        ActivationKind::Identity,
    )
}

/// Everything needed to train a Jacobian network offline and track with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinConfig {
    pub robot: RobotModel,
    pub trajectory: Trajectory,
    pub sampler: OfflineSampler,
    pub widths: Vec<usize>,
    pub hidden: ActivationKind,
    pub train: TrainConfig,
    pub tracking: TrackingConfig,
}

impl Default for KinConfig {
    fn default() -> Self {
        Self {
            robot: RobotModel::default(),
            trajectory: Trajectory::default(),
            sampler: OfflineSampler::default(),
            widths: vec![12, 24, 24],
            hidden: ActivationKind::Sigmoid,
            train: TrainConfig {
                c0: 0.05,
                c0_finetune: Some(5.0),
                pretrain_epochs: 25,
                finetune_epochs: 100,
                ..TrainConfig::default()
            },
            tracking: TrackingConfig {
                c0: 10.0,
                ..TrackingConfig::default()
            },
        }
    }
}

/// Collects the offline dataset and trains a fresh network on it.
pub fn train_offline(
    cfg: &KinConfig,
    on_epoch: impl FnMut(&CollabNetwork, &EpochRecord) -> Result<bool>,
) -> Result<(CollabNetwork, LabeledDataset, TrainRun)> {
    let data = collect_offline(&cfg.robot, &cfg.trajectory, &cfg.sampler)?;
    let mut net = CollabNetwork::init(kin_spec(&cfg.widths, cfg.hidden), cfg.train.seed)?;
    let run = train_two_phase(&mut net, &data, &cfg.train, on_epoch)?;
    Ok((net, data, run))
}

/// Mean of `|J_hat_j(q) - J(q)|_F / |J(q)|_F` over the poses of `data`, per
/// subsystem, then for the collaborative output.
pub fn jacobian_fit(
    net: &CollabNetwork,
    robot: &RobotModel,
    data: &LabeledDataset,
) -> Result<Vec<f64>> {
    let s = net.subsystem_count();
    let mut acc = vec![0.0; s + 1];
    for i in 0..data.len() {
        let q = Vector3::from_column_slice(data.input(i));
        let j = analytic_jacobian(robot, &q);
        let tr = net.forward_collab(q.as_slice())?;
        for (a, t) in acc.iter_mut().zip(&tr.subsystems) {
            *a += (jacobian_from_output(&t.output)? - j).norm() / j.norm();
        }
        acc[s] += (jacobian_from_output(&tr.collab_out)? - j).norm() / j.norm();
    }
    let n = data.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}
