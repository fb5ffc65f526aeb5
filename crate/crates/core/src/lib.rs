//! Collaborative end-to-end training of fully connected networks with smooth
//! activations.
//!
//! A collaborative network is a stack of shared hidden layers ("trunk") with
//! one two-layer *subsystem* branching off after every trunk layer, plus a
//! collaborative layer that combines all subsystem outputs. Every subsystem
//! trains its last two layers with an analytic update law; per-sample gains
//! are shrunk until a Lyapunov-style decrease condition holds, so convergence
//! is checked at run time rather than assumed.
//!
//! The crate also contains the two demonstrations built on that trainer: an
//! MNIST classifier (with a plain SGD baseline for comparison) and online
//! resolved-rate control of a simulated 3-DOF arm whose Jacobian is learned.

pub mod activations;
pub mod checkpoint;
pub mod collab_net;
pub mod data_io;
pub mod error;
pub mod kin_sim;
pub mod linalg;
pub mod trainer;

pub use activations::ActivationKind;
pub use collab_net::{CollabNetwork, CollabSpec, ForwardTrace, LayerSpec, SubsystemTrace};
pub use data_io::LabeledDataset;
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use trainer::{EpochRecord, GainSchedule, LearnRates, Phase, Target, TeacherOracle, TrainRun};
