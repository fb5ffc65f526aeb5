//! Run configuration: one TOML file with a section per concern.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cfnn::activations::DEFAULT_LEAKY_SLOPE;
use cfnn::kin_sim::KinConfig;
use cfnn::trainer::TrainConfig;
use cfnn::{ActivationKind, CollabSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Mnist,
    TeacherVerify,
    KinOffline,
    KinOnline,
    ChatterCompare,
    SgdBaseline,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mnist: MnistConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default)]
    pub kin: KinConfig,
    #[serde(default)]
    pub chatter: ChatterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding the uncompressed MNIST IDX files.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Warm-start checkpoint for `kin_online`; trained from scratch when unset.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data/mnist".into(),
            out_dir: "runs/out".into(),
            checkpoint: None,
        }
    }
}

/// Collaborative network used by `mnist`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub widths: Vec<usize>,
    pub hidden: ActivationKind,
    pub output_activation: ActivationKind,
    pub collab_activation: ActivationKind,
    pub bias: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            widths: vec![150, 100, 50],
            hidden: ActivationKind::Sigmoid,
            output_activation: ActivationKind::Sigmoid,
            collab_activation: ActivationKind::Sigmoid,
            bias: true,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, input_dim: usize, output_dim: usize) -> CollabSpec {
        CollabSpec {
            bias: self.bias,
            ..CollabSpec::uniform(
                input_dim,
                &self.widths,
                self.hidden,
                output_dim,
                self.output_activation,
                self.collab_activation,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    /// Train on the first `train_limit` images only.
    pub train_limit: Option<usize>,
    /// Evaluate on the test set after every `eval_every` epochs (and after
    /// the last one).
    pub eval_every: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            train_limit: None,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden: ActivationKind,
    pub output_activation: ActivationKind,
    pub collab_activation: ActivationKind,
    pub samples: usize,
    pub epochs: usize,
    pub c0: f64,
    pub beta: f64,
    /// Largest tolerated single-step increase of the objective.
    pub slack: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            input_dim: 4,
            widths: vec![8],
            output_dim: 2,
            hidden: ActivationKind::Sigmoid,
            output_activation: ActivationKind::Sigmoid,
            collab_activation: ActivationKind::Sigmoid,
            samples: 1000,
            epochs: 10,
            c0: 50.0,
            beta: 0.9,
            slack: 1e-10,
        }
    }
}

impl TeacherConfig {
    pub fn spec(&self) -> CollabSpec {
        CollabSpec::uniform(
            self.input_dim,
            &self.widths,
            self.hidden,
            self.output_dim,
            self.output_activation,
            self.collab_activation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSection {
    pub widths: Vec<usize>,
    pub hidden: ActivationKind,
    pub output_activation: ActivationKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub shuffle: bool,
    pub train_limit: Option<usize>,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self {
            widths: vec![150, 100, 50, 50, 50],
            hidden: ActivationKind::Sigmoid,
            output_activation: ActivationKind::Sigmoid,
            learning_rate: 0.1,
            epochs: 50,
            shuffle: true,
            train_limit: None,
        }
    }
}

/// Hidden activations compared by `chatter_compare`, smooth one first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatterConfig {
    pub activations: Vec<ActivationKind>,
}

impl Default for ChatterConfig {
    fn default() -> Self {
        Self {
            activations: vec![
                ActivationKind::Sigmoid,
                ActivationKind::LeakyRelu {
                    negative_slope: DEFAULT_LEAKY_SLOPE,
                },
            ],
        }
    }
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let train = match experiment {
            Experiment::Mnist => TrainConfig {
                c0: 0.01,
                c0_finetune: Some(0.05),
                pretrain_epochs: 10,
                finetune_epochs: 90,
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        };
        Self {
            experiment,
            seed: 0,
            paths: Paths {
                out_dir: PathBuf::from("runs").join(experiment.to_string()),
                ..Paths::default()
            },
            network: NetworkConfig::default(),
            train,
            mnist: MnistConfig::default(),
            teacher: TeacherConfig::default(),
            sgd: SgdSection::default(),
            kin: KinConfig::default(),
            chatter: ChatterConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Makes the run seed the single source of randomness.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.kin.train.seed = seed;
        self.kin.sampler.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for e in [
            Experiment::Mnist,
            Experiment::TeacherVerify,
            Experiment::KinOffline,
            Experiment::KinOnline,
            Experiment::ChatterCompare,
            Experiment::SgdBaseline,
        ] {
            let c = RunConfig::defaults(e);
            let text = c.to_toml().unwrap();
            let back: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig =
            toml::from_str("experiment = \"teacher_verify\"\nseed = 3\n[teacher]\nsamples = 20\n")
                .unwrap();
        assert_eq!(c.teacher.samples, 20);
        assert_eq!(c.teacher.widths, vec![8]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err =
            toml::from_str::<RunConfig>("experiment = \"mnist\"\nseed = 0\n[train]\nc_0 = 1\n")
                .unwrap_err();
        assert!(err.to_string().contains("c_0"), "{err}");
    }
}
