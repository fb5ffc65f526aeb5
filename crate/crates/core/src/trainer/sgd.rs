//! Plain multilayer perceptron trained by per-sample backpropagation on
//! squared error with a fixed step size. Used as the comparison baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: ActivationKind,
    pub output_dim: usize,
    pub output_activation: ActivationKind,
}

impl MlpSpec {
    fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }
}

/// Layers with a trailing bias column, initialized like the collaborative
/// network (`U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Matrix>,
}

impl Mlp {
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "MLP layer widths must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let cols = w[0] + 1;
                Matrix::uniform(w[1], cols, 1.0 / (cols as f64).sqrt(), &mut rng)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn activation(&self, layer: usize) -> ActivationKind {
        if layer + 1 == self.layers.len() {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    /// Augmented layer inputs and pre-activations of every layer; the last
    /// entry of the first list is the network output (unaugmented).
    fn forward_all(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        a.push(1.0);
        for (l, w) in self.layers.iter().enumerate() {
            let z = w.matvec(&a);
            let mut next: Vec<f64> = z.iter().map(|&v| self.activation(l).apply(v)).collect();
            acts.push(a);
            if l + 1 < self.layers.len() {
                next.push(1.0);
            }
            pres.push(z);
            a = next;
        }
        acts.push(a);
        (acts, pres)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).0.pop().unwrap()
    }

    /// One backpropagation step on `0.5 |y - y_hat|^2`; returns the loss
    /// before the step.
    pub fn sgd_step(&mut self, x: &[f64], y: &[f64], learning_rate: f64) -> f64 {
        let (acts, pres) = self.forward_all(x);
        let out = acts.last().unwrap();
        let loss = 0.5
            * out
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .zip(&pres[last])
            .map(|((o, t), &z)| (o - t) * self.activation(last).slope(z))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let prev = if l > 0 {
                let width = self.layers[l].cols() - 1;
                let mut back = self.layers[l].matvec_t_prefix(&delta, width);
                let act = self.activation(l - 1);
                for (b, &z) in back.iter_mut().zip(&pres[l - 1]) {
                    *b *= act.slope(z);
                }
                Some(back)
            } else {
                None
            };
            self.layers[l].add_outer(-learning_rate, &delta, &acts[l]);
            if let Some(p) = prev {
                delta = p;
            }
        }
        loss
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let mut hits = 0usize;
        for i in 0..data.len() {
            let label = data
                .label(i)
                .ok_or_else(|| Error::InvalidArgument("dataset has no class labels".into()))?;
            if argmax(&self.predict(data.input(i))) == label {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Also measure training-set accuracy after each epoch.
    pub eval_train: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdReport {
    pub initial_test_accuracy: f64,
    pub epochs: Vec<SgdEpoch>,
    /// Loss or weights became non-finite; training stopped at that epoch.
    pub diverged: bool,
}

impl SgdReport {
    pub fn final_test_accuracy(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_test_accuracy, |e| e.test_accuracy)
    }
}

/// Trains an [`Mlp`] with fixed-step SGD. Divergence is reported, not an
/// error.
pub fn sgd_baseline_train(
    spec: MlpSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &SgdConfig,
    mut on_epoch: impl FnMut(&SgdEpoch),
) -> Result<SgdReport> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut mlp = Mlp::init(spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = SgdReport {
        initial_test_accuracy: mlp.accuracy(test)?,
        epochs: Vec::new(),
        diverged: false,
    };
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for &i in &order {
            let y = match train.target(i) {
                super::Target::Output(y) => y,
                _ => {
                    return Err(Error::InvalidArgument(
                        "SGD baseline needs plain targets".into(),
                    ))
                }
            };
            loss_sum += mlp.sgd_step(train.input(i), y, cfg.learning_rate);
        }
        let mean_loss = loss_sum / order.len() as f64;
        if !mean_loss.is_finite() || !mlp.is_finite() {
            report.diverged = true;
            let rec = SgdEpoch {
                epoch,
                mean_loss,
                train_accuracy: None,
                test_accuracy: f64::NAN,
            };
            on_epoch(&rec);
            report.epochs.push(rec);
            break;
        }
        let rec = SgdEpoch {
            epoch,
            mean_loss,
            train_accuracy: if cfg.eval_train {
                Some(mlp.accuracy(train)?)
            } else {
                None
            },
            test_accuracy: mlp.accuracy(test)?,
        };
        on_epoch(&rec);
        report.epochs.push(rec);
    }
    Ok(report)
}
