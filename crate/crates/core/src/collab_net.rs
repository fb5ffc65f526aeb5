//! Collaborative network: shared trunk layers, one pseudo output layer per
//! subsystem, and a collaborative layer over the concatenated subsystem
//! outputs.
//!
//! Subsystem `j` (0-based here) is the two-layer network
//! `y_j = phi_o(P_j * sigma_j(W_j * x_j))`, where `x_0` is the network input and
//! `x_{j+1} = sigma_j(W_j * x_j)` is the hidden output of the previous
//! subsystem. Each trunk matrix `W_j` is stored once and read by every
//! subsystem `>= j`.
//!
//! With `bias` enabled every layer input, including the network input and the
//! concatenation fed to the collaborative layer, carries a trailing constant
//! 1, so each weight matrix has one extra column holding the bias. Vectors
//! stored in traces as layer inputs (`input`, `hidden`, `sub_concat`) include
//! that entry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: ActivationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollabSpec {
    pub input_dim: usize,
    /// Hidden layers in trunk order; subsystem `j` ends at `trunk[j]`.
    pub trunk: Vec<LayerSpec>,
    pub output_dim: usize,
    pub output_activation: ActivationKind,
    pub collab_activation: ActivationKind,
    pub bias: bool,
}

impl CollabSpec {
    /// All hidden layers share one activation; biases enabled.
    pub fn uniform(
        input_dim: usize,
        widths: &[usize],
        hidden: ActivationKind,
        output_dim: usize,
        output_activation: ActivationKind,
        collab_activation: ActivationKind,
    ) -> Self {
        Self {
            input_dim,
            trunk: widths
                .iter()
                .map(|&width| LayerSpec {
                    width,
                    activation: hidden,
                })
                .collect(),
            output_dim,
            output_activation,
            collab_activation,
            bias: true,
        }
    }

    pub fn subsystem_count(&self) -> usize {
        self.trunk.len()
    }

    fn bias_cols(&self) -> usize {
        usize::from(self.bias)
    }

    /// Unaugmented input width of subsystem `j`.
    pub fn subsystem_input_dim(&self, j: usize) -> usize {
        if j == 0 {
            self.input_dim
        } else {
            self.trunk[j - 1].width
        }
    }

    pub fn trunk_shape(&self, j: usize) -> (usize, usize) {
        (
            self.trunk[j].width,
            self.subsystem_input_dim(j) + self.bias_cols(),
        )
    }

    pub fn pseudo_out_shape(&self, j: usize) -> (usize, usize) {
        (self.output_dim, self.trunk[j].width + self.bias_cols())
    }

    pub fn collab_shape(&self) -> (usize, usize) {
        (
            self.output_dim,
            self.subsystem_count() * self.output_dim + self.bias_cols(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "input_dim and output_dim must be positive".into(),
            ));
        }
        if self.trunk.is_empty() {
            return Err(Error::InvalidArgument(
                "a collaborative network needs at least one subsystem".into(),
            ));
        }
        if let Some(i) = self.trunk.iter().position(|l| l.width == 0) {
            return Err(Error::InvalidArgument(format!(
                "trunk layer {i} has zero width"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollabNetwork {
    spec: CollabSpec,
    trunk: Vec<Matrix>,
    pseudo_out: Vec<Matrix>,
    collab: Matrix,
}

/// Forward quantities of one subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemTrace {
    /// Layer input `x_j` (with bias entry).
    pub input: Vec<f64>,
    /// `W_j x_j`
    pub hidden_pre: Vec<f64>,
    /// `sigma_j(W_j x_j)` (with bias entry); equals the next subsystem's input.
    pub hidden: Vec<f64>,
    /// `P_j * hidden`
    pub output_pre: Vec<f64>,
    /// Subsystem output `y_j`.
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub subsystems: Vec<SubsystemTrace>,
    /// Concatenated subsystem outputs (with bias entry).
    pub sub_concat: Vec<f64>,
    pub collab_pre: Vec<f64>,
    pub collab_out: Vec<f64>,
}

impl CollabNetwork {
    /// Every weight is drawn from `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, where
    /// `fan_in` counts the bias column.
    pub fn init(spec: CollabSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(rows, cols): (usize, usize)| {
            Matrix::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), &mut rng)
        };
        let s = spec.subsystem_count();
        let trunk = (0..s).map(|j| draw(spec.trunk_shape(j))).collect();
        let pseudo_out = (0..s).map(|j| draw(spec.pseudo_out_shape(j))).collect();
        let collab = draw(spec.collab_shape());
        Ok(Self {
            spec,
            trunk,
            pseudo_out,
            collab,
        })
    }

    pub fn zeros(spec: CollabSpec) -> Result<Self> {
        spec.validate()?;
        let s = spec.subsystem_count();
        let trunk = (0..s)
            .map(|j| {
                let (r, c) = spec.trunk_shape(j);
                Matrix::zeros(r, c)
            })
            .collect();
        let pseudo_out = (0..s)
            .map(|j| {
                let (r, c) = spec.pseudo_out_shape(j);
                Matrix::zeros(r, c)
            })
            .collect();
        let (r, c) = spec.collab_shape();
        Ok(Self {
            spec,
            trunk,
            pseudo_out,
            collab: Matrix::zeros(r, c),
        })
    }

    pub fn from_parts(
        spec: CollabSpec,
        trunk: Vec<Matrix>,
        pseudo_out: Vec<Matrix>,
        collab: Matrix,
    ) -> Result<Self> {
        spec.validate()?;
        let s = spec.subsystem_count();
        if trunk.len() != s || pseudo_out.len() != s {
            return Err(Error::shape(
                "CollabNetwork::from_parts",
                format!("{s} trunk and pseudo output matrices"),
                format!("{} and {}", trunk.len(), pseudo_out.len()),
            ));
        }
        for j in 0..s {
            check_shape("trunk weight", spec.trunk_shape(j), &trunk[j])?;
            check_shape(
                "pseudo output weight",
                spec.pseudo_out_shape(j),
                &pseudo_out[j],
            )?;
        }
        check_shape("collaborative weight", spec.collab_shape(), &collab)?;
        let net = Self {
            spec,
            trunk,
            pseudo_out,
            collab,
        };
        if !net.is_finite() {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(net)
    }

    pub fn spec(&self) -> &CollabSpec {
        &self.spec
    }

    pub fn subsystem_count(&self) -> usize {
        self.trunk.len()
    }

    pub fn trunk_weight(&self, j: usize) -> &Matrix {
        &self.trunk[j]
    }

    pub fn trunk_weight_mut(&mut self, j: usize) -> &mut Matrix {
        &mut self.trunk[j]
    }

    pub fn pseudo_out_weight(&self, j: usize) -> &Matrix {
        &self.pseudo_out[j]
    }

    pub fn pseudo_out_weight_mut(&mut self, j: usize) -> &mut Matrix {
        &mut self.pseudo_out[j]
    }

    pub fn collab_weight(&self) -> &Matrix {
        &self.collab
    }

    pub fn collab_weight_mut(&mut self) -> &mut Matrix {
        &mut self.collab
    }

    /// All weight matrices: trunk, then pseudo outputs, then collaborative.
    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.trunk
            .iter()
            .chain(self.pseudo_out.iter())
            .chain(std::iter::once(&self.collab))
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(Matrix::is_finite)
    }

    /// Appends the bias entry when the spec uses biases.
    pub fn augment(&self, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        if self.spec.bias {
            v.push(1.0);
        }
        v
    }

    fn check_input(&self, x1: &[f64]) -> Result<()> {
        if x1.len() != self.spec.input_dim {
            return Err(Error::shape("network input", self.spec.input_dim, x1.len()));
        }
        if !x1.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// `sigma_j(W_j x)` with bias entry appended; `x` is already augmented.
    pub(crate) fn hidden_of(&self, j: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = &self.trunk[j];
        let mut pre = vec![0.0; w.rows()];
        w.matvec_into(x, &mut pre);
        let mut hidden = vec![0.0; pre.len() + usize::from(self.spec.bias)];
        self.spec.trunk[j]
            .activation
            .apply_into(&pre, &mut hidden[..pre.len()]);
        if self.spec.bias {
            *hidden.last_mut().unwrap() = 1.0;
        }
        (pre, hidden)
    }

    /// `phi_o(P_j h)` for an augmented hidden vector `h`.
    pub(crate) fn output_of(&self, j: usize, hidden: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre = self.pseudo_out[j].matvec(hidden);
        let mut out = vec![0.0; pre.len()];
        self.spec.output_activation.apply_into(&pre, &mut out);
        (pre, out)
    }

    /// Runs subsystem `j`'s own two layers on an augmented input.
    pub(crate) fn subsystem_from_input(&self, j: usize, input: Vec<f64>) -> SubsystemTrace {
        let (hidden_pre, hidden) = self.hidden_of(j, &input);
        let (output_pre, output) = self.output_of(j, &hidden);
        SubsystemTrace {
            input,
            hidden_pre,
            hidden,
            output_pre,
            output,
        }
    }

    /// Concatenates subsystem outputs and applies the collaborative layer.
    pub(crate) fn collab_of<'a>(
        &self,
        outputs: impl Iterator<Item = &'a [f64]>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (_, cols) = self.spec.collab_shape();
        let mut concat = Vec::with_capacity(cols);
        for y in outputs {
            concat.extend_from_slice(y);
        }
        if self.spec.bias {
            concat.push(1.0);
        }
        debug_assert_eq!(concat.len(), cols);
        let pre = self.collab.matvec(&concat);
        let mut out = vec![0.0; pre.len()];
        self.spec.collab_activation.apply_into(&pre, &mut out);
        (concat, pre, out)
    }

    /// Forward pass of subsystem `j` alone: the input goes through trunk
    /// layers `0..j` and then through subsystem `j`'s two layers.
    pub fn forward_subsystem(&self, j: usize, x1: &[f64]) -> Result<SubsystemTrace> {
        if j >= self.subsystem_count() {
            return Err(Error::shape(
                "subsystem index",
                format!("< {}", self.subsystem_count()),
                j,
            ));
        }
        self.check_input(x1)?;
        let mut x = self.augment(x1);
        for i in 0..j {
            x = self.hidden_of(i, &x).1;
        }
        Ok(self.subsystem_from_input(j, x))
    }

    /// Forward pass of every subsystem and the collaborative layer. Trunk
    /// prefixes are computed once: subsystem `j+1`'s input is subsystem `j`'s
    /// hidden output.
    pub fn forward_collab(&self, x1: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x1)?;
        let mut subsystems: Vec<SubsystemTrace> = Vec::with_capacity(self.subsystem_count());
        let mut x = self.augment(x1);
        for j in 0..self.subsystem_count() {
            let tr = self.subsystem_from_input(j, x);
            x = tr.hidden.clone();
            subsystems.push(tr);
        }
        let (sub_concat, collab_pre, collab_out) =
            self.collab_of(subsystems.iter().map(|t| t.output.as_slice()));
        Ok(ForwardTrace {
            subsystems,
            sub_concat,
            collab_pre,
            collab_out,
        })
    }

    /// Collaborative output only.
    pub fn predict(&self, x1: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_collab(x1)?.collab_out)
    }
}

fn check_shape(what: &'static str, expected: (usize, usize), m: &Matrix) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::shape(
            what,
            format!("{expected:?}"),
            format!("{:?}", m.shape()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ActivationKind::{Identity, Sigmoid};

    pub(crate) fn mnist_spec(widths: &[usize]) -> CollabSpec {
        CollabSpec::uniform(784, widths, Sigmoid, 10, Sigmoid, Sigmoid)
    }

    fn scalar_spec() -> CollabSpec {
        CollabSpec {
            bias: false,
            ..CollabSpec::uniform(1, &[1], Sigmoid, 1, Identity, Identity)
        }
    }

    #[test]
    fn subsystem_one_shapes() {
        let net = CollabNetwork::init(mnist_spec(&[150]), 1).unwrap();
        assert_eq!(net.trunk_weight(0).shape(), (150, 785));
        assert_eq!(net.pseudo_out_weight(0).shape(), (10, 151));

        let spec = CollabSpec {
            bias: false,
            ..mnist_spec(&[150])
        };
        let net = CollabNetwork::init(spec, 1).unwrap();
        assert_eq!(net.trunk_weight(0).shape(), (150, 784));
        assert_eq!(net.pseudo_out_weight(0).shape(), (10, 150));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = CollabNetwork::init(mnist_spec(&[150, 100]), 7).unwrap();
        let b = CollabNetwork::init(mnist_spec(&[150, 100]), 7).unwrap();
        assert_eq!(a, b);
        let c = CollabNetwork::init(mnist_spec(&[150, 100]), 8).unwrap();
        assert_ne!(a, c);
        for m in a.matrices() {
            let bound = 1.0 / (m.cols() as f64).sqrt();
            assert!(m.max_abs() <= bound);
        }
    }

    #[test]
    fn zero_weights_give_half_hidden_and_zero_output() {
        let spec = CollabSpec::uniform(3, &[4, 2], Sigmoid, 2, Identity, Identity);
        let net = CollabNetwork::zeros(spec).unwrap();
        let tr = net.forward_subsystem(1, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(&tr.hidden[..2], &[0.5, 0.5]);
        assert_eq!(tr.output, vec![0.0, 0.0]);
        let full = net.forward_collab(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(full.collab_out, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_network_by_hand() {
        let mut net = CollabNetwork::zeros(scalar_spec()).unwrap();
        net.trunk_weight_mut(0).set(0, 0, 2.0);
        net.pseudo_out_weight_mut(0).set(0, 0, 1.0);
        net.collab_weight_mut().set(0, 0, 3.0);
        let tr = net.forward_collab(&[0.0]).unwrap();
        assert_eq!(tr.subsystems[0].output, vec![0.5]);
        assert_eq!(tr.collab_out, vec![1.5]);
    }

    #[test]
    fn collab_concat_width() {
        let net = CollabNetwork::init(mnist_spec(&[150, 100, 50]), 3).unwrap();
        let x = vec![0.2; 784];
        let tr = net.forward_collab(&x).unwrap();
        assert_eq!(tr.sub_concat.len(), 31);
        assert_eq!(tr.subsystems[2].output.len(), 10);
        for (j, s) in tr.subsystems.iter().enumerate() {
            assert_eq!(&tr.sub_concat[j * 10..(j + 1) * 10], s.output.as_slice());
            assert!(s.output.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn input_errors() {
        let net = CollabNetwork::init(mnist_spec(&[10]), 3).unwrap();
        assert!(matches!(
            net.forward_collab(&[0.0; 5]),
            Err(Error::Shape { .. })
        ));
        assert!(net.forward_subsystem(1, &[0.0; 784]).is_err());
        let mut x = vec![0.0; 784];
        x[3] = f64::NAN;
        assert!(matches!(net.forward_collab(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn trunk_mutation_is_seen_by_deeper_subsystems() {
        let spec = CollabSpec::uniform(3, &[4, 3, 2], Sigmoid, 2, Sigmoid, Identity);
        let mut net = CollabNetwork::init(spec, 11).unwrap();
        let x = [0.1, 0.5, 0.9];
        let before = net.forward_collab(&x).unwrap();
        net.trunk_weight_mut(0).set(0, 0, 5.0);
        let after = net.forward_collab(&x).unwrap();
        for j in 0..3 {
            assert_ne!(before.subsystems[j].output, after.subsystems[j].output);
        }
    }

    #[test]
    fn from_parts_validates() {
        let spec = CollabSpec::uniform(2, &[3], Sigmoid, 1, Identity, Identity);
        let net = CollabNetwork::zeros(spec.clone()).unwrap();
        let bad = CollabNetwork::from_parts(
            spec,
            vec![Matrix::zeros(3, 2)],
            vec![net.pseudo_out_weight(0).clone()],
            net.collab_weight().clone(),
        );
        assert!(bad.is_err());
    }

    fn arb_spec() -> impl Strategy<Value = CollabSpec> {
        (
            1usize..6,
            prop::collection::vec(1usize..7, 1..5),
            1usize..4,
            any::<bool>(),
        )
            .prop_map(|(input, widths, out, bias)| CollabSpec {
                bias,
                ..CollabSpec::uniform(input, &widths, Sigmoid, out, Sigmoid, Identity)
            })
    }

    proptest! {
        #[test]
        fn prefix_reuse_matches_independent_subsystem_passes(spec in arb_spec(), seed in 0u64..1000) {
            let net = CollabNetwork::init(spec.clone(), seed).unwrap();
            let x: Vec<f64> = (0..spec.input_dim).map(|i| (i as f64 * 0.37).sin()).collect();
            let full = net.forward_collab(&x).unwrap();
            prop_assert_eq!(full.subsystems.len(), spec.subsystem_count());
            for j in 0..spec.subsystem_count() {
                let alone = net.forward_subsystem(j, &x).unwrap();
                prop_assert_eq!(&alone, &full.subsystems[j]);
                prop_assert_eq!(alone.output.len(), spec.output_dim);
            }
            prop_assert_eq!(full.sub_concat.len(), spec.collab_shape().1);
            prop_assert_eq!(full.collab_out.len(), spec.output_dim);
        }
    }
}
