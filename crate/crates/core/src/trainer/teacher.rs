//! Teacher network with known ideal weights.
//!
//! The objective `V` measures the squared Frobenius distance between the
//! student's weights and a set of ideal weights. Ideal weights are unknown
//! for real data, so tests build a teacher that shares the student's frozen
//! trunk and generates targets the student can represent exactly; `V` then
//! becomes computable and its per-sample decrease can be checked.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activations::ActivationKind;
use crate::collab_net::{CollabNetwork, CollabSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOracle {
    /// Teacher weights laid out as a network: frozen trunk, ideal pseudo
    /// outputs, ideal collaborative weights.
    net: CollabNetwork,
}

impl TeacherOracle {
    pub fn from_network(net: CollabNetwork) -> Self {
        Self { net }
    }

    /// Shares `student`'s trunk and draws ideal output-side weights from
    /// `U[-scale/sqrt(fan_in), scale/sqrt(fan_in)]`.
    pub fn random_for(student: &CollabNetwork, seed: u64, scale: f64) -> Result<Self> {
        let spec = student.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |(r, c): (usize, usize)| Matrix::uniform(r, c, scale / (c as f64).sqrt(), &mut rng);
        let s = spec.subsystem_count();
        let trunk = (0..s).map(|j| student.trunk_weight(j).clone()).collect();
        let pseudo = (0..s).map(|j| draw(spec.pseudo_out_shape(j))).collect();
        let collab = draw(spec.collab_shape());
        Ok(Self {
            net: CollabNetwork::from_parts(spec, trunk, pseudo, collab)?,
        })
    }

    pub fn network(&self) -> &CollabNetwork {
        &self.net
    }

    pub fn spec(&self) -> &CollabSpec {
        self.net.spec()
    }

    /// `phi_o(P_j* sigma_j(W̄_j x_j))` for every subsystem.
    pub fn subsystem_targets(&self, x1: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .net
            .forward_collab(x1)?
            .subsystems
            .into_iter()
            .map(|t| t.output)
            .collect())
    }

    /// `phi_c(W_n* s)` for an augmented concatenation `s` of the student's
    /// subsystem outputs.
    pub fn collab_target(&self, sub_concat: &[f64]) -> Result<Vec<f64>> {
        let w = self.net.collab_weight();
        if sub_concat.len() != w.cols() {
            return Err(Error::shape(
                "collaborative input",
                w.cols(),
                sub_concat.len(),
            ));
        }
        let pre = w.matvec(sub_concat);
        self.net.spec().collab_activation.eval(&pre)
    }
}

/// `V = sum_j |dP_j|_F^2 + sum_j |dW_j|_F^2 + |dW_n|_F^2` between the teacher
/// and the student.
pub fn objective_v(net: &CollabNetwork, teacher: &TeacherOracle) -> Result<f64> {
    let t = teacher.network();
    if t.subsystem_count() != net.subsystem_count() {
        return Err(Error::shape(
            "teacher subsystems",
            net.subsystem_count(),
            t.subsystem_count(),
        ));
    }
    let mut v = 0.0;
    for j in 0..net.subsystem_count() {
        v += net
            .pseudo_out_weight(j)
            .distance_sq(t.pseudo_out_weight(j))?;
    }
    for j in 0..net.subsystem_count() {
        v += net.trunk_weight(j).distance_sq(t.trunk_weight(j))?;
    }
    v += net.collab_weight().distance_sq(t.collab_weight())?;
    Ok(v)
}

/// Output error `e = phi(a) - phi(b)` and pre-activation discrepancy
/// `delta = a - b` for ideal pre-activations `a` and estimated `b`.
pub fn error_and_delta(
    activation: ActivationKind,
    ideal_pre: &[f64],
    estimated_pre: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    ideal_pre
        .iter()
        .zip(estimated_pre)
        .map(|(&a, &b)| (activation.apply(a) - activation.apply(b), a - b))
        .unzip()
}
