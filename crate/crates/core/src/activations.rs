//! Elementwise activations, their derivatives, and derivative suprema.
//!
//! The supremum of the derivative (`max_slope`) is the Lipschitz constant that
//! ties an output error to its pre-activation discrepancy; the gain condition
//! in the trainer depends on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Identity,
    LeakyRelu { negative_slope: f64 },
}

impl ActivationKind {
    pub fn leaky_relu(negative_slope: f64) -> Result<Self> {
        if !(negative_slope > 0.0 && negative_slope < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "leaky_relu negative slope must lie in (0, 1), got {negative_slope}"
            )));
        }
        Ok(ActivationKind::LeakyRelu { negative_slope })
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Identity => x,
            ActivationKind::LeakyRelu { negative_slope } => {
                if x >= 0.0 {
                    x
                } else {
                    negative_slope * x
                }
            }
        }
    }

    /// Derivative at `x`. Leaky ReLU uses the right derivative (1) at 0.
    #[inline]
    pub fn slope(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::LeakyRelu { negative_slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    negative_slope
                }
            }
        }
    }

    /// Supremum of the derivative over the real line.
    pub fn max_slope(self) -> f64 {
        match self {
            ActivationKind::Sigmoid => 0.25,
            ActivationKind::Tanh | ActivationKind::Identity | ActivationKind::LeakyRelu { .. } => {
                1.0
            }
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::LeakyRelu { .. })
    }

    pub fn eval(self, x: &[f64]) -> Result<Vec<f64>> {
        check_finite(x)?;
        Ok(x.iter().map(|&v| self.apply(v)).collect())
    }

    /// Diagonal of the slope matrix `S` for a pre-activation vector.
    pub fn slope_diag(self, preactivation: &[f64]) -> Result<Vec<f64>> {
        check_finite(preactivation)?;
        Ok(preactivation.iter().map(|&v| self.slope(v)).collect())
    }

    pub(crate) fn apply_into(self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = self.apply(v);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("activation input"))
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sigmoid => f.write_str("sigmoid"),
            ActivationKind::Tanh => f.write_str("tanh"),
            ActivationKind::Identity => f.write_str("identity"),
            ActivationKind::LeakyRelu { negative_slope }
                if *negative_slope == DEFAULT_LEAKY_SLOPE =>
            {
                f.write_str("leaky_relu")
            }
            ActivationKind::LeakyRelu { negative_slope } => {
                write!(f, "leaky_relu({negative_slope})")
            }
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    /// Accepts `sigmoid`, `tanh`, `identity`, `leaky_relu` and
    /// `leaky_relu(<slope>)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sigmoid" => return Ok(ActivationKind::Sigmoid),
            "tanh" => return Ok(ActivationKind::Tanh),
            "identity" => return Ok(ActivationKind::Identity),
            "leaky_relu" => return ActivationKind::leaky_relu(DEFAULT_LEAKY_SLOPE),
            _ => {}
        }
        if let Some(inner) = s
            .strip_prefix("leaky_relu(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let slope: f64 = inner
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad leaky_relu slope {inner:?}")))?;
            return ActivationKind::leaky_relu(slope);
        }
        Err(Error::InvalidArgument(format!("unknown activation {s:?}")))
    }
}

impl TryFrom<String> for ActivationKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ActivationKind> for String {
    fn from(a: ActivationKind) -> String {
        a.to_string()
    }
}
