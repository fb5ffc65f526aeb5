//! Per-sample gain adaptation.
//!
//! Gains are uniform diagonal matrices `L = c I`, so the minimum and maximum
//! eigenvalues coincide and the decrease condition for a layer reads
//! `2c/f - alpha * d * c^2 > 0`, where `f` is the output activation's maximum
//! slope and `d` bounds the squared norms entering the quadratic terms of the
//! objective's increment. Each call starts from the base gain `c0` and shrinks
//! it just enough (scaled by the safety factor `beta`) to satisfy the
//! condition for the current sample.

use serde::{Deserialize, Serialize};

use crate::collab_net::{CollabNetwork, SubsystemTrace};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;

use super::LearnRates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    c0: f64,
    beta: f64,
    subsystem: Vec<f64>,
    collab: f64,
    d_subsystem: Vec<f64>,
    d_collab: f64,
}

impl GainSchedule {
    pub fn new(c0: f64, beta: f64, subsystem_count: usize) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "base gain must be positive, got {c0}"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "safety factor must lie in (0, 1), got {beta}"
            )));
        }
        Ok(Self {
            c0,
            beta,
            subsystem: vec![c0; subsystem_count],
            collab: c0,
            d_subsystem: vec![0.0; subsystem_count],
            d_collab: 0.0,
        })
    }

    /// Gains set by hand; used when a caller wants to apply the update laws
    /// without adaptation.
    pub fn fixed(subsystem: Vec<f64>, collab: f64) -> Self {
        let c0 = subsystem.iter().copied().fold(collab, f64::max);
        Self {
            c0,
            beta: 0.9,
            d_subsystem: vec![0.0; subsystem.len()],
            subsystem,
            collab,
            d_collab: 0.0,
        }
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn set_c0(&mut self, c0: f64) {
        self.c0 = c0;
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn subsystem(&self, j: usize) -> f64 {
        self.subsystem[j]
    }

    pub fn subsystem_gains(&self) -> &[f64] {
        &self.subsystem
    }

    pub fn collab(&self) -> f64 {
        self.collab
    }

    /// Most recent `d_j` estimate.
    pub fn d_subsystem(&self, j: usize) -> f64 {
        self.d_subsystem[j]
    }

    pub fn d_collab(&self) -> f64 {
        self.d_collab
    }

    fn shrink(&self, alpha: f64, d: f64, max_slope: f64) -> f64 {
        let load = alpha * d;
        if load > 0.0 {
            self.c0.min(self.beta * 2.0 / (max_slope * load))
        } else {
            self.c0
        }
    }

    /// Adapts `c_j` from subsystem `j`'s forward trace and returns `d_j`.
    ///
    /// `d_j = scale * (|h|^2 + (a_h/a_o)^2 |x|^2 |P S|_F^2)` with `h` the
    /// augmented hidden output, `x` the augmented input, `P` the pseudo
    /// output weights restricted to hidden columns and `S` the hidden slope
    /// diagonal. With `a_h = a_o` this is the fine-tuning bound; with `a_h = 0`
    /// it reduces to the pretraining bound `|h|^2`. `scale` is the squared
    /// norm of the back-projection applied to the error (1 for plain
    /// outputs).
    pub fn adapt_subsystem(
        &mut self,
        j: usize,
        net: &CollabNetwork,
        trace: &SubsystemTrace,
        rates: &LearnRates,
        max_slope: f64,
        scale: f64,
    ) -> f64 {
        let mut d = norm_sq(&trace.hidden);
        if rates.hidden != 0.0 && rates.out != 0.0 {
            let ratio = rates.hidden / rates.out;
            let act = net.spec().trunk[j].activation;
            let p = net.pseudo_out_weight(j);
            let mut ps = 0.0;
            for (k, &z) in trace.hidden_pre.iter().enumerate() {
                let s = act.slope(z);
                if s != 0.0 {
                    let col: f64 = (0..p.rows()).map(|r| p.get(r, k) * p.get(r, k)).sum();
                    ps += col * s * s;
                }
            }
            d += ratio * ratio * norm_sq(&trace.input) * ps;
        }
        d *= scale;
        self.d_subsystem[j] = d;
        self.subsystem[j] = self.shrink(rates.out, d, max_slope);
        d
    }

    /// Adapts `c_n` from the augmented concatenation of subsystem outputs
    /// and returns `d_n = scale * |concat|^2`.
    pub fn adapt_collab(
        &mut self,
        sub_concat: &[f64],
        rates: &LearnRates,
        max_slope: f64,
        scale: f64,
    ) -> f64 {
        let d = scale * norm_sq(sub_concat);
        self.d_collab = d;
        self.collab = self.shrink(rates.collab, d, max_slope);
        d
    }

    /// `2 c_j / f - a_o d_j c_j^2`; positive when the condition holds.
    pub fn subsystem_margin(&self, j: usize, rates: &LearnRates, max_slope: f64) -> f64 {
        let c = self.subsystem[j];
        2.0 * c / max_slope - rates.out * self.d_subsystem[j] * c * c
    }

    /// `2 c_n / f - a_n d_n c_n^2`
    pub fn collab_margin(&self, rates: &LearnRates, max_slope: f64) -> f64 {
        let c = self.collab;
        2.0 * c / max_slope - rates.collab * self.d_collab * c * c
    }
}
