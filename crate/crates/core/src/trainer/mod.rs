//! Analytic update laws, the two-phase training protocol, and evaluation.
//!
//! For subsystem `j` with input `x`, hidden pre-activation `z = W x`, hidden
//! output `h`, pseudo output weights `P` and output error `e`:
//!
//! ```text
//! P <- P + a_o c e h^T
//! W <- W + a_h c S P_old^T e x^T      S = diag(sigma'(z))
//! ```
//!
//! and the collaborative layer follows `W_n <- W_n + a_n c_n e_n s^T` with `s`
//! the concatenated subsystem outputs. Within one sample the subsystems are
//! stepped in ascending order, each on a fresh forward pass that already sees
//! the trunk updates of the subsystems before it; the collaborative layer is
//! stepped last.

mod gains;
mod sgd;
mod teacher;

pub use gains::GainSchedule;
pub use sgd::{sgd_baseline_train, Mlp, MlpSpec, SgdConfig, SgdEpoch, SgdReport};
pub use teacher::{error_and_delta, objective_v, TeacherOracle};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collab_net::{CollabNetwork, SubsystemTrace};
use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{argmax, norm, norm_sq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Trunk frozen (`a_h = 0`); only pseudo output and collaborative weights move.
    Pretrain,
    /// Every layer moves.
    FineTune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::FineTune => "finetune",
        }
    }
}

/// Non-negative scalar learning rates of the three update laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnRates {
    /// Pseudo output weights.
    pub out: f64,
    /// Trunk weights.
    pub hidden: f64,
    /// Collaborative weights.
    pub collab: f64,
}

impl LearnRates {
    pub fn new(out: f64, hidden: f64, collab: f64) -> Self {
        Self {
            out,
            hidden,
            collab,
        }
    }

    /// Pretraining forces `hidden = 0`; fine-tuning uses `hidden`.
    pub fn for_phase(phase: Phase, out: f64, hidden: f64, collab: f64) -> Self {
        match phase {
            Phase::Pretrain => Self::new(out, 0.0, collab),
            Phase::FineTune => Self::new(out, hidden, collab),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("out", self.out),
            ("hidden", self.hidden),
            ("collab", self.collab),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "learning rate {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// What a layer's output is compared against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// The output itself should equal this vector.
    Output(&'a [f64]),
    /// The output is a column-major `p x r` Jacobian estimate `J` with
    /// `r = rates.len()` and `p = velocity.len()`; the prediction is
    /// `J * rates`.
    Velocity {
        rates: &'a [f64],
        velocity: &'a [f64],
    },
    /// Like `Velocity`, but the task-space error is supplied by the caller
    /// (the control loop's feedback error) instead of being computed from
    /// the output.
    FeedbackError { rates: &'a [f64], error: &'a [f64] },
}

impl<'a> Target<'a> {
    /// Task-space error `target - prediction`.
    pub fn error(&self, output: &[f64]) -> Result<Vec<f64>> {
        match *self {
            Target::Output(y) => {
                if y.len() != output.len() {
                    return Err(Error::shape("target", output.len(), y.len()));
                }
                Ok(y.iter().zip(output).map(|(a, b)| a - b).collect())
            }
            Target::Velocity { rates, velocity } => {
                let p = velocity.len();
                if p * rates.len() != output.len() {
                    return Err(Error::shape(
                        "jacobian output",
                        p * rates.len(),
                        output.len(),
                    ));
                }
                let mut e = velocity.to_vec();
                for (m, &qd) in rates.iter().enumerate() {
                    for i in 0..p {
                        e[i] -= output[m * p + i] * qd;
                    }
                }
                Ok(e)
            }
            Target::FeedbackError { rates, error } => {
                if error.len() * rates.len() != output.len() {
                    return Err(Error::shape(
                        "jacobian output",
                        error.len() * rates.len(),
                        output.len(),
                    ));
                }
                Ok(error.to_vec())
            }
        }
    }

    /// Maps a task-space error to the output-space error signal fed to the
    /// update laws (`rates (x) e` for Jacobian outputs).
    pub fn output_signal(&self, e: &[f64]) -> Vec<f64> {
        match *self {
            Target::Output(_) => e.to_vec(),
            Target::Velocity { rates, .. } | Target::FeedbackError { rates, .. } => rates
                .iter()
                .flat_map(|&qd| e.iter().map(move |&ei| qd * ei))
                .collect(),
        }
    }

    /// `|output_signal(e)|^2 / |e|^2`.
    pub fn gain_scale(&self) -> f64 {
        match *self {
            Target::Output(_) => 1.0,
            Target::Velocity { rates, .. } | Target::FeedbackError { rates, .. } => norm_sq(rates),
        }
    }
}

/// Target for the collaborative layer.
#[derive(Debug, Clone, Copy)]
pub enum CollabTarget<'a> {
    Fixed(Target<'a>),
    /// Realizable target `phi_c(W_n* s)` computed from the student's current
    /// concatenation `s`.
    Teacher(&'a TeacherOracle),
}

/// Everything one call of [`train_sample`] observed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    /// Task-space error per subsystem, measured before its update.
    pub subsystem_errors: Vec<Vec<f64>>,
    pub collab_error: Vec<f64>,
    pub d_subsystem: Vec<f64>,
    pub d_collab: f64,
    /// Number of gain conditions that failed after adaptation (always 0 in a
    /// correct run; counted rather than asserted so runs can report it).
    pub gain_violations: usize,
}

/// Maximum derivative slopes used by the gain conditions: the pseudo output
/// activation for subsystems and the collaborative activation for the last
/// layer.
pub fn layer_slopes(net: &CollabNetwork) -> (f64, f64) {
    let spec = net.spec();
    (
        spec.output_activation.max_slope(),
        spec.collab_activation.max_slope(),
    )
}

fn check_update(e: &[f64]) -> Result<()> {
    if e.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("update signal"))
    }
}

/// Applies the two-layer update of subsystem `j` for a trace computed with
/// the current weights and returns the task-space error.
pub(crate) fn apply_subsystem_update(
    net: &mut CollabNetwork,
    j: usize,
    trace: &SubsystemTrace,
    target: Target<'_>,
    rates: &LearnRates,
    gain: f64,
) -> Result<Vec<f64>> {
    let e = target.error(&trace.output)?;
    let g = target.output_signal(&e);
    check_update(&g)?;
    let width = trace.hidden_pre.len();

    // Both laws use the pre-update pseudo output weights.
    let hidden_signal = if rates.hidden != 0.0 {
        let act = net.spec().trunk[j].activation;
        let mut u = net.pseudo_out_weight(j).matvec_t_prefix(&g, width);
        for (ui, &z) in u.iter_mut().zip(&trace.hidden_pre) {
            *ui *= act.slope(z);
        }
        check_update(&u)?;
        Some(u)
    } else {
        None
    };

    if rates.out != 0.0 {
        net.pseudo_out_weight_mut(j)
            .add_outer(rates.out * gain, &g, &trace.hidden);
    }
    if let Some(u) = hidden_signal {
        net.trunk_weight_mut(j)
            .add_outer(rates.hidden * gain, &u, &trace.input);
    }
    Ok(e)
}

pub(crate) fn apply_collab_update(
    net: &mut CollabNetwork,
    sub_concat: &[f64],
    collab_out: &[f64],
    target: Target<'_>,
    rates: &LearnRates,
    gain: f64,
) -> Result<Vec<f64>> {
    let e = target.error(collab_out)?;
    let g = target.output_signal(&e);
    check_update(&g)?;
    if rates.collab != 0.0 {
        net.collab_weight_mut()
            .add_outer(rates.collab * gain, &g, sub_concat);
    }
    Ok(e)
}

/// One update of subsystem `j` on a fresh forward pass, using the gains as
/// given (no adaptation). Returns the error measured before the update.
pub fn step_subsystem(
    net: &mut CollabNetwork,
    j: usize,
    x1: &[f64],
    target: Target<'_>,
    rates: &LearnRates,
    gains: &GainSchedule,
) -> Result<Vec<f64>> {
    let trace = net.forward_subsystem(j, x1)?;
    apply_subsystem_update(net, j, &trace, target, rates, gains.subsystem(j))
}

/// One update of the collaborative layer on a fresh forward pass.
pub fn step_collab(
    net: &mut CollabNetwork,
    x1: &[f64],
    target: Target<'_>,
    rates: &LearnRates,
    gains: &GainSchedule,
) -> Result<Vec<f64>> {
    let trace = net.forward_collab(x1)?;
    apply_collab_update(
        net,
        &trace.sub_concat,
        &trace.collab_out,
        target,
        rates,
        gains.collab(),
    )
}

/// Adapts every gain from one forward trace (no weights change). Returns
/// the `d_j` estimates followed by `d_n`.
pub fn adapt_gains(
    net: &CollabNetwork,
    x1: &[f64],
    target: Target<'_>,
    rates: &LearnRates,
    gains: &mut GainSchedule,
) -> Result<(Vec<f64>, f64)> {
    let trace = net.forward_collab(x1)?;
    let (f_out, f_collab) = layer_slopes(net);
    let scale = target.gain_scale();
    let d: Vec<f64> = trace
        .subsystems
        .iter()
        .enumerate()
        .map(|(j, t)| gains.adapt_subsystem(j, net, t, rates, f_out, scale))
        .collect();
    let dn = gains.adapt_collab(&trace.sub_concat, rates, f_collab, scale);
    Ok((d, dn))
}

/// A margin that is not strictly positive, NaN included.
fn violates(margin: f64) -> bool {
    margin.is_nan() || margin <= 0.0
}

/// Full per-sample update: for each subsystem in ascending order a fresh
/// forward pass, gain adaptation and the two-layer update; then the same for
/// the collaborative layer.
///
/// The trunk prefix is carried forward: subsystem `j+1`'s input is subsystem
/// `j`'s hidden output recomputed with `j`'s updated trunk weights, which is
/// exactly what a fresh full forward pass would produce.
pub fn train_sample(
    net: &mut CollabNetwork,
    x1: &[f64],
    subsystem_targets: &[Target<'_>],
    collab_target: CollabTarget<'_>,
    rates: &LearnRates,
    gains: &mut GainSchedule,
) -> Result<SampleReport> {
    let s = net.subsystem_count();
    if subsystem_targets.len() != s {
        return Err(Error::shape(
            "subsystem targets",
            s,
            subsystem_targets.len(),
        ));
    }
    if x1.len() != net.spec().input_dim {
        return Err(Error::shape(
            "network input",
            net.spec().input_dim,
            x1.len(),
        ));
    }
    if !x1.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    let (f_out, f_collab) = layer_slopes(net);
    let mut report = SampleReport {
        subsystem_errors: Vec::with_capacity(s),
        collab_error: Vec::new(),
        d_subsystem: Vec::with_capacity(s),
        d_collab: 0.0,
        gain_violations: 0,
    };
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(s);
    let mut x = net.augment(x1);
    for (j, target) in subsystem_targets.iter().enumerate() {
        let trace = net.subsystem_from_input(j, x);
        let d = gains.adapt_subsystem(j, net, &trace, rates, f_out, target.gain_scale());
        if violates(gains.subsystem_margin(j, rates, f_out)) {
            report.gain_violations += 1;
        }
        let e = apply_subsystem_update(net, j, &trace, *target, rates, gains.subsystem(j))?;
        report.subsystem_errors.push(e);
        report.d_subsystem.push(d);

        // Post-update hidden output feeds the next subsystem and, through
        // the updated pseudo output weights, the collaborative layer.
        let hidden = if rates.hidden != 0.0 {
            net.hidden_of(j, &trace.input).1
        } else {
            trace.hidden
        };
        outputs.push(net.output_of(j, &hidden).1);
        x = hidden;
    }

    let (concat, _, collab_out) = net.collab_of(outputs.iter().map(Vec::as_slice));
    let teacher_y;
    let target = match collab_target {
        CollabTarget::Fixed(t) => t,
        CollabTarget::Teacher(teacher) => {
            teacher_y = teacher.collab_target(&concat)?;
            Target::Output(&teacher_y)
        }
    };
    report.d_collab = gains.adapt_collab(&concat, rates, f_collab, target.gain_scale());
    if violates(gains.collab_margin(rates, f_collab)) {
        report.gain_violations += 1;
    }
    report.collab_error =
        apply_collab_update(net, &concat, &collab_out, target, rates, gains.collab())?;
    Ok(report)
}

/// Per-epoch summary of a training pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean `|e_j|` over the epoch (errors measured before each update).
    pub subsystem_error: Vec<f64>,
    pub collab_error: f64,
    pub mean_gain_subsystem: Vec<f64>,
    pub mean_gain_collab: f64,
    pub min_gain_subsystem: Vec<f64>,
    pub min_gain_collab: f64,
    pub max_d_subsystem: Vec<f64>,
    pub max_d_collab: f64,
    pub gain_violations: usize,
    /// Largest Frobenius norm of any weight matrix at the end of the epoch.
    pub max_weight_norm: f64,
    /// Objective value before the first sample and after every sample
    /// (teacher runs only).
    pub v_trace: Vec<f64>,
    pub elapsed_secs: f64,
}

impl EpochRecord {
    /// Largest single-step increase of the objective; `None` without a trace.
    pub fn max_v_increase(&self) -> Option<f64> {
        if self.v_trace.len() < 2 {
            return None;
        }
        Some(
            self.v_trace
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

/// Options for [`train_epoch`].
#[derive(Debug, Default)]
pub struct EpochOptions<'a> {
    /// Shuffle sample order with this generator; `None` keeps dataset order.
    pub shuffle: Option<&'a mut ChaCha8Rng>,
    /// Supervise with a teacher network and record the objective after
    /// every sample.
    pub teacher: Option<&'a TeacherOracle>,
}

/// One pass over `data`. Each sample: adapt gains, step subsystems in
/// ascending order, then the collaborative layer.
pub fn train_epoch(
    net: &mut CollabNetwork,
    data: &LabeledDataset,
    phase: Phase,
    epoch: usize,
    rates: &LearnRates,
    gains: &mut GainSchedule,
    opts: EpochOptions<'_>,
) -> Result<EpochRecord> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    rates.validate()?;
    let start = Instant::now();
    let s = net.subsystem_count();
    let mut order: Vec<usize> = (0..data.len()).collect();
    if let Some(rng) = opts.shuffle {
        order.shuffle(rng);
    }

    let mut sub_err = vec![0.0; s];
    let mut collab_err = 0.0;
    let mut gain_sum = vec![0.0; s];
    let mut gain_min = vec![f64::INFINITY; s];
    let mut d_max = vec![0.0f64; s];
    let mut gain_collab_sum = 0.0;
    let mut gain_collab_min = f64::INFINITY;
    let mut d_collab_max = 0.0f64;
    let mut violations = 0;
    let mut v_trace = Vec::new();
    if let Some(t) = opts.teacher {
        v_trace.reserve(order.len() + 1);
        v_trace.push(objective_v(net, t)?);
    }

    for &i in &order {
        let x = data.input(i);
        let teacher_targets;
        let targets: Vec<Target<'_>> = match opts.teacher {
            Some(t) => {
                teacher_targets = t.subsystem_targets(x)?;
                teacher_targets.iter().map(|y| Target::Output(y)).collect()
            }
            None => vec![data.target(i); s],
        };
        let collab = match opts.teacher {
            Some(t) => CollabTarget::Teacher(t),
            None => CollabTarget::Fixed(data.target(i)),
        };
        let rep = train_sample(net, x, &targets, collab, rates, gains)?;
        for j in 0..s {
            sub_err[j] += norm(&rep.subsystem_errors[j]);
            let c = gains.subsystem(j);
            gain_sum[j] += c;
            gain_min[j] = gain_min[j].min(c);
            d_max[j] = d_max[j].max(rep.d_subsystem[j]);
        }
        collab_err += norm(&rep.collab_error);
        gain_collab_sum += gains.collab();
        gain_collab_min = gain_collab_min.min(gains.collab());
        d_collab_max = d_collab_max.max(rep.d_collab);
        violations += rep.gain_violations;
        if let Some(t) = opts.teacher {
            v_trace.push(objective_v(net, t)?);
        }
    }

    if !net.is_finite() {
        return Err(Error::NonFinite("weights after epoch"));
    }
    let n = order.len() as f64;
    Ok(EpochRecord {
        phase,
        epoch,
        subsystem_error: sub_err.iter().map(|v| v / n).collect(),
        collab_error: collab_err / n,
        mean_gain_subsystem: gain_sum.iter().map(|v| v / n).collect(),
        mean_gain_collab: gain_collab_sum / n,
        min_gain_subsystem: gain_min,
        min_gain_collab: gain_collab_min,
        max_d_subsystem: d_max,
        max_d_collab: d_collab_max,
        gain_violations: violations,
        max_weight_norm: net.matrices().map(|m| m.frobenius()).fold(0.0, f64::max),
        v_trace,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Settings of the two-phase protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub c0: f64,
    /// Base gain during fine-tuning; `None` keeps `c0`.
    pub c0_finetune: Option<f64>,
    pub beta: f64,
    pub alpha_out: f64,
    pub alpha_hidden: f64,
    pub alpha_collab: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c0: 0.01,
            c0_finetune: None,
            beta: 0.9,
            alpha_out: 1.0,
            alpha_hidden: 1.0,
            alpha_collab: 1.0,
            pretrain_epochs: 10,
            finetune_epochs: 10,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Record of a whole training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn gain_violations(&self) -> usize {
        self.epochs.iter().map(|e| e.gain_violations).sum()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Pretraining followed by fine-tuning. `on_epoch` runs after every epoch
/// (evaluation, logging) and may stop the run early by returning `false`.
pub fn train_two_phase(
    net: &mut CollabNetwork,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CollabNetwork, &EpochRecord) -> Result<bool>,
) -> Result<TrainRun> {
    let mut gains = GainSchedule::new(cfg.c0, cfg.beta, net.subsystem_count())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = TrainRun::default();
    let phases = std::iter::repeat_n(Phase::Pretrain, cfg.pretrain_epochs)
        .chain(std::iter::repeat_n(Phase::FineTune, cfg.finetune_epochs));
    for (epoch, phase) in phases.enumerate() {
        if phase == Phase::FineTune {
            gains.set_c0(cfg.c0_finetune.unwrap_or(cfg.c0));
        }
        let rates = LearnRates::for_phase(phase, cfg.alpha_out, cfg.alpha_hidden, cfg.alpha_collab);
        let opts = EpochOptions {
            shuffle: cfg.shuffle.then_some(&mut rng),
            teacher: None,
        };
        let rec = train_epoch(net, data, phase, epoch, &rates, &mut gains, opts)?;
        let keep_going = on_epoch(net, &rec)?;
        run.epochs.push(rec);
        if !keep_going {
            break;
        }
    }
    Ok(run)
}

/// Classification accuracy of every subsystem and of the collaborative output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub subsystem: Vec<f64>,
    pub collab: f64,
}

/// Accuracy of argmax predictions against the dataset's class labels.
pub fn evaluate_accuracy(net: &CollabNetwork, data: &LabeledDataset) -> Result<Accuracy> {
    let s = net.subsystem_count();
    let mut hits = vec![0usize; s];
    let mut collab_hits = 0usize;
    for i in 0..data.len() {
        let label = data
            .label(i)
            .ok_or_else(|| Error::InvalidArgument("dataset has no class labels".into()))?;
        let tr = net.forward_collab(data.input(i))?;
        for (j, t) in tr.subsystems.iter().enumerate() {
            if argmax(&t.output) == label {
                hits[j] += 1;
            }
        }
        if argmax(&tr.collab_out) == label {
            collab_hits += 1;
        }
    }
    let n = data.len().max(1) as f64;
    Ok(Accuracy {
        subsystem: hits.iter().map(|&h| h as f64 / n).collect(),
        collab: collab_hits as f64 / n,
    })
}

#[cfg(test)]
mod tests;
