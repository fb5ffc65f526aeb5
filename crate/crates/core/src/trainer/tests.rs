use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::activations::ActivationKind::{self, *};
use crate::collab_net::{CollabSpec, LayerSpec};
use crate::data_io::make_teacher_dataset;
use crate::linalg::Matrix;

fn scalar_spec(hidden: ActivationKind, out: ActivationKind, collab: ActivationKind) -> CollabSpec {
    CollabSpec {
        input_dim: 1,
        trunk: vec![LayerSpec {
            width: 1,
            activation: hidden,
        }],
        output_dim: 1,
        output_activation: out,
        collab_activation: collab,
        bias: false,
    }
}

fn scalar_net(spec: CollabSpec, w: f64, p: f64, wn: f64) -> CollabNetwork {
    CollabNetwork::from_parts(
        spec,
        vec![Matrix::from_vec(1, 1, vec![w]).unwrap()],
        vec![Matrix::from_vec(1, 1, vec![p]).unwrap()],
        Matrix::from_vec(1, 1, vec![wn]).unwrap(),
    )
    .unwrap()
}

fn weights(net: &CollabNetwork) -> Vec<Vec<f64>> {
    net.matrices().map(|m| m.as_slice().to_vec()).collect()
}

#[test]
fn scalar_subsystem_step() {
    let mut net = scalar_net(scalar_spec(Sigmoid, Identity, Identity), 0.0, 0.0, 0.0);
    let gains = GainSchedule::fixed(vec![0.1], 0.1);
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    let e = step_subsystem(&mut net, 0, &[1.0], Target::Output(&[1.0]), &rates, &gains).unwrap();
    assert_eq!(e, vec![1.0]);
    assert_relative_eq!(
        net.pseudo_out_weight(0).get(0, 0),
        0.05,
        max_relative = 1e-15
    );
    assert_eq!(net.trunk_weight(0).get(0, 0), 0.0);
}

#[test]
fn scalar_collab_step() {
    let mut net = scalar_net(scalar_spec(Sigmoid, Identity, Identity), 0.0, 0.0, 0.0);
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    let e = apply_collab_update(
        &mut net,
        &[0.5],
        &[0.0],
        Target::Output(&[1.0]),
        &rates,
        0.1,
    )
    .unwrap();
    assert_eq!(e, vec![1.0]);
    assert_relative_eq!(net.collab_weight().get(0, 0), 0.05, max_relative = 1e-15);
}

#[test]
fn zero_rates_leave_weights_bitwise() {
    let spec = CollabSpec::uniform(3, &[5, 4], Sigmoid, 2, Sigmoid, Identity);
    let mut net = CollabNetwork::init(spec, 1).unwrap();
    let before = weights(&net);
    let gains = GainSchedule::fixed(vec![0.3, 0.3], 0.3);
    let pre = LearnRates::new(1.0, 0.0, 1.0);
    step_subsystem(
        &mut net,
        1,
        &[0.1, 0.2, 0.3],
        Target::Output(&[1.0, 0.0]),
        &pre,
        &gains,
    )
    .unwrap();
    assert_eq!(net.trunk_weight(0).as_slice(), &before[0][..]);
    assert_eq!(net.trunk_weight(1).as_slice(), &before[1][..]);

    let none = LearnRates::new(0.0, 0.0, 0.0);
    let mut net = CollabNetwork::init(net.spec().clone(), 1).unwrap();
    let xs = vec![vec![0.1, 0.2, 0.3], vec![0.9, 0.0, 0.4]];
    let ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let data = LabeledDataset::new(xs, ys).unwrap();
    let mut g = GainSchedule::new(0.5, 0.9, 2).unwrap();
    let r1 = train_epoch(
        &mut net,
        &data,
        Phase::FineTune,
        0,
        &none,
        &mut g,
        Default::default(),
    )
    .unwrap();
    let r2 = train_epoch(
        &mut net,
        &data,
        Phase::FineTune,
        1,
        &none,
        &mut g,
        Default::default(),
    )
    .unwrap();
    assert_eq!(weights(&net), before);
    assert_eq!(r1.subsystem_error, r2.subsystem_error);
    assert_eq!(r1.collab_error, r2.collab_error);
}

#[test]
fn step_reduces_error_on_same_sample() {
    let spec = CollabSpec::uniform(4, &[6, 5], Sigmoid, 3, Sigmoid, Identity);
    let mut net = CollabNetwork::init(spec, 9).unwrap();
    let x = [0.3, -0.2, 0.8, 0.5];
    let y = [1.0, 0.0, 0.0];
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    let gains = GainSchedule::fixed(vec![0.05, 0.05], 0.05);
    for j in 0..2 {
        let before = step_subsystem(&mut net, j, &x, Target::Output(&y), &rates, &gains).unwrap();
        let after = Target::Output(&y)
            .error(&net.forward_subsystem(j, &x).unwrap().output)
            .unwrap();
        assert!(norm(&after) < norm(&before));
    }
    let before = step_collab(&mut net, &x, Target::Output(&y), &rates, &gains).unwrap();
    let after = Target::Output(&y).error(&net.predict(&x).unwrap()).unwrap();
    assert!(norm(&after) < norm(&before));
}

/// One sample through the scalar network, written out longhand.
#[allow(clippy::too_many_arguments)]
fn hand_step(
    act: ActivationKind,
    out: ActivationKind,
    collab: ActivationKind,
    (w, p, wn): (f64, f64, f64),
    x: f64,
    y: f64,
    (c, cn): (f64, f64),
    (ao, ah, an): (f64, f64, f64),
) -> (f64, f64, f64) {
    let z = w * x;
    let h = act.apply(z);
    let e = y - out.apply(p * h);
    let p_new = p + ao * c * e * h;
    let w_new = w + ah * c * act.slope(z) * p * e * x;
    let o = out.apply(p_new * act.apply(w_new * x));
    let en = y - collab.apply(wn * o);
    (w_new, p_new, wn + an * cn * en * o)
}

#[test]
fn update_laws_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let kinds = [Sigmoid, Tanh, Identity];
    for case in 0..100 {
        let act = kinds[case % 2];
        let out = kinds[(case / 2) % 3];
        let collab = kinds[(case / 6) % 3];
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let params = (u(-2.0, 2.0), u(-2.0, 2.0), u(-2.0, 2.0));
        let (x, y) = (u(-1.0, 1.0), u(-1.0, 1.0));
        let cs = (u(0.001, 0.5), u(0.001, 0.5));
        let rates = (u(0.0, 2.0), u(0.0, 2.0), u(0.0, 2.0));

        let expect = hand_step(act, out, collab, params, x, y, cs, rates);
        let mut net = scalar_net(scalar_spec(act, out, collab), params.0, params.1, params.2);
        let gains = GainSchedule::fixed(vec![cs.0], cs.1);
        let lr = LearnRates::new(rates.0, rates.1, rates.2);
        step_subsystem(&mut net, 0, &[x], Target::Output(&[y]), &lr, &gains).unwrap();
        step_collab(&mut net, &[x], Target::Output(&[y]), &lr, &gains).unwrap();
        let got = (
            net.trunk_weight(0).get(0, 0),
            net.pseudo_out_weight(0).get(0, 0),
            net.collab_weight().get(0, 0),
        );
        for (g, e) in [(got.0, expect.0), (got.1, expect.1), (got.2, expect.2)] {
            assert!(
                (g - e).abs() <= 1e-12 * e.abs().max(1.0),
                "case {case}: {g} vs {e}"
            );
        }
    }
}

#[test]
fn error_delta_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for act in [Sigmoid, Tanh, Identity] {
        let f = act.max_slope();
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-8.0..8.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-8.0..8.0)).collect();
            let (e, d) = error_and_delta(act, &a, &b);
            for (ei, di) in e.iter().zip(&d) {
                assert!(ei * di >= 0.0);
                assert!(ei.abs() <= f * di.abs() * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}

#[test]
fn taylor_remainder_is_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Half the largest |sigma''|: 1/(12 sqrt 3) for Sigmoid, 2/(3 sqrt 3) for Tanh.
    for (act, k) in [(Sigmoid, 0.0482), (Tanh, 0.385)] {
        for _ in 0..500 {
            let w = Matrix::uniform(6, 4, 1.5, &mut rng);
            let mut dw = Matrix::uniform(6, 4, 1.0, &mut rng);
            let scale = 1e-4 / dw.frobenius();
            dw.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = w.matvec(&x);
            let u = dw.matvec(&x);
            let mut rem = 0.0;
            for i in 0..6 {
                let ds = act.apply(z[i] + u[i]) - act.apply(z[i]);
                rem += (ds - act.slope(z[i]) * u[i]).powi(2);
            }
            // Rounding in the difference is ~1e-16 per entry.
            assert!(rem.sqrt() <= k * norm_sq(&u) + 1e-15);
        }
    }
}

#[test]
fn objective_v_sums_squared_differences() {
    let spec = CollabSpec {
        bias: false,
        ..CollabSpec::uniform(2, &[3], Sigmoid, 2, Sigmoid, Identity)
    };
    let student = CollabNetwork::init(spec, 4).unwrap();
    let teacher = TeacherOracle::from_network(student.clone());
    assert_eq!(objective_v(&student, &teacher).unwrap(), 0.0);
    let mut moved = student.clone();
    moved
        .collab_weight_mut()
        .add_outer(1.0, &[1.0, 0.0], &[1.0, 2.0]);
    moved
        .collab_weight_mut()
        .add_outer(1.0, &[0.0, 1.0], &[3.0, 4.0]);
    assert_relative_eq!(
        objective_v(&moved, &teacher).unwrap(),
        30.0,
        max_relative = 1e-12
    );
}

fn teacher_run(widths: &[usize], seed: u64, epochs: usize, c0: f64) -> (Vec<EpochRecord>, f64) {
    let spec = CollabSpec::uniform(4, widths, Sigmoid, 2, Sigmoid, Sigmoid);
    let setup = make_teacher_dataset(spec, seed, 100).unwrap();
    let mut net = setup.student;
    let rates = LearnRates::for_phase(Phase::Pretrain, 1.0, 1.0, 1.0);
    let mut gains = GainSchedule::new(c0, 0.9, widths.len()).unwrap();
    let mut out = Vec::new();
    for epoch in 0..epochs {
        let opts = EpochOptions {
            shuffle: None,
            teacher: Some(&setup.teacher),
        };
        out.push(
            train_epoch(
                &mut net,
                &setup.dataset,
                Phase::Pretrain,
                epoch,
                &rates,
                &mut gains,
                opts,
            )
            .unwrap(),
        );
    }
    let v = objective_v(&net, &setup.teacher).unwrap();
    (out, v)
}

#[test]
fn pretraining_v_is_monotone() {
    for (widths, seed) in [(&[8][..], 0), (&[8, 5][..], 1), (&[6, 6, 3][..], 2)] {
        let (epochs, v_end) = teacher_run(widths, seed, 20, 50.0);
        let v0 = epochs[0].v_trace[0];
        assert!(v_end < v0);
        for rec in &epochs {
            assert_eq!(rec.gain_violations, 0);
            assert!(rec.max_v_increase().unwrap() <= 1e-10);
        }
    }
}

#[test]
fn pretraining_converges_on_realizable_targets() {
    let (epochs, _) = teacher_run(&[8], 5, 200, 50.0);
    for w in epochs[..5].windows(2) {
        assert!(w[1].subsystem_error[0] < w[0].subsystem_error[0]);
    }
    let last = epochs.last().unwrap();
    assert!(
        last.subsystem_error[0] < 1e-3,
        "{}",
        last.subsystem_error[0]
    );
}

#[test]
fn train_sample_matches_sequential_steps() {
    let spec = CollabSpec::uniform(3, &[5, 4, 3], Tanh, 2, Sigmoid, Identity);
    let mut a = CollabNetwork::init(spec, 21).unwrap();
    let mut b = a.clone();
    let rates = LearnRates::new(1.0, 0.7, 0.5);
    let mut ga = GainSchedule::new(0.2, 0.9, 3).unwrap();
    let mut gb = ga.clone();
    let (f_out, f_collab) = layer_slopes(&a);
    let x = [0.4, -0.7, 0.1];
    let y = [0.0, 1.0];
    let t = Target::Output(&y);
    let rep = train_sample(&mut a, &x, &[t; 3], CollabTarget::Fixed(t), &rates, &mut ga).unwrap();
    for j in 0..3 {
        let tr = b.forward_subsystem(j, &x).unwrap();
        gb.adapt_subsystem(j, &b, &tr, &rates, f_out, 1.0);
        let e = step_subsystem(&mut b, j, &x, t, &rates, &gb).unwrap();
        assert_eq!(e, rep.subsystem_errors[j]);
    }
    let tr = b.forward_collab(&x).unwrap();
    gb.adapt_collab(&tr.sub_concat, &rates, f_collab, 1.0);
    let en = step_collab(&mut b, &x, t, &rates, &gb).unwrap();
    assert_eq!(en, rep.collab_error);
    assert_eq!(weights(&a), weights(&b));
    assert_eq!(ga, gb);
}

#[test]
fn adapt_gains_satisfies_conditions() {
    let spec = CollabSpec::uniform(6, &[20, 10], Sigmoid, 4, Sigmoid, Identity);
    let net = CollabNetwork::init(spec, 2).unwrap();
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    let mut g = GainSchedule::new(10.0, 0.9, 2).unwrap();
    let x = [1.0; 6];
    let (d, dn) = adapt_gains(&net, &x, Target::Output(&[0.0; 4]), &rates, &mut g).unwrap();
    let (f_out, f_collab) = layer_slopes(&net);
    for (j, dj) in d.iter().enumerate() {
        assert!(*dj > 0.0);
        assert!(g.subsystem(j) < 10.0);
        assert!(g.subsystem_margin(j, &rates, f_out) > 0.0);
    }
    assert!(dn > 0.0);
    assert!(g.collab_margin(&rates, f_collab) > 0.0);
}

#[test]
fn finetune_error_does_not_grow_and_weights_stay_bounded() {
    let spec = CollabSpec::uniform(4, &[8, 6], Sigmoid, 2, Sigmoid, Sigmoid);
    for seed in 0..6 {
        let setup = make_teacher_dataset(spec.clone(), seed, 200).unwrap();
        let mut net = setup.student;
        let cfg = TrainConfig {
            c0: 5.0,
            c0_finetune: Some(0.5),
            pretrain_epochs: 5,
            finetune_epochs: 15,
            seed,
            ..TrainConfig::default()
        };
        let mut ceiling = 0.0f64;
        let run = train_two_phase(&mut net, &setup.dataset, &cfg, |n, rec| {
            assert!(n.is_finite());
            ceiling = ceiling.max(rec.max_weight_norm);
            Ok(true)
        })
        .unwrap();
        assert_eq!(run.epochs.len(), 20);
        assert_eq!(run.gain_violations(), 0);
        assert!(ceiling.is_finite() && ceiling < 1e3);
        let ft: Vec<_> = run
            .epochs
            .iter()
            .filter(|r| r.phase == Phase::FineTune)
            .collect();
        for w in ft.windows(2) {
            for j in 0..2 {
                assert!(w[1].subsystem_error[j] <= 1.05 * w[0].subsystem_error[j]);
            }
            assert!(w[1].collab_error <= 1.05 * w[0].collab_error);
        }
    }
}

#[test]
fn shared_trunk_update_is_seen_downstream() {
    let spec = CollabSpec::uniform(3, &[4, 4], Sigmoid, 2, Sigmoid, Identity);
    let mut net = CollabNetwork::init(spec, 6).unwrap();
    let x = [0.5, 0.1, -0.3];
    let before = net.forward_subsystem(1, &x).unwrap();
    let gains = GainSchedule::fixed(vec![0.5, 0.5], 0.5);
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    step_subsystem(&mut net, 0, &x, Target::Output(&[1.0, 0.0]), &rates, &gains).unwrap();
    let after = net.forward_subsystem(1, &x).unwrap();
    assert_ne!(before.input, after.input);
}

#[test]
fn velocity_target_signal() {
    // Column-major 2x3 Jacobian estimate.
    let j_hat = [1.0, 0.0, 0.0, 1.0, 2.0, 2.0];
    let rates = [1.0, -1.0, 0.5];
    let t = Target::Velocity {
        rates: &rates,
        velocity: &[3.0, 0.0],
    };
    let e = t.error(&j_hat).unwrap();
    // J q = [1, 0] - [0, 1] + 0.5 [2, 2] = [2, 0]
    assert_eq!(e, vec![1.0, 0.0]);
    assert_eq!(t.output_signal(&e), vec![1.0, 0.0, -1.0, 0.0, 0.5, 0.0]);
    assert_eq!(t.gain_scale(), 2.25);
    assert!(t.error(&j_hat[..5]).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let spec = CollabSpec::uniform(2, &[3], Sigmoid, 1, Sigmoid, Identity);
    let mut net = CollabNetwork::init(spec, 0).unwrap();
    let rates = LearnRates::new(1.0, 1.0, 1.0);
    let mut g = GainSchedule::new(0.1, 0.9, 1).unwrap();
    let t = Target::Output(&[1.0]);
    let c = CollabTarget::Fixed(t);
    assert!(train_sample(&mut net, &[0.0], &[t], c, &rates, &mut g).is_err());
    assert!(train_sample(&mut net, &[0.0, f64::NAN], &[t], c, &rates, &mut g).is_err());
    assert!(train_sample(&mut net, &[0.0, 0.0], &[], c, &rates, &mut g).is_err());
    assert!(LearnRates::new(-1.0, 0.0, 0.0).validate().is_err());
    let empty = LabeledDataset::new(vec![], vec![]).unwrap();
    assert!(train_epoch(
        &mut net,
        &empty,
        Phase::Pretrain,
        0,
        &rates,
        &mut g,
        Default::default()
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gains_positive_and_conditions_hold(
        seed in 0u64..1000,
        x in proptest::collection::vec(-3.0f64..3.0, 5),
        c0 in 0.001f64..100.0,
        ao in 0.01f64..3.0,
        ah in 0.0f64..3.0,
    ) {
        let spec = CollabSpec::uniform(5, &[7, 4], Tanh, 3, Sigmoid, Identity);
        let net = CollabNetwork::init(spec, seed).unwrap();
        let rates = LearnRates::new(ao, ah, ao);
        let mut g = GainSchedule::new(c0, 0.9, 2).unwrap();
        adapt_gains(&net, &x, Target::Output(&[0.0; 3]), &rates, &mut g).unwrap();
        let (f_out, f_collab) = layer_slopes(&net);
        for j in 0..2 {
            prop_assert!(g.subsystem(j) > 0.0 && g.subsystem(j) <= c0);
            prop_assert!(g.subsystem_margin(j, &rates, f_out) > 0.0);
        }
        prop_assert!(g.collab_margin(&rates, f_collab) > 0.0);
    }
}
