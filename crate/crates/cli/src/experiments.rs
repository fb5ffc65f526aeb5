//! One function per experiment. Each writes `metrics.csv` (deterministic for
//! a given config), `timing.csv` where training is timed, and
//! `summary.json`, and returns the summary.

use anyhow::{bail, Context, Result};
use cfnn::checkpoint::{load_checkpoint, save_checkpoint};
use cfnn::data_io::{load_mnist, make_teacher_dataset, MnistSplit, MNIST_CLASSES};
use cfnn::kin_sim::{
    chattering_metric, jacobian_fit, run_tracking, train_offline, KinConfig, TrackingLog,
    TrackingMode,
};
use cfnn::trainer::{
    evaluate_accuracy, objective_v, sgd_baseline_train, train_epoch, train_two_phase, Accuracy,
    EpochOptions, EpochRecord, GainSchedule, LearnRates, MlpSpec, Phase, SgdConfig,
};
use cfnn::{CollabNetwork, LabeledDataset};
use serde_json::{json, Value};

use crate::config::{Experiment, RunConfig};
use crate::output::{cols, numbered, nums, CsvOut, OutDir};

pub fn run(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    out.text("config.toml", &cfg.to_toml()?)?;
    let summary = match cfg.experiment {
        Experiment::Mnist => mnist(cfg, out)?,
        Experiment::TeacherVerify => teacher_verify(cfg, out)?,
        Experiment::KinOffline => kin_offline(cfg, out)?,
        Experiment::KinOnline => kin_online(cfg, out)?,
        Experiment::ChatterCompare => chatter_compare(cfg, out)?,
        Experiment::SgdBaseline => sgd_baseline(cfg, out)?,
    };
    out.json("summary.json", &summary)?;
    if let Some(problem) = summary.get("invariant_violation").and_then(Value::as_str) {
        bail!("invariant violated: {problem}");
    }
    Ok(summary)
}

fn mnist_data(cfg: &RunConfig, split: MnistSplit, limit: Option<usize>) -> Result<LabeledDataset> {
    let dir = &cfg.paths.data_dir;
    let data = load_mnist(dir, split)
        .with_context(|| format!("paths.data_dir = {}: loading MNIST", dir.display()))?;
    Ok(match limit {
        Some(n) => data.head(n),
        None => data,
    })
}

fn epoch_header(s: usize) -> Vec<String> {
    let mut h = cols(&["epoch", "phase"]);
    h.extend(numbered("err_sub", s));
    h.push("err_collab".into());
    h.extend(numbered("gain_sub", s));
    h.push("gain_collab".into());
    h.extend(numbered("min_gain_sub", s));
    h.push("min_gain_collab".into());
    h.push("gain_violations".into());
    h.push("max_weight_norm".into());
    h
}

fn epoch_row(r: &EpochRecord) -> Vec<String> {
    let mut row = vec![r.epoch.to_string(), r.phase.as_str().to_string()];
    row.extend(nums(&r.subsystem_error));
    row.push(r.collab_error.to_string());
    row.extend(nums(&r.mean_gain_subsystem));
    row.push(r.mean_gain_collab.to_string());
    row.extend(nums(&r.min_gain_subsystem));
    row.push(r.min_gain_collab.to_string());
    row.push(r.gain_violations.to_string());
    row.push(r.max_weight_norm.to_string());
    row
}

fn accuracy_json(a: &Accuracy) -> Value {
    json!({ "subsystem": a.subsystem, "collab": a.collab })
}

fn mnist(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let train = mnist_data(cfg, MnistSplit::Train, cfg.mnist.train_limit)?;
    let test = mnist_data(cfg, MnistSplit::Test, None)?;
    let spec = cfg.network.spec(train.input_dim(), MNIST_CLASSES);
    let s = spec.subsystem_count();
    let mut net = CollabNetwork::init(spec, cfg.seed)?;

    let mut header = epoch_header(s);
    header.extend(numbered("test_acc_sub", s));
    header.push("test_acc_collab".into());
    let mut metrics = out.csv("metrics.csv", &header)?;
    let mut timing = out.csv("timing.csv", &cols(&["epoch", "elapsed_secs"]))?;
    let total = cfg.train.pretrain_epochs + cfg.train.finetune_epochs;
    let every = cfg.mnist.eval_every.max(1);
    let mut last_acc = None;
    let mut err = None;
    let run = train_two_phase(&mut net, &train, &cfg.train, |n, rec| {
        let mut row = epoch_row(rec);
        let evaluate = (rec.epoch + 1) % every == 0 || rec.epoch + 1 == total;
        if evaluate {
            let acc = evaluate_accuracy(n, &test)?;
            row.extend(nums(&acc.subsystem));
            row.push(acc.collab.to_string());
            last_acc = Some(acc);
        } else {
            row.extend(std::iter::repeat_n(String::new(), s + 1));
        }
        let written = metrics
            .row(&row)
            .and_then(|_| timing.row(&[rec.epoch.to_string(), rec.elapsed_secs.to_string()]));
        if let Err(e) = written {
            err = Some(e);
            return Ok(false);
        }
        Ok(true)
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    metrics.finish()?;
    timing.finish()?;
    save_checkpoint(&net, out.path("checkpoint.cfnn"))?;

    let acc = match last_acc {
        Some(a) => a,
        None => evaluate_accuracy(&net, &test)?,
    };
    let violations = run.gain_violations();
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "train_samples": train.len(),
        "epochs": run.epochs.len(),
        "test_accuracy": accuracy_json(&acc),
        "gain_violations": violations,
        "invariant_violation": (violations > 0).then_some("gain condition"),
    }))
}

fn teacher_verify(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let t = &cfg.teacher;
    let setup = make_teacher_dataset(t.spec(), cfg.seed, t.samples)?;
    let mut net = setup.student;
    let s = net.subsystem_count();
    let rates = LearnRates::for_phase(
        Phase::Pretrain,
        cfg.train.alpha_out,
        cfg.train.alpha_hidden,
        cfg.train.alpha_collab,
    );
    let mut gains = GainSchedule::new(t.c0, t.beta, s)?;

    let mut header = cols(&["epoch", "v_start", "v_end", "max_dv"]);
    header.extend(numbered("err_sub", s));
    header.extend(cols(&["err_collab", "gain_violations"]));
    let mut metrics = out.csv("metrics.csv", &header)?;
    let v_initial = objective_v(&net, &setup.teacher)?;
    let mut max_dv = f64::NEG_INFINITY;
    let mut violations = 0;
    for epoch in 0..t.epochs {
        let opts = EpochOptions {
            shuffle: None,
            teacher: Some(&setup.teacher),
        };
        let rec = train_epoch(
            &mut net,
            &setup.dataset,
            Phase::Pretrain,
            epoch,
            &rates,
            &mut gains,
            opts,
        )?;
        let dv = rec.max_v_increase().unwrap_or(f64::NEG_INFINITY);
        max_dv = max_dv.max(dv);
        violations += rec.gain_violations;
        let mut row = vec![
            epoch.to_string(),
            rec.v_trace[0].to_string(),
            rec.v_trace.last().unwrap().to_string(),
            dv.to_string(),
        ];
        row.extend(nums(&rec.subsystem_error));
        row.push(rec.collab_error.to_string());
        row.push(rec.gain_violations.to_string());
        metrics.row(&row)?;
    }
    metrics.finish()?;
    save_checkpoint(&net, out.path("checkpoint.cfnn"))?;

    let monotone = max_dv <= t.slack;
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "steps": t.epochs * t.samples,
        "v_initial": v_initial,
        "v_final": objective_v(&net, &setup.teacher)?,
        "v_monotone": monotone,
        "max_dv_slack": max_dv,
        "slack_tolerance": t.slack,
        "gain_violations": violations,
        "invariant_violation": if !monotone {
            Some("objective increased")
        } else if violations > 0 {
            Some("gain condition")
        } else {
            None
        },
    }))
}

fn train_kin(kin: &KinConfig, out: &OutDir, tag: &str) -> Result<(CollabNetwork, Value)> {
    let s = kin.widths.len();
    let mut metrics = out.csv(&format!("metrics{tag}.csv"), &epoch_header(s))?;
    let mut err = None;
    let (net, data, run) = train_offline(kin, |_, rec| {
        if let Err(e) = metrics.row(&epoch_row(rec)) {
            err = Some(e);
            return Ok(false);
        }
        Ok(true)
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    metrics.finish()?;
    let fit = jacobian_fit(&net, &kin.robot, &data)?;
    let info = json!({
        "samples": data.len(),
        "epochs": run.epochs.len(),
        "jacobian_rel_error": { "subsystem": fit[..s], "collab": fit[s] },
        "gain_violations": run.gain_violations(),
    });
    Ok((net, info))
}

fn kin_offline(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let (net, info) = train_kin(&cfg.kin, out, "")?;
    save_checkpoint(&net, out.path("checkpoint.cfnn"))?;
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "offline": info,
    }))
}

fn tracking_csv(out: &OutDir, name: &str, log: &TrackingLog) -> Result<()> {
    let mut header = cols(&[
        "t", "dx_x", "dx_y", "dx_z", "eps_x", "eps_y", "eps_z", "qd_1", "qd_2", "qd_3",
    ]);
    let g = log.gains.iter().map(Vec::len).max().unwrap_or(0);
    header.extend(numbered("gain", g));
    let mut w: CsvOut = out.csv(name, &header)?;
    for k in 0..log.len() {
        let mut row = vec![log.t[k].to_string()];
        row.extend(nums(&log.dx[k]));
        row.extend(nums(&log.eps[k]));
        row.extend(nums(&log.qd[k]));
        row.extend(nums(&log.gains[k]));
        row.resize(header.len(), String::new());
        w.row(&row)?;
    }
    w.finish()
}

fn tracking_json(log: &TrackingLog) -> Value {
    json!({
        "ticks": log.len(),
        "rms_dx": log.rms_dx(),
        "chattering": chattering_metric(log),
        "gain_violations": log.gain_violations,
        "terminated": log.terminated,
    })
}

fn kin_online(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let kin = &cfg.kin;
    let (net, offline) = match &cfg.paths.checkpoint {
        Some(p) => {
            let net = load_checkpoint(p)
                .with_context(|| format!("paths.checkpoint = {}", p.display()))?;
            (net, Value::Null)
        }
        None => {
            let (net, info) = train_kin(kin, out, "_offline")?;
            save_checkpoint(&net, out.path("checkpoint_offline.cfnn"))?;
            (net, info)
        }
    };
    let off = run_tracking(
        &mut net.clone(),
        &kin.robot,
        &kin.trajectory,
        TrackingMode::OfflineOnly,
        &kin.tracking,
    )?;
    let mut online_net = net;
    let on = run_tracking(
        &mut online_net,
        &kin.robot,
        &kin.trajectory,
        TrackingMode::Online,
        &kin.tracking,
    )?;
    tracking_csv(out, "tracking_offline.csv", &off)?;
    tracking_csv(out, "tracking_online.csv", &on)?;
    save_checkpoint(&online_net, out.path("checkpoint.cfnn"))?;

    let mut metrics = out.csv(
        "metrics.csv",
        &cols(&["mode", "ticks", "rms_dx", "chattering", "gain_violations"]),
    )?;
    for (mode, log) in [("offline_only", &off), ("online", &on)] {
        metrics.row(&[
            mode.to_string(),
            log.len().to_string(),
            log.rms_dx().to_string(),
            chattering_metric(log).to_string(),
            log.gain_violations.to_string(),
        ])?;
    }
    metrics.finish()?;
    let reduction = 1.0 - on.rms_dx() / off.rms_dx();
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "offline": offline,
        "offline_only": tracking_json(&off),
        "online": tracking_json(&on),
        "rms_reduction": reduction,
        "invariant_violation": (on.gain_violations > 0).then_some("gain condition"),
    }))
}

fn chatter_compare(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let kinds = &cfg.chatter.activations;
    if kinds.len() < 2 {
        bail!("chatter.activations needs at least two entries");
    }
    let mut metrics = out.csv(
        "metrics.csv",
        &cols(&["hidden", "rms_dx", "chattering", "gain_violations"]),
    )?;
    let mut results = serde_json::Map::new();
    let mut chatter = Vec::new();
    for &kind in kinds {
        let kin = KinConfig {
            hidden: kind,
            ..cfg.kin.clone()
        };
        let name = kind.to_string();
        let tag = format!("_{}", name.split('(').next().unwrap_or(&name));
        let (mut net, info) = train_kin(&kin, out, &tag)?;
        let log = run_tracking(
            &mut net,
            &kin.robot,
            &kin.trajectory,
            TrackingMode::Online,
            &kin.tracking,
        )?;
        tracking_csv(out, &format!("tracking{tag}.csv"), &log)?;
        let c = chattering_metric(&log);
        metrics.row(&[
            name.clone(),
            log.rms_dx().to_string(),
            c.to_string(),
            log.gain_violations.to_string(),
        ])?;
        chatter.push(c);
        results.insert(
            name,
            json!({ "offline": info, "online": tracking_json(&log) }),
        );
    }
    metrics.finish()?;
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "runs": results,
        "first_chatters_least": chatter[1..].iter().all(|&c| chatter[0] < c),
    }))
}

fn sgd_baseline(cfg: &RunConfig, out: &OutDir) -> Result<Value> {
    let sgd = &cfg.sgd;
    let train = mnist_data(cfg, MnistSplit::Train, sgd.train_limit)?;
    let test = mnist_data(cfg, MnistSplit::Test, None)?;
    let spec = MlpSpec {
        input_dim: train.input_dim(),
        hidden: sgd.widths.clone(),
        hidden_activation: sgd.hidden,
        output_dim: MNIST_CLASSES,
        output_activation: sgd.output_activation,
    };
    let sc = SgdConfig {
        learning_rate: sgd.learning_rate,
        epochs: sgd.epochs,
        seed: cfg.seed,
        shuffle: sgd.shuffle,
        eval_train: false,
    };
    let mut metrics = out.csv(
        "metrics.csv",
        &cols(&["epoch", "mean_loss", "test_accuracy"]),
    )?;
    let mut err = None;
    let report = sgd_baseline_train(spec, &train, &test, &sc, |e| {
        if err.is_none() {
            err = metrics
                .row(&[
                    e.epoch.to_string(),
                    e.mean_loss.to_string(),
                    e.test_accuracy.to_string(),
                ])
                .err();
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    metrics.finish()?;
    Ok(json!({
        "experiment": cfg.experiment.to_string(),
        "seed": cfg.seed,
        "initial_test_accuracy": report.initial_test_accuracy,
        "final_test_accuracy": report.final_test_accuracy(),
        "epochs_run": report.epochs.len(),
        "diverged": report.diverged,
    }))
}
