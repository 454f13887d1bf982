mod common;

use std::io::Write;

use common::*;
use contactplan::detection::ResidualSample;
use contactplan::estimation::EstimationConfig;
use contactplan::sim::*;
use contactplan::Error;
use nalgebra::DVector;
use serde_json::json;

fn with(name: &str, overrides: &[(&str, serde_json::Value)]) -> Scenario {
    let overrides: Vec<_> = overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    load_scenario_with(fixture_path(name), &overrides).unwrap()
}

/// Joint torques of the contact forces active at `t`, from the scenario alone.
fn applied_torque(scenario: &Scenario, t: f64, q: &DVector<f64>) -> DVector<f64> {
    let mut tau = DVector::zeros(scenario.dof());
    for c in scenario.contacts.iter().filter(|c| c.is_active(t)) {
        tau += scenario
            .model
            .external_torque_from_force(q, c.link, c.s, &c.force_at(t))
            .unwrap();
    }
    tau
}

#[test]
fn noiseless_torque_is_model_plus_contact() {
    let scenario = with(
        "multi_contact",
        &[("noise.sigma", json!(0.0)), ("noise.mass_scale_error", json!(0.1))],
    );
    let truth = scenario.model.with_mass_scale(1.1).unwrap();
    // the biased model may drive the loop into an abort; the partial trace is enough
    let trace = match run(&scenario) {
        Ok(trace) => trace,
        Err(Error::Aborted { trace, .. }) => *trace,
        Err(e) => panic!("{e}"),
    };
    assert!(trace.ticks.len() > 1000);
    for r in trace.ticks.iter().step_by(7) {
        let expected = truth.inverse_dynamics(&r.q, &r.qd, &r.qdd_true).unwrap()
            + applied_torque(&scenario, r.t, &r.q);
        let scale = expected.amax().max(1.0);
        let gap = (&r.tau_meas - &expected).amax();
        assert!(gap <= 1e-12 * scale, "t = {}: {gap}", r.t);
        assert!((&r.tau_ext - applied_torque(&scenario, r.t, &r.q)).amax() <= 1e-12 * scale);
    }
}

#[test]
fn measurement_noise_has_configured_spread() {
    let scenario = fixture("push_link4");
    let trace = run(&scenario).unwrap();
    let noise: Vec<f64> = trace
        .ticks
        .iter()
        .flat_map(|r| {
            let clean = scenario.model.inverse_dynamics(&r.q, &r.qd, &r.qdd_true).unwrap() + &r.tau_ext;
            (&r.tau_meas - clean).iter().copied().collect::<Vec<_>>()
        })
        .collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let std = (noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (noise.len() - 1) as f64).sqrt();
    assert!((0.045..=0.055).contains(&std), "std {std}");
    assert!(mean.abs() < 3.0 * 0.05 / (noise.len() as f64).sqrt() + 1e-4, "mean {mean}");
}

#[test]
fn different_seeds_give_different_noise() {
    let a = run(&with("free_motion", &[("duration", json!(0.2))])).unwrap();
    let b = run(&with("free_motion", &[("duration", json!(0.2)), ("seed", json!(99))])).unwrap();
    assert_ne!(a.ticks[10].tau_meas, b.ticks[10].tau_meas);
    assert_eq!(a.ticks[10].q, b.ticks[10].q);
}

#[test]
fn export_round_trips() {
    let scenario = fixture("lateral_push");
    let trace = run(&scenario).unwrap();
    let report = metrics(&trace, &scenario.model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_trace(&trace, &report, dir.path()).unwrap();
    for name in [TICKS_FILE, WINDOWS_FILE, DEFORMED_PATH_FILE, METRICS_FILE, PLOT_FILE, RUN_FILE] {
        assert!(files.iter().any(|p| p.ends_with(name)), "{name} missing");
    }

    let loaded = load_trace(dir.path()).unwrap();
    assert_eq!(loaded.ticks, trace.ticks);
    assert_eq!(loaded.windows, trace.windows);
    assert_eq!(loaded.bumps, trace.bumps);
    assert_eq!(loaded.deformed_path, trace.deformed_path);
    assert_eq!(loaded.contacts, trace.contacts);
    assert_eq!(read_windows(dir.path().join(WINDOWS_FILE)).unwrap(), trace.windows);
    assert_eq!(read_metrics(dir.path().join(METRICS_FILE)).unwrap(), report);
    let deformed = read_deformed_path(dir.path().join(DEFORMED_PATH_FILE)).unwrap();
    assert_eq!(deformed.samples, trace.deformed_path);
    assert_eq!(deformed.bumps, trace.bumps);
    assert_eq!(read_plot_data(dir.path().join(PLOT_FILE)).unwrap(), plot_data(&trace));
    // the deformed path export is itself a loadable reference path
    let path = contactplan::planner::ReferencePath::load(dir.path().join(DEFORMED_PATH_FILE)).unwrap();
    assert_eq!(path.to_records(), trace.deformed_path);
}

fn measurements(trace: &RunTrace) -> Vec<Measurement> {
    trace
        .ticks
        .iter()
        .enumerate()
        .map(|(k, r)| Measurement {
            tick: k as u64,
            t: r.t,
            q: r.q.clone(),
            qd: r.qd.clone(),
            tau_meas: r.tau_meas.clone(),
        })
        .collect()
}

#[test]
fn pipeline_reproduces_the_run_from_measurements_alone() {
    let scenario = fixture("push_link4");
    let trace = run(&scenario).unwrap();
    let mut pipeline = Pipeline::new(scenario.model.clone(), scenario.path.clone(), scenario.pipeline_config()).unwrap();
    let mut windows = Vec::new();
    for (m, r) in measurements(&trace).iter().zip(&trace.ticks) {
        let step = pipeline.process(m).unwrap();
        assert_eq!(step.tau_hat, r.tau_hat);
        assert_eq!(step.detector.contact, r.contact);
        assert_eq!(step.s, r.s);
        assert_eq!(step.target, r.target);
        windows.extend(step.window);
    }
    assert_eq!(windows, trace.windows);
}

#[test]
fn outputs_never_depend_on_later_measurements() {
    let scenario = fixture("push_link4");
    let trace = run(&scenario).unwrap();
    let cut = 3200;
    let mut altered = measurements(&trace);
    for m in altered.iter_mut().skip(cut) {
        m.tau_meas.iter_mut().for_each(|t| *t += 50.0);
        m.qd *= 2.0;
    }
    let mut a = Pipeline::new(scenario.model.clone(), scenario.path.clone(), scenario.pipeline_config()).unwrap();
    let mut b = a.clone();
    for (k, (ma, mb)) in measurements(&trace).iter().zip(&altered).enumerate() {
        let (sa, sb) = (a.process(ma).unwrap(), b.process(mb).unwrap());
        if k < cut {
            assert_eq!(sa.tau_hat, sb.tau_hat);
            assert_eq!(sa.q_next, sb.q_next);
            assert_eq!(sa.window, sb.window);
        } else {
            assert_ne!(sa.tau_hat, sb.tau_hat);
            break;
        }
    }
}

#[test]
fn offline_replay_matches_online_estimates() {
    let scenario = fixture("multi_contact");
    let trace = run(&scenario).unwrap();
    let report = metrics(&trace, &scenario.model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_trace(&trace, &report, dir.path()).unwrap();
    let samples = read_residual_csv(dir.path().join(TICKS_FILE)).unwrap();
    let offline = estimate_trace(
        &samples,
        &scenario.model,
        &scenario.detection,
        &scenario.estimation,
        &scenario.planner,
        OfflineMode::Replay,
    )
    .unwrap();
    let online: Vec<_> = trace
        .windows
        .iter()
        .filter_map(|w| w.estimate.clone().map(|e| (w.index, e)))
        .collect();
    assert!(!online.is_empty());
    assert_eq!(offline.len(), online.len());
    for (off, (index, est)) in offline.iter().zip(&online) {
        assert_eq!(off.window, *index);
        assert_eq!(&off.estimate, est);
    }
}

#[test]
fn truncated_trace_reports_the_line() {
    let scenario = with("free_motion", &[("duration", json!(0.05))]);
    let trace = run(&scenario).unwrap();
    let report = metrics(&trace, &scenario.model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_trace(&trace, &report, dir.path()).unwrap();
    let path = dir.path().join(TICKS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // header, 20 full rows, then half of the next one
    let mut cut = lines[..21].join("\n");
    cut.push('\n');
    cut.push_str(&lines[21][..lines[21].len() / 2]);
    std::fs::File::create(&path).unwrap().write_all(cut.as_bytes()).unwrap();
    match read_residual_csv(&path) {
        Err(Error::TraceParse { line, .. }) => assert_eq!(line, 22),
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_trace(dir.path()), Err(Error::TraceParse { line: 22, .. })));
}

#[test]
fn zero_residual_is_unidentifiable() {
    let model = arm7();
    let q = fixture("push_link4").initial_q;
    let samples: Vec<_> = (0..120)
        .map(|k| ResidualSample::new(k as f64 * 1e-3, q.clone(), DVector::zeros(7)))
        .collect();
    let out = estimate_trace(
        &samples,
        &model,
        &Default::default(),
        &EstimationConfig::default(),
        &Default::default(),
        OfflineMode::FixedLink(4),
    )
    .unwrap();
    assert_eq!(out.len(), 3);
    for e in &out {
        assert!(e.estimate.diagnostics.unidentifiable);
        assert_eq!(e.estimate.s_hat, 0.5);
        assert_eq!(e.estimate.force.norm(), 0.0);
    }
    // nothing is ever detected, so a replay yields no estimates at all
    let replay = estimate_trace(&samples, &model, &Default::default(), &EstimationConfig::default(), &Default::default(), OfflineMode::Replay).unwrap();
    assert!(replay.is_empty());
}

#[test]
fn unreachable_goal_aborts_with_partial_trace() {
    let scenario = with(
        "free_motion",
        &[("path", json!({"line": {"goal": [1.6, 0.0, 0.45]}})), ("planner.tip_speed", json!(0.3))],
    );
    match run(&scenario) {
        Err(Error::Aborted { t, trace, .. }) => {
            assert!(t < scenario.duration);
            assert_eq!(trace.ticks.last().unwrap().t, t);
            assert!(trace.aborted.is_some());
        }
        other => panic!("expected an abort, got {:?}", other.map(|t| t.ticks.len())),
    }
}

#[test]
fn scenario_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, value: serde_json::Value| {
        let p = dir.path().join(name);
        std::fs::write(&p, value.to_string()).unwrap();
        p
    };
    let chain = std::fs::read_to_string(fixture_path("arm7")).unwrap();
    std::fs::write(dir.path().join("arm7.json"), chain).unwrap();
    let base = serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(fixture_path("push_link4")).unwrap()).unwrap();

    let mut doc = base.clone();
    doc["planner"] = json!({"alpha": 0.1});
    let err = load_scenario(write("a.json", doc)).unwrap_err().to_string();
    assert!(err.contains("alpha"), "{err}");

    let mut doc = base.clone();
    doc["robot"]["chain"] = json!("missing.json");
    let err = load_scenario(write("b.json", doc)).unwrap_err().to_string();
    assert!(err.contains("missing.json"), "{err}");

    let mut doc = base.clone();
    doc["contacts"][0]["link"] = json!(9);
    let err = load_scenario(write("c.json", doc)).unwrap_err().to_string();
    assert!(err.contains("contacts[0]"), "{err}");

    let mut doc = base;
    doc["path"] = json!([
        {"s": 0.0, "xyz": [0.3, 0.0, 0.5], "quaternion": [1.0, 0.0, 0.0, 0.0]},
        {"s": 1.0, "xyz": [0.3, 0.3, 0.5], "quaternion": [1.0, 0.0, 0.0, 0.0]}
    ]);
    let err = load_scenario(write("d.json", doc)).unwrap_err().to_string();
    assert!(err.contains("initial tip"), "{err}");
}
