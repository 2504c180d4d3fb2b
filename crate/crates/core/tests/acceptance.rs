//! Acceptance suite: one line per criterion, then a single verdict.
//!
//! Run with `cargo test -p cobench-core --test acceptance -- --nocapture`.

use std::f64::consts::{LN_2, PI};

use cobench_core::battery::{
    generate_acquisition_battery, AcquisitionSpec, AcquisitionTask, BlockLayout, TaskClass,
    TrialTask,
};
use cobench_core::metrics::{
    explorability_score, learnability_fit, movement_time, timing_deviation, AcquisitionTarget,
    GridAxis, MovementOutcome,
};
use cobench_core::motor::path::{steering_difficulty, steering_integral_quadrature, PathSpec};
use cobench_core::motor::{
    fit_linear_law, fit_meyer, fitts_id, meyer_time, LawParams, Observation,
};
use cobench_core::session::{
    comparison_report, Body, EventPayload, FitModel, Message, MessageKind, ReportOptions,
    SessionRecord, SessionStatus,
};
use cobench_core::sim::{
    simulate_acquisition, simulate_plan, simulate_rhythm, simulate_steering, PerformerParams,
    SimConfig, SteeringConfig,
};
use cobench_core::taxonomy::{
    build_chart, match_device_to_task, Axis, DeviceDescriptor, Geometry, Property, Resolution,
    SenseDimension, Structure, TaskStructure, Verdict,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

fn fitts_table() -> Outcome {
    let mut worst = 0.0f64;
    for (ratio, bits) in [(1.0, 1.0), (3.0, 2.0), (7.0, 3.0), (15.0, 4.0)] {
        let id = fitts_id(ratio * 10.0, 10.0).map_err(|e| e.to_string())?;
        worst = worst.max((id - bits).abs());
    }
    check(worst < 1e-12, format!("max |id - bits| = {worst:e}"))
}

fn steering_integral() -> Outcome {
    let cases = [
        (PathSpec::straight_tunnel(100.0, 5.0), 20.0),
        (PathSpec::circular_tunnel(50.0, 5.0), 2.0 * PI * 50.0 / 5.0),
        (
            PathSpec::tapered_tunnel(100.0, 10.0, 20.0),
            100.0 / 10.0 * LN_2,
        ),
    ];
    let mut worst = 0.0f64;
    for (path, exact) in &cases {
        let q = steering_integral_quadrature(path).map_err(|e| e.to_string())?;
        worst = worst.max(rel(q, *exact));
    }
    check(worst < 1e-6, format!("max relative error = {worst:e}"))
}

/// Per-trial movement times from simulated acquisition, as Fitts observations.
fn acquisition_observations(
    cfg: &SimConfig,
    conditions: &[(f64, f64)],
) -> Result<Vec<Observation>, String> {
    let mut obs = Vec::new();
    for (i, &(a, w)) in conditions.iter().enumerate() {
        let cfg = SimConfig {
            seed: cfg.seed + i as u64,
            ..*cfg
        };
        let target = AcquisitionTarget::Interval {
            lo: a - w / 2.0,
            hi: a + w / 2.0,
        };
        let id = fitts_id(a, w).map_err(|e| e.to_string())?;
        for trial in simulate_acquisition(&cfg, a, w).map_err(|e| e.to_string())? {
            match movement_time(&trial, &target) {
                MovementOutcome::Selected { mt, .. } => obs.push(Observation::new(id, mt)),
                MovementOutcome::Timeout => {
                    return Err(format!("trial {} timed out", trial.trial_id))
                }
            }
        }
    }
    Ok(obs)
}

fn recovery_noiseless() -> Outcome {
    let cfg = SimConfig {
        params: LawParams::linear(0.2, 0.1),
        noise_sd: 0.0,
        seed: 1,
        repetitions: 20,
        sample_rate: 125.0,
    };
    let conditions = [(10.0, 10.0), (30.0, 10.0), (70.0, 10.0), (150.0, 10.0)];
    let fit =
        fit_linear_law(&acquisition_observations(&cfg, &conditions)?).map_err(|e| e.to_string())?;
    let ip = fit.ip.unwrap_or(f64::NAN);
    check(
        (fit.params.a - 0.2).abs() < 1e-9
            && (fit.params.b - 0.1).abs() < 1e-9
            && (fit.r_squared - 1.0).abs() < 1e-12
            && (ip - 10.0).abs() < 1e-9,
        format!(
            "a = {:.12}, b = {:.12}, R2 = {:.12}, ip = {ip:.9}, points = {}",
            fit.params.a, fit.params.b, fit.r_squared, fit.n_points
        ),
    )
}

fn recovery_noisy() -> Outcome {
    let cfg = SimConfig {
        params: LawParams::linear(0.2, 0.1),
        noise_sd: 0.02,
        seed: 42,
        repetitions: 50,
        sample_rate: 125.0,
    };
    let conditions = [
        (10.0, 10.0),
        (30.0, 10.0),
        (70.0, 10.0),
        (150.0, 10.0),
        (310.0, 10.0),
    ];
    let fit =
        fit_linear_law(&acquisition_observations(&cfg, &conditions)?).map_err(|e| e.to_string())?;
    check(
        rel(fit.params.b, 0.1) <= 0.10 && fit.r_squared > 0.9,
        format!("b = {:.5}, R2 = {:.4}", fit.params.b, fit.r_squared),
    )
}

fn meyer_recovery() -> Outcome {
    let truth = LawParams::meyer(0.15, 0.05, 3);
    let ratios = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let obs = ratios
        .iter()
        .map(|&r| Ok(Observation::new(r, meyer_time(&truth, r)?)))
        .collect::<Result<Vec<_>, cobench_core::motor::ModelError>>()
        .map_err(|e| e.to_string())?;
    let fit = fit_meyer(&obs, 10).map_err(|e| e.to_string())?;
    let one = fit_meyer(&obs, 1).map_err(|e| e.to_string())?;
    let linear = fit_linear_law(&obs).map_err(|e| e.to_string())?;
    let same = one.params.a == linear.params.a
        && one.params.b == linear.params.b
        && one.r_squared == linear.r_squared
        && one.sse == linear.sse;
    check(
        fit.params.n == Some(3) && fit.sse < 1e-18 && same,
        format!(
            "n = {:?}, sse = {:e}, n_max=1 equals linear fit: {same}",
            fit.params.n, fit.sse
        ),
    )
}

fn steering_simulation() -> Outcome {
    let tau = 0.05;
    let presets = [
        PathSpec::straight_tunnel(100.0, 5.0),
        PathSpec::circular_tunnel(50.0, 5.0),
        PathSpec::tapered_tunnel(100.0, 10.0, 20.0),
    ];
    let mut worst = 0.0f64;
    for path in &presets {
        let d = steering_difficulty(path).map_err(|e| e.to_string())?;
        let trial = simulate_steering(path, &SteeringConfig::new(tau, 200.0, 3))
            .map_err(|e| e.to_string())?;
        let end = trial.samples.last().ok_or("no samples")?.t - trial.go_signal;
        worst = worst.max(rel(end, tau * d));
    }
    check(worst < 1e-6, format!("max relative error = {worst:e}"))
}

fn timing_metrics() -> Outcome {
    let tempo = 120.0;
    let period = 60.0 / tempo;
    let count = 500;
    let schedule: Vec<f64> = (0..count).map(|k| k as f64 * period).collect();
    let exact = simulate_rhythm(tempo, count, 0.0, 9).map_err(|e| e.to_string())?;
    let r0 = timing_deviation(&exact, &schedule, period).map_err(|e| e.to_string())?;
    let noisy = simulate_rhythm(tempo, count, 0.015, 9).map_err(|e| e.to_string())?;
    let r1 = timing_deviation(&noisy, &schedule, period).map_err(|e| e.to_string())?;
    check(
        r0.mean_asynchrony == 0.0
            && r0.sd_asynchrony == 0.0
            && rel(r1.sd_asynchrony, 0.015) <= 0.20,
        format!(
            "sd=0: mean {:e}, sd {:e}; sd=0.015: recovered {:.5}",
            r0.mean_asynchrony, r0.sd_asynchrony, r1.sd_asynchrony
        ),
    )
}

fn end_to_end_ranking() -> Outcome {
    let plan = generate_acquisition_battery(
        "ribbon",
        &AcquisitionSpec::new(&[10.0, 30.0, 70.0, 150.0], &[10.0]),
        BlockLayout {
            reps_per_block: 5,
            blocks: 2,
            seed: 7,
        },
    )
    .map_err(|e| e.to_string())?;
    let render = || -> Result<(String, Vec<String>, f64, f64), String> {
        let fast = simulate_plan(
            &plan,
            &PerformerParams::new(0.2, 0.1),
            5,
            Some(DeviceDescriptor::new("fast", vec![])),
        )
        .map_err(|e| e.to_string())?;
        let slow = simulate_plan(
            &plan,
            &PerformerParams::new(0.2, 0.2),
            5,
            Some(DeviceDescriptor::new("slow", vec![])),
        )
        .map_err(|e| e.to_string())?;
        let logs = [slow.export_log(), fast.export_log()];
        let sessions = logs
            .iter()
            .map(|l| SessionRecord::import_log(l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let options = ReportOptions {
            model: FitModel::Fitts,
            grid: None,
        };
        let report = comparison_report(&sessions, &options).map_err(|e| e.to_string())?;
        let ip = |d: &str| {
            report
                .cell(d, TaskClass::Acquisition)
                .and_then(|c| c.ip)
                .unwrap_or(f64::NAN)
        };
        let ranking = report
            .rankings
            .iter()
            .find(|r| r.class == TaskClass::Acquisition)
            .map(|r| r.devices.clone())
            .unwrap_or_default();
        Ok((
            report.render_text() + &report.to_json(),
            ranking,
            ip("fast"),
            ip("slow"),
        ))
    };
    let (first, ranking, fast, slow) = render()?;
    let (second, ..) = render()?;
    check(
        (fast - 10.0).abs() < 1e-9
            && (slow - 5.0).abs() < 1e-9
            && ranking == ["fast", "slow"]
            && first == second,
        format!(
            "ip {fast:.9} vs {slow:.9}, ranking {ranking:?}, byte-identical: {}",
            first == second
        ),
    )
}

fn log_roundtrip() -> Outcome {
    let plan = generate_acquisition_battery(
        "mouse",
        &AcquisitionSpec::new(&[30.0], &[10.0]),
        BlockLayout {
            reps_per_block: 2,
            blocks: 1,
            seed: 3,
        },
    )
    .map_err(|e| e.to_string())?;
    let target = match &plan.trial(0).ok_or("trial 0")?.task {
        TrialTask::Acquisition(AcquisitionTask { amplitude, .. }) => *amplitude,
        _ => return Err("unexpected task".into()),
    };
    let mut s = SessionRecord::new(
        "rt",
        DeviceDescriptor::new("mouse", vec![]),
        plan,
        Some("x to pitch".into()),
    );
    let m = |t: f64, trial: u32, body: Body| Message::new(t, "rt", Some(trial), body);
    let script = [
        m(0.0, 0, Body::TrialStart { go_signal: 0.0 }),
        m(0.1, 0, Body::Sample { values: vec![0.1] }),
        m(
            0.15,
            0,
            Body::Event(EventPayload::NoteOn {
                pitch: 60.0,
                velocity: 0.8,
            }),
        ),
        m(
            0.2,
            0,
            Body::Sample {
                values: vec![1.0 / 3.0],
            },
        ),
        m(0.25, 0, Body::Event(EventPayload::NoteOff { pitch: 60.0 })),
        m(
            0.3,
            0,
            Body::Event(EventPayload::Selection {
                position: vec![target],
            }),
        ),
        m(0.3, 0, Body::TrialEnd { aborted: false }),
        m(0.5, 1, Body::TrialStart { go_signal: 0.5 }),
        m(
            0.6,
            1,
            Body::Sample {
                values: vec![2.5e-7],
            },
        ),
        m(0.7, 1, Body::TrialEnd { aborted: true }),
    ];
    for msg in &script {
        s.ingest(msg).map_err(|e| e.to_string())?;
        if msg.kind() == MessageKind::TrialEnd {
            s.finalize_trial(msg.trial.unwrap_or_default())
                .map_err(|e| e.to_string())?;
        }
    }
    s.record_protocol_error(0.8, None, "sample before trial_start");
    s.close(1.0).map_err(|e| e.to_string())?;

    let log = s.export_log();
    let back = SessionRecord::import_log(&log).map_err(|e| e.to_string())?;
    let again = back.export_log();
    let kinds: Vec<MessageKind> = back.messages().iter().map(Message::kind).collect();
    let all = [
        MessageKind::Hello,
        MessageKind::Plan,
        MessageKind::TrialStart,
        MessageKind::Sample,
        MessageKind::Event,
        MessageKind::TrialEnd,
        MessageKind::Ack,
        MessageKind::ProtocolError,
        MessageKind::Close,
    ];
    let covered = all.iter().all(|k| kinds.contains(k));
    check(
        back == s && again == log && covered && back.status == SessionStatus::Closed,
        format!(
            "{} lines, identity: {}, byte-identical: {}, every kind present: {covered}",
            log.lines().count(),
            back == s,
            again == log
        ),
    )
}

fn dim(axis: Axis, group: &str) -> SenseDimension {
    SenseDimension::new(
        Property::Position,
        Geometry::Linear,
        axis,
        Resolution::Continuous,
        group,
    )
}

fn taxonomy() -> Outcome {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/");
    let read = |name: &str| {
        std::fs::read_to_string(format!("{dir}{name}")).map_err(|e| format!("{name}: {e}"))
    };
    let devices = ["ribbon.toml", "knob-box.toml"]
        .iter()
        .map(|n| DeviceDescriptor::from_toml(&read(n)?).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, String>>()?;
    let chart = build_chart(&devices).map_err(|e| e.to_string())?;
    let golden = chart.render_text() == read("chart.golden.txt")?
        && chart.render_svg() == read("chart.golden.svg")?;

    let grouped = DeviceDescriptor::new("grouped", vec![dim(Axis::X, "g"), dim(Axis::Y, "g")]);
    let ungrouped = DeviceDescriptor::new("ungrouped", vec![dim(Axis::X, "a"), dim(Axis::Y, "b")]);
    let task = |structure| TaskStructure {
        attributes: vec!["pitch".into(), "loudness".into()],
        structure,
    };
    let verdict = |d: &DeviceDescriptor, s| match_device_to_task(d, &task(s)).map(|r| r.verdict);
    let table = [
        (verdict(&grouped, Structure::Integral), Verdict::Match),
        (verdict(&ungrouped, Structure::Integral), Verdict::Mismatch),
        (verdict(&grouped, Structure::Separable), Verdict::Mismatch),
    ];
    let passed = table
        .iter()
        .filter(|(got, want)| got.as_ref().ok() == Some(want))
        .count();
    check(
        golden && passed == table.len(),
        format!(
            "golden stable: {golden}, truth table {passed}/{}",
            table.len()
        ),
    )
}

fn learnability_explorability() -> Outcome {
    let blocks: Vec<f64> = (1..=8).map(|k| 2.0 * (k as f64).powf(-0.3)).collect();
    let fit = learnability_fit(&blocks).map_err(|e| e.to_string())?;
    let samples: Vec<Vec<f64>> = (0..16)
        .flat_map(|cell| {
            let (i, j) = ((cell % 4) as f64, (cell / 4) as f64);
            (0..3).map(move |_| vec![i + 0.5, j + 0.5])
        })
        .collect();
    let axis = GridAxis {
        lo: 0.0,
        hi: 4.0,
        bins: 4,
    };
    let explore = explorability_score(&samples, &[axis, axis]).map_err(|e| e.to_string())?;
    check(
        (fit.t1 - 2.0).abs() < 1e-9
            && (fit.alpha - 0.3).abs() < 1e-9
            && (explore.entropy - 4.0).abs() < 1e-12,
        format!(
            "T1 = {:.12}, alpha = {:.12}, entropy = {:.12} bits",
            fit.t1, fit.alpha, explore.entropy
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("fitts index table", fitts_table),
        ("steering integral closed forms", steering_integral),
        ("parameter recovery, noiseless", recovery_noiseless),
        ("parameter recovery, noisy", recovery_noisy),
        ("meyer recovery", meyer_recovery),
        ("steering simulation consistency", steering_simulation),
        ("timing metrics", timing_metrics),
        ("end-to-end ranking", end_to_end_ranking),
        ("log roundtrip", log_roundtrip),
        ("taxonomy chart and matching", taxonomy),
        ("learnability and explorability", learnability_explorability),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
