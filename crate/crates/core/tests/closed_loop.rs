use lagstep::config::{load_scenario, Overrides};
use lagstep::{
    make_unicycle, simulate, ControllerKind, DelayLine, History, Scenario, SimTrace, Status,
};

fn unicycle(controller: ControllerKind, step: f64, horizon: f64) -> SimTrace {
    let model = make_unicycle(0.5, 1.0, false).unwrap();
    simulate(&Scenario::new("u", model, controller, vec![0.5; 3], step, horizon)).unwrap()
}

#[test]
fn csv_values_round_trip_exactly() {
    let trace = unicycle(ControllerKind::PredictorFeedback, 1e-2, 2.0);
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 3 + 2 + 6);
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], trace.time(k));
        assert_eq!(&row[1..4], trace.state(k));
        assert_eq!(row[4..6], trace.controls(k)[..]);
        assert_eq!(&row[6..9], trace.predictor(k, 0).unwrap());
        assert_eq!(&row[9..12], trace.predictor(k, 1).unwrap());
    }
}

#[test]
fn compensated_inputs_reach_plant_at_their_delays() {
    let trace = unicycle(ControllerKind::PredictorFeedback, 1e-2, 3.0);
    // the input applied at t is the control issued at t - D_i
    for c in 0..2 {
        let lag = trace.delay_nodes(c);
        for k in lag..trace.len() {
            let lines = trace.lines_at(k).unwrap();
            assert_eq!(lines[c].node(0), trace.control(k - lag, c));
        }
    }
}

#[test]
fn open_loop_at_origin_stays_put() {
    let trace = unicycle(ControllerKind::OpenLoopZero, 1e-2, 5.0);
    let model = make_unicycle(0.5, 1.0, false).unwrap();
    let s = Scenario::new("z", model, ControllerKind::OpenLoopZero, vec![0.0; 3], 1e-2, 5.0);
    let zero = simulate(&s).unwrap();
    assert!(zero.metrics().iter().all(|r| r.xi == 0.0 && r.gamma == 0.0));
    // with zero inputs the unicycle does not move at all
    assert_eq!(trace.final_state().unwrap(), &[0.5, 0.5, 0.5]);
}

#[test]
fn held_history_drives_the_plant_before_the_first_control_arrives() {
    let model = make_unicycle(0.5, 1.0, false).unwrap();
    let mut s = Scenario::new(
        "h",
        model,
        ControllerKind::PredictorFeedback,
        vec![0.0; 3],
        1e-2,
        0.5,
    );
    s.histories = vec![History::Constant(0.2), History::Zero];
    let trace = simulate(&s).unwrap();
    assert_eq!(trace.status(), Status::Completed);
    // heading integrates the held turn rate over [0, D_1]
    let x3 = trace.final_state().unwrap()[2];
    assert!((x3 - 0.1).abs() < 1e-12, "{x3}");
}

#[test]
fn scenario_files_in_the_repository_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let def = load_scenario(&path, Overrides::default()).unwrap();
            assert!(!def.description.is_empty());
            count += 1;
        }
    }
    assert!(count >= 2);
}

#[test]
fn rebuilt_lines_sample_the_stored_inputs() {
    let trace = unicycle(ControllerKind::PredictorFeedback, 1e-2, 3.0);
    let k = 200;
    let lines: Vec<DelayLine> = trace.lines_at(k).unwrap();
    for (c, line) in lines.iter().enumerate() {
        assert!((line.now() - trace.time(k)).abs() < 1e-12);
        assert_eq!(line.sample(trace.time(k)).unwrap(), trace.control(k, c));
    }
}
