//! Runs a scenario and writes `trace.csv`, `metrics.csv` and `verify.txt`
//! under `<out>/<scenario name>/`.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::config::{builtin, load_scenario, Overrides, ScenarioDef};
use crate::error::Result;
use crate::model::norm;
use crate::simulator::{simulate, ControllerKind, Scenario};
use crate::trace::{DivergenceCause, SimTrace, Status};
use crate::verification::{
    compensation_error, decay_fit, inverse_transform, predictor_consistency, snapshot_from_trace,
    Report,
};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LAGSTEP_OUT";

/// Rows sampled for the transform checks in a verification report.
const TRANSFORM_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Builtin(String),
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: Source,
    pub out_root: PathBuf,
    pub overrides: Overrides,
    /// Adds consistency, compensation and transform checks to the report.
    pub verify: bool,
    pub expect_divergence: bool,
}

impl RunConfig {
    pub fn new(source: Source, out_root: impl Into<PathBuf>) -> Self {
        Self {
            source,
            out_root: out_root.into(),
            overrides: Overrides::default(),
            verify: false,
            expect_divergence: false,
        }
    }
}

/// `$LAGSTEP_OUT`, or `out` in the working directory.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub status: Status,
    pub report: Report,
    pub expect_divergence: bool,
}

impl RunOutcome {
    /// 0 when completed or when divergence was expected, 2 on divergence.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Completed => 0,
            Status::Diverged { .. } if self.expect_divergence => 0,
            Status::Diverged { .. } => 2,
        }
    }
}

pub fn resolve(source: &Source, overrides: Overrides) -> Result<ScenarioDef> {
    match source {
        Source::Builtin(name) => builtin(name, overrides),
        Source::File(path) => load_scenario(path, overrides),
    }
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let def = resolve(&config.source, config.overrides)?;
    let trace = simulate(&def.scenario)?;
    let mut report = report_for(&def, &trace, config.verify)?;
    if config.expect_divergence {
        report.push("expect_divergence", true);
    }

    let dir = config.out_root.join(&def.scenario.name);
    fs::create_dir_all(&dir)?;
    trace.write_csv(File::create(dir.join("trace.csv"))?)?;
    trace.write_metrics_csv(File::create(dir.join("metrics.csv"))?)?;
    fs::write(dir.join("verify.txt"), report.render())?;
    log::info!("{}: {}", def.scenario.name, status_word(trace.status()));

    Ok(RunOutcome {
        name: def.scenario.name.clone(),
        dir,
        status: trace.status(),
        report,
        expect_divergence: config.expect_divergence,
    })
}

fn status_word(status: Status) -> &'static str {
    if status.is_completed() {
        "completed"
    } else {
        "diverged"
    }
}

pub fn report_for(def: &ScenarioDef, trace: &SimTrace, verify: bool) -> Result<Report> {
    let s = &def.scenario;
    let mut r = Report::new();
    r.push("scenario", &s.name);
    if !def.description.is_empty() {
        r.push("description", &def.description);
    }
    r.push("controller", s.controller.name());
    r.push("predictor", s.predictor.name());
    r.push_num("dt", s.step);
    r.push_num("horizon", s.horizon);
    r.push("rows", trace.len());
    r.push("status", status_word(trace.status()));
    if let Status::Diverged { t, cause } = trace.status() {
        r.push_num("diverged_at", t);
        match cause {
            DivergenceCause::State => r.push("divergence_cause", "state"),
            DivergenceCause::Predictor { x } => {
                r.push("divergence_cause", "predictor");
                r.push_num("divergence_position", x);
            }
        }
    }

    let initial = norm(&s.x0);
    r.push_num("initial_state_norm", initial);
    if let Some(last) = trace.final_state() {
        r.push_num("final_time", trace.time(trace.len() - 1));
        r.push_num("final_state_norm", norm(last));
        if initial > 0.0 {
            r.push_num("final_norm_ratio", norm(last) / initial);
            r.push_num("sup_norm_ratio", trace.sup_state_norm() / initial);
        }
    }

    let compensated = s.controller == ControllerKind::PredictorFeedback;
    if let (Some(linear), true) = (s.model.linear(), compensated) {
        let rate = closed_loop_rate(linear.a_closed().last().expect("at least one input"));
        r.push_num("closed_loop_rate", rate);
        if trace.status().is_completed() {
            if let Ok(fit) = decay_fit(trace) {
                r.push_num("decay_lambda", fit.lambda);
                r.push_num("decay_mu", fit.mu);
                r.push("decay_samples", fit.samples);
            }
        }
    }

    if verify {
        verification_entries(&mut r, s, trace)?;
    }
    Ok(r)
}

/// `-max Re(eig)`: the decay rate of the fully compensated linear loop.
pub fn closed_loop_rate(a: &nalgebra::DMatrix<f64>) -> f64 {
    -a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn verification_entries(r: &mut Report, s: &Scenario, trace: &SimTrace) -> Result<()> {
    if trace.has_predictors() {
        for (c, err) in predictor_consistency(trace)?.into_iter().enumerate() {
            r.push_num(format!("predictor_consistency_{}", c + 1), err);
        }
    }
    let sys = s.model.system();
    if s.controller != ControllerKind::PredictorFeedback || trace.is_empty() {
        return Ok(());
    }
    if trace.status().is_completed() {
        r.push_num("compensation_error", compensation_error(trace, sys)?);
    }

    let (mut boundary, mut round_trip, mut w_late) = (0.0f64, 0.0f64, 0.0f64);
    let last = trace.len() - 1;
    for i in 0..TRANSFORM_ROWS {
        let k = i * last / (TRANSFORM_ROWS - 1);
        let snap = snapshot_from_trace(sys, trace, k)?;
        boundary = snap.boundary_residuals().into_iter().fold(boundary, f64::max);
        let rec = inverse_transform(sys, snap.t, &snap.state, &snap.w, snap.step)?;
        round_trip = round_trip.max(rec.residual(&snap.u));
        if snap.t >= sys.max_delay() {
            w_late = snap.w_sup().into_iter().fold(w_late, f64::max);
        }
    }
    r.push("transform_rows", TRANSFORM_ROWS);
    r.push_num("transform_boundary_max", boundary);
    r.push_num("transform_round_trip_max", round_trip);
    r.push_num("transform_w_sup_after_delay", w_late);
    Ok(())
}

/// Reads a `verify.txt` back.
pub fn read_report(dir: &Path) -> Result<Report> {
    Ok(Report::parse(&fs::read_to_string(dir.join("verify.txt"))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::PredictorMethod;

    fn config(name: &str, out: &Path, horizon: f64) -> RunConfig {
        let mut c = RunConfig::new(Source::Builtin(name.into()), out);
        c.overrides = Overrides {
            step: Some(1e-2),
            horizon: Some(horizon),
            predictor: None,
        };
        c
    }

    #[test]
    fn writes_three_files() {
        let out = tempfile::tempdir().unwrap();
        let mut c = config("unicycle-compensated", out.path(), 2.0);
        c.verify = true;
        let res = run(&c).unwrap();
        assert_eq!(res.exit_code(), 0);
        let header = fs::read_to_string(res.dir.join("trace.csv")).unwrap();
        assert!(header.starts_with("t,x1,x2,x3,u1,u2,p1_1,p1_2,p1_3,p2_1,p2_2,p2_3\n"));
        assert!(fs::read_to_string(res.dir.join("metrics.csv"))
            .unwrap()
            .starts_with("t,xi,gamma\n"));
        let report = read_report(&res.dir).unwrap();
        assert_eq!(report.get("status"), Some("completed"));
        assert_eq!(report.get("transform_boundary_max"), Some("0.0000000000000000e0"));
        assert!(report.get("predictor_consistency_2").is_some());
        assert!(report.get("compensation_error").is_some());
    }

    #[test]
    fn divergence_exit_codes() {
        let out = tempfile::tempdir().unwrap();
        let mut c = config("footnote-escape", out.path(), 1.0);
        let res = run(&c).unwrap();
        assert_eq!(res.exit_code(), 2);
        assert_eq!(res.report.get("status"), Some("diverged"));
        assert_eq!(res.report.get("divergence_cause"), Some("state"));
        c.expect_divergence = true;
        assert_eq!(run(&c).unwrap().exit_code(), 0);
    }

    #[test]
    fn linear_demo_reports_positive_rate() {
        let out = tempfile::tempdir().unwrap();
        let res = run(&config("linear-demo", out.path(), 10.0)).unwrap();
        assert_eq!(res.report.get("predictor"), Some(PredictorMethod::LinearExplicit.name()));
        let lambda: f64 = res.report.get("decay_lambda").unwrap().parse().unwrap();
        let rate: f64 = res.report.get("closed_loop_rate").unwrap().parse().unwrap();
        assert!(lambda > 0.0);
        assert!((rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delay_free_run_has_no_transform_entries() {
        let out = tempfile::tempdir().unwrap();
        let mut c = config("unicycle-nominal-delayfree", out.path(), 1.0);
        c.verify = true;
        let res = run(&c).unwrap();
        assert!(res.report.get("transform_rows").is_none());
        assert_eq!(res.report.get("controller"), Some("nominal_delay_free"));
    }

    #[test]
    fn missing_file_is_an_error() {
        let out = tempfile::tempdir().unwrap();
        let c = RunConfig::new(Source::File(out.path().join("none.toml")), out.path());
        assert!(run(&c).is_err());
    }
}
