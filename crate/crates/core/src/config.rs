//! Scenario files and the builtin scenarios.
//!
//! A scenario file is TOML; see `docs/scenario-format.md` for the grammar.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{make_linear, make_unicycle};
use crate::simulator::{ControllerKind, History, ModelRef, PredictorMethod, Scenario};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 40.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    controller: String,
    predictor: Option<String>,
    dt: Option<f64>,
    horizon: Option<f64>,
    x0: Vec<f64>,
    record_predictors: Option<bool>,
    model: ModelSpec,
    history: Option<HistorySpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelSpec {
    Unicycle(UnicycleSpec),
    Linear(LinearSpec),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnicycleSpec {
    delays: [f64; 2],
    #[serde(default)]
    allow_reversed_delays: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSpec {
    a: Vec<Vec<f64>>,
    /// One row per input channel.
    b: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    delays: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistorySpec {
    constant: Vec<f64>,
}

/// A resolved scenario plus its one-line description.
#[derive(Clone, Debug)]
pub struct ScenarioDef {
    pub scenario: Scenario,
    pub description: String,
}

/// Overrides applied when a scenario is resolved.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub predictor: Option<PredictorMethod>,
}

pub fn parse_controller(s: &str) -> Result<ControllerKind> {
    Ok(match s {
        "predictor_feedback" => ControllerKind::PredictorFeedback,
        "nominal_uncompensated" => ControllerKind::NominalUncompensated,
        "open_loop_zero" => ControllerKind::OpenLoopZero,
        "nominal_delay_free" => ControllerKind::NominalDelayFree,
        other => return Err(Error::config(format!("unknown controller `{other}`"))),
    })
}

pub fn parse_predictor(s: &str) -> Result<PredictorMethod> {
    Ok(match s {
        "generic" => PredictorMethod::Generic,
        "linear-explicit" => PredictorMethod::LinearExplicit,
        other => return Err(Error::config(format!("unknown predictor method `{other}`"))),
    })
}

/// Parses scenario text. Syntax errors carry the 1-based line and column.
pub fn parse_scenario(text: &str, overrides: Overrides) -> Result<ScenarioDef> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    resolve(file, overrides)
}

pub fn load_scenario(path: &Path, overrides: Overrides) -> Result<ScenarioDef> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, overrides)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(format!("{what} must be a non-empty list of equal-length rows")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn resolve(file: ScenarioFile, overrides: Overrides) -> Result<ScenarioDef> {
    let controller = parse_controller(&file.controller)?;
    let model: ModelRef = match file.model {
        ModelSpec::Unicycle(u) => {
            make_unicycle(u.delays[0], u.delays[1], u.allow_reversed_delays)?.into()
        }
        ModelSpec::Linear(l) => {
            let a = rows_to_matrix(&l.a, "a")?;
            let b = l.b.into_iter().map(DVector::from_vec).collect();
            let k = l.k.into_iter().map(DVector::from_vec).collect();
            make_linear(a, b, k, l.delays)?.into()
        }
    };
    let m = model.system().m();
    let mut scenario = Scenario::new(
        file.name,
        model,
        controller,
        file.x0,
        overrides.step.or(file.dt).unwrap_or(DEFAULT_STEP),
        overrides.horizon.or(file.horizon).unwrap_or(DEFAULT_HORIZON),
    );
    if let Some(p) = overrides.predictor {
        scenario.predictor = p;
    } else if let Some(p) = &file.predictor {
        scenario.predictor = parse_predictor(p)?;
    }
    if let Some(r) = file.record_predictors {
        scenario.record_predictors = r;
    }
    if let Some(h) = file.history {
        if h.constant.len() != m {
            return Err(Error::config(format!(
                "history has {} values for {m} inputs",
                h.constant.len()
            )));
        }
        scenario.histories = h.constant.into_iter().map(History::Constant).collect();
    }
    scenario.validate()?;
    Ok(ScenarioDef {
        scenario,
        description: file.description,
    })
}

pub const BUILTIN_NAMES: [&str; 5] = [
    "unicycle-compensated",
    "unicycle-uncompensated",
    "unicycle-nominal-delayfree",
    "linear-demo",
    "footnote-escape",
];

pub fn builtin_description(name: &str) -> Option<&'static str> {
    Some(match name {
        "unicycle-compensated" => "unicycle, delays 0.5/1.0, predictor feedback",
        "unicycle-uncompensated" => "unicycle, delays 0.5/1.0, nominal laws without prediction",
        "unicycle-nominal-delayfree" => "unicycle closed loop with no input delay",
        "linear-demo" => "double integrator, two inputs, delays 0.25/0.5, predictor feedback",
        "footnote-escape" => "unicycle with reversed delays 1.0/dt, finite escape without prediction",
        _ => return None,
    })
}

/// Builds a builtin scenario; the footnote-escape delays follow the step.
pub fn builtin(name: &str, overrides: Overrides) -> Result<ScenarioDef> {
    let description = builtin_description(name)
        .ok_or_else(|| Error::config(format!("unknown scenario `{name}`")))?
        .to_string();
    let step = overrides.step.unwrap_or(DEFAULT_STEP);
    let horizon = overrides.horizon;
    let unicycle = |controller| -> Result<Scenario> {
        let model = make_unicycle(0.5, 1.0, false)?;
        Ok(Scenario::new(
            name,
            model,
            controller,
            vec![0.5; 3],
            step,
            horizon.unwrap_or(DEFAULT_HORIZON),
        ))
    };
    let mut scenario = match name {
        "unicycle-compensated" => unicycle(ControllerKind::PredictorFeedback)?,
        "unicycle-uncompensated" => unicycle(ControllerKind::NominalUncompensated)?,
        "unicycle-nominal-delayfree" => unicycle(ControllerKind::NominalDelayFree)?,
        "linear-demo" => {
            let mut s = Scenario::new(
                name,
                linear_demo_model(&[0.25, 0.5])?,
                ControllerKind::PredictorFeedback,
                vec![1.0, 0.0],
                step,
                horizon.unwrap_or(DEFAULT_HORIZON),
            );
            s.predictor = PredictorMethod::LinearExplicit;
            s
        }
        _ => Scenario::new(
            name,
            make_unicycle(1.0, step, true)?,
            ControllerKind::NominalUncompensated,
            vec![-12.0, -1.0, 0.0],
            step,
            horizon.unwrap_or(1.0),
        ),
    };
    if let Some(p) = overrides.predictor {
        scenario.predictor = p;
    }
    scenario.validate()?;
    Ok(ScenarioDef {
        scenario,
        description,
    })
}

/// Double integrator `x1' = x2 + u2, x2' = u1` with gains placing the
/// compensated spectrum at `{-1, -3}`.
pub fn linear_demo_model(delays: &[f64]) -> Result<crate::model::LinearModel> {
    make_linear(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 0.0])],
        vec![DVector::from_vec(vec![-2.0, -3.0]), DVector::from_vec(vec![-1.0, -1.0])],
        delays.to_vec(),
    )
}

/// Builtins followed by the `*.toml` scenarios in `dir`, sorted by file name.
pub fn list_scenarios(dir: Option<&Path>) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = BUILTIN_NAMES
        .iter()
        .map(|n| (n.to_string(), builtin_description(n).unwrap_or_default().to_string()))
        .collect();
    if let Some(dir) = dir {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            let def = load_scenario(&path, Overrides::default())?;
            out.push((def.scenario.name, def.description));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
name = "lti"
description = "two-input double integrator"
controller = "predictor_feedback"
predictor = "linear-explicit"
dt = 0.01
horizon = 2.0
x0 = [1.0, 0.0]

[model]
kind = "linear"
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0, 1.0], [1.0, 0.0]]
k = [[-2.0, -3.0], [-1.0, -1.0]]
delays = [0.25, 0.5]

[history]
constant = [0.1, -0.2]
"#;

    #[test]
    fn linear_file_resolves() {
        let def = parse_scenario(LINEAR, Overrides::default()).unwrap();
        let s = &def.scenario;
        assert_eq!(s.name, "lti");
        assert_eq!(def.description, "two-input double integrator");
        assert_eq!(s.predictor, PredictorMethod::LinearExplicit);
        assert_eq!((s.step, s.horizon), (0.01, 2.0));
        let lin = s.model.linear().unwrap();
        assert_eq!(lin.a()[(0, 1)], 1.0);
        assert_eq!(lin.b()[1].as_slice(), &[1.0, 0.0]);
        assert_eq!(s.histories[1].eval(-0.3), -0.2);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            step: Some(0.005),
            horizon: Some(1.0),
            predictor: Some(PredictorMethod::Generic),
        };
        let s = parse_scenario(LINEAR, o).unwrap().scenario;
        assert_eq!((s.step, s.horizon, s.predictor), (0.005, 1.0, PredictorMethod::Generic));
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = "name = \"x\"\ncontroller = \n";
        match parse_scenario(text, Overrides::default()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 14)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        let extra = LINEAR.replace("horizon = 2.0", "horizon = 2.0\nseed = 3");
        assert!(matches!(parse_scenario(&extra, Overrides::default()), Err(Error::Parse { .. })));
        let bad = LINEAR.replace("predictor_feedback", "smith");
        assert!(matches!(parse_scenario(&bad, Overrides::default()), Err(Error::Config(_))));
        let ragged = LINEAR.replace("[0.0, 0.0]]\nb", "[0.0]]\nb");
        assert!(parse_scenario(&ragged, Overrides::default()).is_err());
    }

    #[test]
    fn delay_off_grid_is_rejected() {
        let text = LINEAR.replace("dt = 0.01", "dt = 0.3");
        assert!(matches!(parse_scenario(&text, Overrides::default()), Err(Error::Config(_))));
    }

    #[test]
    fn unicycle_order_flag() {
        let text = r#"
name = "rev"
controller = "nominal_uncompensated"
x0 = [0.0, 0.0, 0.0]
[model]
kind = "unicycle"
delays = [1.0, 0.5]
"#;
        assert!(parse_scenario(text, Overrides::default()).is_err());
        let ok = text.replace("[1.0, 0.5]", "[1.0, 0.5]\nallow_reversed_delays = true");
        let s = parse_scenario(&ok, Overrides::default()).unwrap().scenario;
        assert_eq!(s.model.system().delays(), &[1.0, 0.5]);
        assert_eq!((s.step, s.horizon), (DEFAULT_STEP, DEFAULT_HORIZON));
    }

    #[test]
    fn every_builtin_resolves() {
        for name in BUILTIN_NAMES {
            let def = builtin(name, Overrides::default()).unwrap();
            assert_eq!(def.scenario.name, name);
        }
        let esc = builtin("footnote-escape", Overrides { step: Some(0.01), ..Default::default() })
            .unwrap()
            .scenario;
        assert_eq!(esc.model.system().delays(), &[1.0, 0.01]);
        assert!(builtin("nope", Overrides::default()).is_err());
    }

    #[test]
    fn listing_includes_user_files() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(list_scenarios(Some(dir.path())).unwrap().len(), 5);
        std::fs::write(dir.path().join("lti.toml"), LINEAR).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "skip").unwrap();
        let all = list_scenarios(Some(dir.path())).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all[5].0, "lti");
        assert_eq!(list_scenarios(None).unwrap().len(), 5);
    }
}
