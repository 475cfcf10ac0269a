//! Fixed-step closed-loop simulation of the delayed plant.
//!
//! Each step computes the controls at `t_k`, writes them into the delay lines,
//! records the row and advances the plant with one RK4 step whose stage inputs
//! come from the lines (linear between stored samples).

use std::fmt;
use std::sync::Arc;

use log::{debug, warn};

use crate::delay_line::{grid_intervals, DelayLine};
use crate::error::{Error, Result};
use crate::integrate::{stage_value, within, Rk4};
use crate::model::{LinearModel, SystemModel};
use crate::predictor::{
    compute_predictors, compute_predictors_linear, PredictorResult, DIVERGENCE_LIMIT,
};
use crate::trace::{DivergenceCause, SimTrace, Status};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerKind {
    /// `U_i(t) = kappa_i(t + D_i, P_i(t))`.
    PredictorFeedback,
    /// `U_i(t) = kappa_i(t, X(t))`, ignoring the delays.
    NominalUncompensated,
    OpenLoopZero,
    /// The undelayed closed loop `X' = f(X, kappa(t, X))`.
    NominalDelayFree,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::PredictorFeedback => "predictor_feedback",
            ControllerKind::NominalUncompensated => "nominal_uncompensated",
            ControllerKind::OpenLoopZero => "open_loop_zero",
            ControllerKind::NominalDelayFree => "nominal_delay_free",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PredictorMethod {
    #[default]
    Generic,
    /// Matrix-exponential predictors; linear models only.
    LinearExplicit,
}

impl PredictorMethod {
    pub fn name(self) -> &'static str {
        match self {
            PredictorMethod::Generic => "generic",
            PredictorMethod::LinearExplicit => "linear-explicit",
        }
    }
}

#[derive(Clone, Debug)]
pub enum ModelRef {
    General(SystemModel),
    Linear(LinearModel),
}

impl ModelRef {
    pub fn system(&self) -> &SystemModel {
        match self {
            ModelRef::General(m) => m,
            ModelRef::Linear(l) => l.system(),
        }
    }

    pub fn linear(&self) -> Option<&LinearModel> {
        match self {
            ModelRef::General(_) => None,
            ModelRef::Linear(l) => Some(l),
        }
    }
}

impl From<SystemModel> for ModelRef {
    fn from(m: SystemModel) -> Self {
        ModelRef::General(m)
    }
}

impl From<LinearModel> for ModelRef {
    fn from(l: LinearModel) -> Self {
        ModelRef::Linear(l)
    }
}

/// Input history on `[-D_i, 0]`.
#[derive(Clone, Default)]
pub enum History {
    #[default]
    Zero,
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl History {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            History::Zero => 0.0,
            History::Constant(c) => *c,
            History::Function(f) => f(theta),
        }
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Zero => write!(f, "Zero"),
            History::Constant(c) => write!(f, "Constant({c})"),
            History::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub model: ModelRef,
    pub controller: ControllerKind,
    pub predictor: PredictorMethod,
    pub x0: Vec<f64>,
    pub histories: Vec<History>,
    pub step: f64,
    pub horizon: f64,
    pub record_predictors: bool,
}

impl Scenario {
    /// Zero histories, generic predictors, predictors recorded for predictor feedback.
    pub fn new(
        name: impl Into<String>,
        model: impl Into<ModelRef>,
        controller: ControllerKind,
        x0: Vec<f64>,
        step: f64,
        horizon: f64,
    ) -> Self {
        let model = model.into();
        let m = model.system().m();
        Self {
            name: name.into(),
            model,
            controller,
            predictor: PredictorMethod::Generic,
            x0,
            histories: vec![History::Zero; m],
            step,
            horizon,
            record_predictors: controller == ControllerKind::PredictorFeedback,
        }
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.model.system();
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::config(format!(
                "horizon must be non-negative, got {}",
                self.horizon
            )));
        }
        if self.x0.len() != sys.n() {
            return Err(Error::config(format!(
                "initial state has length {}, model expects {}",
                self.x0.len(),
                sys.n()
            )));
        }
        if let Some(v) = self.x0.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("initial state entry {v} is not finite")));
        }
        if self.histories.len() != sys.m() {
            return Err(Error::config(format!(
                "{} histories for {} inputs",
                self.histories.len(),
                sys.m()
            )));
        }
        if self.controller != ControllerKind::NominalDelayFree {
            for &d in sys.delays() {
                grid_intervals(d, self.step)?;
            }
        }
        if self.predictor == PredictorMethod::LinearExplicit && self.model.linear().is_none() {
            return Err(Error::config("explicit predictors need a linear model"));
        }
        Ok(())
    }
}

/// Predictor profile by the selected method.
pub fn predict(
    model: &ModelRef,
    method: PredictorMethod,
    t: f64,
    x: &[f64],
    lines: &[DelayLine],
) -> Result<PredictorResult> {
    match method {
        PredictorMethod::Generic => compute_predictors(model.system(), t, x, lines),
        PredictorMethod::LinearExplicit => {
            let linear = model
                .linear()
                .ok_or_else(|| Error::config("explicit predictors need a linear model"))?;
            compute_predictors_linear(linear, t, x, lines)
        }
    }
}

/// `U_i(t) = kappa_i(t + D_i, P_i(t))`.
pub fn compute_control(
    model: &ModelRef,
    method: PredictorMethod,
    t: f64,
    x: &[f64],
    lines: &[DelayLine],
) -> Result<Vec<f64>> {
    Ok(predict(model, method, t, x, lines)?.controls().to_vec())
}

pub fn simulate(scenario: &Scenario) -> Result<SimTrace> {
    scenario.validate()?;
    let sys = scenario.model.system();
    if scenario.controller == ControllerKind::NominalDelayFree {
        return run_delay_free(sys, 0.0, &scenario.x0, scenario.steps(), scenario.step);
    }

    let h = scenario.step;
    let n = sys.n();
    let m = sys.m();
    let mut lines = sys
        .delays()
        .iter()
        .zip(&scenario.histories)
        .map(|(&d, hist)| DelayLine::new(d, h, |th| hist.eval(th)))
        .collect::<Result<Vec<_>>>()?;
    let offsets: Vec<usize> = lines.iter().map(DelayLine::intervals).collect();
    let mut trace = SimTrace::empty(0.0, h, n, sys.delays().to_vec(), offsets);
    let steps = scenario.steps();
    for (c, line) in lines.iter().enumerate() {
        trace.inputs[c].reserve(line.intervals() + steps + 1);
        trace.inputs[c].extend(line.samples());
    }
    let mut predictors = scenario
        .record_predictors
        .then(|| Vec::with_capacity((steps + 1) * m * n));

    let mut x = scenario.x0.clone();
    let mut next = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut rk = Rk4::new(n);

    for k in 0..=steps {
        let t = k as f64 * h;
        let feedback = match scenario.controller {
            ControllerKind::PredictorFeedback => None,
            ControllerKind::NominalUncompensated => {
                Some((0..m).map(|c| sys.feedback(c, t, &x)).collect::<Vec<_>>())
            }
            _ => Some(vec![0.0; m]),
        };
        if let Some(values) = &feedback {
            if values.iter().any(|v| !v.is_finite()) {
                trace.status = Status::Diverged {
                    t,
                    cause: DivergenceCause::State,
                };
                break;
            }
            for (line, &v) in lines.iter_mut().zip(values) {
                line.commit(v)?;
            }
        }
        let needs_profile = feedback.is_none() || predictors.is_some();
        let profile = if needs_profile {
            match predict(&scenario.model, scenario.predictor, t, &x, &lines) {
                Ok(res) => Some(res),
                Err(Error::PredictorDivergence { x: pos, .. }) => {
                    debug!("{}: predictor diverged at t = {t}, x = {pos}", scenario.name);
                    trace.status = Status::Diverged {
                        t,
                        cause: DivergenceCause::Predictor { x: pos },
                    };
                    break;
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let controls = match (&feedback, &profile) {
            (Some(values), _) => values.clone(),
            (None, Some(res)) => {
                for (line, &v) in lines.iter_mut().zip(res.controls()) {
                    line.commit(v)?;
                }
                res.controls().to_vec()
            }
            (None, None) => unreachable!("predictor feedback always computes a profile"),
        };

        record_controls(&mut trace, k, &controls);
        trace.states.extend_from_slice(&x);
        if let (Some(store), Some(res)) = (predictors.as_mut(), &profile) {
            for c in 0..m {
                store.extend_from_slice(res.predictor(c));
            }
        }
        if k == steps {
            break;
        }

        rk.step(&x, h, &mut next, |stage, y, dy| {
            for (c, line) in lines.iter().enumerate() {
                let (a, b) = line.interval(0);
                u[c] = stage_value(stage, a, b);
            }
            sys.rhs(y, &u, dy);
        });
        if !within(&next, DIVERGENCE_LIMIT) {
            trace.status = Status::Diverged {
                t: (k + 1) as f64 * h,
                cause: DivergenceCause::State,
            };
            break;
        }
        std::mem::swap(&mut x, &mut next);
        for line in &mut lines {
            line.push_pending();
        }
    }

    trace.predictors = predictors.map(|mut p| {
        p.truncate(trace.len() * m * n);
        p
    });
    Ok(trace)
}

fn record_controls(trace: &mut SimTrace, k: usize, controls: &[f64]) {
    for (c, &v) in controls.iter().enumerate() {
        let signal = &mut trace.inputs[c];
        if k == 0 {
            let idx = signal.len() - 1;
            let last = signal[idx];
            if last != v {
                warn!(
                    "input {} starts at {v} but its history ends at {last}; \
                     the initial data are not compatible with the feedback",
                    c + 1
                );
                trace.jumps[c] = Some((idx, last));
            }
            signal[idx] = v;
        } else {
            signal.push(v);
        }
    }
}

/// Same scenario under `U_i(t) = kappa_i(t, X(t))`.
pub fn simulate_uncompensated(scenario: &Scenario) -> Result<SimTrace> {
    let mut s = scenario.clone();
    s.controller = ControllerKind::NominalUncompensated;
    s.record_predictors = false;
    simulate(&s)
}

/// Undelayed closed loop `X' = f(X, kappa(t, X))` from `(t0, x0)` over `duration`.
pub fn simulate_nominal_from(
    model: &SystemModel,
    t0: f64,
    x0: &[f64],
    duration: f64,
    step: f64,
) -> Result<SimTrace> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(format!("step must be positive, got {step}")));
    }
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::config(format!("duration must be non-negative, got {duration}")));
    }
    if x0.len() != model.n() {
        return Err(Error::config("initial state dimension mismatch"));
    }
    run_delay_free(model, t0, x0, (duration / step).round() as usize, step)
}

fn run_delay_free(
    model: &SystemModel,
    t0: f64,
    x0: &[f64],
    steps: usize,
    h: f64,
) -> Result<SimTrace> {
    let n = model.n();
    let m = model.m();
    let mut trace = SimTrace::empty(t0, h, n, vec![0.0; m], vec![0; m]);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut rk = Rk4::new(n);
    for k in 0..=steps {
        let xk = k as f64 * h;
        for c in 0..m {
            trace.inputs[c].push(model.feedback(c, t0 + xk, &x));
        }
        trace.states.extend_from_slice(&x);
        if k == steps {
            break;
        }
        rk.step(&x, h, &mut next, |stage, y, dy| {
            for (c, uc) in u.iter_mut().enumerate() {
                *uc = model.feedback(c, t0 + (xk + stage.fraction() * h), y);
            }
            model.rhs(y, &u, dy);
        });
        if !within(&next, DIVERGENCE_LIMIT) {
            trace.status = Status::Diverged {
                t: t0 + (k + 1) as f64 * h,
                cause: DivergenceCause::State,
            };
            break;
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(trace)
}
