//! Numerical checks of the identities behind exact delay compensation.
//!
//! * the shifted actuator state `w_i(x) = u_i(x) - kappa_i(t + x, p(x))`
//!   vanishes at `x = D_i` and, once every channel is compensated, everywhere;
//! * the inverse map rebuilds `u` from `w` through the disturbed closed loop;
//! * predictors agree with the states they predict;
//! * after `D_m` the trajectory is the delay-free closed loop;
//! * for linear plants the composite norm decays exponentially.

use std::fmt::Write as _;

use crate::delay_line::{DelayLine, GridSignal, GRID_TOL};
use crate::error::{Error, Result};
use crate::integrate::{stage_value, within, Rk4};
use crate::model::{norm, SystemModel};
use crate::predictor::{compute_predictors, DIVERGENCE_LIMIT};
use crate::simulator::simulate_nominal_from;
use crate::trace::SimTrace;

/// Forward transform of one actuator snapshot.
#[derive(Clone, Debug)]
pub struct TransformSnapshot {
    pub t: f64,
    pub step: f64,
    pub state: Vec<f64>,
    /// Actuator states `u_i(x_j)`.
    pub u: Vec<GridSignal>,
    /// Transformed states `w_i(x_j)`.
    pub w: Vec<GridSignal>,
    /// Predictor profile `p(x_j)` used by the transform.
    pub profile: Vec<Vec<f64>>,
}

impl TransformSnapshot {
    /// `|w_i(D_i)|` per channel.
    pub fn boundary_residuals(&self) -> Vec<f64> {
        self.w.iter().map(|w| w.values.last().map_or(0.0, |v| v.abs())).collect()
    }

    /// `sup_x |w_i(x)|` per channel.
    pub fn w_sup(&self) -> Vec<f64> {
        self.w.iter().map(GridSignal::sup_abs).collect()
    }
}

/// Output of the inverse transform.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub u: Vec<GridSignal>,
    /// Profile `pi(x_j)` of the disturbed closed loop.
    pub profile: Vec<Vec<f64>>,
}

impl Reconstruction {
    /// Largest node or left-limit difference against the original actuator states.
    pub fn residual(&self, original: &[GridSignal]) -> f64 {
        self.u
            .iter()
            .zip(original)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

pub fn backstepping_transform(
    model: &SystemModel,
    t: f64,
    x: &[f64],
    lines: &[DelayLine],
) -> Result<TransformSnapshot> {
    if lines.iter().any(DelayLine::is_pending) {
        return Err(Error::config("transform needs settled delay lines"));
    }
    let res = compute_predictors(model, t, x, lines)?;
    let h = res.step();
    let mut u = Vec::with_capacity(lines.len());
    let mut w = Vec::with_capacity(lines.len());
    for (c, line) in lines.iter().enumerate() {
        let window = line.window();
        let shift: Vec<f64> = (0..window.values.len())
            .map(|j| model.feedback(c, t + j as f64 * h, res.p(j)))
            .collect();
        let values = window.values.iter().zip(&shift).map(|(u, k)| u - k).collect();
        let jump = window.jump.map(|(j, left)| (j, left - shift[j]));
        w.push(GridSignal { values, jump });
        u.push(window);
    }
    Ok(TransformSnapshot {
        t,
        step: h,
        state: x.to_vec(),
        u,
        w,
        profile: (0..res.nodes()).map(|j| res.p(j).to_vec()).collect(),
    })
}

/// Rebuilds `u_i = w_i + kappa_i(t + x, pi(x))`, where `pi` solves the closed
/// loop disturbed by `w` (and undisturbed beyond `D_i`).
pub fn inverse_transform(
    model: &SystemModel,
    t: f64,
    x: &[f64],
    w: &[GridSignal],
    step: f64,
) -> Result<Reconstruction> {
    if w.len() != model.m() || x.len() != model.n() {
        return Err(Error::config("dimension mismatch in inverse transform"));
    }
    let mut nodes = Vec::with_capacity(w.len());
    for (c, (sig, &d)) in w.iter().zip(model.delays()).enumerate() {
        let l = sig.intervals();
        if l == 0 || (l as f64 * step - d).abs() > GRID_TOL * d.max(1.0) * l as f64 {
            return Err(Error::config(format!(
                "grid of channel {c} does not cover its delay {d} at step {step}"
            )));
        }
        nodes.push(l);
    }
    let n = model.n();
    let m = model.m();
    let last = nodes.iter().copied().max().unwrap_or(0);
    let h = step;

    let mut profile = Vec::with_capacity(last + 1);
    profile.push(x.to_vec());
    let mut rk = Rk4::new(n);
    let mut next = vec![0.0; n];
    let mut u = vec![0.0; m];
    for j in 0..last {
        let x0 = j as f64 * h;
        rk.step(&profile[j], h, &mut next, |stage, y, dy| {
            let time = t + (x0 + stage.fraction() * h);
            for c in 0..m {
                let disturbance = if nodes[c] > j {
                    stage_value(stage, w[c].start(j), w[c].end(j))
                } else {
                    0.0
                };
                u[c] = disturbance + model.feedback(c, time, y);
            }
            model.rhs(y, &u, dy);
        });
        if !within(&next, DIVERGENCE_LIMIT) {
            return Err(Error::PredictorDivergence { t, x: x0 + h });
        }
        profile.push(next.clone());
    }

    let u = w
        .iter()
        .enumerate()
        .map(|(c, sig)| {
            let shift: Vec<f64> = (0..sig.values.len())
                .map(|j| model.feedback(c, t + j as f64 * h, &profile[j]))
                .collect();
            GridSignal {
                values: sig.values.iter().zip(&shift).map(|(w, k)| w + k).collect(),
                jump: sig.jump.map(|(j, left)| (j, left + shift[j])),
            }
        })
        .collect();
    Ok(Reconstruction { u, profile })
}

/// Forward transform of the actuator state stored in a trace at row `k`.
pub fn snapshot_from_trace(
    model: &SystemModel,
    trace: &SimTrace,
    k: usize,
) -> Result<TransformSnapshot> {
    let lines = trace.lines_at(k)?;
    backstepping_transform(model, trace.time(k), trace.state(k), &lines)
}

/// `max_k |P_i(t_k) - X(t_k + D_i)|` per channel over the recorded rows.
pub fn predictor_consistency(trace: &SimTrace) -> Result<Vec<f64>> {
    if !trace.has_predictors() {
        return Err(Error::config("trace has no recorded predictors"));
    }
    (0..trace.m())
        .map(|c| {
            let lag = trace.delay_nodes(c);
            let mut worst = 0.0f64;
            for k in 0..trace.len().saturating_sub(lag) {
                let p = trace.predictor(k, c).expect("predictors recorded");
                let x = trace.state(k + lag);
                let err = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                worst = worst.max(err.sqrt());
            }
            Ok(worst)
        })
        .collect()
}

/// `sup_{t >= D_m} |X(t) - X_nominal(t)|`, with the nominal delay-free loop
/// started from the trace at `D_m`.
pub fn compensation_error(trace: &SimTrace, model: &SystemModel) -> Result<f64> {
    let k0 = (0..trace.m()).map(|c| trace.delay_nodes(c)).max().unwrap_or(0);
    if trace.len() <= k0 {
        return Err(Error::config("trace does not reach the largest delay"));
    }
    let span = (trace.len() - 1 - k0) as f64 * trace.step();
    let nominal =
        simulate_nominal_from(model, trace.time(k0), trace.state(k0), span, trace.step())?;
    let rows = nominal.len().min(trace.len() - k0);
    Ok((0..rows)
        .map(|k| {
            let a = trace.state(k0 + k);
            let b = nominal.state(k);
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max))
}

/// `Gamma(t) ~ mu * Gamma(0) * exp(-lambda t)` fitted over `t >= D_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub mu: f64,
    pub lambda: f64,
    /// Samples used in the fit.
    pub samples: usize,
}

/// Least-squares line through `(t, ln v)`; returns `(intercept, slope)`.
///
/// Only the prefix of strictly positive values is used.
pub fn fit_log_linear(times: &[f64], values: &[f64]) -> Result<(f64, f64, usize)> {
    let used = values.iter().take_while(|v| **v > 0.0 && v.is_finite()).count();
    if used < 2 {
        return Err(Error::input("fewer than two positive samples to fit"));
    }
    let inv = 1.0 / used as f64;
    let tm = times[..used].iter().sum::<f64>() * inv;
    let ym = values[..used].iter().map(|v| v.ln()).sum::<f64>() * inv;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in times[..used].iter().zip(&values[..used]) {
        sxy += (t - tm) * (v.ln() - ym);
        sxx += (t - tm) * (t - tm);
    }
    if sxx == 0.0 {
        return Err(Error::input("fit needs distinct sample times"));
    }
    let slope = sxy / sxx;
    Ok((ym - slope * tm, slope, used))
}

pub fn decay_fit(trace: &SimTrace) -> Result<DecayFit> {
    let metrics = trace.metrics();
    let first = metrics
        .first()
        .ok_or_else(|| Error::config("empty trace"))?;
    let from = trace.max_delay() - 0.5 * trace.step();
    let window: Vec<_> = metrics.iter().filter(|r| r.t >= from).collect();
    let times: Vec<f64> = window.iter().map(|r| r.t).collect();
    let values: Vec<f64> = window.iter().map(|r| r.gamma).collect();
    let (intercept, slope, samples) = fit_log_linear(&times, &values)?;
    Ok(DecayFit {
        mu: intercept.exp() / first.gamma,
        lambda: -slope,
        samples,
    })
}

/// `key: value` report lines.
#[derive(Clone, Debug, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_num(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.16e}"));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|line| line.split_once(": "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

/// Norm of a state vector, exposed for reports.
pub fn state_norm(x: &[f64]) -> f64 {
    norm(x)
}
