//! Recorded simulation output and its derived norms.

use std::io::{self, Write};

use crate::delay_line::{DelayLine, GridSignal};
use crate::error::{Error, Result};
use crate::model::norm;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivergenceCause {
    /// The plant state left the finite range.
    State,
    /// The predictor march blew up at position `x` before a control existed.
    Predictor { x: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Status {
    Completed,
    Diverged { t: f64, cause: DivergenceCause },
}

impl Status {
    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }
}

/// One row of composite norms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    /// `|X| + sum_i sup_x |u_i(x)|`.
    pub xi: f64,
    /// `|X| + sum_i int_0^{D_i} u_i(x)^2 dx`.
    pub gamma: f64,
}

/// States, inputs and (optionally) predictors on the grid `t_k = start + k * step`.
///
/// Inputs are kept from `-D_i` on, so the full actuator state at any recorded
/// time can be rebuilt with [`SimTrace::lines_at`].
#[derive(Clone, Debug)]
pub struct SimTrace {
    pub(crate) start: f64,
    pub(crate) step: f64,
    pub(crate) n: usize,
    pub(crate) delays: Vec<f64>,
    /// Samples stored before `t_0` for each channel (`D_i / dt`).
    pub(crate) offsets: Vec<usize>,
    pub(crate) states: Vec<f64>,
    pub(crate) inputs: Vec<Vec<f64>>,
    /// Left limit at a stored input index where the signal jumps.
    pub(crate) jumps: Vec<Option<(usize, f64)>>,
    pub(crate) predictors: Option<Vec<f64>>,
    pub(crate) status: Status,
}

impl SimTrace {
    pub(crate) fn empty(start: f64, step: f64, n: usize, delays: Vec<f64>, offsets: Vec<usize>) -> Self {
        let m = delays.len();
        Self {
            start,
            step,
            n,
            delays,
            offsets,
            states: Vec::new(),
            inputs: vec![Vec::new(); m],
            jumps: vec![None; m],
            predictors: None,
            status: Status::Completed,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.delays.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    /// Delays seen by the plant; all zero for delay-free runs.
    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    /// Grid index offset of channel `c`'s delay.
    pub fn delay_nodes(&self, c: usize) -> usize {
        self.offsets[c]
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    pub fn status(&self) -> Status {
        self.status
    }

    /// Number of recorded rows.
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|k| self.state(k))
    }

    /// `U_c(t_k)`.
    pub fn control(&self, k: usize, c: usize) -> f64 {
        self.inputs[c][self.offsets[c] + k]
    }

    pub fn controls(&self, k: usize) -> Vec<f64> {
        (0..self.m()).map(|c| self.control(k, c)).collect()
    }

    /// Input samples of channel `c` from `-D_c` up to the last recorded time.
    pub fn input_signal(&self, c: usize) -> &[f64] {
        &self.inputs[c]
    }

    pub fn has_predictors(&self) -> bool {
        self.predictors.is_some()
    }

    /// `P_c(t_k)` when predictors were recorded.
    pub fn predictor(&self, k: usize, c: usize) -> Option<&[f64]> {
        let block = self.m() * self.n;
        self.predictors
            .as_ref()
            .map(|p| &p[k * block + c * self.n..k * block + (c + 1) * self.n])
    }

    /// Largest state norm over the trace.
    pub fn sup_state_norm(&self) -> f64 {
        (0..self.len())
            .map(|k| norm(self.state(k)))
            .fold(0.0, f64::max)
    }

    /// Row index of time `t` when it lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.start) / self.step;
        let k = pos.round();
        ((pos - k).abs() < 1e-6 && k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }

    /// Window of channel `c` at row `k`: `u_c(x_j, t_k)` for `j = 0..=D_c/dt`.
    pub fn window(&self, k: usize, c: usize) -> GridSignal {
        let len = self.offsets[c];
        let values = self.inputs[c][k..=k + len].to_vec();
        let jump = match self.jumps[c] {
            Some((idx, left)) if idx > k && idx <= k + len => Some((idx - k, left)),
            _ => None,
        };
        GridSignal { values, jump }
    }

    /// Delay lines exactly as they stood after the control at `t_k` was applied.
    pub fn lines_at(&self, k: usize) -> Result<Vec<DelayLine>> {
        if k >= self.len() {
            return Err(Error::config(format!(
                "row {k} not recorded, trace has {} rows",
                self.len()
            )));
        }
        if self.offsets.contains(&0) {
            return Err(Error::config("trace of a delay-free run has no delay lines"));
        }
        (0..self.m())
            .map(|c| DelayLine::from_window(self.delays[c], self.step, self.time(k), self.window(k, c)))
            .collect()
    }

    pub fn metrics(&self) -> Vec<MetricsRow> {
        (0..self.len())
            .map(|k| {
                let x = norm(self.state(k));
                let mut xi = x;
                let mut gamma = x;
                for c in 0..self.m() {
                    let w = self.window(k, c);
                    xi += w.sup_abs();
                    gamma += w.integral_of_square(self.step);
                }
                MetricsRow {
                    t: self.time(k),
                    xi,
                    gamma,
                }
            })
            .collect()
    }

    /// CSV with header `t,x1..xn,u1..um[,p1_1..pm_n]` at 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.m()).map(|c| format!("u{c}")));
        if self.has_predictors() {
            for c in 1..=self.m() {
                header.extend((1..=self.n).map(|i| format!("p{c}_{i}")));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            write!(out, "{:.16e}", self.time(k))?;
            for v in self.state(k) {
                write!(out, ",{v:.16e}")?;
            }
            for c in 0..self.m() {
                write!(out, ",{:.16e}", self.control(k, c))?;
            }
            for c in 0..self.m() {
                if let Some(p) = self.predictor(k, c) {
                    for v in p {
                        write!(out, ",{v:.16e}")?;
                    }
                }
            }
            writeln!(out)?;
        }
        out.flush()
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        writeln!(out, "t,xi,gamma")?;
        for row in self.metrics() {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", row.t, row.xi, row.gamma)?;
        }
        out.flush()
    }
}
