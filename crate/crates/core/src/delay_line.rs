//! Input history of one channel over a sliding window of length `D`.
//!
//! The window is stored on the simulation grid, so the transport-PDE state
//! `u(x, t) = U(t + x - D)` is available exactly at every node `x = j * dt`.
//! Between nodes the signal is linearly interpolated.
//!
//! A line can carry a single jump: when the first control value differs from
//! the initial history at `theta = 0`, the node keeps the history value as its
//! left limit so that interpolation on the interval before it still sees the
//! history and not a ramp towards the control.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Relative tolerance for "lies on the grid" checks.
pub(crate) const GRID_TOL: f64 = 1e-9;

/// Number of grid intervals covering `delay`, or a configuration error when
/// the delay is not an integer multiple of `step`.
pub fn grid_intervals(delay: f64, step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(format!("step must be positive, got {step}")));
    }
    if !(delay.is_finite() && delay > 0.0) {
        return Err(Error::config(format!("delay must be positive, got {delay}")));
    }
    let ratio = delay / step;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > GRID_TOL * ratio {
        return Err(Error::config(format!(
            "delay {delay} is not an integer multiple of step {step}"
        )));
    }
    Ok(rounded as usize)
}

/// Node values of a scalar signal on a uniform grid, with at most one jump.
///
/// `jump = Some((node, left))` means the signal approaches `left` from below
/// at `node` and equals `values[node]` from there on.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSignal {
    pub values: Vec<f64>,
    pub jump: Option<(usize, f64)>,
}

impl GridSignal {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, jump: None }
    }

    pub fn zeros(nodes: usize) -> Self {
        Self::new(vec![0.0; nodes])
    }

    pub fn intervals(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    /// Value at the left end of interval `j`.
    #[inline]
    pub fn start(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Value approached at the right end of interval `j`.
    #[inline]
    pub fn end(&self, j: usize) -> f64 {
        match self.jump {
            Some((node, left)) if node == j + 1 => left,
            _ => self.values[j + 1],
        }
    }

    #[inline]
    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.start(j) + self.end(j))
    }

    pub fn left_limit(&self, node: usize) -> f64 {
        match self.jump {
            Some((n, left)) if n == node => left,
            _ => self.values[node],
        }
    }

    pub fn sup_abs(&self) -> f64 {
        let jump = self.jump.map_or(0.0, |(_, left)| left.abs());
        self.values.iter().fold(jump, |acc, v| acc.max(v.abs()))
    }

    /// Trapezoidal approximation of the integral of the squared signal.
    pub fn integral_of_square(&self, step: f64) -> f64 {
        (0..self.intervals())
            .map(|j| {
                let (a, b) = (self.start(j), self.end(j));
                0.5 * step * (a * a + b * b)
            })
            .sum()
    }

    /// Largest difference between node values and between left limits.
    pub fn max_abs_diff(&self, other: &GridSignal) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grid length mismatch");
        (0..self.values.len())
            .map(|j| {
                let right = (self.values[j] - other.values[j]).abs();
                let left = (self.left_limit(j) - other.left_limit(j)).abs();
                right.max(left)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct DelayLine {
    delay: f64,
    step: f64,
    intervals: usize,
    samples: VecDeque<f64>,
    origin: f64,
    pushes: u64,
    /// Id of `samples[0]`; ids grow by one per push.
    first_id: u64,
    jump: Option<(u64, f64)>,
    /// The newest sample is a placeholder until `commit` fixes it.
    pending: bool,
}

impl DelayLine {
    /// Fills the window with `history` evaluated on `theta = -D, -D + dt, ..., 0`.
    pub fn new(delay: f64, step: f64, history: impl Fn(f64) -> f64) -> Result<Self> {
        let intervals = grid_intervals(delay, step)?;
        let mut samples = VecDeque::with_capacity(intervals + 1);
        for j in 0..=intervals {
            let theta = -delay + j as f64 * step;
            let theta = if j == intervals { 0.0 } else { theta };
            let v = history(theta);
            if !v.is_finite() {
                return Err(Error::input(format!(
                    "initial history is not finite at theta = {theta}"
                )));
            }
            samples.push_back(v);
        }
        Ok(Self {
            delay,
            step,
            intervals,
            samples,
            origin: 0.0,
            pushes: 0,
            first_id: 0,
            jump: None,
            pending: false,
        })
    }

    /// Rebuilds a line at time `now` from a stored window.
    pub fn from_window(delay: f64, step: f64, now: f64, window: GridSignal) -> Result<Self> {
        let intervals = grid_intervals(delay, step)?;
        if window.values.len() != intervals + 1 {
            return Err(Error::config(format!(
                "window has {} samples, delay {delay} at step {step} needs {}",
                window.values.len(),
                intervals + 1
            )));
        }
        if let Some(v) = window.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("window sample {v} is not finite")));
        }
        let jump = match window.jump {
            Some((node, left)) if node >= 1 && node <= intervals => Some((node as u64, left)),
            Some((node, _)) => {
                return Err(Error::config(format!("jump node {node} outside window")))
            }
            None => None,
        };
        Ok(Self {
            delay,
            step,
            intervals,
            samples: window.values.into(),
            origin: now,
            pushes: 0,
            first_id: 0,
            jump,
            pending: false,
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid intervals in the window, `D / dt`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn now(&self) -> f64 {
        self.origin + self.pushes as f64 * self.step
    }

    pub fn is_pending(&self) -> bool {
        self.pending
    }

    /// Most recent value, `U(now)`.
    pub fn latest(&self) -> f64 {
        *self.samples.back().expect("window is never empty")
    }

    pub fn samples(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }

    /// Right value at node `j`, i.e. `u(j * dt, now)`.
    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.samples[j]
    }

    /// Values at the two ends of interval `j`, honoring a jump at its right end.
    #[inline]
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let start = self.samples[j];
        let end = match self.jump {
            Some((id, left)) if id == self.first_id + j as u64 + 1 => left,
            _ => self.samples[j + 1],
        };
        (start, end)
    }

    pub fn window(&self) -> GridSignal {
        let jump = self.jump.and_then(|(id, left)| {
            let node = id.checked_sub(self.first_id)? as usize;
            (node >= 1 && node <= self.intervals).then_some((node, left))
        });
        GridSignal {
            values: self.samples(),
            jump,
        }
    }

    /// Appends `u` as `U(now + dt)` and drops the oldest sample.
    pub fn push(&mut self, u: f64) -> Result<()> {
        if !u.is_finite() {
            return Err(Error::input(format!("pushed input {u} is not finite")));
        }
        self.advance(u);
        self.pending = false;
        Ok(())
    }

    /// Advances one step with a hold placeholder that `commit` later replaces.
    pub fn push_pending(&mut self) {
        let hold = self.latest();
        self.advance(hold);
        self.pending = true;
    }

    /// Fixes the value at `now`.
    ///
    /// A pending placeholder is overwritten. A settled value that differs from
    /// `u` is kept as the left limit of a jump at `now`.
    pub fn commit(&mut self, u: f64) -> Result<()> {
        if !u.is_finite() {
            return Err(Error::input(format!("committed input {u} is not finite")));
        }
        let last_id = self.first_id + self.intervals as u64;
        let back = self.samples.back_mut().expect("window is never empty");
        if !self.pending && *back != u {
            let left = match self.jump {
                Some((id, left)) if id == last_id => left,
                _ => *back,
            };
            self.jump = Some((last_id, left));
        }
        *back = u;
        self.pending = false;
        Ok(())
    }

    fn advance(&mut self, u: f64) {
        self.samples.pop_front();
        self.samples.push_back(u);
        self.first_id += 1;
        self.pushes += 1;
        if matches!(self.jump, Some((id, _)) if id <= self.first_id) {
            self.jump = None;
        }
    }

    /// `U(theta)` for `now - D <= theta <= now`.
    pub fn sample(&self, theta: f64) -> Result<f64> {
        let start = self.now() - self.delay;
        let pos = (theta - start) / self.step;
        self.at_position(pos).ok_or(Error::Range {
            what: "theta",
            value: theta,
            lo: start,
            hi: self.now(),
        })
    }

    /// Transport-PDE state `u(x, now) = U(now + x - D)` for `0 <= x <= D`.
    pub fn sample_pde(&self, x: f64) -> Result<f64> {
        self.at_position(x / self.step).ok_or(Error::Range {
            what: "x",
            value: x,
            lo: 0.0,
            hi: self.delay,
        })
    }

    fn at_position(&self, pos: f64) -> Option<f64> {
        let n = self.intervals as f64;
        let tol = GRID_TOL * n.max(1.0);
        if !pos.is_finite() || pos < -tol || pos > n + tol {
            return None;
        }
        let nearest = pos.round();
        if (pos - nearest).abs() <= tol {
            return Some(self.samples[nearest as usize]);
        }
        let j = (pos.floor() as usize).min(self.intervals - 1);
        let frac = pos - j as f64;
        let (a, b) = self.interval(j);
        Some(a + (b - a) * frac)
    }
}
