//! Plant interface: dynamics `f(X, u)`, per-channel feedback laws `kappa_i(t, X)`
//! and the input delays.

mod linear;
mod unicycle;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use linear::{make_linear, LinearModel};
pub use unicycle::{make_unicycle, moving_frame, speed_law, turn_rate_law};

/// Right-hand side `f(X, u)`, written into the last argument.
pub type DynamicsFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// Feedback law `kappa(t, X)`. Time-invariant laws ignore `t`.
pub type FeedbackFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

const EQUILIBRIUM_TOL: f64 = 1e-12;
const EQUILIBRIUM_TIMES: [f64; 7] = [0.0, 0.25, 0.5, 1.0, 2.0, std::f64::consts::PI, 10.0];

#[derive(Clone)]
pub struct SystemModel {
    n: usize,
    delays: Vec<f64>,
    f: Arc<DynamicsFn>,
    kappa: Vec<Arc<FeedbackFn>>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("n", &self.n)
            .field("m", &self.kappa.len())
            .field("delays", &self.delays)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    /// Builds a model whose delays are sorted ascending.
    pub fn new(
        n: usize,
        delays: Vec<f64>,
        f: Arc<DynamicsFn>,
        kappa: Vec<Arc<FeedbackFn>>,
    ) -> Result<Self> {
        if delays.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config(format!(
                "delays must be sorted ascending, got {delays:?}"
            )));
        }
        Self::new_unordered(n, delays, f, kappa)
    }

    /// Like [`SystemModel::new`] but accepts delays in any order.
    ///
    /// The predictor cascade itself is order-independent; the ordering
    /// requirement only guards the stability guarantees. Unordered delays are
    /// meant for counterexamples.
    pub fn new_unordered(
        n: usize,
        delays: Vec<f64>,
        f: Arc<DynamicsFn>,
        kappa: Vec<Arc<FeedbackFn>>,
    ) -> Result<Self> {
        if n == 0 || kappa.is_empty() {
            return Err(Error::config("state and input dimensions must be positive"));
        }
        if delays.len() != kappa.len() {
            return Err(Error::config(format!(
                "{} delays for {} feedback laws",
                delays.len(),
                kappa.len()
            )));
        }
        if let Some(d) = delays.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::config(format!("delays must be positive, got {d}")));
        }
        let model = Self { n, delays, f, kappa };
        model.check_equilibrium()?;
        Ok(model)
    }

    fn check_equilibrium(&self) -> Result<()> {
        let zero_x = vec![0.0; self.n];
        let zero_u = vec![0.0; self.m()];
        let mut dx = vec![0.0; self.n];
        (self.f)(&zero_x, &zero_u, &mut dx);
        let drift = norm(&dx);
        if !(drift <= EQUILIBRIUM_TOL) {
            return Err(Error::config(format!(
                "f(0, 0) must vanish, |f(0, 0)| = {drift}"
            )));
        }
        for (c, kappa) in self.kappa.iter().enumerate() {
            for &t in &EQUILIBRIUM_TIMES {
                let v = kappa(t, &zero_x);
                if !(v.abs() <= EQUILIBRIUM_TOL) {
                    return Err(Error::config(format!(
                        "feedback {} must vanish at X = 0, got {v} at t = {t}",
                        c + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.kappa.len()
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    /// `D_j - D_i` for zero-based channels.
    pub fn delay_gap(&self, j: usize, i: usize) -> f64 {
        self.delays[j] - self.delays[i]
    }

    pub fn delays_sorted(&self) -> bool {
        self.delays.windows(2).all(|w| w[0] <= w[1])
    }

    /// Same dynamics and laws with a different delay vector.
    pub fn with_delays(&self, delays: Vec<f64>) -> Result<Self> {
        let ctor = if self.delays_sorted() {
            Self::new
        } else {
            Self::new_unordered
        };
        ctor(self.n, delays, self.f.clone(), self.kappa.clone())
    }

    /// Checked evaluation of `f(X, u)`.
    pub fn eval_f(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, Some(u))?;
        let mut dx = vec![0.0; self.n];
        self.rhs(x, u, &mut dx);
        if dx.iter().all(|v| v.is_finite()) {
            Ok(dx)
        } else {
            Err(Error::Numeric {
                what: "f",
                state: x.to_vec(),
                input: u.to_vec(),
            })
        }
    }

    /// Checked evaluation of `kappa_c(t, X)` for zero-based channel `c`.
    pub fn eval_kappa(&self, c: usize, t: f64, x: &[f64]) -> Result<f64> {
        if c >= self.m() {
            return Err(Error::config(format!(
                "channel {c} out of range for {} inputs",
                self.m()
            )));
        }
        self.check_dims(x, None)?;
        let v = self.feedback(c, t, x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric {
                what: "feedback",
                state: x.to_vec(),
                input: vec![t],
            })
        }
    }

    /// Unchecked `f(X, u)` for inner loops.
    #[inline]
    pub fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }

    /// Unchecked `kappa_c(t, X)` for inner loops.
    #[inline]
    pub fn feedback(&self, c: usize, t: f64, x: &[f64]) -> f64 {
        (self.kappa[c])(t, x)
    }

    fn check_dims(&self, x: &[f64], u: Option<&[f64]>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::config(format!(
                "state has length {}, model expects {}",
                x.len(),
                self.n
            )));
        }
        if let Some(u) = u {
            if u.len() != self.m() {
                return Err(Error::config(format!(
                    "input has length {}, model expects {}",
                    u.len(),
                    self.m()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
