//! Kinematic unicycle with the time-varying Pomet stabilizer.
//!
//! Channel 0 is the turning rate (delay `D1`), channel 1 the speed (delay `D2`).

use std::sync::Arc;

use super::SystemModel;
use crate::error::{Error, Result};

/// `(M, Q)`: position expressed in the body frame.
#[inline]
pub fn moving_frame(x: &[f64]) -> (f64, f64) {
    let (s, c) = x[2].sin_cos();
    (x[0] * c + x[1] * s, x[0] * s - x[1] * c)
}

/// Nominal turning-rate law.
#[inline]
pub fn turn_rate_law(t: f64, x: &[f64]) -> f64 {
    let (m, q) = moving_frame(x);
    turn_rate(t.cos(), m, q, x[2])
}

/// Nominal speed law.
#[inline]
pub fn speed_law(t: f64, x: &[f64]) -> f64 {
    let (m, q) = moving_frame(x);
    let (s, c) = t.sin_cos();
    -m + q * (s - c) + q * turn_rate(c, m, q, x[2])
}

#[inline]
fn turn_rate(cos_t: f64, m: f64, q: f64, heading: f64) -> f64 {
    -m * m * cos_t - m * q * (1.0 + cos_t * cos_t) - heading
}

fn kinematics(x: &[f64], u: &[f64], dx: &mut [f64]) {
    let (s, c) = x[2].sin_cos();
    dx[0] = u[1] * c;
    dx[1] = u[1] * s;
    dx[2] = u[0];
}

/// Unicycle with turn-rate delay `d1` and speed delay `d2`.
///
/// `d1 < d2` is required unless `allow_reversed` is set, which exists for
/// demonstrating finite escape when the order is violated.
pub fn make_unicycle(d1: f64, d2: f64, allow_reversed: bool) -> Result<SystemModel> {
    let f = Arc::new(kinematics);
    let kappa: Vec<Arc<super::FeedbackFn>> = vec![Arc::new(turn_rate_law), Arc::new(speed_law)];
    if allow_reversed {
        SystemModel::new_unordered(3, vec![d1, d2], f, kappa)
    } else if d1 < d2 {
        SystemModel::new(3, vec![d1, d2], f, kappa)
    } else {
        Err(Error::config(format!(
            "unicycle needs turn delay < speed delay, got {d1} >= {d2}"
        )))
    }
}
