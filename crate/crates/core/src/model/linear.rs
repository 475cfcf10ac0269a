//! Linear plants `X' = A X + sum b_i U_i(t - D_i)` with state feedback `U_i = k_i' X`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FeedbackFn, SystemModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: Vec<DVector<f64>>,
    k: Vec<DVector<f64>>,
    /// `a_closed[0] = A`, `a_closed[i] = a_closed[i-1] + b_i k_i'`.
    a_closed: Vec<DMatrix<f64>>,
    system: SystemModel,
}

/// Builds a linear model from `A` (n x n), input vectors `b_i` and gains `k_i`.
pub fn make_linear(
    a: DMatrix<f64>,
    b: Vec<DVector<f64>>,
    k: Vec<DVector<f64>>,
    delays: Vec<f64>,
) -> Result<LinearModel> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::config(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.len() != k.len() || b.len() != delays.len() {
        return Err(Error::config(format!(
            "{} input vectors, {} gains and {} delays",
            b.len(),
            k.len(),
            delays.len()
        )));
    }
    if let Some(v) = b.iter().chain(&k).find(|v| v.len() != n) {
        return Err(Error::config(format!(
            "input and gain vectors must have length {n}, got {}",
            v.len()
        )));
    }
    let finite = a.iter().chain(b.iter().flatten()).chain(k.iter().flatten());
    if let Some(v) = finite.copied().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("model entry {v} is not finite")));
    }

    let mut a_closed = Vec::with_capacity(b.len() + 1);
    a_closed.push(a.clone());
    for (bi, ki) in b.iter().zip(&k) {
        let next = a_closed.last().unwrap() + bi * ki.transpose();
        a_closed.push(next);
    }

    let a_rows: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).iter().copied().collect()).collect();
    let b_cols: Vec<Vec<f64>> = b.iter().map(|v| v.iter().copied().collect()).collect();
    let f = Arc::new(move |x: &[f64], u: &[f64], dx: &mut [f64]| {
        for (r, row) in a_rows.iter().enumerate() {
            dx[r] = row.iter().zip(x).map(|(a, x)| a * x).sum();
        }
        for (bi, ui) in b_cols.iter().zip(u) {
            for (d, b) in dx.iter_mut().zip(bi) {
                *d += b * ui;
            }
        }
    });
    let kappa = k
        .iter()
        .map(|ki| {
            let gain: Vec<f64> = ki.iter().copied().collect();
            Arc::new(move |_: f64, x: &[f64]| gain.iter().zip(x).map(|(g, x)| g * x).sum())
                as Arc<FeedbackFn>
        })
        .collect();
    let system = SystemModel::new(n, delays, f, kappa)?;

    Ok(LinearModel {
        a,
        b,
        k,
        a_closed,
        system,
    })
}

impl LinearModel {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[DVector<f64>] {
        &self.b
    }

    pub fn k(&self) -> &[DVector<f64>] {
        &self.k
    }

    /// `A_0 = A` through `A_m = A + sum_i b_i k_i'`.
    pub fn a_closed(&self) -> &[DMatrix<f64>] {
        &self.a_closed
    }

    pub fn delays(&self) -> &[f64] {
        self.system.delays()
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// The same plant through the general interface.
    pub fn system(&self) -> &SystemModel {
        &self.system
    }

    /// Same matrices with a different delay vector.
    pub fn with_delays(&self, delays: Vec<f64>) -> Result<Self> {
        make_linear(self.a.clone(), self.b.clone(), self.k.clone(), delays)
    }
}
