//! Classical fourth-order Runge-Kutta step shared by the plant, the predictor
//! cascade and the inverse transform, so all three perform identical
//! arithmetic on identical inputs.

/// Where inside a step a derivative is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Start,
    Mid,
    End,
}

impl Stage {
    /// Offset of the stage from the step start, as a fraction of the step.
    pub fn fraction(self) -> f64 {
        match self {
            Stage::Start => 0.0,
            Stage::Mid => 0.5,
            Stage::End => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` by `h` into `out`; `deriv(stage, y, dy)` supplies the field.
    pub fn step(
        &mut self,
        y: &[f64],
        h: f64,
        out: &mut [f64],
        mut deriv: impl FnMut(Stage, &[f64], &mut [f64]),
    ) {
        let half = 0.5 * h;
        deriv(Stage::Start, y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k1[i];
        }
        deriv(Stage::Mid, &self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + half * self.k2[i];
        }
        deriv(Stage::Mid, &self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        deriv(Stage::End, &self.tmp, &mut self.k4);
        for i in 0..y.len() {
            out[i] = y[i]
                + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Stage value of a signal known at the ends of a step and linear in between.
#[inline]
pub fn stage_value(stage: Stage, start: f64, end: f64) -> f64 {
    match stage {
        Stage::Start => start,
        Stage::Mid => 0.5 * (start + end),
        Stage::End => end,
    }
}

/// `true` when every entry is finite and the Euclidean norm is at most `limit`.
#[inline]
pub fn within(y: &[f64], limit: f64) -> bool {
    let sq: f64 = y.iter().map(|v| v * v).sum();
    sq.is_finite() && sq.sqrt() <= limit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_cubic_time_polynomial_exactly() {
        // y' = 3 t^2 + 2 t with t = stage time; RK4 is exact for this quadrature.
        let mut rk = Rk4::new(1);
        let (t0, h) = (0.3, 0.2);
        let mut out = [0.0];
        rk.step(&[1.0], h, &mut out, |s, _, dy| {
            let t = t0 + s.fraction() * h;
            dy[0] = 3.0 * t * t + 2.0 * t;
        });
        let exact = 1.0 + (0.5f64.powi(3) + 0.5f64.powi(2)) - (0.3f64.powi(3) + 0.3f64.powi(2));
        assert!((out[0] - exact).abs() < 1e-15);
    }

    #[test]
    fn fourth_order_on_exponential() {
        let err = |h: f64| {
            let mut rk = Rk4::new(1);
            let mut y = [1.0];
            let steps = (1.0 / h).round() as usize;
            for _ in 0..steps {
                let prev = y;
                rk.step(&prev, h, &mut y, |_, y, dy| dy[0] = -y[0]);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }

    #[test]
    fn stage_values_interpolate_linearly() {
        assert_eq!(stage_value(Stage::Start, 1.0, 3.0), 1.0);
        assert_eq!(stage_value(Stage::Mid, 1.0, 3.0), 2.0);
        assert_eq!(stage_value(Stage::End, 1.0, 3.0), 3.0);
        assert!(within(&[3.0, 4.0], 5.0));
        assert!(!within(&[3.0, 4.0], 4.9));
        assert!(!within(&[f64::NAN], 1.0));
    }
}
