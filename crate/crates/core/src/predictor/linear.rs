//! Explicit predictors for linear plants.
//!
//! Inside a segment the profile obeys `p' = A_s p + sum b_c u_c(x)`, whose flow
//! over one grid interval is `e^{A_s h}` plus a convolution integral. The
//! integral is taken with Simpson's rule on the interval, using the history
//! value at the midpoint (linear interpolation of the two stored samples).

use nalgebra::{DMatrix, DVector};

use super::{channel_grid, matrix_exponential, PredictorResult, DIVERGENCE_LIMIT};
use crate::delay_line::DelayLine;
use crate::error::{Error, Result};
use crate::integrate::within;
use crate::model::LinearModel;

/// `(e^{A_s h}, e^{A_s h / 2})` for every segment matrix `A_s` that occurs.
fn segment_flows(model: &LinearModel, h: f64) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    model
        .a_closed()
        .iter()
        .map(|a| Ok((matrix_exponential(&(a * h))?, matrix_exponential(&(a * (0.5 * h)))?)))
        .collect()
}

/// Number of channels already reached by their feedback on interval `j`.
fn segment_of(nodes: &[usize], j: usize) -> usize {
    nodes.iter().filter(|&&l| l <= j).count()
}

pub fn compute_predictors_linear(
    model: &LinearModel,
    t: f64,
    x: &[f64],
    lines: &[DelayLine],
) -> Result<PredictorResult> {
    let n = model.n();
    let m = model.m();
    if x.len() != n {
        return Err(Error::config(format!(
            "state has length {}, model expects {n}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("state entry {v} is not finite")));
    }
    let (h, nodes) = channel_grid(model.delays(), t, lines)?;
    let last = nodes.iter().copied().max().unwrap_or(0);
    let flows = segment_flows(model, h)?;
    let b = model.b();
    let k = model.k();
    let w = h / 6.0;

    let mut profile = Vec::with_capacity((last + 1) * n);
    profile.extend_from_slice(x);
    let mut controls = vec![f64::NAN; m];
    let mut p = DVector::from_column_slice(x);
    let mut next = DVector::zeros(n);
    let mut g0 = DVector::zeros(n);
    let mut gmid = DVector::zeros(n);
    let mut g1 = DVector::zeros(n);
    let mut tmp = DVector::zeros(n);

    for j in 0..last {
        let (e, e_half) = &flows[segment_of(&nodes, j)];
        g0.fill(0.0);
        gmid.fill(0.0);
        g1.fill(0.0);
        let mut closing = Vec::new();
        for c in 0..m {
            if nodes[c] <= j {
                continue;
            }
            let (start, mut end) = lines[c].interval(j);
            if nodes[c] == j + 1 && lines[c].is_pending() {
                closing.push(c);
                end = 0.0;
            }
            g0.axpy(start, &b[c], 1.0);
            gmid.axpy(0.5 * (start + end), &b[c], 1.0);
            g1.axpy(end, &b[c], 1.0);
        }
        tmp.copy_from(&p);
        tmp.axpy(w, &g0, 1.0);
        next.gemv(1.0, e, &tmp, 0.0);
        next.gemv(4.0 * w, e_half, &gmid, 1.0);
        next.axpy(w, &g1, 1.0);

        if !closing.is_empty() {
            // next = base + sum_c v_c col_c and v_c = k_c' next; solve for v.
            let cols: Vec<DVector<f64>> = closing
                .iter()
                .map(|&c| (e_half * &b[c]) * (2.0 * w) + &b[c] * w)
                .collect();
            let q = closing.len();
            let mut lhs = DMatrix::identity(q, q);
            let mut rhs = DVector::zeros(q);
            for (r, &c) in closing.iter().enumerate() {
                rhs[r] = k[c].dot(&next);
                for (s, col) in cols.iter().enumerate() {
                    lhs[(r, s)] -= k[c].dot(col);
                }
            }
            let v = lhs
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::input("endpoint equation is singular"))?;
            for (s, col) in cols.iter().enumerate() {
                next.axpy(v[s], col, 1.0);
            }
            for (s, &c) in closing.iter().enumerate() {
                controls[c] = v[s];
            }
        }

        if !within(next.as_slice(), DIVERGENCE_LIMIT) {
            return Err(Error::PredictorDivergence {
                t,
                x: (j + 1) as f64 * h,
            });
        }
        profile.extend_from_slice(next.as_slice());
        std::mem::swap(&mut p, &mut next);
    }

    for c in 0..m {
        if controls[c].is_nan() {
            let pc = &profile[nodes[c] * n..(nodes[c] + 1) * n];
            controls[c] = k[c].iter().zip(pc).map(|(g, v)| g * v).sum();
        }
    }

    Ok(PredictorResult {
        t,
        step: h,
        n,
        channel_nodes: nodes,
        profile,
        controls,
    })
}

/// Transition matrix of the piecewise-constant flow from `y` to `x`,
/// `e^{A_i (x - D_i)} ... e^{A_j (D_{j+1} - y)}`.
pub fn phi_transition(model: &LinearModel, x: f64, y: f64) -> Result<DMatrix<f64>> {
    let delays = model.delays();
    let top = delays.iter().copied().fold(0.0, f64::max);
    let tol = 1e-12 * top.max(1.0);
    if !(y <= x) {
        return Err(Error::Range {
            what: "y",
            value: y,
            lo: 0.0,
            hi: x,
        });
    }
    if !(y >= -tol && x <= top + tol) {
        return Err(Error::Range {
            what: "x",
            value: if y < 0.0 { y } else { x },
            lo: 0.0,
            hi: top,
        });
    }

    let n = model.n();
    let mut phi = DMatrix::identity(n, n);
    let mut pos = y;
    while x - pos > tol {
        let seg = delays.iter().filter(|&&d| d <= pos + tol).count();
        let seg_end = delays
            .iter()
            .copied()
            .filter(|&d| d > pos + tol)
            .fold(x, f64::min);
        let flow = matrix_exponential(&(&model.a_closed()[seg] * (seg_end - pos)))?;
        phi = flow * phi;
        pos = seg_end;
    }
    Ok(phi)
}

/// Predictors from the closed form
/// `P_i = Phi(D_i, 0) X + sum_c int_0^{min(D_i, D_c)} Phi(D_i, y) b_c u_c(y) dy`,
/// integrating backwards from `D_i` with the same per-interval Simpson rule.
///
/// All lines must be settled (no pending sample).
pub fn predictor_by_transition(
    model: &LinearModel,
    t: f64,
    x: &[f64],
    lines: &[DelayLine],
) -> Result<Vec<DVector<f64>>> {
    let (h, nodes) = channel_grid(model.delays(), t, lines)?;
    if lines.iter().any(DelayLine::is_pending) {
        return Err(Error::config("transition-form predictor needs settled lines"));
    }
    if x.len() != model.n() {
        return Err(Error::config("state dimension mismatch"));
    }
    let flows = segment_flows(model, h)?;
    let b = model.b();
    let xv = DVector::from_column_slice(x);

    let mut out = Vec::with_capacity(nodes.len());
    for &top in &nodes {
        let n = model.n();
        let mut phi_right = DMatrix::<f64>::identity(n, n);
        let mut integral = DVector::<f64>::zeros(n);
        for j in (0..top).rev() {
            let (e, e_half) = &flows[segment_of(&nodes, j)];
            let phi_left = &phi_right * e;
            let phi_mid = &phi_right * e_half;
            for (c, &lc) in nodes.iter().enumerate() {
                if lc <= j {
                    continue;
                }
                let (start, end) = lines[c].interval(j);
                let mid = 0.5 * (start + end);
                let weighted = &phi_left * (start * h / 6.0)
                    + &phi_mid * (4.0 * mid * h / 6.0)
                    + &phi_right * (end * h / 6.0);
                integral += weighted * &b[c];
            }
            phi_right = phi_left;
        }
        out.push(phi_right * &xv + integral);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_linear;
    use proptest::prelude::*;

    fn scalar(a: f64, k: f64, delay: f64) -> LinearModel {
        make_linear(
            DMatrix::from_element(1, 1, a),
            vec![DVector::from_element(1, 1.0)],
            vec![DVector::from_element(1, k)],
            vec![delay],
        )
        .unwrap()
    }

    fn demo(delays: Vec<f64>) -> LinearModel {
        make_linear(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 0.0])],
            vec![
                DVector::from_vec(vec![-2.0, -3.0]),
                DVector::from_vec(vec![-1.0, -1.0]),
            ],
            delays,
        )
        .unwrap()
    }

    #[test]
    fn zero_plant_zero_history_keeps_state() {
        let model = scalar(0.0, -1.0, 1.0);
        let lines = vec![DelayLine::new(1.0, 0.01, |_| 0.0).unwrap()];
        let res = compute_predictors_linear(&model, 0.0, &[2.0], &lines).unwrap();
        assert_eq!(res.predictor(0), &[2.0]);
        assert_eq!(res.controls(), &[-2.0]);
    }

    #[test]
    fn homogeneous_scalar_solution() {
        let model = scalar(-0.7, 0.3, 0.5);
        let lines = vec![DelayLine::new(0.5, 0.01, |_| 0.0).unwrap()];
        let res = compute_predictors_linear(&model, 0.0, &[1.0], &lines).unwrap();
        assert!((res.predictor(0)[0] - (-0.35f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn constant_history_convolution() {
        // x' = a x + c on [0, D]: x(D) = e^{aD} x0 + c (e^{aD} - 1) / a
        let (a, c, d) = (0.4, 1.5, 0.6);
        let model = scalar(a, -1.0, d);
        let lines = vec![DelayLine::new(d, 0.02, |_| c).unwrap()];
        let res = compute_predictors_linear(&model, 0.0, &[0.2], &lines).unwrap();
        let want = (a * d).exp() * 0.2 + c * ((a * d).exp() - 1.0) / a;
        assert!((res.predictor(0)[0] - want).abs() < 1e-10);
    }

    #[test]
    fn phi_examples() {
        let model = demo(vec![0.25, 0.5]);
        for x in [0.0, 0.1, 0.25, 0.4, 0.5] {
            assert_eq!(phi_transition(&model, x, x).unwrap(), DMatrix::identity(2, 2));
        }
        let single = scalar(-0.3, 1.0, 0.8);
        let phi = phi_transition(&single, 0.8, 0.0).unwrap();
        assert!((phi[(0, 0)] - (-0.24f64).exp()).abs() < 1e-15);
        let across = phi_transition(&model, 0.4, 0.1).unwrap();
        let want = matrix_exponential(&(&model.a_closed()[1] * 0.15)).unwrap()
            * matrix_exponential(&(&model.a_closed()[0] * 0.15)).unwrap();
        assert!((across - want).norm() < 1e-14);
        assert!(matches!(phi_transition(&model, 0.1, 0.2), Err(Error::Range { .. })));
        assert!(matches!(phi_transition(&model, 0.6, 0.2), Err(Error::Range { .. })));
    }

    #[test]
    fn transition_form_matches_recursion() {
        let model = demo(vec![0.25, 0.5]);
        let step = 1e-3;
        let lines = vec![
            DelayLine::new(0.25, step, |th| (5.0 * th).sin()).unwrap(),
            DelayLine::new(0.5, step, |th| 0.3 - th * th).unwrap(),
        ];
        let x = [0.7, -0.4];
        let rec = compute_predictors_linear(&model, 0.0, &x, &lines).unwrap();
        let closed = predictor_by_transition(&model, 0.0, &x, &lines).unwrap();
        for c in 0..2 {
            for i in 0..2 {
                assert!((rec.predictor(c)[i] - closed[c][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pending_endpoint_solves_linear_equation() {
        let model = demo(vec![0.25, 0.5]);
        let step = 5e-3;
        let mut lines = vec![
            DelayLine::new(0.25, step, |th| th).unwrap(),
            DelayLine::new(0.5, step, |th| -th).unwrap(),
        ];
        for line in &mut lines {
            line.push_pending();
        }
        let x = [0.3, 0.1];
        let res = compute_predictors_linear(&model, step, &x, &lines).unwrap();
        for c in 0..2 {
            let want = model.k()[c].dot(&DVector::from_column_slice(res.predictor(c)));
            assert!((res.controls()[c] - want).abs() < 1e-14);
        }
        for (line, &v) in lines.iter_mut().zip(res.controls()) {
            line.commit(v).unwrap();
        }
        let again = compute_predictors_linear(&model, step, &x, &lines).unwrap();
        for c in 0..2 {
            assert!((again.controls()[c] - res.controls()[c]).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn phi_semigroup(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let model = demo(vec![0.25, 0.5]);
            let mut pts = [a * 0.5, b * 0.5, c * 0.5];
            pts.sort_by(|p, q| q.partial_cmp(p).unwrap());
            let [x, y, z] = pts;
            let lhs = phi_transition(&model, x, y).unwrap() * phi_transition(&model, y, z).unwrap();
            let rhs = phi_transition(&model, x, z).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-10);
        }
    }
}
