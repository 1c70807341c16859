//! Optimality residual of a barrier program at an arbitrary primal point.
//!
//! Multipliers are recovered by nonnegative least squares on the scaled
//! stationarity system, so the residual does not depend on the solver that
//! produced the point.

use nalgebra::{DMatrix, DVector};

use super::ipm::BarrierProgram;

/// Lawson–Hanson active-set NNLS: `min ‖M z − d‖₂` subject to `z ≥ 0`.
pub fn nnls(m: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let mut z = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + m.amax() * d.amax());
    for _ in 0..(3 * n + 10) {
        let grad = m.tr_mul(&(d - m * &z));
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])]);
            let sol = sub
                .clone()
                .svd(true, true)
                .solve(d, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if sol.iter().all(|&v| v > 0.0) {
                z.fill(0.0);
                for (c, &k) in idx.iter().enumerate() {
                    z[k] = sol[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &k) in idx.iter().enumerate() {
                if sol[c] <= 0.0 {
                    alpha = alpha.min(z[k] / (z[k] - sol[c]));
                }
            }
            for (c, &k) in idx.iter().enumerate() {
                z[k] += alpha * (sol[c] - z[k]);
                if z[k] <= 1e-15 {
                    z[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
    z
}

/// Stationarity, feasibility and complementarity residual of `prog` at `x`.
///
/// Rows: `x_i (∇f + Aᵀν + Gᵀλ)_i / w_i` and `λ_k s_k / mean(w)`; `ν` is
/// free (split into two nonnegative halves), `λ ≥ 0`.
pub fn kkt_residual(prog: &BarrierProgram, x: &[f64]) -> f64 {
    let n = prog.dim();
    if x.iter().any(|&v| !(v > 0.0)) {
        return f64::INFINITY;
    }
    let m = prog.eq.nrows();
    let p = prog.ineq.nrows();
    let slack = prog.slack(x);
    let wbar = prog.weights.iter().sum::<f64>() / n.max(1) as f64;
    let rows = n + p;
    let cols = 2 * m + p;
    let mut mat = DMatrix::<f64>::zeros(rows, cols);
    let mut rhs = DVector::<f64>::zeros(rows);
    for i in 0..n {
        let d = x[i] / prog.weights[i];
        rhs[i] = -(prog.linear[i] - prog.weights[i] / x[i]) * d;
        for j in 0..m {
            mat[(i, j)] = prog.eq[(j, i)] * d;
            mat[(i, m + j)] = -prog.eq[(j, i)] * d;
        }
        for k in 0..p {
            mat[(i, 2 * m + k)] = prog.ineq[(k, i)] * d;
        }
    }
    for k in 0..p {
        mat[(n + k, 2 * m + k)] = slack[k].max(0.0) / wbar;
    }
    let z = if cols > 0 {
        nnls(&mat, &rhs)
    } else {
        DVector::zeros(0)
    };
    let stationarity = if cols > 0 {
        (&mat * &z - &rhs).amax()
    } else {
        rhs.amax()
    };
    stationarity.max(prog.primal_residual(x))
}
