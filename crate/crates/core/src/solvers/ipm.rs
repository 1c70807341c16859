//! Primal-dual interior-point solver for separable log-barrier programs
//!
//! ```text
//! minimise   Σ c_i x_i − Σ w_i log x_i
//! subject to A x = b,  G x ≤ h
//! ```
//!
//! with `w > 0`. The log terms keep `x` strictly positive, so positivity is
//! never an explicit constraint. Iterates stay primal feasible: the caller
//! supplies a strictly feasible start and every Newton direction preserves
//! `A x = b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProgram {
    pub linear: Vec<f64>,
    pub weights: Vec<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveCertificate {
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Primal point with the multipliers found alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub eq_dual: Vec<f64>,
    pub ineq_dual: Vec<f64>,
    pub certificate: SolveCertificate,
}

/// Residual components at a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `max_i |x_i (∇f + Aᵀν + Gᵀλ)_i| / w_i`.
    pub stationarity: f64,
    pub primal: f64,
    /// `max_k λ_k s_k / mean(w)`.
    pub complementarity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

impl BarrierProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.weights.len() != n
            || self.eq.ncols() != n
            || self.ineq.ncols() != n
            || self.eq.nrows() != self.eq_rhs.len()
            || self.ineq.nrows() != self.ineq_rhs.len()
        {
            return Err(Error::Structure(
                "barrier program dimensions disagree".into(),
            ));
        }
        if self.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Parameter("barrier weights must be positive".into()));
        }
        if self.linear.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("linear term is not finite".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.linear)
            .zip(&self.weights)
            .map(|((x, c), w)| c * x - w * x.ln())
            .sum()
    }

    /// `h − G x`.
    pub fn slack(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        DVector::from_column_slice(&self.ineq_rhs) - &self.ineq * xv
    }

    /// `‖A x − b‖_∞` together with the worst inequality violation.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let eq = (&self.eq * &xv - DVector::from_column_slice(&self.eq_rhs)).amax();
        let ineq = self
            .slack(x)
            .iter()
            .map(|&s| (-s).max(0.0))
            .fold(0.0, f64::max);
        let neg = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        eq.max(ineq).max(neg)
    }

    /// Scaled stationarity vector `x_i (c_i − w_i/x_i + (Aᵀν)_i + (Gᵀλ)_i) / w_i`.
    pub fn scaled_stationarity(&self, x: &[f64], nu: &[f64], lambda: &[f64]) -> DVector<f64> {
        let mut rd = self.dual_residual(x, nu, lambda);
        for i in 0..x.len() {
            rd[i] *= x[i] / self.weights[i];
        }
        rd
    }

    fn dual_residual(&self, x: &[f64], nu: &[f64], lambda: &[f64]) -> DVector<f64> {
        let mut rd = DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(&self.linear)
                .zip(&self.weights)
                .map(|((x, c), w)| c - w / x),
        );
        if !nu.is_empty() {
            rd += self.eq.tr_mul(&DVector::from_column_slice(nu));
        }
        if !lambda.is_empty() {
            rd += self.ineq.tr_mul(&DVector::from_column_slice(lambda));
        }
        rd
    }

    fn mean_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len().max(1) as f64
    }

    pub fn residuals(&self, x: &[f64], nu: &[f64], lambda: &[f64]) -> Residuals {
        let stationarity = self.scaled_stationarity(x, nu, lambda).amax();
        let s = self.slack(x);
        let wbar = self.mean_weight();
        let complementarity = lambda
            .iter()
            .zip(s.iter())
            .map(|(l, s)| (l * s).abs() / wbar)
            .fold(0.0, f64::max);
        Residuals {
            stationarity,
            primal: self.primal_residual(x),
            complementarity,
        }
    }
}

/// Largest `α ∈ (0, 1]` keeping `v + α dv ≥ (1 − τ) v` componentwise.
fn max_step(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-tau * x / d);
        }
    }
    alpha
}

/// Solves `prog` from the strictly feasible point `x0`.
///
/// Never fails on non-convergence: the certificate's `converged` flag says
/// whether the residual reached `opts.tol`. Errors are reserved for malformed
/// input (dimension mismatch, infeasible or non-interior start).
pub fn solve(prog: &BarrierProgram, x0: &[f64], opts: SolverOptions) -> Result<Solution> {
    prog.validate()?;
    let n = prog.dim();
    let m = prog.eq.nrows();
    let p = prog.ineq.nrows();
    if x0.len() != n {
        return Err(Error::Structure("start point has the wrong length".into()));
    }
    if x0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Invariant(
            "start point must be strictly positive".into(),
        ));
    }
    let mut x = x0.to_vec();
    let mut s = prog.slack(&x);
    if s.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Invariant(
            "start point violates an inequality".into(),
        ));
    }
    let wbar = prog.mean_weight();
    let mut nu = vec![0.0; m];
    // Start the inequality multipliers on a modest central-path point.
    let mut lambda: Vec<f64> = s
        .iter()
        .map(|&si| (1e-2 * wbar / si).min(1e6 * wbar))
        .collect();
    let eq_resid = prog.primal_residual(&x);

    let mut iterations = 0;
    let mut res = prog.residuals(&x, &nu, &lambda);
    // A least-squares multiplier estimate makes the first residual meaningful.
    if m > 0 && p == 0 {
        nu = equality_multipliers(prog, &x);
        res = prog.residuals(&x, &nu, &lambda);
    }
    let tol = opts.tol.max(eq_resid * 10.0);
    while res.max() > tol && iterations < opts.max_iter {
        iterations += 1;
        let mu = if p > 0 {
            lambda.iter().zip(s.iter()).map(|(l, s)| l * s).sum::<f64>() / p as f64
        } else {
            0.0
        };
        let sigma = if res.stationarity > 1e-2 { 0.3 } else { 0.05 };
        let target = sigma * mu;

        let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
        for i in 0..n {
            kkt[(i, i)] = prog.weights[i] / (x[i] * x[i]);
        }
        if p > 0 {
            let mut scaled = prog.ineq.clone();
            for k in 0..p {
                let d = (lambda[k] / s[k]).sqrt();
                scaled.row_mut(k).scale_mut(d);
            }
            let gtg = scaled.tr_mul(&scaled);
            let mut top = kkt.view_mut((0, 0), (n, n));
            top += &gtg;
        }
        if m > 0 {
            kkt.view_mut((n, 0), (m, n)).copy_from(&prog.eq);
            kkt.view_mut((0, n), (n, m)).copy_from(&prog.eq.transpose());
        }
        let rd = prog.dual_residual(&x, &nu, &lambda);
        let mut rhs = DVector::<f64>::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&rd));
        if p > 0 {
            let corr = DVector::from_iterator(p, (0..p).map(|k| target / s[k] - lambda[k]));
            let gc = prog.ineq.tr_mul(&corr);
            for i in 0..n {
                rhs[i] -= gc[i];
            }
        }
        if m > 0 {
            let xv = DVector::from_column_slice(&x);
            let req = &prog.eq * xv - DVector::from_column_slice(&prog.eq_rhs);
            for j in 0..m {
                rhs[n + j] = -req[j];
            }
        }
        if kkt.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            break;
        }
        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(v) if v.iter().all(|z| z.is_finite()) => v,
            _ => match kkt.svd(true, true).solve(&rhs, 1e-14) {
                Ok(v) => v,
                Err(_) => break,
            },
        };
        let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let dnu: Vec<f64> = sol.rows(n, m).iter().copied().collect();
        let ds: Vec<f64> = if p > 0 {
            (-(&prog.ineq * DVector::from_column_slice(&dx)))
                .iter()
                .copied()
                .collect()
        } else {
            Vec::new()
        };
        let dlambda: Vec<f64> = (0..p)
            .map(|k| target / s[k] - lambda[k] - lambda[k] / s[k] * ds[k])
            .collect();

        let tau = if res.max() > 1e-3 { 0.95 } else { 0.995 };
        if p == 0 {
            // Damped Newton on a self-concordant barrier: the decrement bounds the safe step.
            let decrement: f64 = (0..n)
                .map(|i| prog.weights[i] * (dx[i] / x[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let damped = if decrement < 0.25 {
                1.0
            } else {
                1.0 / (1.0 + decrement)
            };
            let alpha = damped.min(max_step(&x, &dx, tau));
            for i in 0..n {
                x[i] += alpha * dx[i];
            }
            for j in 0..m {
                nu[j] += alpha * dnu[j];
            }
        } else {
            // Separate primal and dual step lengths; slacks are tracked as their own
            // variables so they never collapse to exact zero through cancellation.
            let alpha_p = max_step(&x, &dx, tau).min(max_step(s.as_slice(), &ds, tau));
            let alpha_d = max_step(&lambda, &dlambda, tau);
            for i in 0..n {
                x[i] += alpha_p * dx[i];
            }
            for k in 0..p {
                s[k] += alpha_p * ds[k];
                lambda[k] += alpha_d * dlambda[k];
            }
            for j in 0..m {
                nu[j] += alpha_d * dnu[j];
            }
        }
        res = prog.residuals(&x, &nu, &lambda);
    }
    let residual = res.max();
    Ok(Solution {
        certificate: SolveCertificate {
            objective: prog.objective(&x),
            residual,
            iterations,
            converged: residual <= tol,
        },
        x,
        eq_dual: nu,
        ineq_dual: lambda,
    })
}

/// Least-squares `ν` for `min ‖x∘(∇f + Aᵀν)/w‖`.
fn equality_multipliers(prog: &BarrierProgram, x: &[f64]) -> Vec<f64> {
    let n = prog.dim();
    let m = prog.eq.nrows();
    let mut scaled = prog.eq.transpose();
    let mut g = DVector::<f64>::zeros(n);
    for i in 0..n {
        let d = x[i] / prog.weights[i];
        scaled.row_mut(i).scale_mut(d);
        g[i] = -(prog.linear[i] - prog.weights[i] / x[i]) * d;
    }
    match scaled.svd(true, true).solve(&g, 1e-14) {
        Ok(v) => v.iter().copied().collect(),
        Err(_) => vec![0.0; m],
    }
}
