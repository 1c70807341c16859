//! Occupancy polytopes and the two update rules solved over them.

use nalgebra::DMatrix;

use super::ipm::{solve, BarrierProgram, Solution, SolveCertificate, SolverOptions};
use crate::error::{Error, Result};
use crate::estimation::ConfidenceSet;
use crate::mdp::{compute_occupancy, LayeredMdp, OccupancyMeasure, Policy, TransitionFn};

/// `Ω(P_i)` over triple occupancies: unit mass out of `s0`, flow conservation
/// at interior states, and linearised ratio constraints
/// `(P̄ − B) q(s,a) ≤ q(s,a,s') ≤ (P̄ + B) q(s,a)`.
#[derive(Debug, Clone)]
pub struct ConfidencePolytope {
    eq: DMatrix<f64>,
    eq_rhs: Vec<f64>,
    ineq: DMatrix<f64>,
    interior: Vec<f64>,
}

impl ConfidencePolytope {
    pub fn new(mdp: &LayeredMdp, conf: &ConfidenceSet) -> Result<Self> {
        let n = mdp.num_triples();
        let mut eq_rows: Vec<Vec<f64>> = Vec::new();
        let mut eq_rhs = Vec::new();

        let mut row = vec![0.0; n];
        for i in mdp.layer_triples(0) {
            row[i] = 1.0;
        }
        eq_rows.push(row);
        eq_rhs.push(1.0);
        for k in 1..mdp.num_layers() {
            for x in mdp.layer(k) {
                let mut row = vec![0.0; n];
                for (s, a, nx, i) in mdp.triples() {
                    if nx == x {
                        row[i] += 1.0;
                    }
                    if s == x {
                        row[i] -= 1.0;
                    }
                    let _ = a;
                }
                eq_rows.push(row);
                eq_rhs.push(0.0);
            }
        }

        let mut ineq_rows: Vec<Vec<f64>> = Vec::new();
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let r = mdp.triple_range(s, a);
                if r.len() < 2 {
                    continue;
                }
                let degenerate = r.clone().all(|i| conf.width[i] == 0.0);
                for (pos, i) in r.clone().enumerate() {
                    let lo = conf.lower(i);
                    let hi = conf.upper(i);
                    if conf.width[i] == 0.0 {
                        // Fixed ratio; in a fully fixed row one equation is implied
                        // by the others.
                        if degenerate && pos + 1 == r.len() {
                            continue;
                        }
                        let mut row = vec![0.0; n];
                        for j in r.clone() {
                            row[j] = lo;
                        }
                        row[i] -= 1.0;
                        eq_rows.push(row);
                        eq_rhs.push(0.0);
                        continue;
                    }
                    if lo > 0.0 {
                        let mut row = vec![0.0; n];
                        for j in r.clone() {
                            row[j] = lo;
                        }
                        row[i] -= 1.0;
                        ineq_rows.push(row);
                    }
                    if hi < 1.0 {
                        let mut row = vec![0.0; n];
                        for j in r.clone() {
                            row[j] = -hi;
                        }
                        row[i] += 1.0;
                        ineq_rows.push(row);
                    }
                }
            }
        }
        let eq = rows_to_matrix(&eq_rows, n);
        let ineq = rows_to_matrix(&ineq_rows, n);

        let min_width = conf
            .width
            .iter()
            .copied()
            .filter(|&b| b > 0.0)
            .fold(1.0, f64::min);
        let eps = 0.5 * min_width;
        let uniform = TransitionFn::uniform(mdp);
        let mixed: Vec<f64> = conf
            .p_bar
            .as_slice()
            .iter()
            .zip(uniform.as_slice())
            .zip(&conf.width)
            .map(|((pb, u), b)| {
                if *b == 0.0 {
                    *pb
                } else {
                    (1.0 - eps) * pb + eps * u
                }
            })
            .collect();
        let mixed = TransitionFn::from_parts_unchecked(mixed, false);
        let interior = compute_occupancy(mdp, &mixed, &Policy::uniform(mdp))?
            .triples()
            .to_vec();
        Ok(Self {
            eq,
            eq_rhs,
            ineq,
            interior,
        })
    }

    pub fn interior_point(&self) -> &[f64] {
        &self.interior
    }

    pub fn num_inequalities(&self) -> usize {
        self.ineq.nrows()
    }

    /// Largest violation of the polytope's constraints at `q` (triples).
    pub fn violation(&self, q: &[f64]) -> f64 {
        self.program(vec![0.0; q.len()], vec![1.0; q.len()])
            .primal_residual(q)
    }

    /// Whether `q` is strictly inside every inequality and positive.
    pub fn strictly_feasible(&self, q: &[f64]) -> bool {
        let prog = self.program(vec![0.0; q.len()], vec![1.0; q.len()]);
        q.iter().all(|&v| v > 0.0)
            && prog.slack(q).iter().all(|&s| s > 1e-14)
            && prog.primal_residual(q) < 1e-11
    }

    pub fn program(&self, linear: Vec<f64>, weights: Vec<f64>) -> BarrierProgram {
        BarrierProgram {
            linear,
            weights,
            eq: self.eq.clone(),
            eq_rhs: self.eq_rhs.clone(),
            ineq: self.ineq.clone(),
            ineq_rhs: vec![0.0; self.ineq.nrows()],
        }
    }

    /// Strictly feasible start near `warm`: the first of `warm`, or its
    /// mixtures with the interior point, that clears every constraint.
    pub fn start_from(&self, warm: Option<&[f64]>) -> Vec<f64> {
        if let Some(w) = warm {
            for tau in [0.0, 0.01, 0.1, 0.5, 0.9] {
                let x: Vec<f64> = w
                    .iter()
                    .zip(&self.interior)
                    .map(|(a, b)| (1.0 - tau) * a + tau * b)
                    .collect();
                if self.strictly_feasible(&x) {
                    return x;
                }
            }
        }
        self.interior.clone()
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

/// `argmin_{q ∈ Ω(P_i)} η⟨q, g⟩ + D(q, prev)` with the triple-level
/// log-barrier Bregman divergence `D(q,p) = Σ q/p − 1 − log(q/p)`.
///
/// `g` is a per-pair table, applied to every triple of the pair.
pub fn omd_step(
    mdp: &LayeredMdp,
    poly: &ConfidencePolytope,
    prev: &[f64],
    g: &[f64],
    eta: f64,
    warm: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(OccupancyMeasure, SolveCertificate)> {
    if prev.len() != mdp.num_triples() || g.len() != mdp.num_pairs() {
        return Err(Error::Structure("OMD inputs do not match the MDP".into()));
    }
    if prev.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Invariant(
            "previous iterate must be strictly positive".into(),
        ));
    }
    let mut linear = vec![0.0; mdp.num_triples()];
    for (s, a, _, i) in mdp.triples() {
        linear[i] = eta * g[mdp.pair(s, a)] + 1.0 / prev[i];
    }
    let prog = poly.program(linear, vec![1.0; mdp.num_triples()]);
    let start = poly.start_from(Some(warm.unwrap_or(prev)));
    let sol = solve(&prog, &start, opts)?;
    finish(mdp, sol)
}

fn finish(mdp: &LayeredMdp, sol: Solution) -> Result<(OccupancyMeasure, SolveCertificate)> {
    if !sol.certificate.converged {
        return Err(Error::Solver {
            iterations: sol.certificate.iterations,
            residual: sol.certificate.residual,
        });
    }
    Ok((OccupancyMeasure::from_triples(mdp, sol.x)?, sol.certificate))
}

/// `Ω(P̃)` over pair occupancies for a (possibly sub-stochastic) transition.
///
/// States that `P̃` cannot reach carry no variables: their occupancy is
/// identically zero on the whole polytope.
#[derive(Debug, Clone)]
pub struct FlowPolytope {
    transition: TransitionFn,
    /// Pair index of each variable.
    vars: Vec<usize>,
    reachable: Vec<bool>,
    eq: DMatrix<f64>,
    eq_rhs: Vec<f64>,
    center_start: Vec<f64>,
}

/// States whose occupancy under the uniform policy falls below this are
/// treated as unreachable.
const REACH_FLOOR: f64 = 1e-13;

impl FlowPolytope {
    pub fn new(mdp: &LayeredMdp, transition: &TransitionFn) -> Result<Self> {
        let uniform = compute_occupancy(mdp, transition, &Policy::uniform(mdp))?;
        let reachable: Vec<bool> = (0..mdp.num_states())
            .map(|s| s == 0 || uniform.state(s) > REACH_FLOOR)
            .collect();
        let mut vars = Vec::new();
        let mut var_of = vec![usize::MAX; mdp.num_pairs()];
        for s in mdp.decision_states().filter(|&s| reachable[s]) {
            for a in 0..mdp.num_actions() {
                var_of[mdp.pair(s, a)] = vars.len();
                vars.push(mdp.pair(s, a));
            }
        }
        let n = vars.len();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut row = vec![0.0; n];
        for a in 0..mdp.num_actions() {
            row[var_of[mdp.pair(0, a)]] = 1.0;
        }
        rows.push(row);
        rhs.push(1.0);
        for k in 1..mdp.num_layers() {
            for x in mdp.layer(k).filter(|&x| reachable[x]) {
                let mut row = vec![0.0; n];
                for a in 0..mdp.num_actions() {
                    row[var_of[mdp.pair(x, a)]] = 1.0;
                }
                for s in mdp.layer(k - 1).filter(|&s| reachable[s]) {
                    for a in 0..mdp.num_actions() {
                        row[var_of[mdp.pair(s, a)]] -= transition.prob(mdp, s, a, x);
                    }
                }
                rows.push(row);
                rhs.push(0.0);
            }
        }
        let center_start: Vec<f64> = vars.iter().map(|&i| uniform.pairs()[i]).collect();
        Ok(Self {
            transition: transition.clone(),
            vars,
            reachable,
            eq: rows_to_matrix(&rows, n),
            eq_rhs: rhs,
            center_start,
        })
    }

    pub fn transition(&self) -> &TransitionFn {
        &self.transition
    }

    pub fn is_reachable(&self, s: usize) -> bool {
        self.reachable[s]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Pair index behind each variable.
    pub fn var_pairs(&self) -> &[usize] {
        &self.vars
    }

    pub fn restrict(&self, pairs: &[f64]) -> Vec<f64> {
        self.vars.iter().map(|&i| pairs[i]).collect()
    }

    pub fn expand(&self, mdp: &LayeredMdp, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mdp.num_pairs()];
        for (&i, &v) in self.vars.iter().zip(x) {
            out[i] = v;
        }
        out
    }

    pub fn program(&self, linear: Vec<f64>, weights: Vec<f64>) -> BarrierProgram {
        let n = self.vars.len();
        BarrierProgram {
            linear,
            weights,
            eq: self.eq.clone(),
            eq_rhs: self.eq_rhs.clone(),
            ineq: DMatrix::zeros(0, n),
            ineq_rhs: vec![],
        }
    }

    /// Restricted occupancy of the uniform policy; strictly positive.
    pub fn start(&self) -> &[f64] {
        &self.center_start
    }
}

/// `argmin_{q ∈ Ω(P̃)} ⟨q, G⟩ − Σ γ(s,a) log q(s,a)`. Returns the full pair table
/// (zeros at unreachable states).
pub fn ftrl_step(
    mdp: &LayeredMdp,
    poly: &FlowPolytope,
    cumulative: &[f64],
    gamma: &[f64],
    warm: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<(Vec<f64>, SolveCertificate)> {
    if cumulative.len() != mdp.num_pairs() || gamma.len() != mdp.num_pairs() {
        return Err(Error::Structure("FTRL inputs do not match the MDP".into()));
    }
    let prog = poly.program(poly.restrict(cumulative), poly.restrict(gamma));
    let start = match warm {
        Some(w) => {
            let x = poly.restrict(w);
            if x.iter().all(|&v| v > 0.0) && prog.primal_residual(&x) < 1e-11 {
                x
            } else {
                poly.start().to_vec()
            }
        }
        None => poly.start().to_vec(),
    };
    let sol = solve(&prog, &start, opts)?;
    if !sol.certificate.converged {
        return Err(Error::Solver {
            iterations: sol.certificate.iterations,
            residual: sol.certificate.residual,
        });
    }
    Ok((poly.expand(mdp, &sol.x), sol.certificate))
}
