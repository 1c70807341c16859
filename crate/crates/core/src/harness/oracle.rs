//! Brute-force cross-checks of the fast paths: upper occupancy bounds against
//! vertex enumeration, the interior-point updates against a first-order dual
//! method, loss shifting against raw cumulative losses, and the comparator
//! against direct scoring.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::regret::{best_fixed_policy, nth_policy, policy_count};
use crate::adversary::{
    make_transition_adversary, LossSchedule, TransitionAdversary, TransitionSchedule,
};
use crate::error::Result;
use crate::estimation::ConfidenceSet;
use crate::learners::loss_shift_g;
use crate::mdp::{
    compute_occupancy, expected_loss, extract_policy, sample_trajectory, LayeredMdp, LossFn,
    Policy, TransitionFn,
};
use crate::solvers::{
    ftrl_step, omd_step, BarrierProgram, ConfidencePolytope, FlowPolytope, SolverOptions,
};
use crate::uob::comp_uob;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, instances: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

pub fn random_policy<R: Rng + ?Sized>(mdp: &LayeredMdp, rng: &mut R) -> Policy {
    let mut probs = Vec::with_capacity(mdp.num_pairs());
    for _ in mdp.decision_states() {
        let w: Vec<f64> = (0..mdp.num_actions())
            .map(|_| rng.gen_range(0.05..1.0))
            .collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.iter().map(|x| x / z));
    }
    Policy::new(mdp, probs).expect("normalised rows")
}

/// A confidence set with the given centre and widths.
pub fn manual_confidence_set(p_bar: &TransitionFn, width: Vec<f64>) -> ConfidenceSet {
    ConfidenceSet {
        p_bar: p_bar.clone(),
        width,
        theta: 0.0,
        delta: 0.1,
        log_iota: 1.0,
    }
}

/// Vertices of `{lower ≤ p ≤ upper, Σ p = 1}`: every coordinate but one at a bound.
pub fn box_vertices(lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let n = lower.len();
    let mut out = Vec::new();
    for free in 0..n {
        for mask in 0..(1usize << (n - 1)) {
            let mut p = vec![0.0; n];
            let mut bit = 0;
            let mut fixed = 0.0;
            for j in 0..n {
                if j == free {
                    continue;
                }
                p[j] = if mask >> bit & 1 == 1 { upper[j] } else { lower[j] };
                fixed += p[j];
                bit += 1;
            }
            let rest = 1.0 - fixed;
            if rest >= lower[free] - 1e-12 && rest <= upper[free] + 1e-12 {
                p[free] = rest;
                out.push(p);
            }
        }
    }
    out
}

/// `max q^{P̂,π}(s)` over every transition whose rows are vertices of their boxes.
pub fn uob_by_enumeration(mdp: &LayeredMdp, conf: &ConfidenceSet, pi: &Policy) -> Result<Vec<f64>> {
    let rows: Vec<(usize, usize)> = mdp
        .decision_states()
        .flat_map(|s| (0..mdp.num_actions()).map(move |a| (s, a)))
        .collect();
    let choices: Vec<Vec<Vec<f64>>> = rows
        .iter()
        .map(|&(s, a)| {
            let r = mdp.triple_range(s, a);
            let lo: Vec<f64> = r.clone().map(|i| conf.lower(i)).collect();
            let hi: Vec<f64> = r.map(|i| conf.upper(i)).collect();
            box_vertices(&lo, &hi)
        })
        .collect();
    let mut best = vec![0.0f64; mdp.num_states()];
    let mut idx = vec![0usize; rows.len()];
    loop {
        let mut probs = vec![0.0; mdp.num_triples()];
        for (k, &(s, a)) in rows.iter().enumerate() {
            probs[mdp.triple_range(s, a)].copy_from_slice(&choices[k][idx[k]]);
        }
        let p = TransitionFn::from_parts_unchecked(probs, false);
        let q = compute_occupancy(mdp, &p, pi)?;
        for (b, s) in best.iter_mut().zip(0..) {
            *b = b.max(q.state(s));
        }
        let mut k = 0;
        loop {
            if k == rows.len() {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Projected gradient ascent on the Lagrange dual of a barrier program,
/// with a redundant box `x ≤ cap` whose multipliers make the zero start dual
/// feasible. The primal point is recovered as `x = w / (c + Aᵀν + Gᵀλ + μ)`.
///
/// Returns the primal point and the number of iterations used.
pub fn dual_first_order(prog: &BarrierProgram, cap: f64, tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
    let n = prog.dim();
    let m = prog.eq.nrows();
    let k = prog.ineq.nrows();
    let c = DVector::from_column_slice(&prog.linear);
    let w = DVector::from_column_slice(&prog.weights);
    let b = DVector::from_column_slice(&prog.eq_rhs);
    let h = DVector::from_column_slice(&prog.ineq_rhs);
    let at = prog.eq.transpose();
    let gt = prog.ineq.transpose();

    let reduced = |nu: &DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>| -> DVector<f64> {
        &c + &at * nu + &gt * lam + mu
    };
    let grads = |x: &DVector<f64>| (&prog.eq * x - &b, &prog.ineq * x - &h, x.map(|v| v - cap));

    let mut nu = DVector::zeros(m);
    let mut lam = DVector::zeros(k);
    let mut mu = DVector::from_fn(n, |i, _| (1.0 - c[i]).max(0.0));
    let mut x = w.component_div(&reduced(&nu, &lam, &mu));
    let (mut g_nu, mut g_lam, mut g_mu) = grads(&x);
    let mut step = 1e-2;
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let kkt = g_nu
            .amax()
            .max(g_lam.iter().fold(0.0f64, |a, &v| a.max(v)))
            .max(lam.iter().zip(g_lam.iter()).fold(0.0f64, |a, (l, v)| a.max((l * v).abs())))
            .max(mu.iter().zip(g_mu.iter()).fold(0.0f64, |a, (l, v)| a.max((l * v).abs())));
        if kkt <= tol {
            break;
        }
        // Backtrack until the step stays inside the domain and the gradient
        // is locally 1/step-Lipschitz along it, which guarantees ascent.
        loop {
            let nu2 = &nu + &g_nu * step;
            let lam2 = (&lam + &g_lam * step).map(|v| v.max(0.0));
            let mu2 = (&mu + &g_mu * step).map(|v| v.max(0.0));
            let r2 = reduced(&nu2, &lam2, &mu2);
            if r2.iter().all(|&v| v > 0.0) {
                let x2 = w.component_div(&r2);
                let (h_nu, h_lam, h_mu) = grads(&x2);
                let moved = ((&nu2 - &nu).norm_squared()
                    + (&lam2 - &lam).norm_squared()
                    + (&mu2 - &mu).norm_squared())
                .sqrt();
                let change = ((&h_nu - &g_nu).norm_squared()
                    + (&h_lam - &g_lam).norm_squared()
                    + (&h_mu - &g_mu).norm_squared())
                .sqrt();
                if step * change <= 0.9 * moved {
                    nu = nu2;
                    lam = lam2;
                    mu = mu2;
                    x = x2;
                    (g_nu, g_lam, g_mu) = (h_nu, h_lam, h_mu);
                    step *= 1.25;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-300 {
                return (x.as_slice().to_vec(), iters);
            }
        }
    }
    (x.as_slice().to_vec(), iters)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn tiny_mdp<R: Rng + ?Sized>(rng: &mut R) -> LayeredMdp {
    let layers = if rng.gen_bool(0.5) {
        vec![1, 2, 2, 1]
    } else {
        vec![1, 3, 1]
    };
    LayeredMdp::new(layers, 2).expect("valid shape")
}

pub fn check_comp_uob(seed: u64, instances: usize) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mdp = tiny_mdp(&mut rng);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let width = (0..mdp.num_triples()).map(|_| rng.gen_range(0.0..0.5)).collect();
        let conf = manual_confidence_set(&p, width);
        let pi = random_policy(&mdp, &mut rng);
        let fast = comp_uob(&mdp, &conf, &pi)?;
        let slow = uob_by_enumeration(&mdp, &conf, &pi)?;
        worst = worst.max(max_abs_diff(&fast.states, &slow));
    }
    Ok(OracleCheck::new("comp_uob_vs_vertex_enumeration", instances, worst, 1e-9))
}

const FIRST_ORDER_TOL: f64 = 1e-11;
const FIRST_ORDER_ITERS: usize = 2_000_000;

pub fn check_omd_step(seed: u64, instances: usize) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mdp = tiny_mdp(&mut rng);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let width = (0..mdp.num_triples()).map(|_| rng.gen_range(0.02..0.3)).collect();
        let conf = manual_confidence_set(&p, width);
        let poly = ConfidencePolytope::new(&mdp, &conf)?;
        let prev = compute_occupancy(&mdp, &p, &random_policy(&mdp, &mut rng))?;
        let g: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let eta = rng.gen_range(0.05..2.0);
        let (fast, _) = omd_step(&mdp, &poly, prev.triples(), &g, eta, None, SolverOptions::default())?;
        let linear = mdp
            .triples()
            .map(|(s, a, _, i)| eta * g[mdp.pair(s, a)] + 1.0 / prev.triples()[i])
            .collect();
        let prog = poly.program(linear, vec![1.0; mdp.num_triples()]);
        let (slow, _) = dual_first_order(&prog, 2.0, FIRST_ORDER_TOL, FIRST_ORDER_ITERS);
        worst = worst.max(max_abs_diff(fast.triples(), &slow));
    }
    Ok(OracleCheck::new("omd_step_vs_first_order", instances, worst, 1e-6))
}

fn sub_stochastic<R: Rng + ?Sized>(mdp: &LayeredMdp, rng: &mut R) -> Result<TransitionFn> {
    let p = TransitionFn::random(mdp, 1.0, rng);
    let mut probs = p.as_slice().to_vec();
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let scale = rng.gen_range(0.3..1.0);
            probs[mdp.triple_range(s, a)].iter_mut().for_each(|x| *x *= scale);
        }
    }
    TransitionFn::new(mdp, probs, true)
}

pub fn check_ftrl_step(seed: u64, instances: usize) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mdp = tiny_mdp(&mut rng);
        let tilde = sub_stochastic(&mdp, &mut rng)?;
        let poly = FlowPolytope::new(&mdp, &tilde)?;
        let n = mdp.num_pairs();
        let cumulative: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..20.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..50.0)).collect();
        let (fast, _) = ftrl_step(&mdp, &poly, &cumulative, &gamma, None, SolverOptions::default())?;
        let prog = poly.program(poly.restrict(&cumulative), poly.restrict(&gamma));
        let (slow, _) = dual_first_order(&prog, 2.0, FIRST_ORDER_TOL, FIRST_ORDER_ITERS);
        worst = worst.max(max_abs_diff(&poly.restrict(&fast), &slow));
    }
    Ok(OracleCheck::new("ftrl_step_vs_first_order", instances, worst, 1e-6))
}

/// FTRL on raw importance-weighted estimates and on their shifted versions
/// `Q − V` under a sub-stochastic transition; both iterates must agree.
pub fn check_loss_shift(seed: u64, episodes: usize) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = LayeredMdp::new(vec![1, 3, 3, 1], 2)?;
    let p = TransitionFn::random(&mdp, 1.0, &mut rng);
    let tilde: Vec<f64> = p.as_slice().iter().map(|x| 0.8 * x).collect();
    let tilde = TransitionFn::new(&mdp, tilde, true)?;
    let poly = FlowPolytope::new(&mdp, &tilde)?;
    let n = mdp.num_pairs();
    let l = mdp.num_layers() as f64;
    let gamma = vec![256.0 * l * l * mdp.num_states() as f64; n];
    let opts = SolverOptions::default();
    let mut raw = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for _ in 0..episodes {
        let (q, _) = ftrl_step(&mdp, &poly, &raw, &gamma, None, opts)?;
        let pi = extract_policy(&mdp, &q)?;
        let loss = LossFn::new(&mdp, (0..n).map(|_| rng.gen()).collect())?;
        let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
        let occ = compute_occupancy(&mdp, &p, &pi)?;
        let mut est = vec![0.0; n];
        for st in &traj.steps {
            let i = mdp.pair(st.state, st.action);
            est[i] = st.loss / occ.pairs()[i];
        }
        let g = loss_shift_g(&mdp, &tilde, &pi, &est)?;
        for i in 0..n {
            raw[i] += est[i];
            shifted[i] += g[i];
        }
        let (a, _) = ftrl_step(&mdp, &poly, &raw, &gamma, None, opts)?;
        let (b, _) = ftrl_step(&mdp, &poly, &shifted, &gamma, None, opts)?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    Ok(OracleCheck::new("loss_shift_equivalence", episodes, worst, 1e-7))
}

/// Scores every deterministic policy episode by episode and returns the
/// lexicographically first minimiser.
fn comparator_by_scoring(
    mdp: &LayeredMdp,
    schedule: &TransitionSchedule,
    losses: &LossSchedule,
) -> Result<(Vec<usize>, f64)> {
    let count = policy_count(mdp) as u64;
    let mut scores = Vec::with_capacity(count as usize);
    for index in 0..count {
        let pi = Policy::deterministic(mdp, &nth_policy(mdp, index))?;
        let mut total = 0.0;
        for t in 0..schedule.horizon() {
            total += expected_loss(mdp, schedule.get(t), &pi, losses.get(t))?;
        }
        scores.push(total);
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let first = scores
        .iter()
        .position(|&s| s <= min + 1e-9 * min.abs().max(1.0))
        .expect("nonempty");
    Ok((nth_policy(mdp, first as u64), scores[first]))
}

/// Exhaustive comparator against direct per-episode scoring, including
/// instances built to have many tied optima.
pub fn check_comparator(seed: u64, instances: usize) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0usize;
    for k in 0..instances {
        let mdp = tiny_mdp(&mut rng);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let horizon = 30;
        let budget = rng.gen_range(0.0..4.0);
        let kind = if k % 2 == 0 {
            TransitionAdversary::Burst
        } else {
            TransitionAdversary::Spread
        };
        let schedule = make_transition_adversary(&mdp, kind, &p, budget, horizon, None)?;
        let tied = k % 3 == 0;
        let tables: Vec<LossFn> = (0..horizon)
            .map(|_| {
                let mut v: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen()).collect();
                if tied {
                    // Both actions share a loss; only transitions can tell them apart.
                    for s in mdp.decision_states() {
                        v[mdp.pair(s, 1)] = v[mdp.pair(s, 0)];
                    }
                }
                LossFn::new(&mdp, v)
            })
            .collect::<Result<_>>()?;
        let losses = LossSchedule::from_tables(tables);
        let fast = best_fixed_policy(&mdp, &schedule, &losses, 1_000_000)?;
        let again = best_fixed_policy(&mdp, &schedule, &losses, 1_000_000)?;
        let (actions, total) = comparator_by_scoring(&mdp, &schedule, &losses)?;
        if fast.actions != actions || again != fast {
            mismatches += 1;
        }
        worst = worst.max((fast.total - total).abs());
    }
    let error = if mismatches > 0 { f64::INFINITY } else { worst };
    Ok(OracleCheck::new("best_fixed_policy_vs_scoring", instances, error, 1e-9))
}

/// Every cross-check at the acceptance sizes.
pub fn run_oracles(seed: u64) -> Result<Vec<OracleCheck>> {
    Ok(vec![
        check_comp_uob(seed, 50)?,
        check_omd_step(seed.wrapping_add(1), 20)?,
        check_ftrl_step(seed.wrapping_add(2), 20)?,
        check_loss_shift(seed.wrapping_add(3), 20)?,
        check_comparator(seed.wrapping_add(4), 20)?,
    ])
}
