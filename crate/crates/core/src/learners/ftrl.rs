//! FTRL over the optimistic-transition polytope with per-pair adaptive
//! log-barrier rates, restarted at every epoch.

use super::{audit_confidence, audit_uob_dominance, clamp_delta, Audit, Feedback, Learner, StepRecord};
use crate::error::{Error, Result};
use crate::estimation::{log_iota, ConfidenceSet, EpochCounters};
use crate::mdp::{extract_policy, value_functions, LayeredMdp, Policy, TransitionFn};
use crate::solvers::{ftrl_step, FlowPolytope, SolverOptions};
use crate::uob::{comp_uob, loss_estimator, per_pair, BonusState};

#[derive(Debug, Clone, PartialEq)]
pub struct FtrlConfig {
    pub theta: f64,
    pub horizon: usize,
    /// Defaults to `min(1/T², 1/2)`.
    pub delta: Option<f64>,
    pub solver: SolverOptions,
}

impl FtrlConfig {
    pub fn new(theta: f64, horizon: usize) -> Self {
        Self {
            theta,
            horizon,
            delta: None,
            solver: SolverOptions::default(),
        }
    }
}

/// `ν(s,a) = q(s,a)² (Q(s,a) − V(s))²`.
pub fn nu(mdp: &LayeredMdp, q_pairs: &[f64], q_values: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let i = mdp.pair(s, a);
            out[i] = (q_pairs[i] * (q_values[i] - v[s])).powi(2);
        }
    }
    out
}

/// `γ' = γ + D ν / (2γ)`, entrywise.
pub fn lr_update(gamma: &[f64], nu: &[f64], d: f64) -> Vec<f64> {
    gamma
        .iter()
        .zip(nu)
        .map(|(g, n)| g + d * n / (2.0 * g))
        .collect()
}

/// Shifted loss `g(s,a) = Q(s,a) − V(s)` under `p` and `pi`.
pub fn loss_shift_g(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    pi: &Policy,
    loss: &[f64],
) -> Result<Vec<f64>> {
    let (v, q) = value_functions(mdp, p, pi, loss)?;
    let mut g = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let i = mdp.pair(s, a);
            g[i] = q[i] - v[s];
        }
    }
    Ok(g)
}

/// Flow residual of a pair table under a sub-stochastic transition:
/// negativity, unit mass out of `s0`, and `Σ_a q(x,a) = Σ q(s,a) P(x|s,a)`.
fn pair_flow_residual(mdp: &LayeredMdp, p: &TransitionFn, q: &[f64]) -> f64 {
    let mut worst = q.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    let start: f64 = (0..mdp.num_actions())
        .map(|a| q[mdp.pair(mdp.initial(), a)])
        .sum();
    worst = worst.max((start - 1.0).abs());
    let mut inflow = vec![0.0; mdp.num_states()];
    for (s, a, n, i) in mdp.triples() {
        inflow[n] += q[mdp.pair(s, a)] * p.as_slice()[i];
    }
    for s in mdp.decision_states().skip(1) {
        let out: f64 = (0..mdp.num_actions()).map(|a| q[mdp.pair(s, a)]).sum();
        worst = worst.max((out - inflow[s]).abs());
    }
    worst
}

fn state_marginals(mdp: &LayeredMdp, q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mdp.num_states()];
    for s in mdp.decision_states() {
        out[s] = (0..mdp.num_actions()).map(|a| q[mdp.pair(s, a)]).sum();
    }
    out
}

pub struct FtrlLearner {
    mdp: LayeredMdp,
    cfg: FtrlConfig,
    delta: f64,
    d: f64,
    gamma_init: f64,
    t: usize,
    counters: EpochCounters,
    conf: ConfidenceSet,
    optimistic: TransitionFn,
    poly: FlowPolytope,
    bonus: BonusState,
    window: usize,
    /// `Σ (ℓ̂ − b)` over the current epoch.
    cumulative: Vec<f64>,
    /// `Σ (g − b)` over the current epoch.
    shifted: Vec<f64>,
    gamma: Vec<f64>,
    nu_sum: Vec<f64>,
    q: Vec<f64>,
    policy: Policy,
    record: StepRecord,
    audit: Audit,
    reference: Option<TransitionFn>,
}

impl FtrlLearner {
    pub fn new(mdp: &LayeredMdp, cfg: FtrlConfig) -> Result<Self> {
        if !(cfg.theta >= 0.0) || !cfg.theta.is_finite() {
            return Err(Error::Parameter(format!(
                "corruption guess {} must be nonnegative",
                cfg.theta
            )));
        }
        if cfg.horizon == 0 {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        let horizon = cfg.horizon as f64;
        let delta = cfg
            .delta
            .unwrap_or_else(|| clamp_delta(1.0 / (horizon * horizon)));
        let d = 1.0 / log_iota(mdp, cfg.horizon, delta)?;
        let l = mdp.num_layers() as f64;
        let gamma_init = 256.0 * l * l * mdp.num_states() as f64;
        let counters = EpochCounters::new(mdp);
        let conf = ConfidenceSet::new(mdp, &counters, cfg.theta, delta, cfg.horizon)?;
        let optimistic = conf.optimistic_transition();
        let poly = FlowPolytope::new(mdp, &optimistic)?;
        let n = mdp.num_pairs();
        let gamma = vec![gamma_init; n];
        let (q, cert) = ftrl_step(mdp, &poly, &vec![0.0; n], &gamma, None, cfg.solver)?;
        let policy = extract_policy(mdp, &q)?;
        let record = StepRecord {
            epoch: 1,
            occupancy: state_marginals(mdp, &q),
            solver_iters: cert.iterations,
            gamma_max: gamma_init,
            ..StepRecord::default()
        };
        Ok(Self {
            mdp: mdp.clone(),
            bonus: BonusState::new(mdp, cfg.theta),
            cfg,
            delta,
            d,
            gamma_init,
            t: 0,
            counters,
            conf,
            optimistic,
            poly,
            window: 0,
            cumulative: vec![0.0; n],
            shifted: vec![0.0; n],
            gamma,
            nu_sum: vec![0.0; n],
            q,
            policy,
            record,
            audit: Audit::new(false),
            reference: None,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `D = 1 / ln ι`.
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_init(&self) -> f64 {
        self.gamma_init
    }

    /// Current iterate over pairs (zero at unreachable states).
    pub fn occupancy(&self) -> &[f64] {
        &self.q
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn shifted_cumulative(&self) -> &[f64] {
        &self.shifted
    }

    pub fn polytope(&self) -> &FlowPolytope {
        &self.poly
    }

    pub fn optimistic(&self) -> &TransitionFn {
        &self.optimistic
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.cfg.solver
    }

    pub fn episodes(&self) -> usize {
        self.t
    }

    fn audit_step(&mut self, u: &[f64], loss_hat: &[f64], b_pair: &[f64], g: &[f64]) -> Result<()> {
        let mdp = &self.mdp;
        let t = self.t;
        let l = mdp.num_layers() as f64;
        let q_state = state_marginals(mdp, &self.q);
        let floor = 1.0 / (mdp.num_states() as f64 * self.cfg.horizon as f64);
        for s in mdp.decision_states() {
            self.audit.le("uob_floor", floor, u[s], || {
                format!("episode {t}, state {s}")
            });
            self.audit
                .le("occupancy_below_uob", q_state[s], u[s] + 1e-9, || {
                    format!("episode {t}, state {s}")
                });
        }
        let flow = pair_flow_residual(mdp, &self.optimistic, &self.q);
        self.audit
            .le("flow_residual", flow, 1e-10, || format!("episode {t}"));

        let mut local = 0.0;
        for i in 0..mdp.num_pairs() {
            let adv = (self.q[i] * g[i]).abs();
            self.audit.le("advantage_bound", adv, l + 1e-9, || {
                format!("episode {t}, pair {i}")
            });
            local += (self.q[i] * (loss_hat[i] - b_pair[i])).powi(2) / self.gamma[i];
            let cap = (self.d * self.nu_sum[i]).sqrt() + self.gamma_init;
            self.audit.le(
                "gamma_induction",
                self.gamma[i],
                cap * (1.0 + 1e-12),
                || format!("episode {t}, pair {i}"),
            );
        }
        self.audit
            .le("local_norm", local, 0.125, || format!("episode {t}"));

        // Iterate after adding this episode's estimate at the current rates.
        let next: Vec<f64> = self
            .cumulative
            .iter()
            .zip(loss_hat.iter().zip(b_pair))
            .map(|(c, (l, b))| c + l - b)
            .collect();
        let (q_tilde, _) = ftrl_step(
            mdp,
            &self.poly,
            &next,
            &self.gamma,
            Some(&self.q),
            self.cfg.solver,
        )?;
        for &i in self.poly.var_pairs() {
            let ratio = q_tilde[i] / self.q[i];
            self.audit
                .within("multiplicative_stability", ratio, 0.5, 2.0, || {
                    format!("episode {t}, pair {i}")
                });
        }
        Ok(())
    }
}

impl Learner for FtrlLearner {
    fn policy(&mut self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()> {
        self.t += 1;
        let traj = match feedback {
            Feedback::Skip => {
                self.record.updated = false;
                self.record.solver_iters = 0;
                return Ok(());
            }
            Feedback::Trajectory(traj) => traj,
        };
        let mdp = &self.mdp;
        let u = comp_uob(mdp, &self.conf, &self.policy)?;
        let loss_hat = loss_estimator(mdp, traj, &u)?;
        let b = self.bonus.bonus(mdp, &u)?;
        let b_pair = per_pair(mdp, &b);
        let (v, qv) = value_functions(mdp, &self.optimistic, &self.policy, &loss_hat)?;
        let nu_t = nu(mdp, &self.q, &qv, &v);
        let mut g = vec![0.0; mdp.num_pairs()];
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let i = mdp.pair(s, a);
                g[i] = qv[i] - v[s];
            }
        }
        if self.audit.is_enabled() {
            self.audit_step(&u.states, &loss_hat, &b_pair, &g)?;
            if self.t == self.counters.epoch_start() {
                audit_uob_dominance(&mut self.audit, &self.mdp, &self.conf, &self.policy, &u.states, self.t as u64)?;
            }
        }
        let mdp = &self.mdp;

        let q_state = state_marginals(mdp, &self.q);
        self.record.bonus_mass = mdp.decision_states().map(|s| q_state[s] * b[s]).sum();
        self.record.upper = u.states;
        self.record.bonus = b;
        self.record.occupancy = q_state;
        self.record.updated = true;
        self.record.bonus_window = self.window;

        self.gamma = lr_update(&self.gamma, &nu_t, self.d);
        for i in 0..mdp.num_pairs() {
            self.nu_sum[i] += nu_t[i];
            self.cumulative[i] += loss_hat[i] - b_pair[i];
            self.shifted[i] += g[i] - b_pair[i];
        }

        let fresh = self.counters.record(mdp, traj, self.t);
        if fresh {
            self.cumulative.iter_mut().for_each(|c| *c = 0.0);
            self.shifted.iter_mut().for_each(|c| *c = 0.0);
            self.nu_sum.iter_mut().for_each(|c| *c = 0.0);
            self.gamma.iter_mut().for_each(|g| *g = self.gamma_init);
            self.bonus.reset();
            self.window += 1;
            self.conf = ConfidenceSet::new(
                mdp,
                &self.counters,
                self.cfg.theta,
                self.delta,
                self.cfg.horizon,
            )?;
            self.optimistic = self.conf.optimistic_transition();
            self.poly = FlowPolytope::new(mdp, &self.optimistic)?;
            if let Some(p) = &self.reference {
                audit_confidence(
                    &mut self.audit,
                    mdp,
                    &self.conf,
                    p,
                    self.counters.epoch() as u64,
                )?;
            }
        }
        self.record.epoch = self.counters.epoch();

        let warm = if fresh { None } else { Some(self.q.as_slice()) };
        let (q, cert) = ftrl_step(
            mdp,
            &self.poly,
            &self.cumulative,
            &self.gamma,
            warm,
            self.cfg.solver,
        )?;
        self.record.solver_iters = cert.iterations;
        self.record.gamma_max = self.gamma.iter().copied().fold(0.0, f64::max);
        self.policy = extract_policy(mdp, &q)?;
        self.q = q;
        Ok(())
    }

    fn epoch(&self) -> usize {
        self.counters.epoch()
    }

    fn record(&self) -> &StepRecord {
        &self.record
    }

    fn confidence_set(&self) -> Option<&ConfidenceSet> {
        Some(&self.conf)
    }

    fn audit_mut(&mut self) -> &mut Audit {
        &mut self.audit
    }

    fn enable_audit(&mut self, reference: Option<TransitionFn>) {
        self.audit.set_enabled(true);
        self.reference = reference;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{compute_occupancy, sample_trajectory, LossFn, Trajectory};
    use crate::solvers::kkt_residual;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> LayeredMdp {
        LayeredMdp::new(vec![1, 3, 3, 1], 2).unwrap()
    }

    fn random_policy(mdp: &LayeredMdp, rng: &mut ChaCha8Rng) -> Policy {
        let mut probs = vec![0.0; mdp.num_pairs()];
        for s in mdp.decision_states() {
            let row: Vec<f64> = (0..mdp.num_actions())
                .map(|_| rng.gen_range(0.01..1.0))
                .collect();
            let total: f64 = row.iter().sum();
            for a in 0..mdp.num_actions() {
                probs[mdp.pair(s, a)] = row[a] / total;
            }
        }
        Policy::new(mdp, probs).unwrap()
    }

    #[test]
    fn initial_rate_and_center() {
        let mdp = desk();
        let mut l = FtrlLearner::new(&mdp, FtrlConfig::new(0.0, 100)).unwrap();
        assert_eq!(l.gamma_init(), 256.0 * 9.0 * 8.0);
        assert!(l.gamma().iter().all(|&g| g == 256.0 * 9.0 * 8.0));
        // Zero counts: every width is one and the optimistic transition is empty.
        assert!(l.optimistic().as_slice().iter().all(|&p| p == 0.0));
        assert_eq!(l.polytope().num_vars(), 2);
        let pi = l.policy().unwrap();
        assert!(pi.as_slice().iter().all(|&p| (p - 0.5).abs() < 1e-12));
        let d = l.d();
        let li = (8.0f64 * 2.0 * 100.0 / (1.0 / 10_000.0)).ln();
        assert!((d - 1.0 / li).abs() < 1e-15);
    }

    #[test]
    fn lr_update_examples() {
        let gamma = vec![256.0 * 9.0 * 8.0];
        assert_eq!(lr_update(&gamma, &[0.0], 0.1), gamma);
        let l2 = 9.0;
        let next = lr_update(&gamma, &[l2], 0.1);
        let expect = gamma[0] + 0.05 / (256.0 * 8.0);
        assert!((next[0] - expect).abs() < 1e-12);
    }

    /// Independent recursion for the 2-action one-step-then-terminal example.
    #[test]
    fn nu_matches_hand_recursion() {
        let mdp = LayeredMdp::new(vec![1, 2, 1], 2).unwrap();
        let p =
            TransitionFn::new(&mdp, vec![0.7, 0.3, 0.2, 0.8, 1.0, 1.0, 1.0, 1.0], false).unwrap();
        let pi = Policy::new(&mdp, vec![0.6, 0.4, 0.5, 0.5, 0.9, 0.1]).unwrap();
        let loss = vec![0.0, 2.0, 1.0, 3.0, 4.0, 0.0];
        let q = compute_occupancy(&mdp, &p, &pi).unwrap();
        let (v, qv) = value_functions(&mdp, &p, &pi, &loss).unwrap();
        let got = nu(&mdp, q.pairs(), &qv, &v);

        let v1: f64 = 0.5 * 1.0 + 0.5 * 3.0;
        let v2: f64 = 0.9 * 4.0 + 0.1 * 0.0;
        let q00 = 0.0 + 0.7 * v1 + 0.3 * v2;
        let q01 = 2.0 + 0.2 * v1 + 0.8 * v2;
        let v0 = 0.6 * q00 + 0.4 * q01;
        let occ1 = 0.6 * 0.7 + 0.4 * 0.2;
        let occ2 = 1.0 - occ1;
        let expect = [
            (0.6 * (q00 - v0)).powi(2),
            (0.4 * (q01 - v0)).powi(2),
            (occ1 * 0.5 * (1.0 - v1)).powi(2),
            (occ1 * 0.5 * (3.0 - v1)).powi(2),
            (occ2 * 0.9 * (4.0 - v2)).powi(2),
            (occ2 * 0.1 * (0.0 - v2)).powi(2),
        ];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{got:?} vs {expect:?}");
        }
        assert!(nu(&mdp, q.pairs(), &vec![0.0; 6], &vec![0.0; 5])
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn single_action_has_no_advantage() {
        let mdp = LayeredMdp::new(vec![1, 2, 2, 1], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let pi = Policy::uniform(&mdp);
        let loss: Vec<f64> = (0..mdp.num_pairs())
            .map(|_| rng.gen::<f64>() * 5.0)
            .collect();
        let g = loss_shift_g(&mdp, &p, &pi, &loss).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        assert!(loss_shift_g(&mdp, &p, &pi, &vec![0.0; mdp.num_pairs()])
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// `⟨q', g − ℓ⟩ = −V(s0)` for every occupancy of the same transition, so
        /// `g` and `ℓ` differ by a constant on the polytope.
        #[test]
        fn shifted_loss_is_policy_independent(seed in 0u64..10_000) {
            let mdp = desk();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = TransitionFn::random(&mdp, 1.0, &mut rng);
            // Make it sub-stochastic like an optimistic transition.
            let shrunk: Vec<f64> = p.as_slice().iter().map(|x| x * rng.gen_range(0.3..1.0)).collect();
            p = TransitionFn::new(&mdp, shrunk, true).unwrap();
            let pi = random_policy(&mdp, &mut rng);
            let loss: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen::<f64>() * 10.0).collect();
            let g = loss_shift_g(&mdp, &p, &pi, &loss).unwrap();
            let (v, _) = value_functions(&mdp, &p, &pi, &loss).unwrap();
            for _ in 0..20 {
                let other = random_policy(&mdp, &mut rng);
                let q = compute_occupancy(&mdp, &p, &other).unwrap();
                prop_assert!((q.dot(&g) - q.dot(&loss) + v[0]).abs() < 1e-9);
            }
        }

        #[test]
        fn lr_update_monotone(g0 in 1.0f64..1e4, n in 0.0f64..100.0, d in 0.0f64..1.0) {
            let next = lr_update(&[g0], &[n], d);
            prop_assert!(next[0] >= g0);
        }
    }

    fn run(
        mdp: &LayeredMdp,
        p: &TransitionFn,
        l: &mut FtrlLearner,
        episodes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Trajectory> {
        let mut out = Vec::new();
        for _ in 0..episodes {
            let loss = LossFn::new(mdp, (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).unwrap();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(mdp, p, &pi, &loss, rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            out.push(traj);
        }
        out
    }

    #[test]
    fn epoch_restart_returns_center_of_new_polytope() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let mut l = FtrlLearner::new(&mdp, FtrlConfig::new(0.0, 500)).unwrap();
        let loss = LossFn::new(&mdp, (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).unwrap();
        for _ in 0..200 {
            let e = l.epoch();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            if l.epoch() != e {
                assert!(l.cumulative().iter().all(|&c| c == 0.0));
                assert!(l.gamma().iter().all(|&g| g == l.gamma_init()));
                let n = mdp.num_pairs();
                let (center, _) = ftrl_step(
                    &mdp,
                    l.polytope(),
                    &vec![0.0; n],
                    &vec![1.0; n],
                    None,
                    SolverOptions::default(),
                )
                .unwrap();
                for (a, b) in center.iter().zip(l.occupancy()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
        assert!(l.epoch() > 3);
    }

    #[test]
    fn zero_losses_keep_rates() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let mut l = FtrlLearner::new(&mdp, FtrlConfig::new(0.0, 100)).unwrap();
        let loss = LossFn::constant(&mdp, 0.0).unwrap();
        for _ in 0..30 {
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            assert!(l.gamma().iter().all(|&g| g == l.gamma_init()));
        }
    }

    #[test]
    fn shifted_and_raw_cumulatives_give_the_same_iterate() {
        // A hand-made sub-stochastic transition reaching every state, fed with
        // importance-weighted estimates along the FTRL iterates.
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let tilde: Vec<f64> = p.as_slice().iter().map(|x| 0.8 * x).collect();
        let tilde = TransitionFn::new(&mdp, tilde, true).unwrap();
        let poly = FlowPolytope::new(&mdp, &tilde).unwrap();
        assert_eq!(poly.num_vars(), mdp.num_pairs());
        let n = mdp.num_pairs();
        let gamma = vec![256.0 * 9.0 * 8.0; n];
        let opts = SolverOptions::default();
        let mut raw = vec![0.0; n];
        let mut shifted = vec![0.0; n];
        for _ in 0..20 {
            let (q, _) = ftrl_step(&mdp, &poly, &raw, &gamma, None, opts).unwrap();
            let pi = extract_policy(&mdp, &q).unwrap();
            let loss = LossFn::new(&mdp, (0..n).map(|_| rng.gen()).collect()).unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            let occ = compute_occupancy(&mdp, &p, &pi).unwrap();
            let mut est = vec![0.0; n];
            for st in &traj.steps {
                let i = mdp.pair(st.state, st.action);
                est[i] = st.loss / occ.pairs()[i];
            }
            let g = loss_shift_g(&mdp, &tilde, &pi, &est).unwrap();
            for i in 0..n {
                raw[i] += est[i];
                shifted[i] += g[i];
            }
            let (a, _) = ftrl_step(&mdp, &poly, &raw, &gamma, None, opts).unwrap();
            let (b, _) = ftrl_step(&mdp, &poly, &shifted, &gamma, None, opts).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-7, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn learner_tracks_both_cumulatives() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let mut l = FtrlLearner::new(&mdp, FtrlConfig::new(0.0, 500)).unwrap();
        let opts = SolverOptions::default();
        for _ in 0..20 {
            run(&mdp, &p, &mut l, 1, &mut rng);
            let (a, _) =
                ftrl_step(&mdp, l.polytope(), l.cumulative(), l.gamma(), None, opts).unwrap();
            let (b, _) = ftrl_step(
                &mdp,
                l.polytope(),
                l.shifted_cumulative(),
                l.gamma(),
                None,
                opts,
            )
            .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-7, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn audited_run_passes_invariants() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let mut l = FtrlLearner::new(&mdp, FtrlConfig::new(6.0, 300)).unwrap();
        l.enable_audit(Some(p.clone()));
        run(&mdp, &p, &mut l, 300, &mut rng);
        let mut audit = Audit::new(true);
        l.drain_audit(&mut audit);
        for (name, stat) in audit.checks() {
            assert_eq!(stat.failures, 0, "{name}: {:?}", stat.first_failure);
        }
        for name in [
            "uob_floor",
            "uob_dominance",
            "flow_residual",
            "advantage_bound",
            "gamma_induction",
            "local_norm",
            "multiplicative_stability",
        ] {
            assert!(
                audit.get(name).is_some_and(|s| s.count > 0),
                "{name} never checked"
            );
        }
        let poly = l.polytope();
        let prog = poly.program(poly.restrict(l.cumulative()), poly.restrict(l.gamma()));
        let residual = kkt_residual(&prog, &poly.restrict(l.occupancy()));
        assert!(residual < 1e-8, "{residual}");
    }
}
