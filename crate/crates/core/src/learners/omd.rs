//! Log-barrier OMD over the confidence polytope with upper-occupancy loss
//! estimates and the amortized corruption bonus.

use super::{audit_confidence, audit_uob_dominance, clamp_delta, Audit, Feedback, Learner, StepRecord};
use crate::error::{Error, Result};
use crate::estimation::{log_iota, ConfidenceSet, EpochCounters};
use crate::mdp::{extract_policy, LayeredMdp, OccupancyMeasure, Policy, TransitionFn};
use crate::solvers::{omd_step, ConfidencePolytope, SolverOptions};
use crate::uob::{comp_uob, loss_estimator, per_pair, BonusState};

#[derive(Debug, Clone, PartialEq)]
pub struct OmdConfig {
    /// Corruption guess θ.
    pub theta: f64,
    pub horizon: usize,
    /// Defaults to `min(1/T, 1/2)`.
    pub delta: Option<f64>,
    /// Defaults to `min(sqrt(|S|²|A| ln ι / (LT)), 1/(8L))`.
    pub eta: Option<f64>,
    pub solver: SolverOptions,
}

impl OmdConfig {
    pub fn new(theta: f64, horizon: usize) -> Self {
        Self {
            theta,
            horizon,
            delta: None,
            eta: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Default step size `min(sqrt(|S|²|A| ln ι / (LT)), 1/(8L))`.
pub fn default_eta(mdp: &LayeredMdp, horizon: usize, log_iota: f64) -> f64 {
    let s = mdp.num_states() as f64;
    let l = mdp.num_layers() as f64;
    let a = mdp.num_actions() as f64;
    (s * s * a * log_iota / (l * horizon as f64))
        .sqrt()
        .min(1.0 / (8.0 * l))
}

pub struct OmdLearner {
    mdp: LayeredMdp,
    cfg: OmdConfig,
    delta: f64,
    eta: f64,
    t: usize,
    counters: EpochCounters,
    conf: ConfidenceSet,
    poly: ConfidencePolytope,
    bonus: BonusState,
    q_hat: OccupancyMeasure,
    policy: Policy,
    record: StepRecord,
    audit: Audit,
    reference: Option<TransitionFn>,
}

impl OmdLearner {
    pub fn new(mdp: &LayeredMdp, cfg: OmdConfig) -> Result<Self> {
        if !(cfg.theta >= 0.0) || !cfg.theta.is_finite() {
            return Err(Error::Parameter(format!(
                "corruption guess {} must be nonnegative",
                cfg.theta
            )));
        }
        if cfg.horizon == 0 {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        let delta = cfg
            .delta
            .unwrap_or_else(|| clamp_delta(1.0 / cfg.horizon as f64));
        let li = log_iota(mdp, cfg.horizon, delta)?;
        let cap = 1.0 / (8.0 * mdp.num_layers() as f64);
        let eta = match cfg.eta {
            Some(e) if e > 0.0 && e <= cap => e,
            Some(e) => {
                return Err(Error::Parameter(format!(
                    "step size {e} outside (0, {cap}]"
                )))
            }
            None => default_eta(mdp, cfg.horizon, li),
        };
        let counters = EpochCounters::new(mdp);
        let conf = ConfidenceSet::new(mdp, &counters, cfg.theta, delta, cfg.horizon)?;
        let poly = ConfidencePolytope::new(mdp, &conf)?;
        let na = mdp.num_actions() as f64;
        let mut triples = vec![0.0; mdp.num_triples()];
        for (s, _, _, i) in mdp.triples() {
            let k = mdp.layer_of(s);
            let here = mdp.layer_sizes()[k] as f64;
            let next = mdp.layer_sizes()[k + 1] as f64;
            triples[i] = 1.0 / (here * na * next);
        }
        let q_hat = OccupancyMeasure::from_triples(mdp, triples)?;
        let policy = extract_policy(mdp, q_hat.pairs())?;
        let bonus = BonusState::new(mdp, cfg.theta);
        let record = StepRecord {
            epoch: 1,
            occupancy: q_hat.states().to_vec(),
            ..StepRecord::default()
        };
        Ok(Self {
            mdp: mdp.clone(),
            cfg,
            delta,
            eta,
            t: 0,
            counters,
            conf,
            poly,
            bonus,
            q_hat,
            policy,
            record,
            audit: Audit::new(false),
            reference: None,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn occupancy(&self) -> &OccupancyMeasure {
        &self.q_hat
    }

    /// Episodes observed so far, skips included.
    pub fn episodes(&self) -> usize {
        self.t
    }
}

impl Learner for OmdLearner {
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
        let g: Vec<f64> = loss_hat
            .iter()
            .zip(per_pair(mdp, &b))
            .map(|(l, b)| l - b)
            .collect();

        if self.audit.is_enabled() {
            if self.t == self.counters.epoch_start() {
                audit_uob_dominance(&mut self.audit, mdp, &self.conf, &self.policy, &u.states, self.t as u64)?;
            }
            let floor = 1.0 / (mdp.num_states() as f64 * self.cfg.horizon as f64);
            for s in mdp.decision_states() {
                let t = self.t;
                self.audit.le("uob_floor", floor, u.states[s], || {
                    format!("episode {t}, state {s}")
                });
                self.audit.le(
                    "occupancy_below_uob",
                    self.q_hat.state(s),
                    u.states[s] + 1e-9,
                    || format!("episode {t}, state {s}"),
                );
            }
            for (s, a, _, i) in mdp.triples() {
                let step = self.eta * self.q_hat.triples()[i] * g[mdp.pair(s, a)];
                self.audit.le("omd_stability", -0.5, step, || {
                    format!("episode {}, pair ({s},{a})", self.t)
                });
            }
        }

        let bonus_mass: f64 = mdp
            .decision_states()
            .map(|s| self.q_hat.state(s) * b[s])
            .sum();
        self.record.upper = u.states;
        self.record.bonus = b;
        self.record.occupancy = self.q_hat.states().to_vec();
        self.record.bonus_mass = bonus_mass;
        self.record.updated = true;

        if self.counters.record(mdp, traj, self.t) {
            self.conf = ConfidenceSet::new(
                mdp,
                &self.counters,
                self.cfg.theta,
                self.delta,
                self.cfg.horizon,
            )?;
            self.poly = ConfidencePolytope::new(mdp, &self.conf)?;
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

        let (next, cert) = omd_step(
            mdp,
            &self.poly,
            self.q_hat.triples(),
            &g,
            self.eta,
            None,
            self.cfg.solver,
        )?;
        self.record.solver_iters = cert.iterations;
        if self.audit.is_enabled() {
            let t = self.t;
            self.audit.le(
                "flow_residual",
                next.flow_residual(mdp, false),
                1e-10,
                || format!("episode {t}"),
            );
            self.audit.le(
                "polytope_violation",
                self.poly.violation(next.triples()),
                1e-9,
                || format!("episode {t}"),
            );
        }
        self.policy = extract_policy(mdp, next.pairs())?;
        self.q_hat = next;
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
    use crate::mdp::{sample_trajectory, LossFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> LayeredMdp {
        LayeredMdp::new(vec![1, 3, 3, 1], 2).unwrap()
    }

    #[test]
    fn initial_iterate_has_unit_layer_mass_and_uniform_policy() {
        let mdp = desk();
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(0.0, 100)).unwrap();
        for k in 0..mdp.num_layers() {
            let mass: f64 = mdp.layer(k).map(|s| l.occupancy().state(s)).sum();
            assert!((mass - 1.0).abs() < 1e-14);
        }
        let pi = l.policy().unwrap();
        assert!(pi.as_slice().iter().all(|&p| (p - 0.5).abs() < 1e-15));
        assert_eq!(l.epoch(), 1);
        assert!(l.confidence_set().unwrap().width.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn default_eta_branches() {
        let mdp = desk();
        let cap = 1.0 / 24.0;
        let small = OmdLearner::new(&mdp, OmdConfig::new(0.0, 10)).unwrap();
        assert_eq!(small.eta(), cap);
        let horizon = 1usize << 40;
        let big = OmdLearner::new(&mdp, OmdConfig::new(0.0, horizon)).unwrap();
        let li = ((8.0 * 2.0 * horizon as f64) / (1.0 / horizon as f64)).ln();
        let expect = (64.0 * 2.0 * li / (3.0 * horizon as f64)).sqrt();
        assert!((big.eta() - expect).abs() < 1e-15 * expect.max(1.0));
        assert!(big.eta() < cap);
    }

    #[test]
    fn eta_override_validated() {
        let mdp = desk();
        let mut cfg = OmdConfig::new(0.0, 10);
        cfg.eta = Some(0.5);
        assert!(matches!(
            OmdLearner::new(&mdp, cfg.clone()),
            Err(Error::Parameter(_))
        ));
        cfg.eta = Some(0.0);
        assert!(OmdLearner::new(&mdp, cfg.clone()).is_err());
        cfg.eta = Some(0.01);
        assert_eq!(OmdLearner::new(&mdp, cfg).unwrap().eta(), 0.01);
    }

    #[test]
    fn zero_guess_means_zero_bonus() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(0.0, 50)).unwrap();
        for _ in 0..20 {
            let loss =
                LossFn::new(&mdp, (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).unwrap();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            assert!(l.record().bonus.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn skip_changes_only_the_counter() {
        let mdp = desk();
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(6.0, 50)).unwrap();
        let before = l.occupancy().clone();
        let pi = l.policy().unwrap();
        l.observe(Feedback::Skip).unwrap();
        assert_eq!(l.episodes(), 1);
        assert_eq!(l.occupancy(), &before);
        assert_eq!(l.policy().unwrap(), pi);
        assert_eq!(l.epoch(), 1);
    }

    #[test]
    fn single_state_chain_is_degenerate() {
        // One state per layer and one action: the policy cannot change, the
        // upper occupancy is one everywhere and the estimate is the raw loss.
        let mdp = LayeredMdp::new(vec![1, 1, 1, 1], 1).unwrap();
        let p = TransitionFn::uniform(&mdp);
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(0.0, 40)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..15 {
            let loss =
                LossFn::new(&mdp, (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).unwrap();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            assert!(l.record().upper[..3]
                .iter()
                .all(|&u| (u - 1.0).abs() < 1e-15));
            assert!(l
                .occupancy()
                .triples()
                .iter()
                .all(|&q| (q - 1.0).abs() < 1e-9));
            assert_eq!(l.policy().unwrap(), pi);
        }
    }

    #[test]
    fn zero_losses_move_only_at_epoch_boundaries() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let loss = LossFn::constant(&mdp, 0.0).unwrap();
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(0.0, 200)).unwrap();
        for _ in 0..60 {
            let before = l.occupancy().clone();
            let epoch = l.epoch();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
            if l.epoch() == epoch {
                let drift = before
                    .triples()
                    .iter()
                    .zip(l.occupancy().triples())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(drift < 1e-8, "moved {drift} inside an epoch");
            }
        }
    }

    #[test]
    fn audited_run_passes_invariants() {
        let mdp = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = TransitionFn::random(&mdp, 1.0, &mut rng);
        let horizon = 150;
        let mut l = OmdLearner::new(&mdp, OmdConfig::new(6.0, horizon)).unwrap();
        l.enable_audit(Some(p.clone()));
        for _ in 0..horizon {
            let loss =
                LossFn::new(&mdp, (0..mdp.num_pairs()).map(|_| rng.gen()).collect()).unwrap();
            let pi = l.policy().unwrap();
            let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
            l.observe(Feedback::Trajectory(&traj)).unwrap();
        }
        let mut audit = Audit::new(true);
        l.drain_audit(&mut audit);
        for (name, stat) in audit.checks() {
            assert_eq!(stat.failures, 0, "{name}: {:?}", stat.first_failure);
        }
        for name in [
            "uob_floor",
            "uob_dominance",
            "occupancy_below_uob",
            "omd_stability",
            "flow_residual",
            "polytope_violation",
        ] {
            assert!(
                audit.get(name).is_some_and(|s| s.count > 0),
                "{name} never checked"
            );
        }
    }
}
