//! Model selection over corruption levels: STABILISE-wrapped arms under a
//! Corral master.

pub mod corral;
pub mod stabilise;

pub use corral::{corral_weights, Corral};
pub use stabilise::{forward_probability, theta_j, BaseFactory, Stabilise};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{log_iota, ConfidenceSet};
use crate::learners::{
    Audit, Doubling, Feedback, FtrlConfig, FtrlLearner, Learner, OmdConfig, OmdLearner, StepRecord,
};
use crate::mdp::{LayeredMdp, Policy, TransitionFn};

/// Constants of the base learners' regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Betas {
    /// `β1 = L²|S|²|A| ln ι`, `β2 = L|S|⁴|A| ln²ι`, `β3 = L|S|⁴|A| ln ι` with `δ = 1/T`.
    pub fn defaults(mdp: &LayeredMdp, horizon: usize) -> Result<Self> {
        let delta = (1.0 / horizon as f64).min(0.5);
        let li = log_iota(mdp, horizon, delta)?;
        let l = mdp.num_layers() as f64;
        let s = mdp.num_states() as f64;
        let a = mdp.num_actions() as f64;
        Ok(Self {
            beta1: l * l * s * s * a * li,
            beta2: l * s.powi(4) * a * li * li,
            beta3: l * s.powi(4) * a * li,
        })
    }
}

/// Which known-corruption learner sits at the bottom of the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    #[default]
    Alg1,
    Alg4,
}

/// A base factory running `kind` under the doubling schedule.
pub fn doubling_base(mdp: &LayeredMdp, kind: BaseKind) -> BaseFactory {
    let mdp = mdp.clone();
    Arc::new(move |theta| {
        let m = mdp.clone();
        let d = Doubling::new(move |h| -> Result<Box<dyn Learner>> {
            Ok(match kind {
                BaseKind::Alg1 => Box::new(OmdLearner::new(&m, OmdConfig::new(theta, h))?),
                BaseKind::Alg4 => Box::new(FtrlLearner::new(&m, FtrlConfig::new(theta, h))?),
            })
        })?;
        Ok(Box::new(d) as Box<dyn Learner>)
    })
}

/// Corral over `⌈log2 T⌉` STABILISE arms; arm `i` assumes corruption `2^{i+1}`.
pub struct ReductionStack {
    corral: Corral,
    arms: Vec<Stabilise>,
    rng: ChaCha8Rng,
    pending: Option<(usize, Policy)>,
    audit: Audit,
    record: StepRecord,
}

impl ReductionStack {
    pub fn new(
        mdp: &LayeredMdp,
        horizon: usize,
        betas: Betas,
        base: BaseFactory,
        seed: u64,
    ) -> Result<Self> {
        if !(betas.beta1 > 0.0 && betas.beta2 > 0.0 && betas.beta3 > 0.0) {
            return Err(Error::Parameter("β constants must be positive".into()));
        }
        let corral = Corral::new(horizon, mdp.num_layers(), betas.beta1, betas.beta2)?;
        let arms = (0..corral.arms())
            .map(|i| Stabilise::new(mdp, Corral::hypothesis(i), horizon, base.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            corral,
            arms,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: None,
            audit: Audit::new(false),
            record: StepRecord::default(),
        })
    }

    pub fn corral(&self) -> &Corral {
        &self.corral
    }

    pub fn arm(&self, i: usize) -> &Stabilise {
        &self.arms[i]
    }

    /// Arm chosen for the pending round, if a policy has been requested.
    pub fn chosen(&self) -> Option<usize> {
        self.pending.as_ref().map(|(i, _)| *i)
    }

    fn draw_arm(&mut self) -> usize {
        let w = self.corral.weights();
        let mut u: f64 = self.rng.gen();
        for (i, &x) in w.iter().enumerate() {
            if u < x {
                return i;
            }
            u -= x;
        }
        w.len() - 1
    }
}

impl Learner for ReductionStack {
    fn policy(&mut self) -> Result<Policy> {
        if let Some((_, p)) = &self.pending {
            return Ok(p.clone());
        }
        let weights = self.corral.weights().to_vec();
        let mut policies = Vec::with_capacity(self.arms.len());
        for (arm, &w) in self.arms.iter_mut().zip(&weights) {
            policies.push(arm.act(w)?);
        }
        let i = self.draw_arm();
        let p = policies.swap_remove(i);
        self.pending = Some((i, p.clone()));
        Ok(p)
    }

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()> {
        if self.pending.is_none() {
            self.policy()?;
        }
        let (chosen, _) = self.pending.take().expect("pending round");
        let routed = self.arms[chosen].routed();
        match feedback {
            Feedback::Trajectory(traj) => {
                self.corral.update(chosen, traj.total_loss(), &mut self.audit)?;
                for (i, arm) in self.arms.iter_mut().enumerate() {
                    let delivered = if i == chosen { Some(traj) } else { None };
                    arm.feedback(delivered, &mut self.rng)?;
                }
            }
            Feedback::Skip => {
                for arm in self.arms.iter_mut() {
                    arm.feedback(None, &mut self.rng)?;
                }
            }
        }
        self.record = match routed {
            Some(j) => self.arms[chosen].record_of(j).clone(),
            None => StepRecord::default(),
        };
        Ok(())
    }

    fn epoch(&self) -> usize {
        self.record.epoch
    }

    fn record(&self) -> &StepRecord {
        &self.record
    }

    fn confidence_set(&self) -> Option<&ConfidenceSet> {
        None
    }

    fn audit_mut(&mut self) -> &mut Audit {
        &mut self.audit
    }

    fn enable_audit(&mut self, reference: Option<TransitionFn>) {
        self.audit.set_enabled(true);
        for arm in &mut self.arms {
            arm.enable_audit(reference.clone());
        }
    }

    fn drain_audit(&mut self, into: &mut Audit) {
        for arm in &mut self.arms {
            arm.drain_audit(into);
        }
        into.absorb(&mut self.audit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, LossFn};

    fn setup() -> (LayeredMdp, TransitionFn, LossFn) {
        let mdp = LayeredMdp::new(vec![1, 2, 1], 2).unwrap();
        let p = TransitionFn::new(&mdp, vec![0.6, 0.4, 0.3, 0.7, 1.0, 1.0, 1.0, 1.0], false).unwrap();
        let loss = LossFn::new(&mdp, vec![0.2, 0.9, 0.5, 0.1, 0.7, 0.3]).unwrap();
        (mdp, p, loss)
    }

    #[test]
    fn default_betas_follow_the_formulas() {
        let (mdp, _, _) = setup();
        let b = Betas::defaults(&mdp, 64).unwrap();
        let li = log_iota(&mdp, 64, 1.0 / 64.0).unwrap();
        let (l, s, a) = (2.0, 4.0, 2.0);
        assert!((b.beta1 - l * l * s * s * a * li).abs() < 1e-9);
        assert!((b.beta2 - l * s.powi(4) * a * li * li).abs() < 1e-6);
        assert!((b.beta3 / b.beta2 - 1.0 / li).abs() < 1e-12);
    }

    #[test]
    fn single_arm_stack_plays_its_base() {
        let (mdp, p, loss) = setup();
        let betas = Betas::defaults(&mdp, 2).unwrap();
        let mut stack = ReductionStack::new(&mdp, 2, betas, doubling_base(&mdp, BaseKind::Alg1), 1).unwrap();
        assert_eq!(stack.corral().arms(), 1);
        let pi = stack.policy().unwrap();
        assert_eq!(stack.chosen(), Some(0));
        // Repeated queries within a round agree.
        assert_eq!(stack.policy().unwrap(), pi);
        assert_eq!(stack.arm(0).routed(), Some(0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
        stack.observe(Feedback::Trajectory(&traj)).unwrap();
        assert_eq!(stack.chosen(), None);
        assert_eq!(stack.arm(0).live_instances(), 1);
    }

    #[test]
    fn audited_run_keeps_master_stable() {
        let (mdp, p, loss) = setup();
        let horizon = 200;
        let betas = Betas::defaults(&mdp, horizon).unwrap();
        for kind in [BaseKind::Alg1, BaseKind::Alg4] {
            let mut stack =
                ReductionStack::new(&mdp, horizon, betas, doubling_base(&mdp, kind), 9).unwrap();
            stack.enable_audit(Some(p.clone()));
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut counts = vec![0usize; stack.corral().arms()];
            for _ in 0..horizon {
                let pi = stack.policy().unwrap();
                counts[stack.chosen().unwrap()] += 1;
                let traj = sample_trajectory(&mdp, &p, &pi, &loss, &mut rng);
                stack.observe(Feedback::Trajectory(&traj)).unwrap();
            }
            let w = stack.corral().weights();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(counts.iter().filter(|&&c| c > 0).count() > 1);
            let mut audit = Audit::new(true);
            stack.drain_audit(&mut audit);
            assert!(audit.get("corral_stability").map_or(0, |c| c.count) > 0);
            assert!(audit.passed(), "{:?}", audit.checks().collect::<Vec<_>>());
        }
    }
}
