//! Learners for a known corruption level, behind one interface.
//!
//! A learner is driven by alternating [`Learner::policy`] and
//! [`Learner::observe`]. Observing [`Feedback::Skip`] advances only the
//! episode counter.

pub mod audit;
pub mod doubling;
pub mod ftrl;
pub mod omd;

pub use audit::{Audit, CheckStat};
pub use doubling::Doubling;
pub use ftrl::{loss_shift_g, lr_update, nu, FtrlConfig, FtrlLearner};
pub use omd::{OmdConfig, OmdLearner};

use crate::error::Result;
use crate::estimation::ConfidenceSet;
use crate::mdp::{LayeredMdp, Policy, Trajectory, TransitionFn};

/// What a learner sees after an episode.
#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    Trajectory(&'a Trajectory),
    Skip,
}

/// Diagnostics of the most recent update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    /// Whether the last observe carried a trajectory.
    pub updated: bool,
    pub epoch: usize,
    /// Increments whenever the bonus counters are reset.
    pub bonus_window: usize,
    /// Per-state upper occupancy used for the estimator.
    pub upper: Vec<f64>,
    /// Per-state amortized bonus.
    pub bonus: Vec<f64>,
    /// Per-state occupancy of the iterate that produced the played policy.
    pub occupancy: Vec<f64>,
    /// `Σ_s q(s) b(s)`.
    pub bonus_mass: f64,
    pub solver_iters: usize,
    /// Largest adaptive rate (zero for fixed-rate learners).
    pub gamma_max: f64,
}

pub trait Learner: Send {
    /// Policy for the next episode; repeated calls without an observe agree.
    fn policy(&mut self) -> Result<Policy>;

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()>;

    fn epoch(&self) -> usize;

    fn record(&self) -> &StepRecord;

    /// Current confidence set, for learners that keep one.
    fn confidence_set(&self) -> Option<&ConfidenceSet>;

    fn audit_mut(&mut self) -> &mut Audit;

    /// Turns on per-episode checks; `reference` enables the coverage-conditional
    /// checks on each new confidence set.
    fn enable_audit(&mut self, reference: Option<TransitionFn>);

    /// Moves the accumulated checks (including any inner learners') into `into`.
    fn drain_audit(&mut self, into: &mut Audit) {
        into.absorb(self.audit_mut());
    }
}

impl Learner for Box<dyn Learner> {
    fn policy(&mut self) -> Result<Policy> {
        (**self).policy()
    }
    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()> {
        (**self).observe(feedback)
    }
    fn epoch(&self) -> usize {
        (**self).epoch()
    }
    fn record(&self) -> &StepRecord {
        (**self).record()
    }
    fn confidence_set(&self) -> Option<&ConfidenceSet> {
        (**self).confidence_set()
    }
    fn audit_mut(&mut self) -> &mut Audit {
        (**self).audit_mut()
    }
    fn enable_audit(&mut self, reference: Option<TransitionFn>) {
        (**self).enable_audit(reference)
    }
    fn drain_audit(&mut self, into: &mut Audit) {
        (**self).drain_audit(into)
    }
}

/// Default confidence level: `min(p, 1/2)`.
pub(crate) fn clamp_delta(p: f64) -> f64 {
    p.min(0.5)
}

/// `u(s) ≥ q^{P̂,π}(s)` for transitions `P̂` drawn at random inside the box.
pub(crate) fn audit_uob_dominance(
    audit: &mut Audit,
    mdp: &LayeredMdp,
    conf: &ConfidenceSet,
    pi: &Policy,
    upper: &[f64],
    seed: u64,
) -> Result<()> {
    use rand::SeedableRng;

    if !audit.is_enabled() {
        return Ok(());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let p = crate::uob::sample_in_box(mdp, conf, &mut rng);
        let q = crate::mdp::compute_occupancy(mdp, &p, pi)?;
        for s in 0..mdp.num_states() {
            audit.le("uob_dominance", q.state(s), upper[s] + 1e-9, || format!("state {s}"));
        }
    }
    Ok(())
}

/// Optimism and tighter-estimation checks for a freshly built confidence set,
/// evaluated on a few pseudo-random policies and losses. Skipped when the set
/// misses `reference` (the inequalities are only promised on coverage).
pub(crate) fn audit_confidence(
    audit: &mut Audit,
    mdp: &LayeredMdp,
    conf: &ConfidenceSet,
    reference: &TransitionFn,
    seed: u64,
) -> Result<()> {
    use crate::mdp::value_functions;
    use rand::{Rng, SeedableRng};

    if !audit.is_enabled() || !conf.contains(reference) {
        return Ok(());
    }
    let optimistic = conf.optimistic_transition();
    let bonus = conf.exploration_bonus(mdp);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let na = mdp.num_actions();
    for _ in 0..4 {
        let mut probs = vec![0.0; mdp.num_pairs()];
        for s in mdp.decision_states() {
            let row: Vec<f64> = (0..na).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = row.iter().sum();
            for a in 0..na {
                probs[mdp.pair(s, a)] = row[a] / total;
            }
        }
        let pi = Policy::new(mdp, probs)?;
        let loss: Vec<f64> = (0..mdp.num_pairs()).map(|_| rng.gen()).collect();
        let (v_opt, q_opt) = value_functions(mdp, &optimistic, &pi, &loss)?;
        let (v_true, _) = value_functions(mdp, reference, &pi, &loss)?;
        for s in 0..mdp.num_states() {
            audit.le("optimism", v_opt[s], v_true[s] + 1e-9, || {
                format!("state {s}")
            });
        }
        let shifted: Vec<f64> = loss.iter().zip(&bonus).map(|(l, b)| l - b).collect();
        let (_, q_shift) = value_functions(mdp, &conf.p_bar, &pi, &shifted)?;
        for (i, (x, y)) in q_shift.iter().zip(&q_opt).enumerate() {
            audit.le("tighter_estimation", *x, y + 1e-9, || format!("pair {i}"));
        }
    }
    Ok(())
}
