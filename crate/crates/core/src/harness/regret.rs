//! The environment of an experiment and its comparator policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, LossSpec};
use crate::adversary::{
    make_loss_adversary, make_transition_adversary, planted_gap_mean, verify_budget,
    LossAdversary, LossSchedule, TransitionSchedule,
};
use crate::error::{Error, Result};
use crate::mdp::{compute_occupancy, expected_loss, LayeredMdp, Policy, TransitionFn};

/// Best deterministic policy in hindsight.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub policy: Policy,
    pub actions: Vec<usize>,
    pub total: f64,
}

/// Consecutive episodes sharing a transition, with their summed losses.
fn transition_runs(
    mdp: &LayeredMdp,
    schedule: &TransitionSchedule,
    losses: &LossSchedule,
) -> Vec<(TransitionFn, Vec<f64>)> {
    let mut runs: Vec<(TransitionFn, Vec<f64>)> = Vec::new();
    for t in 0..schedule.horizon() {
        let p = schedule.get(t);
        let l = losses.get(t).as_slice();
        match runs.last_mut() {
            Some((q, acc)) if q.as_slice() == p.as_slice() => {
                acc.iter_mut().zip(l).for_each(|(a, x)| *a += x);
            }
            _ => runs.push((p.clone(), l.to_vec())),
        }
    }
    debug_assert!(runs.iter().all(|(_, l)| l.len() == mdp.num_pairs()));
    runs
}

/// Decodes the `index`-th deterministic policy in lexicographic order
/// (state 0 most significant).
pub fn nth_policy(mdp: &LayeredMdp, mut index: u64) -> Vec<usize> {
    let n = mdp.num_states() - 1;
    let a = mdp.num_actions() as u64;
    let mut actions = vec![0; n];
    for s in (0..n).rev() {
        actions[s] = (index % a) as usize;
        index /= a;
    }
    actions
}

pub fn policy_count(mdp: &LayeredMdp) -> f64 {
    (mdp.num_actions() as f64).powi(mdp.num_states() as i32 - 1)
}

/// Exhaustive search over deterministic policies scored by
/// `Σ_t V^{P_t,π}(s0; ℓ_t)`; ties go to the lexicographically smallest.
pub fn best_fixed_policy(
    mdp: &LayeredMdp,
    schedule: &TransitionSchedule,
    losses: &LossSchedule,
    cap: usize,
) -> Result<Comparator> {
    let count = policy_count(mdp);
    if count > cap as f64 {
        return Err(Error::ComparatorInfeasible {
            policies: count,
            cap,
        });
    }
    if schedule.horizon() != losses.horizon() {
        return Err(Error::Structure("schedules have different horizons".into()));
    }
    let runs = transition_runs(mdp, schedule, losses);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for index in 0..count as u64 {
        let actions = nth_policy(mdp, index);
        let pi = Policy::deterministic(mdp, &actions)?;
        let mut total = 0.0;
        for (p, l) in &runs {
            total += compute_occupancy(mdp, p, &pi)?.dot(l);
        }
        let better = match &best {
            None => true,
            Some((b, _)) => total < b - 1e-12 * b.abs().max(1.0),
        };
        if better {
            best = Some((total, actions));
        }
    }
    let (total, actions) = best.expect("at least one policy");
    Ok(Comparator {
        policy: Policy::deterministic(mdp, &actions)?,
        actions,
        total,
    })
}

/// Everything fixed ahead of the learner: the oblivious adversary's choices
/// and the comparator they induce.
#[derive(Debug, Clone)]
pub struct Environment {
    pub mdp: LayeredMdp,
    pub transitions: TransitionSchedule,
    pub losses: LossSchedule,
    /// `C^P_t` per episode.
    pub corruption: Vec<f64>,
    pub comparator: Comparator,
    /// `V^{P_t,π̊}(s0; ℓ_t)` per episode.
    pub comparator_values: Vec<f64>,
}

impl Environment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let mdp = cfg.build_mdp()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.env_seed);
        let p = TransitionFn::random(&mdp, cfg.mdp.concentration, &mut rng);
        let kind = match &cfg.losses {
            LossSpec::Adversarial { pattern } => LossAdversary::Adversarial(*pattern),
            LossSpec::Stochastic { gap, expectation } => LossAdversary::Stochastic {
                mean: planted_gap_mean(&mdp, &p, *gap, &mut rng)?,
                expectation: *expectation,
            },
            LossSpec::CorruptedStochastic {
                gap,
                expectation,
                budget,
            } => LossAdversary::CorruptedStochastic {
                mean: planted_gap_mean(&mdp, &p, *gap, &mut rng)?,
                expectation: *expectation,
                budget: *budget,
            },
        };
        let losses = make_loss_adversary(&mdp, &p, &kind, cfg.horizon, &mut rng)?;
        let reference = match &losses.gap {
            Some(g) => g.mean.clone(),
            None => losses.average(),
        };
        let transitions = make_transition_adversary(
            &mdp,
            cfg.transitions.kind,
            &p,
            cfg.transitions.budget,
            cfg.horizon,
            Some(&reference),
        )?;
        let corruption = verify_budget(&mdp, &transitions)?.per_round;
        let comparator = best_fixed_policy(&mdp, &transitions, &losses, cfg.enumeration_cap)?;
        let comparator_values = (0..cfg.horizon)
            .map(|t| expected_loss(&mdp, transitions.get(t), &comparator.policy, losses.get(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mdp,
            transitions,
            losses,
            corruption,
            comparator,
            comparator_values,
        })
    }

    pub fn horizon(&self) -> usize {
        self.transitions.horizon()
    }

    /// Ground-truth transition `P`.
    pub fn reference(&self) -> &TransitionFn {
        self.transitions.base()
    }
}
