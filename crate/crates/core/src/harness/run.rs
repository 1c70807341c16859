//! One learner against one environment: exact expected regret per episode.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LearnerKind};
use super::regret::Environment;
use crate::error::{Error, Result};
use crate::estimation::log_iota;
use crate::learners::{
    Audit, Feedback, FtrlConfig, FtrlLearner, Learner, OmdConfig, OmdLearner, StepRecord,
};
use crate::learners::omd::default_eta;
use crate::mdp::{compute_occupancy, sample_trajectory, LayeredMdp, Policy, TransitionFn};
use crate::reduction::{doubling_base, BaseKind, Betas, ReductionStack};

/// One line of the trace file; field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub inc_regret: f64,
    pub cum_regret: f64,
    pub cum_cp: f64,
    pub epoch: usize,
    pub bonus_mass: f64,
    pub solver_iters: usize,
}

pub const TRACE_HEADER: &str = "t,inc_regret,cum_regret,cum_cp,epoch,bonus_mass,solver_iters";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
    /// Cumulative realized-loss regret (trajectory loss minus comparator value).
    pub realized: Vec<f64>,
    pub gamma_max: Vec<f64>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative regret after episode `t` (one-based).
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.rows[t - 1].cum_regret
        }
    }

    /// Largest gap between the stored cumulative column and a fresh prefix sum.
    pub fn prefix_sum_error(&self) -> f64 {
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            acc += r.inc_regret;
            worst = worst.max((acc - r.cum_regret).abs());
        }
        worst
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != TRACE_HEADER {
            return Err(Error::Io(format!("{}: unexpected header", path.display())));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(Self {
            rows,
            ..Self::default()
        })
    }
}

/// Plays one policy forever.
pub struct FixedPolicy {
    policy: Policy,
    record: StepRecord,
    audit: Audit,
}

impl FixedPolicy {
    pub fn new(policy: Policy) -> Self {
        Self {
            policy,
            record: StepRecord::default(),
            audit: Audit::new(false),
        }
    }
}

impl Learner for FixedPolicy {
    fn policy(&mut self) -> Result<Policy> {
        Ok(self.policy.clone())
    }

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()> {
        self.record.updated = matches!(feedback, Feedback::Trajectory(_));
        Ok(())
    }

    fn epoch(&self) -> usize {
        0
    }

    fn record(&self) -> &StepRecord {
        &self.record
    }

    fn confidence_set(&self) -> Option<&crate::estimation::ConfidenceSet> {
        None
    }

    fn audit_mut(&mut self) -> &mut Audit {
        &mut self.audit
    }

    fn enable_audit(&mut self, _reference: Option<TransitionFn>) {
        self.audit.set_enabled(true);
    }
}

/// Learner parameters after defaults are filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLearner {
    pub kind: LearnerKind,
    pub theta: f64,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    pub betas: Option<Betas>,
    pub base: Option<BaseKind>,
    pub log_iota: Option<f64>,
}

pub fn resolve_learner(cfg: &ExperimentConfig, mdp: &LayeredMdp) -> Result<ResolvedLearner> {
    let t = cfg.horizon;
    let spec = &cfg.learner;
    let theta = cfg.theta();
    let mut out = ResolvedLearner {
        kind: spec.kind,
        theta,
        delta: None,
        eta: None,
        betas: None,
        base: None,
        log_iota: None,
    };
    match spec.kind {
        LearnerKind::Alg1 => {
            let delta = spec.delta.unwrap_or((1.0 / t as f64).min(0.5));
            let li = log_iota(mdp, t, delta)?;
            out.delta = Some(delta);
            out.eta = Some(spec.eta.unwrap_or_else(|| default_eta(mdp, t, li)));
            out.log_iota = Some(li);
        }
        LearnerKind::Alg4 => {
            let delta = spec.delta.unwrap_or((1.0 / (t as f64 * t as f64)).min(0.5));
            out.delta = Some(delta);
            out.log_iota = Some(log_iota(mdp, t, delta)?);
        }
        LearnerKind::Reduction => {
            out.betas = Some(match spec.betas {
                Some(b) => b,
                None => Betas::defaults(mdp, t)?,
            });
            out.base = Some(spec.base);
        }
        LearnerKind::Comparator | LearnerKind::Uniform => {}
    }
    Ok(out)
}

/// Seed of the reduction stack's internal randomness, derived from the replicate seed.
fn stack_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

pub fn build_learner(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
) -> Result<Box<dyn Learner>> {
    let mdp = &env.mdp;
    let r = resolve_learner(cfg, mdp)?;
    let t = cfg.horizon;
    Ok(match r.kind {
        LearnerKind::Alg1 => {
            let mut c = OmdConfig::new(r.theta, t);
            c.delta = r.delta;
            c.eta = r.eta;
            Box::new(OmdLearner::new(mdp, c)?)
        }
        LearnerKind::Alg4 => {
            let mut c = FtrlConfig::new(r.theta, t);
            c.delta = r.delta;
            Box::new(FtrlLearner::new(mdp, c)?)
        }
        LearnerKind::Reduction => Box::new(ReductionStack::new(
            mdp,
            t,
            r.betas.expect("resolved"),
            doubling_base(mdp, r.base.expect("resolved")),
            stack_seed(seed),
        )?),
        LearnerKind::Comparator => Box::new(FixedPolicy::new(env.comparator.policy.clone())),
        LearnerKind::Uniform => Box::new(FixedPolicy::new(Policy::uniform(mdp))),
    })
}

/// Per-state sums behind the two amortized-bonus bounds, over one bonus window.
struct BonusLedger {
    window: usize,
    corruption_over_u: Vec<f64>,
    bonus: Vec<f64>,
    weighted: Vec<f64>,
}

impl BonusLedger {
    fn new(n: usize) -> Self {
        Self {
            window: 0,
            corruption_over_u: vec![0.0; n],
            bonus: vec![0.0; n],
            weighted: vec![0.0; n],
        }
    }

    fn flush(&mut self, audit: &mut Audit, counting_cap: f64) {
        let w = self.window;
        for s in 0..self.bonus.len() {
            let rhs = self.bonus[s];
            audit.le("bonus_domination", self.corruption_over_u[s], rhs + 1e-9 * (1.0 + rhs), || {
                format!("window {w}, state {s}")
            });
            audit.le("bonus_counting", self.weighted[s], counting_cap * (1.0 + 1e-12), || {
                format!("window {w}, state {s}")
            });
        }
        self.corruption_over_u.iter_mut().for_each(|x| *x = 0.0);
        self.bonus.iter_mut().for_each(|x| *x = 0.0);
        self.weighted.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub trace: RegretTrace,
    pub audit: Audit,
    /// Whether every confidence set of the run contained the ground truth;
    /// `None` for learners without one.
    pub covered: Option<bool>,
}

/// Runs the configured learner for `T` episodes; with `verify` every learner
/// and harness invariant is checked and collected in the returned audit.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    verify: bool,
) -> Result<RunOutcome> {
    let mut learner = build_learner(cfg, env, seed)?;
    run_learner(cfg, env, learner.as_mut(), seed, verify)
}

pub fn run_learner(
    cfg: &ExperimentConfig,
    env: &Environment,
    learner: &mut dyn Learner,
    seed: u64,
    verify: bool,
) -> Result<RunOutcome> {
    let mdp = &env.mdp;
    let horizon = env.horizon();
    let l = mdp.num_layers() as f64;
    let mut audit = Audit::new(verify);
    if verify {
        learner.enable_audit(Some(env.reference().clone()));
    }
    let direct = matches!(cfg.learner.kind, LearnerKind::Alg1 | LearnerKind::Alg4);
    let theta = cfg.theta();
    let bins = ((mdp.num_states() * horizon) as f64).log2().ceil() + 1.0;
    let counting_cap = 4.0 * l * (theta / (2.0 * l)).floor() * bins;
    let mut ledger = BonusLedger::new(mdp.num_states());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = RegretTrace {
        rows: Vec::with_capacity(horizon),
        realized: Vec::with_capacity(horizon),
        gamma_max: Vec::with_capacity(horizon),
    };
    let (mut cum, mut cum_cp, mut realized) = (0.0, 0.0, 0.0);
    let mut covered = None;
    for t in 0..horizon {
        let pi = learner.policy()?;
        let p = env.transitions.get(t);
        let loss = env.losses.get(t);
        let occ = compute_occupancy(mdp, p, &pi)?;
        let inc = occ.dot(loss.as_slice()) - env.comparator_values[t];
        if verify {
            audit.le("played_flow_residual", occ.flow_residual(mdp, false), 1e-10, || {
                format!("episode {}", t + 1)
            });
            audit.within("regret_increment_range", inc, -l - 1e-9, l + 1e-9, || {
                format!("episode {}", t + 1)
            });
        }
        let epoch = learner.epoch();
        let traj = sample_trajectory(mdp, p, &pi, loss, &mut rng);
        learner.observe(Feedback::Trajectory(&traj))?;
        if let Some(conf) = learner.confidence_set() {
            let inside = conf.contains(env.reference());
            covered = Some(covered.unwrap_or(true) && inside);
        }
        let rec = learner.record();
        if verify && direct && rec.updated {
            if rec.bonus_window != ledger.window {
                ledger.flush(&mut audit, counting_cap);
                ledger.window = rec.bonus_window;
            }
            for s in mdp.decision_states() {
                ledger.corruption_over_u[s] += env.corruption[t] / rec.upper[s];
                ledger.bonus[s] += rec.bonus[s];
                ledger.weighted[s] += rec.occupancy[s] * rec.bonus[s];
            }
        }
        cum += inc;
        cum_cp += env.corruption[t];
        realized += traj.total_loss() - env.comparator_values[t];
        trace.rows.push(TraceRow {
            t: t + 1,
            inc_regret: inc,
            cum_regret: cum,
            cum_cp,
            epoch,
            bonus_mass: rec.bonus_mass,
            solver_iters: rec.solver_iters,
        });
        trace.realized.push(realized);
        trace.gamma_max.push(rec.gamma_max);
    }
    if verify {
        if direct {
            ledger.flush(&mut audit, counting_cap);
        }
        audit.le("trace_prefix_sum", trace.prefix_sum_error(), 1e-9, String::new);
        learner.drain_audit(&mut audit);
    }
    Ok(RunOutcome {
        seed,
        trace,
        audit,
        covered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{LossPattern, TransitionAdversary};
    use crate::harness::config::{LearnerSpec, LossSpec, MdpSpec, TransitionSpec};

    pub(crate) fn small(kind: LearnerKind, horizon: usize) -> ExperimentConfig {
        ExperimentConfig {
            schema: 1,
            mdp: MdpSpec {
                layer_sizes: vec![1, 2, 2, 1],
                num_actions: 2,
                concentration: 1.0,
            },
            horizon,
            transitions: TransitionSpec {
                kind: TransitionAdversary::Burst,
                budget: 12.0,
            },
            losses: LossSpec::Adversarial {
                pattern: LossPattern::PhaseSwitching { phase_len: 16 },
            },
            learner: LearnerSpec::new(kind),
            seeds: vec![0],
            env_seed: 3,
            out: None,
            enumeration_cap: 1_000_000,
            sweep: None,
        }
    }

    #[test]
    fn comparator_has_zero_regret() {
        let cfg = small(LearnerKind::Comparator, 64);
        let env = Environment::build(&cfg).unwrap();
        let out = run_experiment(&cfg, &env, 1, true).unwrap();
        assert!(out.trace.rows.iter().all(|r| r.inc_regret.abs() < 1e-12));
        assert!(out.audit.passed());
    }

    #[test]
    fn uniform_regret_is_nonnegative_and_consistent() {
        let cfg = small(LearnerKind::Uniform, 64);
        let env = Environment::build(&cfg).unwrap();
        let out = run_experiment(&cfg, &env, 1, false).unwrap();
        // The comparator is optimal in hindsight, so the total is nonnegative.
        assert!(out.trace.final_regret() >= -1e-9);
        assert_eq!(out.trace.prefix_sum_error(), 0.0);
        assert_eq!(out.trace.rows.last().unwrap().cum_cp, 12.0);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for kind in [LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction] {
            let cfg = small(kind, 48);
            let env = Environment::build(&cfg).unwrap();
            let a = run_experiment(&cfg, &env, 7, false).unwrap();
            let b = run_experiment(&cfg, &env, 7, false).unwrap();
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn verified_runs_pass_every_check() {
        for kind in [LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction] {
            let cfg = small(kind, 96);
            let env = Environment::build(&cfg).unwrap();
            let out = run_experiment(&cfg, &env, 2, true).unwrap();
            for (name, stat) in out.audit.checks() {
                assert_eq!(stat.failures, 0, "{kind:?} {name}: {:?}", stat.first_failure);
            }
            if kind != LearnerKind::Reduction {
                assert!(out.audit.get("bonus_domination").is_some_and(|c| c.count > 0));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let cfg = small(LearnerKind::Alg1, 20);
        let env = Environment::build(&cfg).unwrap();
        let out = run_experiment(&cfg, &env, 1, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        out.trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        let back = RegretTrace::read_csv(&path).unwrap();
        assert_eq!(back.rows, out.trace.rows);
    }

    /// Exact increments equal realized-loss differences on average.
    #[test]
    fn exact_increment_matches_monte_carlo() {
        let mut cfg = small(LearnerKind::Uniform, 1);
        cfg.transitions.budget = 0.0;
        let env = Environment::build(&cfg).unwrap();
        let mdp = &env.mdp;
        let pi = Policy::uniform(mdp);
        let p = env.transitions.get(0);
        let loss = env.losses.get(0);
        let exact = compute_occupancy(mdp, p, &pi).unwrap().dot(loss.as_slice());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_trajectory(mdp, p, &pi, loss, &mut rng).total_loss())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - exact).abs() <= 3.0 * (var / n as f64).sqrt());
    }
}
