//! Corrupted transition and loss sequences with exact corruption accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{value_functions, LayeredMdp, LossFn, Policy, TransitionFn};

/// `Σ_k max_{(s,a) ∈ S_k × A} ‖P_t(·|s,a) − P(·|s,a)‖₁`.
pub fn per_round_corruption(mdp: &LayeredMdp, pt: &TransitionFn, p: &TransitionFn) -> Result<f64> {
    if pt.as_slice().len() != mdp.num_triples() || p.as_slice().len() != mdp.num_triples() {
        return Err(Error::Structure(
            "transition tables do not match the MDP".into(),
        ));
    }
    let mut total = 0.0;
    for k in 0..mdp.num_layers() {
        let mut worst: f64 = 0.0;
        for s in mdp.layer(k) {
            for a in 0..mdp.num_actions() {
                let d: f64 = pt
                    .row(mdp, s, a)
                    .iter()
                    .zip(p.row(mdp, s, a))
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                worst = worst.max(d);
            }
        }
        total += worst;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionAdversary {
    None,
    Burst,
    Spread,
    Targeted,
}

/// Ground truth `P` plus per-episode overrides; `None` means `P_t = P`.
#[derive(Debug, Clone)]
pub struct TransitionSchedule {
    base: TransitionFn,
    rounds: Vec<Option<TransitionFn>>,
    budget: f64,
}

impl TransitionSchedule {
    pub fn base(&self) -> &TransitionFn {
        &self.base
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    /// Transition of episode `t` (zero-based).
    pub fn get(&self, t: usize) -> &TransitionFn {
        self.rounds[t].as_ref().unwrap_or(&self.base)
    }

    pub fn is_corrupted(&self, t: usize) -> bool {
        self.rounds[t].is_some()
    }
}

/// Per-round corruption trace of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub total: f64,
    pub per_round: Vec<f64>,
}

/// Recomputes `C^P_t` for every episode and checks it against the declared budget.
pub fn verify_budget(mdp: &LayeredMdp, schedule: &TransitionSchedule) -> Result<BudgetReport> {
    let mut per_round = Vec::with_capacity(schedule.horizon());
    for t in 0..schedule.horizon() {
        let c = match &schedule.rounds[t] {
            Some(pt) => per_round_corruption(mdp, pt, &schedule.base)?,
            None => 0.0,
        };
        per_round.push(c);
    }
    let total: f64 = per_round.iter().sum();
    let cap = 2.0 * mdp.num_layers() as f64;
    let over: Vec<usize> = per_round
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > cap + 1e-9)
        .map(|(t, _)| t)
        .collect();
    if total > schedule.budget + 1e-9 || !over.is_empty() {
        let rounds = if over.is_empty() {
            per_round
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0.0)
                .map(|(t, _)| t)
                .collect()
        } else {
            over
        };
        return Err(Error::BudgetViolation {
            excess: total - schedule.budget,
            rounds,
        });
    }
    Ok(BudgetReport { total, per_round })
}

/// Largest L1 move available in each layer: `max_{(s,a)} 2(1 − min_j P(j|s,a))`.
fn layer_capacities(mdp: &LayeredMdp, p: &TransitionFn) -> Vec<f64> {
    (0..mdp.num_layers())
        .map(|k| {
            let mut cap: f64 = 0.0;
            for s in mdp.layer(k) {
                for a in 0..mdp.num_actions() {
                    let row = p.row(mdp, s, a);
                    if row.len() > 1 {
                        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                        cap = cap.max(2.0 * (1.0 - lo));
                    }
                }
            }
            cap
        })
        .collect()
}

/// Moves `amount / 2` of probability mass onto successor `target`, scaling the
/// others down. Returns the L1 distance actually realised.
fn shift_row(row: &mut [f64], target: usize, amount: f64) -> f64 {
    let head = 1.0 - row[target];
    let m = (amount / 2.0).min(head);
    if m <= 0.0 {
        return 0.0;
    }
    let scale = (head - m) / head;
    for (j, x) in row.iter_mut().enumerate() {
        if j == target {
            *x += m;
        } else {
            *x *= scale;
        }
    }
    2.0 * m
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Spends `amount` of L1 corruption in one episode, earliest layer first.
/// Every row of a touched layer is shifted by the same amount, toward
/// `target(s)` (an index into the successor layer).
fn corrupt_round(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    caps: &[f64],
    mut amount: f64,
    target: &dyn Fn(usize, usize, &[f64]) -> usize,
) -> (TransitionFn, f64) {
    let mut out = p.clone();
    let mut spent = 0.0;
    for k in 0..mdp.num_layers() {
        if amount <= 0.0 {
            break;
        }
        let x = amount.min(caps[k]);
        if x <= 0.0 {
            continue;
        }
        let mut layer_cost: f64 = 0.0;
        for s in mdp.layer(k) {
            for a in 0..mdp.num_actions() {
                let row = out.row_mut(mdp, s, a);
                if row.len() < 2 {
                    continue;
                }
                let j = target(s, a, row);
                layer_cost = layer_cost.max(shift_row(row, j, x));
            }
        }
        spent += layer_cost;
        amount -= layer_cost;
    }
    (out, spent)
}

/// Optimal cost-to-go `min_π V^{P,π}(s; ℓ)` per state.
fn optimal_values(mdp: &LayeredMdp, p: &TransitionFn, loss: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; mdp.num_states()];
    for k in (0..mdp.num_layers()).rev() {
        for s in mdp.layer(k) {
            v[s] = (0..mdp.num_actions())
                .map(|a| loss[mdp.pair(s, a)] + continuation(mdp, p, &v, s, a))
                .fold(f64::INFINITY, f64::min);
        }
    }
    v
}

fn continuation(mdp: &LayeredMdp, p: &TransitionFn, v: &[f64], s: usize, a: usize) -> f64 {
    p.row(mdp, s, a)
        .iter()
        .zip(mdp.successors(s))
        .map(|(x, n)| x * v[n])
        .sum()
}

/// Builds a corrupted transition sequence.
///
/// * `Burst` pushes every row onto its least likely successor (the largest
///   achievable per-round corruption) for as many leading episodes as the
///   budget allows, spending any remainder in the next episode.
/// * `Spread` spends `C^P / T` in every episode.
/// * `Targeted` spends `C^P / T` per episode toward the successor with the
///   highest optimal cost-to-go under `reference_loss`.
pub fn make_transition_adversary(
    mdp: &LayeredMdp,
    kind: TransitionAdversary,
    p: &TransitionFn,
    budget: f64,
    horizon: usize,
    reference_loss: Option<&[f64]>,
) -> Result<TransitionSchedule> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::Parameter(format!(
            "corruption budget {budget} must be nonnegative"
        )));
    }
    let max = 2.0 * mdp.num_layers() as f64 * horizon as f64;
    if budget > max {
        return Err(Error::InfeasibleBudget { budget, max });
    }
    p.validate(mdp, crate::mdp::BUILD_TOL)?;
    let mut rounds: Vec<Option<TransitionFn>> = vec![None; horizon];
    let caps = layer_capacities(mdp, p);
    let c_max: f64 = caps.iter().sum();
    if budget == 0.0 || kind == TransitionAdversary::None || c_max == 0.0 {
        return Ok(TransitionSchedule {
            base: p.clone(),
            rounds,
            budget,
        });
    }
    match kind {
        TransitionAdversary::None => unreachable!(),
        TransitionAdversary::Burst => {
            let lowest = |_: usize, _: usize, row: &[f64]| argmin(row);
            let mut left = budget;
            for slot in rounds.iter_mut() {
                if left <= 1e-12 {
                    break;
                }
                let (pt, spent) = corrupt_round(mdp, p, &caps, left.min(c_max), &lowest);
                left -= spent;
                *slot = Some(pt);
            }
        }
        TransitionAdversary::Spread => {
            let lowest = |_: usize, _: usize, row: &[f64]| argmin(row);
            let (pt, _) = corrupt_round(mdp, p, &caps, budget / horizon as f64, &lowest);
            rounds.iter_mut().for_each(|r| *r = Some(pt.clone()));
        }
        TransitionAdversary::Targeted => {
            let loss = reference_loss.ok_or_else(|| {
                Error::Parameter("targeted corruption needs a reference loss table".into())
            })?;
            if loss.len() != mdp.num_pairs() {
                return Err(Error::Structure(
                    "reference loss table size mismatch".into(),
                ));
            }
            let v = optimal_values(mdp, p, loss);
            let worst = |s: usize, _: usize, _: &[f64]| {
                let succ: Vec<f64> = mdp.successors(s).map(|n| v[n]).collect();
                argmax(&succ)
            };
            let (pt, _) = corrupt_round(mdp, p, &caps, budget / horizon as f64, &worst);
            rounds.iter_mut().for_each(|r| *r = Some(pt.clone()));
        }
    }
    Ok(TransitionSchedule {
        base: p.clone(),
        rounds,
        budget,
    })
}

/// Deterministic adversarial loss patterns built from random base tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum LossPattern {
    /// `period` random tables played cyclically.
    Alternating { period: usize },
    /// Two tables, switching every `phase_len` episodes.
    PhaseSwitching { phase_len: usize },
    /// Two tables in phases of length 1, 2, 4, ...
    DoublingPhases,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKindTag {
    Adversarial,
    Stochastic,
    CorruptedStochastic,
}

/// Mean table of a stochastic loss schedule with its optimal deterministic
/// policy and exact Q-gaps under the ground-truth transition.
#[derive(Debug, Clone, PartialEq)]
pub struct GapStructure {
    pub mean: Vec<f64>,
    /// Best action per non-terminal state.
    pub best: Vec<usize>,
    /// `Q*(s,a) − V*(s)` per pair; zero on best actions.
    pub gaps: Vec<f64>,
}

impl GapStructure {
    pub fn min_gap(&self) -> f64 {
        self.gaps
            .iter()
            .copied()
            .filter(|&g| g > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct LossSchedule {
    pub kind: LossKindTag,
    losses: Vec<LossFn>,
    pub gap: Option<GapStructure>,
    pub loss_budget: f64,
    /// Corruption charged against `loss_budget`.
    pub charged: f64,
}

impl LossSchedule {
    /// A fixed adversarial sequence.
    pub fn from_tables(losses: Vec<LossFn>) -> Self {
        Self {
            kind: LossKindTag::Adversarial,
            losses,
            gap: None,
            loss_budget: 0.0,
            charged: 0.0,
        }
    }

    pub fn get(&self, t: usize) -> &LossFn {
        &self.losses[t]
    }

    pub fn horizon(&self) -> usize {
        self.losses.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LossFn> {
        self.losses.iter()
    }

    /// Average loss table over the whole schedule.
    pub fn average(&self) -> Vec<f64> {
        let n = self.losses.len().max(1) as f64;
        let mut avg = vec![0.0; self.losses.first().map_or(0, |l| l.as_slice().len())];
        for l in &self.losses {
            avg.iter_mut()
                .zip(l.as_slice())
                .for_each(|(a, x)| *a += x / n);
        }
        avg
    }
}

/// Loss adversary selection.
#[derive(Debug, Clone, PartialEq)]
pub enum LossAdversary {
    Adversarial(LossPattern),
    Stochastic {
        mean: Vec<f64>,
        expectation: bool,
    },
    CorruptedStochastic {
        mean: Vec<f64>,
        expectation: bool,
        budget: f64,
    },
}

fn random_table<R: Rng + ?Sized>(mdp: &LayeredMdp, rng: &mut R) -> Vec<f64> {
    (0..mdp.num_pairs()).map(|_| rng.gen::<f64>()).collect()
}

/// Exact optimal policy and Q-gaps of a mean loss table under `p`.
pub fn gap_structure(mdp: &LayeredMdp, p: &TransitionFn, mean: &[f64]) -> Result<GapStructure> {
    LossFn::new(mdp, mean.to_vec())?;
    let v_opt = optimal_values(mdp, p, mean);
    let mut best = vec![0; mdp.num_states() - 1];
    for s in mdp.decision_states() {
        let q: Vec<f64> = (0..mdp.num_actions())
            .map(|a| mean[mdp.pair(s, a)] + continuation(mdp, p, &v_opt, s, a))
            .collect();
        let b = argmin(&q);
        if q.iter()
            .enumerate()
            .any(|(a, &x)| a != b && x - q[b] <= 1e-12)
        {
            return Err(Error::GapDegenerate { state: s });
        }
        best[s] = b;
    }
    let pi = Policy::deterministic(mdp, &best)?;
    let (v, q) = value_functions(mdp, p, &pi, mean)?;
    let mut gaps = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let i = mdp.pair(s, a);
            gaps[i] = if a == best[s] { 0.0 } else { q[i] - v[s] };
        }
    }
    Ok(GapStructure {
        mean: mean.to_vec(),
        best,
        gaps,
    })
}

/// A mean table with a unique optimal action per state and every suboptimal
/// Q-gap at least `gap` (exactly `gap` unless a loss had to be clipped).
pub fn planted_gap_mean<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    gap: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::Parameter(format!("gap {gap} must lie in (0, 1]")));
    }
    let mut mean = vec![0.0; mdp.num_pairs()];
    let mut v = vec![0.0; mdp.num_states()];
    for k in (0..mdp.num_layers()).rev() {
        for s in mdp.layer(k) {
            let cont: Vec<f64> = (0..mdp.num_actions())
                .map(|a| continuation(mdp, p, &v, s, a))
                .collect();
            let star = argmin(&cont);
            let base = rng.gen_range(0.05..0.3);
            v[s] = base + cont[star];
            for a in 0..mdp.num_actions() {
                mean[mdp.pair(s, a)] = if a == star {
                    base
                } else {
                    (v[s] + gap - cont[a]).clamp(0.0, 1.0)
                };
            }
        }
    }
    Ok(mean)
}

fn bernoulli_draw<R: Rng + ?Sized>(mean: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .map(|&m| if rng.gen::<f64>() < m { 1.0 } else { 0.0 })
        .collect()
}

/// Builds a loss sequence of length `horizon`.
///
/// Corrupted-stochastic rounds flip the clean draw (`ℓ ↦ 1 − ℓ`) and are
/// charged `L · ‖ℓ_t − clean_t‖_∞`; flips run from the first episode until
/// the next one would exceed the budget.
pub fn make_loss_adversary<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    kind: &LossAdversary,
    horizon: usize,
    rng: &mut R,
) -> Result<LossSchedule> {
    let mut losses = Vec::with_capacity(horizon);
    match kind {
        LossAdversary::Adversarial(pattern) => {
            let (tables, index): (Vec<Vec<f64>>, Box<dyn Fn(usize) -> usize>) = match *pattern {
                LossPattern::Alternating { period } => {
                    if period == 0 {
                        return Err(Error::Parameter("period must be positive".into()));
                    }
                    let tables = (0..period).map(|_| random_table(mdp, rng)).collect();
                    (tables, Box::new(move |t| t % period))
                }
                LossPattern::PhaseSwitching { phase_len } => {
                    if phase_len == 0 {
                        return Err(Error::Parameter("phase length must be positive".into()));
                    }
                    let tables = (0..2).map(|_| random_table(mdp, rng)).collect();
                    (tables, Box::new(move |t| (t / phase_len) % 2))
                }
                LossPattern::DoublingPhases => {
                    let tables = (0..2).map(|_| random_table(mdp, rng)).collect();
                    // Phase n covers episodes [2^n − 1, 2^{n+1} − 1).
                    (
                        tables,
                        Box::new(|t: usize| {
                            ((usize::BITS - (t + 1).leading_zeros() - 1) % 2) as usize
                        }),
                    )
                }
            };
            for t in 0..horizon {
                losses.push(LossFn::new(mdp, tables[index(t)].clone())?);
            }
            Ok(LossSchedule {
                kind: LossKindTag::Adversarial,
                losses,
                gap: None,
                loss_budget: 0.0,
                charged: 0.0,
            })
        }
        LossAdversary::Stochastic { mean, expectation }
        | LossAdversary::CorruptedStochastic {
            mean, expectation, ..
        } => {
            let gap = gap_structure(mdp, p, mean)?;
            let (tag, budget) = match kind {
                LossAdversary::CorruptedStochastic { budget, .. } => {
                    if !(*budget >= 0.0) {
                        return Err(Error::Parameter("loss budget must be nonnegative".into()));
                    }
                    (LossKindTag::CorruptedStochastic, *budget)
                }
                _ => (LossKindTag::Stochastic, 0.0),
            };
            let horizon_len = mdp.num_layers() as f64;
            let mut charged = 0.0;
            for _ in 0..horizon {
                let clean = if *expectation {
                    mean.clone()
                } else {
                    bernoulli_draw(mean, rng)
                };
                let flipped: Vec<f64> = clean.iter().map(|x| 1.0 - x).collect();
                let dev = clean
                    .iter()
                    .zip(&flipped)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let cost = horizon_len * dev;
                if dev > 0.0 && charged + cost <= budget + 1e-12 {
                    charged += cost;
                    losses.push(LossFn::new(mdp, flipped)?);
                } else {
                    losses.push(LossFn::new(mdp, clean)?);
                }
            }
            Ok(LossSchedule {
                kind: tag,
                losses,
                gap: Some(gap),
                loss_budget: budget,
                charged,
            })
        }
    }
}
