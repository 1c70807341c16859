//! Epoch schedule, visit counters, empirical transitions and confidence sets.

use crate::error::{Error, Result};
use crate::mdp::{LayeredMdp, Trajectory, TransitionFn};

/// `ln ι` with `ι = |S||A|T/δ` (natural logarithm, `|S|` counting every state).
pub fn log_iota(mdp: &LayeredMdp, horizon: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!(
            "confidence level {delta} outside (0,1)"
        )));
    }
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be positive".into()));
    }
    let iota = mdp.num_states() as f64 * mdp.num_actions() as f64 * horizon as f64 / delta;
    Ok(iota.ln())
}

/// Visit counts frozen at the current epoch boundary plus running totals.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochCounters {
    epoch: usize,
    epoch_start: usize,
    frozen_pairs: Vec<u64>,
    frozen_triples: Vec<u64>,
    total_pairs: Vec<u64>,
    total_triples: Vec<u64>,
}

impl EpochCounters {
    pub fn new(mdp: &LayeredMdp) -> Self {
        Self {
            epoch: 1,
            epoch_start: 1,
            frozen_pairs: vec![0; mdp.num_pairs()],
            frozen_triples: vec![0; mdp.num_triples()],
            total_pairs: vec![0; mdp.num_pairs()],
            total_triples: vec![0; mdp.num_triples()],
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// First episode (one-based) of the current epoch.
    pub fn epoch_start(&self) -> usize {
        self.epoch_start
    }

    /// `m_i(s,a)` of the current epoch.
    pub fn frozen_pairs(&self) -> &[u64] {
        &self.frozen_pairs
    }

    pub fn frozen_triples(&self) -> &[u64] {
        &self.frozen_triples
    }

    pub fn total_pairs(&self) -> &[u64] {
        &self.total_pairs
    }

    pub fn total_triples(&self) -> &[u64] {
        &self.total_triples
    }

    /// Adds the transitions of one episode to the running totals. A step that
    /// left the layered structure early (into the terminal state before the
    /// last layer) is not a sample of the next-layer row and is skipped.
    pub fn update(&mut self, mdp: &LayeredMdp, traj: &Trajectory) {
        for st in &traj.steps {
            if !mdp.successors(st.state).contains(&st.next) {
                break;
            }
            self.total_pairs[mdp.pair(st.state, st.action)] += 1;
            self.total_triples[mdp.triple(st.state, st.action, st.next)] += 1;
        }
    }

    /// Whether some pair visited in `traj` now has a total count of at least
    /// `max(1, 2 m_i(s,a))`. Call after [`update`](Self::update).
    pub fn triggers(&self, mdp: &LayeredMdp, traj: &Trajectory) -> bool {
        traj.steps.iter().any(|st| {
            let i = mdp.pair(st.state, st.action);
            self.total_pairs[i] >= (2 * self.frozen_pairs[i]).max(1)
        })
    }

    /// Freezes the running totals and opens a new epoch at episode `next_start`.
    pub fn advance(&mut self, next_start: usize) {
        self.frozen_pairs.copy_from_slice(&self.total_pairs);
        self.frozen_triples.copy_from_slice(&self.total_triples);
        self.epoch += 1;
        self.epoch_start = next_start;
    }

    /// Update, test and (if triggered) advance in one go; `t` is the one-based
    /// index of the episode just finished. Returns whether a new epoch began.
    pub fn record(&mut self, mdp: &LayeredMdp, traj: &Trajectory, t: usize) -> bool {
        self.update(mdp, traj);
        if self.triggers(mdp, traj) {
            self.advance(t + 1);
            true
        } else {
            false
        }
    }
}

/// `m(s,a,s') / m(s,a)`, uniform over the next layer when `m(s,a) = 0`.
pub fn empirical_transition(mdp: &LayeredMdp, counters: &EpochCounters) -> TransitionFn {
    let mut probs = vec![0.0; mdp.num_triples()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let m = counters.frozen_pairs[mdp.pair(s, a)];
            let r = mdp.triple_range(s, a);
            let width = r.len() as f64;
            for i in r {
                probs[i] = if m == 0 {
                    1.0 / width
                } else {
                    counters.frozen_triples[i] as f64 / m as f64
                };
            }
        }
    }
    TransitionFn::from_parts_unchecked(probs, false)
}

/// Width `min{1, 16 sqrt(P̄ ln ι / m) + 64 (θ + ln ι) / m}`; one when `m = 0`.
pub fn width(p_bar: f64, m: u64, theta: f64, log_iota: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let m = m as f64;
    (16.0 * (p_bar * log_iota / m).sqrt() + 64.0 * (theta + log_iota) / m).min(1.0)
}

/// Per-triple widths for the counters' frozen counts.
pub fn confidence_width(
    mdp: &LayeredMdp,
    counters: &EpochCounters,
    p_bar: &TransitionFn,
    theta: f64,
    delta: f64,
    horizon: usize,
) -> Result<Vec<f64>> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::Parameter(format!(
            "corruption guess {theta} must be nonnegative"
        )));
    }
    let li = log_iota(mdp, horizon, delta)?;
    let mut b = vec![0.0; mdp.num_triples()];
    for (s, a, _, i) in mdp.triples() {
        b[i] = width(
            p_bar.as_slice()[i],
            counters.frozen_pairs[mdp.pair(s, a)],
            theta,
            li,
        );
    }
    Ok(b)
}

/// The set of transitions within `B_i` of `P̄_i`, triple by triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub p_bar: TransitionFn,
    pub width: Vec<f64>,
    pub theta: f64,
    pub delta: f64,
    pub log_iota: f64,
}

impl ConfidenceSet {
    pub fn new(
        mdp: &LayeredMdp,
        counters: &EpochCounters,
        theta: f64,
        delta: f64,
        horizon: usize,
    ) -> Result<Self> {
        let p_bar = empirical_transition(mdp, counters);
        let width = confidence_width(mdp, counters, &p_bar, theta, delta, horizon)?;
        Ok(Self {
            p_bar,
            width,
            theta,
            delta,
            log_iota: log_iota(mdp, horizon, delta)?,
        })
    }

    /// Lower end `max(0, P̄ − B)` of triple `i`.
    pub fn lower(&self, i: usize) -> f64 {
        (self.p_bar.as_slice()[i] - self.width[i]).max(0.0)
    }

    /// Upper end `min(1, P̄ + B)` of triple `i`.
    pub fn upper(&self, i: usize) -> f64 {
        (self.p_bar.as_slice()[i] + self.width[i]).min(1.0)
    }

    pub fn contains(&self, p: &TransitionFn) -> bool {
        p.as_slice()
            .iter()
            .zip(self.p_bar.as_slice())
            .zip(&self.width)
            .all(|((x, y), b)| (x - y).abs() <= *b)
    }

    /// `P̃(s'|s,a) = max{0, P̄ − B}`; the deficit goes to the terminal state.
    pub fn optimistic_transition(&self) -> TransitionFn {
        let probs = (0..self.width.len()).map(|i| self.lower(i)).collect();
        TransitionFn::from_parts_unchecked(probs, true)
    }

    /// `L · min{1, Σ_{s'} B(s,a,s')}` per pair.
    pub fn exploration_bonus(&self, mdp: &LayeredMdp) -> Vec<f64> {
        let l = mdp.num_layers() as f64;
        let mut out = vec![0.0; mdp.num_pairs()];
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let sum: f64 = self.width[mdp.triple_range(s, a)].iter().sum();
                out[mdp.pair(s, a)] = l * sum.min(1.0);
            }
        }
        out
    }
}
