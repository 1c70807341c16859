//! Layered episodic MDPs: geometry, transition tables, policies, occupancy
//! measures and the exact forward/backward dynamic programs over them.
//!
//! States carry dense global ids ordered by layer, so `s0 = 0` and the
//! terminal state is the last id. Every table is a flat `Vec<f64>`:
//!
//! * state-action tables are indexed by `s * |A| + a` for non-terminal `s`;
//! * transition and occupancy triples `(s, a, s')` are stored contiguously per
//!   `(s, a)` with `s'` ranging over the next layer in id order.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Absolute tolerance for probability sums on construction.
pub const BUILD_TOL: f64 = 1e-12;
/// Absolute tolerance for probability sums after arithmetic.
pub const ARITH_TOL: f64 = 1e-10;

/// Layer structure and action count of an episodic MDP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredMdp {
    layer_sizes: Vec<usize>,
    num_actions: usize,
    layer_start: Vec<usize>,
    layer_of: Vec<usize>,
    triple_start: Vec<usize>,
    num_triples: usize,
}

impl LayeredMdp {
    /// `layer_sizes[k] = |S_k|` for `k = 0..=L`; the first and last layer must
    /// hold exactly one state.
    pub fn new(layer_sizes: Vec<usize>, num_actions: usize) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Structure(
                "need at least two layers (s0 and s_L)".into(),
            ));
        }
        if layer_sizes[0] != 1 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Structure(
                "first and last layer must contain exactly one state".into(),
            ));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Structure("empty layer".into()));
        }
        if num_actions == 0 {
            return Err(Error::Structure(
                "every state needs at least one action".into(),
            ));
        }
        let mut layer_start = Vec::with_capacity(layer_sizes.len() + 1);
        let mut layer_of = Vec::new();
        let mut acc = 0;
        for (k, &n) in layer_sizes.iter().enumerate() {
            layer_start.push(acc);
            layer_of.extend(std::iter::repeat(k).take(n));
            acc += n;
        }
        layer_start.push(acc);

        let num_states = acc;
        let mut triple_start = Vec::with_capacity(num_states);
        let mut t = 0;
        for s in 0..num_states {
            triple_start.push(t);
            let k = layer_of[s];
            if k + 1 < layer_sizes.len() {
                t += num_actions * layer_sizes[k + 1];
            }
        }
        Ok(Self {
            layer_sizes,
            num_actions,
            layer_start,
            layer_of,
            triple_start,
            num_triples: t,
        })
    }

    /// Horizon `L` (number of decision layers).
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_states(&self) -> usize {
        *self.layer_start.last().unwrap()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of non-terminal state-action pairs.
    pub fn num_pairs(&self) -> usize {
        (self.num_states() - 1) * self.num_actions
    }

    pub fn num_triples(&self) -> usize {
        self.num_triples
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn terminal(&self) -> usize {
        self.num_states() - 1
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        s == self.terminal()
    }

    pub fn layer(&self, k: usize) -> Range<usize> {
        self.layer_start[k]..self.layer_start[k + 1]
    }

    pub fn layer_of(&self, s: usize) -> usize {
        self.layer_of[s]
    }

    /// Non-terminal states in layer order.
    pub fn decision_states(&self) -> Range<usize> {
        0..self.terminal()
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// Next-layer states of a non-terminal state.
    pub fn successors(&self, s: usize) -> Range<usize> {
        self.layer(self.layer_of[s] + 1)
    }

    pub fn triple_range(&self, s: usize, a: usize) -> Range<usize> {
        let width = self.layer_sizes[self.layer_of[s] + 1];
        let start = self.triple_start[s] + a * width;
        start..start + width
    }

    pub fn triple(&self, s: usize, a: usize, next: usize) -> usize {
        let succ = self.successors(s);
        debug_assert!(succ.contains(&next));
        self.triple_range(s, a).start + (next - succ.start)
    }

    /// All triples whose source lies in layer `k`.
    pub fn layer_triples(&self, k: usize) -> Range<usize> {
        let layer = self.layer(k);
        let start = self.triple_start[layer.start];
        let end = if k + 1 < self.num_layers() {
            self.triple_start[self.layer_start[k + 1]]
        } else {
            self.num_triples
        };
        start..end
    }

    /// Iterator over `(s, a, s', triple index)`.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.decision_states().flat_map(move |s| {
            (0..self.num_actions).flat_map(move |a| {
                let base = self.triple_range(s, a).start;
                self.successors(s)
                    .enumerate()
                    .map(move |(j, n)| (s, a, n, base + j))
            })
        })
    }
}

/// Transition probabilities `P(s'|s,a)` toward the next layer.
///
/// When `sub_stochastic` is set a row may sum to less than one; the deficit is
/// mass sent straight to the terminal state and is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFn {
    probs: Vec<f64>,
    sub_stochastic: bool,
}

impl TransitionFn {
    pub fn new(mdp: &LayeredMdp, probs: Vec<f64>, sub_stochastic: bool) -> Result<Self> {
        if probs.len() != mdp.num_triples() {
            return Err(Error::Structure(format!(
                "transition table has {} entries, MDP has {} triples",
                probs.len(),
                mdp.num_triples()
            )));
        }
        let p = Self {
            probs,
            sub_stochastic,
        };
        p.validate(mdp, BUILD_TOL)?;
        Ok(p)
    }

    /// Uniform rows over the next layer.
    pub fn uniform(mdp: &LayeredMdp) -> Self {
        let mut probs = vec![0.0; mdp.num_triples()];
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let r = mdp.triple_range(s, a);
                let w = 1.0 / r.len() as f64;
                probs[r].iter_mut().for_each(|x| *x = w);
            }
        }
        Self {
            probs,
            sub_stochastic: false,
        }
    }

    /// Rows drawn from a flat Dirichlet, sharpened by `concentration` (raising
    /// the exponential draws to that power; `1.0` is the flat Dirichlet).
    pub fn random<R: Rng + ?Sized>(mdp: &LayeredMdp, concentration: f64, rng: &mut R) -> Self {
        let mut probs = vec![0.0; mdp.num_triples()];
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let r = mdp.triple_range(s, a);
                let row = &mut probs[r];
                for x in row.iter_mut() {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    *x = (-u.ln()).powf(concentration);
                }
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= z);
            }
        }
        Self {
            probs,
            sub_stochastic: false,
        }
    }

    pub(crate) fn from_parts_unchecked(probs: Vec<f64>, sub_stochastic: bool) -> Self {
        Self {
            probs,
            sub_stochastic,
        }
    }

    pub fn validate(&self, mdp: &LayeredMdp, tol: f64) -> Result<()> {
        if self.probs.len() != mdp.num_triples() {
            return Err(Error::Structure("transition table size mismatch".into()));
        }
        for (i, &p) in self.probs.iter().enumerate() {
            if !p.is_finite() || !(-tol..=1.0 + tol).contains(&p) {
                return Err(Error::Invariant(format!(
                    "transition entry {i} = {p} outside [0,1]"
                )));
            }
        }
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let sum: f64 = self.row(mdp, s, a).iter().sum();
                let ok = if self.sub_stochastic {
                    sum <= 1.0 + tol
                } else {
                    (sum - 1.0).abs() <= tol
                };
                if !ok {
                    return Err(Error::Invariant(format!(
                        "transition row ({s},{a}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_sub_stochastic(&self) -> bool {
        self.sub_stochastic
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, mdp: &LayeredMdp, s: usize, a: usize) -> &[f64] {
        &self.probs[mdp.triple_range(s, a)]
    }

    pub fn row_mut(&mut self, mdp: &LayeredMdp, s: usize, a: usize) -> &mut [f64] {
        &mut self.probs[mdp.triple_range(s, a)]
    }

    pub fn prob(&self, mdp: &LayeredMdp, s: usize, a: usize, next: usize) -> f64 {
        self.probs[mdp.triple(s, a, next)]
    }

    /// Probability of jumping straight to the terminal state.
    pub fn deficit(&self, mdp: &LayeredMdp, s: usize, a: usize) -> f64 {
        (1.0 - self.row(mdp, s, a).iter().sum::<f64>()).max(0.0)
    }
}

/// A stochastic policy `π(a|s)` over non-terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(mdp: &LayeredMdp, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != mdp.num_pairs() {
            return Err(Error::Structure(format!(
                "policy has {} entries, MDP has {} state-action pairs",
                probs.len(),
                mdp.num_pairs()
            )));
        }
        let pi = Self {
            num_actions: mdp.num_actions(),
            probs,
        };
        for s in mdp.decision_states() {
            let row = pi.row(s);
            if row.iter().any(|&p| !p.is_finite() || p < -BUILD_TOL) {
                return Err(Error::Invariant(format!(
                    "negative policy entry at state {s}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > BUILD_TOL {
                return Err(Error::Invariant(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(pi)
    }

    pub fn uniform(mdp: &LayeredMdp) -> Self {
        let a = mdp.num_actions();
        Self {
            num_actions: a,
            probs: vec![1.0 / a as f64; mdp.num_pairs()],
        }
    }

    /// Deterministic policy playing `actions[s]` at every non-terminal state.
    pub fn deterministic(mdp: &LayeredMdp, actions: &[usize]) -> Result<Self> {
        if actions.len() != mdp.num_states() - 1 {
            return Err(Error::Structure(
                "one action per non-terminal state required".into(),
            ));
        }
        let mut probs = vec![0.0; mdp.num_pairs()];
        for (s, &a) in actions.iter().enumerate() {
            if a >= mdp.num_actions() {
                return Err(Error::Structure(format!("action {a} out of range")));
            }
            probs[mdp.pair(s, a)] = 1.0;
        }
        Ok(Self {
            num_actions: mdp.num_actions(),
            probs,
        })
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Smallest action probability anywhere.
    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Per-pair losses in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossFn(Vec<f64>);

impl LossFn {
    pub fn new(mdp: &LayeredMdp, values: Vec<f64>) -> Result<Self> {
        if values.len() != mdp.num_pairs() {
            return Err(Error::Structure("loss table size mismatch".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invariant(format!("loss {v} outside [0,1]")));
        }
        Ok(Self(values))
    }

    pub fn constant(mdp: &LayeredMdp, value: f64) -> Result<Self> {
        Self::new(mdp, vec![value; mdp.num_pairs()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Occupancy measure `q(s,a,s')` with its pair and state marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    triples: Vec<f64>,
    pairs: Vec<f64>,
    states: Vec<f64>,
}

impl OccupancyMeasure {
    /// Builds the marginals from a triple table; `q(s)` for the terminal state
    /// is the inflow from the last decision layer.
    pub fn from_triples(mdp: &LayeredMdp, triples: Vec<f64>) -> Result<Self> {
        if triples.len() != mdp.num_triples() {
            return Err(Error::Structure("occupancy table size mismatch".into()));
        }
        let mut pairs = vec![0.0; mdp.num_pairs()];
        let mut states = vec![0.0; mdp.num_states()];
        for s in mdp.decision_states() {
            for a in 0..mdp.num_actions() {
                let v: f64 = triples[mdp.triple_range(s, a)].iter().sum();
                pairs[mdp.pair(s, a)] = v;
                states[s] += v;
            }
        }
        let last = mdp.num_layers() - 1;
        states[mdp.terminal()] = triples[mdp.layer_triples(last)].iter().sum();
        Ok(Self {
            triples,
            pairs,
            states,
        })
    }

    pub fn triples(&self) -> &[f64] {
        &self.triples
    }

    pub fn pairs(&self) -> &[f64] {
        &self.pairs
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn pair(&self, mdp: &LayeredMdp, s: usize, a: usize) -> f64 {
        self.pairs[mdp.pair(s, a)]
    }

    pub fn state(&self, s: usize) -> f64 {
        self.states[s]
    }

    /// `⟨q, r⟩` over state-action pairs.
    pub fn dot(&self, r: &[f64]) -> f64 {
        self.pairs.iter().zip(r).map(|(q, r)| q * r).sum()
    }

    /// Largest violation of the flow invariants: nonnegativity, unit (or at
    /// most unit, when `sub_stochastic`) layer mass, and `inflow(s') = q(s')`
    /// for interior states.
    pub fn flow_residual(&self, mdp: &LayeredMdp, sub_stochastic: bool) -> f64 {
        let mut worst = self
            .triples
            .iter()
            .map(|&q| (-q).max(0.0))
            .fold(0.0, f64::max);
        for k in 0..mdp.num_layers() {
            let mass: f64 = mdp.layer(k).map(|s| self.states[s]).sum();
            let dev = if sub_stochastic && k > 0 {
                (mass - 1.0).max(0.0)
            } else {
                (mass - 1.0).abs()
            };
            worst = worst.max(dev);
        }
        let mut inflow = vec![0.0; mdp.num_states()];
        for (_, _, n, i) in mdp.triples() {
            inflow[n] += self.triples[i];
        }
        for k in 1..mdp.num_layers() {
            for s in mdp.layer(k) {
                worst = worst.max((inflow[s] - self.states[s]).abs());
            }
        }
        worst
    }
}

/// Forward dynamic program `q(s0) = 1`, `q(s,a) = q(s)π(a|s)`,
/// `q(s,a,s') = q(s,a)P(s'|s,a)`.
pub fn compute_occupancy(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    pi: &Policy,
) -> Result<OccupancyMeasure> {
    check_dims(mdp, p, pi)?;
    let mut triples = vec![0.0; mdp.num_triples()];
    let mut pairs = vec![0.0; mdp.num_pairs()];
    let mut states = vec![0.0; mdp.num_states()];
    states[mdp.initial()] = 1.0;
    for k in 0..mdp.num_layers() {
        for s in mdp.layer(k) {
            let qs = states[s];
            for a in 0..mdp.num_actions() {
                let qsa = qs * pi.prob(s, a);
                pairs[mdp.pair(s, a)] = qsa;
                let range = mdp.triple_range(s, a);
                for (i, n) in range.zip(mdp.successors(s)) {
                    let v = qsa * p.as_slice()[i];
                    triples[i] = v;
                    states[n] += v;
                }
            }
        }
    }
    Ok(OccupancyMeasure {
        triples,
        pairs,
        states,
    })
}

/// `π(a|s) ∝ q(s,a)`; rows with zero mass fall back to uniform.
pub fn extract_policy(mdp: &LayeredMdp, pair_occupancy: &[f64]) -> Result<Policy> {
    if pair_occupancy.len() != mdp.num_pairs() {
        return Err(Error::Structure("occupancy table size mismatch".into()));
    }
    let na = mdp.num_actions();
    let mut probs = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        let row = &pair_occupancy[s * na..(s + 1) * na];
        if let Some(v) = row.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "occupancy entry {v} at state {s}"
            )));
        }
        let total: f64 = row.iter().sum();
        let out = &mut probs[s * na..(s + 1) * na];
        if total > 0.0 {
            out.iter_mut().zip(row).for_each(|(o, &v)| *o = v / total);
        } else {
            out.iter_mut().for_each(|o| *o = 1.0 / na as f64);
        }
    }
    Ok(Policy {
        num_actions: na,
        probs,
    })
}

/// State and state-action values of a real-valued table `r`, computed
/// backward from `V(s_L) = 0`. Deficit mass of a sub-stochastic row
/// contributes nothing.
pub fn value_functions(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    pi: &Policy,
    r: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(mdp, p, pi)?;
    if r.len() != mdp.num_pairs() {
        return Err(Error::Structure("reward table size mismatch".into()));
    }
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("loss entry {i} is {}", r[i])));
    }
    let mut v = vec![0.0; mdp.num_states()];
    let mut q = vec![0.0; mdp.num_pairs()];
    for k in (0..mdp.num_layers()).rev() {
        for s in mdp.layer(k) {
            let mut vs = 0.0;
            for a in 0..mdp.num_actions() {
                let cont: f64 = p
                    .row(mdp, s, a)
                    .iter()
                    .zip(mdp.successors(s))
                    .map(|(pr, n)| pr * v[n])
                    .sum();
                let qa = r[mdp.pair(s, a)] + cont;
                q[mdp.pair(s, a)] = qa;
                vs += pi.prob(s, a) * qa;
            }
            v[s] = vs;
        }
    }
    Ok((v, q))
}

/// `V^{P,π}(s0; ℓ)`.
pub fn expected_loss(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    pi: &Policy,
    loss: &LossFn,
) -> Result<f64> {
    let (v, _) = value_functions(mdp, p, pi, loss.as_slice())?;
    Ok(v[mdp.initial()])
}

/// One step of an episode: the pair played, its loss, and where it led.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub loss: f64,
    pub next: usize,
}

/// A sampled episode under bandit feedback.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Set when a sub-stochastic row sent the walker to `s_L` early; holds the
    /// layer at which that happened.
    pub terminated_early: Option<usize>,
}

impl Trajectory {
    pub fn total_loss(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }

    /// Whether `(s, a)` was played in this episode.
    pub fn visited(&self, s: usize, a: usize) -> bool {
        self.steps.iter().any(|st| st.state == s && st.action == a)
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let mut u: f64 = rng.gen();
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Some(i);
        }
        u -= w;
    }
    None
}

/// Samples an episode; only the losses of visited pairs are recorded.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    p: &TransitionFn,
    pi: &Policy,
    loss: &LossFn,
    rng: &mut R,
) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.num_layers());
    let mut s = mdp.initial();
    let mut terminated_early = None;
    while !mdp.is_terminal(s) {
        let row = pi.row(s);
        // Rounding can leave the cumulative sum a hair below one.
        let a = sample_index(row, rng).unwrap_or_else(|| last_positive(row));
        let prow = p.row(mdp, s, a);
        let next = match sample_index(prow, rng) {
            Some(j) => mdp.successors(s).start + j,
            None if p.is_sub_stochastic() => {
                terminated_early = Some(mdp.layer_of(s));
                mdp.terminal()
            }
            None => mdp.successors(s).start + last_positive(prow),
        };
        steps.push(Step {
            state: s,
            action: a,
            loss: loss.as_slice()[mdp.pair(s, a)],
            next,
        });
        s = next;
    }
    Trajectory {
        steps,
        terminated_early,
    }
}

fn last_positive(w: &[f64]) -> usize {
    w.iter().rposition(|&x| x > 0.0).unwrap_or(w.len() - 1)
}

fn check_dims(mdp: &LayeredMdp, p: &TransitionFn, pi: &Policy) -> Result<()> {
    if p.as_slice().len() != mdp.num_triples() {
        return Err(Error::Structure("transition does not match MDP".into()));
    }
    if pi.as_slice().len() != mdp.num_pairs() || pi.num_actions != mdp.num_actions() {
        return Err(Error::Structure("policy does not match MDP".into()));
    }
    Ok(())
}
