//! Upper occupancy bounds, importance-weighted loss estimates and the
//! amortized corruption bonus.

use crate::error::{Error, Result};
use crate::estimation::ConfidenceSet;
use crate::mdp::{LayeredMdp, Policy, Trajectory};

/// `u(s) = max_{P̂ ∈ conf} q^{P̂,π}(s)` and `u(s,a) = u(s)π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperOccupancy {
    pub states: Vec<f64>,
    pub pairs: Vec<f64>,
}

/// Maximises `Σ_j p_j f_j` over `lower ≤ p ≤ upper`, `Σ p = 1`.
///
/// Starts from the lower ends and pours the remaining mass into successors in
/// decreasing order of `f`; equal values are filled in index order.
pub fn box_simplex_max(lower: &[f64], upper: &[f64], f: &[f64]) -> Result<f64> {
    let base: f64 = lower.iter().sum();
    if base > 1.0 + 1e-12 {
        return Err(Error::Invariant(format!("lower bounds sum to {base} > 1")));
    }
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&i, &j| f[j].total_cmp(&f[i]));
    let mut left = (1.0 - base).max(0.0);
    let mut value: f64 = lower.iter().zip(f).map(|(l, v)| l * v).sum();
    for j in order {
        if left <= 0.0 {
            break;
        }
        let add = (upper[j] - lower[j]).min(left);
        value += add * f[j];
        left -= add;
    }
    Ok(value)
}

/// A random transition inside the confidence box: each row starts at its
/// lower ends and the remaining mass is poured into successors in random
/// order, a random share at a time, up to their upper ends.
pub fn sample_in_box<R: rand::Rng + ?Sized>(
    mdp: &LayeredMdp,
    conf: &ConfidenceSet,
    rng: &mut R,
) -> crate::mdp::TransitionFn {
    use rand::seq::SliceRandom;
    let mut probs = vec![0.0; mdp.num_triples()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            let r = mdp.triple_range(s, a);
            for i in r.clone() {
                probs[i] = conf.lower(i);
            }
            let mut left = (1.0 - probs[r.clone()].iter().sum::<f64>()).max(0.0);
            let mut order: Vec<usize> = r.collect();
            order.shuffle(rng);
            let last = order.len() - 1;
            for (k, &i) in order.iter().enumerate() {
                let room = conf.upper(i) - probs[i];
                let share = if k == last { left } else { left * rng.gen::<f64>() };
                let add = share.min(room);
                probs[i] += add;
                left -= add;
            }
            // Whatever is left fits under the upper ends in index order.
            for i in mdp.triple_range(s, a) {
                let add = left.min(conf.upper(i) - probs[i]);
                probs[i] += add;
                left -= add;
            }
        }
    }
    crate::mdp::TransitionFn::from_parts_unchecked(probs, false)
}

/// Comp-UOB: one backward pass per target state over the confidence box.
pub fn comp_uob(mdp: &LayeredMdp, conf: &ConfidenceSet, pi: &Policy) -> Result<UpperOccupancy> {
    let n = mdp.num_states();
    let mut states = vec![0.0; n];
    let mut reach = vec![0.0; n];
    let lower: Vec<f64> = (0..mdp.num_triples()).map(|i| conf.lower(i)).collect();
    let upper: Vec<f64> = (0..mdp.num_triples()).map(|i| conf.upper(i)).collect();
    states[mdp.initial()] = 1.0;
    for target in 1..n {
        let k = mdp.layer_of(target);
        reach.iter_mut().for_each(|x| *x = 0.0);
        reach[target] = 1.0;
        for j in (0..k).rev() {
            for s in mdp.layer(j) {
                let succ = mdp.successors(s);
                let f = &reach[succ.clone()];
                let mut v = 0.0;
                for a in 0..mdp.num_actions() {
                    let w = pi.prob(s, a);
                    if w == 0.0 {
                        continue;
                    }
                    let r = mdp.triple_range(s, a);
                    v += w * box_simplex_max(&lower[r.clone()], &upper[r], f)?;
                }
                reach[s] = v;
            }
        }
        states[target] = reach[mdp.initial()].min(1.0);
    }
    let mut pairs = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            pairs[mdp.pair(s, a)] = states[s] * pi.prob(s, a);
        }
    }
    Ok(UpperOccupancy { states, pairs })
}

/// `ℓ̂(s,a) = ℓ(s,a) / u(s,a)` on visited pairs, zero elsewhere.
pub fn loss_estimator(mdp: &LayeredMdp, traj: &Trajectory, u: &UpperOccupancy) -> Result<Vec<f64>> {
    let mut est = vec![0.0; mdp.num_pairs()];
    for st in &traj.steps {
        let i = mdp.pair(st.state, st.action);
        let d = u.pairs[i];
        if !(d > 0.0) {
            return Err(Error::Invariant(format!(
                "upper occupancy {d} at visited pair ({}, {})",
                st.state, st.action
            )));
        }
        est[i] = st.loss / d;
    }
    Ok(est)
}

/// The unique `j ≥ 0` with `u ∈ (2^{-j-1}, 2^{-j}]`.
pub fn bin_index(u: f64) -> Result<usize> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::Parameter(format!(
            "bin index needs u in (0,1], got {u}"
        )));
    }
    let mut j = (-u.log2()).floor().max(0.0) as i32;
    while j > 0 && u > 2f64.powi(-j) {
        j -= 1;
    }
    while u <= 2f64.powi(-j - 1) {
        j += 1;
    }
    Ok(j as usize)
}

/// Dyadic-bin counters behind the amortized bonus.
#[derive(Debug, Clone, PartialEq)]
pub struct BonusState {
    counts: Vec<Vec<u64>>,
    threshold: f64,
    scale: f64,
}

impl BonusState {
    /// Bonus `4L/u(s)` while a bin has been hit at most `corruption / (2L)` times.
    pub fn new(mdp: &LayeredMdp, corruption: f64) -> Self {
        let l = mdp.num_layers() as f64;
        Self {
            counts: vec![Vec::new(); mdp.num_states()],
            threshold: corruption / (2.0 * l),
            scale: 4.0 * l,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| c.clear());
    }

    /// Counter of bin `j` at state `s`.
    pub fn count(&self, s: usize, j: usize) -> u64 {
        self.counts[s].get(j).copied().unwrap_or(0)
    }

    /// Increments each non-terminal state's bin and returns the per-state bonus.
    pub fn bonus(&mut self, mdp: &LayeredMdp, u: &UpperOccupancy) -> Result<Vec<f64>> {
        let mut out = vec![0.0; mdp.num_states()];
        for s in mdp.decision_states() {
            let us = u.states[s];
            let j = bin_index(us)?;
            let c = &mut self.counts[s];
            if c.len() <= j {
                c.resize(j + 1, 0);
            }
            c[j] += 1;
            if c[j] as f64 <= self.threshold {
                out[s] = self.scale / us;
            }
        }
        Ok(out)
    }
}

/// Spreads a per-state table onto every action of that state.
pub fn per_pair(mdp: &LayeredMdp, per_state: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mdp.num_pairs()];
    for s in mdp.decision_states() {
        for a in 0..mdp.num_actions() {
            out[mdp.pair(s, a)] = per_state[s];
        }
    }
    out
}
