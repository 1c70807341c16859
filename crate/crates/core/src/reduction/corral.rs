//! Log-barrier FTRL master over arms with geometric corruption hypotheses.

use crate::error::{Error, Result};
use crate::learners::Audit;

#[derive(Debug, Clone, PartialEq)]
pub struct Corral {
    horizon: usize,
    beta1: f64,
    beta2: f64,
    eta: f64,
    layers: usize,
    /// `Σ (ĉ − r)` per arm.
    cumulative: Vec<f64>,
    /// Running maximum of `1/w` per arm, started at the arm count.
    rho: Vec<f64>,
    weights: Vec<f64>,
}

/// `argmin_{w ∈ Δ(M), w ≥ floor} ⟨w, losses⟩ + (1/η) Σ log(1/w_i)`.
///
/// Stationarity gives `w_i = max(floor, 1/(η(L_i + λ)))`; the normaliser `λ`
/// is found by bisection on the (decreasing) total mass.
pub fn corral_weights(losses: &[f64], eta: f64, floor: f64) -> Result<Vec<f64>> {
    let m = losses.len();
    if m == 0 || !(eta > 0.0) {
        return Err(Error::Parameter("weights need at least one arm and η > 0".into()));
    }
    if floor * m as f64 > 1.0 + 1e-15 {
        return Err(Error::Parameter(format!("floor {floor} infeasible for {m} arms")));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite cumulative loss".into()));
    }
    // Shift by the minimum so the normaliser μ = λ + min L lives in (0, M/η].
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let gaps: Vec<f64> = losses.iter().map(|l| l - min).collect();
    let weight = |mu: f64, g: f64| (1.0 / (eta * (g + mu))).max(floor);
    let mass = |mu: f64| -> f64 { gaps.iter().map(|&g| weight(mu, g)).sum() };
    let (mut lo, mut hi) = (0.0f64, m as f64 / eta);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut w: Vec<f64> = gaps.iter().map(|&g| weight(hi, g)).collect();
    // Hand the bisection's last sliver to the unfloored arms proportionally.
    let total: f64 = w.iter().sum();
    let free: f64 = w.iter().filter(|&&x| x > floor).sum();
    if free > 0.0 {
        let scale = (free + 1.0 - total) / free;
        w.iter_mut().filter(|x| **x > floor).for_each(|x| *x *= scale);
    }
    Ok(w)
}

impl Corral {
    /// `M = max(1, ⌈log2 T⌉)` arms, `η = 1/(4(sqrt(β1 T) + β2))`, `ρ_0 = M`.
    pub fn new(horizon: usize, layers: usize, beta1: f64, beta2: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        if !(beta1 > 0.0 && beta2 > 0.0) {
            return Err(Error::Parameter("β1 and β2 must be positive".into()));
        }
        let arms = Self::arm_count(horizon);
        let eta = 1.0 / (4.0 * ((beta1 * horizon as f64).sqrt() + beta2));
        let mut c = Self {
            horizon,
            beta1,
            beta2,
            eta,
            layers,
            cumulative: vec![0.0; arms],
            rho: vec![arms as f64; arms],
            weights: Vec::new(),
        };
        c.weights = corral_weights(&c.cumulative, eta, c.floor())?;
        Ok(c)
    }

    pub fn arm_count(horizon: usize) -> usize {
        ((horizon as f64).log2().ceil() as usize).max(1)
    }

    /// Corruption hypothesis `2^i` of arm `i` (one-based exponent).
    pub fn hypothesis(arm: usize) -> f64 {
        2f64.powi(arm as i32 + 1)
    }

    pub fn arms(&self) -> usize {
        self.cumulative.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn floor(&self) -> f64 {
        1.0 / self.horizon as f64
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Feeds the realized loss `c` of arm `chosen` and recomputes the weights.
    /// Returns the per-arm `ĉ − r` that entered the cumulative sum.
    pub fn update(&mut self, chosen: usize, c: f64, audit: &mut Audit) -> Result<Vec<f64>> {
        let l = self.layers as f64;
        if !(0.0..=l + 1e-12).contains(&c) {
            return Err(Error::Invariant(format!("episode loss {c} outside [0, {l}]")));
        }
        if chosen >= self.arms() {
            return Err(Error::Parameter(format!("arm {chosen} out of range")));
        }
        let sqrt_b1t = (self.beta1 * self.horizon as f64).sqrt();
        let mut step = vec![0.0; self.arms()];
        for i in 0..self.arms() {
            let w = self.weights[i];
            let c_hat = if i == chosen { c / w } else { 0.0 };
            let prev = self.rho[i];
            let rho = prev.max(1.0 / w);
            let r = sqrt_b1t * (rho.sqrt() - prev.sqrt()) + self.beta2 * (rho - prev);
            audit.le("corral_rho_monotone", prev, rho, || format!("arm {i}"));
            let eta = self.eta;
            audit.le("corral_stability", eta * w * (c_hat - r).abs(), 0.5, || format!("arm {i}"));
            self.rho[i] = rho;
            step[i] = c_hat - r;
            self.cumulative[i] += c_hat - r;
        }
        self.weights = corral_weights(&self.cumulative, self.eta, self.floor())?;
        let total: f64 = self.weights.iter().sum();
        audit.le("corral_simplex", (total - 1.0).abs(), 1e-12, || String::new());
        let floor = self.floor();
        for (i, &w) in self.weights.iter().enumerate() {
            audit.le("corral_floor", floor - 1e-12, w, || format!("arm {i}"));
        }
        Ok(step)
    }
}
