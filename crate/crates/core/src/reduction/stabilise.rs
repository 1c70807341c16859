//! Routes each round to one of a family of base learners by the dyadic bin
//! of its feedback probability, and thins the feedback so every instance
//! sees it at a fixed rate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::learners::{Audit, Feedback, Learner, StepRecord};
use crate::mdp::{LayeredMdp, Policy, TransitionFn, Trajectory};
use crate::uob::bin_index;

/// Builds a base learner for a corruption guess.
pub type BaseFactory = std::sync::Arc<dyn Fn(f64) -> Result<Box<dyn Learner>> + Send + Sync>;

/// `θ_j = 2^{-j+1} C + 16 L ln T`.
pub fn theta_j(j: usize, corruption: f64, layers: usize, horizon: usize) -> f64 {
    2f64.powi(1 - j as i32) * corruption + 16.0 * layers as f64 * (horizon as f64).ln()
}

/// Probability of handing received feedback on to the routed instance.
pub fn forward_probability(w: f64, j: usize) -> f64 {
    (2f64.powi(-(j as i32) - 1) / w).min(1.0)
}

pub struct Stabilise {
    corruption: f64,
    horizon: usize,
    layers: usize,
    factory: BaseFactory,
    /// Instance `j` handles `w ∈ (2^{-j-1}, 2^{-j}]`; created on first use.
    instances: Vec<Option<Box<dyn Learner>>>,
    routed: Option<(usize, f64)>,
    uniform: Policy,
    audit: Audit,
    reference: Option<TransitionFn>,
    idle: StepRecord,
}

impl Stabilise {
    pub fn new(mdp: &LayeredMdp, corruption: f64, horizon: usize, factory: BaseFactory) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be positive".into()));
        }
        let bins = (horizon as f64).log2().ceil() as usize + 1;
        Ok(Self {
            corruption,
            horizon,
            layers: mdp.num_layers(),
            factory,
            instances: (0..bins).map(|_| None).collect(),
            routed: None,
            uniform: Policy::uniform(mdp),
            audit: Audit::new(false),
            reference: None,
            idle: StepRecord::default(),
        })
    }

    pub fn corruption(&self) -> f64 {
        self.corruption
    }

    /// Bin of the current round, `None` when it was skipped.
    pub fn routed(&self) -> Option<usize> {
        self.routed.map(|(j, _)| j)
    }

    pub fn theta(&self, j: usize) -> f64 {
        theta_j(j, self.corruption, self.layers, self.horizon)
    }

    /// Number of instances created so far.
    pub fn live_instances(&self) -> usize {
        self.instances.iter().filter(|i| i.is_some()).count()
    }

    pub fn instance(&self, j: usize) -> Option<&dyn Learner> {
        self.instances.get(j).and_then(|i| i.as_deref())
    }

    /// Receives `w`; returns the policy to play this round.
    pub fn act(&mut self, w: f64) -> Result<Policy> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Parameter(format!("feedback probability {w} outside [0,1]")));
        }
        if w <= 1.0 / self.horizon as f64 {
            self.routed = None;
            return Ok(self.uniform.clone());
        }
        let j = bin_index(w)?;
        if j >= self.instances.len() {
            self.instances.resize_with(j + 1, || None);
        }
        if self.instances[j].is_none() {
            let mut inst = (self.factory)(self.theta(j))?;
            if self.audit.is_enabled() {
                inst.enable_audit(self.reference.clone());
            }
            self.instances[j] = Some(inst);
        }
        self.routed = Some((j, w));
        self.instances[j].as_mut().unwrap().policy()
    }

    /// Delivers this round's feedback, if any, to the routed instance with
    /// probability `2^{-j-1}/w`; otherwise that instance sees a skip.
    pub fn feedback<R: Rng + ?Sized>(&mut self, traj: Option<&Trajectory>, rng: &mut R) -> Result<bool> {
        let Some((j, w)) = self.routed.take() else {
            return Ok(false);
        };
        let inst = self.instances[j].as_mut().expect("routed instance exists");
        // Draw the coin unconditionally so the stream does not depend on delivery.
        let coin: f64 = rng.gen();
        match traj {
            Some(t) if coin < forward_probability(w, j) => {
                inst.observe(Feedback::Trajectory(t))?;
                Ok(true)
            }
            _ => {
                inst.observe(Feedback::Skip)?;
                Ok(false)
            }
        }
    }

    /// Diagnostics of the most recently routed instance.
    pub fn record_of(&self, j: usize) -> &StepRecord {
        self.instance(j).map(|i| i.record()).unwrap_or(&self.idle)
    }

    pub fn enable_audit(&mut self, reference: Option<TransitionFn>) {
        self.audit.set_enabled(true);
        for inst in self.instances.iter_mut().flatten() {
            inst.enable_audit(reference.clone());
        }
        self.reference = reference;
    }

    pub fn drain_audit(&mut self, into: &mut Audit) {
        for inst in self.instances.iter_mut().flatten() {
            inst.drain_audit(into);
        }
        into.absorb(&mut self.audit);
    }
}
