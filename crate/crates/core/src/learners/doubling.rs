//! Anytime wrapper: restarts a fixed-horizon learner on a doubling schedule.

use super::{Audit, Feedback, Learner, StepRecord};
use crate::error::Result;
use crate::estimation::ConfidenceSet;
use crate::mdp::{Policy, TransitionFn};

type Factory = Box<dyn Fn(usize) -> Result<Box<dyn Learner>> + Send>;

/// Runs phase `k` with horizon `2^k`, counting only episodes that carried a
/// trajectory. A fresh instance starts before update number `n` whenever `n`
/// is a power of two.
pub struct Doubling {
    factory: Factory,
    inner: Box<dyn Learner>,
    received: usize,
    phase: usize,
    audit: Audit,
    reference: Option<TransitionFn>,
}

impl Doubling {
    pub fn new(
        factory: impl Fn(usize) -> Result<Box<dyn Learner>> + Send + 'static,
    ) -> Result<Self> {
        let inner = factory(1)?;
        Ok(Self {
            factory: Box::new(factory),
            inner,
            received: 0,
            phase: 0,
            audit: Audit::new(false),
            reference: None,
        })
    }

    /// Trajectories received so far.
    pub fn received(&self) -> usize {
        self.received
    }

    /// Index of the current phase (horizon `2^phase`).
    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn inner(&self) -> &dyn Learner {
        self.inner.as_ref()
    }
}

impl Learner for Doubling {
    fn policy(&mut self) -> Result<Policy> {
        self.inner.policy()
    }

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<()> {
        self.inner.observe(feedback)?;
        if let Feedback::Trajectory(_) = feedback {
            self.received += 1;
            let next = self.received + 1;
            if next.is_power_of_two() {
                self.inner.drain_audit(&mut self.audit);
                self.inner = (self.factory)(next)?;
                if self.audit.is_enabled() {
                    self.inner.enable_audit(self.reference.clone());
                }
                self.phase += 1;
            }
        }
        Ok(())
    }

    fn epoch(&self) -> usize {
        self.inner.epoch()
    }

    fn record(&self) -> &StepRecord {
        self.inner.record()
    }

    fn confidence_set(&self) -> Option<&ConfidenceSet> {
        self.inner.confidence_set()
    }

    fn audit_mut(&mut self) -> &mut Audit {
        &mut self.audit
    }

    fn enable_audit(&mut self, reference: Option<TransitionFn>) {
        self.audit.set_enabled(true);
        self.inner.enable_audit(reference.clone());
        self.reference = reference;
    }

    fn drain_audit(&mut self, into: &mut Audit) {
        self.inner.drain_audit(&mut self.audit);
        into.absorb(&mut self.audit);
    }
}
