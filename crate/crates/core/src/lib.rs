//! Online learning in layered episodic MDPs whose losses and transitions are
//! adversarially corrupted.
//!
//! The crate contains the environment model ([`mdp`]), corruption schedules
//! ([`adversary`]), transition estimation ([`estimation`]), upper occupancy
//! bounds and bonuses ([`uob`]), the convex solvers behind every update
//! ([`solvers`]), the learners themselves ([`learners`]), the model-selection
//! stack for unknown corruption ([`reduction`]) and the experiment harness
//! ([`harness`]).

pub mod adversary;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod reduction;
pub mod solvers;
pub mod uob;

pub use error::{Error, Result};
pub use mdp::{LayeredMdp, LossFn, OccupancyMeasure, Policy, Trajectory, TransitionFn};
