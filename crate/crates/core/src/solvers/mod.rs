//! Convex solvers behind the OMD and FTRL updates.

pub mod ipm;
pub mod kkt;
pub mod polytope;

pub use ipm::{solve, BarrierProgram, Solution, SolveCertificate, SolverOptions};
pub use kkt::kkt_residual;
pub use polytope::{ftrl_step, omd_step, ConfidencePolytope, FlowPolytope};
