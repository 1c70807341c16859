//! Experiment orchestration: configuration, environments and comparators,
//! single runs, replicates, sweeps, the invariant suite and the oracle
//! cross-checks behind the command line.

pub mod config;
pub mod oracle;
pub mod regret;
pub mod replicate;
pub mod run;
pub mod suite;

pub use config::{ExperimentConfig, LearnerKind, LearnerSpec, LossSpec, MdpSpec, SweepSpec, TransitionSpec};
pub use oracle::{run_oracles, OracleCheck};
pub use regret::{best_fixed_policy, Comparator, Environment};
pub use replicate::{replay_manifest, run_replicates, Checkpoint, Manifest, ReplicateOptions, RunArtifacts, Summary};
pub use run::{run_experiment, RegretTrace, RunOutcome, TraceRow, TRACE_HEADER};
pub use suite::{confidence_coverage, run_sweep, CoverageReport, run_verify, SweepRow, VerifyReport, SWEEP_HEADER};
