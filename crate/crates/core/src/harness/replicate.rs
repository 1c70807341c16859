//! Seeds in parallel, checkpoint aggregates, and the artifacts on disk.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::regret::Environment;
use super::run::{resolve_learner, run_experiment, RegretTrace, ResolvedLearner, RunOutcome};
use crate::error::{Error, Result};
use crate::learners::Audit;

/// Mean and normal-approximation 95% interval of the cumulative regret at one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub label: String,
    pub t: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_half_width: f64,
    /// Set when only one replicate contributed; the width is then zero by convention.
    pub single_sample: bool,
}

pub fn checkpoint(label: &str, t: usize, values: &[f64]) -> Checkpoint {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Checkpoint {
        label: label.to_string(),
        t,
        n,
        mean,
        std,
        ci_half_width: 1.96 * std / (n.max(1) as f64).sqrt(),
        single_sample: n == 1,
    }
}

/// `T/4`, `T/2`, `T`, each at least one.
pub fn checkpoint_times(horizon: usize) -> [(&'static str, usize); 3] {
    [
        ("T/4", (horizon / 4).max(1)),
        ("T/2", (horizon / 2).max(1)),
        ("T", horizon),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub seed: u64,
    pub path: PathBuf,
    pub final_regret: f64,
    pub final_realized_regret: f64,
}

/// Everything needed to rerun the experiment bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub code_version: String,
    pub log_convention: String,
    /// The input document with every learner default written out.
    pub config: ExperimentConfig,
    pub resolved: ResolvedLearner,
    pub comparator_actions: Vec<usize>,
    pub comparator_total: f64,
    pub corruption_total: f64,
    pub traces: Vec<TraceFile>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text)?;
        m.config.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub learner: String,
    pub horizon: usize,
    pub transition_budget: f64,
    pub seeds: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub realized_final: Checkpoint,
    pub failures: Vec<SeedFailure>,
}

pub struct RunArtifacts {
    pub out_dir: Option<PathBuf>,
    pub manifest: Manifest,
    pub summary: Summary,
    pub outcomes: Vec<RunOutcome>,
    /// Checks from every replicate, merged.
    pub audit: Audit,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplicateOptions {
    pub verify: bool,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
}

/// Fills the learner defaults into the document itself so it reproduces alone.
pub fn resolved_config(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, ResolvedLearner)> {
    let mdp = cfg.build_mdp()?;
    let r = resolve_learner(cfg, &mdp)?;
    let mut out = cfg.clone();
    out.learner.theta = Some(r.theta);
    out.learner.delta = r.delta;
    out.learner.eta = r.eta;
    out.learner.betas = r.betas;
    Ok((out, r))
}

fn trace_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub fn run_replicates(cfg: &ExperimentConfig, opts: ReplicateOptions) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (resolved_cfg, resolved) = resolved_config(cfg)?;
    let env = Environment::build(&resolved_cfg)?;
    info!(
        "{} on layers {:?}, T = {}, C^P = {}, {} seeds",
        resolved.kind.name(),
        cfg.mdp.layer_sizes,
        cfg.horizon,
        cfg.transitions.budget,
        cfg.seeds.len()
    );
    let work = || -> Vec<(u64, Result<RunOutcome>)> {
        resolved_cfg
            .seeds
            .par_iter()
            .map(|&seed| (seed, run_experiment(&resolved_cfg, &env, seed, opts.verify)))
            .collect()
    };
    let results = match opts.jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (seed, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                first_error.get_or_insert(e.clone());
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let finals: Vec<f64> = outcomes.iter().map(|o| o.trace.final_regret()).collect();
    let realized: Vec<f64> = outcomes
        .iter()
        .map(|o| o.trace.realized.last().copied().unwrap_or(0.0))
        .collect();
    let checkpoints = checkpoint_times(cfg.horizon)
        .iter()
        .map(|&(label, t)| {
            let v: Vec<f64> = outcomes.iter().map(|o| o.trace.regret_at(t)).collect();
            checkpoint(label, t, &v)
        })
        .collect();
    let summary = Summary {
        learner: resolved.kind.name().to_string(),
        horizon: cfg.horizon,
        transition_budget: cfg.transitions.budget,
        seeds: outcomes.len(),
        checkpoints,
        realized_final: checkpoint("T", cfg.horizon, &realized),
        failures: failures.clone(),
    };
    let traces = outcomes
        .iter()
        .zip(&finals)
        .zip(&realized)
        .map(|((o, &f), &r)| TraceFile {
            seed: o.seed,
            path: PathBuf::from(trace_name(o.seed)),
            final_regret: f,
            final_realized_regret: r,
        })
        .collect();
    let manifest = Manifest {
        schema: super::config::SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        log_convention: "natural".to_string(),
        config: resolved_cfg.clone(),
        resolved,
        comparator_actions: env.comparator.actions.clone(),
        comparator_total: env.comparator.total,
        corruption_total: env.corruption.iter().sum(),
        traces,
    };
    let mut audit = Audit::new(opts.verify);
    for o in &mut outcomes {
        audit.absorb(&mut o.audit);
    }

    if let Some(dir) = &cfg.out {
        write_artifacts(dir, &manifest, &summary, &outcomes)?;
    }
    if let (true, Some(e)) = (outcomes.is_empty(), first_error) {
        return Err(e);
    }
    Ok(RunArtifacts {
        out_dir: cfg.out.clone(),
        manifest,
        summary,
        outcomes,
        audit,
    })
}

fn write_artifacts(
    dir: &Path,
    manifest: &Manifest,
    summary: &Summary,
    outcomes: &[RunOutcome],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for o in outcomes {
        o.trace.write_csv(&dir.join(trace_name(o.seed)))?;
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?,
    )?;
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary).map_err(|e| Error::Io(e.to_string()))?,
    )?;
    let mut w = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
    w.write_record(["checkpoint", "t", "n", "mean", "ci_low", "ci_high"])?;
    for c in &summary.checkpoints {
        w.write_record([
            c.label.clone(),
            c.t.to_string(),
            c.n.to_string(),
            c.mean.to_string(),
            (c.mean - c.ci_half_width).to_string(),
            (c.mean + c.ci_half_width).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reruns the experiment a manifest describes and compares every trace
/// against the stored CSV. Returns the number of traces checked.
pub fn replay_manifest(path: &Path) -> Result<usize> {
    let manifest = Manifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let env = Environment::build(&manifest.config)?;
    for tf in &manifest.traces {
        let stored = RegretTrace::read_csv(&dir.join(&tf.path))?;
        let fresh = run_experiment(&manifest.config, &env, tf.seed, false)?;
        if fresh.trace.rows != stored.rows {
            return Err(Error::Invariant(format!(
                "seed {} does not reproduce its stored trace",
                tf.seed
            )));
        }
    }
    Ok(manifest.traces.len())
}
