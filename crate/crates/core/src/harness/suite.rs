//! Grids of experiments and the invariant suite.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LearnerKind};
use super::replicate::{run_replicates, ReplicateOptions};
use crate::error::Result;
use crate::learners::Audit;

pub const SWEEP_HEADER: &str = "horizon,budget,learner,seeds,mean,ci_half_width,mean_over_sqrt_t";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub budget: f64,
    pub learner: String,
    pub seeds: usize,
    pub mean: f64,
    pub ci_half_width: f64,
    pub mean_over_sqrt_t: f64,
}

/// Cells of the grid: every horizon against every transition budget.
/// An empty axis keeps the document's value.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let spec = cfg.sweep.clone().unwrap_or_default();
    let horizons = if spec.horizons.is_empty() {
        vec![cfg.horizon]
    } else {
        spec.horizons
    };
    let budgets = if spec.budgets.is_empty() {
        vec![cfg.transitions.budget]
    } else {
        spec.budgets
    };
    let mut cells = Vec::new();
    for &t in &horizons {
        for &c in &budgets {
            let mut cell = cfg.clone();
            cell.horizon = t;
            cell.transitions.budget = c;
            cell.sweep = None;
            cell.out = cfg.out.as_ref().map(|d| d.join(format!("T{t}_C{c}")));
            cells.push(cell);
        }
    }
    cells
}

/// Runs every cell and, when the document names an output directory, writes
/// `sweep.csv` beside the per-cell artifacts.
pub fn run_sweep(cfg: &ExperimentConfig, opts: ReplicateOptions) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for cell in sweep_cells(cfg) {
        let art = run_replicates(&cell, opts)?;
        let last = art.summary.checkpoints.last().expect("three checkpoints");
        let row = SweepRow {
            horizon: cell.horizon,
            budget: cell.transitions.budget,
            learner: art.summary.learner.clone(),
            seeds: art.summary.seeds,
            mean: last.mean,
            ci_half_width: last.ci_half_width,
            mean_over_sqrt_t: last.mean / (cell.horizon as f64).sqrt(),
        };
        info!("sweep cell T = {}, C^P = {}: {:.4}", row.horizon, row.budget, row.mean);
        rows.push(row);
    }
    if let Some(dir) = &cfg.out {
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>8} {:>8} {:>10} {:>5} {:>12} {:>10} {:>10}\n",
        "T", "C^P", "learner", "n", "mean", "ci95", "mean/√T"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>10} {:>5} {:>12.4} {:>10.4} {:>10.5}",
            r.horizon, r.budget, r.learner, r.seeds, r.mean, r.ci_half_width, r.mean_over_sqrt_t
        );
    }
    out
}

/// Merged checks of one learner over every seed.
#[derive(Debug)]
pub struct VerifyReport {
    pub learners: Vec<(LearnerKind, Audit)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.learners.iter().all(|(_, a)| a.passed())
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for (kind, audit) in &self.learners {
            let _ = writeln!(out, "[{}]", kind.name());
            for (name, s) in audit.checks() {
                let _ = writeln!(
                    out,
                    "  {:<28} {:>9} checks {:>4} failures  worst margin {:+.3e}  {}",
                    name,
                    s.count,
                    s.failures,
                    s.worst,
                    if s.failures == 0 { "ok" } else { "FAIL" }
                );
                if let Some(first) = &s.first_failure {
                    let _ = writeln!(out, "      first failure: {first}");
                }
            }
        }
        out
    }
}

/// Runs the document once per learner with every assertion on.
pub fn run_verify(cfg: &ExperimentConfig, learners: &[LearnerKind], jobs: Option<usize>) -> Result<VerifyReport> {
    let mut report = VerifyReport { learners: Vec::new() };
    for &kind in learners {
        let mut c = cfg.clone();
        c.learner.kind = kind;
        c.out = None;
        let art = run_replicates(&c, ReplicateOptions { verify: true, jobs })?;
        let mut audit = art.audit;
        for f in &art.summary.failures {
            audit.le("replicate_completed", 1.0, 0.0, || format!("seed {}: {}", f.seed, f.error));
        }
        report.learners.push((kind, audit));
    }
    Ok(report)
}

/// Smallest `k` with `P[Bin(n, p) ≤ k] ≥ level`.
pub fn binomial_quantile(n: usize, p: f64, level: f64) -> usize {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while cdf < level && k < n {
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        k += 1;
        cdf += pmf;
    }
    k
}

/// Runs in which some confidence set missed the ground-truth transition,
/// against the number a `1 − 2δ` guarantee allows at the 99% level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub failures: usize,
    pub delta: f64,
    pub allowed: usize,
}

impl CoverageReport {
    pub fn passed(&self) -> bool {
        self.failures <= self.allowed
    }
}

pub fn confidence_coverage(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<CoverageReport> {
    let mut c = cfg.clone();
    c.out = None;
    let art = run_replicates(&c, ReplicateOptions { verify: false, jobs })?;
    let delta = art.manifest.resolved.delta.unwrap_or(0.0);
    let runs = art.outcomes.len();
    let failures = art
        .outcomes
        .iter()
        .filter(|o| o.covered == Some(false))
        .count();
    if art.outcomes.iter().any(|o| o.covered.is_none()) {
        return Err(crate::error::Error::Config(format!(
            "learner {} keeps no confidence set",
            c.learner.kind.name()
        )));
    }
    Ok(CoverageReport {
        runs,
        failures,
        delta,
        allowed: binomial_quantile(runs, (2.0 * delta).min(1.0), 0.99),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{LossPattern, TransitionAdversary};
    use crate::harness::config::{LearnerSpec, LossSpec, MdpSpec, SweepSpec, TransitionSpec};

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            schema: 1,
            mdp: MdpSpec {
                layer_sizes: vec![1, 2, 1],
                num_actions: 2,
                concentration: 1.0,
            },
            horizon: 16,
            transitions: TransitionSpec {
                kind: TransitionAdversary::Spread,
                budget: 0.0,
            },
            losses: LossSpec::Adversarial {
                pattern: LossPattern::Alternating { period: 2 },
            },
            learner: LearnerSpec::new(LearnerKind::Alg1),
            seeds: vec![0, 1],
            env_seed: 0,
            out: None,
            enumeration_cap: 1000,
            sweep: Some(SweepSpec {
                horizons: vec![8, 16],
                budgets: vec![0.0, 4.0],
            }),
        }
    }

    #[test]
    fn binomial_quantile_matches_direct_sums() {
        // Bin(10, 1/2): P[X ≤ 8] = 1013/1024 < 0.99 ≤ P[X ≤ 9] = 1023/1024.
        assert_eq!(binomial_quantile(10, 0.5, 0.99), 9);
        // Bin(200, 0.2) has its 99% quantile at 54 (by direct summation).
        assert_eq!(binomial_quantile(200, 0.2, 0.99), 54);
        assert_eq!(binomial_quantile(5, 0.0, 0.99), 0);
        assert_eq!(binomial_quantile(5, 1.0, 0.99), 5);
    }

    #[test]
    fn coverage_counts_runs() {
        let mut c = cfg();
        c.sweep = None;
        c.learner.delta = Some(0.1);
        let r = confidence_coverage(&c, None).unwrap();
        assert_eq!(r.runs, 2);
        assert!(r.passed());
        c.learner.kind = LearnerKind::Uniform;
        assert!(confidence_coverage(&c, None).is_err());
    }

    #[test]
    fn grid_is_horizon_major() {
        let cells = sweep_cells(&cfg());
        let key: Vec<(usize, f64)> = cells.iter().map(|c| (c.horizon, c.transitions.budget)).collect();
        assert_eq!(key, vec![(8, 0.0), (8, 4.0), (16, 0.0), (16, 4.0)]);
        // Unset theta follows each cell's budget.
        assert_eq!(cells[1].theta(), 4.0);
    }

    #[test]
    fn sweep_writes_one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        c.out = Some(dir.path().to_path_buf());
        let rows = run_sweep(&c, ReplicateOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
        assert_eq!(text.lines().count(), 5);
        assert!(dir.path().join("T16_C4").join("manifest.json").exists());
    }

    #[test]
    fn verify_lists_every_check() {
        let mut c = cfg();
        c.sweep = None;
        let report = run_verify(&c, &[LearnerKind::Alg1, LearnerKind::Alg4], None).unwrap();
        assert!(report.passed(), "{}", report.format());
        let text = report.format();
        assert!(text.contains("[alg4]") && text.contains("trace_prefix_sum"));
    }
}
