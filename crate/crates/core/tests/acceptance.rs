//! Acceptance criteria on the desk MDP (layers 1-3-3-1, two actions).
//!
//! Runs every criterion, prints one PASS/FAIL line each with the measured
//! quantities, and exits nonzero if any failed.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cmdp::adversary::{LossPattern, TransitionAdversary};
use cmdp::harness::{
    confidence_coverage, run_oracles, run_replicates, run_verify, ExperimentConfig, LearnerKind,
    LossSpec, ReplicateOptions,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn desk() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/desk.json");
    ExperimentConfig::load(&path).expect("desk fixture")
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

/// Adversarial losses, no transition corruption.
fn clean(kind: LearnerKind, horizon: usize) -> ExperimentConfig {
    let mut c = desk();
    c.horizon = horizon;
    c.transitions.kind = TransitionAdversary::None;
    c.transitions.budget = 0.0;
    c.losses = LossSpec::Adversarial {
        pattern: LossPattern::PhaseSwitching { phase_len: 64 },
    };
    c.learner.kind = kind;
    c.seeds = seeds(20);
    c
}

fn mean_regret(cfg: &ExperimentConfig) -> f64 {
    let art = run_replicates(cfg, ReplicateOptions::default()).expect("replicates");
    assert!(art.summary.failures.is_empty(), "{:?}", art.summary.failures);
    art.summary.checkpoints.last().expect("final checkpoint").mean
}

fn invariant_suite() -> Outcome {
    let cfg = desk();
    let report = run_verify(
        &cfg,
        &[LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction],
        None,
    )
    .expect("verify");
    let checks: u64 = report
        .learners
        .iter()
        .flat_map(|(_, a)| a.checks().map(|(_, s)| s.count))
        .sum();
    let failed: Vec<String> = report
        .learners
        .iter()
        .flat_map(|(k, a)| {
            a.checks()
                .filter(|(_, s)| s.failures > 0)
                .map(move |(n, _)| format!("{}:{n}", k.name()))
        })
        .collect();
    Outcome {
        passed: report.passed(),
        detail: format!(
            "T={}, {} seeds x 3 learners, {checks} checks, failing: {failed:?}",
            cfg.horizon,
            cfg.seeds.len()
        ),
    }
}

fn oracle_equivalences() -> Outcome {
    let checks = run_oracles(0).expect("oracles");
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.max_error, c.tolerance))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        passed: checks.iter().all(|c| c.passed),
        detail,
    }
}

fn confidence_coverage_rate() -> Outcome {
    let mut cfg = desk();
    cfg.learner.kind = LearnerKind::Alg1;
    cfg.learner.theta = Some(cfg.transitions.budget);
    cfg.learner.delta = Some(0.1);
    cfg.seeds = seeds(200);
    let r = confidence_coverage(&cfg, None).expect("coverage");
    Outcome {
        passed: r.passed(),
        detail: format!(
            "{} of {} runs left the set at some epoch (allowed {} at 2δ = {})",
            r.failures,
            r.runs,
            r.allowed,
            2.0 * r.delta
        ),
    }
}

fn adversarial_scaling() -> (Outcome, f64) {
    let regs: Vec<f64> = [1024, 4096, 16384]
        .iter()
        .map(|&t| mean_regret(&clean(LearnerKind::Alg1, t)))
        .collect();
    let r1 = regs[1] / regs[0];
    let r2 = regs[2] / regs[1];
    (
        Outcome {
            passed: r1 <= 2.6 && r2 <= 2.6 && regs[0] > 0.0,
            detail: format!(
                "Reg = {:.2}, {:.2}, {:.2}; ratios {r1:.3}, {r2:.3} (limit 2.6)",
                regs[0], regs[1], regs[2]
            ),
        },
        regs[1],
    )
}

fn corruption_sensitivity() -> Outcome {
    let l = 3.0;
    let regs: Vec<f64> = [0.0, 8.0 * l, 32.0 * l]
        .iter()
        .map(|&c| {
            let mut cfg = clean(LearnerKind::Alg1, 4096);
            cfg.transitions.kind = TransitionAdversary::Burst;
            cfg.transitions.budget = c;
            cfg.learner.theta = Some(c);
            mean_regret(&cfg)
        })
        .collect();
    let (e8, e32) = (regs[1] - regs[0], regs[2] - regs[0]);
    Outcome {
        passed: regs[0] <= regs[1] && regs[1] <= regs[2] && e32 <= 4.5 * e8,
        detail: format!(
            "Reg = {:.3}, {:.3}, {:.3} at C^P = 0, 8L, 32L; excess {e8:.3}, {e32:.3} (ratio limit 4.5)",
            regs[0], regs[1], regs[2]
        ),
    }
}

fn both_worlds() -> Outcome {
    let ratio = |losses: LossSpec| {
        let regs: Vec<f64> = [1024, 4096]
            .iter()
            .map(|&t| {
                let mut cfg = clean(LearnerKind::Alg4, t);
                cfg.losses = losses.clone();
                mean_regret(&cfg)
            })
            .collect();
        regs[1] / regs[0]
    };
    let stochastic = ratio(LossSpec::Stochastic {
        gap: 0.2,
        expectation: false,
    });
    let adversarial = ratio(clean(LearnerKind::Alg4, 1024).losses);
    Outcome {
        passed: stochastic <= 1.7 && stochastic < adversarial,
        detail: format!(
            "Alg4 Reg(4T)/Reg(T): stochastic {stochastic:.3} (limit 1.7), adversarial {adversarial:.3}"
        ),
    }
}

fn reduction_sanity(known: f64) -> Outcome {
    let cfg = clean(LearnerKind::Reduction, 4096);
    let art = run_replicates(&cfg, ReplicateOptions { verify: true, jobs: None }).expect("reduction");
    let mean = art.summary.checkpoints.last().expect("final").mean;
    let stable = ["corral_stability", "corral_simplex", "corral_floor"]
        .iter()
        .all(|n| art.audit.get(n).is_some_and(|s| s.count > 0 && s.failures == 0));
    Outcome {
        passed: mean <= 3.0 * known && stable && art.audit.passed(),
        detail: format!(
            "stack {mean:.2} vs 3 x known-C^P Alg1 {known:.2}; stability checks {}",
            if stable && art.audit.passed() { "hold" } else { "FAIL" }
        ),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        results.push((n, name, o, start.elapsed().as_secs_f64()));
        let (n, name, o, secs) = results.last().unwrap();
        println!(
            "criterion {n} {:<26} {} ({secs:.1}s): {}",
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    timed(1, "invariant suite", &mut invariant_suite);
    timed(2, "oracle equivalences", &mut oracle_equivalences);
    timed(3, "confidence coverage", &mut confidence_coverage_rate);
    let mut known = 0.0;
    timed(4, "adversarial scaling", &mut || {
        let (o, reg) = adversarial_scaling();
        known = reg;
        o
    });
    timed(5, "corruption sensitivity", &mut corruption_sensitivity);
    timed(6, "best of both worlds", &mut both_worlds);
    timed(7, "reduction sanity", &mut || reduction_sanity(known));
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
