use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmdp::harness::{
    run_oracles, run_replicates, run_sweep, run_verify, suite::format_sweep, ExperimentConfig,
    LearnerKind, ReplicateOptions,
};
use cmdp::Result;

/// Regret experiments for learners on corrupted layered MDPs.
#[derive(Parser)]
#[command(name = "cmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment over its seeds and write the artifacts.
    Run(ExperimentArgs),
    /// Run a grid over horizons and transition budgets and print a table.
    Sweep(ExperimentArgs),
    /// Run the invariant suite with every assertion enabled.
    Verify {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Learners to check; defaults to alg1, alg4 and reduction.
        #[arg(long = "learner", value_name = "NAME")]
        learners: Vec<LearnerKind>,
    },
    /// Brute-force cross-checks of the fast paths.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment document (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config_flag")]
    config: Option<PathBuf>,
    #[arg(long = "config", value_name = "PATH", conflicts_with = "config")]
    config_flag: Option<PathBuf>,
    /// Use seeds 0..N.
    #[arg(long, value_name = "N", conflicts_with = "seed_list")]
    seeds: Option<u64>,
    #[arg(long, value_name = "S,...", value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Assert every invariant each episode.
    #[arg(long)]
    verify: bool,
    #[arg(long, value_name = "K")]
    jobs: Option<usize>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .or(self.config_flag.as_ref())
            .expect("clap requires a config");
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(n) = self.seeds {
            cfg.seeds = (0..n).collect();
        }
        if let Some(list) = &self.seed_list {
            cfg.seeds = list.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> ReplicateOptions {
        ReplicateOptions {
            verify: self.verify,
            jobs: self.jobs,
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let art = run_replicates(&cfg, args.options())?;
            for c in &art.summary.checkpoints {
                println!(
                    "{:>4} t={:<7} n={:<3} regret {:.4} ± {:.4}{}",
                    c.label,
                    c.t,
                    c.n,
                    c.mean,
                    c.ci_half_width,
                    if c.single_sample { " (single sample)" } else { "" }
                );
            }
            for f in &art.summary.failures {
                println!("seed {} failed: {}", f.seed, f.error);
            }
            if let Some(dir) = &art.out_dir {
                println!("artifacts in {}", dir.display());
            }
            Ok(art.audit.passed() && art.summary.failures.is_empty())
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let rows = run_sweep(&cfg, args.options())?;
            print!("{}", format_sweep(&rows));
            Ok(true)
        }
        Command::Verify { exp, learners } => {
            let cfg = exp.load()?;
            let learners = if learners.is_empty() {
                vec![LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction]
            } else {
                learners
            };
            let report = run_verify(&cfg, &learners, exp.jobs)?;
            print!("{}", report.format());
            let ok = report.passed();
            println!("verify: {}", if ok { "PASS" } else { "FAIL" });
            Ok(ok)
        }
        Command::Oracle { seed } => {
            let checks = run_oracles(seed)?;
            for c in &checks {
                println!(
                    "{:<34} {:>4} instances  max error {:.3e}  tolerance {:.0e}  {}",
                    c.name,
                    c.instances,
                    c.max_error,
                    c.tolerance,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CMDP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
