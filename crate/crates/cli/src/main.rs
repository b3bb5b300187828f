use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use bobw::certify::{certify_ftrl, certify_uob, one_layer_closed_form_error, RegularizerKind};
use bobw::harness::{aggregate, run_experiment, write_report, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "bobw",
    version,
    about = "Best-of-both-worlds MDP learners: experiments and solver checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of replications.
        #[arg(long)]
        reps: Option<usize>,
        /// Output directory (overrides the config's).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Enable the optimism and upper-occupancy audits.
        #[arg(long)]
        audit: bool,
    },
    /// Check a config and describe the world it builds.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the FTRL solver and the upper occupancy bounds with their
    /// reference oracles on random instances.
    OracleCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))
}

fn run(config: PathBuf, seed: Option<u64>, reps: Option<usize>, out: Option<PathBuf>, audit: bool) -> Result<bool> {
    let mut cfg = load(&config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(reps) = reps {
        cfg.replications = reps;
    }
    if let Some(out) = out {
        cfg.output.dir = Some(out);
    }
    cfg.audit |= audit;
    let report = run_experiment(&cfg)?;
    if let Some(dir) = &cfg.output.dir {
        write_report(&report, dir).with_context(|| format!("writing results to {}", dir.display()))?;
        println!("results written to {}", dir.display());
    }
    println!("{:<18} {:>14} {:>12} {:>4}", "metric", "mean", "std", "n");
    for row in aggregate(&report.runs) {
        println!("{:<18} {:>14.6} {:>12.6} {:>4}", row.metric, row.mean, row.std, row.n);
    }
    let mut clean = true;
    if cfg.audit {
        let sum = |f: fn(&bobw::harness::RunSummary) -> usize| report.runs.iter().map(|r| f(&r.summary)).sum::<usize>();
        let optimism = sum(|s| s.optimism_violations);
        let lower = sum(|s| s.uob_lower_violations);
        let dominance = sum(|s| s.uob_dominance_violations);
        let floors = sum(|s| s.floor_triggers);
        println!(
            "audit: optimism violations {optimism}, lower-bound violations {lower}, \
             dominance violations {dominance}, floor triggers {floors}"
        );
        clean = optimism + lower + dominance + floors == 0;
    }
    Ok(clean)
}

fn validate(config: PathBuf) -> Result<()> {
    let cfg = load(&config)?;
    let world = cfg.build()?;
    let layout = world.mdp.layout();
    println!(
        "ok: layers {:?}, |A| = {}, {} pairs, T = {}, {} replication(s), learner {}",
        layout.layer_sizes(),
        layout.n_actions(),
        layout.n_pairs(),
        cfg.horizon,
        cfg.replications,
        cfg.learner.variant.name()
    );
    match &world.gaps {
        Some(g) => println!("stochastic world: π* = {:?}, Δ_min = {}", g.pi_star, g.delta_min),
        None => println!("adversarial world"),
    }
    Ok(())
}

fn oracle_check(instances: usize, seed: u64) -> Result<bool> {
    let mut ok = true;
    for kind in [RegularizerKind::Shannon, RegularizerKind::TsallisLogBarrier] {
        let cases = certify_ftrl(kind, instances, seed)?;
        let objective = cases.iter().map(|c| c.objective_error()).fold(0.0, f64::max);
        let residual = cases.iter().map(|c| c.flow_residual).fold(0.0, f64::max);
        let pass = objective <= 1e-6 && residual <= 1e-10;
        ok &= pass;
        println!(
            "{} {kind:?}: worst objective error {objective:.3e}, worst flow residual {residual:.3e}",
            verdict(pass)
        );
    }
    let closed = one_layer_closed_form_error(instances, seed)?;
    ok &= closed <= 1e-10;
    println!(
        "{} one-layer exponential weights: worst error {closed:.3e}",
        verdict(closed <= 1e-10)
    );
    let uob = certify_uob(instances, seed)?;
    let worst = uob.iter().map(|c| c.max_error).fold(0.0, f64::max);
    ok &= worst <= 1e-9;
    println!(
        "{} upper occupancy vs enumeration: worst error {worst:.3e}",
        verdict(worst <= 1e-9)
    );
    Ok(ok)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            reps,
            out,
            audit,
        } => run(config, seed, reps, out, audit),
        Command::Validate { config } => validate(config).map(|_| true),
        Command::OracleCheck { instances, seed } => oracle_check(instances, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
