//! `crqos` — decentralized QoS provision for cognitive radio networks.
//!
//! Exit codes are a stable contract: 0 for a feasible result, 2 for
//! no-solution or infeasible outcomes, 1 for errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crqos_core::awcs::multi::solve_multi;
use crqos_core::awcs::single::solve_single;
use crqos_core::experiments::{
    assert_trends, csv_string, emit_plots, run_monte_carlo, SweepConfig, TrendStatus,
};
use crqos_core::mailer::{DelayPolicy, RunOutcome};
use crqos_core::oracle::{
    brute_force_solve, random_multi_instance, random_single_instance, MultiFamily, SingleFamily,
};
use crqos_core::protocol::{run_protocol, Outcome, ProtocolConfig, ResultRecord};
use crqos_core::radio::{generate_scenario, Mode, Scenario, ScenarioParams};

/// Default output directory when `--out` is not given.
const OUT_DIR_ENV: &str = "CRQOS_OUT_DIR";

#[derive(Parser)]
#[command(name = "crqos", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write the result record.
    Solve(SolveArgs),
    /// Run a Monte Carlo sweep grid and emit CSV, plots and trend verdicts.
    Sweep(SweepArgs),
    /// Cross-check the asynchronous solvers against brute-force enumeration.
    Validate(ValidateArgs),
    /// Print the cycle-by-cycle message trace of one scenario run.
    Trace(SolveArgs),
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Scenario file (TOML). Omit to generate one from the flags below.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Seed for generation and for the run itself.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of CR links for a generated scenario.
    #[arg(long, default_value_t = 7)]
    n_cr: usize,
    /// Number of PU links for a generated scenario.
    #[arg(long, default_value_t = 2)]
    n_pu: usize,
    /// QoS problem to instantiate: cdma-eq | cdma-uneq | stdma.
    #[arg(long, default_value = "cdma-eq")]
    mode: Mode,
    /// Upper bound of the uniform per-message delay, in logical steps.
    #[arg(long, default_value_t = 0)]
    delay_max: u64,
    /// Cycle cap; hitting it marks the run anomalous.
    #[arg(long, default_value_t = 20_000)]
    cycle_cap: u64,
    /// Output directory (defaults to $CRQOS_OUT_DIR, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config file (TOML); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibrated preset: trends | quantization | delay.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Runs per grid point.
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    delay_max: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Number of seeded instances per solver family.
    #[arg(long, default_value_t = 200)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Upper bound of the uniform message delay during validation runs.
    #[arg(long, default_value_t = 0)]
    delay_max: u64,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_or_generate(args: &SolveArgs) -> Result<Scenario> {
    match &args.scenario {
        Some(path) => {
            Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
        }
        None => {
            let params = ScenarioParams::default();
            let scenario = generate_scenario(args.seed, args.n_cr, args.n_pu, args.mode, &params)
                .context("generating scenario")?;
            Ok(scenario)
        }
    }
}

fn cmd_solve(args: &SolveArgs, trace: bool) -> Result<ExitCode> {
    let scenario = load_or_generate(args)?;
    let config = ProtocolConfig {
        seed: args.seed,
        delay: DelayPolicy::uniform(args.delay_max),
        cycle_cap: args.cycle_cap,
        trace,
    };
    let report = run_protocol(&scenario, &config).context("running protocol")?;
    if trace {
        for line in &report.trace {
            println!("{line}");
        }
        println!(
            "# outcome {:?} after {} cycles",
            report.outcome, report.metrics.cycles
        );
        return Ok(match report.outcome {
            Outcome::Solved => ExitCode::SUCCESS,
            _ => ExitCode::from(2),
        });
    }

    let record = ResultRecord::new(&scenario, &config, &report);
    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    let path = dir.join(format!("result_{}_{}.toml", scenario.mode, args.seed));
    std::fs::write(&path, record.to_toml())
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "seed {} mode {} outcome {:?}: cycles {} messages {} nccc {}",
        args.seed,
        scenario.mode,
        report.outcome,
        report.metrics.cycles,
        report.metrics.messages.total(),
        report.metrics.nccc
    );
    println!("result record: {}", path.display());
    Ok(match report.outcome {
        Outcome::Solved => ExitCode::SUCCESS,
        _ => ExitCode::from(2),
    })
}

fn sweep_config(args: &SweepArgs) -> Result<SweepConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading sweep config {}", path.display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing sweep config {}", path.display()))?
        }
        (None, Some(name)) => match name.as_str() {
            "trends" => SweepConfig::paper_trends(),
            "quantization" => SweepConfig::paper_quantization(),
            "delay" => SweepConfig::delay_sensitivity(),
            other => bail!("unknown preset `{other}` (use trends|quantization|delay)"),
        },
        (None, None) => SweepConfig::default(),
    };
    // Flags win over the file.
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs_per_point = runs;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(d) = args.delay_max {
        config.delay_max = vec![d];
    }
    Ok(config)
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let config = sweep_config(args)?;
    let result = run_monte_carlo(&config).context("running sweep")?;
    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    let csv_path = dir.join("sweep.csv");
    std::fs::write(&csv_path, csv_string(&result))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let plots = emit_plots(&result, &dir).context("writing plots")?;
    println!(
        "{} runs over {} grid points; {} anomalous",
        result.rows.len(),
        result.points.len(),
        result.anomalies.len()
    );
    for (seed, what) in &result.anomalies {
        println!("  anomaly: seed {seed}: {what}");
    }
    for check in assert_trends(&result) {
        if check.status != TrendStatus::Skipped {
            println!("{}", check.line());
        }
    }
    println!("csv: {}", csv_path.display());
    for p in plots {
        println!("plot: {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: &ValidateArgs) -> Result<ExitCode> {
    if args.n == 0 {
        println!("warning: 0 instances requested; nothing to validate (vacuous pass)");
        return Ok(ExitCode::SUCCESS);
    }
    let delay = DelayPolicy::uniform(args.delay_max);
    let mut failures = 0u64;
    println!("{:<8} {:<8} {:<10} {:<12} {:<6}", "family", "seed", "oracle", "awcs", "ok");
    for i in 0..args.n {
        let seed = args.seed + i;
        let instance = random_single_instance(seed, SingleFamily::default());
        let oracle = brute_force_solve(&instance).is_some();
        let report = solve_single(&instance, seed, delay, 10_000);
        let ok = outcomes_match(oracle, report.outcome, report.satisfied);
        failures += u64::from(!ok);
        if !ok || i < 5 {
            println!(
                "{:<8} {:<8} {:<10} {:<12} {:<6}",
                "single",
                seed,
                if oracle { "sat" } else { "unsat" },
                format!("{:?}", report.outcome),
                ok
            );
        }
    }
    let multi_n = args.n / 2;
    for i in 0..multi_n {
        let seed = args.seed + i;
        let instance = random_multi_instance(seed, MultiFamily::default());
        let oracle = brute_force_solve(&instance).is_some();
        let report = solve_multi(&instance, seed, delay, 10_000);
        let ok = outcomes_match(oracle, report.outcome, report.satisfied);
        failures += u64::from(!ok);
        if !ok || i < 5 {
            println!(
                "{:<8} {:<8} {:<10} {:<12} {:<6}",
                "multi",
                seed,
                if oracle { "sat" } else { "unsat" },
                format!("{:?}", report.outcome),
                ok
            );
        }
    }
    let total = args.n + multi_n;
    println!("{} checked, {} mismatches", total, failures);
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// The equivalence contract: quiescence with a satisfying assignment on
/// satisfiable instances, a no-solution broadcast on unsatisfiable ones.
fn outcomes_match(oracle_sat: bool, outcome: RunOutcome, satisfied: bool) -> bool {
    match outcome {
        RunOutcome::Quiescent => oracle_sat && satisfied,
        RunOutcome::NoSolution => !oracle_sat,
        _ => false,
    }
}

fn write_example_scenario(path: &Path) -> Result<()> {
    let scenario = generate_scenario(1, 3, 1, Mode::CdmaEqualRate, &ScenarioParams::default())?;
    std::fs::write(path, scenario.to_toml())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => cmd_solve(args, false),
        Command::Trace(args) => cmd_solve(args, true),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_contract() {
        assert!(outcomes_match(true, RunOutcome::Quiescent, true));
        assert!(!outcomes_match(true, RunOutcome::Quiescent, false));
        assert!(!outcomes_match(true, RunOutcome::NoSolution, false));
        assert!(outcomes_match(false, RunOutcome::NoSolution, false));
        assert!(!outcomes_match(false, RunOutcome::CapHit, false));
        // Negative control: a deliberately wrong outcome is flagged.
        assert!(!outcomes_match(true, RunOutcome::Stalled, true));
    }

    #[test]
    fn example_scenario_writes_and_loads() {
        let dir = std::env::temp_dir().join("crqos-cli-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("example.toml");
        write_example_scenario(&path).unwrap();
        let loaded = Scenario::load(&path).unwrap();
        assert_eq!(loaded.n_cr(), 3);
    }
}
