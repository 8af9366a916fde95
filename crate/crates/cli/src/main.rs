use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use corridor_core::kinematics::SwitchFormula;
use corridor_core::network::{build_network, Geometry};
use corridor_core::sim::output::{sig9, write_comparison, write_timing, write_traces};
use corridor_core::sim::{compare_policies, run, ArrivalModel, Policy, SimConfig, SimError};
use corridor_core::validate::{run_all, SuiteStatus, ValidateOptions};

#[derive(Parser)]
#[command(
    name = "corridor",
    version,
    about = "Signal-free corridor coordination simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write traces and metrics.
    Run(RunArgs),
    /// Run every policy on the same arrivals for several seeds.
    Compare(SeededArgs),
    /// Seed-averaged travel time for a list of volumes.
    Sweep(SweepArgs),
    /// Check the analytic components against independent oracles.
    Validate(ValidateArgs),
    /// Write the zone network as JSON.
    EmitNetwork(NetworkArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<Policy>,
}

#[derive(Args)]
struct SeededArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of consecutive seeds, starting from the configured one.
    #[arg(long, default_value_t = 5)]
    replications: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    seeded: SeededArgs,
    /// Volumes in veh/h per path, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    volumes: Vec<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random cases per suite.
    #[arg(long, default_value_t = 2000)]
    cases: usize,
    /// Node cap for the centralized equivalence suite.
    #[arg(long, default_value_t = 1_000_000)]
    central_budget: u64,
    /// Use the sign-flipped deadline switch point (mutation check).
    #[arg(long)]
    flip_deadline: bool,
    /// Also write report.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct NetworkArgs {
    /// Take the geometry or custom network from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn other(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Config(_) => 2,
            SimError::UnsafeHeadway { .. } => 3,
            SimError::SafetyViolation(_) => 4,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("CORRIDOR_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::EmitNetwork(a) => cmd_emit_network(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    policy: Option<Policy>,
) -> Result<SimConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = SimConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = policy {
        cfg.policy = p;
    }
    Ok(cfg)
}

/// Creates `dir`, refusing to reuse a non-empty one unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Failure::other(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn seeds(cfg: &SimConfig, replications: u64) -> Result<Vec<u64>, Failure> {
    if replications == 0 {
        return Err(Failure::usage("--replications must be at least 1"));
    }
    Ok((cfg.seed..cfg.seed + replications).collect())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.config, a.seed, a.policy)?;
    prepare_out(&a.out.out, a.out.force)?;
    let outcome = run(&cfg)?;
    write_traces(&a.out.out, &outcome, cfg.trace_step)?;
    write_timing(
        &a.out.out.join("timing.csv"),
        std::slice::from_ref(&outcome),
    )?;
    let m = &outcome.metrics;
    println!(
        "{} seed {}: {} vehicles, {} saturated, avg travel time {} s, solver {} ms (std {})",
        outcome.policy.name(),
        outcome.seed,
        m.vehicles,
        m.saturated,
        sig9(m.avg_travel_time),
        sig9(m.solver_ms_mean),
        sig9(m.solver_ms_std)
    );
    Ok(())
}

fn cmd_compare(a: SeededArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.run.config, a.run.seed, a.run.policy)?;
    let seeds = seeds(&cfg, a.replications)?;
    prepare_out(&a.run.out.out, a.run.out.force)?;
    let per_seed: Vec<Vec<_>> = seeds
        .par_iter()
        .map(|&s| compare_policies(&cfg, &[s]))
        .collect::<Result<_, _>>()?;
    let outcomes: Vec<_> = per_seed.into_iter().flatten().collect();
    write_comparison(&a.run.out.out.join("comparison.csv"), &outcomes)?;
    write_timing(&a.run.out.out.join("timing.csv"), &outcomes)?;
    for o in &outcomes {
        println!(
            "{:<14} seed {:>3}: avg travel time {} s, {} saturated",
            o.policy.name(),
            o.seed,
            sig9(o.metrics.avg_travel_time),
            o.metrics.saturated
        );
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let run_args = &a.seeded.run;
    let cfg = load_config(&run_args.config, run_args.seed, run_args.policy)?;
    if a.volumes.is_empty() {
        return Err(Failure::usage("--volumes needs at least one value"));
    }
    if !matches!(cfg.arrivals, ArrivalModel::Volume { .. }) {
        return Err(Failure::usage("sweep needs a volume arrival model"));
    }
    let seeds = seeds(&cfg, a.seeded.replications)?;
    prepare_out(&run_args.out.out, run_args.out.force)?;

    let cells: Vec<(usize, u64)> = (0..a.volumes.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(usize, f64)> = cells
        .par_iter()
        .map(|&(i, seed)| {
            let mut c = cfg.clone();
            c.seed = seed;
            if let ArrivalModel::Volume { veh_per_hour, .. } = &mut c.arrivals {
                *veh_per_hour = a.volumes[i];
            }
            run(&c).map(|o| (o.metrics.vehicles, o.metrics.avg_travel_time))
        })
        .collect::<Result<_, _>>()?;

    let mut csv = std::io::BufWriter::new(fs::File::create(run_args.out.out.join("sweep.csv"))?);
    writeln!(csv, "volume,avg_vehicles,avg_travel_time")?;
    let n = seeds.len() as f64;
    for (i, volume) in a.volumes.iter().enumerate() {
        let cell = &results[i * seeds.len()..(i + 1) * seeds.len()];
        let vehicles = cell.iter().map(|c| c.0 as f64).sum::<f64>() / n;
        let travel = cell.iter().map(|c| c.1).sum::<f64>() / n;
        writeln!(csv, "{},{},{}", sig9(*volume), sig9(vehicles), sig9(travel))?;
        println!(
            "{} veh/h: {} vehicles, avg travel time {} s",
            sig9(*volume),
            sig9(vehicles),
            sig9(travel)
        );
    }
    csv.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ValidateReport<'a> {
    seed: u64,
    cases: usize,
    suites: &'a [corridor_core::validate::SuiteReport],
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    if let Some(dir) = &a.out {
        prepare_out(dir, a.force)?;
    }
    let opts = ValidateOptions {
        seed: a.seed,
        cases: a.cases,
        deadline_formula: if a.flip_deadline {
            SwitchFormula::Flipped
        } else {
            SwitchFormula::Consistent
        },
        central_node_budget: a.central_budget,
    };
    let reports = run_all(&opts);
    let mut failed = 0;
    for r in &reports {
        match &r.status {
            SuiteStatus::Pass => println!("PASS {} ({} cases)", r.name, r.cases),
            SuiteStatus::Skip(why) => println!("SKIP {} ({} cases): {why}", r.name, r.cases),
            SuiteStatus::Fail(case) => {
                failed += 1;
                println!("FAIL {}: {case}", r.name);
            }
        }
    }
    if let Some(dir) = &a.out {
        let doc = ValidateReport {
            seed: a.seed,
            cases: a.cases,
            suites: &reports,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::other(e.to_string()))?;
        fs::write(dir.join("report.json"), text)?;
    }
    if failed > 0 {
        return Err(Failure::other(format!("{failed} suite(s) failed")));
    }
    Ok(())
}

fn cmd_emit_network(a: NetworkArgs) -> Result<(), Failure> {
    let network = match &a.config {
        Some(path) => load_config(path, None, None)?.build_network()?,
        None => build_network(Geometry::default()).map_err(|e| Failure::other(e.to_string()))?,
    };
    prepare_out(&a.out.out, a.out.force)?;
    let text = serde_json::to_string_pretty(&network).map_err(|e| Failure::other(e.to_string()))?;
    fs::write(a.out.out.join("network.json"), text)?;
    Ok(())
}
