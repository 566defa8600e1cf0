use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pipescale::commands::{
    cmd_allocate, cmd_compare, cmd_simulate, cmd_sweep, cmd_validate, CliError, CompareArgs, SimulateArgs, SweepArgs,
    SweepVariable,
};
use pipescale_core::{DropPolicy, PolicyMode};

/// Resource planning and simulation for multi-model inference pipelines.
#[derive(Parser)]
#[command(name = "pipescale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an experiment's pipeline, cluster and workload.
    Validate { config: PathBuf },
    /// Plan once for a given demand and print the plan as JSON.
    Allocate {
        config: PathBuf,
        #[arg(long)]
        demand: f64,
        #[arg(long, default_value = "pipeline-aware", value_parser = parse_mode)]
        policy: PolicyMode,
        /// Write the planning model in CPLEX LP format.
        #[arg(long)]
        export_lp: Option<PathBuf>,
    },
    /// Run an experiment and write timeseries.csv and summary.json.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the initial plan and routing tables as JSON.
        #[arg(long)]
        dump_routes: Option<PathBuf>,
    },
    /// Plan (demand) or simulate (slo) over a range and write sweep.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        variable: Variable,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired-seed runs of several planners and drop policies; writes compare.csv.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "pipeline-aware,hardware-only,pipeline-agnostic", value_parser = parse_mode)]
        policies: Vec<PolicyMode>,
        /// Drop policies to cross with the planners; the experiment's own by default.
        #[arg(long, value_delimiter = ',', value_parser = parse_drop)]
        drop_policies: Option<Vec<DropPolicy>>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variable {
    Demand,
    Slo,
}

fn parse_mode(s: &str) -> Result<PolicyMode, String> {
    if s == "loki" {
        return Ok(PolicyMode::PipelineAware);
    }
    PolicyMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
        let names: Vec<_> = PolicyMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_drop(s: &str) -> Result<DropPolicy, String> {
    DropPolicy::ALL.into_iter().find(|d| d.as_str() == s).ok_or_else(|| {
        let names: Vec<_> = DropPolicy::ALL.iter().map(|d| d.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match cli.command {
        Command::Validate { config } => cmd_validate(&config, out),
        Command::Allocate { config, demand, policy, export_lp } => {
            cmd_allocate(&config, demand, policy, export_lp.as_deref(), out)
        }
        Command::Simulate { config, seed, out: dir, dump_routes } => cmd_simulate(
            &config,
            SimulateArgs { seed, out_dir: dir.as_deref(), dump_routes: dump_routes.as_deref() },
            out,
        ),
        Command::Sweep { config, variable, from, to, step, out: dir } => {
            let variable = match variable {
                Variable::Demand => SweepVariable::Demand,
                Variable::Slo => SweepVariable::Slo,
            };
            cmd_sweep(&config, SweepArgs { variable, from, to, step, out_dir: &dir }, out)
        }
        Command::Compare { config, policies, drop_policies, seeds, out: dir } => cmd_compare(
            &config,
            CompareArgs { modes: policies, drops: drop_policies, seeds, out_dir: &dir },
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are configuration errors; exit code 2 is reserved
            // for infeasible plans.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
