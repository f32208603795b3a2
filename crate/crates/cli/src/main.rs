use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetero_noc_cli::commands::{
    cmd_eval_model, cmd_fit, cmd_route_trace, cmd_simulate, cmd_sweep, cmd_verify, output_dir, workers_from_env, FitModel,
};
use hetero_noc_cli::config::with_seed;
use hetero_noc_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hetero-noc", version, about = "Models, routing verification and simulation of layered 3D networks-on-chip")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's `out_dir`, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the area or clock scaling model to `xi,value` samples.
    Fit {
        /// CSV file with `xi` and `value` columns.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
        /// Pin α of the area model.
        #[arg(long)]
        alpha_fixed: Option<f64>,
        /// Pin the asymptote β of the clock model.
        #[arg(long)]
        beta_fixed: Option<f64>,
        /// Pin the offset β̄ of the clock model.
        #[arg(long)]
        beta_bar_fixed: Option<f64>,
    },
    /// Print scaling factors, propagation speeds and rerouting thresholds.
    EvalModel,
    /// Check connectivity, deadlock and livelock freedom of the routing.
    Verify,
    /// Run the configured traffic through the simulator.
    Simulate {
        /// Also write the per-event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Compare routing algorithms against XYZ along the configured axis.
    Sweep {
        /// Also write an SVG chart of the enhancement.
        #[arg(long)]
        plot: bool,
    },
    /// Print the hops from one router to another.
    RouteTrace {
        /// Source as `x,y,z` or router id.
        #[arg(long)]
        src: String,
        /// Destination as `x,y,z` or router id.
        #[arg(long)]
        dst: String,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    Ok(with_seed(ExperimentConfig::load(path)?, cli.seed))
}

fn execute(cli: &Cli) -> Result<(String, Option<CliError>), CliError> {
    match &cli.command {
        Command::Fit { input, model, alpha_fixed, beta_fixed, beta_bar_fixed } => {
            let out = output_dir(cli.out.as_deref(), None)?;
            Ok((cmd_fit(input, *model, *alpha_fixed, *beta_fixed, *beta_bar_fixed, &out)?, None))
        }
        Command::EvalModel => {
            let cfg = load(cli)?;
            Ok((cmd_eval_model(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?)?, None))
        }
        Command::Verify => {
            let cfg = load(cli)?;
            let v = cmd_verify(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?)?;
            let failure = (!v.all_pass).then(|| CliError::Verification("at least one check failed".into()));
            Ok((v.table, failure))
        }
        Command::Simulate { trace } => {
            let cfg = load(cli)?;
            Ok((cmd_simulate(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?, *trace)?, None))
        }
        Command::Sweep { plot } => {
            let cfg = load(cli)?;
            let workers = workers_from_env()?;
            Ok((cmd_sweep(&cfg, &output_dir(cli.out.as_deref(), Some(&cfg))?, *plot, workers)?, None))
        }
        Command::RouteTrace { src, dst } => Ok((cmd_route_trace(&load(cli)?, src, dst)?, None)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors are configuration errors; help and version are not.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok((text, failure)) => {
            print!("{text}");
            match failure {
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
