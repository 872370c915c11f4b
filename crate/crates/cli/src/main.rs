use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmisysid_cli::commands::{cmd_eig, cmd_eval, cmd_fit, cmd_simulate, EigTarget, Global, InputSpec};
use lmisysid_cli::{CliResult, CONFIG_DIR_ENV};

/// Eigenvalue-constrained maximum-likelihood identification of innovation-form
/// state-space models.
#[derive(Parser, Debug)]
#[command(name = "lmisysid", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Run configuration (TOML); relative names are also looked up in the
    /// configuration directory.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Time-series CSV with header t,u1..um,y1..yp.
    #[arg(long, global = true, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Random seed for simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Progress output on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the configured model; writes model.toml and report.toml.
    #[command(after_help = format!("The configuration is found via --config, ${CONFIG_DIR_ENV}/lmisysid.toml or ./lmisysid.toml."))]
    Fit {
        /// Initial model file, overriding io.init.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },
    /// Simulate a model file into a dataset CSV.
    Simulate {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Input CSV (header t,u1..um); otherwise a PRBS or zero input is generated.
        #[arg(long, value_name = "FILE", conflicts_with_all = ["samples", "zero_input"])]
        input: Option<PathBuf>,
        /// Number of generated samples.
        #[arg(long, required_unless_present = "input")]
        samples: Option<usize>,
        /// Generate a zero input instead of a PRBS.
        #[arg(long)]
        zero_input: bool,
        /// PRBS level.
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        /// Minimum number of samples between PRBS switches.
        #[arg(long, default_value_t = 1)]
        hold: usize,
        /// Sample period of generated inputs.
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        /// Simulate without innovations.
        #[arg(long)]
        no_noise: bool,
    },
    /// Innovations, identification index and noise-free response for a dataset.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    /// Open-loop and filter spectra, optionally checked against a region.
    Eig {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Region, e.g. "intersect [half_plane(0.3), disk(0.998)]".
        #[arg(long = "check-region", visible_alias = "region", value_name = "REGION")]
        region: Option<String>,
        /// Tightening constant of the oracle.
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = TargetArg::Filter)]
        target: TargetArg,
        /// Exit with status 2 when the direct and oracle verdicts disagree.
        #[arg(long)]
        self_test: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    OpenLoop,
    Filter,
}

fn run(cli: Cli) -> CliResult<i32> {
    let g = Global {
        config: cli.global.config,
        data: cli.global.data,
        out: cli.global.out,
        seed: cli.global.seed,
        verbose: cli.global.verbose,
    };
    match cli.command {
        Command::Fit { init } => cmd_fit(&g, init.as_deref()),
        Command::Simulate { model, input, samples, zero_input, amplitude, hold, dt, no_noise } => {
            let spec = match (input, samples) {
                (Some(p), _) => InputSpec::File(p),
                (None, Some(samples)) if zero_input => InputSpec::Zero { samples, dt },
                (None, Some(samples)) => InputSpec::Prbs { samples, dt, amplitude, hold },
                (None, None) => unreachable!("clap requires --samples without --input"),
            };
            cmd_simulate(&g, &model, &spec, !no_noise)
        }
        Command::Eval { model } => cmd_eval(&g, &model),
        Command::Eig { model, region, epsilon, target, self_test } => {
            let target = match target {
                TargetArg::OpenLoop => EigTarget::OpenLoop,
                TargetArg::Filter => EigTarget::Filter,
            };
            cmd_eig(&model, region.as_deref(), epsilon, target, self_test)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("lmisysid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
