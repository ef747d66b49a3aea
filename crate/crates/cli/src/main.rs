use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ernn_cli::{execute, Command, Invocation, RunOptions};

#[derive(Parser)]
#[command(
    name = "ernn",
    version,
    about = "Train and analyse equilibriated recurrent networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat JSON config with dotted keys such as "model.kind".
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV artifacts and the run manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a model; writes metrics.csv and checkpoint.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Record wall-clock seconds per epoch (output is then not byte-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Hidden-state trajectories of RNN, FastRNN and ERNN on a random walk.
    PhaseSpace {
        #[command(flatten)]
        common: Common,
    },
    /// Spectral norms of ∂h_T/∂h_n for ERNN and a vanilla RNN.
    GradFlow {
        #[command(flatten)]
        common: Common,
    },
    /// Convergence trace of the Euler fixed-point iteration.
    FixedPoint {
        #[command(flatten)]
        common: Common,
    },
    /// Eigenvalues of the residual Jacobian at sampled equilibria.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every cell kind's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt one backward rule to confirm the check can fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut options = RunOptions::default();
    let (command, common) = match cli.command {
        Cmd::Train { common, timing } => {
            options.timing = timing;
            (Command::Train, common)
        }
        Cmd::PhaseSpace { common } => (Command::PhaseSpace, common),
        Cmd::GradFlow { common } => (Command::GradFlow, common),
        Cmd::FixedPoint { common } => (Command::FixedPoint, common),
        Cmd::Stability { common } => (Command::Stability, common),
        Cmd::Gradcheck {
            common,
            inject_fault,
        } => {
            options.inject_fault = inject_fault;
            (Command::Gradcheck, common)
        }
    };
    let inv = Invocation {
        command,
        config_path: common.config,
        out_dir: common.out_dir,
        seed: common.seed,
        options,
    };
    match execute(&inv, &mut std::io::stdout()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
