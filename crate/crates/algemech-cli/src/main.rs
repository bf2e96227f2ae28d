//! Command-line front end: validate models, run dynamics, verify the
//! variational principle, compare constraint regimes, and run the
//! nonholonomic reduction.
//!
//! Exit codes: 0 success/PASS, 1 numerical FAIL, 2 usage or load error.

#![allow(clippy::needless_range_loop)] // contractions follow index notation

mod commands;
mod table;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "algemech", version, about = "Mechanics on general algebroids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Built-in model name or path to a model file
    model: String,
    /// Start time (defaults to the model file)
    #[arg(long)]
    t0: Option<f64>,
    /// End time (defaults to the model file)
    #[arg(long)]
    t1: Option<f64>,
    /// Fixed step size (defaults to the model file)
    #[arg(long)]
    dt: Option<f64>,
    /// Integration method: euler, heun or rk4
    #[arg(long)]
    method: Option<String>,
    /// Initial base point, comma-separated
    #[arg(long, value_name = "v1,..,vn", allow_hyphen_values = true)]
    x0: Option<String>,
    /// Initial momentum (xi for Hamiltonian modes, p for lagrange)
    #[arg(long, value_name = "v1,..,vm", allow_hyphen_values = true)]
    xi0: Option<String>,
    /// Initial multipliers (vaconomic mode)
    #[arg(long, value_name = "v1,..,vr", allow_hyphen_values = true)]
    mu0: Option<String>,
    /// Seed for variation generators
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model and report its structure classification
    Check { model: String },
    /// Integrate dynamics and emit the trajectory as CSV or JSON
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Dynamics mode: lagrange, hamilton, nonholonomic, vaconomic, reduced
        #[arg(long, default_value = "hamilton")]
        mode: String,
        /// Output file (stdout when omitted)
        #[arg(long)]
        output: Option<String>,
        /// Output format: csv or json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Verify the variational description of the Hamiltonian dynamics
    Livens {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeded variation generators
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Evaluate an existing trajectory file instead of integrating
        #[arg(long)]
        trajectory: Option<String>,
    },
    /// Run nonholonomic and vaconomic dynamics from identical initial data
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the nonholonomic reduction against the constrained dynamics
    Reduce {
        #[command(flatten)]
        run: RunArgs,
    },
    /// List the built-in models
    Models,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check { model } => commands::check(&model),
        Command::Simulate {
            run,
            mode,
            output,
            format,
        } => commands::simulate(&run, &mode, output.as_deref(), &format),
        Command::Livens {
            run,
            trials,
            trajectory,
        } => commands::livens(&run, trials, trajectory.as_deref()),
        Command::Compare { run } => commands::compare(&run),
        Command::Reduce { run } => commands::reduce(&run),
        Command::Models => {
            for name in algemech::models::list_models() {
                println!("{name}");
            }
            0
        }
    };
    std::process::exit(code);
}
