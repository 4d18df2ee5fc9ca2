use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pdmdp_core::io::{run_experiment, Command, Experiment, ProbeSource, SolveMode};

#[derive(Parser)]
#[command(name = "pdmdp", version, about = "Simulate, uniformize and solve piecewise deterministic MDPs")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for relative outputs and the run manifest.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a model file.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Monte Carlo trajectories under a policy.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Initial state as MODE:POS.
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 1000)]
        max_jumps: usize,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        #[arg(long, default_value = "trajectories.csv")]
        out: PathBuf,
    },
    /// Compare thinned auxiliary runs against direct simulation.
    Equivalence {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Number of honest jumps compared.
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value = "equivalence.csv")]
        out: PathBuf,
    },
    /// Risk-sensitive value iteration.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Direct)]
        mode: Mode,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Dyadic refinement depth of the control search.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value = "values.csv")]
        out: PathBuf,
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Continuity probe of the jump-epoch kernel along a control sequence.
    DtmdpProbe(ProbeArgs),
}

#[derive(Args)]
struct ProbeArgs {
    /// Use the built-in two-point example.
    #[arg(long, conflicts_with_all = ["model", "control_seq", "f"])]
    example_a1: bool,
    /// Sequence indices n for the built-in example.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 10, 100])]
    ns: Vec<usize>,
    #[arg(long, required_unless_present = "example_a1", requires = "control_seq")]
    model: Option<PathBuf>,
    #[arg(long)]
    control_seq: Option<PathBuf>,
    /// Test function table; defaults to the absorption indicator.
    #[arg(long)]
    f: Option<PathBuf>,
    /// Add a uniformizing self-jump at this rate before probing.
    #[arg(long)]
    shift: Option<f64>,
    #[arg(long, default_value = "probe.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Direct,
    Auxiliary,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate { model } => Command::Validate { model },
            Cmd::Simulate {
                model,
                policy,
                x0,
                paths,
                max_jumps,
                horizon,
                out,
            } => Command::Simulate {
                model,
                policy,
                x0,
                paths,
                max_jumps,
                horizon,
                out,
            },
            Cmd::Equivalence {
                model,
                policy,
                lambda,
                x0,
                paths,
                depth,
                horizon,
                out,
            } => Command::Equivalence {
                model,
                policy,
                lambda,
                x0,
                paths,
                depth,
                horizon,
                out,
            },
            Cmd::Solve {
                model,
                mode,
                lambda,
                tol,
                depth,
                out,
                policy_out,
            } => Command::Solve {
                model,
                mode: match mode {
                    Mode::Direct => SolveMode::Direct,
                    Mode::Auxiliary => SolveMode::Auxiliary,
                },
                lambda,
                tolerance: tol,
                depth,
                values_out: out,
                policy_out,
            },
            Cmd::DtmdpProbe(p) => Command::DtmdpProbe {
                source: match p.model {
                    Some(model) if !p.example_a1 => ProbeSource::Files {
                        model,
                        controls: p.control_seq.expect("clap enforces --control-seq"),
                        f: p.f,
                        shift: p.shift,
                    },
                    _ => ProbeSource::ExampleA1 {
                        ns: p.ns,
                        shift: p.shift,
                    },
                },
                out: p.out,
            },
        }
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let exp = Experiment {
        seed: cli.seed,
        threads: cli.threads,
        out_dir: cli.out_dir,
        command: cli.command.into(),
    };
    match run_experiment(&exp) {
        Ok(report) => {
            for line in &report.summary {
                println!("{line}");
            }
            for p in &report.outputs {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
