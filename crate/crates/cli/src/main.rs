use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use prunelab::bound::{evaluate, CSource};
use prunelab::config::load_config;
use prunelab::plot::{cmd_plot, PlotKind};
use prunelab::sweep::{cmd_sweep, format_table};
use prunelab::verify::run_default_suite;
use prunelab::{experiment, CliError, CliResult};
use prunelab_core::data::SyntheticKind;

#[derive(Parser)]
#[command(name = "prunelab", version, about = "Pruning experiments with dead-neuron instrumentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config for every configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render an SVG from one or more metrics.csv files.
    Plot {
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Evaluate the layer entropy bound.
    Bound(BoundArgs),
    /// Run every oracle check; exits nonzero on any failure.
    Verify,
    /// Sweep the AP rate q over a config.
    SweepQ {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated q values.
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
        /// Output root; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a synthetic dataset as CSV with a split column.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Blobs,
    Spirals,
}

#[derive(Args)]
struct BoundArgs {
    /// Layer width dim(T).
    #[arg(long)]
    dim: usize,
    #[arg(long = "S")]
    s: f64,
    #[arg(long = "D")]
    d: f64,
    /// Architecture constant in nats.
    #[arg(long = "C", conflicts_with_all = ["n", "tau"])]
    c: Option<f64>,
    /// Number of quantization outcomes.
    #[arg(long = "N", requires = "p_s", conflicts_with = "tau")]
    n: Option<usize>,
    #[arg(long, requires_all = ["alpha", "p_s"])]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Probability of the zero outcome.
    #[arg(long = "pS")]
    p_s: Option<f64>,
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    PlotKind::parse(s).ok_or_else(|| format!("unknown plot kind `{s}`; use dnr_vs_lambda, dnr_vs_epoch or acc_vs_lambda"))
}

fn bound(args: &BoundArgs) -> CliResult<()> {
    let source = match (args.c, args.n, args.tau, args.alpha, args.p_s) {
        (Some(c), None, None, _, _) => CSource::Direct(c),
        (None, Some(n), None, _, Some(p_s)) => CSource::Outcomes { n, p_s },
        (None, None, Some(tau), Some(alpha), Some(p_s)) => CSource::Quantizer { tau, alpha, p_s },
        _ => return Err(CliError::Usage("give --C, or --N with --pS, or --tau --alpha --pS".into())),
    };
    let report = evaluate(args.dim, args.s, args.d, source)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn verify() -> CliResult<bool> {
    let outcomes = run_default_suite();
    for o in &outcomes {
        println!("{}", serde_json::to_string(o)?);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    eprintln!("{} checks, {failed} failed", outcomes.len());
    Ok(failed == 0)
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            for run in experiment::cmd_run(&cfg)? {
                let last = run.log.final_measurement();
                match last {
                    Some(m) => println!(
                        "seed {}: lambda {:.3}% test_acc {:.4} dnr {:.4} -> {}",
                        run.seed,
                        m.lambda_percent,
                        m.test_accuracy,
                        m.dnr.dnr,
                        run.dir.display()
                    ),
                    None => println!("seed {}: {}", run.seed, run.dir.display()),
                }
            }
        }
        Command::Plot { kind, out, csv } => cmd_plot(&csv, kind, &out)?,
        Command::Bound(args) => bound(&args)?,
        Command::Verify => return verify(),
        Command::SweepQ { config, q, out } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let rows = cmd_sweep(&cfg, &q, &out)?;
            print!("{}", format_table(&rows));
        }
        Command::Dataset {
            command: DatasetCommand::Gen {
                kind,
                n,
                classes,
                noise,
                seed,
                out,
            },
        } => {
            let kind = match kind {
                GenKind::Blobs => SyntheticKind::Blobs {
                    n,
                    classes,
                    noise: noise.unwrap_or(0.1),
                },
                GenKind::Spirals => SyntheticKind::Spirals {
                    n,
                    noise: noise.unwrap_or(0.05),
                },
            };
            let rows = prunelab::dataset::write_csv(kind, seed, &out)?;
            println!("{rows} rows -> {}", out.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
