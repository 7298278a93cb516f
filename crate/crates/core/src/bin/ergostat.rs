use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use ergostat::changepoint::estimate_changepoint_with;
use ergostat::harness::{write_records_csv, write_summary_json};
use ergostat::sample::{read_sample, write_text};
use ergostat::{
    calibrate_gamma, classify, dhat, dhat_model, gof_test, run_experiment, seeds, Boundary, Error, ExperimentSpec,
    GofConfig, ProcessModel, Result, Sample, WeightScheme,
};

#[derive(Parser)]
#[command(name = "ergostat", version, about = "Distributional-distance tests for stationary ergodic processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct SchemeArgs {
    /// Largest tuple length of the truncated distance.
    #[arg(long = "m-max", default_value_t = 3)]
    m_max: usize,
    /// Finest dyadic resolution of the truncated distance.
    #[arg(long = "l-max", default_value_t = 8)]
    l_max: u32,
}

impl SchemeArgs {
    fn scheme(self) -> Result<WeightScheme> {
        WeightScheme::new(self.m_max, self.l_max)
    }
}

#[derive(Args)]
struct Input {
    /// Read this column of a headed CSV file instead of one value per line.
    #[arg(long, global = true)]
    column: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from a model and print one value per line.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Goodness-of-fit test of a sample against a model.
    Gof {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Sample length; defaults to the length of `--data`.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "n-cal", default_value_t = 999)]
        n_cal: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample to test; without it, a sample drawn from the model is tested.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Decide whether `z` shares its law with `x` (label 1) or `y` (label 2).
    Classify {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        z: PathBuf,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Estimate the location of a single change in distribution.
    Changepoint {
        #[arg(long)]
        data: PathBuf,
        /// Search boundary b(n); splits are searched in [b(n), n - b(n)].
        #[arg(long, default_value = "sqrt(n)")]
        boundary: String,
        /// Write the full scan as CSV with header `t,dhat`.
        #[arg(long = "emit-scan")]
        emit_scan: Option<PathBuf>,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Run a seeded multi-trial experiment from a spec file.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Directory for `records.csv` and `summary.json`.
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Truncated distance between two samples, or a sample and a model.
    Distance {
        #[arg(long)]
        x: PathBuf,
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        y: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Validate a model specification and echo it.
    Model {
        #[arg(long)]
        model: PathBuf,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load(path: &Path, input: &Input) -> Result<Sample> {
    let s = read_sample(path, input.column.as_deref()).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })?;
    if s.is_empty() {
        return Err(Error::Config(format!("{}: no values", path.display())));
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { model, n, seed, out } => {
            let model = ProcessModel::load(&model)?;
            let s = model.sample(n, seed)?;
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    write_text(&s, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let mut w = BufWriter::new(io::stdout().lock());
                    write_text(&s, &mut w)?;
                    w.flush()?;
                }
            }
        }
        Command::Gof {
            model,
            alpha,
            n,
            n_cal,
            seed,
            data,
            input,
            scheme,
        } => {
            let scheme = scheme.scheme()?;
            let model_path = model;
            let model = ProcessModel::load(&model_path)?;
            let x = match &data {
                Some(path) => {
                    let x = load(path, &input)?;
                    if let Some(n) = n {
                        if n != x.len() {
                            return Err(Error::Config(format!("--n {n} differs from data length {}", x.len())));
                        }
                    }
                    x
                }
                None => {
                    let n = n.ok_or_else(|| Error::Config("--n is required without --data".into()))?;
                    model.sample(n, seeds::derive(seed, &["self-trial".into()]))?
                }
            };
            let cfg = GofConfig {
                alpha,
                n: x.len(),
                n_cal,
                seed,
                scheme,
            };
            let cal = calibrate_gamma(&model, &cfg)?;
            let out = gof_test(&x, &model, &cal)?;
            print_json(&json!({
                "decision": out.decision,
                "statistic": out.statistic,
                "gamma_hat": out.gamma_hat,
                "config": {
                    "model": model_path,
                    "alpha": alpha,
                    "n": cfg.n,
                    "n_cal": n_cal,
                    "seed": seed,
                    "m_max": scheme.m_max,
                    "l_max": scheme.l_max,
                    "data": data,
                },
            }))?;
        }
        Command::Classify {
            x,
            y,
            z,
            input,
            scheme,
        } => {
            let scheme = scheme.scheme()?;
            let out = classify(&load(&x, &input)?, &load(&y, &input)?, &load(&z, &input)?, &scheme)?;
            print_json(&out)?;
        }
        Command::Changepoint {
            data,
            boundary,
            emit_scan,
            input,
            scheme,
        } => {
            let scheme = scheme.scheme()?;
            let boundary: Boundary = boundary.parse()?;
            let z = load(&data, &input)?;
            let est = estimate_changepoint_with(&z, &scheme, &boundary)?;
            if let Some(path) = emit_scan {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["t", "dhat"])?;
                for p in &est.scan {
                    w.write_record([p.t.to_string(), p.dhat.to_string()])?;
                }
                w.flush()?;
            }
            print_json(&json!({ "k_hat": est.k_hat, "boundary": est.boundary, "n": est.n }))?;
        }
        Command::Experiment { spec, out_dir } => {
            let spec = ExperimentSpec::load(&spec)?;
            let result = run_experiment(&spec)?;
            std::fs::create_dir_all(&out_dir)?;
            write_records_csv(&result.records, &out_dir.join("records.csv"))?;
            write_summary_json(&result, &out_dir.join("summary.json"))?;
            print_json(&result.summaries)?;
        }
        Command::Distance {
            x,
            y,
            model,
            input,
            scheme,
        } => {
            let scheme = scheme.scheme()?;
            let x = load(&x, &input)?;
            let d = match (y, model) {
                (Some(y), _) => dhat(&x, &load(&y, &input)?, &scheme)?,
                (None, Some(m)) => dhat_model(&x, &ProcessModel::load(&m)?, &scheme)?,
                (None, None) => unreachable!("clap requires one of --y, --model"),
            };
            print_json(&d)?;
        }
        Command::Model { model } => {
            let model = ProcessModel::load(&model)?;
            print_json(&json!({
                "spec": model.spec(),
                "oracle": model.oracle_kind(),
                "capabilities": model.capabilities(),
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = std::env::var("ERGOSTAT_THREADS").ok().filter(|v| !v.is_empty()) {
        let built = threads
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Config(format!("ERGOSTAT_THREADS must be a positive integer, got {threads:?}")))
            .and_then(|t| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| Error::Config(e.to_string()))
            });
        if let Err(e) = built {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
