//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 infeasible input.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataset::{import_csv, DatasetFile, DatasetHeader};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::pipeline::{evaluate, offline_train, OnlineRanker, Strategy, TrainConfig, TrainedArtifact};
use crate::predictor::DEFAULT_NEIGHBORS;
use crate::protocol::{serve_lines, serve_tcp, Ranked};
use crate::report::{emit_report, ReportFormat};
use crate::synth::{synth_generate, LambdaLaw, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "shadowrank", version, about = "Constrained ranking with predicted shadow prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population.
    Synth(SynthArgs),
    /// Solve training duals and fit the price predictor.
    Train(TrainArgs),
    /// Rank every user of a dataset with one strategy.
    Rank(RankArgs),
    /// Compare strategies on a dataset.
    Bench(BenchArgs),
    /// Answer ranking requests on stdin/stdout or a TCP port.
    Serve(ServeArgs),
    /// Build a dataset from CSV exports.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    m1: usize,
    #[arg(long, default_value_t = 20)]
    m2: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, value_enum, default_value_t = LambdaLaw::Clustered)]
    law: LambdaLaw,
    #[arg(long, default_value_t = 0.5)]
    binding_fraction: f64,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated epsilon candidates.
    #[arg(long, value_delimiter = ',')]
    epsilon_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    k_neighbors: usize,
    #[arg(long)]
    lambda_cap: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Z-score covariates before neighbour search.
    #[arg(long)]
    standardize: bool,
    /// Solve users one at a time.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Knn)]
    strategy: Strategy,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "no_opt,mean,knn,optimal")]
    strategies: Vec<Strategy>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Spread users over threads (latencies then include contention).
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Strategy for requests that do not name one.
    #[arg(long, value_enum, default_value_t = Strategy::Knn)]
    strategy: Strategy,
    /// Listen on this TCP port instead of standard input.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Args)]
struct ImportArgs {
    /// JSON dataset header with the constraint table.
    #[arg(long)]
    header: PathBuf,
    /// CSV with columns user_id,item,utility.
    #[arg(long)]
    utilities: PathBuf,
    /// CSV with a user_id column followed by covariates.
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Infeasible | Error::AllInfeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_DATA,
    }
}

fn exec(parallel: bool) -> Execution {
    if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

fn output(path: &Option<PathBuf>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

/// Runs the CLI against the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(argv, stdin.lock(), stdout.lock(), stderr.lock())
}

/// Runs the CLI with explicit streams.
pub fn run_with_io<I, T>(argv: I, stdin: impl BufRead, mut stdout: impl Write, mut stderr: impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
            } else {
                let _ = stdout.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match dispatch(cli.command, stdin, &mut stdout, &mut stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, stdin: impl BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                seed: a.seed,
                n_users: a.users,
                m1: a.m1,
                m2: a.m2,
                k: a.k,
                d: a.d,
                law: a.law,
                binding_fraction: a.binding_fraction,
                clusters: a.clusters,
            };
            synth_generate(&cfg)?.write(&a.out)
        }
        Command::Train(a) => {
            let data = DatasetFile::read(&a.data)?;
            let instances = data.instances()?;
            let mut cfg = TrainConfig::default();
            if let Some(grid) = a.epsilon_grid {
                cfg.dual.epsilon_grid = grid;
            }
            if let Some(cap) = a.lambda_cap {
                cfg.dual.lambda_cap = cap;
            }
            if let Some(it) = a.max_iterations {
                cfg.dual.max_iterations = it;
            }
            cfg.predictor.k = a.k_neighbors;
            cfg.predictor.standardize = a.standardize;
            cfg.exec = exec(!a.sequential);
            let mut artifact = offline_train(&instances, &cfg)?;
            artifact.schema = Some(data.header);
            for u in &artifact.skipped_users {
                writeln!(stderr, "warning: user {u} is infeasible and was skipped")?;
            }
            artifact.save(&a.out)
        }
        Command::Rank(a) => {
            let artifact = TrainedArtifact::load(&a.artifact)?;
            let instances = DatasetFile::read(&a.data)?.instances()?;
            let ranker = OnlineRanker::new(&artifact);
            let mut buf = Vec::new();
            for inst in &instances {
                let r = ranker.rank(inst, a.strategy)?;
                let line = Ranked {
                    user_id: inst.user_id().to_string(),
                    ranking: r.assignment.item_at_rank,
                    slacks: r.report.slack,
                    compliant: r.report.compliant,
                    utility: r.report.utility,
                    latency_ms: r.latency_ms,
                };
                serde_json::to_writer(&mut buf, &line).map_err(std::io::Error::from)?;
                buf.push(b'\n');
            }
            output(&a.out, stdout, &buf)
        }
        Command::Bench(a) => {
            let artifact = TrainedArtifact::load(&a.artifact)?;
            let instances = DatasetFile::read(&a.data)?.instances()?;
            let report = evaluate(&artifact, &instances, &a.strategies, a.repeats, exec(a.parallel))?;
            for f in &report.failures {
                writeln!(stderr, "warning: {} failed for user {}: {}", f.strategy, f.user_id, f.error)?;
            }
            output(&a.out, stdout, &emit_report(&report, a.format)?)
        }
        Command::Serve(a) => {
            let artifact = TrainedArtifact::load(&a.artifact)?;
            if artifact.schema.is_none() {
                return Err(Error::Config("artifact carries no constraint schema".into()));
            }
            match a.port {
                Some(port) => {
                    let listener = TcpListener::bind(("127.0.0.1", port))?;
                    writeln!(stderr, "listening on {}", listener.local_addr()?)?;
                    serve_tcp(listener, &artifact, a.strategy, exec(a.parallel), None)
                }
                None => serve_lines(stdin, stdout, &artifact, a.strategy, exec(a.parallel)).map(|_| ()),
            }
        }
        Command::Import(a) => {
            let header: DatasetHeader = serde_json::from_reader(File::open(&a.header)?).map_err(|e| {
                Error::Parse {
                    line: e.line(),
                    msg: format!("header: {e}"),
                }
            })?;
            let ds = import_csv(header, File::open(&a.utilities)?, File::open(&a.covariates)?)?;
            let mut w = BufWriter::new(File::create(&a.out)?);
            ds.write_to(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}
