//! `sann`: run optimization sessions, serve simulators and analyse archives.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::{error, info};

use sann::analysis::{bench_scaling, fit_od, fit_od_and_gamma, report_convergence, BenchConfig, DetuningScan};
use sann::config::{ExperimentConfig, SessionConfig};
use sann::controller::run_optimization;
use sann::experiment::{Experiment, ExperimentError, ExperimentServer, TcpExperiment};
use sann::sim::SimModel;
use sann::Error;

#[derive(Parser)]
#[command(name = "sann", version, about = "Neural-network ensemble optimizer for online experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) an optimization session.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        /// Session seed; overrides the seeds in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue the session stored in the archive.
        #[arg(long)]
        resume: bool,
    },
    /// Serve a built-in simulator over the experiment protocol.
    ServeSim {
        #[arg(long)]
        model: SimModel,
        #[arg(long)]
        dim: Option<usize>,
        /// Relative Gaussian noise on the cost.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Port to listen on; 0 picks a free one.
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Fit the optical depth of a transmission-versus-detuning scan.
    FitOd {
        /// CSV with columns delta_mhz,transmission[,sigma].
        #[arg(long)]
        input: PathBuf,
        /// Transition linewidth in MHz (the starting value with --fit-gamma).
        #[arg(long)]
        gamma: f64,
        /// Fit the linewidth as well.
        #[arg(long)]
        fit_gamma: bool,
    },
    /// Write the convergence table of an archive as CSV.
    Report {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time ensemble fits over growing synthetic datasets.
    BenchScaling {
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_FIT: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Experiment(ExperimentError::Transport(_) | ExperimentError::Protocol(_)) => EXIT_TRANSPORT,
        Error::Experiment(ExperimentError::Config(_))
        | Error::InvalidConfig(_)
        | Error::InvalidSpace(_)
        | Error::DimensionMismatch { .. }
        | Error::Archive { .. }
        | Error::Json(_)
        | Error::Csv(_) => EXIT_CONFIG,
        Error::FitFailed(_) => EXIT_FIT,
        _ => EXIT_FAILURE,
    }
}

fn connect(config: &SessionConfig) -> sann::Result<Box<dyn Experiment + Send>> {
    match &config.experiment {
        None => Err(Error::InvalidConfig("no experiment configured".into())),
        Some(ExperimentConfig::Tcp { address, timeout_secs }) => {
            let client = TcpExperiment::connect(address.as_str(), Duration::from_secs_f64(*timeout_secs))?;
            client.check_space(&config.space)?;
            Ok(Box::new(client))
        }
        Some(ExperimentConfig::Sim { model, noise, seed }) => {
            let (sim, space) = model.build(Some(config.space.dim()), *noise, *seed)?;
            if space.lower() != config.space.lower() || space.upper() != config.space.upper() {
                return Err(Error::InvalidConfig(format!(
                    "space does not match the {model:?} simulator box {:?}..{:?}",
                    space.lower(),
                    space.upper()
                )));
            }
            Ok(sim)
        }
    }
}

fn optimize(config: PathBuf, archive: PathBuf, seed: Option<u64>, resume: bool) -> sann::Result<()> {
    let config = SessionConfig::load(&config)?;
    let mut settings = config.settings();
    if let Some(seed) = seed {
        settings = settings.with_seed(seed);
    }
    let mut experiment = connect(&config)?;
    let summary = run_optimization(&mut experiment, &config.space, &settings, &archive, resume)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "stopped: {:?} after {} runs ({} evaluated now)", summary.stop, summary.runs, summary.evaluations)?;
    match summary.best {
        Some(best) => writeln!(out, "best: run {} raw_cost {} params {:?}", best.run_index, best.raw_cost, best.params)?,
        None => writeln!(out, "best: none (every run was bad)")?,
    }
    Ok(())
}

fn serve_sim(model: SimModel, dim: Option<usize>, noise: f64, seed: u64, host: &str, port: u16) -> sann::Result<()> {
    let (sim, space) = model.build(dim, noise, seed)?;
    let mut server = ExperimentServer::bind((host, port), sim, space)?;
    let addr = server.local_addr()?;
    info!("serving {model:?} on {addr}");
    let mut out = std::io::stdout().lock();
    writeln!(out, "listening on {addr}")?;
    out.flush()?;
    drop(out);
    server.serve_until_shutdown()?;
    Ok(())
}

fn fit(input: PathBuf, gamma: f64, fit_gamma: bool) -> sann::Result<()> {
    let scan = DetuningScan::read_csv(&input)?;
    let result = if fit_gamma {
        fit_od_and_gamma(&scan, gamma)?
    } else {
        fit_od(&scan, gamma)?
    };
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn report(archive: PathBuf, out: PathBuf) -> sann::Result<()> {
    let summary = report_convergence(&archive, &out)?;
    println!("{} rows written, {} corrupt lines skipped", summary.rows, summary.skipped);
    Ok(())
}

fn bench(points: Vec<usize>, seed: u64) -> sann::Result<()> {
    let config = BenchConfig {
        seed,
        ..BenchConfig::default()
    };
    let rows = bench_scaling(&points, &config)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "count,fit_seconds")?;
    for r in rows {
        writeln!(out, "{},{}", r.count, r.fit_seconds)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize {
            config,
            archive,
            seed,
            resume,
        } => optimize(config, archive, seed, resume),
        Command::ServeSim {
            model,
            dim,
            noise,
            seed,
            port,
            host,
        } => serve_sim(model, dim, noise, seed, &host, port),
        Command::FitOd { input, gamma, fit_gamma } => fit(input, gamma, fit_gamma),
        Command::Report { archive, out } => report(archive, out),
        Command::BenchScaling { points, seed } => bench(points, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
