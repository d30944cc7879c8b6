//! `ddhs` command-line driver. Each subcommand is one stage of the
//! train-then-substitute workflow and writes its own output directory.

mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ddhs_core::coupling::{ClientOptions, CouplingError, ModelServer, RemoteBrace, Transcript};
use ddhs_core::frame::{compare_runs, newmark_nlrha, ComparisonReport, FrameError, ResponseHistory};
use ddhs_core::materials::{generate_protocol, run_cyclic_pushover, MaterialBrace};
use ddhs_core::pisindy::{load_model, save_model, train, PiSession, PiSindyError};
use ddhs_core::{BraceProvider, SignalSeries};
use thiserror::Error;

use config::{write_file, write_run_record, BraceSpec, ConfigArgs, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("coupling failure: {0}")]
    Coupling(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 1,
            Self::Numerical(_) => 2,
            Self::Coupling(_) => 3,
        }
    }
}

impl From<PiSindyError> for CliError {
    fn from(e: PiSindyError) -> Self {
        match e {
            PiSindyError::Lasso(_)
            | PiSindyError::Hysteresis(_)
            | PiSindyError::DegenerateInput(_)
            | PiSindyError::DegenerateReference => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::StabilityViolation { .. }
            | FrameError::Divergence { .. }
            | FrameError::ProviderFault(_)
            | FrameError::Metric(_) => Self::Numerical(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<CouplingError> for CliError {
    fn from(e: CouplingError) -> Self {
        match e {
            CouplingError::InvalidModel(_) => Self::Config(e.to_string()),
            _ => Self::Coupling(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ddhs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the cyclic displacement protocol as CSV
    ProtocolGen {
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Drive the reference brace material through a protocol
    Pushover {
        /// Protocol CSV; generated from the config when omitted
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit a stop-operator model to displacement/force data
    Train {
        /// CSV with columns t,x,R
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the frame under the configured ground motion
    Simulate {
        /// Response CSV to compare against
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Log every coupling frame to this file (remote brace only)
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Serve a trained model over the coupling protocol until interrupted
    Serve {
        #[arg(long)]
        model: PathBuf,
        /// Log every coupling frame to this file
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare two response CSVs
    Compare {
        reference: PathBuf,
        test: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::ProtocolGen { out_dir, config } => protocol_gen(&config.resolve()?, &out_dir),
        Command::Pushover {
            protocol,
            out_dir,
            config,
        } => pushover(&config.resolve()?, protocol.as_deref(), &out_dir),
        Command::Train { data, out_dir, config } => train_model(&config.resolve()?, &data, &out_dir),
        Command::Simulate {
            reference,
            transcript,
            out_dir,
            config,
        } => simulate(&config.resolve()?, reference.as_deref(), transcript.as_deref(), &out_dir),
        Command::Serve {
            model,
            transcript,
            out_dir,
            config,
        } => serve(&config.resolve()?, &model, transcript.as_deref(), out_dir.as_deref()),
        Command::Compare {
            reference,
            test,
            out_dir,
        } => compare(&reference, &test, out_dir.as_deref()),
    }
}

fn finish(out_dir: &Path, config: &RunConfig, summary: &str) -> Result<(), CliError> {
    write_run_record(out_dir, config, summary)?;
    print!("{summary}");
    Ok(())
}

fn series_error(e: ddhs_core::series::SeriesError) -> CliError {
    CliError::Config(e.to_string())
}

fn protocol_gen(config: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let x = generate_protocol(&config.protocol()).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Config(e.to_string()))?;
    x.save_csv(out_dir.join("protocol.csv")).map_err(series_error)?;
    let summary = format!(
        "samples = {}\nmax_abs_x_mm = {}\ncycles = {}\n",
        x.len(),
        x.max_abs_x(),
        config.amplitudes_dy.len()
    );
    finish(out_dir, config, &summary)
}

fn pushover(config: &RunConfig, protocol: Option<&Path>, out_dir: &Path) -> Result<(), CliError> {
    let x = match protocol {
        Some(path) => SignalSeries::load_csv(path).map_err(series_error)?,
        None => generate_protocol(&config.protocol()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let data = run_cyclic_pushover(&config.oracle()?, &x).map_err(|e| CliError::Numerical(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Config(e.to_string()))?;
    data.save_csv(out_dir.join("pushover.csv")).map_err(series_error)?;
    let forces = data.forces().expect("pushover records forces");
    let summary = format!(
        "material = {}\nsamples = {}\nmax_abs_x_mm = {}\nmax_abs_force_kn = {}\n",
        config.material,
        data.len(),
        data.max_abs_x(),
        forces.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    );
    finish(out_dir, config, &summary)
}

fn train_model(config: &RunConfig, data: &Path, out_dir: &Path) -> Result<(), CliError> {
    let series = SignalSeries::load_csv(data).map_err(|e| CliError::Config(format!("{}: {e}", data.display())))?;
    let start = Instant::now();
    let model = train(&series, config.m, config.lambda, &config.train_options())?;
    log::info!("trained in {:.3} s", start.elapsed().as_secs_f64());
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Config(e.to_string()))?;
    save_model(&model, out_dir.join("model.toml"))?;
    let summary = format!(
        "m = {}\nlambda = {}\nnrmse_train = {}\nnonzero_weights = {}\nlinear_weight = {}\nconstant = {}\n",
        model.m,
        model.lambda,
        model.nrmse_train,
        model.nonzero_weights(),
        model.linear_weight,
        model.constant
    );
    finish(out_dir, config, &summary)
}

fn simulate(
    config: &RunConfig,
    reference: Option<&Path>,
    transcript: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let frame = config.frame()?;
    let motion = config.motion()?;
    let opts = config.integration()?;
    let spec = config.brace_spec()?;
    let mut x_max_train = None;
    let mut brace: Box<dyn BraceProvider> = match &spec {
        BraceSpec::Oracle => Box::new(MaterialBrace::new(config.oracle()?)),
        BraceSpec::Model(path) => {
            let model = load_model(path)?;
            x_max_train = Some(model.x_max_train);
            Box::new(PiSession::new(model))
        }
        BraceSpec::Remote(addr) => {
            let transcript = transcript
                .map(Transcript::create)
                .transpose()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let client = RemoteBrace::connect(
                addr,
                ClientOptions {
                    timeout: config.client_timeout(),
                    transcript,
                },
            )?;
            Box::new(client)
        }
    };
    let start = Instant::now();
    let result = newmark_nlrha(&frame, &motion, brace.as_mut(), &opts);
    log::info!("simulated in {:.3} s", start.elapsed().as_secs_f64());
    drop(brace);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Config(e.to_string()))?;
    let h = match result {
        Ok(h) => h,
        Err(failure) => {
            failure.partial.save_csv(out_dir.join("response.partial.csv"))?;
            return Err(match (&spec, failure.error) {
                (BraceSpec::Remote(_), FrameError::ProviderFault(e)) => CliError::Coupling(e.to_string()),
                (_, e) => e.into(),
            });
        }
    };
    h.save_csv(out_dir.join("response.csv"))?;

    let mut summary = String::new();
    let residual = h.drift.last().copied().unwrap_or(0.0);
    let _ = write!(
        summary,
        "brace = {}\nscheme = {}\nsamples = {}\nperiod_s = {}\npeak_drift = {}\nresidual_drift = {}\npeak_brace_strain = {}\npeak_brace_force_kn = {}\n",
        config.brace,
        config.scheme,
        h.len(),
        frame.natural_period(),
        h.peak_drift(),
        residual,
        h.peak_brace_deformation() / frame.brace_length(),
        h.peak_brace_force()
    );
    if let Some(x_max) = x_max_train {
        let beyond = h.x_brace.iter().filter(|x| x.abs() > x_max).count();
        if beyond > 0 {
            log::warn!("{beyond} samples exceed the model's training range of {x_max} mm");
        }
        let _ = writeln!(summary, "samples_beyond_training_range = {beyond}");
    }
    if let Some(path) = reference {
        let r = ResponseHistory::load_csv(path)?;
        summary.push_str(&report_text(&compare_runs(&r, &h)?));
    }
    finish(out_dir, config, &summary)
}

fn report_text(r: &ComparisonReport) -> String {
    format!(
        "nrmse_drift = {}\nnrmse_force = {}\npeak_drift_reference = {}\npeak_drift_test = {}\npeak_drift_discrepancy = {}\n",
        r.nrmse_drift,
        r.nrmse_force,
        r.peak_drift_ref,
        r.peak_drift_test,
        r.peak_drift_discrepancy()
    )
}

fn serve(config: &RunConfig, model: &Path, transcript: Option<&Path>, out_dir: Option<&Path>) -> Result<(), CliError> {
    let trained = load_model(model)?;
    let mut opts = config.server_options();
    opts.transcript = transcript
        .map(Transcript::create)
        .transpose()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let server = ModelServer::bind(trained, &config.endpoint, opts)?;
    let stop = server.shutdown_handle();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
        .map_err(|e| CliError::Config(format!("cannot install signal handler: {e}")))?;
    let addr = server.local_addr().map_err(|e| CliError::Coupling(e.to_string()))?;
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    let stats = server.run()?;
    let summary = format!(
        "endpoint = {addr}\nsessions = {}\nfailed_sessions = {}\n",
        stats.sessions, stats.failed_sessions
    );
    match out_dir {
        Some(dir) => finish(dir, config, &summary),
        None => {
            print!("{summary}");
            Ok(())
        }
    }
}

fn compare(reference: &Path, test: &Path, out_dir: Option<&Path>) -> Result<(), CliError> {
    let r = ResponseHistory::load_csv(reference)?;
    let t = ResponseHistory::load_csv(test)?;
    let report = compare_runs(&r, &t).map_err(|e| match e {
        FrameError::LengthMismatch(..) | FrameError::SamplingMismatch(_) => CliError::Config(e.to_string()),
        e => e.into(),
    })?;
    let summary = report_text(&report);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(e.to_string()))?;
        write_file(&dir.join("summary.txt"), &summary)?;
    }
    print!("{summary}");
    Ok(())
}
