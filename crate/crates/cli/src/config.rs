use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use ddhs_core::coupling::ServerOptions;
use ddhs_core::frame::{defaults, FrameModel, GroundMotion, IntegrationOptions, MotionFormat, Scheme, SyntheticMotion};
use ddhs_core::frame::{load_ground_motion, AccelUnit};
use ddhs_core::materials::{BraceProperties, LoadingProtocol, OracleMaterial, DEFAULT_AMPLITUDE_MULTIPLES};
use ddhs_core::pisindy::TrainOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of a run, as read from `--config` and overridden by flags.
/// Written back verbatim as `run_config.toml` next to each run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Frame
    pub period: f64,
    pub frame_stiffness: f64,
    pub damping_ratio: f64,
    pub storey_height: f64,
    pub bay_width: f64,

    // Brace material
    pub material: String,
    pub k1: f64,
    pub dy: f64,
    pub b: f64,
    pub r0: f64,
    pub cr1: f64,
    pub cr2: f64,

    // Protocol; amplitudes are multiples of dy
    pub amplitudes_dy: Vec<f64>,
    pub points_per_branch: usize,

    // Training
    pub m: usize,
    pub lambda: f64,
    pub standardize: bool,

    // Integration
    pub scheme: String,
    pub substeps: usize,
    pub newton_tol: f64,
    pub max_newton_iterations: usize,

    // Motion; the synthetic record is used when motion_file is unset
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_file: Option<PathBuf>,
    pub motion_format: String,
    pub motion_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_unit: Option<String>,
    pub synthetic_seed: u64,
    pub synthetic_duration: f64,
    pub synthetic_dt: f64,
    pub synthetic_pga_g: f64,
    pub synthetic_components: usize,

    // Brace provider and coupling
    pub brace: String,
    pub endpoint: String,
    pub timeout_s: f64,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sessions: Option<usize>,
    pub idle_timeout_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let props = BraceProperties::default();
        let motion = SyntheticMotion::default();
        let integration = IntegrationOptions::default();
        Self {
            period: defaults::PERIOD,
            frame_stiffness: defaults::FRAME_STIFFNESS,
            damping_ratio: defaults::DAMPING_RATIO,
            storey_height: defaults::STOREY_HEIGHT,
            bay_width: defaults::BAY_WIDTH,
            material: "smooth".into(),
            k1: props.k1,
            dy: props.dy,
            b: props.b,
            r0: props.r0,
            cr1: props.cr1,
            cr2: props.cr2,
            amplitudes_dy: DEFAULT_AMPLITUDE_MULTIPLES.to_vec(),
            points_per_branch: LoadingProtocol::default_for(1.0).points_per_branch,
            m: 50,
            lambda: 0.1,
            standardize: false,
            scheme: integration.scheme.as_str().into(),
            substeps: integration.substeps,
            newton_tol: integration.newton_tol,
            max_newton_iterations: integration.max_newton_iterations,
            motion_file: None,
            motion_format: "csv2col".into(),
            motion_scale: 1.0,
            motion_unit: None,
            synthetic_seed: motion.seed,
            synthetic_duration: motion.duration,
            synthetic_dt: motion.dt,
            synthetic_pga_g: motion.pga_g,
            synthetic_components: motion.components,
            brace: "oracle".into(),
            endpoint: "127.0.0.1:7878".into(),
            timeout_s: 30.0,
            workers: 1,
            max_sessions: None,
            idle_timeout_s: 300.0,
        }
    }
}

/// Command-line overrides; each flag mirrors the config key of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long, help_heading = "Frame")]
    period: Option<f64>,
    #[arg(long, help_heading = "Frame")]
    frame_stiffness: Option<f64>,
    #[arg(long, help_heading = "Frame")]
    damping_ratio: Option<f64>,
    #[arg(long, help_heading = "Frame")]
    storey_height: Option<f64>,
    #[arg(long, help_heading = "Frame")]
    bay_width: Option<f64>,

    /// `smooth` or `bilinear`
    #[arg(long, help_heading = "Material")]
    material: Option<String>,
    #[arg(long, help_heading = "Material")]
    k1: Option<f64>,
    #[arg(long, help_heading = "Material")]
    dy: Option<f64>,
    #[arg(long, help_heading = "Material")]
    b: Option<f64>,
    #[arg(long, help_heading = "Material")]
    r0: Option<f64>,
    #[arg(long, help_heading = "Material")]
    cr1: Option<f64>,
    #[arg(long, help_heading = "Material")]
    cr2: Option<f64>,

    /// Comma-separated cycle amplitudes in multiples of dy
    #[arg(long, value_delimiter = ',', num_args = 1.., help_heading = "Protocol")]
    amplitudes_dy: Option<Vec<f64>>,
    #[arg(long, help_heading = "Protocol")]
    points_per_branch: Option<usize>,

    #[arg(long, help_heading = "Training")]
    m: Option<usize>,
    #[arg(long, help_heading = "Training")]
    lambda: Option<f64>,
    #[arg(long, help_heading = "Training")]
    standardize: Option<bool>,

    /// `explicit` or `average-acceleration`
    #[arg(long, help_heading = "Integration")]
    scheme: Option<String>,
    #[arg(long, help_heading = "Integration")]
    substeps: Option<usize>,
    #[arg(long, help_heading = "Integration")]
    newton_tol: Option<f64>,
    #[arg(long, help_heading = "Integration")]
    max_newton_iterations: Option<usize>,

    #[arg(long, help_heading = "Motion")]
    motion_file: Option<PathBuf>,
    /// `csv2col` or `peer_at2`
    #[arg(long, help_heading = "Motion")]
    motion_format: Option<String>,
    #[arg(long, help_heading = "Motion")]
    motion_scale: Option<f64>,
    #[arg(long, help_heading = "Motion")]
    motion_unit: Option<String>,
    #[arg(long, help_heading = "Motion")]
    synthetic_seed: Option<u64>,
    #[arg(long, help_heading = "Motion")]
    synthetic_duration: Option<f64>,
    #[arg(long, help_heading = "Motion")]
    synthetic_dt: Option<f64>,
    #[arg(long, help_heading = "Motion")]
    synthetic_pga_g: Option<f64>,
    #[arg(long, help_heading = "Motion")]
    synthetic_components: Option<usize>,

    /// `oracle`, `model:<path>` or `remote:<host:port>`
    #[arg(long, help_heading = "Coupling")]
    brace: Option<String>,
    #[arg(long, help_heading = "Coupling")]
    endpoint: Option<String>,
    #[arg(long, help_heading = "Coupling")]
    timeout_s: Option<f64>,
    #[arg(long, help_heading = "Coupling")]
    workers: Option<usize>,
    #[arg(long, help_heading = "Coupling")]
    max_sessions: Option<usize>,
    #[arg(long, help_heading = "Coupling")]
    idle_timeout_s: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file of run settings; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut table = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let flags = toml::Table::try_from(&self.overrides).map_err(|e| CliError::Config(e.to_string()))?;
        table.extend(flags);
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Where the brace force comes from in a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum BraceSpec {
    Oracle,
    Model(PathBuf),
    Remote(String),
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.scheme()?;
        self.brace_spec()?;
        self.oracle()?;
        self.motion_format()?;
        self.motion_unit()?;
        if self.amplitudes_dy.is_empty() {
            return Err(bad("amplitudes_dy is empty"));
        }
        if self.m == 0 {
            return Err(bad("m must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(bad(format!("lambda = {}", self.lambda)));
        }
        if self.substeps == 0 {
            return Err(bad("substeps must be at least 1"));
        }
        if self.workers == 0 {
            return Err(bad("workers must be at least 1"));
        }
        if !(self.timeout_s > 0.0 && self.idle_timeout_s > 0.0) {
            return Err(bad("timeouts must be positive"));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn brace_properties(&self) -> BraceProperties {
        BraceProperties {
            k1: self.k1,
            dy: self.dy,
            b: self.b,
            r0: self.r0,
            cr1: self.cr1,
            cr2: self.cr2,
        }
    }

    pub fn oracle(&self) -> Result<OracleMaterial, CliError> {
        let props = self.brace_properties();
        let m = match self.material.as_str() {
            "smooth" => props.smooth().map(OracleMaterial::Smooth),
            "bilinear" => props.bilinear().map(OracleMaterial::Bilinear),
            other => return Err(bad(format!("unknown material `{other}`"))),
        };
        m.map_err(|e| bad(e.to_string()))
    }

    pub fn protocol(&self) -> LoadingProtocol {
        LoadingProtocol {
            cycle_amplitudes: self.amplitudes_dy.iter().map(|k| k * self.dy).collect(),
            points_per_branch: self.points_per_branch,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let mut opts = TrainOptions::default();
        opts.lasso.standardize = self.standardize;
        opts
    }

    pub fn scheme(&self) -> Result<Scheme, CliError> {
        self.scheme.parse().map_err(|e: ddhs_core::frame::FrameError| bad(e.to_string()))
    }

    pub fn integration(&self) -> Result<IntegrationOptions, CliError> {
        Ok(IntegrationOptions {
            scheme: self.scheme()?,
            substeps: self.substeps,
            newton_tol: self.newton_tol,
            max_newton_iterations: self.max_newton_iterations,
            ..IntegrationOptions::default()
        })
    }

    /// The frame is calibrated against the configured brace stiffness `k1`
    /// whatever provider supplies the brace force, so reference and
    /// substituted runs share one structure.
    pub fn frame(&self) -> Result<FrameModel, CliError> {
        FrameModel::calibrated(
            self.period,
            self.frame_stiffness,
            self.damping_ratio,
            self.storey_height,
            self.bay_width,
            self.k1,
        )
        .map_err(|e| bad(e.to_string()))
    }

    fn motion_format(&self) -> Result<MotionFormat, CliError> {
        self.motion_format.parse().map_err(|e: ddhs_core::frame::FrameError| bad(e.to_string()))
    }

    fn motion_unit(&self) -> Result<Option<AccelUnit>, CliError> {
        self.motion_unit
            .as_deref()
            .map(|u| u.parse().map_err(|e: ddhs_core::frame::FrameError| bad(e.to_string())))
            .transpose()
    }

    pub fn motion(&self) -> Result<GroundMotion, CliError> {
        let m = match &self.motion_file {
            Some(path) => load_ground_motion(path, self.motion_format()?, self.motion_scale, self.motion_unit()?),
            None => SyntheticMotion {
                seed: self.synthetic_seed,
                duration: self.synthetic_duration,
                dt: self.synthetic_dt,
                pga_g: self.synthetic_pga_g,
                components: self.synthetic_components,
            }
            .generate()
            .and_then(|m| GroundMotion::new(m.dt(), m.accelerations(), AccelUnit::MmPerS2, self.motion_scale)),
        };
        m.map_err(|e| bad(e.to_string()))
    }

    pub fn brace_spec(&self) -> Result<BraceSpec, CliError> {
        match self.brace.split_once(':') {
            None if self.brace == "oracle" => Ok(BraceSpec::Oracle),
            Some(("model", path)) if !path.is_empty() => Ok(BraceSpec::Model(PathBuf::from(path))),
            Some(("remote", addr)) if !addr.is_empty() => Ok(BraceSpec::Remote(addr.to_string())),
            _ => Err(bad(format!(
                "brace must be `oracle`, `model:<path>` or `remote:<host:port>`, got `{}`",
                self.brace
            ))),
        }
    }

    pub fn client_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn server_options(&self) -> ServerOptions {
        ServerOptions {
            workers: self.workers,
            max_sessions: self.max_sessions,
            idle_timeout: Duration::from_secs_f64(self.idle_timeout_s),
            transcript: None,
        }
    }
}

/// Writes `run_config.toml` and `summary.txt` into `dir`, creating it.
pub fn write_run_record(dir: &Path, config: &RunConfig, summary: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| bad(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("run_config.toml"), &config.to_toml_string())?;
    write_file(&dir.join("summary.txt"), summary)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| bad(format!("{}: {e}", path.display())))
}
