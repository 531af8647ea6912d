//! `topoloc` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O failure,
//! 4 internal error. Results go to stdout or the `--out` file, diagnostics
//! to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hmm::TransitionParams;
use crate::obsmodel::ObsParams;
use crate::sim::replay::{generate_log, parse_log, score_replay, write_log};
use crate::sim::{grid_csv, run_grid, FilterConfig, GridSpec, NoiseModel, SimConfig};
use crate::transport::{eemd, GroundMetric, Mapping, MappingPrior, SimplexDist};
use crate::vsm::{BeliefTransfer, LmsConfig, SensorModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "topoloc", version, about = "Lane-level topological localization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Topology-estimation accuracy over the P_M x P_E x K_sigma grid.
    Grid {
        /// TOML settings file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tracks an observation log and scores localization.
    Replay {
        log: PathBuf,
        #[arg(long)]
        map_lanes: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON summary destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail on the first malformed record instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Extended EMD between two distributions given as comma lists.
    Eemd {
        #[arg(allow_hyphen_values = true)]
        a: String,
        #[arg(allow_hyphen_values = true)]
        b: String,
        /// Prior file, one mapping per line: `prob i0 i1 ...`. Defaults to
        /// even left/right alignment.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Writes a synthetic observation log with ground truth.
    GenLog {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        lanes: usize,
        #[arg(long, default_value_t = 1.0)]
        p_map: f64,
        #[arg(long, default_value_t = 1.0)]
        p_emit: f64,
        #[arg(long, default_value_t = 1.0)]
        k_sigma: f64,
        #[arg(long, default_value_t = 1000)]
        timesteps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flat settings file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub p_map: Vec<f64>,
    pub p_emit: Vec<f64>,
    pub k_sigma: Vec<f64>,
    pub timesteps: usize,
    pub seed: u64,
    pub true_lanes: usize,
    pub min_lanes: usize,
    pub max_lanes: usize,
    pub lane_width: f64,
    pub noise_line_sigma: f64,
    pub noise_heading_sigma: f64,
    pub noise_vehicle_sigma: f64,
    pub line_detect_prob: f64,
    pub vehicle_rate: f64,
    pub vehicle_range: f64,
    pub stay: f64,
    pub switch: f64,
    pub kappa: usize,
    pub t_active: f64,
    pub transfer: String,
    pub line_sigma: f64,
    pub heading_sigma: f64,
    pub vehicle_sigma: f64,
    pub outlier_floor: f64,
    pub overlap_length: f64,
    pub ratio_threshold: f64,
    pub vote_factor: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let grid = GridSpec::default();
        let sim = SimConfig::default();
        let filter = FilterConfig::default();
        let obs = filter.sensor.params;
        Self {
            p_map: grid.p_map,
            p_emit: grid.p_emit,
            k_sigma: grid.k_sigma,
            timesteps: sim.timesteps,
            seed: sim.seed,
            true_lanes: sim.true_lanes,
            min_lanes: *filter.universe.first().expect("non-empty"),
            max_lanes: *filter.universe.last().expect("non-empty"),
            lane_width: filter.sensor.lane_width,
            noise_line_sigma: sim.noise.line_sigma,
            noise_heading_sigma: sim.noise.heading_sigma,
            noise_vehicle_sigma: sim.noise.vehicle_sigma,
            line_detect_prob: sim.line_detect_prob,
            vehicle_rate: sim.vehicle_rate,
            vehicle_range: sim.vehicle_range,
            stay: filter.transition.stay,
            switch: filter.transition.switch,
            kappa: filter.lms.kappa,
            t_active: filter.lms.t_active,
            transfer: "eemd".into(),
            line_sigma: obs.line_sigma,
            heading_sigma: obs.heading_sigma,
            vehicle_sigma: obs.vehicle_sigma,
            outlier_floor: obs.outlier_floor,
            overlap_length: obs.overlap_length,
            ratio_threshold: filter.ratio_threshold,
            vote_factor: filter.vote_factor,
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            p_map: self.p_map.clone(),
            p_emit: self.p_emit.clone(),
            k_sigma: self.k_sigma.clone(),
        }
    }

    pub fn filter(&self) -> crate::Result<FilterConfig> {
        let transfer = match self.transfer.as_str() {
            "eemd" => BeliefTransfer::Eemd,
            "uniform" => BeliefTransfer::Baseline(crate::transport::BaselineStrategy::Uniform),
            "left" => BeliefTransfer::Baseline(crate::transport::BaselineStrategy::LeftAlign),
            "right" => BeliefTransfer::Baseline(crate::transport::BaselineStrategy::RightAlign),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "transfer must be eemd, uniform, left or right, got {other:?}"
                )))
            }
        };
        if self.min_lanes == 0 || self.min_lanes > self.max_lanes {
            return Err(Error::InvalidParameter("need 1 <= min_lanes <= max_lanes".into()));
        }
        let cfg = FilterConfig {
            universe: (self.min_lanes..=self.max_lanes).collect(),
            transition: TransitionParams::new(self.stay, self.switch)?,
            lms: LmsConfig {
                kappa: self.kappa,
                t_active: self.t_active,
                transfer,
            },
            sensor: SensorModel {
                lane_width: self.lane_width,
                params: ObsParams {
                    line_sigma: self.line_sigma,
                    heading_sigma: self.heading_sigma,
                    vehicle_sigma: self.vehicle_sigma,
                    outlier_floor: self.outlier_floor,
                    overlap_length: self.overlap_length,
                },
            },
            ratio_threshold: self.ratio_threshold,
            vote_factor: self.vote_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sim(&self) -> crate::Result<SimConfig> {
        let cfg = SimConfig {
            p_map: self.p_map.first().copied().unwrap_or(1.0),
            p_emit: self.p_emit.first().copied().unwrap_or(1.0),
            k_sigma: self.k_sigma.first().copied().unwrap_or(1.0),
            noise: NoiseModel {
                line_sigma: self.noise_line_sigma,
                heading_sigma: self.noise_heading_sigma,
                vehicle_sigma: self.noise_vehicle_sigma,
            },
            true_lanes: self.true_lanes,
            alternatives: (self.min_lanes..=self.max_lanes).collect(),
            lane_width: self.lane_width,
            line_detect_prob: self.line_detect_prob,
            vehicle_rate: self.vehicle_rate,
            vehicle_range: self.vehicle_range,
            overlap_length: self.overlap_length,
            timesteps: self.timesteps,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

/// Invalid input is a usage error; anything else escaping the library is
/// internal.
fn classify(e: Error) -> CliError {
    let code = match e {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::NotNormalized(_)
        | Error::StateOutOfRange { .. } => EXIT_USAGE,
        Error::ZeroEvidence | Error::EmptyModelSet(_) | Error::Solver(_) => EXIT_INTERNAL,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn load_settings(path: Option<&Path>) -> Result<Settings, CliError> {
    match path {
        None => Ok(Settings::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            Settings::from_toml(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: Option<String>,
    seed: Option<u64>,
    outputs: Vec<String>,
    version: &'a str,
    wall_clock_s: f64,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(
    command: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    started: Instant,
) -> Result<(), CliError> {
    let m = RunManifest {
        command,
        config: config.map(|p| p.display().to_string()),
        seed,
        outputs: vec![out.display().to_string()],
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| CliError {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    })?;
    write_file(&manifest_path(out), &(text + "\n"))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => write_stdout(text),
    }
}

fn write_stdout(text: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| CliError {
            code: EXIT_IO,
            message: format!("stdout: {e}"),
        })
}

fn cmd_grid(config: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let started = Instant::now();
    let mut settings = load_settings(config)?;
    if let Some(s) = seed {
        settings.seed = s;
    }
    let filter = settings.filter().map_err(classify)?;
    let sim = settings.sim().map_err(classify)?;
    let cells = run_grid(&settings.grid(), &sim, &filter).map_err(classify)?;
    emit(out, &grid_csv(&cells))?;
    if let Some(p) = out {
        write_manifest("grid", config, Some(settings.seed), p, started)?;
    }
    Ok(())
}

fn cmd_replay(
    log: &Path,
    map_lanes: usize,
    config: Option<&Path>,
    out: Option<&Path>,
    strict: bool,
) -> Result<(), CliError> {
    let started = Instant::now();
    let filter = load_settings(config)?.filter().map_err(classify)?;
    if !filter.universe.contains(&map_lanes) {
        return Err(CliError::usage(format!(
            "--map-lanes {map_lanes} is outside the model universe"
        )));
    }
    let text = fs::read_to_string(log).map_err(|e| CliError::io(log, e))?;
    let (records, issues) =
        parse_log(&text, strict).map_err(|e| CliError::usage(format!("{}: {e}", log.display())))?;
    for issue in &issues {
        eprintln!("{}:{}: skipped: {}", log.display(), issue.line, issue.message);
    }
    let result = score_replay(&records, map_lanes, &filter).map_err(classify)?;
    let json = serde_json::json!({
        "map_lanes": result.map_lanes,
        "timesteps": result.summary.timesteps,
        "accuracy": result.summary.localization_accuracy,
        "missing_obs_fraction": result.summary.missing_obs_fraction,
        "topology_accuracy": result.summary.topology_accuracy,
        "discrepancy_fraction": result.summary.discrepancy_fraction,
        "discrepancy_events": result.discrepancy_events,
        "skipped_records": issues,
    });
    let text = serde_json::to_string_pretty(&json).expect("serializable") + "\n";
    emit(out, &text)?;
    if let Some(p) = out {
        write_manifest("replay", config, None, p, started)?;
    }
    Ok(())
}

/// Parses `"0.2,0.3,0.5"`; the values must already sum to 1.
pub fn parse_dist(text: &str) -> Result<SimplexDist, CliError> {
    let weights = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::usage(format!("bad number {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    SimplexDist::new(weights).map_err(|e| CliError::usage(e.to_string()))
}

/// Parses prior lines `prob i0 i1 ...`; `#` starts a comment.
pub fn parse_prior(text: &str) -> Result<MappingPrior, CliError> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::usage(format!("prior line {}: {m}", n + 1));
        let mut fields = line.split_whitespace();
        let prob: f64 = fields
            .next()
            .expect("non-empty")
            .parse()
            .map_err(|e| bad(format!("{e}")))?;
        let targets = fields
            .map(|f| f.parse::<usize>().map_err(|e| bad(format!("{e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mapping = Mapping::new(targets).map_err(|e| bad(e.to_string()))?;
        entries.push((mapping, prob));
    }
    MappingPrior::new(entries).map_err(|e| CliError::usage(e.to_string()))
}

/// At least nine significant digits.
pub fn format_value(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.9e}")
    } else {
        format!("{v:.9}")
    }
}

fn cmd_eemd(a: &str, b: &str, prior: Option<&Path>) -> Result<(), CliError> {
    let p = parse_dist(a)?;
    let q = parse_dist(b)?;
    let n = p.dim().max(q.dim());
    let prior = match prior {
        Some(path) => parse_prior(&fs::read_to_string(path).map_err(|e| CliError::io(path, e))?)?,
        None => MappingPrior::left_right(p.dim().min(q.dim()), n).map_err(classify)?,
    };
    let value = eemd(&p, &q, &prior, &GroundMetric::unit(n)).map_err(classify)?;
    write_stdout(&format!("{}\n", format_value(value)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_log(
    out: &Path,
    config: Option<&Path>,
    lanes: usize,
    p_map: f64,
    p_emit: f64,
    k_sigma: f64,
    timesteps: usize,
    seed: u64,
) -> Result<(), CliError> {
    let started = Instant::now();
    let mut settings = load_settings(config)?;
    settings.true_lanes = lanes;
    settings.p_map = vec![p_map];
    settings.p_emit = vec![p_emit];
    settings.k_sigma = vec![k_sigma];
    settings.timesteps = timesteps;
    settings.seed = seed;
    let filter = settings.filter().map_err(classify)?;
    let sim = settings.sim().map_err(classify)?;
    let records = generate_log(&sim, &filter).map_err(classify)?;
    write_file(out, &write_log(&records).map_err(classify)?)?;
    write_manifest("gen-log", config, Some(seed), out, started)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("TOPOLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("TOPOLOC_THREADS={value:?} is not a count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError {
                code: EXIT_INTERNAL,
                message: e.to_string(),
            })?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Grid { config, out, seed } => cmd_grid(config.as_deref(), out.as_deref(), seed),
        Command::Replay {
            log,
            map_lanes,
            config,
            out,
            strict,
        } => cmd_replay(&log, map_lanes, config.as_deref(), out.as_deref(), strict),
        Command::Eemd { a, b, prior } => cmd_eemd(&a, &b, prior.as_deref()),
        Command::GenLog {
            out,
            config,
            lanes,
            p_map,
            p_emit,
            k_sigma,
            timesteps,
            seed,
        } => cmd_gen_log(&out, config.as_deref(), lanes, p_map, p_emit, k_sigma, timesteps, seed),
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main_exit_code() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("topoloc: {}", e.message);
            e.code
        }
    }
}
