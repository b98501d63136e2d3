use std::path::{Path, PathBuf};

use berkson::bandwidth::{BandwidthRule, BandwidthUnits};
use berkson::{DensitySpec, ErrorDensity, TaperShape, TaperSpec};
use clap::Args;
use serde::Deserialize;

/// A failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration (exit code 2).
    Config(String),
    /// Anything that went wrong while running (exit code 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }

    pub fn missing(field: &str) -> Self {
        Self::Config(format!("missing required field `{field}`"))
    }

    pub fn field(field: &str, reason: impl std::fmt::Display) -> Self {
        Self::Config(format!("invalid `{field}`: {reason}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<berkson::Error> for CliError {
    fn from(e: berkson::Error) -> Self {
        match e {
            berkson::Error::InvalidParameter { .. } => Self::Config(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
    Ok((parse(a)?, parse(b)?))
}

/// Settings shared by the config file and the command line. Command-line
/// values override file values.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV with columns `w, Y`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file (CSV) or directory (simulate).
    #[arg(long, alias = "out")]
    #[serde(alias = "out")]
    pub output: Option<PathBuf>,
    /// Error law: laplace, laplace_mixture or none.
    #[arg(long)]
    pub density: Option<String>,
    /// Standard deviation of the (component) Laplace law.
    #[arg(long)]
    pub sigma_delta: Option<f64>,
    /// Laplace rate; overrides --sigma-delta.
    #[arg(long = "rate")]
    #[serde(alias = "rate")]
    pub a: Option<f64>,
    /// Mixture weight of the shifted components.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Mixture shift.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Design parameter; points are j/(n·a_n).
    #[arg(long)]
    pub a_n: Option<f64>,
    /// Bandwidth, shorthand for --bandwidth fixed:<h>.
    #[arg(long)]
    pub h: Option<f64>,
    /// fixed:<value>, preset:<scenario> or lepski.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Convention for fixed bandwidths: angular (default) or cycles.
    #[arg(long)]
    pub units: Option<String>,
    /// Interval of interest `a,b`.
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    pub interval: Option<(f64, f64)>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap draws.
    #[arg(long = "M", visible_alias = "bootstrap")]
    #[serde(rename = "M", alias = "bootstrap")]
    pub draws: Option<usize>,
    /// Monte Carlo repetitions.
    #[arg(long)]
    #[serde(alias = "R")]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Taper profile: smooth_poly, damped_cutoff or smooth_damped.
    #[arg(long)]
    pub taper: Option<String>,
    #[arg(long)]
    pub flat_radius: Option<f64>,
    /// Use the split-sample band.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub extension: Option<bool>,
    #[arg(long)]
    pub d_n: Option<usize>,
    #[arg(long)]
    pub b_n: Option<f64>,
    /// Variance smoothing bandwidth.
    #[arg(long)]
    pub h_v: Option<f64>,
    /// Preset name or scenario file (simulate).
    #[arg(long)]
    pub scenario: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::field("config", format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::field("config", e))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlaid(self, top: RunConfig) -> Self {
        let base = self;
        overlay!(
            base, top, input, output, density, sigma_delta, a, lambda, mu, a_n, h, bandwidth, units, interval, alpha, draws, reps,
            seed, taper, flat_radius, extension, d_n, b_n, h_v, scenario
        )
    }

    pub fn a_n(&self) -> f64 {
        self.a_n.unwrap_or(2.0 / 3.0)
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval.unwrap_or((-0.7, 0.6))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require_input(&self) -> CliResult<&Path> {
        self.input.as_deref().ok_or_else(|| CliError::missing("input"))
    }

    pub fn density(&self) -> CliResult<ErrorDensity> {
        let kind = self.density.clone().ok_or_else(|| CliError::missing("density"))?;
        let spec = DensitySpec { kind, a: self.a, sigma_delta: self.sigma_delta, lambda: self.lambda, mu: self.mu };
        Ok(spec.build()?)
    }

    pub fn taper(&self) -> CliResult<TaperSpec> {
        let shape = match self.taper.as_deref().unwrap_or("smooth_poly") {
            "smooth_poly" => TaperShape::SmoothPoly,
            "damped_cutoff" => TaperShape::DampedCutoff,
            "smooth_damped" => TaperShape::SmoothDamped,
            other => return Err(CliError::field("taper", format!("unknown taper `{other}` (smooth_poly, damped_cutoff, smooth_damped)"))),
        };
        Ok(TaperSpec::new(self.flat_radius.unwrap_or(0.5), shape)?)
    }

    pub fn units(&self) -> CliResult<BandwidthUnits> {
        match self.units.as_deref().unwrap_or("angular") {
            "angular" => Ok(BandwidthUnits::Angular),
            "cycles" => Ok(BandwidthUnits::Cycles),
            other => Err(CliError::field("units", format!("unknown units `{other}` (angular, cycles)"))),
        }
    }

    /// The bandwidth rule from `h` or `bandwidth`; exactly one must be set.
    pub fn bandwidth_rule(&self) -> CliResult<BandwidthRule> {
        match (self.h, &self.bandwidth) {
            (Some(_), Some(_)) => Err(CliError::field("bandwidth", "give either `h` or `bandwidth`, not both")),
            (Some(h), None) if h.is_finite() && h > 0.0 => Ok(BandwidthRule::Fixed { h }),
            (Some(h), None) => Err(CliError::field("h", format!("must be positive, got {h}"))),
            (None, Some(rule)) => Ok(rule.parse()?),
            (None, None) => Err(CliError::missing("h")),
        }
    }
}
