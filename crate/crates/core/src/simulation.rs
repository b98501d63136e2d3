//! Monte Carlo harness: bump signals, scenario definitions, repeated band
//! construction and coverage/width reporting.

use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{BandEngine, BandRequest, BandResult};
use crate::bandwidth::{lepski_select, table_preset, undersmooth, BandwidthRule, BandwidthUnits, LepskiConfig};
use crate::design::{FixedDesign, SplitMask};
use crate::error::{invalid, io_err, Result};
use crate::estimator::{RegressionFn, RegressionSample};
use crate::kernel::{default_span, grid_len_for, KernelCache, KernelTable, TaperShape, TaperSpec};
use crate::noise::{DensitySpec, ErrorDensity, SmoothnessClass};
use crate::seed::derive_seed;

/// Regression functions built from the bump `(1 - 4(x - c)²)⁵` on `|x - c| ≤ 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// One bump at 0.1.
    GA,
    /// Bumps at -0.4 and 0.3.
    GB,
    /// Sum of bumps at the given centres.
    Custom { centers: Vec<f64> },
}

fn bump(x: f64, c: f64) -> f64 {
    let u = x - c;
    if 2.0 * u.abs() <= 1.0 {
        (1.0 - 4.0 * u * u).powi(5)
    } else {
        0.0
    }
}

impl Signal {
    pub fn centers(&self) -> Vec<f64> {
        match self {
            Self::GA => vec![0.1],
            Self::GB => vec![-0.4, 0.3],
            Self::Custom { centers } => centers.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GA => "g_a",
            Self::GB => "g_b",
            Self::Custom { .. } => "custom",
        }
    }
}

/// `g(x)` for a signal.
pub fn signal_eval(signal: &Signal, x: f64) -> f64 {
    match signal {
        Signal::GA => bump(x, 0.1),
        Signal::GB => bump(x, -0.4) + bump(x, 0.3),
        Signal::Custom { centers } => centers.iter().map(|&c| bump(x, c)).sum(),
    }
}

impl RegressionFn for Signal {
    fn eval(&self, x: f64) -> f64 {
        signal_eval(self, x)
    }
    fn kinks(&self) -> Vec<f64> {
        self.centers().iter().flat_map(|c| [c - 0.5, c + 0.5]).collect()
    }
    fn support(&self) -> Option<(f64, f64)> {
        let c = self.centers();
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo - 0.5, hi + 0.5))
    }
}

/// Split-sample band settings; `None` fields take the defaults of
/// [`SplitMask::default_parameters`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec {
    #[serde(default)]
    pub d_n: Option<usize>,
    #[serde(default)]
    pub b_n: Option<f64>,
}

fn default_a_n() -> f64 {
    2.0 / 3.0
}
fn default_interval() -> (f64, f64) {
    (-0.7, 0.6)
}
fn default_alpha() -> f64 {
    0.05
}
fn default_reps() -> usize {
    500
}
fn default_draws() -> usize {
    250
}
fn default_taper() -> TaperSpec {
    TaperSpec { flat_radius: 0.5, shape: TaperShape::DampedCutoff }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub signal: Signal,
    pub n: usize,
    /// Standard deviation of the response noise `ε`.
    pub sigma: f64,
    pub density: DensitySpec,
    #[serde(default = "default_a_n")]
    pub a_n: f64,
    pub bandwidth: BandwidthRule,
    #[serde(default)]
    pub units: BandwidthUnits,
    #[serde(default = "default_interval")]
    pub interval: (f64, f64),
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_taper")]
    pub taper: TaperSpec,
    /// Use the split-sample band instead of the baseline band.
    #[serde(default)]
    pub extension: Option<ExtensionSpec>,
    /// Variance smoothing bandwidth; `(b - a)·n^{-1/5}` when absent.
    #[serde(default)]
    pub h_v: Option<f64>,
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 10] = [
    "ga-100-0.1",
    "ga-100-0.05",
    "ga-750-0.1",
    "ga-750-0.05",
    "gb-100-0.1",
    "gb-100-0.05",
    "gb-750-0.1",
    "gb-750-0.05",
    "ext-100",
    "ext-750",
];

/// Built-in scenarios: the bump signals with `σ = σ_δ` and tabulated
/// bandwidths, and the split-sample runs with the Laplace mixture.
pub fn preset(name: &str) -> Option<Scenario> {
    let base = |signal: Signal, n: usize, sigma: f64, density: DensitySpec, h: f64| Scenario {
        name: name.to_string(),
        signal,
        n,
        sigma,
        density,
        a_n: default_a_n(),
        bandwidth: BandwidthRule::Fixed { h },
        units: BandwidthUnits::Cycles,
        interval: default_interval(),
        reps: default_reps(),
        draws: default_draws(),
        alpha: default_alpha(),
        seed: 0,
        taper: default_taper(),
        extension: None,
        h_v: None,
    };
    let mixture = DensitySpec {
        kind: "laplace_mixture".into(),
        a: None,
        sigma_delta: Some(0.05),
        lambda: Some(0.2),
        mu: Some(0.3),
    };
    match name {
        "ext-100" => Some(Scenario { extension: Some(ExtensionSpec::default()), ..base(Signal::GA, 100, 0.1, mixture, 0.59) }),
        "ext-750" => Some(Scenario { extension: Some(ExtensionSpec::default()), ..base(Signal::GA, 750, 0.1, mixture, 0.32) }),
        _ => {
            let mut parts = name.split('-');
            let signal = match parts.next()? {
                "ga" => Signal::GA,
                "gb" => Signal::GB,
                _ => return None,
            };
            let n: usize = parts.next()?.parse().ok()?;
            let sigma: f64 = parts.next()?.parse().ok()?;
            if parts.next().is_some() {
                return None;
            }
            let h = table_preset(signal.name(), n, sigma)?;
            Some(base(signal, n, sigma, DensitySpec::laplace_sd(sigma), h))
        }
    }
}

/// Tabulated bandwidth of a named preset, in the preset's units.
pub fn preset_bandwidth(name: &str) -> Result<(f64, BandwidthUnits)> {
    match preset(name) {
        Some(Scenario { bandwidth: BandwidthRule::Fixed { h }, units, .. }) => Ok((h, units)),
        _ => Err(invalid("bandwidth", format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")))),
    }
}

impl Scenario {
    /// Checks the scenario and returns the error law it describes.
    pub fn validate(&self) -> Result<ErrorDensity> {
        if self.n < 3 {
            return Err(invalid("n", format!("need n ≥ 3, got {}", self.n)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid("sigma", format!("must be non-negative, got {}", self.sigma)));
        }
        if !(self.a_n > 0.0 && self.a_n < 1.0) {
            return Err(invalid("a_n", format!("must lie in (0, 1), got {}", self.a_n)));
        }
        if self.reps == 0 {
            return Err(invalid("reps", "at least one repetition is required"));
        }
        if let Signal::Custom { centers } = &self.signal {
            if centers.is_empty() || centers.iter().any(|c| !c.is_finite()) {
                return Err(invalid("signal", "custom signals need finite centres"));
            }
        }
        self.taper.validate()?;
        let density = self.density.build()?;
        if self.extension.is_some() && density.smoothness_class() != SmoothnessClass::W {
            return Err(invalid("extension", "the split-sample band requires a class-W error law"));
        }
        if let BandwidthRule::Fixed { h } = self.bandwidth {
            let request = BandRequest { interval: self.interval, alpha: self.alpha, draws: self.draws, h: self.units.to_kernel(h), seed: self.seed };
            request.validate()?;
            let (lo, hi) = crate::bands::identifiable_range(self.a_n, request.h);
            if self.interval.0 < lo || self.interval.1 > hi {
                return Err(invalid("interval", format!("[{}, {}] exceeds the identifiable range [{lo:.4}, {hi:.4}]", self.interval.0, self.interval.1)));
            }
        } else {
            BandRequest { interval: self.interval, alpha: self.alpha, draws: self.draws, h: 1.0, seed: self.seed }.validate()?;
        }
        Ok(density)
    }

    /// Fixed kernel bandwidth, or `None` when it is chosen per sample.
    pub fn kernel_bandwidth(&self) -> Result<Option<f64>> {
        match &self.bandwidth {
            BandwidthRule::Fixed { h } => Ok(Some(self.units.to_kernel(*h))),
            BandwidthRule::Preset { name } => {
                let (h, units) = preset_bandwidth(name)?;
                Ok(Some(units.to_kernel(h)))
            }
            BandwidthRule::Lepski { .. } => Ok(None),
        }
    }

    /// The scenario with a preset bandwidth replaced by its value.
    pub fn resolved(&self) -> Result<Self> {
        match &self.bandwidth {
            BandwidthRule::Preset { name } => {
                let (h, units) = preset_bandwidth(name)?;
                Ok(Self { bandwidth: BandwidthRule::Fixed { h }, units, ..self.clone() })
            }
            _ => Ok(self.clone()),
        }
    }
}

/// `Y_j = g(w_j + Δ_j) + σ·ε_j` with Gaussian `ε`, all drawn from one stream
/// seeded by `rep_seed`.
pub fn generate_sample(scenario: &Scenario, design: Arc<FixedDesign>, density: &ErrorDensity, rep_seed: u64) -> RegressionSample {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let deltas = density.sample_with(&mut rng, design.len());
    let y = design
        .points()
        .iter()
        .zip(deltas)
        .map(|(&w, d)| {
            let noise = if scenario.sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                scenario.sigma * z
            } else {
                0.0
            };
            signal_eval(&scenario.signal, w + d) + noise
        })
        .collect();
    RegressionSample::new(design, y).expect("responses match the design")
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub covered: bool,
    /// Mean of `upper - lower` over the grid.
    pub width: f64,
    pub quantile: f64,
    /// `sup |ĝ - g|` over the grid.
    pub sup_error: f64,
    /// Kernel bandwidth used.
    pub h: f64,
}

/// Aggregate of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    /// Fraction of repetitions whose band misses `g` somewhere on the grid.
    pub rejection_rate: f64,
    pub mean_width: f64,
    pub records: Vec<RepRecord>,
    pub runtime_secs: f64,
    pub grid_spacing: f64,
    pub warnings: Vec<String>,
    /// Band of the first repetition.
    pub representative: Option<BandResult>,
}

impl ScenarioReport {
    fn aggregate(scenario: Scenario, mut records: Vec<RepRecord>, runtime_secs: f64, grid_spacing: f64, warnings: Vec<String>, representative: Option<BandResult>) -> Self {
        records.sort_by_key(|r| r.rep);
        let reps = records.len();
        let (rejection_rate, mean_width) = if reps == 0 {
            (0.0, 0.0)
        } else {
            (
                records.iter().filter(|r| !r.covered).count() as f64 / reps as f64,
                records.iter().map(|r| r.width).sum::<f64>() / reps as f64,
            )
        };
        Self { scenario, rejection_rate, mean_width, records, runtime_secs, grid_spacing, warnings, representative }
    }

    /// Binomial standard error of the rejection rate.
    pub fn rejection_se(&self) -> f64 {
        let r = self.records.len().max(1) as f64;
        (self.rejection_rate * (1.0 - self.rejection_rate) / r).sqrt()
    }
}

const REP_HEADER: [&str; 7] = ["rep", "seed", "covered", "width", "quantile", "sup_error", "h"];

/// Per-repetition rows written as they complete.
struct RepSink {
    writer: Mutex<csv::Writer<fs::File>>,
}

impl RepSink {
    fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        writer.write_record(REP_HEADER)?;
        writer.flush().map_err(io_err(path))?;
        Ok(Self { writer: Mutex::new(writer) })
    }

    fn push(&self, record: &RepRecord) -> Result<()> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        w.serialize(record)?;
        w.flush().map_err(|e| crate::error::Error::Io { context: "flushing repetition rows".into(), source: e })
    }
}

/// Options for [`run_scenario_with`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Stream per-repetition rows to this CSV as they finish.
    pub partial_csv: Option<&'a Path>,
    /// Keep the band of repetition 0 in the report.
    pub keep_representative: bool,
}

/// Runs every repetition of `scenario` in parallel.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport> {
    run_scenario_with(scenario, &RunOptions { partial_csv: None, keep_representative: true })
}

pub fn run_scenario_with(scenario: &Scenario, options: &RunOptions) -> Result<ScenarioReport> {
    let start = Instant::now();
    let scenario = scenario.resolved()?;
    let density = scenario.validate()?;
    let design = Arc::new(FixedDesign::regular(scenario.n, scenario.a_n)?);
    let sink = options.partial_csv.map(RepSink::create).transpose()?;
    let cache = KernelCache::new();
    let table_for = |h: f64| -> Result<Arc<KernelTable>> {
        let span = default_span(scenario.a_n, h);
        cache.get_or_build(&scenario.taper, &density, h, grid_len_for(span), span)
    };
    let fixed_engine = match scenario.kernel_bandwidth()? {
        Some(h) => Some(BandEngine::for_interval(Arc::clone(&design), scenario.interval, table_for(h)?)?),
        None => None,
    };
    let split = match scenario.extension {
        Some(ext) => {
            let (d0, b0) = SplitMask::default_parameters(scenario.n, scenario.a_n);
            Some(SplitMask::build(&design, ext.d_n.unwrap_or(d0), ext.b_n.unwrap_or(b0))?)
        }
        None => None,
    };
    let g_on = |grid: &[f64]| grid.iter().map(|&x| signal_eval(&scenario.signal, x)).collect::<Vec<_>>();
    let fixed_truth = fixed_engine.as_ref().map(|e| g_on(&e.grid().points));

    let run_rep = |rep: usize| -> Result<(RepRecord, BandResult)> {
        let data_seed = derive_seed(scenario.seed, 2 * rep as u64);
        let boot_seed = derive_seed(scenario.seed, 2 * rep as u64 + 1);
        let sample = generate_sample(&scenario, Arc::clone(&design), &density, data_seed);
        let local;
        let (engine, truth) = match (&fixed_engine, &fixed_truth) {
            (Some(e), Some(t)) => (e, t.clone()),
            _ => {
                let BandwidthRule::Lepski { c_l, m_bar, undersmooth: under } = scenario.bandwidth else {
                    unreachable!("only the Lepski rule leaves the bandwidth open")
                };
                let config = LepskiConfig::for_sample(scenario.n, scenario.a_n, density.beta(), m_bar, c_l, scenario.interval)?;
                let picked = lepski_select(&sample, &config, scenario.interval, &table_for)?.h;
                let h = if under { undersmooth(picked, scenario.n)? } else { picked };
                local = BandEngine::for_interval(Arc::clone(&design), scenario.interval, table_for(h)?)?;
                (&local, g_on(&local.grid().points))
            }
        };
        let request = BandRequest { interval: scenario.interval, alpha: scenario.alpha, draws: scenario.draws, h: engine.h(), seed: boot_seed };
        let band = match &split {
            Some(s) => engine.band_extension_auto(&sample, &request, s, scenario.h_v)?,
            None => engine.band_auto(&sample, &request, scenario.h_v)?,
        };
        let covered = band.lower.iter().zip(&band.upper).zip(&truth).all(|((l, u), g)| l <= g && g <= u);
        let sup_error = band.ghat.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let record = RepRecord { rep, seed: data_seed, covered, width: band.mean_width(), quantile: band.quantile, sup_error, h: band.h };
        if let Some(s) = &sink {
            s.push(&record)?;
        }
        Ok((record, band))
    };

    let outcomes: Vec<(RepRecord, Option<BandResult>)> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| {
            let (record, band) = run_rep(rep)?;
            Ok((record, (rep == 0 && options.keep_representative).then_some(band)))
        })
        .collect::<Result<_>>()?;

    let mut warnings: Vec<String> = Vec::new();
    let mut representative = None;
    let mut records = Vec::with_capacity(outcomes.len());
    for (record, band) in outcomes {
        if let Some(b) = band {
            representative = Some(b);
        }
        records.push(record);
    }
    if let Some(b) = &representative {
        warnings.extend(b.warnings.iter().cloned());
    }
    let spacing = fixed_engine.as_ref().map_or(0.0, |e| e.grid().spacing);
    Ok(ScenarioReport::aggregate(scenario, records, start.elapsed().as_secs_f64(), spacing, warnings, representative))
}

/// Writes `reps.csv` (one row per repetition), `summary.json` (the whole
/// report) and, when present, `band.csv` with `x, g, ghat, lower, upper` for
/// the representative band.
pub fn export_report(report: &ScenarioReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let reps = dir.join("reps.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&reps)?;
    w.write_record(REP_HEADER)?;
    for r in &report.records {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&reps))?;

    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(report)?).map_err(io_err(&summary))?;

    if let Some(b) = &report.representative {
        let path = dir.join("band.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "g", "ghat", "lower", "upper"])?;
        for i in 0..b.grid.len() {
            w.serialize((b.grid[i], signal_eval(&report.scenario.signal, b.grid[i]), b.ghat[i], b.lower[i], b.upper[i]))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a report written by [`export_report`].
pub fn read_summary(dir: &Path) -> Result<ScenarioReport> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}
