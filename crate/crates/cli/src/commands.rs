use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use berkson::bands::{make_eval_grid, NuSource};
use berkson::bandwidth::{lepski_select, undersmooth, BandwidthRule, LepskiConfig};
use berkson::diagnostics::run_selftest;
use berkson::estimator::{estimate_g, RegressionSample};
use berkson::kernel::{default_span, grid_len_for};
use berkson::simulation::{export_report, preset, preset_bandwidth, run_scenario_with, RunOptions, Scenario, PRESET_NAMES};
use berkson::{build_band, build_band_extension, BandRequest, ErrorDensity, KernelCache, KernelTable, SplitMask, TaperSpec};
use serde_json::json;

use crate::config::{CliError, CliResult, RunConfig};

pub struct Output {
    pub json: bool,
}

impl Output {
    fn summary(&self, value: serde_json::Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            println!("{}", text());
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Kernel bandwidth from the configured rule; Lepski runs on `sample`.
fn resolve_h(cfg: &RunConfig, sample: &RegressionSample, density: &ErrorDensity, taper: &TaperSpec) -> CliResult<f64> {
    match cfg.bandwidth_rule()? {
        BandwidthRule::Fixed { h } => Ok(cfg.units()?.to_kernel(h)),
        BandwidthRule::Preset { name } => {
            let (h, units) = preset_bandwidth(&name)?;
            Ok(units.to_kernel(h))
        }
        BandwidthRule::Lepski { c_l, m_bar, undersmooth: under } => {
            let d = sample.design();
            let config = LepskiConfig::for_sample(d.n(), d.a_n(), density.beta(), m_bar, c_l, cfg.interval())?;
            let cache = KernelCache::new();
            let factory = |h: f64| {
                let span = default_span(d.a_n(), h);
                cache.get_or_build(taper, density, h, grid_len_for(span), span)
            };
            let outcome = lepski_select(sample, &config, cfg.interval(), &factory)?;
            if outcome.hit_upper {
                eprintln!("warning: no bandwidth coarser than 2^-{} passed the Lepski comparisons", config.k_u);
            }
            Ok(if under { undersmooth(outcome.h, d.n())? } else { outcome.h })
        }
    }
}

fn load(cfg: &RunConfig) -> CliResult<(RegressionSample, ErrorDensity, TaperSpec)> {
    let density = cfg.density()?;
    let taper = cfg.taper()?;
    let sample = RegressionSample::read_csv_regular(cfg.require_input()?, cfg.a_n())?;
    Ok((sample, density, taper))
}

pub fn estimate(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let (sample, density, taper) = load(cfg)?;
    let h = resolve_h(cfg, &sample, &density, &taper)?;
    let d = sample.design();
    let grid = make_eval_grid(cfg.interval(), d.n(), d.a_n(), h)?;
    let table = KernelTable::with_defaults(&taper, &density, h, d.a_n())?;
    let curve = estimate_g(&sample, h, &grid.points, &table)?;
    let rows = curve.grid.iter().zip(&curve.values);
    match &cfg.output {
        Some(path) => {
            let mut w = csv::Writer::from_path(path).map_err(runtime)?;
            w.write_record(["x", "ghat"]).map_err(runtime)?;
            for (x, g) in rows {
                w.serialize((x, g)).map_err(runtime)?;
            }
            w.flush().map_err(runtime)?;
            out.summary(json!({"h": h, "points": curve.grid.len(), "spacing": grid.spacing, "output": path}), || {
                format!("wrote {} estimates (h = {h:.6}) to {}", curve.grid.len(), path.display())
            });
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            writeln!(lock, "x,ghat").map_err(runtime)?;
            for (x, g) in rows {
                writeln!(lock, "{x},{g}").map_err(runtime)?;
            }
        }
    }
    Ok(())
}

/// `band.csv` → `band.json`.
fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn band(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let output = cfg.output.clone().ok_or_else(|| CliError::missing("output"))?;
    let (sample, density, taper) = load(cfg)?;
    let h = resolve_h(cfg, &sample, &density, &taper)?;
    let request = BandRequest {
        interval: cfg.interval(),
        alpha: cfg.alpha.unwrap_or(0.05),
        draws: cfg.draws.unwrap_or(250),
        h,
        seed: cfg.seed(),
    };
    let result = if cfg.extension.unwrap_or(false) {
        let d = sample.design();
        let (d0, b0) = SplitMask::default_parameters(d.n(), d.a_n());
        build_band_extension(&sample, &request, &density, &taper, cfg.d_n.unwrap_or(d0), cfg.b_n.unwrap_or(b0), cfg.h_v)?
    } else {
        build_band(&sample, &request, &density, &taper, NuSource::Auto { h_v: cfg.h_v })?
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    result.write_csv(&output)?;
    let sidecar = sidecar_path(&output);
    result.write_sidecar(&sidecar)?;
    out.summary(
        json!({
            "quantile": result.quantile, "h": result.h, "alpha": result.alpha, "M": result.draws, "seed": result.seed,
            "spacing": result.spacing, "mean_width": result.mean_width(), "output": output, "sidecar": sidecar,
            "warnings": result.warnings,
        }),
        || {
            format!(
                "band on {} points: q = {:.4}, mean width {:.4}, h = {:.6}; wrote {} and {}",
                result.grid.len(),
                result.quantile,
                result.mean_width(),
                result.h,
                output.display(),
                sidecar.display()
            )
        },
    );
    Ok(())
}

fn load_scenario(spec: &str) -> CliResult<Scenario> {
    if let Some(s) = preset(spec) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::field("scenario", format!("`{spec}` is neither a preset ({}) nor a file", PRESET_NAMES.join(", "))));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::field("scenario", e))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::field("scenario", e))
}

pub fn simulate(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let spec = cfg.scenario.as_deref().ok_or_else(|| CliError::missing("scenario"))?;
    let dir = cfg.output.clone().ok_or_else(|| CliError::missing("output"))?;
    let mut scenario = load_scenario(spec)?;
    if let Some(r) = cfg.reps {
        scenario.reps = r;
    }
    if let Some(m) = cfg.draws {
        scenario.draws = m;
    }
    if let Some(s) = cfg.seed {
        scenario.seed = s;
    }
    if let Some(a) = cfg.alpha {
        scenario.alpha = a;
    }
    if let Some(i) = cfg.interval {
        scenario.interval = i;
    }
    if cfg.h.is_some() || cfg.bandwidth.is_some() {
        scenario.bandwidth = cfg.bandwidth_rule()?;
        scenario.units = cfg.units()?;
    } else if cfg.units.is_some() {
        scenario.units = cfg.units()?;
    }
    if cfg.taper.is_some() || cfg.flat_radius.is_some() {
        scenario.taper = cfg.taper()?;
    }
    if cfg.h_v.is_some() {
        scenario.h_v = cfg.h_v;
    }
    scenario.validate()?;
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
    let partial = dir.join("reps.csv");
    let report = run_scenario_with(&scenario, &RunOptions { partial_csv: Some(&partial), keep_representative: true })?;
    export_report(&report, &dir)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.summary(
        json!({
            "scenario": report.scenario.name, "reps": report.records.len(), "rejection_rate": report.rejection_rate,
            "mean_width": report.mean_width, "runtime_secs": report.runtime_secs, "output": dir,
        }),
        || {
            format!(
                "{}: rejection {:.1}% (±{:.1}), mean width {:.4} over {} reps in {:.1}s; wrote {}",
                report.scenario.name,
                100.0 * report.rejection_rate,
                100.0 * report.rejection_se(),
                report.mean_width,
                report.records.len(),
                report.runtime_secs,
                dir.display()
            )
        },
    );
    Ok(())
}

pub fn kernel_dump(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let density = cfg.density()?;
    let taper = cfg.taper()?;
    let h = match cfg.bandwidth_rule()? {
        BandwidthRule::Fixed { h } => cfg.units()?.to_kernel(h),
        BandwidthRule::Preset { name } => {
            let (h, units) = preset_bandwidth(&name)?;
            units.to_kernel(h)
        }
        BandwidthRule::Lepski { .. } => return Err(CliError::field("bandwidth", "kernel-dump needs a fixed or preset bandwidth")),
    };
    let table = Arc::new(KernelTable::with_defaults(&taper, &density, h, cfg.a_n())?);
    let grid = table.grid();
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "u,K")?;
        for (u, k) in grid.iter().zip(table.values()) {
            writeln!(w, "{u},{k}")?;
        }
        w.flush()
    };
    match &cfg.output {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?);
            write(&mut f).map_err(runtime)?;
            out.summary(json!({"h": h, "rows": grid.len(), "step": table.step(), "output": path}), || {
                format!("wrote {} kernel values (h = {h:.6}, step {:.3e}) to {}", grid.len(), table.step(), path.display())
            });
        }
        None => write(&mut std::io::stdout().lock()).map_err(runtime)?,
    }
    Ok(())
}

pub fn selftest(cfg: &RunConfig, out: &Output) -> CliResult<()> {
    let checks = run_selftest(cfg.seed())?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if out.json {
        println!("{}", serde_json::to_string(&checks).map_err(runtime)?);
    } else {
        for c in &checks {
            println!("{} {:<52} worst {:.3e} (tolerance {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.worst, c.tolerance);
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
