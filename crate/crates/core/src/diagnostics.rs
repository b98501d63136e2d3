//! Numerical self-checks: fast paths against slow references.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::BandEngine;
use crate::design::FixedDesign;
use crate::error::Result;
use crate::kernel::{kernel_eval, KernelTable, TaperSpec};
use crate::noise::ErrorDensity;
use crate::quad::{breakpoints, integrate_with_breaks};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, worst: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: worst <= tolerance, worst, tolerance }
    }
}

/// Largest `|table - quadrature|` over `nodes` arguments drawn uniformly from
/// `[-reach, reach]`.
pub fn kernel_table_error(table: &KernelTable, spec: &TaperSpec, density: &ErrorDensity, nodes: usize, reach: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..nodes {
        let u = rng.random_range(-reach..reach);
        let fast = table.eval(u)?;
        let slow = kernel_eval(spec, density, u, table.h())?;
        worst = worst.max((fast - slow).abs());
    }
    Ok(worst)
}

/// Largest `|∫ cos(tx) f(x) dx - Φ(t)|` over `ts`.
pub fn charfn_error(density: &ErrorDensity, ts: &[f64]) -> Result<f64> {
    let r = density.effective_support();
    let breaks = breakpoints(-r, r, density.kinks());
    let mut worst: f64 = 0.0;
    for &t in ts {
        let ft = integrate_with_breaks(|x| (t * x).cos() * density.density_eval(x).unwrap_or(0.0), &breaks, 1e-10)?;
        worst = worst.max((ft - density.charfn(t)).abs());
    }
    Ok(worst)
}

/// Largest relative gap between the empirical variance of the baseline
/// proxy process over `draws` draws and its exact value, at `points` evenly
/// spread grid rows.
pub fn multiplier_variance_error(engine: &BandEngine, draws: usize, points: usize, seed: u64) -> f64 {
    let coeffs = engine.baseline_coeffs();
    let exact = engine.process_variance(&coeffs, None);
    let m = exact.len();
    let rows: Vec<usize> = (0..points).map(|i| if points == 1 { m / 2 } else { i * (m - 1) / (points - 1) }).collect();
    let values = engine.process_draws(&coeffs, None, &rows, draws, seed);
    rows.iter()
        .enumerate()
        .map(|(r, &i)| {
            let mean = values.iter().map(|v| v[r]).sum::<f64>() / draws as f64;
            let var = values.iter().map(|v| (v[r] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            (var / exact[i] - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// The oracle agreement suite run by `berkson selftest`.
pub fn run_selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let a_n = 0.5;
    let spec = TaperSpec::default();
    let laplace = ErrorDensity::laplace(1.0)?;
    let mixture = ErrorDensity::laplace_mixture(1.0, 0.2, 0.3)?;
    for (label, density) in [("laplace", &laplace), ("mixture", &mixture)] {
        for h in [0.1, 0.25, 0.5] {
            let table = KernelTable::with_defaults(&spec, density, h, a_n)?;
            let worst = kernel_table_error(&table, &spec, density, 32, 2.0 / (a_n * h), seed)?;
            out.push(CheckOutcome::new(format!("kernel table vs quadrature ({label}, h={h})"), worst, 1e-6));
        }
    }
    let ts: Vec<f64> = (0..=40).map(|i| -20.0 + i as f64).collect();
    for (label, density) in [("laplace", &laplace), ("mixture", &mixture)] {
        out.push(CheckOutcome::new(format!("characteristic function by quadrature ({label})"), charfn_error(density, &ts)?, 1e-6));
    }
    let design = Arc::new(FixedDesign::regular(100, 2.0 / 3.0)?);
    let density = ErrorDensity::laplace_with_sd(0.1)?;
    let table = Arc::new(KernelTable::with_defaults(&spec, &density, 0.05, design.a_n())?);
    let engine = BandEngine::for_interval(design, (-0.7, 0.6), table)?;
    out.push(CheckOutcome::new("multiplier process variance (20000 draws)", multiplier_variance_error(&engine, 20_000, 5, seed), 0.03));
    Ok(out)
}
