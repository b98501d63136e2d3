//! Simultaneous confidence bands from the Gaussian multiplier bootstrap.
//!
//! The proxy process on an evaluation grid `x_1..x_m` is
//! `G(x_i) = r_i · Σ_j c_j Z_j K((w_j - x_i)/h; h)` with i.i.d. standard normal
//! `Z_j`. The baseline band uses `c_j = √(n·aₙ·h^{1+2β})·ω_j/h` and `r_i = 1`
//! (on the regular design this is `h^β/√(n·aₙ·h)`); the split-sample band
//! reweights by the held-out variance estimate. The band is
//! `ĝ(x) ± q̂·ν̂(x)/(√(n·aₙ)·h^{1/2+β})` with `q̂` the bootstrap quantile of
//! `max_i |G(x_i)|`.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{FixedDesign, SplitMask};
use crate::error::{invalid, io_err, Result};
use crate::estimator::{check_table_bandwidth, RegressionSample};
use crate::kernel::{KernelTable, TaperSpec};
use crate::noise::{ErrorDensity, SmoothnessClass};
use crate::seed::derive_seed;
use crate::variance::{default_h_v, estimate_nu, VarianceCurve};

/// Parameters of one band construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRequest {
    pub interval: (f64, f64),
    pub alpha: f64,
    /// Bootstrap draws `M`.
    pub draws: usize,
    pub h: f64,
    pub seed: u64,
}

/// Draw counts below this trigger a warning.
pub const MIN_PRODUCTION_DRAWS: usize = 100;

impl BandRequest {
    /// Checks the request and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let (a, b) = self.interval;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(invalid("interval", format!("need finite a ≤ b, got [{a}, {b}]")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.draws == 0 {
            return Err(invalid("M", "at least one bootstrap draw is required"));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(invalid("h", format!("bandwidth must be positive, got {}", self.h)));
        }
        let mut warnings = Vec::new();
        if self.draws < MIN_PRODUCTION_DRAWS {
            warnings.push(format!("M = {} is below {MIN_PRODUCTION_DRAWS}; the quantile will be noisy", self.draws));
        }
        Ok(warnings)
    }
}

/// Interval on which estimation is permitted: `[-1/aₙ + h, 1/aₙ - h]`.
pub fn identifiable_range(a_n: f64, h: f64) -> (f64, f64) {
    (-1.0 / a_n + h, 1.0 / a_n - h)
}

/// Largest admissible grid spacing `h^{1/2}/(n·aₙ^{1/2})`.
pub fn grid_spacing_bound(n: usize, a_n: f64, h: f64) -> f64 {
    h.sqrt() / (n as f64 * a_n.sqrt())
}

/// Uniform evaluation grid including both interval ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub points: Vec<f64>,
    pub spacing: f64,
    pub bound: f64,
}

/// Finest uniform grid on `interval` with spacing below the bound.
pub fn make_eval_grid(interval: (f64, f64), n: usize, a_n: f64, h: f64) -> Result<EvalGrid> {
    make_eval_grid_refined(interval, n, a_n, h, 1)
}

/// As [`make_eval_grid`] with the spacing further divided by `refine`.
pub fn make_eval_grid_refined(interval: (f64, f64), n: usize, a_n: f64, h: f64, refine: usize) -> Result<EvalGrid> {
    let (a, b) = interval;
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(invalid("interval", format!("need finite a ≤ b, got [{a}, {b}]")));
    }
    if !(h > 0.0) || n == 0 || !(a_n > 0.0 && a_n < 1.0) || refine == 0 {
        return Err(invalid("h", "grid needs h > 0, n ≥ 1, aₙ in (0, 1) and refine ≥ 1"));
    }
    let (lo, hi) = identifiable_range(a_n, h);
    if a < lo || b > hi {
        return Err(invalid(
            "interval",
            format!("[{a}, {b}] exceeds the identifiable range [{lo:.6}, {hi:.6}] for aₙ = {a_n}, h = {h}"),
        ));
    }
    let bound = grid_spacing_bound(n, a_n, h);
    if a == b {
        return Ok(EvalGrid { points: vec![a], spacing: 0.0, bound });
    }
    let steps = ((b - a) / bound).ceil() as usize * refine;
    let spacing = (b - a) / steps as f64;
    let points = (0..=steps).map(|i| if i == steps { b } else { a + i as f64 * spacing }).collect();
    Ok(EvalGrid { points, spacing, bound })
}

/// `⌈M·level⌉`-th order statistic of `sups` (clamped to `1..=M`).
pub fn quantile(sups: &[f64], level: f64) -> f64 {
    assert!(!sups.is_empty(), "quantile of an empty sample");
    let mut sorted = sups.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let rank = ((m as f64 * level - 1e-9).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Kernel matrix `K((w_j - x_i)/h; h)` for one design, grid and bandwidth,
/// reused across estimates and bootstrap draws.
#[derive(Debug, Clone)]
pub struct BandEngine {
    design: Arc<FixedDesign>,
    grid: EvalGrid,
    table: Arc<KernelTable>,
    kmat: Array2<f64>,
}

/// Draws per matrix product when simulating the proxy process.
const DRAW_BLOCK: usize = 32;

impl BandEngine {
    pub fn new(design: Arc<FixedDesign>, grid: EvalGrid, table: Arc<KernelTable>) -> Result<Self> {
        let h = table.h();
        let w = design.points();
        for &x in [grid.points[0], grid.points[grid.points.len() - 1]].iter() {
            for &wj in [w[0], w[w.len() - 1]].iter() {
                table.eval((wj - x) / h)?;
            }
        }
        let mut flat = vec![0.0; grid.points.len() * w.len()];
        flat.par_chunks_mut(w.len()).zip(grid.points.par_iter()).for_each(|(row, &x)| {
            for (k, &wj) in row.iter_mut().zip(w) {
                *k = table.eval_unchecked((wj - x) / h);
            }
        });
        let kmat = Array2::from_shape_vec((grid.points.len(), w.len()), flat)
            .map_err(|e| invalid("grid", e.to_string()))?;
        Ok(Self { design, grid, table, kmat })
    }

    /// Engine on the Theorem-style grid of `interval` for this design and table.
    pub fn for_interval(design: Arc<FixedDesign>, interval: (f64, f64), table: Arc<KernelTable>) -> Result<Self> {
        let grid = make_eval_grid(interval, design.n(), design.a_n(), table.h())?;
        Self::new(design, grid, table)
    }

    pub fn grid(&self) -> &EvalGrid {
        &self.grid
    }
    pub fn design(&self) -> &FixedDesign {
        &self.design
    }
    pub fn table(&self) -> &KernelTable {
        &self.table
    }
    pub fn h(&self) -> f64 {
        self.table.h()
    }
    pub fn beta(&self) -> f64 {
        self.table.beta()
    }

    /// `(1/h) Σ_j c_j K_ij` on the grid.
    pub fn kernel_sum(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = ndarray::ArrayView1::from(coeffs);
        (self.kmat.dot(&c) / self.h()).to_vec()
    }

    /// `√(n·aₙ·h^{1+2β})/h`, the factor turning quadrature weights into
    /// process coefficients.
    pub fn process_scale(&self) -> f64 {
        let (n, a_n, h, beta) = (self.design.n() as f64, self.design.a_n(), self.h(), self.beta());
        (n * a_n * h.powf(1.0 + 2.0 * beta)).sqrt() / h
    }

    /// `1/(√(n·aₙ)·h^{1/2+β})`, the factor turning `q̂·ν̂` into a half-width.
    pub fn half_width_scale(&self) -> f64 {
        let (n, a_n, h, beta) = (self.design.n() as f64, self.design.a_n(), self.h(), self.beta());
        1.0 / ((n * a_n).sqrt() * h.powf(0.5 + beta))
    }

    /// Coefficients of the baseline process: scaled design weights.
    pub fn baseline_coeffs(&self) -> Vec<f64> {
        let s = self.process_scale();
        self.design.weights().iter().map(|w| s * w).collect()
    }

    /// `max_i |r_i Σ_j c_j z_j K_ij|` for given multipliers.
    pub fn sup_from_multipliers(&self, coeffs: &[f64], row_scale: Option<&[f64]>, z: &[f64]) -> f64 {
        let cz: Vec<f64> = coeffs.iter().zip(z).map(|(c, z)| c * z).collect();
        let g = self.kmat.dot(&ndarray::ArrayView1::from(&cz));
        match row_scale {
            Some(r) => g.iter().zip(r).map(|(v, r)| (v * r).abs()).fold(0.0, f64::max),
            None => g.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }

    /// Pointwise variance `Σ_j (r_i c_j K_ij)²` of the proxy process.
    pub fn process_variance(&self, coeffs: &[f64], row_scale: Option<&[f64]>) -> Vec<f64> {
        self.kmat
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| {
                let v: f64 = row.iter().zip(coeffs).map(|(k, c)| (k * c).powi(2)).sum();
                v * row_scale.map_or(1.0, |r| r[i] * r[i])
            })
            .collect()
    }

    /// `draws` suprema; draw `k` uses multipliers seeded by `derive_seed(seed, k)`.
    pub fn multiplier_sups(&self, coeffs: &[f64], row_scale: Option<&[f64]>, draws: usize, seed: u64) -> Vec<f64> {
        let p = coeffs.len();
        let blocks: Vec<usize> = (0..draws).step_by(DRAW_BLOCK).collect();
        blocks
            .par_iter()
            .flat_map_iter(|&start| {
                let width = DRAW_BLOCK.min(draws - start);
                let mut zc = Array2::<f64>::zeros((p, width));
                for (col, k) in (start..start + width).enumerate() {
                    let z = multipliers(p, derive_seed(seed, k as u64));
                    for (j, zj) in z.into_iter().enumerate() {
                        zc[[j, col]] = coeffs[j] * zj;
                    }
                }
                let g = self.kmat.dot(&zc);
                (0..width)
                    .map(|col| {
                        let column = g.column(col);
                        match row_scale {
                            Some(r) => column.iter().zip(r).map(|(v, r)| (v * r).abs()).fold(0.0, f64::max),
                            None => column.iter().map(|v| v.abs()).fold(0.0, f64::max),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Values of the proxy process at grid rows `rows` for draws `0..draws`,
    /// with the same multipliers as [`Self::multiplier_sups`]; indexed
    /// `[draw][row]`.
    pub fn process_draws(&self, coeffs: &[f64], row_scale: Option<&[f64]>, rows: &[usize], draws: usize, seed: u64) -> Vec<Vec<f64>> {
        let sub = self.kmat.select(Axis(0), rows);
        (0..draws)
            .into_par_iter()
            .map(|k| {
                let z = multipliers(coeffs.len(), derive_seed(seed, k as u64));
                let cz: Vec<f64> = coeffs.iter().zip(&z).map(|(c, z)| c * z).collect();
                let g = sub.dot(&ndarray::ArrayView1::from(&cz));
                g.iter().zip(rows).map(|(v, &i)| v * row_scale.map_or(1.0, |r| r[i])).collect()
            })
            .collect()
    }

    /// Band `ĝ ± q̂·ν̂·half_width_scale` with estimate and process both built
    /// from per-point weights `weights` (zero excludes a point).
    pub fn band_weighted(
        &self,
        sample: &RegressionSample,
        weights: &[f64],
        request: &BandRequest,
        nu: &VarianceCurve,
    ) -> Result<BandResult> {
        let warnings = self.check_request(sample, request)?;
        let coeffs: Vec<f64> = weights.iter().zip(sample.responses()).map(|(w, y)| w * y).collect();
        let ghat = self.kernel_sum(&coeffs);
        let s = self.process_scale();
        let process: Vec<f64> = weights.iter().map(|w| s * w).collect();
        let sups = self.multiplier_sups(&process, None, request.draws, request.seed);
        let nuhat = nu.eval_many(&self.grid.points)?;
        Ok(self.assemble(ghat, nuhat, &sups, request, warnings))
    }

    /// Baseline band with the design weights.
    pub fn band(&self, sample: &RegressionSample, request: &BandRequest, nu: &VarianceCurve) -> Result<BandResult> {
        self.band_weighted(sample, &sample.design().weights().to_vec(), request, nu)
    }

    /// Baseline band with `ν̂` fitted on the full sample.
    pub fn band_auto(&self, sample: &RegressionSample, request: &BandRequest, h_v: Option<f64>) -> Result<BandResult> {
        let h_v = h_v.unwrap_or_else(|| default_h_v(request.interval, sample.design().n()));
        let nu = estimate_nu(sample, h_v, request.interval, None)?;
        self.band(sample, request, &nu)
    }

    /// Split-sample band: estimate from the kept points with gap weights,
    /// variance `ν̃` from the removed points only, and the reweighted process
    /// over kept points with `|j| ≤ n·bₙ`.
    pub fn band_extension(
        &self,
        sample: &RegressionSample,
        request: &BandRequest,
        split: &SplitMask,
        nu_tilde: &VarianceCurve,
    ) -> Result<BandResult> {
        let warnings = self.check_request(sample, request)?;
        let y = sample.responses();
        let coeffs: Vec<f64> = split.gaps().iter().zip(y).map(|(g, y)| g * y).collect();
        let ghat = self.kernel_sum(&coeffs);
        let w = sample.design().points();
        let s = self.process_scale();
        let mut process = vec![0.0; w.len()];
        for &i in split.truncated() {
            process[i] = s * nu_tilde.eval_clamped(w[i])? * split.gaps()[i];
        }
        let nuhat = nu_tilde.eval_many(&self.grid.points)?;
        let row_scale: Vec<f64> = nuhat.iter().map(|v| 1.0 / v).collect();
        let sups = self.multiplier_sups(&process, Some(&row_scale), request.draws, request.seed);
        Ok(self.assemble(ghat, nuhat, &sups, request, warnings))
    }

    /// Split-sample band with `ν̃` fitted on the removed points.
    pub fn band_extension_auto(
        &self,
        sample: &RegressionSample,
        request: &BandRequest,
        split: &SplitMask,
        h_v: Option<f64>,
    ) -> Result<BandResult> {
        let h_v = h_v.unwrap_or_else(|| default_h_v(request.interval, sample.design().n()));
        let nu = estimate_nu(sample, h_v, request.interval, Some(&split.removed_slots()))?;
        self.band_extension(sample, request, split, &nu)
    }

    fn check_request(&self, sample: &RegressionSample, request: &BandRequest) -> Result<Vec<String>> {
        let mut warnings = request.validate()?;
        check_table_bandwidth(request.h, &self.table)?;
        if sample.design() != self.design.as_ref() {
            return Err(invalid("design", "sample design differs from the engine design"));
        }
        let (g0, g1) = (self.grid.points[0], self.grid.points[self.grid.points.len() - 1]);
        if (g0 - request.interval.0).abs() > 1e-12 || (g1 - request.interval.1).abs() > 1e-12 {
            return Err(invalid("interval", "request interval differs from the engine grid"));
        }
        let d = &self.design;
        let ratio = 1.0 / (d.n() as f64 * d.a_n() * self.h().powf(1.0 + 2.0 * self.beta()));
        if ratio >= 1.0 {
            warnings.push(format!(
                "1/(n·aₙ·h^(1+2β)) = {ratio:.3e} ≥ 1: the bandwidth is small relative to the sample size"
            ));
        }
        Ok(warnings)
    }

    fn assemble(
        &self,
        ghat: Vec<f64>,
        nuhat: Vec<f64>,
        sups: &[f64],
        request: &BandRequest,
        warnings: Vec<String>,
    ) -> BandResult {
        let q = quantile(sups, 1.0 - request.alpha);
        let scale = self.half_width_scale();
        let half_width: Vec<f64> = nuhat.iter().map(|v| q * v * scale).collect();
        let lower = ghat.iter().zip(&half_width).map(|(g, w)| g - w).collect();
        let upper = ghat.iter().zip(&half_width).map(|(g, w)| g + w).collect();
        BandResult {
            grid: self.grid.points.clone(),
            spacing: self.grid.spacing,
            ghat,
            nuhat,
            quantile: q,
            half_width,
            lower,
            upper,
            h: self.h(),
            beta: self.beta(),
            alpha: request.alpha,
            draws: request.draws,
            seed: request.seed,
            warnings,
        }
    }
}

fn multipliers(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// One supremum of the proxy process with multipliers from `seed`.
pub fn multiplier_sup_draw(engine: &BandEngine, coeffs: &[f64], row_scale: Option<&[f64]>, seed: u64) -> f64 {
    engine.sup_from_multipliers(coeffs, row_scale, &multipliers(coeffs.len(), seed))
}

/// A confidence band on its evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub grid: Vec<f64>,
    pub spacing: f64,
    pub ghat: Vec<f64>,
    pub nuhat: Vec<f64>,
    pub quantile: f64,
    pub half_width: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub h: f64,
    pub beta: f64,
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Metadata written next to a band CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSidecar {
    pub quantile: f64,
    pub h: f64,
    pub alpha: f64,
    #[serde(rename = "M")]
    pub draws: usize,
    pub seed: u64,
    pub spacing: f64,
}

impl BandResult {
    /// Mean of `upper - lower` over the grid.
    pub fn mean_width(&self) -> f64 {
        2.0 * self.half_width.iter().sum::<f64>() / self.half_width.len() as f64
    }

    /// Whether `lower ≤ f ≤ upper` at every grid point.
    pub fn covers(&self, f: impl Fn(f64) -> f64) -> bool {
        self.grid.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&x, (l, u))| {
            let v = f(x);
            *l <= v && v <= *u
        })
    }

    pub fn sidecar(&self) -> BandSidecar {
        BandSidecar {
            quantile: self.quantile,
            h: self.h,
            alpha: self.alpha,
            draws: self.draws,
            seed: self.seed,
            spacing: self.spacing,
        }
    }

    /// Writes `x, ghat, nuhat, lower, upper`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "ghat", "nuhat", "lower", "upper"])?;
        for i in 0..self.grid.len() {
            w.serialize((self.grid[i], self.ghat[i], self.nuhat[i], self.lower[i], self.upper[i]))?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(path, text).map_err(io_err(path))
    }
}

/// How `ν̂` is obtained for a band.
#[derive(Debug, Clone, PartialEq)]
pub enum NuSource {
    /// Fit on the sample with bandwidth `h_v` (default `(b - a)·n^{-1/5}`).
    Auto { h_v: Option<f64> },
    Given(VarianceCurve),
}

/// One-shot baseline band: tabulates the kernel, builds the grid and runs
/// the bootstrap.
pub fn build_band(
    sample: &RegressionSample,
    request: &BandRequest,
    density: &ErrorDensity,
    taper: &TaperSpec,
    nu: NuSource,
) -> Result<BandResult> {
    request.validate()?;
    let design = sample.shared_design();
    let table = Arc::new(KernelTable::with_defaults(taper, density, request.h, design.a_n())?);
    let engine = BandEngine::for_interval(design, request.interval, table)?;
    match nu {
        NuSource::Auto { h_v } => engine.band_auto(sample, request, h_v),
        NuSource::Given(curve) => engine.band(sample, request, &curve),
    }
}

/// One-shot split-sample band for error laws of class W.
pub fn build_band_extension(
    sample: &RegressionSample,
    request: &BandRequest,
    density: &ErrorDensity,
    taper: &TaperSpec,
    d_n: usize,
    b_n: f64,
    h_v: Option<f64>,
) -> Result<BandResult> {
    if density.smoothness_class() != SmoothnessClass::W {
        return Err(invalid("density", "the split-sample band requires a class-W error law; use build_band"));
    }
    request.validate()?;
    let design = sample.shared_design();
    let split = SplitMask::build(&design, d_n, b_n)?;
    let table = Arc::new(KernelTable::with_defaults(taper, density, request.h, design.a_n())?);
    let engine = BandEngine::for_interval(design, request.interval, table)?;
    engine.band_extension_auto(sample, request, &split, h_v)
}
