//! Deconvolution estimator of the regression function and exact moments of
//! the estimator under the calibrated model.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::design::FixedDesign;
use crate::error::{invalid, io_err, Result};
use crate::kernel::{KernelTable, TaperSpec};
use crate::noise::{ErrorDensity, NoiseKind};
use crate::quad::{breakpoints, integrate_with_breaks};

/// A regression function that can be pushed through the error law.
///
/// `kinks` and `support` are hints for quadrature; the defaults are always
/// correct but may be slower.
pub trait RegressionFn: Sync {
    fn eval(&self, x: f64) -> f64;
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Closed interval outside which the function vanishes, if any.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<F: Fn(f64) -> f64 + Sync> RegressionFn for F {
    fn eval(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Observations `Y_j` on a fixed design.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    design: Arc<FixedDesign>,
    responses: Vec<f64>,
}

impl RegressionSample {
    pub fn new(design: Arc<FixedDesign>, responses: Vec<f64>) -> Result<Self> {
        if responses.len() != design.len() {
            return Err(invalid(
                "responses",
                format!("expected {} values, found {}", design.len(), responses.len()),
            ));
        }
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(invalid("responses", format!("non-finite value at row {i}")));
        }
        Ok(Self { design, responses })
    }

    /// Reads a headed two-column `(w, Y)` CSV and checks `w` against `design`
    /// to within 1e-9 per row.
    pub fn read_csv(path: &Path, design: Arc<FixedDesign>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let (mut w, mut y) = (Vec::new(), Vec::new());
        for record in reader.deserialize::<(f64, f64)>() {
            let (wi, yi) = record?;
            w.push(wi);
            y.push(yi);
        }
        design.validate_points(&w, 1e-9)?;
        Self::new(design, y)
    }

    /// Reads a `(w, Y)` CSV on the regular design with `2n + 1` rows, inferring
    /// `n` from the row count.
    pub fn read_csv_regular(path: &Path, a_n: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let rows = reader.records().try_fold(0usize, |k, r| r.map(|_| k + 1))?;
        if rows < 3 || rows % 2 == 0 {
            return Err(invalid("input", format!("{} has {rows} data rows; the regular design needs 2n + 1 ≥ 3", path.display())));
        }
        Self::read_csv(path, Arc::new(FixedDesign::regular((rows - 1) / 2, a_n)?))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["w", "Y"])?;
        for (w, y) in self.design.points().iter().zip(&self.responses) {
            writer.serialize((w, y))?;
        }
        writer.flush().map_err(io_err(path))?;
        Ok(())
    }

    pub fn design(&self) -> &FixedDesign {
        &self.design
    }
    pub fn shared_design(&self) -> Arc<FixedDesign> {
        Arc::clone(&self.design)
    }
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Same design, responses multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { design: Arc::clone(&self.design), responses: self.responses.iter().map(|y| c * y).collect() }
    }
}

/// Empirical Fourier transform `Σ_j ω_j Y_j e^{itw_j}` of the calibrated
/// regression function.
pub fn phi_gamma_hat(sample: &RegressionSample, t: f64) -> Complex64 {
    let d = sample.design();
    d.points()
        .iter()
        .zip(d.weights())
        .zip(sample.responses())
        .map(|((&w, &om), &y)| Complex64::from_polar(om * y, t * w))
        .sum()
}

/// Values of `ĝ(·;h)` on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub h: f64,
    pub beta: f64,
}

/// `(1/h) Σ_j c_j K((w_j - x)/h; h)` at every `x` in `grid`.
pub fn kernel_sum(points: &[f64], coeffs: &[f64], grid: &[f64], table: &KernelTable) -> Result<Vec<f64>> {
    debug_assert_eq!(points.len(), coeffs.len());
    let h = table.h();
    check_reach(points, grid, table)?;
    Ok(grid
        .par_iter()
        .map(|&x| points.iter().zip(coeffs).map(|(&w, &c)| c * table.eval_unchecked((w - x) / h)).sum::<f64>() / h)
        .collect())
}

fn check_reach(points: &[f64], grid: &[f64], table: &KernelTable) -> Result<()> {
    let (Some(&lo), Some(&hi)) = (points.first(), points.last()) else { return Ok(()) };
    for &x in grid {
        for w in [lo, hi] {
            table.eval((w - x) / table.h())?;
        }
    }
    Ok(())
}

fn check_grid(design: &FixedDesign, grid: &[f64]) -> Result<()> {
    let (lo, hi) = (design.points()[0], design.half_span());
    match grid.iter().find(|&&x| !(x >= lo && x <= hi)) {
        Some(x) => Err(invalid("eval_grid", format!("point {x} lies outside the design span [{lo}, {hi}]"))),
        None => Ok(()),
    }
}

/// Kernel-sum form `ĝ(x;h) = (1/h) Σ_j ω_j Y_j K((w_j - x)/h; h)` with the
/// design weights `ω_j` (`1/(n·aₙ)` on the regular grid).
pub fn estimate_g(sample: &RegressionSample, h: f64, grid: &[f64], table: &KernelTable) -> Result<EstimateCurve> {
    check_table_bandwidth(h, table)?;
    let design = sample.design();
    check_grid(design, grid)?;
    let coeffs: Vec<f64> = design.weights().iter().zip(sample.responses()).map(|(w, y)| w * y).collect();
    let values = kernel_sum(design.points(), &coeffs, grid, table)?;
    Ok(EstimateCurve { grid: grid.to_vec(), values, h, beta: table.beta() })
}

pub(crate) fn check_table_bandwidth(h: f64, table: &KernelTable) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("bandwidth must be positive, got {h}")));
    }
    if (h - table.h()).abs() > 1e-12 * h {
        return Err(invalid("h", format!("kernel table was built for h = {}, not {h}", table.h())));
    }
    Ok(())
}

/// Fourier form `ĝ(x;h) = (1/2π) ∫ e^{-itx} Φ_k(ht) Φ̂_γ(t) / Φ_Δ(-t) dt` on a
/// regular design.
///
/// `Φ̂_γ` is evaluated on the frequency grid `t_k = 2πk/(N·δ)` by one FFT of
/// the zero-padded responses (`δ` the design step), and the frequency integral
/// is the trapezoid sum over that grid. The sum reproduces the kernel form up
/// to periodic copies of the kernel at distance `N·δ`, which is why the
/// padding is generous. Intended for tapers that vanish smoothly at the
/// cutoff.
pub fn estimate_g_fft(
    sample: &RegressionSample,
    h: f64,
    grid: &[f64],
    taper: &TaperSpec,
    density: &ErrorDensity,
) -> Result<EstimateCurve> {
    let design = sample.design();
    if !design.is_regular() {
        return Err(invalid("design", "the FFT route requires the regular design"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("bandwidth must be positive, got {h}")));
    }
    check_grid(design, grid)?;
    let n = design.n();
    let step = design.spacing();
    let len = (16 * (2 * n + 1)).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (i, &y) in sample.responses().iter().enumerate() {
        let j = i as i64 - n as i64;
        buf[j.rem_euclid(len as i64) as usize] = Complex64::new(y, 0.0);
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);

    let dt = 2.0 * PI / (len as f64 * step);
    let kmax = ((1.0 / (h * dt)).floor() as usize).min(len / 2 - 1);
    let terms: Vec<(f64, Complex64)> = (0..=kmax)
        .map(|k| {
            let t = k as f64 * dt;
            let phi_gamma = buf[k] * step;
            let factor = taper.phi_k(h * t) / density.charfn(t);
            let weight = if k == 0 { 0.5 } else { 1.0 };
            (t, phi_gamma * (weight * factor))
        })
        .collect();
    // Real responses give conjugate-symmetric Φ̂_γ, so the sum folds onto t ≥ 0.
    let values = grid
        .par_iter()
        .map(|&x| terms.iter().map(|&(t, z)| (z * Complex64::from_polar(1.0, -t * x)).re).sum::<f64>() * dt / PI)
        .collect();
    Ok(EstimateCurve { grid: grid.to_vec(), values, h, beta: density.beta() })
}

/// The calibrated model `Y_j = γ(w_j) + noise` with `γ(w) = E g(w + Δ)` and
/// `ν²(w) = Var g(w + Δ) + σ²`, evaluated by quadrature.
pub struct CalibratedModel<'a> {
    g: &'a dyn RegressionFn,
    density: ErrorDensity,
    sigma2: f64,
}

const ORACLE_TOL: f64 = 1e-9;

impl<'a> CalibratedModel<'a> {
    pub fn new(g: &'a dyn RegressionFn, density: ErrorDensity, sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(invalid("sigma2", format!("must be nonnegative, got {sigma2}")));
        }
        Ok(Self { g, density, sigma2 })
    }

    pub fn density(&self) -> &ErrorDensity {
        &self.density
    }

    fn delta_breaks(&self, w: f64, restrict_to_support: bool) -> Option<Vec<f64>> {
        let r = self.density.effective_support();
        let (mut lo, mut hi) = (-r, r);
        if restrict_to_support {
            if let Some((s_lo, s_hi)) = self.g.support() {
                lo = lo.max(s_lo - w);
                hi = hi.min(s_hi - w);
                if lo >= hi {
                    return None;
                }
            }
        }
        let interior = self.density.kinks().into_iter().chain(self.g.kinks().into_iter().map(|k| k - w));
        let interior: Vec<f64> = match self.g.support() {
            Some((s_lo, s_hi)) => interior.chain([s_lo - w, s_hi - w]).collect(),
            None => interior.collect(),
        };
        Some(breakpoints(lo, hi, interior))
    }

    /// `γ(w) = ∫ g(w + δ) f_Δ(δ) dδ`.
    pub fn gamma(&self, w: f64) -> Result<f64> {
        if self.density.kind() == NoiseKind::NoError {
            return Ok(self.g.eval(w));
        }
        let Some(breaks) = self.delta_breaks(w, true) else { return Ok(0.0) };
        integrate_with_breaks(|d| self.g.eval(w + d) * self.density.density_eval(d).unwrap_or(0.0), &breaks, ORACLE_TOL)
    }

    /// `ν²(w) = ∫ (g(w + δ) - γ(w))² f_Δ(δ) dδ + σ²`.
    pub fn nu2(&self, w: f64) -> Result<f64> {
        if self.density.kind() == NoiseKind::NoError {
            return Ok(self.sigma2);
        }
        let gamma = self.gamma(w)?;
        let breaks = self.delta_breaks(w, false).expect("unrestricted range is nonempty");
        let spread = integrate_with_breaks(
            |d| (self.g.eval(w + d) - gamma).powi(2) * self.density.density_eval(d).unwrap_or(0.0),
            &breaks,
            ORACLE_TOL,
        )?;
        Ok(spread.max(0.0) + self.sigma2)
    }

    /// `γ` and `ν²` at every design point.
    pub fn moments(&self, design: &FixedDesign) -> Result<DesignMoments> {
        let pairs = design
            .points()
            .par_iter()
            .map(|&w| Ok((self.gamma(w)?, self.nu2(w)?)))
            .collect::<Result<Vec<_>>>()?;
        let (gamma, nu2) = pairs.into_iter().unzip();
        Ok(DesignMoments { gamma, nu2 })
    }
}

/// Free-function form of [`CalibratedModel::gamma`].
pub fn oracle_gamma(g: &dyn RegressionFn, density: &ErrorDensity, w: f64) -> Result<f64> {
    CalibratedModel::new(g, *density, 0.0)?.gamma(w)
}

/// Free-function form of [`CalibratedModel::nu2`].
pub fn oracle_nu2(g: &dyn RegressionFn, density: &ErrorDensity, sigma2: f64, w: f64) -> Result<f64> {
    CalibratedModel::new(g, *density, sigma2)?.nu2(w)
}

/// Calibrated mean and variance at the design points.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMoments {
    pub gamma: Vec<f64>,
    pub nu2: Vec<f64>,
}

impl DesignMoments {
    /// `E ĝ(x;h) = (1/h) Σ_j ω_j γ(w_j) K((w_j - x)/h; h)` on `grid`.
    pub fn mean(&self, design: &FixedDesign, grid: &[f64], table: &KernelTable) -> Result<Vec<f64>> {
        check_grid(design, grid)?;
        let coeffs: Vec<f64> = design.weights().iter().zip(&self.gamma).map(|(w, g)| w * g).collect();
        kernel_sum(design.points(), &coeffs, grid, table)
    }

    /// `Var ĝ(x;h) = (1/h²) Σ_j ω_j² ν²(w_j) K((w_j - x)/h; h)²` on `grid`.
    pub fn variance(&self, design: &FixedDesign, grid: &[f64], table: &KernelTable) -> Result<Vec<f64>> {
        check_grid(design, grid)?;
        check_reach(design.points(), grid, table)?;
        let h = table.h();
        Ok(grid
            .par_iter()
            .map(|&x| {
                design
                    .points()
                    .iter()
                    .zip(design.weights())
                    .zip(&self.nu2)
                    .map(|((&w, &om), &v)| (om * table.eval_unchecked((w - x) / h)).powi(2) * v)
                    .sum::<f64>()
                    / (h * h)
            })
            .collect())
    }
}

/// Exact `E ĝ(x;h)` for one point.
pub fn oracle_mean(model: &CalibratedModel, design: &FixedDesign, table: &KernelTable, x: f64) -> Result<f64> {
    Ok(model.moments(design)?.mean(design, &[x], table)?[0])
}

/// Exact `Var ĝ(x;h)` for one point.
pub fn oracle_variance(model: &CalibratedModel, design: &FixedDesign, table: &KernelTable, x: f64) -> Result<f64> {
    Ok(model.moments(design)?.variance(design, &[x], table)?[0])
}
