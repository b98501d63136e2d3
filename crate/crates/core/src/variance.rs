//! Difference-based estimates of the calibrated noise level: a global
//! `σ̂²` and a locally smoothed standard-deviation curve `ν̂`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::RegressionSample;

/// Smallest admissible floor for `ν̂`.
pub const MIN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub value: f64,
    /// Set when all differences vanish and `value` was replaced by machine epsilon.
    pub degenerate: bool,
}

/// `σ̂² = (1/(4n)) Σ_{j=-n}^{n-1} (Y_{j+1} - Y_j)²`.
pub fn estimate_sigma2(sample: &RegressionSample) -> Result<SigmaEstimate> {
    let y = sample.responses();
    if sample.design().n() < 2 {
        return Err(invalid("n", "the difference estimator needs n ≥ 2"));
    }
    Ok(mean_half_square_difference(y.windows(2).map(|p| (p[0], p[1]))))
}

fn mean_half_square_difference(pairs: impl Iterator<Item = (f64, f64)>) -> SigmaEstimate {
    let (mut sum, mut count) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += 0.5 * (b - a).powi(2);
        count += 1;
    }
    let value = if count == 0 { 0.0 } else { sum / count as f64 };
    if value > 0.0 {
        SigmaEstimate { value, degenerate: false }
    } else {
        SigmaEstimate { value: f64::EPSILON, degenerate: true }
    }
}

/// Default smoothing bandwidth `(b - a)·n^{-1/5}`.
pub fn default_h_v(interval: (f64, f64), n: usize) -> f64 {
    (interval.1 - interval.0) * (n as f64).powf(-0.2)
}

/// `ν̂(x) = sqrt(max(Σ_i K_v(m_i - x) r_i / Σ_i K_v(m_i - x), floor²))`, with
/// pseudo-residuals `r_i = (Y_{s_{i+1}} - Y_{s_i})²/2` placed at the midpoints
/// `m_i` of consecutive retained design points and `K_v` the Epanechnikov
/// weight of bandwidth `h_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    midpoints: Vec<f64>,
    residuals: Vec<f64>,
    h_v: f64,
    floor: f64,
    degenerate: bool,
}

impl VarianceCurve {
    /// A flat curve `ν̂ ≡ value`.
    pub fn constant(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid("nu", format!("constant must be positive, got {value}")));
        }
        Ok(Self { midpoints: vec![0.0], residuals: vec![value * value], h_v: f64::INFINITY, floor: value, degenerate: false })
    }

    pub fn h_v(&self) -> f64 {
        self.h_v
    }
    pub fn floor(&self) -> f64 {
        self.floor
    }
    /// True when the underlying `σ̂` was degenerate and the floor is the minimum.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Local average of the pseudo-residuals, before flooring.
    pub fn raw(&self, x: f64) -> Result<f64> {
        if self.h_v.is_infinite() {
            return Ok(self.residuals[0]);
        }
        let lo = self.midpoints.partition_point(|&m| m <= x - self.h_v);
        let hi = self.midpoints.partition_point(|&m| m < x + self.h_v);
        let (mut num, mut den) = (0.0, 0.0);
        for (m, r) in self.midpoints[lo..hi].iter().zip(&self.residuals[lo..hi]) {
            let u = (m - x) / self.h_v;
            let k = 1.0 - u * u;
            num += k * r;
            den += k;
        }
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::EmptyWindow { x, bandwidth: self.h_v })
        }
    }

    /// `ν̂(x)`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.raw(x)?.max(self.floor * self.floor).sqrt())
    }

    pub fn eval_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// `ν̂` at `x` moved into the range of the pseudo-residual midpoints.
    pub fn eval_clamped(&self, x: f64) -> Result<f64> {
        let (lo, hi) = (self.midpoints[0], self.midpoints[self.midpoints.len() - 1]);
        self.eval(x.clamp(lo, hi))
    }
}

/// Fits `ν̂` on the design points selected by `mask` (storage positions,
/// ascending; all points when `None`).
pub fn estimate_nu(
    sample: &RegressionSample,
    h_v: f64,
    interval: (f64, f64),
    mask: Option<&[usize]>,
) -> Result<VarianceCurve> {
    let design = sample.design();
    let (a, b) = interval;
    if !(a <= b) {
        return Err(invalid("interval", format!("lower end {a} exceeds upper end {b}")));
    }
    if a < design.points()[0] || b > design.half_span() {
        return Err(invalid("interval", format!("[{a}, {b}] leaves the design span")));
    }
    let all: Vec<usize>;
    let slots = match mask {
        Some(m) => m,
        None => {
            all = (0..design.len()).collect();
            &all
        }
    };
    if slots.len() < 2 {
        return Err(invalid("mask", "at least two design points are needed"));
    }
    if slots.windows(2).any(|p| p[1] <= p[0]) || slots[slots.len() - 1] >= design.len() {
        return Err(invalid("mask", "storage positions must be ascending and in range"));
    }
    let w = design.points();
    let min_gap = slots.windows(2).map(|p| w[p[1]] - w[p[0]]).fold(f64::INFINITY, f64::min);
    if !(h_v > min_gap) {
        return Err(invalid("h_v", format!("must exceed the point spacing {min_gap}, got {h_v}")));
    }
    let y = sample.responses();
    let midpoints = slots.windows(2).map(|p| 0.5 * (w[p[0]] + w[p[1]])).collect();
    let residuals = slots.windows(2).map(|p| 0.5 * (y[p[1]] - y[p[0]]).powi(2)).collect();
    let sigma = mean_half_square_difference(slots.windows(2).map(|p| (y[p[0]], y[p[1]])));
    let floor = if sigma.degenerate { MIN_FLOOR } else { (0.5 * sigma.value.sqrt()).max(MIN_FLOOR) };
    let curve = VarianceCurve { midpoints, residuals, h_v, floor, degenerate: sigma.degenerate };
    curve.raw(a)?;
    curve.raw(b)?;
    Ok(curve)
}
