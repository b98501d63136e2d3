//! Bandwidth choice: fixed values, tabulated presets, a Lepski-type rule on
//! the dyadic grid `h_k = 2^{-k}`, and the undersmoothing step `h/ln n`.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{grid_spacing_bound, identifiable_range, make_eval_grid};
use crate::error::{invalid, Error, Result};
use crate::estimator::{kernel_sum, RegressionSample};
use crate::kernel::KernelTable;

/// Parameters of the Lepski rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LepskiConfig {
    pub k_l: u32,
    pub k_u: u32,
    /// Threshold constant `C_L`.
    pub c_l: f64,
    pub beta: f64,
    pub a_n: f64,
}

/// Largest smoothness the rule adapts to by default.
pub const DEFAULT_M_BAR: f64 = 4.0;

impl LepskiConfig {
    /// Default grid for a sample of size `n`: `2^{-k_u} ≈ 1/n` and
    /// `2^{-k_l} ≈ ((ln n)/(n·aₙ))^{1/(β+m̄)}`, with `k_l` raised until
    /// `h_{k_l}` keeps `interval` inside the identifiable range.
    pub fn for_sample(n: usize, a_n: f64, beta: f64, m_bar: f64, c_l: f64, interval: (f64, f64)) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", "the Lepski rule needs n ≥ 3"));
        }
        if !(m_bar > 0.0) {
            return Err(invalid("m_bar", format!("must be positive, got {m_bar}")));
        }
        let nf = n as f64;
        let k_u = nf.log2().round().max(1.0) as u32;
        let coarse = (nf.ln() / (nf * a_n)).powf(1.0 / (beta + m_bar));
        let mut k_l = (-coarse.log2()).floor().max(0.0) as u32;
        while k_l < k_u {
            let (lo, hi) = identifiable_range(a_n, 2f64.powi(-(k_l as i32)));
            if interval.0 >= lo && interval.1 <= hi {
                break;
            }
            k_l += 1;
        }
        let config = Self { k_l, k_u, c_l, beta, a_n };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_l >= self.k_u {
            return Err(invalid("k_l", format!("need k_l < k_u, got {} and {}", self.k_l, self.k_u)));
        }
        if !(self.c_l > 0.0) {
            return Err(invalid("C_L", format!("must be positive, got {}", self.c_l)));
        }
        if !(self.a_n > 0.0 && self.a_n < 1.0) {
            return Err(invalid("a_n", format!("must lie in (0, 1), got {}", self.a_n)));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid("beta", format!("must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn bandwidth(&self, k: u32) -> f64 {
        2f64.powi(-(k as i32))
    }

    /// `C_L·((ln n)/(n·aₙ·h^{1+2β}))^{1/2}`.
    pub fn threshold(&self, n: usize, h: f64) -> f64 {
        let nf = n as f64;
        self.c_l * (nf.ln() / (nf * self.a_n * h.powf(1.0 + 2.0 * self.beta))).sqrt()
    }
}

/// Result of [`lepski_select`] with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LepskiOutcome {
    pub k_hat: u32,
    pub h: f64,
    pub ks: Vec<u32>,
    /// `deviations[i][j] = sup |ĝ(·;h_{ks[i]}) - ĝ(·;h_{ks[j]})|`.
    pub deviations: Vec<Vec<f64>>,
    /// Threshold attached to each `ks[j]`.
    pub thresholds: Vec<f64>,
    pub grid_spacing: f64,
    /// Set when no `k < k_u` was admissible and the rule fell back to `k_u`.
    pub hit_upper: bool,
}

impl LepskiOutcome {
    /// Whether `ks[i]` passes every comparison with finer bandwidths.
    pub fn admissible(&self, i: usize) -> bool {
        (i + 1..self.ks.len()).all(|j| self.deviations[i][j] <= self.thresholds[j])
    }
}

/// Smallest `k` whose estimate stays within the threshold of every finer
/// estimate, with sup-norms over the Theorem-2 grid of `h_{k_u}` on
/// `interval`. `kernel_for(h)` supplies the kernel table for bandwidth `h`.
pub fn lepski_select(
    sample: &RegressionSample,
    config: &LepskiConfig,
    interval: (f64, f64),
    kernel_for: &(dyn Fn(f64) -> Result<Arc<KernelTable>> + Sync),
) -> Result<LepskiOutcome> {
    config.validate()?;
    let design = sample.design();
    if (design.a_n() - config.a_n).abs() > 1e-12 {
        return Err(invalid("a_n", "Lepski config and sample design disagree on aₙ"));
    }
    let n = design.n();
    let ks: Vec<u32> = (config.k_l..=config.k_u).collect();
    let finest = config.bandwidth(config.k_u);
    let grid = make_eval_grid(interval, n, design.a_n(), config.bandwidth(config.k_l))?;
    let spacing = grid_spacing_bound(n, design.a_n(), finest);
    let steps = ((interval.1 - interval.0) / spacing).ceil().max(1.0) as usize;
    let points: Vec<f64> = if grid.points.len() == 1 {
        grid.points
    } else {
        (0..=steps).map(|i| interval.0 + (interval.1 - interval.0) * i as f64 / steps as f64).collect()
    };
    let coeffs: Vec<f64> = design.weights().iter().zip(sample.responses()).map(|(w, y)| w * y).collect();
    let curves: Vec<Vec<f64>> = ks
        .par_iter()
        .map(|&k| {
            let table = kernel_for(config.bandwidth(k))?;
            if (table.h() - config.bandwidth(k)).abs() > 1e-12 {
                return Err(invalid("h", format!("kernel factory returned h = {} for h_{k}", table.h())));
            }
            kernel_sum(design.points(), &coeffs, &points, &table)
        })
        .collect::<Result<_>>()?;
    let m = ks.len();
    let mut deviations = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = curves[i].iter().zip(&curves[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            deviations[i][j] = d;
            deviations[j][i] = d;
        }
    }
    let thresholds: Vec<f64> = ks.iter().map(|&k| config.threshold(n, config.bandwidth(k))).collect();
    let mut outcome = LepskiOutcome {
        k_hat: config.k_u,
        h: finest,
        ks,
        deviations,
        thresholds,
        grid_spacing: if steps > 0 { (interval.1 - interval.0) / steps as f64 } else { 0.0 },
        hit_upper: true,
    };
    if let Some(i) = (0..m - 1).find(|&i| outcome.admissible(i)) {
        outcome.k_hat = outcome.ks[i];
        outcome.h = config.bandwidth(outcome.k_hat);
        outcome.hit_upper = false;
    }
    Ok(outcome)
}

/// Undersmoothed bandwidth `h/ln n`.
pub fn undersmooth(h: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(invalid("n", format!("undersmoothing needs n ≥ 3, got {n}")));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("bandwidth must be positive, got {h}")));
    }
    Ok(h / (n as f64).ln())
}

/// Convention in which a bandwidth value is quoted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthUnits {
    /// The value is the kernel's `h` directly.
    #[default]
    Angular,
    /// The value is quoted per cycle: the kernel's `h` is the value over `2π`.
    Cycles,
}

impl BandwidthUnits {
    pub fn to_kernel(self, h: f64) -> f64 {
        match self {
            Self::Angular => h,
            Self::Cycles => h / (2.0 * PI),
        }
    }
}

/// Tabulated bandwidths for the two bump signals, keyed by signal name,
/// sample size and noise level; quoted in [`BandwidthUnits::Cycles`].
pub fn table_preset(signal: &str, n: usize, sigma: f64) -> Option<f64> {
    let col = match (n, sigma) {
        (100, s) if (s - 0.1).abs() < 1e-9 => 0,
        (100, s) if (s - 0.05).abs() < 1e-9 => 1,
        (750, s) if (s - 0.1).abs() < 1e-9 => 2,
        (750, s) if (s - 0.05).abs() < 1e-9 => 3,
        _ => return None,
    };
    match signal {
        "g_a" => Some([0.25, 0.24, 0.21, 0.12][col]),
        "g_b" => Some([0.20, 0.22, 0.22, 0.11][col]),
        _ => None,
    }
}

/// How a bandwidth is chosen; parsed from `fixed:<h>`, `preset:<name>` or
/// `lepski`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthRule {
    Fixed {
        h: f64,
    },
    Preset {
        name: String,
    },
    Lepski {
        #[serde(default = "default_c_l")]
        c_l: f64,
        #[serde(default = "default_m_bar")]
        m_bar: f64,
        /// Divide the selected bandwidth by `ln n`.
        #[serde(default = "default_true")]
        undersmooth: bool,
    },
}

fn default_c_l() -> f64 {
    1.0
}
fn default_m_bar() -> f64 {
    DEFAULT_M_BAR
}
fn default_true() -> bool {
    true
}

impl FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: String| invalid("bandwidth", reason);
        match s.split_once(':') {
            Some(("fixed", v)) => {
                let h: f64 = v.trim().parse().map_err(|_| bad(format!("cannot parse `{v}` as a number")))?;
                if !(h.is_finite() && h > 0.0) {
                    return Err(bad(format!("fixed bandwidth must be positive, got {h}")));
                }
                Ok(Self::Fixed { h })
            }
            Some(("preset", name)) if !name.trim().is_empty() => Ok(Self::Preset { name: name.trim().to_string() }),
            None if s == "lepski" => Ok(Self::Lepski { c_l: 1.0, m_bar: DEFAULT_M_BAR, undersmooth: true }),
            _ => Err(bad(format!("expected fixed:<value>, preset:<scenario> or lepski, got `{s}`"))),
        }
    }
}
