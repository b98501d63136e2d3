//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! Segments are bisected in order of decreasing error estimate until the
//! summed estimate drops below the absolute tolerance. Known kinks of the
//! integrand should be passed as breakpoints so that no segment straddles them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 20_000;

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += wk * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Segment {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[lo, hi]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    integrate_with_breaks(f, &[lo, hi], tol)
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, starting from the
/// partition given by `breaks` (ascending).
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: f64) -> Result<f64> {
    assert!(breaks.len() >= 2, "need at least one interval");
    let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
    if lo == hi {
        return Ok(0.0);
    }
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(&f, w[0], w[1]));
        }
    }
    loop {
        // Re-summed each pass to avoid drift in the running totals.
        let (total, err) = heap
            .iter()
            .fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error));
        if !total.is_finite() {
            return Err(Error::Quadrature { lo, hi, error: f64::INFINITY, tol });
        }
        if err <= tol {
            return Ok(total);
        }
        // Refine several of the worst segments per pass; the fold above stays cheap.
        let batch = 1 + heap.len() / 8;
        for _ in 0..batch {
            let Some(worst) = heap.pop() else { break };
            let mid = 0.5 * (worst.lo + worst.hi);
            if heap.len() + 2 > MAX_SEGMENTS || mid <= worst.lo || mid >= worst.hi {
                return Err(Error::Quadrature { lo, hi, error: err, tol });
            }
            heap.push(kronrod(&f, worst.lo, mid));
            heap.push(kronrod(&f, mid, worst.hi));
        }
    }
}

/// Sorted, deduplicated breakpoints clipped to `[lo, hi]`, including both ends.
pub(crate) fn breakpoints(lo: f64, hi: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts: Vec<f64> = std::iter::once(lo)
        .chain(interior.into_iter().filter(|&p| p > lo && p < hi))
        .chain(std::iter::once(hi))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}
