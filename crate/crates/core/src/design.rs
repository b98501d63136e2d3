//! Fixed designs: the regular grid `w_j = j/(n·aₙ)`, symmetric designs
//! generated from a design density, and the thinning used by the sample-split
//! band.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::integrate;

/// Design points `w_{-n} < … < w_n` with per-point quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDesign {
    n: usize,
    a_n: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
    regular: bool,
}

impl FixedDesign {
    /// Regular design `w_j = j/(n·aₙ)`, `j = -n..=n`, all weights `1/(n·aₙ)`.
    pub fn regular(n: usize, a_n: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if !(a_n > 0.0 && a_n < 1.0) {
            return Err(invalid("a_n", format!("must lie in (0, 1), got {a_n}")));
        }
        let scale = n as f64 * a_n;
        let points = (-(n as i64)..=n as i64).map(|j| j as f64 / scale).collect();
        Ok(Self { n, a_n, points, weights: vec![1.0 / scale; 2 * n + 1], regular: true })
    }

    /// Symmetric design whose positive half solves
    /// `∫₀^{w_j} f(z) dz = j/(n+1)` for `j = 1..=n`, with `f` a probability
    /// density on `[0, support]`. The design parameter is `aₙ = 1/support`,
    /// `w_0 = 0`, `w_{-j} = -w_j` and the weights are `1/(n·f(w_j))`.
    pub fn from_density<F: Fn(f64) -> f64>(density: F, support: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if !(support.is_finite() && support > 1.0) {
            return Err(invalid("support", format!("must be finite and exceed 1, got {support}")));
        }
        const PROBES: usize = 4096;
        for i in 0..=PROBES {
            let z = support * i as f64 / PROBES as f64;
            let v = density(z);
            if !v.is_finite() || v < 0.0 {
                return Err(invalid("density", format!("must be finite and nonnegative, got {v} at {z}")));
            }
        }
        let total = integrate(&density, 0.0, support, 1e-12)?;
        let needed = n as f64 / (n as f64 + 1.0);
        if total < needed {
            return Err(invalid("density", format!("mass {total} on [0, {support}] cannot reach quantile {needed}")));
        }

        let mut positive = Vec::with_capacity(n);
        let (mut left, mut mass_left) = (0.0, 0.0);
        for j in 1..=n {
            let target = j as f64 / (n as f64 + 1.0);
            let cdf = |z: f64| integrate(&density, left, z, 1e-14).map(|m| mass_left + m);
            let (mut lo, mut hi) = (left, support);
            while hi - lo > 1e-12 * support.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if cdf(mid)? < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let w = 0.5 * (lo + hi);
            mass_left = cdf(w)?;
            left = w;
            positive.push(w);
        }

        let points: Vec<f64> = positive
            .iter()
            .rev()
            .map(|w| -w)
            .chain(std::iter::once(0.0))
            .chain(positive.iter().copied())
            .collect();
        let weights = points
            .iter()
            .map(|&w| {
                let f = density(w.abs());
                if f > 0.0 {
                    Ok(1.0 / (n as f64 * f))
                } else {
                    Err(invalid("density", format!("vanishes at design point {w}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, a_n: 1.0 / support, points, weights, regular: false })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn a_n(&self) -> f64 {
        self.a_n
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn points(&self) -> &[f64] {
        &self.points
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn is_regular(&self) -> bool {
        self.regular
    }

    /// Point `w_j` for the signed index `j ∈ [-n, n]`.
    pub fn point(&self, j: i64) -> f64 {
        self.points[self.slot(j)]
    }

    /// Storage position of the signed index `j`.
    pub fn slot(&self, j: i64) -> usize {
        (j + self.n as i64) as usize
    }

    /// Spacing `1/(n·aₙ)` of the regular grid.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.n as f64 * self.a_n)
    }

    /// Largest point, `1/aₙ` on the regular grid.
    pub fn half_span(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Checks observed design values against the constructed points.
    pub fn validate_points(&self, observed: &[f64], tol: f64) -> Result<()> {
        if observed.len() != self.len() {
            return Err(invalid(
                "input",
                format!("expected {} rows (2n+1 with n = {}), found {}", self.len(), self.n, observed.len()),
            ));
        }
        for (row, (&found, &expected)) in observed.iter().zip(&self.points).enumerate() {
            if !((found - expected).abs() <= tol) {
                return Err(Error::DesignMismatch { row, found, expected });
            }
        }
        Ok(())
    }
}

/// Thinning of a regular design that removes every `d_n`-th point, keeping
/// the remainder for estimation and the removed points for the variance fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMask {
    d_n: usize,
    b_n: f64,
    kept: Vec<bool>,
    removed: Vec<i64>,
    gaps: Vec<f64>,
    truncated: Vec<usize>,
}

impl SplitMask {
    /// Removes `{-n + k·d_n : 1 ≤ k ≤ ⌊2n/d_n⌋}`. A kept point whose left
    /// neighbour was removed gets gap `2/(n·aₙ)`, every other kept point
    /// (including `w_{-n}`) gets `1/(n·aₙ)`; removed points get gap 0.
    pub fn build(design: &FixedDesign, d_n: usize, b_n: f64) -> Result<Self> {
        let n = design.n();
        if !design.is_regular() {
            return Err(invalid("design", "sample splitting requires the regular design"));
        }
        if d_n < 2 || d_n > 2 * n {
            return Err(invalid("d_n", format!("must lie in [2, {}], got {d_n}", 2 * n)));
        }
        if !(b_n > 0.0 && b_n <= 1.0) {
            return Err(invalid("b_n", format!("must lie in (0, 1], got {b_n}")));
        }
        let ni = n as i64;
        let removed: Vec<i64> = (1..=(2 * n / d_n) as i64).map(|k| -ni + k * d_n as i64).collect();
        let mut kept = vec![true; design.len()];
        for &j in &removed {
            kept[design.slot(j)] = false;
        }
        let step = design.spacing();
        let gaps: Vec<f64> = (0..design.len())
            .map(|i| match (kept[i], i) {
                (false, _) => 0.0,
                (true, 0) => step,
                (true, _) if !kept[i - 1] => 2.0 * step,
                (true, _) => step,
            })
            .collect();
        let limit = n as f64 * b_n;
        let truncated = (0..design.len())
            .filter(|&i| kept[i] && ((i as i64 - ni) as f64).abs() <= limit)
            .collect();
        Ok(Self { d_n, b_n, kept, removed, gaps, truncated })
    }

    /// Finite-n defaults `d_n = min(max(8, ⌈ln(n)^2.5⌉), ⌊n/4⌋)` (at least 2)
    /// and `b_n = min(1, aₙ·ln(n)²)`.
    pub fn default_parameters(n: usize, a_n: f64) -> (usize, f64) {
        let ln = (n as f64).ln();
        let d = (ln.powf(2.5).ceil() as usize).max(8).min(n / 4).max(2);
        let b = (a_n * ln * ln).min(1.0);
        (d, b)
    }

    pub fn d_n(&self) -> usize {
        self.d_n
    }
    pub fn b_n(&self) -> f64 {
        self.b_n
    }
    /// Membership in the main sample, by storage position.
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }
    /// Signed indices moved to the held-out sample.
    pub fn removed(&self) -> &[i64] {
        &self.removed
    }
    /// Gap weight per storage position (0 for removed points).
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }
    /// Storage positions of kept points with `|j| ≤ n·bₙ`.
    pub fn truncated(&self) -> &[usize] {
        &self.truncated
    }
    /// Storage positions of kept points.
    pub fn kept_slots(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&i| self.kept[i]).collect()
    }
    /// Storage positions of removed points.
    pub fn removed_slots(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&i| !self.kept[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regular_small() {
        let d = FixedDesign::regular(1, 0.5).unwrap();
        assert_eq!(d.points(), &[-2.0, 0.0, 2.0]);
        assert_eq!(d.weights(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn regular_span() {
        let d = FixedDesign::regular(100, 2.0 / 3.0).unwrap();
        assert!((d.half_span() - 1.5).abs() < 1e-15);
        assert_eq!(d.point(-100), -d.point(100));
        let total: f64 = d.weights().iter().sum();
        assert!((total - 2.0 / d.a_n()).abs() <= 2.0 * d.spacing());
    }

    #[test]
    fn rejects_bad_design() {
        assert!(FixedDesign::regular(10, 0.0).is_err());
        assert!(FixedDesign::regular(10, 1.0).is_err());
        assert!(FixedDesign::regular(0, 0.5).is_err());
    }

    #[test]
    fn uniform_density_quantiles() {
        let (n, a_n) = (100, 2.0 / 3.0);
        let d = FixedDesign::from_density(|_| a_n, 1.0 / a_n, n).unwrap();
        for j in -(n as i64)..=n as i64 {
            let expected = j as f64 / ((n as f64 + 1.0) * a_n);
            assert!((d.point(j) - expected).abs() < 1e-9, "j={j}");
        }
        for &w in d.weights() {
            assert!((w - 1.0 / (n as f64 * a_n)).abs() < 1e-12);
        }
        assert!((d.a_n() - a_n).abs() < 1e-15);
    }

    #[test]
    fn triangular_density_quantiles() {
        // f(z) = 2(L - z)/L² on [0, L].
        let l = 2.0;
        let f = move |z: f64| 2.0 * (l - z) / (l * l);
        let n = 40;
        let d = FixedDesign::from_density(f, l, n).unwrap();
        assert_eq!(d.point(0), 0.0);
        for j in 1..=n as i64 {
            let mass = integrate(f, 0.0, d.point(j), 1e-13).unwrap();
            assert!((mass - j as f64 / (n as f64 + 1.0)).abs() < 1e-8);
            assert_eq!(d.point(-j), -d.point(j));
        }
    }

    #[test]
    fn single_point_density_design() {
        let d = FixedDesign::from_density(|_| 0.5, 2.0, 1).unwrap();
        assert_eq!(d.point(0), 0.0);
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn density_validation() {
        assert!(FixedDesign::from_density(|z| 0.5 - z, 2.0, 5).is_err());
        assert!(FixedDesign::from_density(|_| 0.1, 2.0, 5).is_err());
    }

    #[test]
    fn split_example() {
        let d = FixedDesign::regular(5, 0.5).unwrap();
        let s = SplitMask::build(&d, 5, 1.0).unwrap();
        assert_eq!(s.removed(), &[0, 5]);
        let gap_sum: f64 = s.gaps().iter().sum();
        assert!((gap_sum - 2.0 / d.a_n()).abs() < 1e-12);
        assert_eq!(s.gaps()[d.slot(1)], 2.0 * d.spacing());
        assert_eq!(s.gaps()[d.slot(-5)], d.spacing());
        assert_eq!(s.gaps()[d.slot(0)], 0.0);
    }

    #[test]
    fn split_single_removal() {
        let d = FixedDesign::regular(7, 0.5).unwrap();
        let s = SplitMask::build(&d, 14, 1.0).unwrap();
        assert_eq!(s.removed(), &[7]);
        assert!(SplitMask::build(&d, 1, 1.0).is_err());
        assert!(SplitMask::build(&d, 15, 1.0).is_err());
        assert!(SplitMask::build(&d, 4, 0.0).is_err());
    }

    #[test]
    fn split_truncation() {
        let d = FixedDesign::regular(20, 0.5).unwrap();
        let s = SplitMask::build(&d, 4, 0.5).unwrap();
        for &i in s.truncated() {
            assert!(s.kept()[i]);
            assert!((i as i64 - 20).abs() <= 10);
        }
        let expected = (0..d.len()).filter(|&i| s.kept()[i] && (i as i64 - 20).abs() <= 10).count();
        assert_eq!(s.truncated().len(), expected);
    }

    #[test]
    fn default_split_parameters() {
        assert_eq!(SplitMask::default_parameters(100, 2.0 / 3.0), (25, 1.0));
        let (d, b) = SplitMask::default_parameters(750, 2.0 / 3.0);
        assert_eq!(d, 113);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn validate_points_reports_row() {
        let d = FixedDesign::regular(2, 0.5).unwrap();
        let mut w = d.points().to_vec();
        assert!(d.validate_points(&w, 1e-9).is_ok());
        w[3] += 1e-6;
        assert!(matches!(d.validate_points(&w, 1e-9), Err(Error::DesignMismatch { row: 3, .. })));
    }

    proptest! {
        #[test]
        fn regular_is_symmetric_and_increasing(n in 1usize..400, a_n in 0.01f64..0.99) {
            let d = FixedDesign::regular(n, a_n).unwrap();
            for j in 0..=n as i64 {
                prop_assert_eq!(d.point(j) + d.point(-j), 0.0);
            }
            prop_assert!(d.points().windows(2).all(|w| w[1] > w[0]));
            prop_assert!((d.half_span() - 1.0 / a_n).abs() < 1e-12 / a_n);
        }

        #[test]
        fn split_partitions_indices(n in 2usize..300, d_frac in 0.0f64..1.0) {
            let d = FixedDesign::regular(n, 0.5).unwrap();
            let d_n = 2 + ((2 * n - 2) as f64 * d_frac) as usize;
            let s = SplitMask::build(&d, d_n, 1.0).unwrap();
            let kept = s.kept_slots();
            let removed = s.removed_slots();
            prop_assert_eq!(kept.len() + removed.len(), d.len());
            prop_assert_eq!(removed.len(), 2 * n / d_n);
            // Telescoping: gaps over kept points add up to the kept extent plus one step.
            let sum: f64 = s.gaps().iter().sum();
            let extent = d.points()[*kept.last().unwrap()] - d.points()[kept[0]];
            prop_assert!((sum - extent - d.spacing()).abs() < 1e-9);
        }
    }
}
