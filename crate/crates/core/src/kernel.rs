//! Band-limited tapers and the deconvolution kernel
//! `K(w;h) = (1/2π) ∫ e^{-itw} Φ_k(t) / Φ_Δ(-t/h) dt`.
//!
//! Every supported `Φ_Δ` is real and even, so the kernel reduces to the cosine
//! transform `(1/π) ∫₀¹ cos(tw) m(t) dt` of the multiplier
//! `m(t) = Φ_k(t)/Φ_Δ(t/h)`. [`kernel_eval`] integrates it adaptively;
//! [`KernelTable`] tabulates it with one FFT.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::ErrorDensity;
use crate::quad::{breakpoints, integrate_with_breaks};

/// Profile of the taper between the flat region and the cutoff at `|t| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperShape {
    /// Quintic smoothstep bridge from 1 at `|t| = D` to 0 at `|t| = 1`.
    SmoothPoly,
    /// `1 - exp(-1/t²)` on `|t| ≤ 1`, zero beyond.
    DampedCutoff,
    /// Product of the two above.
    SmoothDamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaperSpec {
    #[serde(default = "default_flat_radius")]
    pub flat_radius: f64,
    pub shape: TaperShape,
}

fn default_flat_radius() -> f64 {
    0.5
}

impl Default for TaperSpec {
    fn default() -> Self {
        Self { flat_radius: 0.5, shape: TaperShape::SmoothPoly }
    }
}

impl TaperSpec {
    pub fn new(flat_radius: f64, shape: TaperShape) -> Result<Self> {
        let spec = Self { flat_radius, shape };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flat_radius > 0.0 && self.flat_radius < 1.0 {
            Ok(())
        } else {
            Err(invalid("flat_radius", format!("must lie in (0, 1), got {}", self.flat_radius)))
        }
    }

    /// `Φ_k(t)`.
    pub fn phi_k(&self, t: f64) -> f64 {
        let s = t.abs();
        if s > 1.0 {
            return 0.0;
        }
        match self.shape {
            TaperShape::SmoothPoly => self.smoothstep(s),
            TaperShape::DampedCutoff => damping(s),
            TaperShape::SmoothDamped => self.smoothstep(s) * damping(s),
        }
    }

    fn smoothstep(&self, s: f64) -> f64 {
        let d = self.flat_radius;
        if s <= d {
            return 1.0;
        }
        let r = (s - d) / (1.0 - d);
        1.0 - r * r * r * (10.0 - 15.0 * r + 6.0 * r * r)
    }

    /// Points in `[0, 1]` where `Φ_k` loses smoothness.
    fn kinks(&self) -> Vec<f64> {
        match self.shape {
            TaperShape::DampedCutoff => vec![],
            _ => vec![self.flat_radius],
        }
    }
}

fn damping(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        -(-1.0 / (s * s)).exp_m1()
    }
}

/// Free-function form of [`TaperSpec::phi_k`].
pub fn phi_k(spec: &TaperSpec, t: f64) -> f64 {
    spec.phi_k(t)
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(invalid("h", format!("bandwidth must be positive, got {h}")))
    }
}

fn multiplier(spec: &TaperSpec, density: &ErrorDensity, h: f64, t: f64) -> f64 {
    spec.phi_k(t) / density.charfn(t / h)
}

/// Reference evaluation of `K(w;h)` by adaptive quadrature to absolute
/// tolerance 1e-9. The integration range is pre-split into half-periods of
/// `cos(tw)` so that large `|w|` stays cheap.
pub fn kernel_eval(spec: &TaperSpec, density: &ErrorDensity, w: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    let pieces = ((w.abs() / PI).ceil() as usize).clamp(1, 4096);
    let interior = (1..pieces).map(|i| i as f64 / pieces as f64).chain(spec.kinks());
    let breaks = breakpoints(0.0, 1.0, interior);
    let v = integrate_with_breaks(|t| (t * w).cos() * multiplier(spec, density, h, t), &breaks, PI * 1e-9)?;
    Ok(v / PI)
}

/// `‖K(·;h)‖₂²` by Parseval: `(1/π) ∫₀¹ m(t)² dt`.
pub fn kernel_l2_squared(spec: &TaperSpec, density: &ErrorDensity, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    let breaks = breakpoints(0.0, 1.0, spec.kinks());
    let v = integrate_with_breaks(|t| multiplier(spec, density, h, t).powi(2), &breaks, 1e-10)?;
    Ok(v / PI)
}

/// Default tabulation length.
pub const DEFAULT_GRID_LEN: usize = 1 << 14;
/// FFT length relative to the table length; sets the aliasing period to
/// about this many table widths.
const OVERSAMPLE: usize = 16;

/// Largest table step used by default; keeps the interpolation error of a
/// kernel with unit spectral support near 1e-8 relative.
const MAX_DEFAULT_STEP: f64 = 0.04;

/// `DEFAULT_GRID_LEN`, doubled until the table step is at most 0.04.
pub fn grid_len_for(span: f64) -> usize {
    let needed = (2.0 * span / MAX_DEFAULT_STEP).ceil() as usize;
    needed.next_power_of_two().max(DEFAULT_GRID_LEN)
}

/// Default table half-width `4/(aₙ·h)`.
pub fn default_span(a_n: f64, h: f64) -> f64 {
    4.0 / (a_n * h)
}

/// `K(·;h)` sampled on the uniform grid `u_k = k·du`, `|k| ≤ grid_len/2 + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    h: f64,
    beta: f64,
    du: f64,
    half: usize,
    values: Vec<f64>,
}

impl KernelTable {
    /// Tabulates `K(·;h)` on at least `[-span, span]` with `grid_len` steps.
    ///
    /// The multiplier is split as `m = q + r`, where `q` is the even quartic
    /// matching `m`, `m'`, `m''` at `t = 1`. The cosine transform of `q` is
    /// evaluated in closed form and `r`, which vanishes to second order at the
    /// cutoff, is transformed by an FFT of its samples on `[-1, 1]`. Since
    /// `r` is compactly supported, the trapezoid sum equals the periodised
    /// transform exactly, and oversampling pushes the periodic copies far
    /// beyond the tabulated range.
    pub fn build(spec: &TaperSpec, density: &ErrorDensity, h: f64, grid_len: usize, span: f64) -> Result<Self> {
        check_bandwidth(h)?;
        spec.validate()?;
        if grid_len < 256 || !grid_len.is_power_of_two() {
            return Err(invalid("grid_len", format!("must be a power of two ≥ 256, got {grid_len}")));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(invalid("span", format!("must be positive, got {span}")));
        }
        let half = grid_len / 2;
        // Samples of r per unit t, and FFT length giving a table step du ≥ span/half.
        let per_unit = ((OVERSAMPLE as f64 * span / PI).ceil() as usize).max(64);
        let fft_len = (PI * per_unit as f64 * half as f64 / span).floor() as usize;
        if fft_len < 2 * per_unit + 1 || fft_len < 2 * (half + 3) {
            return Err(invalid(
                "grid_len",
                format!("{grid_len} points cannot resolve a kernel of span {span}; increase grid_len"),
            ));
        }
        let dt = 1.0 / per_unit as f64;
        let du = 2.0 * PI * per_unit as f64 / fft_len as f64;

        let m = |t: f64| multiplier(spec, density, h, t);
        let q = EndQuartic::fit(&m);

        let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
        for j in 0..=per_unit {
            let t = j as f64 * dt;
            let r = m(t) - q.eval(t);
            buf[j] = Complex64::new(r, 0.0);
            if j > 0 {
                buf[fft_len - j] = Complex64::new(r, 0.0);
            }
        }
        FftPlanner::new().plan_fft_forward(fft_len).process(&mut buf);

        let count = half + 3;
        let mut positive = Vec::with_capacity(count);
        for (k, z) in buf.iter().take(count).enumerate() {
            let u = k as f64 * du;
            positive.push((z.re * dt + q.transform(u)) / (2.0 * PI));
        }
        let values = positive.iter().skip(1).rev().chain(positive.iter()).copied().collect();
        Ok(Self { h, beta: density.beta(), du, half: count - 1, values })
    }

    /// Builds with `span = 4/(aₙ·h)` and [`grid_len_for`] that span.
    pub fn with_defaults(spec: &TaperSpec, density: &ErrorDensity, h: f64, a_n: f64) -> Result<Self> {
        let span = default_span(a_n, h);
        Self::build(spec, density, h, grid_len_for(span), span)
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn step(&self) -> f64 {
        self.du
    }
    /// Half-width of the range on which [`KernelTable::eval`] is defined.
    pub fn span(&self) -> f64 {
        (self.half - 2) as f64 * self.du
    }
    /// Tabulated nodes `u_k`, ascending.
    pub fn grid(&self) -> Vec<f64> {
        let h = self.half as i64;
        (-h..=h).map(|k| k as f64 * self.du).collect()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `K(u;h)` by four-point Lagrange interpolation.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !(u.abs() <= self.span()) {
            return Err(Error::SpanTooSmall { span: self.span(), argument: u });
        }
        Ok(self.eval_unchecked(u))
    }

    /// As [`KernelTable::eval`] but the caller guarantees `|u| ≤ span()`.
    pub fn eval_unchecked(&self, u: f64) -> f64 {
        let x = u / self.du + self.half as f64;
        let i = (x.floor() as usize).clamp(1, self.values.len() - 3);
        let f = x - i as f64;
        let v = &self.values[i - 1..i + 3];
        let (a, b, c) = (f + 1.0, f - 1.0, f - 2.0);
        -f * b * c / 6.0 * v[0] + a * b * c / 2.0 * v[1] - a * f * c / 2.0 * v[2] + a * f * b / 6.0 * v[3]
    }
}

/// Even quartic `c₀ + c₁t² + c₂t⁴` matching value, slope and curvature of the
/// multiplier at `t = 1⁻`.
#[derive(Debug, Clone, Copy)]
struct EndQuartic {
    c: [f64; 3],
}

impl EndQuartic {
    fn fit(m: &impl Fn(f64) -> f64) -> Self {
        // One-sided sixth-order differences from the left of t = 1.
        let d = 1e-3;
        let f: Vec<f64> = (0..8).map(|k| m(1.0 - k as f64 * d)).collect();
        let v = f[0];
        if f.iter().all(|&y| y == 0.0) {
            return Self { c: [0.0; 3] };
        }
        const D1: [f64; 7] = [49.0 / 20.0, -6.0, 15.0 / 2.0, -20.0 / 3.0, 15.0 / 4.0, -6.0 / 5.0, 1.0 / 6.0];
        const D2: [f64; 8] =
            [469.0 / 90.0, -223.0 / 10.0, 879.0 / 20.0, -949.0 / 18.0, 41.0, -201.0 / 10.0, 1019.0 / 180.0, -7.0 / 10.0];
        let d1 = D1.iter().zip(&f).map(|(c, y)| c * y).sum::<f64>() / d;
        let d2 = D2.iter().zip(&f).map(|(c, y)| c * y).sum::<f64>() / (d * d);
        // q(1) = c0 + c1 + c2, q'(1) = 2c1 + 4c2, q''(1) = 2c1 + 12c2.
        let c2 = (d2 - d1) / 8.0;
        let c1 = (d1 - 4.0 * c2) / 2.0;
        let c0 = v - c1 - c2;
        Self { c: [c0, c1, c2] }
    }

    fn eval(&self, t: f64) -> f64 {
        let t2 = t * t;
        self.c[0] + t2 * (self.c[1] + t2 * self.c[2])
    }

    /// `∫_{-1}^{1} q(t) cos(tu) dt`.
    fn transform(&self, u: f64) -> f64 {
        if self.c == [0.0; 3] {
            return 0.0;
        }
        let j = cosine_moments(u);
        2.0 * (self.c[0] * j[0] + self.c[1] * j[2] + self.c[2] * j[4])
    }
}

/// `J_k(u) = ∫₀¹ t^k cos(ut) dt` for `k = 0..=4`.
fn cosine_moments(u: f64) -> [f64; 5] {
    let u = u.abs();
    let mut jc = [0.0; 5];
    if u <= 4.0 {
        // Taylor series; terms stay below e⁴ so cancellation is mild.
        for (k, slot) in jc.iter_mut().enumerate() {
            let (mut term, mut sum, mut m) = (1.0, 0.0, 0usize);
            loop {
                let add = term / (k + 2 * m + 1) as f64;
                sum += add;
                if add.abs() < 1e-18 * sum.abs().max(1e-300) && m > 2 {
                    break;
                }
                term *= -u * u / (((2 * m + 1) * (2 * m + 2)) as f64);
                m += 1;
            }
            *slot = sum;
        }
        return jc;
    }
    let (s, c) = u.sin_cos();
    let mut js = [0.0; 5];
    jc[0] = s / u;
    js[0] = (1.0 - c) / u;
    for k in 1..5 {
        jc[k] = s / u - k as f64 / u * js[k - 1];
        js[k] = -c / u + k as f64 / u * jc[k - 1];
    }
    jc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    flat_radius: u64,
    shape: TaperShape,
    density: [u64; 4],
    h: u64,
    grid_len: usize,
    span: u64,
}

impl CacheKey {
    fn new(spec: &TaperSpec, density: &ErrorDensity, h: f64, grid_len: usize, span: f64) -> Self {
        use crate::noise::NoiseKind;
        let density = match density.kind() {
            NoiseKind::Laplace { a } => [1, a.to_bits(), 0, 0],
            NoiseKind::LaplaceMixture { a, lambda, mu } => [2, a.to_bits(), lambda.to_bits(), mu.to_bits()],
            NoiseKind::NoError => [3, 0, 0, 0],
        };
        Self {
            flat_radius: spec.flat_radius.to_bits(),
            shape: spec.shape,
            density,
            h: h.to_bits(),
            grid_len,
            span: span.to_bits(),
        }
    }
}

/// Memoised kernel tables shared across workers. Lookups and inserts are
/// serialised by one lock; a table is built at most once per key.
#[derive(Debug, Default)]
pub struct KernelCache {
    tables: Mutex<HashMap<CacheKey, Arc<KernelTable>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &self,
        spec: &TaperSpec,
        density: &ErrorDensity,
        h: f64,
        grid_len: usize,
        span: f64,
    ) -> Result<Arc<KernelTable>> {
        let key = CacheKey::new(spec, density, h, grid_len, span);
        let mut tables = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = tables.get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(KernelTable::build(spec, density, h, grid_len, span)?);
        tables.insert(key, Arc::clone(&table));
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tables.lock().map(|t| t.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::laplace_rate_for_sd;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth() -> TaperSpec {
        TaperSpec::default()
    }

    /// Composite Simpson rule on a fine uniform grid of `[0, 1]` split at
    /// `D`: an oracle independent of the adaptive Gauss–Kronrod code.
    fn simpson_kernel(spec: &TaperSpec, density: &ErrorDensity, w: f64, h: f64) -> f64 {
        let f = |t: f64| (t * w).cos() * spec.phi_k(t) / density.charfn(t / h);
        let simpson = |lo: f64, hi: f64, n: usize| {
            let dx = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * dx);
            }
            s * dx / 3.0
        };
        let d = spec.flat_radius;
        (simpson(0.0, d, 20_000) + simpson(d, 1.0, 20_000)) / PI
    }

    #[test]
    fn taper_examples() {
        let s = smooth();
        assert_eq!(s.phi_k(0.0), 1.0);
        assert_eq!(s.phi_k(1.5), 0.0);
        assert_eq!(s.phi_k(-0.3), s.phi_k(0.3));
        assert_eq!(s.phi_k(0.5), 1.0);
        assert!(s.phi_k(1.0).abs() < 1e-15);
        let d = TaperSpec::new(0.5, TaperShape::DampedCutoff).unwrap();
        assert_eq!(d.phi_k(0.0), 1.0);
        assert!((d.phi_k(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(d.phi_k(1.0001), 0.0);
        assert!(TaperSpec::new(1.0, TaperShape::SmoothPoly).is_err());
    }

    #[test]
    fn smoothstep_is_c2() {
        let s = smooth();
        let e = 1e-4;
        // One-sided second-order stencils for the limits from each side.
        let second = |t: f64, dir: f64| {
            let f = |k: f64| s.phi_k(t + dir * k * e);
            (2.0 * f(0.0) - 5.0 * f(1.0) + 4.0 * f(2.0) - f(3.0)) / (e * e)
        };
        let first = |t: f64, dir: f64| {
            let f = |k: f64| s.phi_k(t + dir * k * e);
            dir * (-1.5 * f(0.0) + 2.0 * f(1.0) - 0.5 * f(2.0)) / e
        };
        for knot in [0.5, 1.0] {
            let (left, right) = (second(knot, -1.0), second(knot, 1.0));
            assert!((left - right).abs() < 1e-4, "second derivative jump at {knot}: {left} vs {right}");
            assert!((first(knot, -1.0) - first(knot, 1.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn noerror_reduces_to_taper_transform() {
        let d = ErrorDensity::no_error();
        let k0 = kernel_eval(&smooth(), &d, 0.0, 0.3).unwrap();
        // (1/π)[D + (1-D)/2] for the smoothstep, whose bridge integrates to half.
        assert!((k0 - 0.75 / PI).abs() < 1e-10);
        let other = kernel_eval(&smooth(), &d, 0.0, 2.0).unwrap();
        assert!((k0 - other).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_simpson_oracle() {
        let cases = [
            (ErrorDensity::laplace(1.0).unwrap(), 0.2),
            (ErrorDensity::laplace_with_sd(0.1).unwrap(), 0.05),
            (ErrorDensity::laplace_mixture(1.0, 0.2, 0.3).unwrap(), 0.1),
        ];
        for (d, h) in cases {
            for w in [0.0, 0.7, -3.0, 25.0] {
                let a = kernel_eval(&smooth(), &d, w, h).unwrap();
                let b = simpson_kernel(&smooth(), &d, w, h);
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "w={w} h={h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn laplace_closed_form_at_origin() {
        // With m(t) = Φ_k(t)(1 + t²/(ah)²) the transform at 0 is a polynomial integral.
        let (a, h) = (2.0, 0.25);
        let d = ErrorDensity::laplace(a).unwrap();
        let s = smooth();
        let k = 1.0 / (a * h).powi(2);
        // ∫₀¹ Φ_k = 0.75 and ∫₀¹ t²Φ_k = D³/3 + ∫ bridge·t².
        let bridge_t2 = integrate_with_breaks(|t| t * t * s.phi_k(t), &[0.5, 1.0], 1e-14).unwrap();
        let exact = (0.75 + k * (0.125 / 3.0 + bridge_t2)) / PI;
        assert!((kernel_eval(&s, &d, 0.0, h).unwrap() - exact).abs() < 1e-10);
    }

    #[test]
    fn kernel_is_even() {
        let d = ErrorDensity::laplace_mixture(1.0, 0.2, 0.3).unwrap();
        for w in [0.1, 1.3, 7.7] {
            let a = kernel_eval(&smooth(), &d, w, 0.2).unwrap();
            let b = kernel_eval(&smooth(), &d, -w, 0.2).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
        assert!(kernel_eval(&smooth(), &d, 0.0, 0.0).is_err());
    }

    fn check_table(spec: &TaperSpec, d: &ErrorDensity, h: f64, span: f64) {
        let table = KernelTable::build(spec, d, h, DEFAULT_GRID_LEN, span).unwrap();
        assert!(table.span() >= span);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts: Vec<f64> = vec![0.0, 0.5, -0.5, 2.0, -2.0];
        pts.extend((0..32).map(|_| rng.random_range(-span..span)));
        for u in pts {
            let exact = kernel_eval(spec, d, u, h).unwrap();
            let fast = table.eval(u).unwrap();
            assert!((exact - fast).abs() < 1e-6, "{spec:?} h={h} u={u}: {exact} vs {fast}");
        }
    }

    #[test]
    fn table_matches_quadrature_smooth() {
        for d in [ErrorDensity::laplace_with_sd(0.1).unwrap(), ErrorDensity::laplace_mixture(1.0, 0.2, 0.3).unwrap()] {
            for h in [0.1, 0.25, 0.5] {
                check_table(&smooth(), &d, h, default_span(2.0 / 3.0, h));
            }
        }
    }

    #[test]
    fn table_matches_quadrature_damped() {
        let d = ErrorDensity::laplace_mixture(laplace_rate_for_sd(0.05), 0.2, 0.3).unwrap();
        for shape in [TaperShape::DampedCutoff, TaperShape::SmoothDamped] {
            let spec = TaperSpec::new(0.5, shape).unwrap();
            for h in [0.05, 0.3] {
                check_table(&spec, &d, h, default_span(2.0 / 3.0, h));
            }
        }
    }

    #[test]
    fn table_converges_in_grid_len() {
        let d = ErrorDensity::laplace(3.0).unwrap();
        let span = 60.0;
        let a = KernelTable::build(&smooth(), &d, 0.2, 1 << 13, span).unwrap();
        let b = KernelTable::build(&smooth(), &d, 0.2, 1 << 14, span).unwrap();
        let worst = (0..=2000)
            .map(|i| -span + i as f64 * span / 1000.0)
            .map(|u| (a.eval(u).unwrap() - b.eval(u).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn table_is_symmetric_and_guards_span() {
        let d = ErrorDensity::laplace(1.0).unwrap();
        let t = KernelTable::build(&smooth(), &d, 0.3, 1024, 20.0).unwrap();
        let v = t.values();
        for i in 0..v.len() {
            assert_eq!(v[i], v[v.len() - 1 - i]);
        }
        assert!(matches!(t.eval(t.span() * 1.01), Err(Error::SpanTooSmall { .. })));
        assert!(KernelTable::build(&smooth(), &d, 0.3, 1000, 20.0).is_err());
        assert!(KernelTable::build(&smooth(), &d, 0.3, 256, 1e4).is_err());
    }

    #[test]
    fn cosine_moments_match_quadrature() {
        for u in [0.0, 0.3, 3.99, 4.01, 11.0, 250.0] {
            let j = cosine_moments(u);
            for (k, &jk) in j.iter().enumerate() {
                let q = integrate_with_breaks(|t| t.powi(k as i32) * (u * t).cos(), &[0.0, 0.5, 1.0], 1e-14).unwrap();
                assert!((jk - q).abs() < 1e-12, "u={u} k={k}: {jk} vs {q}");
            }
        }
    }

    #[test]
    fn plancherel_sandwich() {
        let d = ErrorDensity::laplace(0.3).unwrap();
        let beta = d.beta();
        for h in [0.05, 0.1, 0.2, 0.4] {
            let l2 = kernel_l2_squared(&smooth(), &d, h).unwrap();
            let lower = 1.0 / (PI * d.c_upper() * h.powf(2.0 * beta));
            let upper = (1.0 + 1.0 / (h * h)).powf(beta) / (PI * d.c_lower());
            assert!(lower <= l2 && l2 <= upper, "h={h}: {lower} ≤ {l2} ≤ {upper}");
        }
        for a in [0.5, 1.0, 3.0, 14.0] {
            let d = ErrorDensity::laplace(a).unwrap();
            for h in [0.05, 0.1, 0.2, 0.4] {
                let l2 = kernel_l2_squared(&smooth(), &d, h).unwrap();
                assert!(l2 <= (1.0 + 1.0 / (h * h)).powf(beta) / (PI * d.c_lower()));
            }
        }
    }

    #[test]
    fn laplace_tail_bound_is_stable() {
        // ∫_{|z|>A} K((z-x)/h;h)² dz ≤ 𝒞·2A/(A²-x²)·h^{2-2β}; fit 𝒞 at one
        // bandwidth and check the ratio stays bounded across the others.
        let d = ErrorDensity::laplace(1.0).unwrap();
        let a = 2.0;
        let ratio = |h: f64| {
            let t = KernelTable::build(&smooth(), &d, h, 1 << 15, 400.0 / h).unwrap();
            let mut worst: f64 = 0.0;
            for x in [0.0, 0.5, 1.0] {
                let tail = |lo: f64, hi: f64| {
                    let n = 20_000;
                    let dz = (hi - lo) / n as f64;
                    (0..n).map(|i| lo + (i as f64 + 0.5) * dz).map(|z| t.eval((z - x) / h).unwrap().powi(2)).sum::<f64>() * dz
                };
                let reach = 300.0 * h;
                let v = tail(a, x + reach) + tail(x - reach, -a);
                let bound = 2.0 * a / (a * a - x * x) * h.powf(2.0 - 2.0 * d.beta());
                worst = worst.max(v / bound);
            }
            worst
        };
        let fitted = ratio(0.2);
        for h in [0.1, 0.4] {
            let r = ratio(h);
            assert!(r <= 10.0 * fitted.max(1e-12), "h={h}: ratio {r} vs fitted {fitted}");
        }
    }

    #[test]
    fn sup_weighted_kernel_is_stable_in_h() {
        let d = ErrorDensity::laplace(1.0).unwrap();
        let stat = |h: f64| {
            let t = KernelTable::build(&smooth(), &d, h, DEFAULT_GRID_LEN, 200.0).unwrap();
            t.grid().iter().zip(t.values()).map(|(u, k)| (u * k).abs()).fold(0.0, f64::max) * h.powf(d.beta())
        };
        let base = stat(0.2);
        for h in [0.1, 0.4] {
            let s = stat(h);
            assert!(s <= 4.0 * base && s >= base / 4.0, "h={h}: {s} vs {base}");
        }
    }

    #[test]
    fn cache_reuses_tables() {
        let cache = KernelCache::new();
        let d = ErrorDensity::laplace(1.0).unwrap();
        let a = cache.get_or_build(&smooth(), &d, 0.3, 1024, 20.0).unwrap();
        let b = cache.get_or_build(&smooth(), &d, 0.3, 1024, 20.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let _ = cache.get_or_build(&smooth(), &d, 0.31, 1024, 20.0).unwrap();
        assert_eq!(cache.len(), 2);
    }

    proptest! {
        #[test]
        fn taper_bounded_and_symmetric(t in -3.0f64..3.0, d in 0.05f64..0.95) {
            for shape in [TaperShape::SmoothPoly, TaperShape::DampedCutoff, TaperShape::SmoothDamped] {
                let s = TaperSpec::new(d, shape).unwrap();
                let v = s.phi_k(t);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, s.phi_k(-t));
                if t.abs() <= d && shape == TaperShape::SmoothPoly {
                    prop_assert_eq!(v, 1.0);
                }
                if t.abs() > 1.0 {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
}
