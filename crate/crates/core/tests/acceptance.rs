//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs at full scale by default (R = 500 repetitions, M = 250 draws). Set
//! `ACCEPTANCE_SMOKE=1` for the reduced gate (R = 150, ±5 pp on criterion 1).

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use berkson::bands::{make_eval_grid, BandEngine, BandRequest};
use berkson::estimator::{estimate_g, RegressionSample};
use berkson::seed::derive_seed;
use berkson::simulation::{generate_sample, preset, run_scenario, signal_eval, Scenario, ScenarioReport, Signal};
use berkson::variance::estimate_nu;
use berkson::{ErrorDensity, FixedDesign, KernelTable, TaperSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROOT_SEED: u64 = 2024;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let step = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * step);
    }
    s * step / 3.0
}

/// `m(t) = Φ_k(t)/Φ_Δ(t/h)` for a Laplace mixture written out directly.
fn deconvolution_ratio(t: f64, h: f64, taper: &TaperSpec, a: f64, lambda: f64, mu: f64) -> f64 {
    let s = t / h;
    let phi_delta = (1.0 - lambda + lambda * (mu * s).cos()) / (1.0 + (s / a).powi(2));
    taper.phi_k(t) / phi_delta
}

/// `K(u;h) = (1/π) ∫₀¹ cos(tu) m(t) dt` by composite Simpson on a fine grid.
fn kernel_by_simpson(u: f64, h: f64, taper: &TaperSpec, a: f64, lambda: f64, mu: f64) -> f64 {
    let intervals = 20_000 + (40.0 * u.abs()) as usize * 20;
    simpson(|t| (t * u).cos() * deconvolution_ratio(t, h, taper, a, lambda, mu), 0.0, 1.0, intervals) / PI
}

/// Moments `E g(w+Δ)^p` for a bump signal and Laplace(a) errors.
fn laplace_moment(signal: &Signal, a: f64, w: f64, p: i32) -> f64 {
    let centers = signal.centers();
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5 - w;
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5 - w;
    let f = |d: f64| signal_eval(signal, w + d).powi(p) * 0.5 * a * (-a * d.abs()).exp();
    if lo < 0.0 && hi > 0.0 {
        simpson(&f, lo, 0.0, 2000) + simpson(&f, 0.0, hi, 2000)
    } else {
        simpson(&f, lo, hi, 4000)
    }
}

fn nu2(signal: &Signal, a: f64, sigma: f64, w: f64) -> f64 {
    let m1 = laplace_moment(signal, a, w, 1);
    let m2 = laplace_moment(signal, a, w, 2);
    m2 - m1 * m1 + sigma * sigma
}

fn scenario(name: &str, reps: usize) -> Scenario {
    Scenario { reps, draws: 250, seed: ROOT_SEED, ..preset(name).expect("preset exists") }
}

fn within_rel(value: f64, target: f64, tol: f64) -> bool {
    (value / target - 1.0).abs() <= tol
}

fn criterion_1(report: &ScenarioReport, smoke: bool) -> Verdict {
    let (lo, hi) = if smoke { (0.008, 0.108) } else { (0.028, 0.088) };
    let r = report.rejection_rate;
    verdict(
        r >= lo && r <= hi,
        format!(
            "g_a n=100 σ=σ_δ=0.1 h=0.25 R={} M=250: rejection {:.1}% (MC se {:.1} pp), target [{:.1}%, {:.1}%]",
            report.records.len(),
            100.0 * r,
            100.0 * report.rejection_se(),
            100.0 * lo,
            100.0 * hi
        ),
    )
}

fn criterion_2(ga: &ScenarioReport, gb: &ScenarioReport) -> Verdict {
    let ok_a = within_rel(ga.mean_width, 0.44, 0.15);
    let ok_b = within_rel(gb.mean_width, 0.22, 0.15);
    verdict(
        ok_a && ok_b,
        format!(
            "mean width g_a n=100 σ=0.1: {:.3} (target 0.44 ±15%: {}); g_b n=750 σ=0.05: {:.3} (target 0.22 ±15%: {})",
            ga.mean_width,
            if ok_a { "ok" } else { "out" },
            gb.mean_width,
            if ok_b { "ok" } else { "out" }
        ),
    )
}

fn criterion_3(e100: &ScenarioReport, e750: &ScenarioReport) -> Verdict {
    let checks = [
        within_rel(e100.mean_width, 0.686, 0.25),
        within_rel(e750.mean_width, 0.462, 0.25),
        (e100.rejection_rate - 0.063).abs() <= 0.04,
        (e750.rejection_rate - 0.045).abs() <= 0.04,
    ];
    let mark = |b: bool| if b { "ok" } else { "out" };
    verdict(
        checks.iter().all(|&b| b),
        format!(
            "split-sample band, Laplace mixture: n=100 width {:.3} (0.686 ±25%: {}), rejection {:.1}% (6.3 ±4 pp: {}); n=750 width {:.3} (0.462 ±25%: {}), rejection {:.1}% (4.5 ±4 pp: {})",
            e100.mean_width,
            mark(checks[0]),
            100.0 * e100.rejection_rate,
            mark(checks[2]),
            e750.mean_width,
            mark(checks[1]),
            100.0 * e750.rejection_rate,
            mark(checks[3])
        ),
    )
}

fn criterion_4() -> Verdict {
    let taper = TaperSpec::default();
    let a_n = 2.0 / 3.0;
    let laplace_a = std::f64::consts::SQRT_2 / 0.1;
    let mix_a = std::f64::consts::SQRT_2 / 0.05;
    let laws = [
        ("laplace", ErrorDensity::laplace(laplace_a).unwrap(), laplace_a, 0.0, 0.0),
        ("mixture", ErrorDensity::laplace_mixture(mix_a, 0.2, 0.3).unwrap(), mix_a, 0.2, 0.3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(ROOT_SEED);
    let mut worst: f64 = 0.0;
    for (_, density, a, lambda, mu) in &laws {
        for h in [0.1, 0.25, 0.5] {
            let table = KernelTable::with_defaults(&taper, density, h, a_n).unwrap();
            let reach = 2.0 / (a_n * h);
            for _ in 0..32 {
                let u = rng.random_range(-reach..reach);
                let fast = table.eval(u).unwrap();
                let slow = kernel_by_simpson(u, h, &taper, *a, *lambda, *mu);
                let reference = berkson::kernel_eval(&taper, density, u, h).unwrap();
                worst = worst.max((fast - slow).abs()).max((fast - reference).abs());
            }
        }
    }
    verdict(
        worst <= 1e-6,
        format!("FFT table vs quadrature, 32 arguments × h ∈ {{0.1, 0.25, 0.5}} × {{Laplace, mixture}}: max error {worst:.2e} (tolerance 1e-6)"),
    )
}

fn criterion_5() -> Verdict {
    let (n, a_n, h, sigma) = (4000, 0.5, 0.1, 0.1);
    let a = std::f64::consts::SQRT_2 / 0.1;
    let beta = 2.0;
    let (c_upper, c_lower) = ((a * a).max(1.0), (a * a).min(1.0));
    let signal = Signal::GA;
    let density = ErrorDensity::laplace(a).unwrap();
    let design = FixedDesign::regular(n, a_n).unwrap();
    let table = KernelTable::with_defaults(&TaperSpec::default(), &density, h, a_n).unwrap();
    let nu2_design: Vec<f64> = design.points().iter().map(|&w| nu2(&signal, a, sigma, w)).collect();
    let scale = 1.0 / (n as f64 * a_n * h.powf(1.0 + 2.0 * beta));
    let mut all = true;
    let mut parts = Vec::new();
    for x in [0.0, 0.3, 0.6] {
        let var: f64 = design
            .points()
            .iter()
            .zip(design.weights())
            .zip(&nu2_design)
            .map(|((&w, &om), &v)| (om * table.eval((w - x) / h).unwrap() / h).powi(2) * v)
            .sum();
        let nu2_x = nu2(&signal, a, sigma, x);
        let lower = nu2_x / (c_upper * PI) * scale;
        let upper = 2.0 * nu2_x / (c_lower * PI) * scale;
        let ok = var >= lower && var <= upper;
        all &= ok;
        parts.push(format!("x={x}: {var:.3e} in [{lower:.3e}, {upper:.3e}] {}", if ok { "ok" } else { "out" }));
    }
    verdict(all, format!("variance sandwich, Laplace σ_δ=0.1, n=4000, aₙ=0.5, h=0.1: {}", parts.join("; ")))
}

fn criterion_6() -> Verdict {
    let (n, a_n) = (4000, 0.5);
    let a = std::f64::consts::SQRT_2 / 0.1;
    let signal = Signal::GA;
    let density = ErrorDensity::laplace(a).unwrap();
    let design = FixedDesign::regular(n, a_n).unwrap();
    let gamma: Vec<f64> = design.points().iter().map(|&w| laplace_moment(&signal, a, w, 1)).collect();
    let xs: Vec<f64> = (0..=100).map(|i| -0.5 + i as f64 / 100.0).collect();
    let errors: Vec<f64> = [0.4, 0.2, 0.1]
        .iter()
        .map(|&h| {
            let table = KernelTable::with_defaults(&TaperSpec::default(), &density, h, a_n).unwrap();
            xs.iter()
                .map(|&x| {
                    let mean: f64 = design
                        .points()
                        .iter()
                        .zip(design.weights())
                        .zip(&gamma)
                        .map(|((&w, &om), &g)| om * g * table.eval((w - x) / h).unwrap())
                        .sum::<f64>()
                        / h;
                    (mean - signal_eval(&signal, x)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    verdict(
        errors[1] < errors[0] && errors[2] < errors[1],
        format!("sup bias on [-0.5, 0.5], g_a, Laplace σ_δ=0.1, n=4000: h=0.4 {:.3e}, h=0.2 {:.3e}, h=0.1 {:.3e}", errors[0], errors[1], errors[2]),
    )
}

fn criterion_7() -> Verdict {
    let s = preset("ga-100-0.1").unwrap();
    let density = s.density.build().unwrap();
    let h = s.kernel_bandwidth().unwrap().unwrap();
    let design = Arc::new(FixedDesign::regular(s.n, s.a_n).unwrap());
    let table = Arc::new(KernelTable::with_defaults(&s.taper, &density, h, s.a_n).unwrap());
    let engine = BandEngine::for_interval(Arc::clone(&design), s.interval, Arc::clone(&table)).unwrap();
    let beta = density.beta();
    let factor = (s.n as f64 * s.a_n * h.powf(1.0 + 2.0 * beta)).sqrt() / h;
    let coeffs: Vec<f64> = design.weights().iter().map(|w| factor * w).collect();
    let grid = &engine.grid().points;
    let rows: Vec<usize> = (0..5).map(|i| i * (grid.len() - 1) / 4).collect();
    let draws = 20_000;
    let values = engine.process_draws(&coeffs, None, &rows, draws, ROOT_SEED);
    let mut worst: f64 = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        let exact: f64 = design
            .points()
            .iter()
            .zip(&coeffs)
            .map(|(&w, &c)| (c * table.eval((w - grid[i]) / h).unwrap()).powi(2))
            .sum();
        let mean = values.iter().map(|v| v[r]).sum::<f64>() / draws as f64;
        let var = values.iter().map(|v| (v[r] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        worst = worst.max((var / exact - 1.0).abs());
    }
    verdict(worst <= 0.03, format!("multiplier process variance over {draws} draws at 5 grid points: max relative gap {:.2}% (tolerance 3%)", 100.0 * worst))
}

fn criterion_8() -> Verdict {
    let s = preset("ga-100-0.1").unwrap();
    let density = s.density.build().unwrap();
    let h = s.kernel_bandwidth().unwrap().unwrap();
    let design = Arc::new(FixedDesign::regular(s.n, s.a_n).unwrap());
    let table = Arc::new(KernelTable::with_defaults(&s.taper, &density, h, s.a_n).unwrap());
    let engine = BandEngine::for_interval(Arc::clone(&design), s.interval, Arc::clone(&table)).unwrap();
    let sample = generate_sample(&s, Arc::clone(&design), &density, derive_seed(ROOT_SEED, 0));
    let other = generate_sample(&s, Arc::clone(&design), &density, derive_seed(ROOT_SEED, 1));
    let request = |alpha: f64, seed: u64| BandRequest { interval: s.interval, alpha, draws: 250, h, seed };
    let mut failures = Vec::new();

    let b05 = engine.band_auto(&sample, &request(0.05, 1), None).unwrap();
    let asym = b05
        .grid
        .iter()
        .enumerate()
        .map(|(i, _)| ((b05.upper[i] - b05.ghat[i]) - (b05.ghat[i] - b05.lower[i])).abs())
        .fold(0.0, f64::max);
    if asym > 1e-12 {
        failures.push(format!("symmetry {asym:.1e}"));
    }

    let b10 = engine.band_auto(&sample, &request(0.10, 1), None).unwrap();
    let b01 = engine.band_auto(&sample, &request(0.01, 1), None).unwrap();
    let nested = (0..b10.grid.len()).all(|i| {
        b01.lower[i] <= b05.lower[i] && b05.lower[i] <= b10.lower[i] && b10.upper[i] <= b05.upper[i] && b05.upper[i] <= b01.upper[i]
    });
    if !nested {
        failures.push("α-nesting".into());
    }

    let bound = berkson::bands::grid_spacing_bound(s.n, s.a_n, h);
    let grid = make_eval_grid(s.interval, s.n, s.a_n, h).unwrap();
    let max_gap = grid.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_gap > bound * (1.0 + 1e-12) {
        failures.push(format!("grid spacing {max_gap:.3e} > {bound:.3e}"));
    }

    let again = engine.band_auto(&sample, &request(0.05, 1), None).unwrap();
    let reseeded = engine.band_auto(&sample, &request(0.05, 2), None).unwrap();
    if again != b05 || reseeded.quantile == b05.quantile {
        failures.push("seed determinism".into());
    }

    let (c1, c2) = (1.7, -0.4);
    let combo = RegressionSample::new(
        Arc::clone(&design),
        sample.responses().iter().zip(other.responses()).map(|(y, z)| c1 * y + c2 * z).collect(),
    )
    .unwrap();
    let e1 = estimate_g(&sample, h, &grid.points, &table).unwrap().values;
    let e2 = estimate_g(&other, h, &grid.points, &table).unwrap().values;
    let e12 = estimate_g(&combo, h, &grid.points, &table).unwrap().values;
    let scale = e1.iter().chain(&e2).map(|v| v.abs()).fold(1.0, f64::max);
    let lin = (0..e12.len()).map(|i| (e12[i] - (c1 * e1[i] + c2 * e2[i])).abs()).fold(0.0, f64::max) / scale;
    if lin > 1e-10 {
        failures.push(format!("linearity {lin:.1e}"));
    }

    let h_v = berkson::variance::default_h_v(s.interval, s.n);
    let nu = estimate_nu(&sample, h_v, s.interval, None).unwrap();
    let fine: Vec<f64> = (0..=1000).map(|i| s.interval.0 + (s.interval.1 - s.interval.0) * i as f64 / 1000.0).collect();
    let below = nu.eval_many(&fine).unwrap().iter().any(|&v| v < nu.floor());
    if below {
        failures.push("ν̂ below floor".into());
    }

    let passed = failures.is_empty();
    verdict(
        passed,
        if passed {
            format!("symmetry, α-nesting, spacing {max_gap:.3e} ≤ {bound:.3e}, seed determinism, linearity ({lin:.1e}), ν̂ ≥ floor")
        } else {
            format!("violations: {}", failures.join(", "))
        },
    )
}

fn main() {
    let smoke = std::env::var("ACCEPTANCE_SMOKE").is_ok_and(|v| v != "0");
    let reps = if smoke { 150 } else { 500 };
    let mut results: Vec<(usize, Verdict, f64)> = Vec::new();
    let timed = |f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed().as_secs_f64())
    };

    let t = Instant::now();
    let ga = run_scenario(&scenario("ga-100-0.1", reps)).expect("g_a scenario runs");
    let t_ga = t.elapsed().as_secs_f64();
    results.push((1, criterion_1(&ga, smoke), t_ga));

    let t = Instant::now();
    let gb = run_scenario(&scenario("gb-750-0.05", reps)).expect("g_b scenario runs");
    results.push((2, criterion_2(&ga, &gb), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let e100 = run_scenario(&scenario("ext-100", reps)).expect("extension n=100 runs");
    let e750 = run_scenario(&scenario("ext-750", reps)).expect("extension n=750 runs");
    results.push((3, criterion_3(&e100, &e750), t.elapsed().as_secs_f64()));

    for (k, f) in [(4, criterion_4 as fn() -> Verdict), (5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8)] {
        let (v, secs) = timed(&f);
        results.push((k, v, secs));
    }

    let mut failed = 0;
    for (k, v, secs) in &results {
        println!("[{}] criterion {k}: {} ({secs:.1}s)", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
