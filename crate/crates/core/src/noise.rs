//! Known Berkson error laws: characteristic functions, densities, decay
//! constants and exact samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Which decay condition on the characteristic function the law satisfies.
///
/// `S` additionally bounds the derivative by `⟨t⟩^{-β-1}`; `W` only by
/// `⟨t⟩^{-β}` and admits oscillating transforms such as Laplace mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmoothnessClass {
    S,
    W,
    None,
}

/// Parametric family of the error law. `a` is the Laplace rate: the density is
/// `(a/2)·exp(-a|x|)` with standard deviation `√2/a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Laplace { a: f64 },
    LaplaceMixture { a: f64, lambda: f64, mu: f64 },
    NoError,
}

/// A fully validated error density together with its decay constants
/// `c_lower·⟨t⟩^{-β} ≤ |Φ(t)| ≤ c_upper·⟨t⟩^{-β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDensity {
    kind: NoiseKind,
    beta: f64,
    c_lower: f64,
    c_upper: f64,
    class: SmoothnessClass,
}

/// Laplace rate giving standard deviation `sigma_delta`.
pub fn laplace_rate_for_sd(sigma_delta: f64) -> f64 {
    std::f64::consts::SQRT_2 / sigma_delta
}

impl ErrorDensity {
    pub fn laplace(a: f64) -> Result<Self> {
        check_rate(a)?;
        Ok(Self {
            kind: NoiseKind::Laplace { a },
            beta: 2.0,
            c_lower: (a * a).min(1.0),
            c_upper: (a * a).max(1.0),
            class: SmoothnessClass::S,
        })
    }

    /// Laplace law parametrised by its standard deviation.
    pub fn laplace_with_sd(sigma_delta: f64) -> Result<Self> {
        if !(sigma_delta.is_finite() && sigma_delta > 0.0) {
            return Err(invalid("sigma_delta", format!("must be positive, got {sigma_delta}")));
        }
        Self::laplace(laplace_rate_for_sd(sigma_delta))
    }

    /// Symmetric three-component mixture `λ/2·L(x-μ) + (1-λ)·L(x) + λ/2·L(x+μ)`
    /// of Laplace densities with common rate `a`.
    pub fn laplace_mixture(a: f64, lambda: f64, mu: f64) -> Result<Self> {
        check_rate(a)?;
        if !(lambda > 0.0 && lambda < 0.5) {
            return Err(invalid("lambda", format!("must lie in (0, 1/2), got {lambda}")));
        }
        if !(mu.is_finite() && mu != 0.0) {
            return Err(invalid("mu", format!("must be finite and nonzero, got {mu}")));
        }
        Ok(Self {
            kind: NoiseKind::LaplaceMixture { a, lambda, mu },
            beta: 2.0,
            c_lower: (1.0 - 2.0 * lambda) * (a * a).min(1.0),
            c_upper: (a * a).max(1.0),
            class: SmoothnessClass::W,
        })
    }

    /// Degenerate law `Δ ≡ 0`; the deconvolution kernel reduces to the plain
    /// band-limited kernel.
    pub fn no_error() -> Self {
        Self {
            kind: NoiseKind::NoError,
            beta: 0.0,
            c_lower: 1.0,
            c_upper: 1.0,
            class: SmoothnessClass::None,
        }
    }

    pub fn from_kind(kind: NoiseKind) -> Result<Self> {
        match kind {
            NoiseKind::Laplace { a } => Self::laplace(a),
            NoiseKind::LaplaceMixture { a, lambda, mu } => Self::laplace_mixture(a, lambda, mu),
            NoiseKind::NoError => Ok(Self::no_error()),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn c_lower(&self) -> f64 {
        self.c_lower
    }
    pub fn c_upper(&self) -> f64 {
        self.c_upper
    }
    pub fn smoothness_class(&self) -> SmoothnessClass {
        self.class
    }

    /// Derivative constant of the decay condition where a closed form is known:
    /// `C_S = max(2/a², 2a²)` for Laplace and `C_W = λμ + 4` for the unit-rate
    /// mixture. Recorded only; no computation depends on it.
    pub fn derivative_constant(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::Laplace { a } => Some((2.0 / (a * a)).max(2.0 * a * a)),
            NoiseKind::LaplaceMixture { a, lambda, mu } if a == 1.0 => Some(lambda * mu + 4.0),
            _ => None,
        }
    }

    /// Characteristic function `Φ(t) = E[e^{itΔ}]`, real and even for every
    /// supported law.
    pub fn charfn(&self, t: f64) -> f64 {
        match self.kind {
            NoiseKind::Laplace { a } => laplace_charfn(a, t),
            NoiseKind::LaplaceMixture { a, lambda, mu } => {
                (1.0 - lambda + lambda * (mu * t).cos()) * laplace_charfn(a, t)
            }
            NoiseKind::NoError => 1.0,
        }
    }

    /// Density `f_Δ(x)`. The degenerate law has none.
    pub fn density_eval(&self, x: f64) -> Result<f64> {
        match self.kind {
            NoiseKind::Laplace { a } => Ok(laplace_density(a, x)),
            NoiseKind::LaplaceMixture { a, lambda, mu } => Ok(0.5 * lambda * laplace_density(a, x - mu)
                + (1.0 - lambda) * laplace_density(a, x)
                + 0.5 * lambda * laplace_density(a, x + mu)),
            NoiseKind::NoError => Err(Error::NoDensity("no_error")),
        }
    }

    /// Points where the density is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            NoiseKind::Laplace { .. } => vec![0.0],
            NoiseKind::LaplaceMixture { mu, .. } => vec![-mu.abs(), 0.0, mu.abs()],
            NoiseKind::NoError => vec![0.0],
        }
    }

    /// Half-width of an interval carrying all but ~e^{-40} of the mass.
    pub fn effective_support(&self) -> f64 {
        match self.kind {
            NoiseKind::Laplace { a } => 40.0 / a,
            NoiseKind::LaplaceMixture { a, mu, .. } => 40.0 / a + mu.abs(),
            NoiseKind::NoError => 0.0,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self.kind {
            NoiseKind::Laplace { a } => std::f64::consts::SQRT_2 / a,
            NoiseKind::LaplaceMixture { a, lambda, mu } => (2.0 / (a * a) + lambda * mu * mu).sqrt(),
            NoiseKind::NoError => 0.0,
        }
    }

    /// `count` i.i.d. draws, deterministic in `seed`.
    pub fn sample_errors(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    /// Draws from an existing generator: inverse CDF for each Laplace variate,
    /// preceded by a component draw for the mixture.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.draw(rng)).collect()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Laplace { a } => laplace_inverse_cdf(a, rng.random::<f64>()),
            NoiseKind::LaplaceMixture { a, lambda, mu } => {
                let c: f64 = rng.random();
                let shift = if c < 0.5 * lambda {
                    mu
                } else if c < lambda {
                    -mu
                } else {
                    0.0
                };
                shift + laplace_inverse_cdf(a, rng.random::<f64>())
            }
            NoiseKind::NoError => 0.0,
        }
    }
}

fn check_rate(a: f64) -> Result<()> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(invalid("a", format!("Laplace rate must be positive, got {a}")))
    }
}

fn laplace_charfn(a: f64, t: f64) -> f64 {
    let r = t / a;
    1.0 / (1.0 + r * r)
}

fn laplace_density(a: f64, x: f64) -> f64 {
    0.5 * a * (-a * x.abs()).exp()
}

// `u` uniform on [0, 1).
fn laplace_inverse_cdf(a: f64, u: f64) -> f64 {
    let v = u - 0.5;
    -v.signum() * (1.0 - 2.0 * v.abs()).ln() / a
}

/// Configuration form: `{kind, a | sigma_delta, lambda, mu}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub kind: String,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub sigma_delta: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
}

impl DensitySpec {
    pub fn laplace_sd(sigma_delta: f64) -> Self {
        Self { kind: "laplace".into(), a: None, sigma_delta: Some(sigma_delta), lambda: None, mu: None }
    }

    /// Resolves the rate: explicit `a` wins, otherwise `√2/sigma_delta`.
    fn rate(&self) -> Result<f64> {
        match (self.a, self.sigma_delta) {
            (Some(a), _) => Ok(a),
            (None, Some(sd)) if sd > 0.0 => Ok(laplace_rate_for_sd(sd)),
            (None, Some(sd)) => Err(invalid("sigma_delta", format!("must be positive, got {sd}"))),
            (None, None) => Err(invalid("a", "either `a` or `sigma_delta` is required")),
        }
    }

    pub fn build(&self) -> Result<ErrorDensity> {
        match self.kind.to_ascii_lowercase().as_str() {
            "laplace" => ErrorDensity::laplace(self.rate()?),
            "laplace_mixture" | "mixture" => ErrorDensity::laplace_mixture(
                self.rate()?,
                self.lambda.ok_or_else(|| invalid("lambda", "required for a mixture"))?,
                self.mu.ok_or_else(|| invalid("mu", "required for a mixture"))?,
            ),
            "none" | "no_error" => Ok(ErrorDensity::no_error()),
            other => Err(invalid("density", format!("unknown kind `{other}` (laplace, laplace_mixture, none)"))),
        }
    }
}
