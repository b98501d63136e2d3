//! Nonparametric regression under Berkson measurement error on a fixed
//! design: deconvolution estimation of the regression function, simultaneous
//! confidence bands from a Gaussian multiplier bootstrap, bandwidth selection
//! and a Monte Carlo harness for coverage studies.

pub mod bands;
pub mod bandwidth;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod noise;
pub mod quad;
pub mod seed;
pub mod simulation;
pub mod variance;

pub use bands::{build_band, build_band_extension, BandEngine, BandRequest, BandResult, EvalGrid, NuSource};
pub use bandwidth::{lepski_select, undersmooth, BandwidthRule, BandwidthUnits, LepskiConfig, LepskiOutcome};
pub use design::{FixedDesign, SplitMask};
pub use error::{Error, Result};
pub use kernel::{kernel_eval, phi_k, KernelCache, KernelTable, TaperShape, TaperSpec};
pub use simulation::{export_report, generate_sample, preset, run_scenario, signal_eval, Scenario, ScenarioReport, Signal};
pub use noise::{DensitySpec, ErrorDensity, NoiseKind, SmoothnessClass};
