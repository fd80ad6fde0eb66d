//! Correlated random-bit generation from simulated or recorded twin-beam
//! intensity noise: noise model, waveform synthesis, quantile extraction,
//! entropy estimation, reconciliation, hashing and statistical testing.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod condition;
pub mod entropy;
pub mod error;
pub mod extract;
pub mod model;
pub mod pipeline;
pub mod reconcile;
pub mod stats;
pub mod waveform;

pub use bits::{BitSource, BitStream, BitWriter};
pub use condition::{choose_ratio, condition, BlockGeometry};
pub use entropy::{effective_entropy, entropy_curve, EdgeSource, EntropyReport};
pub use error::{Error, ErrorClass, Result};
pub use extract::{encode, fit_bins, BinningScheme};
pub use model::{covariance_matrix, individual_noise, lossy_diff_noise, NoiseModel, SqueezeParams};
pub use pipeline::{run_pipeline, PipelineConfig, RunReport};
pub use reconcile::{common_bits, Granularity, Mask, Reconciled};
pub use stats::{bit_autocorrelation, cross_correlation, run_battery, CorrelationProfile, TestOutcome};
pub use waveform::{synthesize, AcquisitionConfig, TwinWaveform};
