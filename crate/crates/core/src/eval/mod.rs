//! Desk-scale evaluation: synthetic noise, retention of clean data, BLEU,
//! chrF++ and paired bootstrap resampling.

pub mod bootstrap;
pub mod metrics;
pub mod noise;

pub use bootstrap::{paired_bootstrap, BootstrapResult};
pub use metrics::{bleu, chrf_pp, Breakdown, MetricKind, MetricScore};
pub use noise::{inject_noise, retention_metrics, NoiseFlag, NoiseFractions, NoiseManifest, Retention};
