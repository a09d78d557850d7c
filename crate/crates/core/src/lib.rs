//! Koopman spectral analysis of multivariate load time series.
//!
//! The pipeline embeds a load panel in delay coordinates, builds a
//! variable-bandwidth diffusion kernel, approximates Koopman eigenfunctions by
//! a regularized Galerkin method, and uses them for mode decomposition,
//! week-ahead forecasting and (separately) diffusion-potential clustering of
//! stations.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod artifact;
pub mod data;
pub mod embedding;
pub mod error;
pub mod forecast;
pub mod linalg;
pub mod metrics;
pub mod phate;
pub mod pipeline;
pub mod spatiotemporal;
pub mod spectral;
pub mod synth;

pub use num_complex::Complex64 as C64;

pub use data::{LoadPanel, NormScope, NormStats, SplitSpec};
pub use embedding::{BandwidthMode, DelayConfig, DelayGraph, MarkovMatrix};
pub use error::{Error, Result};
pub use forecast::{EvolutionMode, ForecastModel, NoiseSplit};
pub use phate::PhateEmbedding;
pub use spatiotemporal::ModeProjection;
pub use spectral::{KernelEigenbasis, KoopmanBasis};
