//! Weight-only post-training quantization with learned per-row lookup
//! tables (any4, any3, any2) and fixed-codebook baselines (int4, fp4, nf4).
//!
//! Pipeline: [`scaling`] maps weight groups into codebook range,
//! [`quantize`] rounds against a fixed table or, for learned formats, runs
//! the calibration-weighted k-means of [`learner`] on each row; [`pack`]
//! serializes the result, [`qgemm`] multiplies with it and [`eval`]
//! measures the damage.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod codebooks;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod learner;
pub mod matrix;
pub mod pack;
pub mod qgemm;
pub mod quantize;
pub mod rng;
pub mod scaling;
pub mod tensor;

pub use calibration::{collect_stats, load_stats, save_stats, ActivationStats, ToyModel};
pub use codebooks::{storage_bits_per_entry, Codebook};
pub use config::{
    CodebookKind, Format, Granularity, HalfKind, InitMethod, IntRange, LearnerConfig, QuantConfig,
    ScalePrecision, StorageConfig, Weighting,
};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use qgemm::{gemm_fused, gemm_reference, GemmPlan};
pub use quantize::{quantize, with_threads};
pub use rng::Rng;
pub use scaling::ScaleSet;
pub use tensor::{Layout, Levels, QuantizedTensor};
