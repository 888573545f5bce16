//! Entry point that dispatches on the codebook kind.

use crate::codebooks::{codebook_for, round_to_codebook};
use crate::config::{CodebookKind, QuantConfig};
use crate::error::{Error, Result};
use crate::learner::quantize_any;
use crate::matrix::Matrix;
use crate::scaling::{compute_scales, scale_weights};
use crate::tensor::{Levels, QuantizedTensor};

/// Round-to-nearest against a fixed table (int grid, fp4, nf4).
pub fn quantize_fixed(w: &Matrix, cfg: &QuantConfig) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let cb = codebook_for(cfg)?.ok_or_else(|| {
        Error::InvalidConfig("learned formats are quantized with quantize_any".into())
    })?;
    let scales = compute_scales(w, cfg, cb.qmin(), cb.qmax())?;
    let scaled = scale_weights(w, &scales)?;
    let levels = cb.scaled_levels(cfg.symmetric);
    let codes = round_to_codebook(&scaled, &levels);
    QuantizedTensor::from_codes(*cfg, w.rows(), w.cols(), &codes, Levels::Shared(levels), scales)
}

/// Quantizes with whichever method the config names. `stats` only affects
/// learned formats.
pub fn quantize(w: &Matrix, cfg: &QuantConfig, stats: Option<&[f32]>) -> Result<QuantizedTensor> {
    match cfg.codebook {
        CodebookKind::AnyN => quantize_any(w, cfg, stats),
        _ => quantize_fixed(w, cfg),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
