//! `--config` files and their merge under explicit flags.

use std::fs;
use std::path::Path;

use anyq::{
    Format, Granularity, HalfKind, InitMethod, IntRange, QuantConfig, ScalePrecision, Weighting,
};
use serde::Deserialize;

use crate::args::{Emit, QuantFlags};
use crate::error::CliError;

/// Learner knobs; absent fields keep their defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerOverrides {
    pub init: Option<InitMethod>,
    pub max_iters: Option<usize>,
    pub rel_tol: Option<f64>,
    pub restarts: Option<usize>,
    pub weighting: Option<Weighting>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageOverrides {
    pub lut: Option<HalfKind>,
    pub scales: Option<ScalePrecision>,
}

/// Contents of a `--config` file. Every key is optional; a value given on
/// the command line wins over the same key here.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format: Option<Format>,
    pub formats: Option<Vec<Format>>,
    pub group_size: Option<usize>,
    pub symmetric: Option<bool>,
    pub seed: Option<u64>,
    pub module: Option<String>,
    pub tile_k: Option<usize>,
    pub samples: Option<usize>,
    pub emit: Option<Emit>,
    pub repeats: Option<usize>,
    pub int_range: Option<IntRange>,
    #[serde(default)]
    pub learner: LearnerOverrides,
    #[serde(default)]
    pub storage: StorageOverrides,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage("--config", format!("{}: {e}", path.display())))
    }
}

/// Builds the quantization config for `format` from flags over `file`.
pub fn quant_config(format: Format, flags: &QuantFlags, file: &FileConfig) -> Result<QuantConfig, CliError> {
    let group_size = flags.group_size.or(file.group_size).unwrap_or(anyq::config::DEFAULT_GROUP_SIZE);
    let granularity = match group_size {
        0 => Granularity::Rowwise,
        1 => {
            return Err(CliError::usage(
                "--group-size",
                "must be 0 (one scale per row) or at least 2, got 1",
            ))
        }
        g => Granularity::Groupwise(g),
    };
    let base = QuantConfig::int(4, anyq::config::DEFAULT_GROUP_SIZE).with_granularity(granularity);
    let mut cfg = format
        .apply(&base)
        .with_symmetric(flags.symmetric || file.symmetric.unwrap_or(false))
        .with_seed(flags.seed.or(file.seed).unwrap_or(0));
    if let Some(r) = file.int_range {
        cfg.int_range = r;
    }
    let l = &file.learner;
    cfg.learner.init = l.init.unwrap_or(cfg.learner.init);
    cfg.learner.max_iters = l.max_iters.unwrap_or(cfg.learner.max_iters);
    cfg.learner.rel_tol = l.rel_tol.unwrap_or(cfg.learner.rel_tol);
    cfg.learner.restarts = l.restarts.unwrap_or(cfg.learner.restarts);
    cfg.learner.weighting = l.weighting.unwrap_or(cfg.learner.weighting);
    cfg.storage.lut = file.storage.lut.unwrap_or(cfg.storage.lut);
    cfg.storage.scales = file.storage.scales.unwrap_or(cfg.storage.scales);
    // Only the learner and storage settings can come solely from the file.
    cfg.validate().map_err(|e| CliError::usage("--config", e))?;
    Ok(cfg)
}

/// Worker cap from `ANYQ_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("ANYQ_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::usage("ANYQ_THREADS", e)),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::usage("ANYQ_THREADS", format!("expected a positive integer, got '{v}'"))),
        },
    }
}
