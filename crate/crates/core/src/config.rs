//! Quantization configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default group size for groupwise scaling.
pub const DEFAULT_GROUP_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    /// Consecutive integers `[-2^(n-1), 2^(n-1) - 1]` (or the shifted variant).
    IntGrid,
    /// E2M1 floating point values.
    Fp4,
    /// NormalFloat-4 quantiles.
    Nf4,
    /// A learned lookup table per weight row.
    AnyN,
}

/// Which weights share one `(alpha, beta)` scale pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Tensorwise,
    Rowwise,
    Columnwise,
    /// Runs of `g` consecutive elements along a row. The final run of a row
    /// is shorter when `g` does not divide the row length.
    Groupwise(usize),
    /// `b x b` tiles; edge tiles may be smaller.
    Blockwise(usize),
}

/// Convention for the integer grid extremes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntRange {
    /// `[-2^(n-1), 2^(n-1) - 1]`, e.g. `[-8, 7]` for 4 bits.
    #[default]
    TwosComplement,
    /// `[-(2^(n-1) - 1), 2^(n-1)]`, e.g. `[-7, 8]` for 4 bits.
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    KMeansPlusPlus,
    Random,
    /// Evenly spaced seeds across the row's scaled range.
    IntGridSeed,
    /// The nf4 table mapped affinely onto the row's scaled range.
    Nf4Seed,
}

/// Per-sample weights used by the k-means M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    WeightsOnly,
    WeightsTimesActivations,
    WeightsTimesActivationsTimesScales,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfKind {
    #[default]
    F16,
    Bf16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePrecision {
    #[default]
    F16,
    F32,
}

impl ScalePrecision {
    pub fn bits(self) -> usize {
        match self {
            ScalePrecision::F16 => 16,
            ScalePrecision::F32 => 32,
        }
    }
}

/// Storage precision of LUT entries and scale metadata in packed files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StorageConfig {
    pub lut: HalfKind,
    pub scales: ScalePrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub init: InitMethod,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub weighting: Weighting,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            init: InitMethod::KMeansPlusPlus,
            max_iters: 100,
            rel_tol: 1e-6,
            restarts: 1,
            weighting: Weighting::WeightsTimesActivationsTimesScales,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) || !self.rel_tol.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be a finite non-negative number, got {}",
                self.rel_tol
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub codebook: CodebookKind,
    pub granularity: Granularity,
    pub symmetric: bool,
    #[serde(default)]
    pub int_range: IntRange,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub seed: u64,
}

impl QuantConfig {
    fn base(bits: u8, codebook: CodebookKind, group_size: usize) -> Self {
        Self {
            bits,
            codebook,
            granularity: Granularity::Groupwise(group_size),
            symmetric: false,
            int_range: IntRange::default(),
            learner: LearnerConfig::default(),
            storage: StorageConfig::default(),
            seed: 0,
        }
    }

    pub fn int(bits: u8, group_size: usize) -> Self {
        Self::base(bits, CodebookKind::IntGrid, group_size)
    }

    pub fn fp4(group_size: usize) -> Self {
        Self::base(4, CodebookKind::Fp4, group_size)
    }

    pub fn nf4(group_size: usize) -> Self {
        Self::base(4, CodebookKind::Nf4, group_size)
    }

    pub fn any(bits: u8, group_size: usize) -> Self {
        Self::base(bits, CodebookKind::AnyN, group_size)
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_learner(mut self, learner: LearnerConfig) -> Self {
        self.learner = learner;
        self
    }

    /// Number of codes, `2^bits`.
    pub fn levels(&self) -> usize {
        1usize << self.bits
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.bits, 2 | 3 | 4 | 8) {
            return Err(Error::UnsupportedBits(self.bits));
        }
        if matches!(self.codebook, CodebookKind::Fp4 | CodebookKind::Nf4) && self.bits != 4 {
            return Err(Error::InvalidConfig(format!(
                "{:?} requires 4 bits, got {}",
                self.codebook, self.bits
            )));
        }
        match self.granularity {
            Granularity::Groupwise(g) if g < 2 => {
                return Err(Error::InvalidConfig(format!("group size must be >= 2, got {g}")))
            }
            Granularity::Blockwise(0) => {
                return Err(Error::InvalidConfig("block size must be >= 1".into()))
            }
            _ => {}
        }
        if self.codebook == CodebookKind::AnyN {
            if !matches!(self.granularity, Granularity::Rowwise | Granularity::Groupwise(_)) {
                return Err(Error::InvalidConfig(format!(
                    "learned lookup tables are per row and need rowwise or groupwise scaling, got {:?}",
                    self.granularity
                )));
            }
            self.learner.validate()?;
        }
        Ok(())
    }
}

/// Named quantization formats accepted on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Int4,
    Fp4,
    Nf4,
    Any4,
    Any3,
    Any2,
}

impl Format {
    pub const ALL: [Format; 6] = [
        Format::Int4,
        Format::Fp4,
        Format::Nf4,
        Format::Any4,
        Format::Any3,
        Format::Any2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Format::Int4 => "int4",
            Format::Fp4 => "fp4",
            Format::Nf4 => "nf4",
            Format::Any4 => "any4",
            Format::Any3 => "any3",
            Format::Any2 => "any2",
        }
    }

    /// The named format whose bit width and codebook `cfg` uses, if any.
    pub fn of(cfg: &QuantConfig) -> Option<Format> {
        Format::ALL.into_iter().find(|f| {
            let c = f.apply(cfg);
            (c.bits, c.codebook) == (cfg.bits, cfg.codebook)
        })
    }

    /// Applies this format's bit width and codebook to `base`, keeping the
    /// rest (granularity, symmetry, learner, storage, seed).
    pub fn apply(self, base: &QuantConfig) -> QuantConfig {
        let (bits, codebook) = match self {
            Format::Int4 => (4, CodebookKind::IntGrid),
            Format::Fp4 => (4, CodebookKind::Fp4),
            Format::Nf4 => (4, CodebookKind::Nf4),
            Format::Any4 => (4, CodebookKind::AnyN),
            Format::Any3 => (3, CodebookKind::AnyN),
            Format::Any2 => (2, CodebookKind::AnyN),
        };
        QuantConfig {
            bits,
            codebook,
            ..*base
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Format::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown format '{s}'")))
    }
}
