//! The quantized tensor: packed codes, per-group scales and dequantization
//! levels (one shared table, or one learned table per row).

use serde::{Deserialize, Serialize};

use crate::codebooks::{codebook_for, storage_bits_per_entry};
use crate::config::{CodebookKind, QuantConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pack::{self, half_round_trip, scale_round_trip};
use crate::scaling::{affine, ScaleSet};

/// Physical order of codes in the packed buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Row after row, each row padded to a byte boundary.
    #[default]
    RowMajor,
    /// The reduction dimension is cut into tiles of `tile_k` columns. Tiles
    /// are stored in ascending order; within a tile, the `tile_k` codes of
    /// row 0 come first, then row 1, and so on. Each tile block is padded to
    /// a byte boundary and the last tile may be narrower.
    KTiled(usize),
}

impl Layout {
    /// Codes per independently padded segment.
    pub(crate) fn segment_len(self, rows: usize, cols: usize) -> usize {
        match self {
            Layout::RowMajor => cols,
            Layout::KTiled(t) => rows * t.min(cols),
        }
    }
}

/// Scaled-space dequantization values.
#[derive(Debug, Clone, PartialEq)]
pub enum Levels {
    /// One table for the whole tensor (fixed codebooks).
    Shared(Vec<f32>),
    /// `rows` tables of `width` entries each, ascending within a row.
    PerRow { width: usize, values: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    cfg: QuantConfig,
    layout: Layout,
    packed: Vec<u8>,
    levels: Levels,
    scales: ScaleSet,
}

/// Scaled-space table for a fixed codebook config.
pub(crate) fn shared_levels(cfg: &QuantConfig) -> Result<Vec<f32>> {
    let cb = codebook_for(cfg)?
        .ok_or_else(|| Error::InvalidConfig("learned formats have no shared table".into()))?;
    Ok(cb.scaled_levels(cfg.symmetric))
}

impl QuantizedTensor {
    /// Builds a row-major tensor from logical (row-major) codes.
    pub fn from_codes(
        cfg: QuantConfig,
        rows: usize,
        cols: usize,
        codes: &[u8],
        levels: Levels,
        scales: ScaleSet,
    ) -> Result<Self> {
        let packed = pack::pack_codes(codes, cfg.bits, cols)?;
        Self::from_packed(cfg, rows, cols, Layout::RowMajor, packed, levels, scales)
    }

    /// Assembles a tensor from already packed codes and validates every
    /// invariant: shapes, code ranges, table sizes and scale validity.
    pub fn from_packed(
        cfg: QuantConfig,
        rows: usize,
        cols: usize,
        layout: Layout,
        packed: Vec<u8>,
        levels: Levels,
        scales: ScaleSet,
    ) -> Result<Self> {
        cfg.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if let Layout::KTiled(0) = layout {
            return Err(Error::InvalidConfig("tile_k must be >= 1".into()));
        }
        if scales.shape() != (rows, cols)
            || scales.granularity() != cfg.granularity
            || scales.symmetric() != cfg.symmetric
        {
            return Err(Error::Invariant("scale set does not match tensor shape or config".into()));
        }
        let seg = layout.segment_len(rows, cols);
        let expected = pack::packed_len(rows * cols, cfg.bits, seg);
        if packed.len() != expected {
            return Err(Error::Invariant(format!(
                "packed code buffer is {} bytes, expected {expected}",
                packed.len()
            )));
        }
        let table_len = match (&levels, cfg.codebook) {
            (Levels::PerRow { width, values }, CodebookKind::AnyN) => {
                if *width != cfg.levels() || values.len() != rows * width {
                    return Err(Error::Invariant(format!(
                        "expected {rows} lookup tables of {} entries",
                        cfg.levels()
                    )));
                }
                for (r, lut) in values.chunks_exact(*width).enumerate() {
                    if lut.iter().any(|v| !v.is_finite()) || lut.windows(2).any(|p| p[0] > p[1]) {
                        return Err(Error::Invariant(format!("lookup table of row {r} is not sorted and finite")));
                    }
                }
                *width
            }
            (Levels::Shared(t), kind) if kind != CodebookKind::AnyN => {
                if *t != shared_levels(&cfg)? {
                    return Err(Error::Invariant("shared table does not match codebook".into()));
                }
                t.len()
            }
            _ => return Err(Error::Invariant("level table kind does not match codebook".into())),
        };
        let qt = Self {
            rows,
            cols,
            cfg,
            layout,
            packed,
            levels,
            scales,
        };
        if table_len < cfg.levels() {
            for (index, code) in qt.physical_codes()?.into_iter().enumerate() {
                if usize::from(code) >= table_len {
                    return Err(Error::CodeOutOfRange {
                        index,
                        code: code.into(),
                        len: table_len,
                    });
                }
            }
        }
        Ok(qt)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn config(&self) -> &QuantConfig {
        &self.cfg
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn packed(&self) -> &[u8] {
        &self.packed
    }

    pub fn levels(&self) -> &Levels {
        &self.levels
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    /// Dequantization table used by row `i`.
    #[inline]
    pub fn row_levels(&self, i: usize) -> &[f32] {
        match &self.levels {
            Levels::Shared(t) => t,
            Levels::PerRow { width, values } => &values[i * width..(i + 1) * width],
        }
    }

    /// Learned tables, `rows x 2^n`, if this is a learned format.
    pub fn luts(&self) -> Option<&[f32]> {
        match &self.levels {
            Levels::PerRow { values, .. } => Some(values),
            Levels::Shared(_) => None,
        }
    }

    /// Codes in physical (layout) order.
    pub(crate) fn physical_codes(&self) -> Result<Vec<u8>> {
        pack::unpack_codes(
            &self.packed,
            self.cfg.bits,
            self.rows * self.cols,
            self.layout.segment_len(self.rows, self.cols),
        )
    }

    /// Codes in logical row-major order, whatever the layout.
    pub fn codes(&self) -> Vec<u8> {
        let physical = self.physical_codes().expect("validated at construction");
        match self.layout {
            Layout::RowMajor => physical,
            Layout::KTiled(_) => {
                let order = pack::layout_order(self.layout, self.rows, self.cols);
                let mut logical = vec![0u8; physical.len()];
                for (p, &l) in order.iter().enumerate() {
                    logical[l] = physical[p];
                }
                logical
            }
        }
    }

    /// Scaled-space value of every element (row-major).
    pub fn level_values(&self) -> Matrix {
        let codes = self.codes();
        let mut out = Vec::with_capacity(codes.len());
        for (i, row) in codes.chunks_exact(self.cols).enumerate() {
            let lut = self.row_levels(i);
            out.extend(row.iter().map(|&c| lut[c as usize]));
        }
        Matrix::from_computed(self.rows, self.cols, out)
    }

    /// Reconstructs the dense weights: `alpha * level[code] + beta`.
    pub fn dequantize(&self) -> Matrix {
        let codes = self.codes();
        let mut out = Vec::with_capacity(codes.len());
        for (i, row) in codes.chunks_exact(self.cols).enumerate() {
            let lut = self.row_levels(i);
            for (j, &c) in row.iter().enumerate() {
                let g = self.scales.group_of(i, j);
                out.push(affine(self.scales.alphas()[g], self.scales.betas()[g], lut[c as usize]));
            }
        }
        Matrix::from_computed(self.rows, self.cols, out)
    }

    pub fn bits_per_entry(&self) -> f64 {
        storage_bits_per_entry(&self.cfg, self.rows, self.cols)
    }

    /// The tensor as it will be after a write/read cycle: learned tables and
    /// scales rounded to their storage precision. Shared tables are derived
    /// from the config and never stored.
    pub fn narrowed(&self) -> Result<Self> {
        let levels = match &self.levels {
            Levels::Shared(t) => Levels::Shared(t.clone()),
            Levels::PerRow { width, values } => Levels::PerRow {
                width: *width,
                values: values
                    .iter()
                    .map(|&v| half_round_trip(v, self.cfg.storage.lut))
                    .collect::<Result<_>>()?,
            },
        };
        let prec = self.cfg.storage.scales;
        let scales = self.scales.map_values(|v| scale_round_trip(v, prec))?;
        Ok(Self {
            levels,
            scales,
            ..self.clone()
        })
    }

    pub(crate) fn with_layout(&self, layout: Layout, packed: Vec<u8>) -> Self {
        Self {
            layout,
            packed,
            ..self.clone()
        }
    }
}
