//! Fixed dequantization tables (int grid, fp4, nf4), nearest-value rounding,
//! and storage accounting.

use serde::Serialize;

use crate::config::{CodebookKind, IntRange, QuantConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scaling::group_count;

/// NormalFloat-4 levels: standard-normal quantiles at evenly spaced
/// probabilities between 0.5 and 0.9677083 on each side, normalized to
/// `[-1, 1]`, with an exact zero. Seven negative levels, eight positive.
pub const NF4_VALUES: [f32; 16] = [
    -1.0,
    -0.696_192_9,
    -0.525_073_05,
    -0.394_917_5,
    -0.284_441_35,
    -0.184_773_43,
    -0.091_049_99,
    0.0,
    0.079_580_33,
    0.160_930_17,
    0.246_112_29,
    0.337_915_18,
    0.440_709_8,
    0.562_616_94,
    0.722_956_7,
    1.0,
];

/// Probability of the outermost nf4 quantile.
pub const NF4_OFFSET: f64 = 0.967_708_3;

/// E2M1 values with a single zero, ascending.
pub const FP4_VALUES: [f32; 15] = [
    -6.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0,
];

/// A sorted table of dequantization values indexed by code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Codebook {
    kind: CodebookKind,
    bits: u8,
    values: Vec<f32>,
}

impl Codebook {
    /// Wraps a strictly increasing table for an `bits`-wide code.
    pub fn new(kind: CodebookKind, bits: u8, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.len() > 1usize << bits {
            return Err(Error::Invariant(format!(
                "codebook of {} entries does not fit {bits}-bit codes",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Invariant("codebook must be finite and strictly increasing".into()));
        }
        Ok(Self { kind, bits, values })
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn qmin(&self) -> f32 {
        self.values[0]
    }

    pub fn qmax(&self) -> f32 {
        self.values[self.values.len() - 1]
    }

    pub fn value(&self, code: u8) -> Option<f32> {
        self.values.get(code as usize).copied()
    }

    pub fn nearest(&self, x: f32) -> u8 {
        nearest_index(&self.values, x) as u8
    }

    /// Levels in the scaled space produced by the matching scale set.
    ///
    /// Asymmetric scaling maps each group onto `[0, qmax - qmin]`, so the
    /// table is shifted by `-qmin`; symmetric scaling keeps it as is.
    pub fn scaled_levels(&self, symmetric: bool) -> Vec<f32> {
        if symmetric {
            self.values.clone()
        } else {
            let lo = self.qmin();
            self.values.iter().map(|v| v - lo).collect()
        }
    }
}

/// Index of the entry of sorted `table` nearest to `x`; ties go to the lower
/// index. Values beyond either end clamp to the extreme entries.
#[inline]
pub fn nearest_index(table: &[f32], x: f32) -> usize {
    let p = table.partition_point(|v| *v < x);
    if p == 0 {
        return 0;
    }
    if p == table.len() {
        let v = table[p - 1];
        return table.partition_point(|t| *t < v);
    }
    let below = f64::from(x) - f64::from(table[p - 1]);
    let above = f64::from(table[p]) - f64::from(x);
    if below <= above {
        // First of any run of equal entries.
        let v = table[p - 1];
        table[..p].partition_point(|t| *t < v)
    } else {
        p
    }
}

/// Integer grid `[-2^(n-1), 2^(n-1) - 1]`, or `[-(2^(n-1) - 1), 2^(n-1)]`
/// under [`IntRange::Shifted`].
pub fn int_grid(bits: u8, range: IntRange) -> Result<Codebook> {
    if !matches!(bits, 2 | 3 | 4 | 8) {
        return Err(Error::UnsupportedBits(bits));
    }
    let half = 1i32 << (bits - 1);
    let lo = match range {
        IntRange::TwosComplement => -half,
        IntRange::Shifted => -half + 1,
    };
    let values = (0..(1i32 << bits)).map(|i| (lo + i) as f32).collect();
    Codebook::new(CodebookKind::IntGrid, bits, values)
}

/// E2M1 table. Negative zero has no entry of its own; code 15 is unused.
pub fn fp4_table() -> Codebook {
    Codebook::new(CodebookKind::Fp4, 4, FP4_VALUES.to_vec()).expect("static fp4 table")
}

pub fn nf4_table() -> Codebook {
    Codebook::new(CodebookKind::Nf4, 4, NF4_VALUES.to_vec()).expect("static nf4 table")
}

/// The fixed table a config quantizes against. Learned formats have none.
pub fn codebook_for(cfg: &QuantConfig) -> Result<Option<Codebook>> {
    Ok(match cfg.codebook {
        CodebookKind::IntGrid => Some(int_grid(cfg.bits, cfg.int_range)?),
        CodebookKind::Fp4 => Some(fp4_table()),
        CodebookKind::Nf4 => Some(nf4_table()),
        CodebookKind::AnyN => None,
    })
}

/// Rounds every element to the code of its nearest `table` entry.
pub fn round_to_codebook(ws: &Matrix, table: &[f32]) -> Vec<u8> {
    ws.data().iter().map(|&x| nearest_index(table, x) as u8).collect()
}

/// Amortized bits per weight: code bits, plus one scale and one zero point
/// per group, plus `2^n` 16-bit LUT entries per row for learned formats.
pub fn storage_bits_per_entry(cfg: &QuantConfig, rows: usize, cols: usize) -> f64 {
    let entries = (rows * cols) as f64;
    let scale_bits = (group_count(cfg.granularity, rows, cols) * 2 * cfg.storage.scales.bits()) as f64;
    let lut_bits = lut_bits_total(cfg, rows) as f64;
    f64::from(cfg.bits) + scale_bits / entries + lut_bits / entries
}

/// LUT overhead in bits per weight on its own.
pub fn lut_bits_per_entry(cfg: &QuantConfig, rows: usize, cols: usize) -> f64 {
    lut_bits_total(cfg, rows) as f64 / (rows * cols) as f64
}

fn lut_bits_total(cfg: &QuantConfig, rows: usize) -> usize {
    match cfg.codebook {
        CodebookKind::AnyN => rows * cfg.levels() * 16,
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_grids() {
        let g4 = int_grid(4, IntRange::TwosComplement).unwrap();
        assert_eq!(g4.values(), (-8..=7).map(|v| v as f32).collect::<Vec<_>>());
        let g2 = int_grid(2, IntRange::TwosComplement).unwrap();
        assert_eq!(g2.values(), &[-2.0, -1.0, 0.0, 1.0]);
        let g8 = int_grid(8, IntRange::TwosComplement).unwrap();
        assert_eq!((g8.qmin(), g8.qmax(), g8.len()), (-128.0, 127.0, 256));
        let s4 = int_grid(4, IntRange::Shifted).unwrap();
        assert_eq!((s4.qmin(), s4.qmax()), (-7.0, 8.0));
        assert!(matches!(int_grid(5, IntRange::TwosComplement), Err(Error::UnsupportedBits(5))));
    }

    #[test]
    fn fp4_shape() {
        let t = fp4_table();
        assert_eq!(t.qmax(), 6.0);
        assert_eq!(t.qmin(), -t.qmax());
        assert_eq!(t.values().iter().filter(|v| **v == 0.0).count(), 1);
    }

    #[test]
    fn fp4_matches_e2m1_enumeration() {
        // Decode every E2M1 bit pattern: 1 sign, 2 exponent (bias 1), 1 mantissa.
        let mut vals: Vec<f32> = (0u8..16)
            .map(|b| {
                let sign = if b & 0b1000 != 0 { -1.0 } else { 1.0 };
                let exp = (b >> 1) & 0b11;
                let man = f32::from(b & 1);
                let mag = if exp == 0 {
                    man * 0.5
                } else {
                    (1.0 + man * 0.5) * 2f32.powi(i32::from(exp) - 1)
                };
                sign * mag
            })
            .map(|v| if v == 0.0 { 0.0 } else { v })
            .collect();
        vals.sort_by(f32::total_cmp);
        vals.dedup();
        assert_eq!(vals, FP4_VALUES);
    }

    #[test]
    fn nf4_shape() {
        let t = nf4_table();
        assert_eq!(t.values()[0], -1.0);
        assert_eq!(t.values()[15], 1.0);
        assert_eq!(t.values().iter().filter(|v| **v == 0.0).count(), 1);
        assert_eq!(t.values().iter().filter(|v| **v < 0.0).count(), 7);
    }

    #[test]
    fn rounding_examples() {
        let g = int_grid(4, IntRange::TwosComplement).unwrap();
        let ws = Matrix::from_rows(&[[0.4, 0.6, 0.5, -0.5]]).unwrap();
        let codes = round_to_codebook(&ws, g.values());
        let vals: Vec<f32> = codes.iter().map(|&c| g.value(c).unwrap()).collect();
        assert_eq!(vals, vec![0.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn rounding_fixed_points_and_clamping() {
        let t = nf4_table();
        for (i, &v) in t.values().iter().enumerate() {
            assert_eq!(t.nearest(v) as usize, i);
        }
        assert_eq!(t.nearest(-100.0), 0);
        assert_eq!(t.nearest(100.0), 15);
    }

    #[test]
    fn duplicate_entries_pick_first() {
        let table = [0.0, 1.0, 1.0, 2.0];
        assert_eq!(nearest_index(&table, 1.0), 1);
        assert_eq!(nearest_index(&table, 1.2), 1);
        assert_eq!(nearest_index(&table, 0.9), 1);
    }

    #[test]
    fn storage_accounting() {
        let any4 = QuantConfig::any(4, 128);
        assert_eq!(storage_bits_per_entry(&any4, 4096, 4096), 4.3125);
        assert_eq!(storage_bits_per_entry(&QuantConfig::int(4, 128), 4096, 4096), 4.25);
        assert_eq!(lut_bits_per_entry(&any4, 1, 4096), 0.0625);
        assert_eq!(storage_bits_per_entry(&QuantConfig::nf4(128), 8, 4096), 4.25);
    }
}
