//! Bit packing, 16-bit narrowing, the k-tiled layout and the ANYQ file format.
//!
//! # ANYQ layout
//!
//! All integers little-endian. A fixed 96-byte header is followed by three
//! sections at the offsets it declares:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `ANYQ` |
//! | 4  | 2 | version (1) |
//! | 6  | 2 | header length (96) |
//! | 8  | 4 | rows `N` |
//! | 12 | 4 | cols `K` |
//! | 16 | 1 | bits |
//! | 17 | 1 | codebook: 0 int grid, 1 fp4, 2 nf4, 3 learned |
//! | 18 | 1 | symmetric flag |
//! | 19 | 1 | int range: 0 two's complement, 1 shifted |
//! | 20 | 1 | granularity: 0 tensor, 1 row, 2 column, 3 group, 4 block |
//! | 21 | 1 | layout: 0 row-major, 1 k-tiled |
//! | 22 | 1 | LUT precision: 0 fp16, 1 bf16 |
//! | 23 | 1 | scale precision: 0 fp16, 1 fp32 |
//! | 24 | 4 | group or block size (0 otherwise) |
//! | 28 | 4 | tile_k (0 for row-major) |
//! | 32 | 8 | seed |
//! | 40 | 1 | learner init |
//! | 41 | 1 | learner weighting |
//! | 42 | 2 | reserved, zero |
//! | 44 | 4 | learner max_iters |
//! | 48 | 4 | learner restarts |
//! | 52 | 4 | reserved, zero |
//! | 56 | 8 | learner rel_tol (f64) |
//! | 64 | 8 | codes offset |
//! | 72 | 8 | scales offset |
//! | 80 | 8 | LUT offset |
//! | 88 | 8 | total file length |
//!
//! Codes are packed least-significant bits first, each segment (a row, or a
//! whole tile block when k-tiled) padded to a byte boundary. Scales hold all
//! alphas then all betas. The LUT section holds `N * 2^n` 16-bit values for
//! learned formats and is empty otherwise.

use std::fs;
use std::io::Write;
use std::path::Path;

use half::{bf16, f16};

use crate::config::{
    CodebookKind, Granularity, HalfKind, InitMethod, IntRange, LearnerConfig, QuantConfig,
    ScalePrecision, StorageConfig, Weighting,
};
use crate::error::{Error, Result};
use crate::scaling::{group_count, ScaleSet};
use crate::tensor::{shared_levels, Layout, Levels, QuantizedTensor};

pub const MAGIC: [u8; 4] = *b"ANYQ";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 96;

/// Bytes needed for `count` codes of `bits` bits, with every `segment_len`
/// codes padded to a byte boundary.
pub fn packed_len(count: usize, bits: u8, segment_len: usize) -> usize {
    let bits = usize::from(bits);
    let full = count / segment_len;
    let tail = count % segment_len;
    full * (segment_len * bits).div_ceil(8) + (tail * bits).div_ceil(8)
}

/// Packs codes LSB-first: two 4-bit codes per byte (low nibble first), four
/// 2-bit codes per byte, 3-bit codes as a continuous bit stream. Each run of
/// `segment_len` codes starts on a fresh byte.
pub fn pack_codes(codes: &[u8], bits: u8, segment_len: usize) -> Result<Vec<u8>> {
    if !matches!(bits, 2 | 3 | 4 | 8) {
        return Err(Error::UnsupportedBits(bits));
    }
    if segment_len == 0 {
        return Err(Error::InvalidConfig("segment length must be positive".into()));
    }
    let limit = 1u32 << bits;
    let mut out = Vec::with_capacity(packed_len(codes.len(), bits, segment_len));
    for (s, seg) in codes.chunks(segment_len).enumerate() {
        let mut acc: u32 = 0;
        let mut filled = 0u32;
        for (j, &c) in seg.iter().enumerate() {
            if u32::from(c) >= limit {
                return Err(Error::CodeOutOfRange {
                    index: s * segment_len + j,
                    code: c.into(),
                    len: limit as usize,
                });
            }
            acc |= u32::from(c) << filled;
            filled += u32::from(bits);
            while filled >= 8 {
                out.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            out.push(acc as u8);
        }
    }
    Ok(out)
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(bytes: &[u8], bits: u8, count: usize, segment_len: usize) -> Result<Vec<u8>> {
    if !matches!(bits, 2 | 3 | 4 | 8) {
        return Err(Error::UnsupportedBits(bits));
    }
    let need = packed_len(count, bits, segment_len);
    if bytes.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: need - bytes.len(),
        });
    }
    let mask = (1u32 << bits) - 1;
    let seg_bytes = (segment_len * usize::from(bits)).div_ceil(8);
    let mut out = Vec::with_capacity(count);
    let mut remaining = count;
    let mut base = 0usize;
    while remaining > 0 {
        let n = remaining.min(segment_len);
        for j in 0..n {
            out.push(read_code(&bytes[base..], j * usize::from(bits), bits, mask));
        }
        remaining -= n;
        base += seg_bytes;
    }
    Ok(out)
}

#[inline(always)]
pub(crate) fn read_code(bytes: &[u8], bit: usize, bits: u8, mask: u32) -> u8 {
    let byte = bit / 8;
    let shift = bit % 8;
    let mut word = u32::from(bytes[byte]);
    if shift + usize::from(bits) > 8 {
        word |= u32::from(bytes[byte + 1]) << 8;
    }
    ((word >> shift) & mask) as u8
}

/// `order[p]` is the logical row-major index stored at physical position `p`.
pub fn layout_order(layout: Layout, rows: usize, cols: usize) -> Vec<usize> {
    match layout {
        Layout::RowMajor => (0..rows * cols).collect(),
        Layout::KTiled(t) => {
            let mut order = Vec::with_capacity(rows * cols);
            let mut k0 = 0;
            while k0 < cols {
                let w = t.min(cols - k0);
                for i in 0..rows {
                    order.extend((k0..k0 + w).map(|k| i * cols + k));
                }
                k0 += w;
            }
            order
        }
    }
}

/// Re-packs `qt` in the k-tiled layout. Codes are permuted, nothing else
/// changes.
pub fn to_ktiled(qt: &QuantizedTensor, tile_k: usize) -> Result<QuantizedTensor> {
    if tile_k == 0 {
        return Err(Error::InvalidConfig("tile_k must be >= 1".into()));
    }
    relayout(qt, Layout::KTiled(tile_k))
}

pub fn from_ktiled(qt: &QuantizedTensor) -> Result<QuantizedTensor> {
    relayout(qt, Layout::RowMajor)
}

fn relayout(qt: &QuantizedTensor, layout: Layout) -> Result<QuantizedTensor> {
    let (rows, cols) = qt.shape();
    let logical = qt.codes();
    let physical: Vec<u8> = layout_order(layout, rows, cols)
        .into_iter()
        .map(|l| logical[l])
        .collect();
    let packed = pack_codes(&physical, qt.config().bits, layout.segment_len(rows, cols))?;
    Ok(qt.with_layout(layout, packed))
}

/// Narrows to 16 bits with round-to-nearest-even. Values that would round to
/// infinity are rejected.
pub fn narrow_lut(values: &[f32], target: HalfKind) -> Result<Vec<u16>> {
    values
        .iter()
        .map(|&v| {
            let bits = match target {
                HalfKind::F16 => f16::from_f32(v).to_bits(),
                HalfKind::Bf16 => bf16::from_f32(v).to_bits(),
            };
            if !widen_one(bits, target).is_finite() {
                return Err(Error::NarrowingOverflow { value: v });
            }
            Ok(bits)
        })
        .collect()
}

pub fn widen_lut(values: &[u16], target: HalfKind) -> Vec<f32> {
    values.iter().map(|&b| widen_one(b, target)).collect()
}

#[inline]
fn widen_one(bits: u16, target: HalfKind) -> f32 {
    match target {
        HalfKind::F16 => f16::from_bits(bits).to_f32(),
        HalfKind::Bf16 => bf16::from_bits(bits).to_f32(),
    }
}

pub(crate) fn half_round_trip(v: f32, target: HalfKind) -> Result<f32> {
    Ok(widen_one(narrow_lut(&[v], target)?[0], target))
}

pub(crate) fn scale_round_trip(v: f32, prec: ScalePrecision) -> f32 {
    match prec {
        ScalePrecision::F16 => f16::from_f32(v).to_f32(),
        ScalePrecision::F32 => v,
    }
}

fn codebook_tag(k: CodebookKind) -> u8 {
    match k {
        CodebookKind::IntGrid => 0,
        CodebookKind::Fp4 => 1,
        CodebookKind::Nf4 => 2,
        CodebookKind::AnyN => 3,
    }
}

fn init_tag(i: InitMethod) -> u8 {
    match i {
        InitMethod::KMeansPlusPlus => 0,
        InitMethod::Random => 1,
        InitMethod::IntGridSeed => 2,
        InitMethod::Nf4Seed => 3,
    }
}

fn weighting_tag(w: Weighting) -> u8 {
    match w {
        Weighting::WeightsOnly => 0,
        Weighting::WeightsTimesActivations => 1,
        Weighting::WeightsTimesActivationsTimesScales => 2,
    }
}

fn to_u32(field: &'static str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidHeader { field, value: v as u64 })
}

/// Byte sizes of the three payload sections.
fn section_sizes(cfg: &QuantConfig, rows: usize, cols: usize, layout: Layout) -> (usize, usize, usize) {
    let codes = packed_len(rows * cols, cfg.bits, layout.segment_len(rows, cols));
    let scale_bytes = cfg.storage.scales.bits() / 8;
    let scales = group_count(cfg.granularity, rows, cols) * 2 * scale_bytes;
    let luts = match cfg.codebook {
        CodebookKind::AnyN => rows * cfg.levels() * 2,
        _ => 0,
    };
    (codes, scales, luts)
}

/// Exact file size for a tensor of this shape and config.
pub fn file_len(cfg: &QuantConfig, rows: usize, cols: usize, layout: Layout) -> usize {
    let (c, s, l) = section_sizes(cfg, rows, cols, layout);
    HEADER_LEN + c + s + l
}

/// Serializes `qt`. Learned tables and scales are narrowed to their storage
/// precision, so the bytes describe [`QuantizedTensor::narrowed`].
pub fn to_bytes(qt: &QuantizedTensor) -> Result<Vec<u8>> {
    let narrowed = qt.narrowed()?;
    let cfg = qt.config();
    let (rows, cols) = qt.shape();
    let (codes_len, scales_len, luts_len) = section_sizes(cfg, rows, cols, qt.layout());
    let codes_off = HEADER_LEN;
    let scales_off = codes_off + codes_len;
    let luts_off = scales_off + scales_len;
    let total = luts_off + luts_len;

    let (gran_tag, gran_param) = match cfg.granularity {
        Granularity::Tensorwise => (0u8, 0usize),
        Granularity::Rowwise => (1, 0),
        Granularity::Columnwise => (2, 0),
        Granularity::Groupwise(g) => (3, g),
        Granularity::Blockwise(b) => (4, b),
    };
    let (layout_tag, tile_k) = match qt.layout() {
        Layout::RowMajor => (0u8, 0usize),
        Layout::KTiled(t) => (1, t),
    };

    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(HEADER_LEN as u16).to_le_bytes());
    out.extend_from_slice(&to_u32("rows", rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32("cols", cols)?.to_le_bytes());
    out.push(cfg.bits);
    out.push(codebook_tag(cfg.codebook));
    out.push(u8::from(cfg.symmetric));
    out.push(match cfg.int_range {
        IntRange::TwosComplement => 0,
        IntRange::Shifted => 1,
    });
    out.push(gran_tag);
    out.push(layout_tag);
    out.push(match cfg.storage.lut {
        HalfKind::F16 => 0,
        HalfKind::Bf16 => 1,
    });
    out.push(match cfg.storage.scales {
        ScalePrecision::F16 => 0,
        ScalePrecision::F32 => 1,
    });
    out.extend_from_slice(&to_u32("group size", gran_param)?.to_le_bytes());
    out.extend_from_slice(&to_u32("tile_k", tile_k)?.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.push(init_tag(cfg.learner.init));
    out.push(weighting_tag(cfg.learner.weighting));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&to_u32("max_iters", cfg.learner.max_iters)?.to_le_bytes());
    out.extend_from_slice(&to_u32("restarts", cfg.learner.restarts)?.to_le_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.extend_from_slice(&cfg.learner.rel_tol.to_le_bytes());
    for v in [codes_off, scales_off, luts_off, total] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    debug_assert_eq!(out.len(), HEADER_LEN);

    out.extend_from_slice(qt.packed());

    for group in [narrowed.scales().alphas(), narrowed.scales().betas()] {
        for &v in group {
            match cfg.storage.scales {
                ScalePrecision::F16 => out.extend_from_slice(&f16::from_f32(v).to_bits().to_le_bytes()),
                ScalePrecision::F32 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    if let Some(luts) = narrowed.luts() {
        for h in narrow_lut(luts, cfg.storage.lut)? {
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < self.pos + n {
            return Err(Error::Truncated {
                offset: self.buf.len(),
                needed: self.pos + n - self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn bad(field: &'static str, value: impl Into<u64>) -> Error {
    Error::InvalidHeader {
        field,
        value: value.into(),
    }
}

/// Parses and validates an ANYQ buffer.
pub fn from_bytes(buf: &[u8]) -> Result<QuantizedTensor> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::MagicMismatch { found: magic });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = r.u16()?;
    if usize::from(header_len) != HEADER_LEN {
        return Err(bad("header length", header_len));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let bits = r.u8()?;
    let codebook = match r.u8()? {
        0 => CodebookKind::IntGrid,
        1 => CodebookKind::Fp4,
        2 => CodebookKind::Nf4,
        3 => CodebookKind::AnyN,
        v => return Err(bad("codebook", v)),
    };
    let symmetric = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(bad("symmetric", v)),
    };
    let int_range = match r.u8()? {
        0 => IntRange::TwosComplement,
        1 => IntRange::Shifted,
        v => return Err(bad("int range", v)),
    };
    let gran_tag = r.u8()?;
    let layout_tag = r.u8()?;
    let lut = match r.u8()? {
        0 => HalfKind::F16,
        1 => HalfKind::Bf16,
        v => return Err(bad("lut precision", v)),
    };
    let scale_prec = match r.u8()? {
        0 => ScalePrecision::F16,
        1 => ScalePrecision::F32,
        v => return Err(bad("scale precision", v)),
    };
    let gran_param = r.u32()? as usize;
    let tile_k = r.u32()? as usize;
    let granularity = match gran_tag {
        0 => Granularity::Tensorwise,
        1 => Granularity::Rowwise,
        2 => Granularity::Columnwise,
        3 => Granularity::Groupwise(gran_param),
        4 => Granularity::Blockwise(gran_param),
        v => return Err(bad("granularity", v)),
    };
    let layout = match (layout_tag, tile_k) {
        (0, 0) => Layout::RowMajor,
        (1, t) if t > 0 => Layout::KTiled(t),
        (0, t) | (1, t) => return Err(bad("tile_k", t as u64)),
        (v, _) => return Err(bad("layout", v)),
    };
    let seed = r.u64()?;
    let init = match r.u8()? {
        0 => InitMethod::KMeansPlusPlus,
        1 => InitMethod::Random,
        2 => InitMethod::IntGridSeed,
        3 => InitMethod::Nf4Seed,
        v => return Err(bad("init", v)),
    };
    let weighting = match r.u8()? {
        0 => Weighting::WeightsOnly,
        1 => Weighting::WeightsTimesActivations,
        2 => Weighting::WeightsTimesActivationsTimesScales,
        v => return Err(bad("weighting", v)),
    };
    r.take(2)?;
    let max_iters = r.u32()? as usize;
    let restarts = r.u32()? as usize;
    r.take(4)?;
    let rel_tol = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let codes_off = r.u64()?;
    let scales_off = r.u64()?;
    let luts_off = r.u64()?;
    let total = r.u64()?;

    let cfg = QuantConfig {
        bits,
        codebook,
        granularity,
        symmetric,
        int_range,
        learner: LearnerConfig {
            init,
            max_iters,
            rel_tol,
            restarts,
            weighting,
        },
        storage: StorageConfig {
            lut,
            scales: scale_prec,
        },
        seed,
    };
    cfg.validate().map_err(|e| Error::Malformed(format!("header config: {e}")))?;
    if rows == 0 || cols == 0 {
        return Err(bad("shape", 0u64));
    }

    let (codes_len, scales_len, luts_len) = section_sizes(&cfg, rows, cols, layout);
    let expect = [
        ("codes offset", codes_off, HEADER_LEN),
        ("scales offset", scales_off, HEADER_LEN + codes_len),
        ("lut offset", luts_off, HEADER_LEN + codes_len + scales_len),
        ("total length", total, HEADER_LEN + codes_len + scales_len + luts_len),
    ];
    for (field, got, want) in expect {
        if got != want as u64 {
            return Err(bad(field, got));
        }
    }
    if buf.len() < total as usize {
        return Err(Error::Truncated {
            offset: buf.len(),
            needed: total as usize - buf.len(),
        });
    }
    if buf.len() > total as usize {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after declared end",
            buf.len() - total as usize
        )));
    }

    let packed = r.take(codes_len)?.to_vec();
    let groups = group_count(granularity, rows, cols);
    let mut read_scales = |n: usize| -> Result<Vec<f32>> {
        (0..n)
            .map(|_| match scale_prec {
                ScalePrecision::F16 => Ok(f16::from_bits(r.u16()?).to_f32()),
                ScalePrecision::F32 => r.f32(),
            })
            .collect()
    };
    let alphas = read_scales(groups)?;
    let betas = read_scales(groups)?;
    let scales = ScaleSet::from_parts(granularity, rows, cols, symmetric, alphas, betas)?;

    let levels = if codebook == CodebookKind::AnyN {
        let raw: Vec<u16> = (0..rows * cfg.levels()).map(|_| r.u16()).collect::<Result<_>>()?;
        Levels::PerRow {
            width: cfg.levels(),
            values: widen_lut(&raw, lut),
        }
    } else {
        Levels::Shared(shared_levels(&cfg)?)
    };

    QuantizedTensor::from_packed(cfg, rows, cols, layout, packed, levels, scales)
}

/// Writes via a temporary file in the destination directory and renames it
/// into place, so a failed write never leaves a partial file.
pub fn write_file(qt: &QuantizedTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(qt)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    from_bytes(&fs::read(path)?)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place: readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::env::current_dir()?,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Malformed(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nibble_order() {
        assert_eq!(pack_codes(&[1, 2], 4, 2).unwrap(), vec![0x21]);
        assert_eq!(pack_codes(&[0, 1, 2, 3], 2, 4).unwrap(), vec![0b1110_0100]);
    }

    #[test]
    fn three_bit_stream_with_row_padding() {
        // Row of 3 codes = 9 bits -> 2 bytes; two rows -> 4 bytes.
        let codes = [7, 0, 5, 1, 2, 3];
        let packed = pack_codes(&codes, 3, 3).unwrap();
        assert_eq!(packed.len(), 4);
        // 7 | 0<<3 | 5<<6 = 0b1_0100_0111 -> bytes 0x47, 0x01
        assert_eq!(&packed[..2], &[0x47, 0x01]);
        assert_eq!(unpack_codes(&packed, 3, 6, 3).unwrap(), codes);
    }

    #[test]
    fn rejects_out_of_range_codes() {
        assert!(matches!(
            pack_codes(&[0, 16], 4, 2),
            Err(Error::CodeOutOfRange { index: 1, code: 16, .. })
        ));
        assert!(matches!(pack_codes(&[4], 2, 1), Err(Error::CodeOutOfRange { .. })));
    }

    #[test]
    fn unpack_detects_short_buffer() {
        assert!(matches!(unpack_codes(&[0x21], 4, 4, 4), Err(Error::Truncated { .. })));
    }

    #[test]
    fn narrowing_examples() {
        for k in [HalfKind::F16, HalfKind::Bf16] {
            assert_eq!(widen_lut(&narrow_lut(&[1.0], k).unwrap(), k), vec![1.0]);
        }
        let v = 1.0 + 2f32.powi(-10);
        assert_eq!(widen_lut(&narrow_lut(&[v], HalfKind::F16).unwrap(), HalfKind::F16), vec![v]);
        assert_eq!(widen_lut(&narrow_lut(&[v], HalfKind::Bf16).unwrap(), HalfKind::Bf16), vec![1.0]);
        assert!(matches!(
            narrow_lut(&[70000.0], HalfKind::F16),
            Err(Error::NarrowingOverflow { .. })
        ));
        assert!(narrow_lut(&[70000.0], HalfKind::Bf16).is_ok());
    }

    #[test]
    fn ktiled_order() {
        // 2x5, tile 2: tiles [0,1], [2,3], [4].
        let order = layout_order(Layout::KTiled(2), 2, 5);
        assert_eq!(order, vec![0, 1, 5, 6, 2, 3, 7, 8, 4, 9]);
        assert_eq!(layout_order(Layout::KTiled(5), 2, 5), (0..10).collect::<Vec<_>>());
        assert_eq!(layout_order(Layout::KTiled(1), 1, 4), (0..4).collect::<Vec<_>>());
    }

    #[test]
    fn packed_len_counts_padding() {
        assert_eq!(packed_len(10, 3, 5), 4);
        assert_eq!(packed_len(4096, 4, 4096), 2048);
        assert_eq!(packed_len(7, 4, 3), 2 + 2 + 1);
    }
}
