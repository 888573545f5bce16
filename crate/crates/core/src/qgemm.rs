//! `y = x · Wᵀ` with quantized weights: a reference that dequantizes first,
//! a fused kernel that dequantizes through a small per-group table inside
//! the reduction loop, and a timing harness.
//!
//! Every output element is accumulated in `f32` in ascending `k`, and every
//! weight value goes through [`affine`], so the fused kernel agrees with the
//! reference bit for bit on every path and layout.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Format, Granularity, QuantConfig, DEFAULT_GROUP_SIZE};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pack::{read_code, to_ktiled};
use crate::quantize::quantize;
use crate::rng::Rng;
use crate::scaling::{affine, group_run};
use crate::tensor::{Layout, QuantizedTensor};

/// Batch sizes up to this use the weight-stationary path.
pub const NARROW_MAX_M: usize = 8;

/// Columns decoded at a time by the wide path.
const DECODE_CHUNK: usize = 64;

/// Which inner loop the fused kernel runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPath {
    /// Narrow for `M <= 8`, wide otherwise.
    #[default]
    Auto,
    /// Each weight is decoded once and applied to every input row.
    Narrow,
    /// A chunk of a weight row is decoded into a local buffer, then every
    /// input row is reduced against it.
    Wide,
}

/// Shapes and layout of one fused multiplication: `x` is `m x k`, the
/// weights are `n x k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmPlan {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub layout: Layout,
    pub path: KernelPath,
}

impl GemmPlan {
    /// The plan for multiplying `m` input rows by `qt`.
    pub fn new(m: usize, qt: &QuantizedTensor) -> Self {
        Self {
            m,
            n: qt.rows(),
            k: qt.cols(),
            layout: qt.layout(),
            path: KernelPath::Auto,
        }
    }

    pub fn with_path(mut self, path: KernelPath) -> Self {
        self.path = path;
        self
    }

    fn narrow(&self) -> bool {
        match self.path {
            KernelPath::Auto => self.m <= NARROW_MAX_M,
            KernelPath::Narrow => true,
            KernelPath::Wide => false,
        }
    }

    fn check(&self, x: &Matrix, qt: &QuantizedTensor) -> Result<()> {
        if self.layout != qt.layout() {
            return Err(Error::ShapeMismatch(format!(
                "plan expects layout {:?}, tensor is {:?}",
                self.layout,
                qt.layout()
            )));
        }
        if (self.m, self.k) != x.shape() || (self.n, self.k) != qt.shape() {
            return Err(Error::ShapeMismatch(format!(
                "plan is {}x{}x{}, inputs are {:?} and {:?}",
                self.m,
                self.n,
                self.k,
                x.shape(),
                qt.shape()
            )));
        }
        Ok(())
    }
}

/// Ground truth: dequantize all of `W`, then multiply in ascending `k`.
pub fn gemm_reference(x: &Matrix, qt: &QuantizedTensor) -> Result<Matrix> {
    if x.cols() != qt.cols() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, weights have {} columns",
            x.cols(),
            qt.cols()
        )));
    }
    x.matmul_transposed(&qt.dequantize())
}

/// Locates code `(row, col)` in the packed buffer.
struct CodeAddress {
    rows: usize,
    cols: usize,
    bits: usize,
    layout: Layout,
    row_bytes: usize,
    tile_bytes: usize,
}

impl CodeAddress {
    fn new(qt: &QuantizedTensor) -> Self {
        let (rows, cols) = qt.shape();
        let bits = usize::from(qt.config().bits);
        let (row_bytes, tile_bytes) = match qt.layout() {
            Layout::RowMajor => ((cols * bits).div_ceil(8), 0),
            Layout::KTiled(t) => (0, (rows * t.min(cols) * bits).div_ceil(8)),
        };
        Self {
            rows,
            cols,
            bits,
            layout: qt.layout(),
            row_bytes,
            tile_bytes,
        }
    }

    /// Start of the contiguous run holding `row`'s codes from `col` on, as
    /// (bit offset, run length).
    #[inline]
    fn run(&self, row: usize, col: usize) -> (usize, usize) {
        match self.layout {
            Layout::RowMajor => (row * self.row_bytes * 8 + col * self.bits, self.cols - col),
            Layout::KTiled(t) => {
                let tile = col / t;
                let k0 = tile * t;
                let width = t.min(self.cols - k0);
                let bit = tile * self.tile_bytes * 8 + (row * width + col - k0) * self.bits;
                debug_assert!(row < self.rows);
                (bit, k0 + width - col)
            }
        }
    }
}

/// Streams row `row`'s dequantized weights in ascending column order, in
/// runs that share one scale group and one contiguous code span.
fn for_each_weight_run(
    qt: &QuantizedTensor,
    addr: &CodeAddress,
    row: usize,
    mut f: impl FnMut(usize, &[f32]),
) {
    let cfg = qt.config();
    let bits = cfg.bits;
    let mask = (1u32 << bits) - 1;
    let lut = qt.row_levels(row);
    let scales = qt.scales();
    let granularity = scales.granularity();
    let bytes = qt.packed();
    let mut table = [0.0f32; 256];
    let mut buf = [0.0f32; DECODE_CHUNK];
    let mut col = 0;
    while col < addr.cols {
        let g = scales.group_of(row, col);
        let (alpha, beta) = (scales.alphas()[g], scales.betas()[g]);
        let group_len = group_run(granularity, addr.cols, col);
        // A per-group table pays off only when the run is longer than it.
        let use_table = group_len > lut.len();
        if use_table {
            for (t, &v) in table.iter_mut().zip(lut) {
                *t = affine(alpha, beta, v);
            }
        }
        let group_end = col + group_len;
        while col < group_end {
            let (bit0, contiguous) = addr.run(row, col);
            let len = contiguous.min(group_end - col).min(DECODE_CHUNK);
            for (p, slot) in buf[..len].iter_mut().enumerate() {
                let c = usize::from(read_code(bytes, bit0 + p * usize::from(bits), bits, mask));
                *slot = if use_table {
                    table[c]
                } else {
                    affine(alpha, beta, lut[c])
                };
            }
            f(col, &buf[..len]);
            col += len;
        }
    }
}

/// Output column `row` (one weight row against every input row).
fn fused_row(x: &Matrix, qt: &QuantizedTensor, addr: &CodeAddress, row: usize, narrow: bool) -> Vec<f32> {
    let m = x.rows();
    let mut acc = vec![0.0f32; m];
    if narrow {
        for_each_weight_run(qt, addr, row, |col, ws| {
            for (p, &w) in ws.iter().enumerate() {
                for (a, xi) in acc.iter_mut().zip(x.row_iter()) {
                    *a += xi[col + p] * w;
                }
            }
        });
    } else {
        for_each_weight_run(qt, addr, row, |col, ws| {
            for (a, xi) in acc.iter_mut().zip(x.row_iter()) {
                let mut s = *a;
                for (&xv, &w) in xi[col..col + ws.len()].iter().zip(ws) {
                    s += xv * w;
                }
                *a = s;
            }
        });
    }
    acc
}

/// Fused multiplication: codes are decoded and dequantized on the fly; the
/// dense weight matrix never exists. Parallel over weight rows.
pub fn gemm_fused(x: &Matrix, qt: &QuantizedTensor, plan: &GemmPlan) -> Result<Matrix> {
    plan.check(x, qt)?;
    let addr = CodeAddress::new(qt);
    let narrow = plan.narrow();
    let columns: Vec<Vec<f32>> = (0..plan.n)
        .into_par_iter()
        .map(|row| fused_row(x, qt, &addr, row, narrow))
        .collect();
    let mut out = vec![0.0f32; plan.m * plan.n];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[i * plan.n + j] = v;
        }
    }
    Ok(Matrix::from_computed(plan.m, plan.n, out))
}

/// One line of the timing report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// `MxNxK`.
    pub shape: String,
    pub format: String,
    pub layout: String,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub bytes_per_weight: f64,
}

impl BenchRow {
    /// Weight bytes streamed per second at the median time.
    pub fn weight_bytes_per_sec(&self, n: usize, k: usize) -> f64 {
        (n * k) as f64 * self.bytes_per_weight / (self.median_ns.max(1) as f64 * 1e-9)
    }
}

pub const BENCH_CSV_HEADER: &str = "shape,format,layout,median_ns,p10_ns,p90_ns,bytes_per_weight";

/// Parses `MxNxK` (e.g. `1x1024x1024`).
pub fn parse_shape(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("shape '{s}' is not MxNxK")))?;
    match parts[..] {
        [m, n, k] if m > 0 && n > 0 && k > 0 => Ok((m, n, k)),
        _ => Err(Error::InvalidConfig(format!("shape '{s}' is not MxNxK with positive sizes"))),
    }
}

fn layout_name(layout: Layout) -> String {
    match layout {
        Layout::RowMajor => "row_major".into(),
        Layout::KTiled(t) => format!("ktiled{t}"),
    }
}

fn percentiles(mut samples: Vec<u64>) -> (u64, u64, u64) {
    samples.sort_unstable();
    let at = |p: f64| samples[((samples.len() - 1) as f64 * p).round() as usize];
    (at(0.5), at(0.1), at(0.9))
}

fn time_repeats(repeats: usize, mut f: impl FnMut() -> Result<Matrix>) -> Result<(u64, u64, u64)> {
    std::hint::black_box(f()?);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        std::hint::black_box(f()?);
        samples.push(t0.elapsed().as_nanos() as u64);
    }
    Ok(percentiles(samples))
}

/// Tile width used for the k-tiled rows of the benchmark.
pub const BENCH_TILE_K: usize = 64;

/// Times dense `f32` multiplication and the fused kernel for every
/// (shape, format, layout). Weights and inputs are seeded Gaussians; only
/// the timings vary between runs.
pub fn bench(shapes: &[(usize, usize, usize)], formats: &[Format], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &(m, n, k) in shapes {
        let shape = format!("{m}x{n}x{k}");
        let mut rng = Rng::new(seed);
        let w = Matrix::from_fn(n, k, |_, _| rng.normal() as f32)?;
        let x = Matrix::from_fn(m, k, |_, _| rng.normal() as f32)?;
        let (median_ns, p10_ns, p90_ns) = time_repeats(repeats, || x.matmul_transposed(&w))?;
        rows.push(BenchRow {
            shape: shape.clone(),
            format: "fp32".into(),
            layout: "dense".into(),
            median_ns,
            p10_ns,
            p90_ns,
            bytes_per_weight: 4.0,
        });
        for &format in formats {
            let cfg = format.apply(
                &QuantConfig::int(4, DEFAULT_GROUP_SIZE)
                    .with_granularity(Granularity::Groupwise(DEFAULT_GROUP_SIZE))
                    .with_seed(seed),
            );
            let row_major = quantize(&w, &cfg, None)?;
            let tiled = to_ktiled(&row_major, BENCH_TILE_K)?;
            for qt in [&row_major, &tiled] {
                let plan = GemmPlan::new(m, qt);
                let (median_ns, p10_ns, p90_ns) = time_repeats(repeats, || gemm_fused(&x, qt, &plan))?;
                rows.push(BenchRow {
                    shape: shape.clone(),
                    format: format.name().into(),
                    layout: layout_name(qt.layout()),
                    median_ns,
                    p10_ns,
                    p90_ns,
                    bytes_per_weight: qt.bits_per_entry() / 8.0,
                });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.shape, r.format, r.layout, r.median_ns, r.p10_ns, r.p90_ns, r.bytes_per_weight
        );
    }
    out
}
