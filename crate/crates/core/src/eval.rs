//! Quantization quality: weight reconstruction error, output-activation
//! error `E‖ŷ − y‖²`, and per-format comparison reports, plus the seeded
//! synthetic inputs used to exercise them.

use std::fmt::Write as _;

use rand_distr::{Distribution, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Format, QuantConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qgemm::gemm_reference;
use crate::quantize::quantize;
use crate::rng::Rng;
use crate::tensor::QuantizedTensor;

/// Identifies the column set and meaning of [`EvalReport`] output.
pub const EVAL_SCHEMA: &str = "anyq-eval/1";

/// Module name used for rows averaged over every module.
pub const AGGREGATE_MODULE: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightError {
    pub mse: f64,
    /// `‖w − ŵ‖_F / ‖w‖_F`; absent when `w` is all zeros.
    pub rel_frobenius: Option<f64>,
}

fn check_shape(w: &Matrix, qt: &QuantizedTensor) -> Result<()> {
    if w.shape() != qt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "weights are {:?}, quantized tensor is {:?}",
            w.shape(),
            qt.shape()
        )));
    }
    Ok(())
}

fn squared_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = f64::from(p) - f64::from(q);
            d * d
        })
        .sum()
}

pub fn weight_error(w: &Matrix, qt: &QuantizedTensor) -> Result<WeightError> {
    check_shape(w, qt)?;
    let deq = qt.dequantize();
    let err = squared_diff(w.data(), deq.data());
    let norm: f64 = w.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    Ok(WeightError {
        mse: err / w.data().len() as f64,
        rel_frobenius: (norm > 0.0).then(|| (err / norm).sqrt()),
    })
}

/// Mean over every (sample, output) of `(ŷ − y)²`, where `y = x · wᵀ` and
/// `ŷ` is the reference product with the quantized weights.
pub fn output_error(w: &Matrix, qt: &QuantizedTensor, x: &Matrix) -> Result<f64> {
    check_shape(w, qt)?;
    let y = x.matmul_transposed(w)?;
    let y_hat = gemm_reference(x, qt)?;
    Ok(squared_diff(y.data(), y_hat.data()) / y.data().len() as f64)
}

/// One (module, format) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub module: String,
    pub format: String,
    pub bits_per_entry: f64,
    pub weight_mse: f64,
    pub weight_frobenius_rel: Option<f64>,
    pub output_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const EVAL_CSV_HEADER: &str =
    "schema,module,format,bits_per_entry,weight_mse,weight_frobenius_rel,output_mse";

#[derive(Serialize)]
struct EvalJson<'a> {
    schema: &'static str,
    rows: &'a [EvalRow],
    aggregates: Vec<EvalRow>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, module: &str, format: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.module == module && r.format == format)
    }

    /// Per-format means over all modules, in first-seen format order.
    pub fn aggregates(&self) -> Vec<EvalRow> {
        let mut formats: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !formats.contains(&r.format.as_str()) {
                formats.push(&r.format);
            }
        }
        formats
            .into_iter()
            .map(|f| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.format == f).collect();
                let n = rows.len() as f64;
                let mean = |g: &dyn Fn(&EvalRow) -> f64| rows.iter().map(|r| g(r)).sum::<f64>() / n;
                let rel = rows
                    .iter()
                    .map(|r| r.weight_frobenius_rel)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / n);
                EvalRow {
                    module: AGGREGATE_MODULE.into(),
                    format: f.into(),
                    bits_per_entry: mean(&|r| r.bits_per_entry),
                    weight_mse: mean(&|r| r.weight_mse),
                    weight_frobenius_rel: rel,
                    output_mse: mean(&|r| r.output_mse),
                }
            })
            .collect()
    }

    /// CSV with the schema id in the first column. Aggregate rows follow
    /// the per-module rows when more than one module is present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVAL_CSV_HEADER);
        out.push('\n');
        let modules = self
            .rows
            .iter()
            .map(|r| r.module.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let aggregates = if modules > 1 { self.aggregates() } else { Vec::new() };
        for r in self.rows.iter().chain(&aggregates) {
            let rel = r.weight_frobenius_rel.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{EVAL_SCHEMA},{},{},{},{},{},{}",
                r.module, r.format, r.bits_per_entry, r.weight_mse, rel, r.output_mse
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EvalJson {
            schema: EVAL_SCHEMA,
            rows: &self.rows,
            aggregates: self.aggregates(),
        })?)
    }
}

/// Measures one quantized tensor against its source weights.
pub fn evaluate(module: &str, format: &str, w: &Matrix, qt: &QuantizedTensor, x: &Matrix) -> Result<EvalRow> {
    let we = weight_error(w, qt)?;
    Ok(EvalRow {
        module: module.into(),
        format: format.into(),
        bits_per_entry: qt.bits_per_entry(),
        weight_mse: we.mse,
        weight_frobenius_rel: we.rel_frobenius,
        output_mse: output_error(w, qt, x)?,
    })
}

/// Quantizes `w` with every format (on top of `base`) and measures each
/// against evaluation activations `x`. Formats run in parallel; the result
/// is in `formats` order and deterministic for a fixed `base.seed`.
pub fn compare_formats(
    module: &str,
    w: &Matrix,
    formats: &[Format],
    base: &QuantConfig,
    stats: Option<&[f32]>,
    x: &Matrix,
) -> Result<EvalReport> {
    let rows = formats
        .par_iter()
        .map(|&f| {
            let qt = quantize(w, &f.apply(base), stats)?;
            evaluate(module, f.name(), w, &qt, x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

/// Standard-normal `rows x cols` matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal() as f32)
}

/// Student-t (`dof` degrees of freedom) `rows x cols` matrix: heavier tails
/// than a Gaussian, like trained transformer weights.
pub fn heavy_tailed_matrix(rows: usize, cols: usize, dof: f64, seed: u64) -> Result<Matrix> {
    let t = StudentT::new(dof).map_err(|e| Error::InvalidConfig(format!("degrees of freedom: {e}")))?;
    let mut rng = Rng::with_stream(seed, 3);
    Matrix::from_fn(rows, cols, |_, _| t.sample(&mut rng) as f32)
}

/// Heavy-tailed per-channel `E|x_j|`: log-normal magnitudes with a few
/// outlier channels ten times larger, as seen in transformer activations.
pub fn nonuniform_stats(cols: usize, seed: u64) -> Vec<f32> {
    let mut rng = Rng::with_stream(seed, 1);
    (0..cols)
        .map(|_| {
            let base = rng.normal().exp();
            let outlier = if rng.uniform() < 0.02 { 10.0 } else { 1.0 };
            (base * outlier) as f32
        })
        .collect()
}

/// `m` activation samples whose channel `j` is Gaussian with
/// `E|x_j| = stats[j]` (all ones when `stats` is absent).
pub fn activations(m: usize, cols: usize, stats: Option<&[f32]>, seed: u64) -> Result<Matrix> {
    if let Some(s) = stats {
        if s.len() != cols {
            return Err(Error::ShapeMismatch(format!("{} statistics for {cols} channels", s.len())));
        }
    }
    // E|z| = sqrt(2/pi) for standard normal z.
    let gain = (std::f64::consts::PI / 2.0).sqrt();
    let mut rng = Rng::with_stream(seed, 2);
    Matrix::from_fn(m, cols, |_, j| {
        let s = stats.map_or(1.0, |s| f64::from(s[j]));
        (rng.normal() * gain * s) as f32
    })
}

/// Seed offset separating evaluation activations from calibration ones.
pub const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Granularity;
    use crate::scaling::ScaleSet;
    use crate::tensor::Levels;

    /// A tensor whose dequantized value is exactly `vals` (rowwise, scale 1,
    /// shifted so the int4 grid covers [0, 15]).
    fn exact(rows: usize, cols: usize, vals: &[f32]) -> QuantizedTensor {
        let cfg = QuantConfig::int(4, cols).with_granularity(Granularity::Rowwise);
        let levels = crate::tensor::shared_levels(&cfg).unwrap();
        let codes: Vec<u8> = vals.iter().map(|&v| v as u8).collect();
        let scales = ScaleSet::from_parts(Granularity::Rowwise, rows, cols, false, vec![1.0; rows], vec![0.0; rows]).unwrap();
        QuantizedTensor::from_codes(cfg, rows, cols, &codes, Levels::Shared(levels), scales).unwrap()
    }

    #[test]
    fn weight_error_by_hand() {
        let w = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        let qt = exact(1, 2, &[0.0, 0.0]);
        let e = weight_error(&w, &qt).unwrap();
        assert_eq!(e.mse, 0.5);
        assert_eq!(e.rel_frobenius, Some(1.0));
        let zero = Matrix::zeros(1, 2).unwrap();
        assert_eq!(weight_error(&zero, &qt).unwrap().rel_frobenius, None);
    }

    #[test]
    fn lossless_has_zero_error() {
        let vals = [3.0, 0.0, 15.0, 7.0, 1.0, 2.0];
        let w = Matrix::new(2, 3, vals.to_vec()).unwrap();
        let qt = exact(2, 3, &vals);
        let e = weight_error(&w, &qt).unwrap();
        assert_eq!((e.mse, e.rel_frobenius), (0.0, Some(0.0)));
        let x = gaussian_matrix(4, 3, 1).unwrap();
        assert_eq!(output_error(&w, &qt, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_input_hides_weight_error() {
        let w = Matrix::from_rows(&[[0.3, 1.7]]).unwrap();
        let qt = exact(1, 2, &[0.0, 0.0]);
        assert_eq!(output_error(&w, &qt, &Matrix::zeros(5, 2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_output_error() {
        // w = 1, dequant = 0.9 (alpha 0.9 times level 1), x = 2 -> (0.2)^2.
        let cfg = QuantConfig::int(4, 1).with_granularity(Granularity::Rowwise);
        let levels = crate::tensor::shared_levels(&cfg).unwrap();
        let scales = ScaleSet::from_parts(Granularity::Rowwise, 1, 1, false, vec![0.9], vec![0.0]).unwrap();
        let qt = QuantizedTensor::from_codes(cfg, 1, 1, &[1], Levels::Shared(levels), scales).unwrap();
        let w = Matrix::from_rows(&[[1.0]]).unwrap();
        let x = Matrix::from_rows(&[[2.0]]).unwrap();
        let mse = output_error(&w, &qt, &x).unwrap();
        let y_hat = 0.9f32 * 2.0;
        let expected = (f64::from(y_hat) - 2.0).powi(2);
        assert_eq!(mse, expected);
        assert!((mse - 0.04).abs() < 1e-6);
    }

    #[test]
    fn identity_inputs_reduce_to_column_weighted_error() {
        let w = gaussian_matrix(6, 5, 3).unwrap();
        let qt = quantize(&w, &QuantConfig::int(4, 3), None).unwrap();
        let c = [0.5f32, 2.0, 1.0, 4.0, 0.25];
        let x = Matrix::from_fn(5, 5, |i, j| if i == j { c[j] } else { 0.0 }).unwrap();
        let deq = qt.dequantize();
        let mut weighted = 0.0f64;
        for i in 0..6 {
            for (j, &cj) in c.iter().enumerate() {
                let d = f64::from(cj * w.get(i, j)) - f64::from(cj * deq.get(i, j));
                weighted += d * d;
            }
        }
        let got = output_error(&w, &qt, &x).unwrap();
        assert!((got - weighted / 30.0).abs() <= 1e-12 * weighted.max(1.0));
    }

    #[test]
    fn report_schema_and_determinism() {
        let w = gaussian_matrix(16, 256, 7).unwrap();
        let stats = nonuniform_stats(256, 7);
        let x = activations(32, 256, Some(&stats), 7 ^ EVAL_SEED_OFFSET).unwrap();
        let base = QuantConfig::int(4, 128).with_seed(7);
        let formats = [Format::Int4, Format::Fp4, Format::Nf4, Format::Any4];
        let r = compare_formats("m", &w, &formats, &base, Some(&stats), &x).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|r| r.format.as_str()).collect();
        assert_eq!(names, ["int4", "fp4", "nf4", "any4"]);
        for row in &r.rows {
            assert!(row.weight_mse >= 0.0 && row.output_mse >= 0.0);
        }
        assert_eq!(r.row("m", "int4").unwrap().bits_per_entry, 4.25);
        assert_eq!(r, compare_formats("m", &w, &formats, &base, Some(&stats), &x).unwrap());
        let csv = r.to_csv();
        assert!(csv.starts_with(EVAL_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["schema"], EVAL_SCHEMA);
        assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn aggregates_average_modules() {
        let mk = |m: &str, v: f64| EvalRow {
            module: m.into(),
            format: "int4".into(),
            bits_per_entry: 4.25,
            weight_mse: v,
            weight_frobenius_rel: Some(v),
            output_mse: 2.0 * v,
        };
        let r = EvalReport { rows: vec![mk("a", 1.0), mk("b", 3.0)] };
        let agg = r.aggregates();
        assert_eq!(agg.len(), 1);
        assert_eq!((agg[0].weight_mse, agg[0].output_mse), (2.0, 4.0));
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn activations_follow_stats() {
        let stats = [0.5f32, 4.0];
        let x = activations(20000, 2, Some(&stats), 1).unwrap();
        for (j, &s) in stats.iter().enumerate() {
            let mean: f64 = (0..x.rows()).map(|i| f64::from(x.get(i, j).abs())).sum::<f64>() / 20000.0;
            assert!((mean / f64::from(s) - 1.0).abs() < 0.03, "channel {j}: {mean}");
        }
        assert!(activations(2, 3, Some(&stats), 1).is_err());
    }
}
