//! Subcommand bodies. Each one resolves and checks every setting first,
//! then reads its inputs, computes, and writes outputs last and atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyq::calibration::{self, ActivationStats, ToyModel};
use anyq::codebooks::codebook_for;
use anyq::eval::{self, EvalReport, EVAL_SEED_OFFSET};
use anyq::pack;
use anyq::qgemm::{self, parse_shape};
use anyq::{io, Format, Granularity, Layout, Matrix, QuantizedTensor};
use serde_json::json;

use crate::args::{BenchArgs, CalibrateArgs, DequantizeArgs, Emit, EvalArgs, InspectArgs, QuantizeArgs};
use crate::error::CliError;
use crate::settings::{quant_config, FileConfig};

const DEFAULT_EVAL_SAMPLES: usize = 256;
const DEFAULT_REPEATS: usize = 10;

/// Rejects an output path whose directory does not exist, before any work.
fn check_out(flag: &str, path: &Path) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if path.file_name().is_none() || !dir.is_dir() {
        return Err(CliError::usage(flag, format!("cannot write to {}", path.display())));
    }
    if path.is_dir() {
        return Err(CliError::usage(flag, format!("{} is a directory", path.display())));
    }
    Ok(())
}

fn read_matrix(flag: &str, path: &Path) -> Result<Matrix, CliError> {
    io::read_matrix(path).map_err(|e| CliError::data(flag, path, e))
}

fn read_stats(path: Option<&Path>) -> Result<Option<ActivationStats>, CliError> {
    path.map(|p| calibration::load_stats(p).map_err(|e| CliError::data("--stats", p, e)))
        .transpose()
}

/// The statistics for a `cols`-wide weight: those of `--module`, or the
/// only module in the file.
fn select_stats<'a>(
    stats: &'a ActivationStats,
    module: Option<&str>,
    cols: usize,
    path: &Path,
) -> Result<&'a [f32], CliError> {
    let name = match module {
        Some(m) => m.to_owned(),
        None if stats.len() == 1 => stats.modules().next().map(|(n, _)| n.to_owned()).unwrap_or_default(),
        None => {
            let names: Vec<_> = stats.modules().map(|(n, _)| n).collect();
            return Err(CliError::usage(
                "--module",
                format!("required: the statistics file holds {} modules ({})", names.len(), names.join(", ")),
            ));
        }
    };
    if stats.get(&name).is_none() {
        let names: Vec<_> = stats.modules().map(|(n, _)| n).collect();
        return Err(CliError::usage(
            "--module",
            format!("no statistics for '{name}' (file holds: {})", names.join(", ")),
        ));
    }
    stats.for_matrix(&name, cols).map_err(|e| CliError::data("--stats", path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => pack::write_atomic(p, text.as_bytes()).map_err(|e| CliError::data("--out", p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    check_out("--out", &a.out)?;
    let text = fs::read_to_string(&a.model).map_err(|e| CliError::data("--model", &a.model, e))?;
    let model = ToyModel::from_json(&text).map_err(|e| CliError::data("--model", &a.model, e))?;
    let inputs = read_matrix("--inputs", &a.inputs)?;
    if inputs.cols() != model.input_dim() {
        return Err(CliError::data(
            "--inputs",
            &a.inputs,
            format!("{} columns, the model expects {}", inputs.cols(), model.input_dim()),
        ));
    }
    let stats = calibration::collect_stats(&model, &inputs).map_err(|e| CliError::data("--inputs", &a.inputs, e))?;
    calibration::save_stats(&stats, &a.out).map_err(|e| CliError::data("--out", &a.out, e))
}

pub fn quantize(a: &QuantizeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.quant.config.as_deref())?;
    let format = a
        .format
        .or(file.format)
        .ok_or_else(|| CliError::usage("--format", "required (on the command line or in --config)"))?;
    let cfg = quant_config(format, &a.quant, &file)?;
    let tile_k = a.tile_k.or(file.tile_k);
    if tile_k == Some(0) {
        return Err(CliError::usage("--tile-k", "must be at least 1"));
    }
    let module = a.module.as_deref().or(file.module.as_deref());
    if module.is_some() && a.stats.is_none() {
        return Err(CliError::usage("--module", "only meaningful together with --stats"));
    }
    check_out("--out", &a.out)?;

    let w = read_matrix("--weights", &a.weights)?;
    let stats = read_stats(a.stats.as_deref())?;
    let row_stats = match (&stats, &a.stats) {
        (Some(s), Some(p)) => Some(select_stats(s, module, w.cols(), p)?),
        _ => None,
    };
    let mut qt = anyq::quantize(&w, &cfg, row_stats).map_err(|e| CliError::data("--weights", &a.weights, e))?;
    if let Some(t) = tile_k {
        qt = pack::to_ktiled(&qt, t).map_err(|e| CliError::data("--weights", &a.weights, e))?;
    }
    pack::write_file(&qt, &a.out).map_err(|e| CliError::data("--out", &a.out, e))
}

pub fn dequantize(a: &DequantizeArgs) -> Result<(), CliError> {
    check_out("--out", &a.out)?;
    let qt = pack::read_file(&a.input).map_err(|e| CliError::data("--in", &a.input, e))?;
    io::write_matrix(&qt.dequantize(), &a.out).map_err(|e| CliError::data("--out", &a.out, e))
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.quant.config.as_deref())?;
    let formats = if a.formats.is_empty() {
        file.formats.clone().unwrap_or_else(|| Format::ALL.to_vec())
    } else {
        a.formats.clone()
    };
    if formats.is_empty() {
        return Err(CliError::usage("--formats", "no formats given"));
    }
    // The format is replaced per row of the report; any one validates the rest.
    let base = quant_config(Format::Int4, &a.quant, &file)?;
    for &f in &formats {
        f.apply(&base).validate().map_err(|e| CliError::usage("--formats", e))?;
    }
    let samples = a.samples.or(file.samples).unwrap_or(DEFAULT_EVAL_SAMPLES);
    if samples == 0 {
        return Err(CliError::usage("--samples", "must be at least 1"));
    }
    if a.inputs.is_some() && a.samples.is_some() {
        return Err(CliError::usage("--samples", "conflicts with --inputs"));
    }
    let emit_as = a.emit.or(file.emit).unwrap_or(Emit::Csv);
    let module = a.module.as_deref().or(file.module.as_deref());
    if let Some(out) = &a.out {
        check_out("--out", out)?;
    }

    let w = read_matrix("--weights", &a.weights)?;
    let stats = read_stats(a.stats.as_deref())?;
    let row_stats = match (&stats, &a.stats) {
        (Some(s), Some(p)) => Some(select_stats(s, module, w.cols(), p)?),
        _ => None,
    };
    let x = match &a.inputs {
        Some(p) => {
            let x = read_matrix("--inputs", p)?;
            if x.cols() != w.cols() {
                return Err(CliError::data(
                    "--inputs",
                    p,
                    format!("{} columns, the weights have {}", x.cols(), w.cols()),
                ));
            }
            x
        }
        None => eval::activations(samples, w.cols(), row_stats, base.seed ^ EVAL_SEED_OFFSET)
            .map_err(|e| CliError::data("--weights", &a.weights, e))?,
    };
    let label = module
        .map(str::to_owned)
        .or_else(|| a.weights.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "weights".into());
    let report: EvalReport = eval::compare_formats(&label, &w, &formats, &base, row_stats, &x)
        .map_err(|e| CliError::data("--weights", &a.weights, e))?;
    let text = match emit_as {
        Emit::Csv => report.to_csv(),
        Emit::Json => {
            let mut s = report.to_json().map_err(|e| CliError::Data(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    emit(a.out.as_deref(), &text)
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    if a.shapes.is_empty() {
        return Err(CliError::usage("--shapes", "required, e.g. --shapes 1x4096x4096,16x4096x4096"));
    }
    let shapes = a
        .shapes
        .iter()
        .map(|s| parse_shape(s).map_err(|e| CliError::usage("--shapes", e)))
        .collect::<Result<Vec<_>, _>>()?;
    let formats = if a.formats.is_empty() {
        file.formats.clone().unwrap_or_else(|| Format::ALL.to_vec())
    } else {
        a.formats.clone()
    };
    let repeats = a.repeats.or(file.repeats).unwrap_or(DEFAULT_REPEATS);
    if repeats == 0 {
        return Err(CliError::usage("--repeats", "must be at least 1"));
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    if let Some(out) = &a.out {
        check_out("--out", out)?;
    }
    let rows = qgemm::bench(&shapes, &formats, repeats, seed).map_err(|e| CliError::Data(e.to_string()))?;
    emit(a.out.as_deref(), &qgemm::bench_csv(&rows))
}

fn granularity_name(g: Granularity) -> String {
    match g {
        Granularity::Tensorwise => "tensorwise".into(),
        Granularity::Rowwise => "rowwise".into(),
        Granularity::Columnwise => "columnwise".into(),
        Granularity::Groupwise(n) => format!("groupwise({n})"),
        Granularity::Blockwise(n) => format!("blockwise({n})"),
    }
}

fn layout_name(l: Layout) -> String {
    match l {
        Layout::RowMajor => "row_major".into(),
        Layout::KTiled(t) => format!("ktiled({t})"),
    }
}

fn snake<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Header fields and size accounting, one `key: value` per line.
pub fn describe(qt: &QuantizedTensor, file_bytes: usize) -> String {
    let cfg = qt.config();
    let (rows, cols) = qt.shape();
    let scale_bytes = qt.scales().len() * 2 * cfg.storage.scales.bits() / 8;
    let lut_bytes = qt.luts().map_or(0, |l| l.len() * 2);
    let format = Format::of(cfg).map_or_else(|| format!("{}-bit {}", cfg.bits, snake(&cfg.codebook)), |f| f.to_string());
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k}: {v}");
    };
    line("format", format);
    line("shape", format!("{rows}x{cols}"));
    line("bits", cfg.bits.to_string());
    line("codebook", snake(&cfg.codebook));
    line("granularity", granularity_name(cfg.granularity));
    line("symmetric", cfg.symmetric.to_string());
    line("int_range", snake(&cfg.int_range));
    line("layout", layout_name(qt.layout()));
    line("lut_precision", snake(&cfg.storage.lut));
    line("scale_precision", snake(&cfg.storage.scales));
    line("seed", cfg.seed.to_string());
    if qt.luts().is_some() {
        let l = &cfg.learner;
        line("learner_init", snake(&l.init));
        line("learner_weighting", snake(&l.weighting));
        line("learner_max_iters", l.max_iters.to_string());
        line("learner_restarts", l.restarts.to_string());
        line("learner_rel_tol", l.rel_tol.to_string());
    }
    line("header_bytes", pack::HEADER_LEN.to_string());
    line("code_bytes", qt.packed().len().to_string());
    line("scale_bytes", scale_bytes.to_string());
    line("lut_bytes", lut_bytes.to_string());
    line("file_bytes", file_bytes.to_string());
    line("bits_per_entry", qt.bits_per_entry().to_string());
    s
}

/// The dequantization table(s) as JSON: the named codebook and its
/// scaled-space levels, or every row's learned table.
pub fn codebook_json(qt: &QuantizedTensor) -> Result<serde_json::Value, anyq::Error> {
    let cfg = qt.config();
    Ok(match qt.luts() {
        Some(luts) => {
            let width = cfg.levels();
            let rows: Vec<&[f32]> = luts.chunks(width).collect();
            json!({ "codebook": cfg.codebook, "bits": cfg.bits, "space": "scaled", "rows": rows })
        }
        None => {
            let cb = codebook_for(cfg)?.ok_or_else(|| anyq::Error::Invariant("missing shared codebook".into()))?;
            json!({
                "codebook": cfg.codebook,
                "bits": cfg.bits,
                "values": cb.values(),
                "scaled_levels": qt.row_levels(0),
            })
        }
    })
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    let bytes = fs::read(&a.input).map_err(|e| CliError::data("--in", &a.input, e))?;
    let qt = pack::from_bytes(&bytes).map_err(|e| CliError::data("--in", &a.input, e))?;
    let mut text = describe(&qt, bytes.len());
    if a.codebook {
        let v = codebook_json(&qt).map_err(|e| CliError::data("--in", &a.input, e))?;
        text.push_str(&serde_json::to_string_pretty(&v).map_err(|e| CliError::Data(e.to_string()))?);
        text.push('\n');
    }
    emit(None, &text)
}
