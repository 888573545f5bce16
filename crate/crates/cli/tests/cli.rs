//! End-to-end runs of the `anyq` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anyq::calibration::{load_stats, Nonlinearity, ToyLayer};
use anyq::eval::gaussian_matrix;
use anyq::io::{read_matrix, write_matrix};
use anyq::{pack, Matrix, Rng, ToyModel};
use tempfile::TempDir;

fn anyq(args: &[&str]) -> Output {
    anyq_env(args, &[])
}

fn anyq_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_anyq"));
    cmd.args(args).env_remove("ANYQ_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn anyq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn entries(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn write_weights(dir: &Path, name: &str, m: &Matrix) -> PathBuf {
    let p = dir.join(name);
    write_matrix(m, &p).unwrap();
    p
}

/// Rows drawing from at most `distinct` values each.
fn few_valued(rows: usize, cols: usize, distinct: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let palettes: Vec<Vec<f32>> = (0..rows)
        .map(|_| (0..distinct).map(|_| (rng.normal() * 3.0) as f32).collect())
        .collect();
    Matrix::from_fn(rows, cols, |i, _| palettes[i][rng.below(distinct)]).unwrap()
}

#[test]
fn quantize_then_dequantize_is_lossless_for_few_valued_rows() {
    let dir = TempDir::new().unwrap();
    let w = few_valued(6, 200, 16, 1);
    let wp = write_weights(dir.path(), "w.anyt", &w);
    let q = dir.path().join("w.anyq");
    let d = dir.path().join("d.anyt");
    // One scale per row, so each row is a single clustering problem.
    let o = anyq(&["quantize", "--weights", s(&wp), "--format", "any4", "--group-size", "0", "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = anyq(&["dequantize", "--in", s(&q), "--out", s(&d)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let back = read_matrix(&d).unwrap();
    assert_eq!(back.shape(), w.shape());
    for i in 0..w.rows() {
        let range = w.row(i).iter().fold(0f32, |m, v| m.max(v.abs()));
        for (a, b) in w.row(i).iter().zip(back.row(i)) {
            // fp16 tables and scales: about 11 significant bits.
            assert!((a - b).abs() <= 2e-3 * range, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn inspect_reports_any4_storage_cost() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(8, 4096, 3).unwrap());
    let q = dir.path().join("w.anyq");
    let o = anyq(&["quantize", "--weights", s(&wp), "--format", "any4", "--group-size", "128", "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = anyq(&["inspect", "--in", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "bits_per_entry: 4.3125"), "{out}");
    assert!(out.lines().any(|l| l == "format: any4"), "{out}");
    let file_bytes = fs::metadata(&q).unwrap().len();
    assert!(out.lines().any(|l| l == format!("file_bytes: {file_bytes}")), "{out}");

    let o = anyq(&["quantize", "--weights", s(&wp), "--format", "int4", "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&anyq(&["inspect", "--in", s(&q)]));
    assert!(out.lines().any(|l| l == "bits_per_entry: 4.25"), "{out}");
}

#[test]
fn inspect_dumps_codebooks_as_json() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(3, 64, 4).unwrap());
    for (format, key) in [("any3", "rows"), ("nf4", "values")] {
        let q = dir.path().join(format!("{format}.anyq"));
        let o = anyq(&["quantize", "--weights", s(&wp), "--format", format, "--group-size", "32", "--out", s(&q)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let out = stdout(&anyq(&["inspect", "--in", s(&q), "--codebook"]));
        let json = &out[out.find('{').expect("json object")..];
        let v: serde_json::Value = serde_json::from_str(json).unwrap();
        match key {
            "rows" => {
                let rows = v["rows"].as_array().unwrap();
                assert_eq!(rows.len(), 3);
                assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 8));
            }
            _ => assert_eq!(v["values"].as_array().unwrap().len(), 16),
        }
    }
}

#[test]
fn unknown_format_is_a_usage_error_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(2, 16, 0).unwrap());
    let before = entries(dir.path());
    let q = dir.path().join("w.anyq");
    let o = anyq(&["quantize", "--weights", s(&wp), "--format", "any5", "--out", s(&q)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.starts_with("usage error:"), "{err}");
    assert!(err.contains("--format"), "{err}");
    assert_eq!(entries(dir.path()), before);
}

#[test]
fn invalid_settings_name_their_flag() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(2, 16, 0).unwrap());
    let q = dir.path().join("w.anyq");
    type Case<'a> = (&'a [&'a str], &'a [(&'a str, &'a str)], &'a str);
    let cases: [Case; 4] = [
        (&["--format", "int4", "--group-size", "1"], &[], "--group-size"),
        (&["--format", "int4", "--tile-k", "0"], &[], "--tile-k"),
        (&["--format", "int4"], &[("ANYQ_THREADS", "0")], "ANYQ_THREADS"),
        (&[], &[], "--format"),
    ];
    for (extra, env, flag) in cases {
        let mut args = vec!["quantize", "--weights", s(&wp), "--out", s(&q)];
        args.extend_from_slice(extra);
        let o = anyq_env(&args, env);
        assert_eq!(code(&o), 1, "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with("usage error:") && err.contains(flag), "{err}");
        assert!(!q.exists());
    }
}

#[test]
fn corrupt_inputs_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.anyt");
    fs::write(&bad, b"ANYT\x01\x00").unwrap();
    let q = dir.path().join("w.anyq");
    let o = anyq(&["quantize", "--weights", s(&bad), "--format", "nf4", "--out", s(&q)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.starts_with("data error: --weights"), "{err}");
    assert!(!q.exists());

    let o = anyq(&["inspect", "--in", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("data error: --in"));
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(24, 256, 8).unwrap());
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "4"].into_iter().enumerate() {
        let q = dir.path().join(format!("q{i}.anyq"));
        let o = anyq_env(
            &["quantize", "--weights", s(&wp), "--format", "any4", "--group-size", "64", "--seed", "17", "--out", s(&q)],
            &[("ANYQ_THREADS", threads)],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push(fs::read(&q).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

fn toy_model() -> ToyModel {
    ToyModel::new(
        32,
        vec![
            ToyLayer {
                name: "up".into(),
                weight: gaussian_matrix(48, 32, 1).unwrap(),
                activation: Nonlinearity::Relu,
            },
            ToyLayer {
                name: "down".into(),
                weight: gaussian_matrix(16, 48, 2).unwrap(),
                activation: Nonlinearity::Identity,
            },
        ],
    )
    .unwrap()
}

#[test]
fn calibrate_then_quantize_with_statistics() {
    let dir = TempDir::new().unwrap();
    let model = toy_model();
    let mp = dir.path().join("model.json");
    fs::write(&mp, model.to_json().unwrap()).unwrap();
    let xp = write_weights(dir.path(), "x.anyt", &gaussian_matrix(64, 32, 9).unwrap());
    let sp = dir.path().join("stats.anys");
    let o = anyq(&["calibrate", "--model", s(&mp), "--inputs", s(&xp), "--out", s(&sp)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = load_stats(&sp).unwrap();
    assert_eq!(stats.get("up").map(<[f32]>::len), Some(32));
    assert_eq!(stats.get("down").map(<[f32]>::len), Some(48));

    let wp = write_weights(dir.path(), "down.anyt", &model.layers()[1].weight);
    let q = dir.path().join("down.anyq");
    let base = ["quantize", "--weights", s(&wp), "--format", "any4", "--group-size", "16", "--stats", s(&sp)];

    // Two modules in the file: the caller has to pick one.
    let o = anyq(&[&base[..], &["--out", s(&q)]].concat());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--module"));
    assert!(!q.exists());

    // The wrong module has the wrong width.
    let o = anyq(&[&base[..], &["--module", "up", "--out", s(&q)]].concat());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!q.exists());

    let o = anyq(&[&base[..], &["--module", "down", "--out", s(&q)]].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(pack::read_file(&q).unwrap().shape(), (16, 48));
}

#[test]
fn calibrate_rejects_mismatched_inputs() {
    let dir = TempDir::new().unwrap();
    let mp = dir.path().join("model.json");
    fs::write(&mp, toy_model().to_json().unwrap()).unwrap();
    let xp = write_weights(dir.path(), "x.anyt", &gaussian_matrix(4, 31, 9).unwrap());
    let sp = dir.path().join("stats.anys");
    let o = anyq(&["calibrate", "--model", s(&mp), "--inputs", s(&xp), "--out", s(&sp)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("data error: --inputs"));
    assert!(!sp.exists());
}

#[test]
fn eval_emits_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "proj.anyt", &gaussian_matrix(16, 128, 5).unwrap());
    let o = anyq(&["eval", "--weights", s(&wp), "--formats", "int4,nf4,any4", "--group-size", "64", "--samples", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "schema,module,format,bits_per_entry,weight_mse,weight_frobenius_rel,output_mse");
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[1..].iter().all(|l| l.starts_with("anyq-eval/1,proj,")));

    let out = dir.path().join("report.json");
    let o = anyq(&[
        "eval", "--weights", s(&wp), "--formats", "any2", "--emit", "json", "--samples", "8", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert_eq!(v["rows"][0]["format"], "any2");
}

#[test]
fn config_file_fills_in_unset_flags() {
    let dir = TempDir::new().unwrap();
    let wp = write_weights(dir.path(), "w.anyt", &gaussian_matrix(4, 256, 6).unwrap());
    let cp = dir.path().join("cfg.json");
    fs::write(&cp, r#"{"format": "any3", "group_size": 64, "learner": {"restarts": 2}}"#).unwrap();
    let q = dir.path().join("w.anyq");

    let o = anyq(&["quantize", "--weights", s(&wp), "--config", s(&cp), "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&anyq(&["inspect", "--in", s(&q)]));
    assert!(out.contains("format: any3\n") && out.contains("granularity: groupwise(64)\n"), "{out}");
    assert!(out.contains("learner_restarts: 2\n"), "{out}");

    let o = anyq(&["quantize", "--weights", s(&wp), "--config", s(&cp), "--group-size", "32", "--out", s(&q)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&anyq(&["inspect", "--in", s(&q)]));
    assert!(out.contains("granularity: groupwise(32)\n"), "{out}");

    fs::write(&cp, r#"{"grup_size": 64}"#).unwrap();
    let o = anyq(&["quantize", "--weights", s(&wp), "--format", "int4", "--config", s(&cp), "--out", s(&q)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("usage error: --config"));
}

#[test]
fn bench_emits_one_row_per_measurement() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let o = anyq(&["bench", "--shapes", "1x64x128,4x32x128", "--formats", "int4,any4", "--repeats", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "shape,format,layout,median_ns,p10_ns,p90_ns,bytes_per_weight");
    // Per shape: dense, then each format in both layouts.
    assert_eq!(lines.len(), 1 + 2 * (1 + 2 * 2), "{csv}");

    let o = anyq(&["bench", "--shapes", "1x64", "--repeats", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--shapes"));
}
