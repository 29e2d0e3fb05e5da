use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn itq3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itq3"))
        .args(args)
        .output()
        .expect("spawn itq3")
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Exactly one line carries the `itq3: error[...]` identifier.
fn error_id(out: &Output) -> String {
    let err = stderr(out);
    let ids: Vec<&str> = err.lines().filter(|l| l.starts_with("itq3: error[")).collect();
    assert_eq!(ids.len(), 1, "stderr: {err}");
    let line = ids[0];
    line["itq3: error[".len()..line.find(']').unwrap()].to_string()
}

fn gen(dir: &TempDir, name: &str, rows: &str, cols: &str, dist: &str, seed: &str) -> String {
    let path = p(dir, name);
    let out = itq3(&["gen", "--dist", dist, "--rows", rows, "--cols", cols, "--seed", seed, "--out", &path]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

#[test]
fn quantize_dequantize_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.bin", "4", "512", "laplace", "7");
    assert_eq!(fs::metadata(&w).unwrap().len(), 4 * 512 * 4);

    let q = p(&dir, "w.itq3");
    let out = itq3(&["quantize", "--in", &w, "--rows", "4", "--cols", "512", "--out", &q]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::metadata(&q).unwrap().len(), 32 + 8 * 100);

    let w2 = p(&dir, "w2.bin");
    let out = itq3(&["dequantize", "--in", &q, "--out", &w2]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::metadata(&w2).unwrap().len(), 4 * 512 * 4);

    let report = p(&dir, "report.json");
    let out = itq3(&[
        "eval", "--ref", &w, "--rows", "4", "--cols", "512", "--quant", &q, "--report", &report,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["transfer_max_rel"].as_f64().unwrap() <= 1e-4);
    assert_eq!(json["blocks"], 8);

    // The reported MSE matches the dequantized file.
    let read = |path: &str| -> Vec<f32> {
        fs::read(path)
            .unwrap()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let (a, b) = (read(&w), read(&w2));
    let mse = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    let reported = json["mse"].as_f64().unwrap();
    assert!((mse - reported).abs() <= 1e-9 * mse.max(1.0), "{mse} vs {reported}");
}

#[test]
fn eval_on_the_fly_csv() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.bin", "3", "100", "gaussian", "1");
    let out = itq3(&[
        "eval", "--ref", &w, "--rows", "3", "--cols", "100", "--block", "64", "--variant", "ss", "--policy", "argmin",
        "--symmetric", "false", "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("rows,cols,block_n,variant,policy,blocks,mse"));
    assert!(lines.next().unwrap().starts_with("3,100,64,ss,argmin,5,"));
}

#[test]
fn output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = gen(&dir, "a.bin", "5", "300", "outlier", "11");
    let b = gen(&dir, "b.bin", "5", "300", "outlier", "11");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let mut containers = Vec::new();
    for name in ["a.itq3", "b.itq3"] {
        let q = p(&dir, name);
        let out = itq3(&["quantize", "--in", &a, "--rows", "5", "--cols", "300", "--variant", "ss", "--out", &q]);
        assert!(out.status.success());
        containers.push(fs::read(q).unwrap());
    }
    assert_eq!(containers[0], containers[1]);

    let first = itq3(&["ablate", "--rows", "8", "--cols", "512", "--dist", "student-t", "--seed", "3"]);
    let second = itq3(&["ablate", "--rows", "8", "--cols", "512", "--dist", "student-t", "--seed", "3"]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn ablate_table() {
    let out = itq3(&["ablate", "--blocks", "32,128", "--rows", "4", "--cols", "1024", "--dist", "outlier"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "block_n,mse,median_block_mse,relative_overhead");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("32,") && lines[2].starts_with("128,"));

    let out = itq3(&["ablate", "--blocks", "64", "--rows", "2", "--cols", "64", "--format", "json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json[0]["block_n"], 64);
    assert_eq!(json[0]["relative_overhead"], 7.0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.bin", "1", "8", "gaussian", "0");
    let cases: [&[&str]; 7] = [
        &["quantize", "--in", &w, "--rows", "0", "--cols", "8", "--out", "x"],
        &["quantize", "--in", &w, "--rows", "1", "--cols", "8"],
        &["quantize", "--in", &w, "--rows", "1", "--cols", "8", "--out", "x", "--block", "48"],
        &["quantize", "--in", &w, "--rows", "1", "--cols", "8", "--out", "x", "--frobnicate"],
        &["gen", "--dist", "cauchy", "--rows", "1", "--cols", "1", "--out", "x"],
        &["gen", "--dist", "student-t", "--nu", "-1", "--rows", "1", "--cols", "1", "--out", "x"],
        &["launch"],
    ];
    for args in cases {
        let out = itq3(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        let id = error_id(&out);
        assert!(id == "usage" || id == "domain", "{args:?}: {id}");
    }
}

#[test]
fn format_and_io_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.bin", "2", "64", "gaussian", "0");
    let q = p(&dir, "w.itq3");
    assert!(itq3(&["quantize", "--in", &w, "--rows", "2", "--cols", "64", "--block", "64", "--out", &q])
        .status
        .success());
    let bytes = fs::read(&q).unwrap();

    let write = |name: &str, data: &[u8]| {
        let path = p(&dir, name);
        fs::write(&path, data).unwrap();
        path
    };
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let mut bad_code = bytes.clone();
    bad_code[32 + 16] = 0xFF; // plane 2 of block 0
    let cases = [
        (write("magic.itq3", &bad_magic), "bad-magic"),
        (write("version.itq3", &bad_version), "unsupported-version"),
        (write("short.itq3", &bytes[..bytes.len() - 3]), "truncated"),
        (write("header.itq3", &bytes[..10]), "truncated"),
        (write("code.itq3", &bad_code), "corruption"),
        (p(&dir, "missing.itq3"), "io"),
    ];
    for (path, expected) in &cases {
        let out = itq3(&["dequantize", "--in", path, "--out", &p(&dir, "o.bin")]);
        assert_eq!(out.status.code(), Some(2), "{expected}: {}", stderr(&out));
        assert_eq!(&error_id(&out), expected);
    }

    // Raw file of the wrong size for the given dims.
    let out = itq3(&["quantize", "--in", &w, "--rows", "3", "--cols", "64", "--out", &q]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_id(&out), "size-mismatch");
}

#[test]
fn selfcheck_reports_each_check() {
    let out = itq3(&["selfcheck", "--only", "1,4,9,10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS [")).count(), 4);

    let out = itq3(&["selfcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let verdicts: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS [") || l.starts_with("FAIL ["))
        .collect();
    assert_eq!(verdicts.len(), 14);
    let any_failed = verdicts.iter().any(|l| l.starts_with("FAIL"));
    assert_eq!(out.status.code(), Some(i32::from(any_failed)));
}

#[test]
fn help_lists_commands() {
    let out = itq3(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen", "quantize", "dequantize", "eval", "ablate", "selfcheck"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    assert!(Path::new(env!("CARGO_BIN_EXE_itq3")).exists());
}
