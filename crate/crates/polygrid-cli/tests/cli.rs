//! End-to-end tests of the command-line surface: exit codes, output
//! artifacts, format contracts and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polygrid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tiny_fit(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "nrbf",
        "--deg",
        "0",
        "--res",
        "4",
        "--iters",
        "40",
        "--batch-volume",
        "256",
        "--batch-near",
        "256",
        "--seed",
        "7",
        "--out",
    ];
    let out_str = out.to_str().unwrap().to_string();
    args.push(&out_str);
    args.extend_from_slice(extra);
    let result = run(&args);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    out
}

#[test]
fn fit_writes_efg_loss_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model.efg");
    let result = run(&[
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "combined",
        "--deg",
        "1",
        "--res",
        "2",
        "--iters",
        "30",
        "--batch-volume",
        "128",
        "--batch-near",
        "128",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    // header advertises 2^3 keys x 13 channels of f32
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[0..4], b"EFGR");
    let channels = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
    assert_eq!(channels, 13);
    assert_eq!(bytes.len(), 18 + 8 * 13 * 4);

    let loss_csv = std::fs::read_to_string(out.with_extension("loss.csv")).unwrap();
    assert!(loss_csv.starts_with("iteration,loss\n"));
    assert!(loss_csv.lines().count() >= 2);

    let manifest = std::fs::read_to_string(dir.path().join("model.efg.manifest")).unwrap();
    assert!(manifest.contains("command=fit"));
    assert!(manifest.contains("seed=1"));
    assert!(manifest.contains("param_count=104"));
    assert!(manifest.contains("final_loss="));
}

#[test]
fn missing_input_file_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.efg");
    let result = run(&[
        "fit",
        "--mesh",
        "/nonexistent/armadillo.obj",
        "--iters",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn zero_resolution_exits_2_with_a_message() {
    let result = run(&["fit", "--shape", "sphere:r=0.5", "--res", "0", "--iters", "5"]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("res"), "stderr: {stderr}");
}

#[test]
fn numerical_blowup_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("blowup.efg");
    // an absurd learning rate drives the scales to overflow
    let result = run(&[
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "nrbf",
        "--deg",
        "0",
        "--res",
        "2",
        "--iters",
        "400",
        "--batch-volume",
        "64",
        "--batch-near",
        "64",
        "--lr",
        "1e12",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3), "{}", String::from_utf8_lossy(&result.stderr));
}

#[test]
fn fits_are_reproducible_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_fit(dir.path(), "a.efg", &[]);
    let b = tiny_fit(dir.path(), "b.efg", &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // and a different worker count changes nothing
    let c = tiny_fit(dir.path(), "c.efg", &["--workers", "1"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn mesh_of_a_positive_field_is_empty_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    // craft a constant-positive grid directly
    let cfg = polygrid::GridConfig::new(polygrid::Variant::Nrbf, polygrid::Degree::D0, 2);
    let mut grid = polygrid::ParamGrid::init(cfg, &polygrid::InitSpec::default()).unwrap();
    for c in grid.banks_mut()[0].coeffs.iter_mut() {
        *c = 1.0;
    }
    let efg = dir.path().join("positive.efg");
    polygrid::efg::save(&grid, &efg).unwrap();

    let out = dir.path().join("empty.obj");
    let result = run(&[
        "mesh",
        "--efg",
        efg.to_str().unwrap(),
        "--res",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("warning"), "stderr: {stderr}");
    let obj = std::fs::read_to_string(&out).unwrap();
    assert!(!obj.contains("\nf "));
}

#[test]
fn corrupt_and_truncated_efg_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let efg = tiny_fit(dir.path(), "good.efg", &[]);

    let mut corrupt = std::fs::read(&efg).unwrap();
    corrupt[0] = b'Z';
    let bad_path = dir.path().join("bad.efg");
    std::fs::write(&bad_path, &corrupt).unwrap();
    let result = run(&["mesh", "--efg", bad_path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));

    let full = std::fs::read(&efg).unwrap();
    let trunc_path = dir.path().join("trunc.efg");
    std::fs::write(&trunc_path, &full[..full.len() - 7]).unwrap();
    let result = run(&["mesh", "--efg", trunc_path.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn metrics_csv_has_the_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let efg = dir.path().join("m.efg");
    let fit = run(&[
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "nrbf",
        "--deg",
        "0",
        "--res",
        "4",
        "--iters",
        "300",
        "--batch-volume",
        "1024",
        "--batch-near",
        "1024",
        "--seed",
        "2",
        "--out",
        efg.to_str().unwrap(),
    ]);
    assert!(fit.status.success());
    let csv = dir.path().join("metrics.csv");
    let result = run(&[
        "metrics",
        "--efg",
        efg.to_str().unwrap(),
        "--shape",
        "sphere:r=0.5",
        "--samples",
        "2000",
        "--cd-samples",
        "2000",
        "--mc-res",
        "24",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("cd,vol_ae,vol_iou,near_ae,near_iou"));
    let row = lines.next().unwrap();
    assert_eq!(row.split(',').count(), 5);
    for field in row.split(',') {
        let value: f64 = field.parse().unwrap();
        assert!(value.is_finite());
    }
}

#[test]
fn metrics_against_missing_reference_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let efg = tiny_fit(dir.path(), "m2.efg", &[]);
    let result =
        run(&["metrics", "--efg", efg.to_str().unwrap(), "--mesh", "/nonexistent/ref.obj"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn splice_self_is_bitwise_identity_and_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny_fit(dir.path(), "sa.efg", &[]);
    let out = dir.path().join("spliced.efg");
    let result = run(&[
        "splice",
        "--a",
        a.to_str().unwrap(),
        "--b",
        a.to_str().unwrap(),
        "--axis",
        "x",
        "--threshold",
        "0.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&out).unwrap());

    // different resolution fails with a usage error
    let other = dir.path().join("other.efg");
    let fit = run(&[
        "fit", "--shape", "sphere:r=0.5", "--variant", "nrbf", "--deg", "0", "--res", "2",
        "--iters", "10", "--batch-volume", "64", "--batch-near", "0", "--seed", "1", "--out",
        other.to_str().unwrap(),
    ]);
    assert!(fit.status.success());
    let result = run(&[
        "splice",
        "--a",
        a.to_str().unwrap(),
        "--b",
        other.to_str().unwrap(),
        "--out",
        dir.path().join("x.efg").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn decompose_b0_matches_plain_fit() {
    let dir = tempfile::tempdir().unwrap();
    let stack = dir.path().join("stack.efgs");
    let slices = dir.path().join("slices.csv");
    let result = run(&[
        "decompose",
        "--shape",
        "sphere:r=0.5",
        "--bands",
        "0",
        "--res",
        "4",
        "--deg",
        "1",
        "--iters",
        "40",
        "--batch-volume",
        "256",
        "--batch-near",
        "256",
        "--seed",
        "5",
        "--out",
        stack.to_str().unwrap(),
        "--slices",
        slices.to_str().unwrap(),
        "--slice-res",
        "8",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let fit_out = dir.path().join("plain.efg");
    let fit = run(&[
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "func-interp",
        "--deg",
        "1",
        "--res",
        "4",
        "--iters",
        "40",
        "--batch-volume",
        "256",
        "--batch-near",
        "256",
        "--seed",
        "5",
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert!(fit.status.success());

    // the single band of the stack equals the plain fit bitwise
    let stack_bytes = std::fs::read(&stack).unwrap();
    let band_record = &stack_bytes[12..]; // stack header is 12 bytes
    let fit_bytes = std::fs::read(&fit_out).unwrap();
    assert_eq!(band_record, fit_bytes.as_slice());

    let slice_body = std::fs::read_to_string(&slices).unwrap();
    assert!(slice_body.starts_with("x,y,band0,partial0"));

    // band/config mismatch on splicing stacks is not supported: loading a
    // stack as a grid fails cleanly
    let result = run(&["mesh", "--efg", stack.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bench_emits_the_fixed_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let result = run(&[
        "bench",
        "--res-list",
        "2,4",
        "--queries",
        "512",
        "--reps",
        "2",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("I,J,fwd_ms,bwd_ms,peak_bytes"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').count(), 5);
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.cfg");
    std::fs::write(&config, "iterations = 10\nseed = 42\nlearning_rate = 1e-3\n").unwrap();
    let out = dir.path().join("cfg.efg");
    let result = run(&[
        "fit",
        "--shape",
        "sphere:r=0.5",
        "--variant",
        "nrbf",
        "--deg",
        "0",
        "--res",
        "2",
        "--batch-volume",
        "64",
        "--batch-near",
        "64",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("cfg.efg.manifest")).unwrap();
    assert!(manifest.contains("iterations=10"), "config file applies");
    assert!(manifest.contains("seed=9"), "flag overrides config file");
    assert!(manifest.contains("learning_rate=0.001"));
}
