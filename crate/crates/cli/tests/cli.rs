use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cassi_core::io::{read_cube, read_mask, read_snapshot, write_cube, write_mask};
use cassi_core::imaging::{CodedMask, HsiCube, System};
use tempfile::TempDir;

fn bundled() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/synthetic_32x32x4.hsc")
        .to_string_lossy()
        .into_owned()
}

fn cassi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cassi")).args(args).output().expect("spawn cassi")
}

fn ok(args: &[&str]) -> String {
    let out = cassi(args);
    assert!(
        out.status.success(),
        "cassi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = cassi(args);
    assert!(!out.status.success(), "cassi {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err:?}");
    err
}

struct Scratch(TempDir);

impl Scratch {
    fn new() -> Self {
        Scratch(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_string_lossy().into_owned()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
}

fn quick_reconstruct<'a>(s: &'a Scratch, system: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "reconstruct", "--meas", &s.path("y.hsc"), "--mask", &s.path("mask.hsc"), "--system", system,
        "--bands", "4", "--lr", "0.001", "--feature-width", "8", "--z-channels", "4", "--out", &s.path("est.hsc"),
    ]
    .iter()
    .map(|v| v.to_string())
    .collect();
    args.extend(extra.iter().map(|v| v.to_string()));
    args
}

fn prepare(s: &Scratch, system: &str) {
    ok(&["make-mask", "--height", "32", "--width", "32", "--seed", "1", "--out", &s.path("mask.hsc")]);
    ok(&["simulate", "--cube", &bundled(), "--mask", &s.path("mask.hsc"), "--system", system, "--out", &s.path("y.hsc")]);
}

#[test]
fn smoke_pipeline() {
    let s = Scratch::new();
    prepare(&s, "ss");
    let args = quick_reconstruct(&s, "ss", &["--iters", "5", "--gt", &bundled(), "--log", &s.path("curve.csv")]);
    let stdout = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.contains("psnr"));
    ok(&["metrics", "--ref", &bundled(), "--est", &s.path("est.hsc"), "--report", &s.path("r.csv"), "--pixel", "3,4"]);
    let report = std::fs::read_to_string(s.file("r.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "band,psnr,ssim");
    assert_eq!(lines.len(), 6);
    assert!(lines[5].starts_with("mean,"));
    let est = read_cube(&s.file("est.hsc")).unwrap();
    assert_eq!((est.height(), est.width(), est.bands()), (32, 32, 4));
}

#[test]
fn curve_rows_follow_log_interval() {
    let s = Scratch::new();
    prepare(&s, "ss");
    for (iters, every) in [("7", "3"), ("6", "2")] {
        let args = quick_reconstruct(&s, "ss", &["--iters", iters, "--log-every", every, "--log", &s.path("c.csv")]);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let text = std::fs::read_to_string(s.file("c.csv")).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "iter,loss,psnr");
        let (i, e): (usize, usize) = (iters.parse().unwrap(), every.parse().unwrap());
        assert_eq!(rows.len() - 1, i.div_ceil(e) + 1);
        assert!(rows[1].ends_with(','), "psnr column is empty without --gt");
    }
}

#[test]
fn ablation_paths_run() {
    let s = Scratch::new();
    prepare(&s, "sd");
    for (input, arch) in [("z_and_y", "brb_only"), ("z_only", "ssam_only"), ("y_only", "full")] {
        let args = quick_reconstruct(&s, "sd", &["--iters", "2", "--input-mode", input, "--arch-mode", arch]);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

#[test]
fn sd_measurement_is_wider() {
    let s = Scratch::new();
    prepare(&s, "sd");
    let y = read_snapshot(&s.file("y.hsc"), System::Sd).unwrap();
    assert_eq!((y.height(), y.width()), (32, 35));
}

#[test]
fn gaptv_and_sequential_mode() {
    let s = Scratch::new();
    prepare(&s, "ss");
    ok(&[
        "baseline-gaptv", "--meas", &s.path("y.hsc"), "--mask", &s.path("mask.hsc"), "--system", "ss",
        "--bands", "4", "--iters", "10", "--out", &s.path("g.hsc"),
    ]);
    let g = read_cube(&s.file("g.hsc")).unwrap();
    assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
    let par = quick_reconstruct(&s, "ss", &["--iters", "3"]);
    ok(&par.iter().map(String::as_str).collect::<Vec<_>>());
    let a = std::fs::read(s.file("est.hsc")).unwrap();
    let seq = quick_reconstruct(&s, "ss", &["--iters", "3", "--sequential"]);
    ok(&seq.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(a, std::fs::read(s.file("est.hsc")).unwrap());
}

#[test]
fn gray_real_mask_passes_through() {
    let s = Scratch::new();
    let values: Vec<f32> = (0..32 * 32).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    let mask = CodedMask::new(32, 32, values).unwrap();
    write_mask(&s.file("mask.hsc"), &mask).unwrap();
    assert_eq!(read_mask(&s.file("mask.hsc")).unwrap(), mask);
    ok(&["simulate", "--cube", &bundled(), "--mask", &s.path("mask.hsc"), "--system", "ss", "--out", &s.path("y.hsc")]);
    let args = quick_reconstruct(&s, "ss", &["--iters", "2"]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn png_exports() {
    let s = Scratch::new();
    ok(&["export-png", "--cube", &bundled(), "--band", "2", "--out", &s.path("b.png")]);
    ok(&["export-png", "--cube", &bundled(), "--rgb", "--out", &s.path("rgb.png")]);
    assert!(s.file("rgb.png").exists());
    let err = fails(&["export-png", "--cube", &bundled(), "--band", "9", "--out", &s.path("x.png")]);
    assert!(err.contains("band 9"));

    let bare = s.file("bare.hsc");
    let c = read_cube(Path::new(&bundled())).unwrap();
    write_cube(&bare, &HsiCube::new(c.height(), c.width(), c.bands(), c.values().to_vec()).unwrap()).unwrap();
    fails(&["export-png", "--cube", bare.to_str().unwrap(), "--rgb", "--out", &s.path("y.png")]);
}

#[test]
fn bad_invocations_fail_with_one_line() {
    let s = Scratch::new();
    prepare(&s, "ss");
    fails(&["frobnicate"]);
    fails(&["make-mask", "--height", "4", "--width", "4", "--out", &s.path("m.hsc"), "--bogus"]);
    fails(&["make-mask", "--height", "4", "--width", "4", "--density", "1.5", "--out", &s.path("m.hsc")]);
    fails(&["make-mask", "--height", "4", "--width", "4", "--kind", "plaid", "--out", &s.path("m.hsc")]);
    let zero_iters = quick_reconstruct(&s, "ss", &["--iters", "0"]);
    fails(&zero_iters.iter().map(String::as_str).collect::<Vec<_>>());
    let bad_lr = quick_reconstruct(&s, "ss", &["--iters", "1", "--lr", "-1"]);
    fails(&bad_lr.iter().map(String::as_str).collect::<Vec<_>>());
    // an SS measurement read as SD has the wrong width
    let wrong = quick_reconstruct(&s, "sd", &["--iters", "1"]);
    fails(&wrong.iter().map(String::as_str).collect::<Vec<_>>());
    let missing = fails(&["metrics", "--ref", &s.path("nope.hsc"), "--est", &bundled(), "--report", &s.path("r.csv")]);
    assert!(missing.starts_with("error:"));
}

#[test]
fn help_exits_zero() {
    let out = cassi(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("reconstruct"));
}
