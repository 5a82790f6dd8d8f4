//! End-to-end tests of the `adk` binary: every subcommand is exercised
//! through real process invocations on tiny inputs.

use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Mutex, MutexGuard, PoisonError};

use adk::checkpoint::load_model;
use adk::data::{load_png, save_png, synth_pairs_seeded};
use adk::model::Variant;
use adk::resample::ClassicMethod;
use adk::tensor::Tensor;
use serde_json::Value;

/// Every test in this binary spawns `adk` subprocesses that saturate the
/// machine with rayon worker threads; running them concurrently skews the
/// wall-clock measurements the bench test asserts on. Each test takes this
/// lock first so the binary runs serially regardless of the harness thread
/// count.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(PoisonError::into_inner)
}

fn adk_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adk"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn adk");
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn adk");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\nstdout:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Fast training flags shared by the tests that need a checkpoint; `extra`
/// supplies at least the epoch count and any data-shape overrides.
fn tiny_train(out_dir: &Path, extra: &[&str]) -> Output {
    let mut cmd = adk_bin();
    cmd.args([
        "train", "--synth", "box", "--scale", "2", "--width", "8", "--batch", "2", "--seed",
        "7", "--out",
    ])
    .arg(out_dir)
    .args(extra);
    run_ok(&mut cmd)
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| serde_json::from_str(l).expect("valid JSON line"))
        .collect()
}

#[test]
fn train_writes_deterministic_loadable_checkpoints() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_train(
        &dir.path().join("run1"),
        &["--count", "6", "--hr-size", "48", "--epochs", "2"],
    );
    // The 48 px images cannot hold the default 192 px crop.
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("clamped from 192 to 48"),
        "missing patch-clamp note"
    );
    tiny_train(
        &dir.path().join("run2"),
        &["--count", "6", "--hr-size", "48", "--epochs", "2"],
    );

    for name in ["model.ckpt", "last.ckpt", "best.ckpt", "train.jsonl"] {
        assert!(dir.path().join("run1").join(name).is_file(), "missing {name}");
    }
    let a = std::fs::read(dir.path().join("run1/model.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("run2/model.ckpt")).unwrap();
    assert_eq!(a, b, "same seed produced different checkpoints");

    let records = jsonl(&dir.path().join("run1/train.jsonl"));
    assert_eq!(records.len(), 2);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["epoch"].as_u64(), Some(i as u64 + 1));
        assert!(r["train_loss"].as_f64().unwrap().is_finite());
        assert!(r["val_loss"].as_f64().unwrap().is_finite());
    }

    let params = load_model(&dir.path().join("run1/model.ckpt")).unwrap();
    assert_eq!(params.config().scale, 2);
    assert_eq!(params.config().feature_width, 8);
}

#[test]
fn single_stream_checkpoint_has_one_generator() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    tiny_train(
        &dir.path().join("run"),
        &["--count", "6", "--hr-size", "48", "--epochs", "1", "--variant", "single_stream"],
    );
    let params = load_model(&dir.path().join("run/model.ckpt")).unwrap();
    assert_eq!(params.config().variant, Variant::SingleStream);
    let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
    assert!(names.iter().any(|n| n.starts_with("gen.all.")));
    assert!(
        !names
            .iter()
            .any(|n| ["gen.r.", "gen.g.", "gen.b.", "gen.shared."]
                .iter()
                .any(|p| n.starts_with(p))),
        "single-stream checkpoint still holds per-channel parameters"
    );
}

#[test]
fn data_source_flags_are_validated() {
    let _gate = serial();
    let stderr = run_err(adk_bin().args([
        "train",
        "--manifest",
        "does-not-matter.txt",
        "--synth",
        "box",
    ]));
    assert!(stderr.contains("not both"), "stderr: {stderr}");

    let stderr = run_err(adk_bin().args(["train", "--epochs", "1"]));
    assert!(
        stderr.contains("--manifest") && stderr.contains("--synth"),
        "stderr: {stderr}"
    );
}

#[test]
fn config_file_overrides_and_unknown_keys() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "count = 5\nepochs = 1 # flag below overrides this\n").unwrap();
    let out = run_ok(adk_bin().args([
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--synth",
        "box",
        "--hr-size",
        "48",
        "--scale",
        "2",
        "--width",
        "8",
        "--epochs",
        "2",
        "--batch",
        "2",
        "--seed",
        "1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]));
    // File supplied the pair count, the explicit flag won on epochs.
    assert!(
        String::from_utf8_lossy(&out.stdout).contains("on 5 pairs"),
        "config-file count was not used"
    );
    assert_eq!(jsonl(&dir.path().join("run/train.jsonl")).len(), 2);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "bogus_key = 3\n").unwrap();
    let stderr = run_err(adk_bin().args([
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--synth",
        "box",
    ]));
    assert!(
        stderr.contains("unknown config key") && stderr.contains("bogus_key"),
        "stderr: {stderr}"
    );
}

#[test]
fn downscale_crops_and_dumps_unit_sum_kernels() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    tiny_train(
        &dir.path().join("run"),
        &["--count", "6", "--hr-size", "48", "--epochs", "1"],
    );

    // 17x13 is not divisible by 2; 0.4 quantizes exactly to byte 102.
    let hr = Tensor::full(vec![17, 13, 3], 0.4f32).unwrap();
    let input = dir.path().join("input.png");
    save_png(&input, &hr).unwrap();
    let lr_path = dir.path().join("lr.png");
    let kdir = dir.path().join("kernels");
    let out = run_ok(adk_bin().args([
        "downscale",
        "--ckpt",
        dir.path().join("run/model.ckpt").to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        lr_path.to_str().unwrap(),
        "--dump-kernels",
        kdir.to_str().unwrap(),
    ]));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("cropped input from 17x13 to 16x12"),
        "missing auto-crop note"
    );

    let lr = load_png(&lr_path).unwrap();
    assert_eq!(lr.shape(), &[8, 6, 3], "output extents are not input/scale");
    let want = 102.0 / 255.0;
    assert!(
        lr.data().iter().all(|v| (v - want).abs() < 1e-6),
        "constant input did not stay constant"
    );

    for name in ["kernel_r.png", "kernel_g.png", "kernel_b.png"] {
        assert!(kdir.join(name).is_file(), "missing {name}");
    }
    let dump: Value =
        serde_json::from_str(&std::fs::read_to_string(kdir.join("kernels.json")).unwrap())
            .unwrap();
    assert_eq!(dump["scale"].as_u64(), Some(2));
    assert_eq!(dump["kernel_size"].as_u64(), Some(5));
    for ch in ["r", "g", "b"] {
        let rows = dump[ch].as_array().unwrap();
        assert_eq!(rows.len(), 5);
        let sum: f64 = rows
            .iter()
            .flat_map(|row| row.as_array().unwrap())
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!(
            (sum - 1.0).abs() <= 1e-5,
            "channel {ch}: averaged kernel sums to {sum}"
        );
    }
}

/// Writes `n` synthetic pairs as PNGs and returns (hr_dir, lr_dir).
fn write_pair_dirs(root: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let hr_dir = root.join("hr");
    let lr_dir = root.join("lr");
    std::fs::create_dir_all(&hr_dir).unwrap();
    std::fs::create_dir_all(&lr_dir).unwrap();
    let pairs = synth_pairs_seeded(n, 24, 2, ClassicMethod::Box, 9).unwrap();
    for p in &pairs {
        save_png(&hr_dir.join(format!("{}.png", p.id)), &p.hr).unwrap();
        save_png(&lr_dir.join(format!("{}.png", p.id)), &p.lr).unwrap();
    }
    (hr_dir, lr_dir)
}

#[test]
fn eval_pred_dir_reports_identity_and_baselines() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    let (hr_dir, gt_dir) = write_pair_dirs(dir.path(), 2);
    // Predictions identical to ground truth: the PSNR infinity sentinel.
    let pred_dir = dir.path().join("pred");
    std::fs::create_dir_all(&pred_dir).unwrap();
    for entry in std::fs::read_dir(&gt_dir).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, pred_dir.join(path.file_name().unwrap())).unwrap();
    }

    let records_path = dir.path().join("eval.jsonl");
    let out = run_ok(adk_bin().args([
        "eval",
        "--pred-dir",
        pred_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
        "--hr-dir",
        hr_dir.to_str().unwrap(),
        "--out",
        records_path.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("inf"), "missing infinity sentinel in table");
    assert!(stdout.contains("mean"), "missing mean rows");

    let records = jsonl(&records_path);
    // 2 images x 5 methods + 5 mean rows.
    assert_eq!(records.len(), 15);
    let methods: std::collections::BTreeSet<&str> = records
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(
        methods,
        ["pred", "nearest", "box", "bicubic", "lanczos3"]
            .into_iter()
            .collect()
    );
    for r in records.iter().filter(|r| r["method"] == "pred") {
        assert!(r["psnr_rgb"].is_null(), "identical images must report null PSNR");
        assert_eq!(r["ssim_rgb"].as_f64(), Some(1.0));
        assert_eq!(r["mode"].as_str(), Some("lr"));
    }

    // --hr-dir is mandatory in this mode (baselines need the originals).
    let stderr = run_err(adk_bin().args([
        "eval",
        "--pred-dir",
        pred_dir.to_str().unwrap(),
        "--gt-dir",
        gt_dir.to_str().unwrap(),
    ]));
    assert!(stderr.contains("--hr-dir"), "stderr: {stderr}");
}

#[test]
fn eval_scores_checkpoints_and_round_trips() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    tiny_train(
        &dir.path().join("run"),
        &["--count", "4", "--hr-size", "24", "--epochs", "1"],
    );
    write_pair_dirs(dir.path(), 2);
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(&manifest, "hr_dir = hr\nlr_dir = lr\nscale = 2\n").unwrap();
    let ckpt = dir.path().join("run/model.ckpt");

    let r1 = dir.path().join("lr_mode.jsonl");
    run_ok(adk_bin().args([
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        r1.to_str().unwrap(),
    ]));
    let records = jsonl(&r1);
    assert_eq!(records.len(), 15);
    assert!(records.iter().all(|r| r["mode"] == "lr"));
    let model_mean = records
        .iter()
        .find(|r| r["method"] == "model" && r["image"] == "mean")
        .expect("model mean row");
    assert!(model_mean["psnr_rgb"].as_f64().unwrap().is_finite());
    assert!(model_mean["ssim_y"].as_f64().unwrap().is_finite());

    let r2 = dir.path().join("round_trip.jsonl");
    run_ok(adk_bin().args([
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--round-trip",
        "--out",
        r2.to_str().unwrap(),
    ]));
    let records = jsonl(&r2);
    assert_eq!(records.len(), 15);
    assert!(records.iter().all(|r| r["mode"] == "round_trip"));
}

#[test]
fn ablate_emits_six_shared_budget_rows() {
    let _gate = serial();
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("ablate.jsonl");
    let out = run_ok(adk_bin().args([
        "ablate",
        "--synth",
        "box",
        "--count",
        "4",
        "--hr-size",
        "32",
        "--scale",
        "2",
        "--budget",
        "4",
        "--width",
        "8",
        "--patch",
        "16",
        "--batch",
        "2",
        "--seed",
        "3",
        "--out",
        records_path.to_str().unwrap(),
    ]));
    let records = jsonl(&records_path);
    assert_eq!(records.len(), 6, "ablation table must have exactly 6 rows");
    let rows: Vec<&str> = records.iter().map(|r| r["row"].as_str().unwrap()).collect();
    assert_eq!(
        rows,
        [
            "full",
            "shared_trunk",
            "single_stream",
            "simple_gen",
            "sum_only",
            "minmax_only"
        ]
    );
    let budgets: std::collections::BTreeSet<u64> = records
        .iter()
        .map(|r| r["budget_steps"].as_u64().unwrap())
        .collect();
    assert_eq!(budgets.len(), 1, "rows ran under different step budgets");
    assert!(records.iter().all(|r| r["seed"].as_u64() == Some(3)));
    assert!(records.iter().all(|r| r["error"].is_null()));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("observation:") || stdout.contains("helped here"),
        "missing full-vs-single_stream comparison line"
    );
}

#[test]
fn bench_reports_schema_and_linear_per_pixel_scaling() {
    let _gate = serial();
    // One iteration emits one sample: median == p95.
    let out = run_ok(adk_bin().args([
        "bench", "--scale", "2", "--width", "8", "--size", "64", "--iters", "1", "--seed", "1",
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let report: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    assert_eq!(report["iters"].as_u64(), Some(1));
    assert_eq!(report["scale"].as_u64(), Some(2));
    assert_eq!(report["kernel_size"].as_u64(), Some(5));
    let f = &report["forward_ms"];
    assert_eq!(f["median"], f["p95"]);
    assert!(f["median"].as_f64().unwrap() > 0.0);

    // Kernel application is linear per pixel: doubling the side length
    // quadruples the pixel count, so the median should land in a loose
    // 3x-5x band.
    let apply_median = |size: &str| -> f64 {
        let out = run_ok(adk_bin().args([
            "bench", "--scale", "2", "--width", "8", "--size", size, "--iters", "21", "--seed",
            "1",
        ]));
        let stdout = String::from_utf8_lossy(&out.stdout);
        let report: Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
        report["apply_kernels_ms"]["median"].as_f64().unwrap()
    };
    // Wall-clock medians still wobble under transient machine load, so an
    // out-of-band ratio gets one fresh re-measurement before failing; a real
    // complexity regression (~16x for quadratic cost) fails both rounds.
    let mut last = (0.0, 0.0, 0.0);
    for attempt in 0..2 {
        let small = apply_median("128");
        let large = apply_median("256");
        let ratio = large / small;
        last = (small, large, ratio);
        if (3.0..=5.0).contains(&ratio) {
            return;
        }
        eprintln!(
            "attempt {attempt}: apply_kernels 128->256 scaled by {ratio:.2} \
             (medians {small:.3} ms -> {large:.3} ms)"
        );
    }
    let (small, large, ratio) = last;
    panic!(
        "apply_kernels 128->256 scaled by {ratio:.2} (medians {small:.3} ms -> {large:.3} ms)"
    );
}
