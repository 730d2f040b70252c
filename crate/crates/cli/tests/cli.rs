use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pantcr_core::cloud::{Manifest, MANIFEST_FILE};

const TINY: [&str; 4] = [
    "--set",
    "net.base_width=4",
    "--set",
    "net.stage_widths=[4,6,8]",
];

fn pantcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pantcr"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = pantcr(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn failure(dir: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = pantcr(dir, args);
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    let code = out.status.code().unwrap();
    assert_eq!(err["exit_code"], code);
    (code, err)
}

fn small_dataset(dir: &Path) {
    ok(
        dir,
        &[
            "synth",
            "--out",
            "ds",
            "--scenes",
            "1",
            "--set",
            "synth.scene_size=128",
            "--set",
            "synth.patch_size=32",
            "--set",
            "synth.reduced_size=64",
        ]
        .into_iter()
        .chain([
            "--train",
            "4",
            "--val",
            "2",
            "--test-reduced",
            "1",
            "--test-full",
            "0",
        ])
        .collect::<Vec<_>>(),
    );
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter()
        .copied()
        .chain(TINY)
        .chain(["--set", "train.epochs=2", "--set", "train.batch_size=2"])
        .collect()
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn synth_writes_requested_reduced_patches() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--scenes",
            "2",
            "--test-reduced",
            "4",
            "--out",
            "ds",
        ],
    );
    let m = Manifest::load(dir.path().join("ds").join(MANIFEST_FILE)).unwrap();
    let reduced = m.split("test_reduced");
    assert_eq!(reduced.len(), 4);
    for e in reduced {
        let s = m.load_sample(dir.path().join("ds"), e).unwrap();
        assert_eq!(s.clean_hrmsi.dims(), (128, 128, 4));
        assert_eq!(s.cloudy_lrmsi.dims(), (32, 32, 4));
    }
}

#[test]
fn default_budget_is_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(dir.path(), &["budget", "--out", "b"]);
    let params = v["params"].as_u64().unwrap();
    assert!((250_000..=400_000).contains(&params), "{params}");
    assert!(dir.path().join("b/run.json").exists());
}

#[test]
fn invalid_input_exits_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = failure(dir.path(), &["budget", "--set", "net.base_widht=8"]);
    assert_eq!(code, 1);
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("net.base_widht"));
    assert_eq!(failure(dir.path(), &["no-such-command"]).0, 1);
    assert_eq!(failure(dir.path(), &["gradcheck", "--blocks", "nope"]).0, 1);
    let (code, err) = failure(
        dir.path(),
        &["ablate", "--data", ".", "--rows", "full,Unified->Two-stage"],
    );
    assert_eq!(code, 1);
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("out of scope: requires external decloud model"));
}

#[test]
fn divergence_exits_two_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let args = with_tiny(&[
        "train",
        "--data",
        "ds",
        "--out",
        "t",
        "--set",
        "train.lr_start=1e300",
        "--set",
        "train.lr_end=1e299",
    ]);
    let (code, err) = failure(dir.path(), &args);
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "numeric");
    assert!(dir.path().join("t/nan_snapshot.json").exists());
}

#[test]
fn replaying_run_json_reproduces_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(
        dir.path(),
        &with_tiny(&["train", "--data", "ds", "--out", "a", "--seed", "5"]),
    );
    ok(
        dir.path(),
        &[
            "train",
            "--data",
            "ds",
            "--out",
            "b",
            "--config",
            "a/run.json",
        ],
    );
    assert_eq!(
        bytes(dir.path().join("a/best/weights.bin")),
        bytes(dir.path().join("b/best/weights.bin"))
    );
    assert_eq!(
        bytes(dir.path().join("a/run.json")),
        bytes(dir.path().join("b/run.json"))
    );
}

#[test]
fn ablate_full_matches_plain_train() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(
        dir.path(),
        &with_tiny(&["train", "--data", "ds", "--out", "t"]),
    );
    let v = ok(
        dir.path(),
        &with_tiny(&[
            "ablate",
            "--data",
            "ds",
            "--rows",
            "full,w/o-IFC",
            "--out",
            "ab",
        ]),
    );
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(
        bytes(dir.path().join("t/best/weights.bin")),
        bytes(dir.path().join("ab/full/best/weights.bin"))
    );
    assert!(dir.path().join("ab/w-o-ifc/best/weights.bin").exists());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    for (threads, out) in [("1", "one"), ("3", "three")] {
        let status = Command::new(env!("CARGO_BIN_EXE_pantcr"))
            .current_dir(dir.path())
            .env("PANTCR_THREADS", threads)
            .args(with_tiny(&["train", "--data", "ds", "--out", out]))
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    assert_eq!(
        bytes(dir.path().join("one/best/weights.bin")),
        bytes(dir.path().join("three/best/weights.bin"))
    );
}

#[test]
fn eval_writes_reports_and_error_maps() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    ok(
        dir.path(),
        &with_tiny(&["train", "--data", "ds", "--out", "t"]),
    );
    let v = ok(
        dir.path(),
        &[
            "eval",
            "--data",
            "ds",
            "--checkpoint",
            "t/best",
            "--save-visuals",
            "--out",
            "e",
        ],
    );
    assert_eq!(v["n"], 1);
    let report: serde_json::Value =
        serde_json::from_slice(&bytes(dir.path().join("e/metrics.json"))).unwrap();
    let item = &report["items"][0];
    for key in ["psnr_db", "ssim", "sam_deg", "ergas"] {
        assert!(item[key].as_f64().unwrap().is_finite(), "{key}");
    }
    let csv = fs::read_to_string(dir.path().join("e/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let id = item["id"].as_str().unwrap();
    assert!(dir.path().join(format!("e/visuals/{id}_mse.png")).exists());
    assert!(dir.path().join(format!("e/visuals/{id}_pred.png")).exists());
}

#[test]
fn amplitude_carries_the_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(dir.path(), &["freq-demo", "--out", "fd"]);
    let amp = &v["amplitude_swap"];
    let pha = &v["phase_swap"];
    // Cloudy amplitude on clean phase looks cloudy; the reverse looks clean.
    assert!(amp["psnr_vs_cloudy_db"].as_f64().unwrap() > amp["psnr_vs_clean_db"].as_f64().unwrap());
    assert!(pha["psnr_vs_clean_db"].as_f64().unwrap() > pha["psnr_vs_cloudy_db"].as_f64().unwrap());
    assert!(dir.path().join("fd/amplitude_swap.png").exists());
    assert!(dir.path().join("fd/phase_swap.png").exists());
}
