use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tidedown::field::TidalField;

fn tidedown(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tidedown")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tidedown(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its diagnostic.
fn fails(args: &[&str]) -> String {
    let out = tidedown(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 50x48 LR dataset at scale 6 and a one-epoch tiny model trained on it.
struct Fixture {
    _tmp: TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--seed", "5", "--hr-height", "300", "--hr-width", "288", "--scale", "6", "--timesteps", "8", "--out", s(&data)]);
    let config = tmp.path().join("run.json");
    let json = serde_json::json!({
        "model": {"channels": 4, "n_blocks": 1, "fms_ratio": "1:1", "atm_scale": 6,
                  "lr_height": 50, "lr_width": 48, "n_mlp_hidden": 1},
        "train": {"epochs": 1, "decay_epoch": 1, "coord_samples": 64, "seed": 3},
        "paths": {"data_dir": data, "out_dir": tmp.path().join("out"), "name": "tiny"}
    });
    std::fs::write(&config, json.to_string()).unwrap();
    ok(&["train", "--config", s(&config)]);
    let ckpt = tmp.path().join("out/tiny.tckp");
    Fixture { _tmp: tmp, data, ckpt, config }
}

#[test]
fn synth_writes_all_splits() {
    let tmp = TempDir::new().unwrap();
    ok(&["synth", "--seed", "1", "--hr-height", "16", "--hr-width", "16", "--scale", "2", "--timesteps", "8", "--out", s(tmp.path())]);
    for split in ["train", "val", "test"] {
        let lr = TidalField::load(tmp.path().join(format!("{split}_lr.tcds"))).unwrap();
        let hr = TidalField::load(tmp.path().join(format!("{split}_hr.tcds"))).unwrap();
        assert_eq!((lr.height(), hr.height()), (8, 16));
    }
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("synth.json")).unwrap()).unwrap();
    assert_eq!(record["timesteps"], serde_json::json!([6, 1, 1]));
}

#[test]
fn train_infer_eval_render_round_trip() {
    let fx = fixture();
    let out_dir = fx.ckpt.parent().unwrap();
    for f in ["tiny.loss.csv", "tiny.epochs.csv", "tiny.config.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let loss = std::fs::read_to_string(out_dir.join("tiny.loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("epoch,step,loss_asm,loss_atm,lr,wall_seconds"));
    assert_eq!(loss.lines().count(), 1 + 6);

    let lr = fx.data.join("test_lr.tcds");
    let before = std::fs::read(&lr).unwrap();
    let x6 = out_dir.join("x6.tcds");
    ok(&["infer", "--checkpoint", s(&fx.ckpt), "--input", s(&lr), "--scale", "6", "--out", s(&x6)]);
    let field = TidalField::load(&x6).unwrap();
    assert_eq!(field.shape(), [1, 3, 300, 288]);
    assert!(field.all_finite());
    assert_eq!(std::fs::read(&lr).unwrap(), before, "input was modified");

    let x1 = out_dir.join("x1.tcds");
    ok(&["infer", "--checkpoint", s(&fx.ckpt), "--input", s(&lr), "--scale", "1", "--out", s(&x1)]);
    let field = TidalField::load(&x1).unwrap();
    assert_eq!(field.shape(), [1, 3, 50, 48]);
    assert!(field.all_finite());

    let csv = ok(&["eval", "--pred", s(&x6), "--gt", s(&fx.data.join("test_hr.tcds")), "--label", "tiny", "--scale", "6"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("label,scale,n_sea_points,velocity_mse,velocity_mae,level_mse,level_mae"));
    assert!(lines.next().unwrap().starts_with("tiny,6,"));

    let (a, b) = (out_dir.join("a.pgm"), out_dir.join("b.pgm"));
    for p in [&a, &b] {
        ok(&["render", "--field", s(&x6), "--channel", "u", "--out", s(p), "--compare", s(&fx.data.join("test_hr.tcds"))]);
    }
    let pgm = std::fs::read(&a).unwrap();
    assert!(pgm.starts_with(b"P5\n578 300\n255\n"));
    assert_eq!(pgm, std::fs::read(&b).unwrap());
}

#[test]
fn resume_continues_the_same_run() {
    let fx = fixture();
    ok(&["train", "--config", s(&fx.config), "--epochs", "2", "--resume"]);
    let out_dir = fx.ckpt.parent().unwrap();
    let epochs = std::fs::read_to_string(out_dir.join("tiny.epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    let loss = std::fs::read_to_string(out_dir.join("tiny.loss.csv")).unwrap();
    assert_eq!(loss.lines().last().unwrap().split(',').take(2).collect::<Vec<_>>(), ["2", "12"]);

    let err = fails(&["train", "--config", s(&fx.config), "--epochs", "2", "--seed", "9", "--resume"]);
    assert!(err.contains("different configuration"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"channels": 4, "n_blocks": 1, "atm_scale": 2, "lr_height": 4, "lr_width": 4,
            "n_mlp_hidden": 1, "use_fms": true}, "paths": {"data_dir": "d", "out_dir": "o"}}"#,
    )
    .unwrap();
    let err = fails(&["train", "--config", s(&cfg)]);
    assert!(err.contains("unknown field `use_fms`"), "{err}");
}

#[test]
fn flops_default_matches_full_size_config_file() {
    let file = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/full.json");
    assert_eq!(ok(&["flops"]), ok(&["flops", "--config", s(&file)]));
    let csv = ok(&["flops", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("\n2:1,207.053,340.225,"), "{csv}");
}

#[test]
fn failures_are_named() {
    let tmp = TempDir::new().unwrap();
    let junk = tmp.path().join("junk.tcds");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let out = tmp.path().join("o.tcds");
    let err = fails(&["infer", "--method", "bicubic", "--input", s(&junk), "--scale", "2", "--out", s(&out)]);
    assert!(err.contains("malformed tcds file"), "{err}");

    ok(&["synth", "--hr-height", "16", "--hr-width", "16", "--scale", "2", "--timesteps", "8", "--out", s(tmp.path())]);
    let (lr, hr) = (tmp.path().join("test_lr.tcds"), tmp.path().join("test_hr.tcds"));
    let err = fails(&["eval", "--pred", s(&lr), "--gt", s(&hr)]);
    assert!(err.contains("shape mismatch"), "{err}");

    let err = fails(&["infer", "--method", "bicubic", "--input", s(&lr), "--scale", "0.5", "--out", s(&out)]);
    assert!(err.contains("scale must be"), "{err}");

    let err = fails(&["ablate", "--checkpoints", s(tmp.path()), "--data", s(tmp.path())]);
    assert!(err.contains("missing checkpoint for variant `Baseline`"), "{err}");

    let out = Command::new(env!("CARGO_BIN_EXE_tidedown"))
        .arg("flops")
        .env("TIDEDOWN_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("TIDEDOWN_THREADS"));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let run = |threads: &str, dir: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_tidedown"))
            .args(["synth", "--hr-height", "32", "--hr-width", "32", "--scale", "4", "--timesteps", "8", "--out"])
            .arg(tmp.path().join(dir))
            .env("TIDEDOWN_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read(tmp.path().join(dir).join("train_hr.tcds")).unwrap()
    };
    assert_eq!(run("1", "a"), run("3", "b"));
}
