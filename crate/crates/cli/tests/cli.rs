use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn thermolat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermolat"))
        .current_dir(dir)
        .env_remove("THERMOLAT_CACHE")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--set",
    "encoder.embedding_dim=8",
    "--set",
    "encoder.channels=[4,4]",
    "--set",
    "encoder.dilations=[1,2]",
    "--set",
    "encoder.local_channels=4",
    "--set",
    "encoder.epochs=1",
    "--set",
    "encoder.anchors_per_image=8",
    "--set",
    "encoder.negatives=4",
    "--set",
    "classification.epochs=1",
    "--set",
    "classification.depth=2",
    "--set",
    "classification.base_width=8",
    "--set",
    "segmentation.epochs=1",
    "--set",
    "segmentation.depth=2",
    "--set",
    "segmentation.base_width=8",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn synth_train_infer_eval_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = thermolat(d, &["synth", "--count", "6", "--height", "32", "--width", "32", "--out", "data", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("data/manifest.json").is_file());
    assert!(d.join("out/resolved-config.json").is_file());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["encoder"]["seed"], 2);

    let o = thermolat(d, &with_tiny(&["train-encoder", "--manifest", "data/manifest.json", "--out", "enc.thrm"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = thermolat(
        d,
        &with_tiny(&[
            "train-decoder",
            "--manifest",
            "data/manifest.json",
            "--encoder",
            "enc.thrm",
            "--task",
            "segmentation",
            "--render-kind",
            "heatmap",
            "--out",
            "seg.thrm",
        ]),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let o = thermolat(
        d,
        &["infer", "--encoder", "enc.thrm", "--decoder", "seg.thrm", "--frame", "data/frames/phantom-0000.txt", "--out", "pred.pgm"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = fs::read(d.join("pred.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));

    let o = thermolat(
        d,
        &["eval", "--manifest", "data/manifest.json", "--encoder", "enc.thrm", "--decoder", "seg.thrm", "--out", "m.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert!(m["miou"].is_number());

    let o = thermolat(
        d,
        &[
            "overlay",
            "--frame",
            "data/frames/phantom-0000.txt",
            "--mask",
            "pred.pgm",
            "--truth",
            "data/masks/phantom-0000.pgm",
            "--out",
            "ov.png",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read(d.join("ov.png")).unwrap().starts_with(b"\x89PNG"));

    let o = thermolat(
        d,
        &["infer", "--encoder", "enc.thrm", "--decoder", "seg.thrm", "--frame", "data/frames/phantom-0000.txt", "--task", "classification", "--out", "x.json"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn grid_writes_reports_and_honours_cache_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = thermolat(d, &["synth", "--count", "6", "--height", "32", "--width", "32", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cache = d.join("cache");
    let mut args = with_tiny(&["grid", "--manifest", "data/manifest.json", "--out", "g"]);
    args.extend(["--set", "overlays=false"]);
    let o = Command::new(env!("CARGO_BIN_EXE_thermolat"))
        .current_dir(d)
        .env("THERMOLAT_CACHE", &cache)
        .args(&args)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("H Enc. /w G Dec."));
    assert!(d.join("g/grid.json").is_file() && d.join("g/grid.md").is_file());
    let rows = fs::read_dir(cache.join("runs")).unwrap().count();
    assert_eq!(rows, 4);
    assert!(!d.join("g/runs").exists());
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let o = thermolat(d, &["train-encoder", "--manifest", "missing.json"]);
    assert_eq!(o.status.code(), Some(3));
    let line = stderr(&o);
    assert!(line.starts_with("error[DataError]: "), "{line}");
    assert_eq!(line.trim_end().lines().count(), 1);

    let o = thermolat(d, &["synth", "--set", "synth.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[ConfigError]: "));

    let o = thermolat(d, &["synth", "--count", "4", "--labeled", "4", "--test", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = thermolat(d, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(d.join("bad.json"), "{").unwrap();
    let o = thermolat(d, &["synth", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), r#"{"seed": 5, "synth": {"count": 7, "height": 32, "width": 32}}"#).unwrap();
    let o = thermolat(d, &["synth", "--config", "c.json", "--set", "seed=6", "--seed", "9", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/resolved-config.json")).unwrap()).unwrap();
    assert_eq!(r["seed"], 9);
    assert_eq!(r["synth"]["seed"], 9);
    assert_eq!(r["synth"]["count"], 7);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 7);
}

#[test]
fn grad_check_reports_every_case() {
    let dir = tempfile::tempdir().unwrap();
    let o = thermolat(dir.path(), &["grad-check", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 23);
    assert!(out.lines().all(|l| l.ends_with(" ok")), "{out}");
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = thermolat(d, &["synth", "--count", "5", "--height", "32", "--width", "32", "--out", "data", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for out in ["a.thrm", "b.thrm"] {
        let o = thermolat(
            d,
            &with_tiny(&["train-encoder", "--manifest", "data/manifest.json", "--seed", "4", "--deterministic", "--out", out]),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(d.join("a.thrm")).unwrap(), fs::read(d.join("b.thrm")).unwrap());
}

#[test]
fn help_lists_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = thermolat(dir.path(), &["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in ["--seed", "--deterministic", "--jobs", "--config", "--set", "--output-dir"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
    for cmd in ["synth", "train-encoder", "train-decoder", "eval", "grid", "infer", "overlay", "grad-check"] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
    let o = thermolat(dir.path(), &["synth", "--undocumented"]);
    assert_eq!(o.status.code(), Some(2));
}
