#[path = "../../core/tests/common/dumps.rs"]
mod dumps;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mconflict(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mconflict"))
        .args(args)
        .env("NO_COLOR", "1")
        .output()
        .expect("spawn mconflict")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_for_every_subcommand() {
    for sub in [
        "gen-dataset",
        "gen-fixtures",
        "validate-dump",
        "train-probes",
        "resolution-report",
        "attn-diff",
        "plot",
    ] {
        let o = mconflict(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(&o));
        assert!(!o.stdout.is_empty());
    }
    assert_eq!(mconflict(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_subcommand_and_bad_flags_are_usage_errors() {
    assert_eq!(mconflict(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mconflict(&["train-probes", "--lambda"]).status.code(), Some(2));
}

#[test]
fn missing_paths_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let gone = tmp.path().join("nowhere");
    let o = mconflict(&["validate-dump", "--dump", s(&gone)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&gone)), "{}", stderr(&o));

    let o = mconflict(&["gen-fixtures", "--manifest", s(&gone), "--out", s(&tmp.path().join("fx"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&gone)));
}

#[test]
fn gen_dataset_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = mconflict(&["gen-dataset", "--seed", "7", "--no-images", "--out", s(d)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let ma = fs::read(a.join("manifest.jsonl")).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, fs::read(b.join("manifest.jsonl")).unwrap());
    assert_eq!(
        fs::read(a.join("dataset.json")).unwrap(),
        fs::read(b.join("dataset.json")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    fs::write(&cfg, r#"{"global_seed": 1}"#).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = mconflict(&["gen-dataset", "--config", s(&cfg), "--seed", "7", "--no-images", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = mconflict(&["gen-dataset", "--seed", "7", "--no-images", "--out", s(&b)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(a.join("manifest.jsonl")).unwrap(),
        fs::read(b.join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.json");
    fs::write(&cfg, r#"{"global_seed": 1, "colour_count": 3}"#).unwrap();
    let o = mconflict(&["gen-dataset", "--config", s(&cfg), "--no-images", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour_count"), "{}", stderr(&o));
}

#[test]
fn validate_dump_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    dumps::write_small(&clean, 1);
    let o = mconflict(&["validate-dump", "--dump", s(&clean)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let bad = tmp.path().join("bad");
    dumps::write_small(&bad, 1);
    dumps::plant_nan(&bad);
    let o = mconflict(&["validate-dump", "--dump", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
}
