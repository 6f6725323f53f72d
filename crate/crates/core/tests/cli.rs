//! Drives the `lodgepp` binary end to end and checks exit codes.

use std::path::Path;
use std::process::{Command, Output};

use lodgepp::motion::io::{read_motion, write_motion};
use lodgepp::motion::{rotation_cols, MotionSequence};

fn lodgepp(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lodgepp"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("LODGE_SEED");
    if let Some(seed) = seed_env {
        cmd.env("LODGE_SEED", seed);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&lodgepp(&[], None)), 2);
    assert_eq!(code(&lodgepp(&["dance"], None)), 2);
    assert_eq!(code(&lodgepp(&["train", "cnn", "--corpus", "x", "--out", "y"], None)), 2);
    assert_eq!(code(&lodgepp(&["--set", "bogus=1", "export-bvh", "a", "b"], None)), 2);
    assert_eq!(code(&lodgepp(&["--set", "segment_length=12", "export-bvh", "a", "b"], None)), 2);
    assert_eq!(code(&lodgepp(&["--help"], None)), 0);
}

#[test]
fn bad_seed_in_environment_is_a_usage_error() {
    assert_eq!(code(&lodgepp(&["export-bvh", "a", "b"], Some("many"))), 2);
}

#[test]
fn missing_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mseq");
    assert_eq!(code(&lodgepp(&["export-bvh", s(&missing), s(&dir.path().join("o.bvh"))], None)), 3);
    let junk = dir.path().join("junk.mseq");
    std::fs::write(&junk, b"not a motion").unwrap();
    assert_eq!(code(&lodgepp(&["export-bvh", s(&junk), s(&dir.path().join("o.bvh"))], None)), 3);
}

#[test]
fn degenerate_rotations_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut seq = MotionSequence::rest_pose(4);
    for c in rotation_cols(3) {
        seq.data[[2, c]] = 0.0;
    }
    let path = dir.path().join("flat.mseq");
    write_motion(&path, &seq).unwrap();
    let out = lodgepp(&["export-bvh", s(&path), s(&dir.path().join("o.bvh"))], None);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_precedence_and_oracle_generation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = |name: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["synth-data", "--out", s(&out_dir), "--count", "2", "--duration", "5"];
        if let Some(seed) = seed_flag {
            args.extend(["--seed", seed]);
        }
        let out = lodgepp(&args, env);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("pair_0001.mseq")).unwrap()
    };
    let env7 = corpus("env7", None, Some("7"));
    let flag7 = corpus("flag7", Some("7"), Some("3"));
    let default = corpus("default", None, None);
    assert_eq!(env7, flag7, "--seed wins over LODGE_SEED");
    assert_ne!(env7, default, "LODGE_SEED overrides the default seed");

    let src = dir.path().join("env7");
    let (wav, reference) = (src.join("pair_0000.wav"), src.join("pair_0000.mseq"));
    let generated = dir.path().join("gen/pair_0000.mseq");
    let bvh = dir.path().join("gen.bvh");
    let out = lodgepp(
        &["generate", s(&wav), "--oracle", s(&reference), "--out", s(&generated), "--bvh", s(&bvh), "--workers", "2"],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_motion(&generated).unwrap().len(), 128);
    assert!(std::fs::read_to_string(&bvh).unwrap().starts_with("HIERARCHY"));

    let feats = dir.path().join("feats");
    assert_eq!(code(&lodgepp(&["features", s(&src), "--out", s(&feats)], None)), 0);
    assert!(feats.join("pair_0000.mfeat").exists());

    let report = dir.path().join("report.json");
    let out = lodgepp(
        &["evaluate", "--generated", s(&src), "--reference", s(&src), "--music", s(&feats), "--out", s(&report)],
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["bas"].as_f64().unwrap() > 0.5);
}
