//! Library-level pipeline checks on synthetic corpora.

use lodgepp::motion::io::{from_json, from_mseq_bytes, read_motion, to_json, to_mseq_bytes};
use lodgepp::motion::Skeleton;
use lodgepp::music::MusicFeatures;
use lodgepp::pipeline::{cmd_evaluate, cmd_features, cmd_generate, synth_data, GenerateOptions, PipelineConfig, SynthOptions};

fn corpus(count: usize, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions {
        count,
        seed,
        duration_s: 6.0,
        ..Default::default()
    };
    synth_data(dir.path(), &opts, &Skeleton::default()).unwrap();
    dir
}

#[test]
fn evaluating_a_corpus_against_itself() {
    let dir = corpus(6, 1);
    let report = cmd_evaluate(dir.path(), dir.path(), Some(dir.path()), &PipelineConfig::default()).unwrap();
    assert!(report.fid_k.abs() < 1e-6, "fid_k {}", report.fid_k);
    assert!(report.fid_g.abs() < 1e-6, "fid_g {}", report.fid_g);
    assert!(report.div_k > 0.0 && report.div_g > 0.0);
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 7, "{keys:?}");
    for key in ["fid_k", "fid_g", "div_k", "div_g", "bas", "fsr_percent", "pr_percent"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn motion_formats_round_trip_exactly() {
    let dir = corpus(1, 2);
    let seq = read_motion(&dir.path().join("pair_0000.mseq")).unwrap();
    assert_eq!(from_mseq_bytes(&to_mseq_bytes(&seq)).unwrap(), seq);
    assert_eq!(from_json(&to_json(&seq).unwrap()).unwrap(), seq);
}

#[test]
fn feature_files_match_direct_extraction() {
    let dir = corpus(2, 3);
    let out = tempfile::tempdir().unwrap();
    let written = cmd_features(dir.path(), out.path()).unwrap();
    assert_eq!(written.len(), 2);
    let direct = lodgepp::pipeline::music_from_wav(&dir.path().join("pair_0001.wav")).unwrap();
    let stored = MusicFeatures::read(&out.path().join("pair_0001.mfeat")).unwrap();
    // .mfeat stores single precision.
    assert_eq!(stored.data.dim(), direct.data.dim());
    for (a, b) in stored.data.iter().zip(direct.data.iter()) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn oracle_generation_reproduces_the_reference_when_unguided() {
    let dir = corpus(1, 4);
    let mut cfg = PipelineConfig::default();
    cfg.guidance = false;
    let opts = GenerateOptions {
        genre: "g0".into(),
        oracle: Some(dir.path().join("pair_0000.mseq")),
        bvh: None,
    };
    let out = dir.path().join("out/gen.mseq");
    let report = cmd_generate(&dir.path().join("pair_0000.wav"), &cfg, &opts, &out).unwrap();
    let generated = read_motion(&out).unwrap();
    let reference = read_motion(&dir.path().join("pair_0000.mseq")).unwrap();
    assert_eq!(report.frames, 128);
    let err = (&generated.data - &reference.slice(0, 128).data).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-9, "max deviation {err}");
}

#[test]
fn oracle_result_is_seed_independent() {
    let dir = corpus(1, 5);
    let opts = GenerateOptions {
        genre: "0".into(),
        oracle: Some(dir.path().join("pair_0000.mseq")),
        bvh: None,
    };
    let wav = dir.path().join("pair_0000.wav");
    let mut runs = Vec::new();
    for seed in [1, 2] {
        let mut cfg = PipelineConfig::default();
        cfg.seed = seed;
        let out = dir.path().join(format!("s{seed}.mseq"));
        cmd_generate(&wav, &cfg, &opts, &out).unwrap();
        runs.push(read_motion(&out).unwrap());
    }
    // The oracle returns the reference at every step, so the final answer is
    // seed independent up to guidance, which acts on the same estimate.
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn unknown_genre_is_rejected() {
    let dir = corpus(1, 6);
    let opts = GenerateOptions {
        genre: "tango".into(),
        oracle: Some(dir.path().join("pair_0000.mseq")),
        bvh: None,
    };
    let err = cmd_generate(&dir.path().join("pair_0000.wav"), &PipelineConfig::default(), &opts, &dir.path().join("x.mseq"))
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
