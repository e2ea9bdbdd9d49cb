use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use compemb::nets::{load_model, Variant};
use compemb::synth::Timeline;

const SMALL: &[&str] = &[
    "--set",
    "data.train_speakers=60",
    "--set",
    "data.val_speakers=20",
    "--set",
    "data.test_speakers=20",
    "--set",
    "model.hidden=16",
    "--set",
    "model.embed=8",
    "--set",
    "train.episodes_val=5",
    "--set",
    "train.episodes_test=20",
    "--set",
    "train.val_every=20",
];

fn compemb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compemb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&compemb(&["--help"])), 0);
    assert_eq!(code(&compemb(&["frobnicate"])), 1);
    assert_eq!(code(&compemb(&["train", "--lr", "-1", "--episodes-train", "0"])), 1);
    assert_eq!(code(&compemb(&["gradcheck", "--set", "no.such_key=3"])), 1);
    assert_eq!(code(&compemb(&["gradcheck", "--set", "gradcheck.trials=many"])), 1);
}

#[test]
fn missing_model_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.model");
    let out = compemb(&["eval", "--cmpem", path(&missing), "--out", path(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.model"));
}

#[test]
fn config_precedence_file_then_flags_then_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# comment\nseed = 5\ntrain.lr = 0.01\ntrain.margin = 0.2\n").unwrap();
    let out_dir = dir.path().join("out");
    let mut args = vec![
        "train",
        "--config",
        path(&cfg),
        "--lr",
        "0.02",
        "--episodes-train",
        "0",
        "--set",
        "train.margin=0.3",
        "--out",
        path(&out_dir),
    ];
    args.extend_from_slice(SMALL);
    let out = compemb(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = fs::read_to_string(out_dir.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 5\n"));
    assert!(resolved.contains("train.lr = 0.02\n"));
    assert!(resolved.contains("train.margin = 0.3\n"));
    assert!(resolved.contains("model.hidden = 16\n"));
}

#[test]
fn zero_training_episodes_writes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--episodes-train", "0", "--out", path(dir.path())];
    args.extend_from_slice(SMALL);
    let out = compemb(&args);
    assert_eq!(code(&out), 0);
    let best = fs::read(dir.path().join("model_best.txt")).unwrap();
    let last = fs::read(dir.path().join("model_final.txt")).unwrap();
    assert_eq!(best, last);
    let log = fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.trim(), "episode_index,loss,val_accuracy");
}

#[test]
fn train_all_eval_and_diarize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("train");
    let mut args = vec![
        "train",
        "--variant",
        "all",
        "--episodes-train",
        "40",
        "--out",
        path(&runs),
    ];
    args.extend_from_slice(SMALL);
    let out = compemb(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for v in [Variant::CmpEm, Variant::CmpEmL2, Variant::SingleEm] {
        let m = load_model(runs.join(v.tag()).join("model_best.txt")).unwrap();
        assert_eq!(m.variant(), v);
    }
    let model = |v: &str| runs.join(v).join("model_best.txt").display().to_string();
    let (cmp, l2, single) = (model("cmpem"), model("cmpeml2"), model("singleem"));

    let eval_dir = dir.path().join("eval");
    let mut args = vec![
        "eval",
        "--cmpem",
        &cmp,
        "--cmpeml2",
        &l2,
        "--single-em",
        &single,
        "--out",
        path(&eval_dir),
    ];
    args.extend_from_slice(SMALL);
    let out = compemb(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(eval_dir.join("eval_report.csv")).unwrap();
    assert!(csv.starts_with("section,stratum,CmpEmL2,CmpEm,SingleEm,Guess\n"));

    // Wrong variant in a model slot is rejected.
    let mut args = vec!["eval", "--cmpem", &single, "--out", path(&eval_dir)];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&compemb(&args)), 2);

    let diar_dir = dir.path().join("diar");
    let mut args = vec![
        "diarize",
        "--cmpem",
        &cmp,
        "--single-em",
        &single,
        "--dump-rttm",
        "--set",
        "diar.streams=2",
        "--set",
        "diar.duration_s=240",
        "--out",
        path(&diar_dir),
    ];
    args.extend_from_slice(SMALL);
    let out = compemb(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(diar_dir.join("der_report.txt"))
        .unwrap()
        .contains("DER%"));
    let rttm = diar_dir.join("rttm");
    let reference = fs::read_to_string(rttm.join("stream00_reference.rttm")).unwrap();
    let parsed = Timeline::from_rttm(&reference, 0.1, Some(2400)).unwrap();
    assert_eq!(parsed.to_rttm("stream00"), reference);
    for s in [
        "single_em_turn",
        "single_em_seg_overlap",
        "cmpem_seg",
        "cmpem_seg_overlap",
    ] {
        let text = fs::read_to_string(rttm.join(format!("stream01_{s}.rttm"))).unwrap();
        let hyp = Timeline::from_rttm(&text, 0.1, Some(2400)).unwrap();
        assert_eq!(hyp.to_rttm("stream01"), text);
    }
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_rule() {
    let dir = tempfile::tempdir().unwrap();
    let out = compemb(&["gradcheck", "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck PASS"));
    let out = compemb(&[
        "gradcheck",
        "--set",
        "gradcheck.corrupt_op=tanh",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    let report = fs::read_to_string(dir.path().join("gradcheck.txt")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("tanh") && l.ends_with("FAIL")));
    assert!(report.ends_with("gradcheck FAIL\n"));
}
