use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arranger_core::synth;

fn arranger(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arranger"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Four 3-second songs, three for training, chunked with the desk preset.
fn chunked_dataset(dir: &Path) {
    synth::write_song_dataset(&dir.join("songs"), 4, 3.0, 11).unwrap();
    let o = arranger(&["ingest", "songs", "-o", "manifest.tsv", "--set", "train_songs=3"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = arranger(&["build-chunks", "manifest.tsv", "-o", "store", "--set", "train_songs=3"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(arranger(&["compose"], dir.path()).status.code(), Some(2));
    assert_eq!(arranger(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "preset = desk\noverlap = 64\n").unwrap();
    let o = arranger(&["--config", "bad.cfg", "gradecheck", "--filter", "add"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("overlap"), "{}", stderr(&o));
    let o = arranger(&["--set", "nonsense=1", "gradecheck"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = arranger(&["spectrogram", "absent.wav", "-o", "x.pgm"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradecheck_reports_each_op() {
    let dir = tempfile::tempdir().unwrap();
    let o = arranger(&["gradecheck", "--filter", "conv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["conv2d_zero", "conv2d_stride2", "conv_transpose2d"] {
        assert!(out.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{out}");
    }
}

#[test]
fn config_file_round_trips_through_the_tool() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "preset = desk\nseed = 5\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_arranger"))
        .args(["--config", "run.cfg", "gradecheck", "--filter", "neg"])
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg = arranger_core::RunConfig::parse("preset = desk\nseed = 5\n").unwrap();
    let log = stderr(&o);
    assert!(log.contains(&format!("config {} seed 5", cfg.fingerprint())), "{log}");
}

#[test]
fn evaluate_rejects_an_empty_generated_directory() {
    let dir = tempfile::tempdir().unwrap();
    chunked_dataset(dir.path());
    fs::create_dir(dir.path().join("generated")).unwrap();
    let o = arranger(
        &["evaluate", "--store", "store", "--generated", "generated", "--embeddings", "none.tsv", "-o", "eval"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("generated"), "{}", stderr(&o));
}

#[test]
fn train_translate_invert_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    chunked_dataset(d);
    let common = ["--set", "train_songs=3", "--set", "steps=4", "--set", "gl_iters=5", "--set", "mel_iters=20"];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(&common).map(|s| s.to_string()).collect() };
    let run = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = arranger(&refs, d);
        assert!(o.status.success(), "{:?}: {}", args, stderr(&o));
        o
    };

    run(with(&["train-cyclegan", "--store", "store", "-o", "cg"]));
    assert!(d.join("cg/final.ckpt").is_file());
    assert_eq!(fs::read_to_string(d.join("cg/losses.ndjson")).unwrap().lines().count(), 4);

    run(with(&["translate", "songs/song_03/bass.wav", "--checkpoint", "cg/final.ckpt", "--keep-intermediates"]));
    assert!(d.join("songs/song_03/bass.drums.wav").is_file());
    let kept = d.join("songs/song_03/bass.drums.intermediates");
    assert!(kept.join("bass_drums.pgm").is_file());
    assert!(fs::read_dir(&kept).unwrap().count() >= 3);

    run(with(&["invert", "songs/song_03/bass.drums.intermediates/bass_drums.pgm", "-o", "inverted.wav"]));
    assert!(d.join("inverted.wav").is_file());

    run(with(&["translate", "store", "--checkpoint", "cg/final.ckpt", "-o", "generated"]));
    run(with(&["evaluate", "--store", "store", "--generated", "generated", "--checkpoint", "cg/final.ckpt", "-o", "eval", "--threads", "2"]));
    let scores = fs::read_to_string(d.join("eval/scores.ndjson")).unwrap();
    let test_chunks = fs::read_to_string(d.join("generated/chunks.tsv")).unwrap().lines().count();
    assert_eq!(scores.lines().count(), test_chunks);
    assert!(fs::read_to_string(d.join("eval/histogram.tsv")).unwrap().starts_with("0-3\t"));

    run(with(&["train-pix2pix", "--store", "store", "-o", "p2p"]));
    run(with(&["translate", "songs/song_00/bass.wav", "--checkpoint", "p2p/final.ckpt", "-o", "p2p.wav"]));
    assert!(d.join("p2p.wav").is_file());
}
