use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lexiface::mesh::read_mesh_sequence;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lexiface"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small corpus (2 speakers x 3 utterances, one test each) shared by tests.
fn corpus() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&[
            "synth",
            "--seed",
            "3",
            "--out",
            s(&dir.path().join("corpus")),
            "--utterances-per-speaker",
            "3",
            "--test-per-speaker",
            "1",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
    .path()
}

fn manifest() -> PathBuf {
    corpus().join("corpus/manifest.json")
}

/// A 2-epoch tensor-fusion checkpoint trained on [`corpus`].
fn checkpoint() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = corpus().join("ckpt");
        let out = run(&["train", "--manifest", s(&manifest()), "--out", s(&dir), "--epochs", "2", "--seed", "5"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
}

fn utt(name: &str) -> PathBuf {
    corpus().join("corpus/utterances").join(name)
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run_dir in ["a", "b"] {
        let out_dir = dir.path().join(run_dir);
        let out = run(&["synth", "--seed", "7", "--out", s(&out_dir), "--utterances-per-speaker", "2", "--test-per-speaker", "1"]);
        assert_eq!(code(&out), 0);
        let printed = String::from_utf8(out.stdout).unwrap();
        assert_eq!(printed.trim(), s(&out_dir.join("manifest.json")));
        assert!(out_dir.join("resolved-config.json").is_file());
        manifests.push(fs::read(out_dir.join("manifest.json")).unwrap());
        let wav_a = fs::read(out_dir.join("utterances/s1_u01.wav")).unwrap();
        manifests.push(wav_a);
    }
    assert_eq!(manifests[0], manifests[2]);
    assert_eq!(manifests[1], manifests[3]);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["synth", "--seed", "7"])), 2);
    assert_eq!(code(&run(&["train", "--manifest", "m.json", "--out", "x", "--fusion", "bogus"])), 2);
    assert_eq!(code(&run(&["train", "--manifest", "m.json", "--out", "x", "--embeddings", "bert"])), 2);
    assert_eq!(code(&run(&["nonsense"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_file_rejects_unknown_keys_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"out": "x", "sead": 1}"#).unwrap();
    assert_eq!(code(&run(&["synth", "--config", s(&bad)])), 2);

    let good = dir.path().join("good.json");
    let out_dir = dir.path().join("c");
    fs::write(&good, format!(r#"{{"out": {:?}, "seed": 1, "utterances_per_speaker": 2, "test_per_speaker": 1}}"#, s(&out_dir))).unwrap();
    let out = run(&["synth", "--config", s(&good), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resolved: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["config"]["seed"], 4);
    assert_eq!(resolved["config"]["utterances_per_speaker"], 2);
}

#[test]
fn missing_manifest_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--manifest", s(&dir.path().join("none.json")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_writes_checkpoint_and_losses_deterministically() {
    let ckpt = checkpoint();
    assert!(ckpt.join("manifest.json").is_file());
    let losses = fs::read_to_string(ckpt.join("loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
    let again = corpus().join("ckpt_again");
    let out = run(&["train", "--manifest", s(&manifest()), "--out", s(&again), "--epochs", "2", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    let mut names: Vec<_> = fs::read_dir(ckpt).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        if name == "resolved-config.json" {
            continue;
        }
        assert_eq!(fs::read(ckpt.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }
}

fn infer(speaker: &str, out: &Path) -> Output {
    run(&[
        "infer",
        "--checkpoint",
        s(checkpoint()),
        "--audio",
        s(&utt("s0_u00.wav")),
        "--alignment",
        s(&utt("s0_u00.align.json")),
        "--template",
        s(&corpus().join("corpus/template.msq")),
        "--speaker",
        speaker,
        "--out",
        s(out),
    ])
}

#[test]
fn infer_shapes_and_style() {
    let dir = tempfile::tempdir().unwrap();
    let (p0, p1) = (dir.path().join("p0.msq"), dir.path().join("p1.msq"));
    assert_eq!(code(&infer("0", &p0)), 0);
    assert_eq!(code(&infer("1", &p1)), 0);
    let truth = read_mesh_sequence(fs::File::open(utt("s0_u00.msq")).unwrap()).unwrap();
    let a = read_mesh_sequence(fs::File::open(&p0).unwrap()).unwrap();
    let b = read_mesh_sequence(fs::File::open(&p1).unwrap()).unwrap();
    assert_eq!(a.frame_count(), truth.frame_count());
    assert_eq!(a.vertex_count(), 338);
    let diff: f64 = a
        .vertices()
        .iter()
        .zip(b.vertices().iter())
        .map(|(x, y)| f64::from((x - y).abs()))
        .sum();
    assert!(diff > 0.0);
    assert!(dir.path().join("resolved-config.json").is_file());
}

#[test]
fn infer_rejects_bad_speaker_and_template() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&infer("2", &dir.path().join("p.msq"))), 1);
    let wrong = dir.path().join("wrong.msq");
    let template = lexiface::mesh::TemplateMesh::new(ndarray::Array2::zeros((5, 3))).unwrap();
    fs::write(&wrong, template.to_sequence().to_bytes()).unwrap();
    let out = run(&[
        "infer",
        "--checkpoint",
        s(checkpoint()),
        "--audio",
        s(&utt("s0_u00.wav")),
        "--alignment",
        s(&utt("s0_u00.align.json")),
        "--template",
        s(&wrong),
        "--out",
        s(&dir.path().join("p.msq")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_reports_region_errors() {
    let out = run(&[
        "eval",
        "--pred",
        s(&utt("s0_u00.msq")),
        "--truth",
        s(&utt("s0_u00.msq")),
        "--mask",
        s(&corpus().join("corpus/regions.json")),
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# resolved_config="));
    assert!(text.contains("utterance,frames,upper_mae,lower_mae"));
    assert!(text.lines().last().unwrap().ends_with(",0,0"));

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("eval.csv");
    let out = run(&["eval", "--checkpoint", s(checkpoint()), "--manifest", s(&manifest()), "--out", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let hash = lexiface::eval::manifest_sha256(checkpoint()).unwrap();
    assert!(text.contains(&format!("# checkpoint_manifest_sha256={hash}")));
    assert_eq!(text.lines().filter(|l| l.starts_with("s")).count(), 2);
}

#[test]
fn correlate_scores_in_unit_interval() {
    for modality in ["text", "audio"] {
        let out = run(&["correlate", "--checkpoint", s(checkpoint()), "--manifest", s(&manifest()), "--modality", modality]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        let rows: Vec<f64> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("vertex"))
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(rows.len(), 338);
        assert!(rows.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(
        code(&run(&["correlate", "--checkpoint", s(checkpoint()), "--manifest", s(&manifest()), "--modality", "video"])),
        2
    );
}

#[test]
fn export_embeddings_csv() {
    let out = run(&["export-embeddings", "--checkpoint", s(checkpoint()), "--manifest", s(&manifest()), "--utterance", "s1_u00"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0].split(',').count(), 66);
    let truth = read_mesh_sequence(fs::File::open(utt("s1_u00.msq")).unwrap()).unwrap();
    assert_eq!(body.len() - 1, truth.frame_count());
    assert_eq!(
        code(&run(&["export-embeddings", "--checkpoint", s(checkpoint()), "--manifest", s(&manifest()), "--utterance", "nope"])),
        1
    );
}

#[test]
fn ablate_emits_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ab");
    let out = run(&["ablate", "--manifest", s(&manifest()), "--seeds", "1,2,3", "--epochs", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("seed")).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split(',').last().unwrap().len() == 64));
    let table = String::from_utf8(out.stdout).unwrap();
    for label in ["Audio Only", "Text Only", "Audio+Text (C)", "Audio+Text (TF)"] {
        assert!(table.contains(label), "{table}");
    }
}
