//! The `adsm` binary: exit codes, outputs and manifests.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adsm"))
        .args(["--log-level", "error"])
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    let o = adsm(&["demo", "--out", s(&corpus)]);
    assert!(o.status.success(), "{}", stderr(&o));
    corpus
}

#[test]
fn validate_config_accepts_good_and_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(
        &good,
        "seed = 42\nrepeats = 10\n[method]\nspace = \"fusion\"\nk = 300\nw = 0.9\nsvd = 10\n",
    )
    .unwrap();
    assert_eq!(adsm(&["validate-config", s(&good)]).status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[method]\nk = 1\n").unwrap();
    assert_eq!(adsm(&["validate-config", s(&bad)]).status.code(), Some(2));
    fs::write(&bad, "[paths]\ncorpus = \"/no/such/dir\"\n").unwrap();
    let o = adsm(&["validate-config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/dir"));
}

#[test]
fn missing_constraint_file_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = demo_corpus(dir.path());
    fs::remove_file(corpus.join("constraints.txt")).unwrap();
    let out = dir.path().join("out/results.csv");
    let o = adsm(&[
        "--json-errors",
        "evaluate",
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("constraints.txt"));
    // nothing written, not even a manifest
    assert!(!out.exists());
    assert_eq!(
        fs::read_dir(dir.path().join("out"))
            .map(|d| d.count())
            .unwrap_or(0),
        0
    );
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(adsm(&["evaluate", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(adsm(&["evaluate", "--k", "many"]).status.code(), Some(1));
    assert_eq!(
        adsm(&["evaluate", "--method", "visual"]).status.code(),
        Some(1)
    );
    assert_eq!(adsm(&[]).status.code(), Some(1));
    assert_eq!(adsm(&["--help"]).status.code(), Some(0));
}

#[test]
fn evaluate_on_written_demo_corpus_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = demo_corpus(dir.path());
    let out = dir.path().join("res/results.csv");
    let o = adsm(&[
        "--seed",
        "42",
        "evaluate",
        "--corpus",
        s(&corpus),
        "--method",
        "adsm",
        "--k",
        "12",
        "--n",
        "2",
        "--restarts",
        "3",
        "--repeats",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,repeat,fold,accuracy");
    assert_eq!(lines.len(), 1 + 4 + 1);
    assert_eq!(*lines.last().unwrap(), "adsm,mean,all,1.000000");

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "evaluate");
    assert_eq!(manifest["seeds"], serde_json::json!([42, 43]));
    assert_eq!(manifest["config"]["resolved"]["method"]["k"], 12);
    assert!(manifest["outputs"]["results.csv"].as_str().unwrap().len() == 64);
    assert!(manifest["inputs"]
        .as_object()
        .unwrap()
        .keys()
        .any(|k| k.starts_with("constraints:")));
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = demo_corpus(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("repeats = 1\n[paths]\ncorpus = \"{}\"\n[method]\nspace = \"adsm\"\nk = 12\nn-tags = 2\n", s(&corpus)),
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    let o = adsm(&[
        "--config",
        s(&cfg),
        "evaluate",
        "--method",
        "audio",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("audio,0,"));
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
}

#[test]
fn extract_vocab_embed_autotag_chain() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = demo_corpus(dir.path());
    let feats = dir.path().join("feats");
    assert!(adsm(&[
        "extract",
        "--audio-dir",
        s(&corpus.join("audio")),
        "--out",
        s(&feats)
    ])
    .status
    .success());
    // same shapes as the features shipped with the demo (those come from the
    // unquantized signal, so values differ slightly from the 16-bit WAVs)
    let header = |p: &Path| {
        let bytes = fs::read(p).unwrap();
        let end = bytes.iter().position(|&b| b == b'\n').unwrap();
        String::from_utf8(bytes[..end].to_vec()).unwrap()
    };
    for entry in fs::read_dir(corpus.join("features")).unwrap() {
        let p = entry.unwrap().path();
        assert_eq!(header(&p), "ADSMFV1 39 13");
        assert_eq!(header(&feats.join(p.file_name().unwrap())), "ADSMFV1 39 13");
    }

    let vocab = dir.path().join("vocab.awv");
    let o = adsm(&[
        "--seed",
        "5",
        "train-vocab",
        "--features",
        s(&feats),
        "--k",
        "12",
        "--out",
        s(&vocab),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read(&vocab).unwrap().starts_with(b"ADSMVOC1 12 39 5\n"));

    let emb = dir.path().join("emb");
    let o = adsm(&[
        "embed",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--features",
        s(&feats),
        "--space",
        "audio",
        "--out",
        s(&emb),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(emb.join("embedding.json")).unwrap()).unwrap();
    assert_eq!(sidecar["space"], "audio");
    assert_eq!(sidecar["dim"], 12);
    assert_eq!(sidecar["vocabulary_checksum"].as_str().unwrap().len(), 8);
    assert!(emb.join("tagmatrix.bin").exists());

    let pred = dir.path().join("pred.tsv");
    let o = adsm(&[
        "autotag",
        "--emb",
        s(&emb),
        "--tags",
        s(&emb.join("tagmatrix.bin")),
        "--n",
        "3",
        "--out",
        s(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(&pred).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "clip_id\trank\ttag\tscore");
    assert_eq!(lines.len(), 1 + 12 * 3);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[3].split('.').nth(1).unwrap().len(), 6);
    }

    // SVD-reduced fusion embeddings are refused by the tagger
    let emb2 = dir.path().join("emb2");
    let o = adsm(&[
        "embed",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--features",
        s(&feats),
        "--space",
        "fusion",
        "--svd",
        "4",
        "--out",
        s(&emb2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = adsm(&[
        "autotag",
        "--emb",
        s(&emb2),
        "--tags",
        s(&emb.join("tagmatrix.bin")),
        "--out",
        s(&pred),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = adsm(&[
        "sweep",
        "--demo",
        "--method",
        "fusion",
        "--axis",
        "w",
        "--values",
        "0,0.5,1",
        "--repeats",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "axis,value,method,mean_accuracy,std_accuracy,runs"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("w,0,fusion,"));
}
