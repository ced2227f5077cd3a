use std::path::Path;
use std::process::Command;

use pat_core::pipeline::{read_csv, read_pgm, ExperimentConfig};
use pat_core::tensor::read_patn;

fn pat(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_pat")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "pat {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_on_a_tiny_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = root.join("tiny.json");
    ExperimentConfig::tiny(root.join("unused")).save(&cfg_path).unwrap();
    let cfg = s(&cfg_path);

    let ph = root.join("phantoms");
    pat(&["phantom-gen", "--config", cfg, "--out", s(&ph), "--count", "2"]);
    assert_eq!(read_patn(ph.join("phantom_0001.patn")).unwrap().shape(), &[16, 16]);
    assert_eq!(read_pgm(ph.join("phantom_0000.pgm")).unwrap().shape(), &[16, 16]);

    let sim = root.join("sim");
    let phantom = ph.join("phantom_0000.patn");
    pat(&["simulate", "--config", cfg, "--out", s(&sim), "--input", s(&phantom), "--angles", "5"]);
    assert_eq!(read_patn(sim.join("sensor_data.patn")).unwrap().shape()[0], 5);

    let tr = root.join("tr");
    pat(&["reconstruct-tr", "--config", cfg, "--out", s(&tr), "--data", s(&sim)]);
    assert_eq!(read_patn(tr.join("reconstruction.patn")).unwrap().shape(), &[16, 16]);

    let data = root.join("data");
    pat(&["--deterministic", "build-dataset", "--config", cfg, "--out", s(&data), "--seed", "3"]);
    let net = root.join("dd_unet");
    let text = pat(&["train", "--config", cfg, "--out", s(&net), "--data", s(&data)]);
    assert!(text.contains("2 epochs"), "{text}");
    let base = root.join("fd_unet");
    pat(&["train", "--config", cfg, "--out", s(&base), "--data", s(&data), "--which", "baseline"]);

    let inf = root.join("inf");
    pat(&["infer", "--config", cfg, "--out", s(&inf), "--checkpoint", s(&net), "--data", s(&data)]);
    assert!(inf.join("test_00000_output.patn").exists());

    let ev = root.join("eval");
    pat(&[
        "evaluate", "--config", cfg, "--out", s(&ev), "--data", s(&data), "--checkpoint", s(&net), "--checkpoint",
        s(&base),
    ]);
    let rows = read_csv(ev.join("evaluation.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().any(|r| r.method == "fd_unet"));

    let pgm = root.join("mip.pgm");
    pat(&["export-mip", "--input", s(&phantom), "--output", s(&pgm), "--mode", "slice"]);
    assert_eq!(read_pgm(&pgm).unwrap().shape(), &[16, 16]);

    let study = root.join("study");
    let table = pat(&["study", "--config", cfg, "--out", s(&study)]);
    assert!(table.contains("| 6 |"), "{table}");
    assert!(study.join("study_summary.csv").exists());
}

#[test]
fn bad_configuration_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut cfg = ExperimentConfig::tiny(dir.path());
    cfg.training.batch_size = 0;
    cfg.save(&path).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pat"))
        .args(["build-dataset", "--config", s(&path)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}
