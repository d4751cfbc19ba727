use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use eelab::config::{load_config, load_config_with, parse_config, Experiment, ProposalSpec};
use eelab::output::SENTINEL;
use eelab::run_experiment;
use tempfile::TempDir;

const LADDER_MODEL: &str =
    r#""model": { "kind": "double_well_grid", "points": 15, "bounds": [-1.5, 1.5], "depth": 3.0 }"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ladder_config(extra: &str) -> String {
    format!(
        r#"{{ {LADDER_MODEL}, "replicates": 3,
             "ladder": {{ "temperatures": [1.0, 2.5], "truncations": [null, 1.0], "steps": 3000, "burn_in": 100 {extra} }} }}"#
    )
}

fn eelab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eelab"))
        .args(args)
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn minimal_q4_config_gets_defaults() {
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "q4.json",
        r#"{ "experiment": "q4", "model": { "kind": "table", "weights": [1, 1] } }"#,
    );
    let cfg = load_config(&p).unwrap();
    let s = cfg.spectral.as_ref().unwrap();
    assert_eq!(s.alpha, 0.5);
    assert_eq!(s.tolerance, 1e-9);
    assert_eq!(s.cell_size, 2);
    assert!(
        matches!(s.proposal, ProposalSpec::Tempered { temperature, truncation: None } if temperature == 4.0)
    );
    assert_eq!(cfg.replicates, 20);
}

#[test]
fn negative_temperature_names_key() {
    let tmp = TempDir::new().unwrap();
    let text = format!(r#"{{ {LADDER_MODEL}, "ladder": {{ "temperatures": [1.0, -2.0] }} }}"#);
    let p = write(tmp.path(), "bad.json", &text);
    let err = load_config_with(&p, Some(Experiment::Q1), None).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("ladder.temperatures[1]"), "{err}");
}

#[test]
fn unknown_key_names_path() {
    let err =
        parse_config(r#"{ "ladder": { "temperatures": [1.0], "tempratures": [] } }"#).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("ladder"), "{err}");
    assert!(err.to_string().contains("tempratures"), "{err}");
}

#[test]
fn missing_blocks_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "empty.json", "{}");
    for exp in [Experiment::Run, Experiment::Q4, Experiment::Segment] {
        assert_eq!(
            load_config_with(&p, Some(exp), None)
                .unwrap_err()
                .exit_code(),
            1
        );
    }
    let one_level = format!(r#"{{ {LADDER_MODEL}, "ladder": {{ "temperatures": [1.0] }} }}"#);
    let p = write(tmp.path(), "k1.json", &one_level);
    assert!(load_config_with(&p, Some(Experiment::Run), None).is_ok());
    assert!(load_config_with(&p, Some(Experiment::Q1), None).is_err());
}

#[test]
fn validated_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, exp) in [
        ("q1.json", Experiment::Q1),
        ("q3.json", Experiment::Q3),
        ("q4.json", Experiment::Q4),
        ("swcut_vs_gibbs.json", Experiment::SwcutVsGibbs),
    ] {
        let cfg = load_config_with(&root.join(name), Some(exp), None).unwrap();
        let p = write(tmp.path(), name, &cfg.to_json());
        let mut again = load_config(&p).unwrap();
        again.base_dir = cfg.base_dir.clone();
        assert_eq!(cfg, again, "{name}");
    }
}

#[test]
fn experiment_mismatch_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "c.json",
        r#"{ "experiment": "q4", "model": { "kind": "table", "weights": [1, 1] } }"#,
    );
    assert!(load_config_with(&p, Some(Experiment::Spectral), None).is_err());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let missing = eelab(&[
        "q4",
        "--config",
        "/nonexistent/config.json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = write(tmp.path(), "bad.json", "{ not json");
    assert_eq!(
        eelab(&["q4", "--config", bad.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );

    let good = write(
        tmp.path(),
        "q4.json",
        r#"{ "model": { "kind": "table", "weights": [1, 1] },
        "spectral": { "proposal": { "kind": "weights", "weights": [1, 2] } } }"#,
    );
    let ok = eelab(&[
        "q4",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(out.join(SENTINEL).exists());

    let again = eelab(&[
        "q4",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(again.status.code(), Some(1));
    let forced = eelab(&[
        "q4",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(forced.status.code(), Some(0));

    let img_cfg = write(
        tmp.path(),
        "seg.json",
        r#"{ "segmentation": { "image": { "kind": "pgm", "path": "missing.pgm" },
        "region": { "mode": "fixed_means", "means": [0.2, 0.8], "sigma": 0.2 } } }"#,
    );
    let out2 = tmp.path().join("seg");
    let io = eelab(&[
        "segment",
        "--config",
        img_cfg.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(io.status.code(), Some(2));
    assert!(!out2.join(SENTINEL).exists());
}

#[test]
fn two_state_q4_report() {
    let tmp = TempDir::new().unwrap();
    let p = write(
        tmp.path(),
        "q4.json",
        r#"{ "model": { "kind": "table", "weights": [1, 1] },
        "spectral": { "proposal": { "kind": "weights", "weights": [1, 2] } } }"#,
    );
    let cfg = load_config_with(&p, Some(Experiment::Q4), None).unwrap();
    let out = tmp.path().join("out");
    run_experiment(&cfg, &out, false).unwrap();
    let rows = read_csv(&out.join("summary.csv"));
    let header = &rows[0];
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let mis = rows
        .iter()
        .find(|r| r[col("space")] == "fine" && r[col("kernel")] == "mis")
        .unwrap();
    let l2: f64 = mis[col("lambda2")].parse().unwrap();
    assert!((l2 - 1.0 / 3.0).abs() < 1e-9);
    assert_eq!(mis[col("matched_bound")], "alternate");
    for r in &rows {
        assert_eq!(r.len(), header.len());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "q4");
    assert_eq!(meta["config"]["spectral"]["alpha"], 0.5);
}

#[test]
fn empty_trace_is_header_only() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        r#"{{ {LADDER_MODEL}, "ladder": {{ "temperatures": [1.0, 2.0], "steps": 0, "burn_in": 0 }} }}"#
    );
    let p = write(tmp.path(), "run.json", &text);
    let cfg = load_config_with(&p, Some(Experiment::Run), None).unwrap();
    let out = tmp.path().join("out");
    run_experiment(&cfg, &out, false).unwrap();
    assert_eq!(
        fs::read_to_string(out.join("trace.csv")).unwrap(),
        "step,level,state,energy,ring,move_type,accepted\n"
    );
    assert!(out.join(SENTINEL).exists());
}

#[test]
fn run_trace_schema() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "run.json", &ladder_config(""));
    let cfg = load_config_with(&p, Some(Experiment::Run), None).unwrap();
    let out = tmp.path().join("out");
    run_experiment(&cfg, &out, false).unwrap();
    let rows = read_csv(&out.join("trace.csv"));
    assert_eq!(rows.len(), 1 + 2 * 3000);
    let mut last = [None::<u64>; 2];
    for r in &rows[1..] {
        assert_eq!(r.len(), 7);
        assert!(r[6] == "0" || r[6] == "1");
        let level: usize = r[1].parse().unwrap();
        let step: u64 = r[0].parse().unwrap();
        assert!(last[level].is_none_or(|s| step > s));
        last[level] = Some(step);
    }
    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(!text.contains('\r'));
}

#[test]
fn empty_top_ledger_falls_back_every_jump() {
    let tmp = TempDir::new().unwrap();
    // burn-in longer than the run: the top level never records
    let text = format!(
        r#"{{ {LADDER_MODEL}, "replicates": 2,
             "ladder": {{ "temperatures": [1.0, 2.0], "truncations": [null, 1.0], "steps": 2000, "burn_in": 5000, "p_jump": 0.3 }} }}"#
    );
    let p = write(tmp.path(), "q1.json", &text);
    let cfg = load_config_with(&p, Some(Experiment::Q1), None).unwrap();
    let out = tmp.path().join("out");
    run_experiment(&cfg, &out, false).unwrap();
    let rows = read_csv(&out.join("moves.csv"));
    let mut fallbacks = 0;
    for r in rows[1..].iter().filter(|r| r[3] == "0") {
        assert_eq!(r[5], "0");
        fallbacks += r[6].parse::<u64>().unwrap();
    }
    assert!(fallbacks > 0);
    let summary = read_csv(&out.join("summary.csv"));
    for r in &summary[1..] {
        assert_eq!(r[6], "1");
    }
}

fn run_twice(exp: Experiment, cfg_text: &str, files: &[&str]) {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "cfg.json", cfg_text);
    let cfg = load_config_with(&p, Some(exp), None).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&cfg, &a, false).unwrap();
    run_experiment(&cfg, &b, false).unwrap();
    for f in files.iter().chain(&["metadata.json"]) {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    run_twice(
        Experiment::Q1,
        &ladder_config(""),
        &[
            "tv_curve.csv",
            "first_passage.csv",
            "moves.csv",
            "summary.csv",
        ],
    );
    run_twice(
        Experiment::Q3,
        &ladder_config(""),
        &["ledger_tv.csv", "summary.csv", "ideal.json"],
    );
    run_twice(
        Experiment::Segment,
        r#"{ "seed": 3, "segmentation": { "image": { "kind": "synthetic", "width": 8, "height": 8 },
             "region": { "mode": "fixed_means", "means": [0.3, 0.7], "sigma": 0.3 }, "init": "random", "sweeps": 2 } }"#,
        &["energy.csv", "labels.pgm", "overlay.ppm", "image.pgm"],
    );
}

#[test]
fn segment_reads_pgm_and_writes_label_map() {
    let tmp = TempDir::new().unwrap();
    let mut pgm = b"P5\n# test\n4 2\n255\n".to_vec();
    pgm.extend_from_slice(&[20, 20, 230, 230, 20, 20, 230, 230]);
    fs::write(tmp.path().join("in.pgm"), &pgm).unwrap();
    let p = write(
        tmp.path(),
        "seg.json",
        r#"{ "segmentation": { "image": { "kind": "pgm", "path": "in.pgm" }, "labels": 3, "beta": 0.5,
             "region": { "mode": "poly_fit", "order": 0, "sigma": 0.1 }, "sweeps": 3 } }"#,
    );
    let cfg = load_config_with(&p, Some(Experiment::Segment), None).unwrap();
    let out = tmp.path().join("out");
    run_experiment(&cfg, &out, false).unwrap();
    let labels = fs::read(out.join("labels.pgm")).unwrap();
    assert!(labels.starts_with(b"P5\n4 2\n255\n"));
    let raster = &labels[labels.len() - 8..];
    assert!(raster.iter().all(|g| [0, 127, 255].contains(g)));
    assert!(out.join("overlay.ppm").exists());
    assert_eq!(read_csv(&out.join("energy.csv")).len(), 1 + 3 * 8);
}
