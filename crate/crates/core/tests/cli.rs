use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

fn poca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poca"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn manifest(dir: &Path, extra_line: Option<&str>) -> String {
    let mut lines = String::new();
    for i in 0..2u8 {
        RgbImage::from_fn(8, 6, |x, _| {
            if x < 4 {
                Rgb([220, 20, 20 * i])
            } else {
                Rgb([20, 30, 230])
            }
        })
        .save(dir.join(format!("{i}.png")))
        .unwrap();
        lines.push_str(&format!(
            "{{\"id\":\"im{i}\",\"path\":\"{i}.png\",\"questions\":[{{\"question\":\"What color?\",\"answers\":[\"red\"]}}],\"reference_captions\":[\"a red and blue image\"]}}\n"
        ));
    }
    if let Some(l) = extra_line {
        lines.push_str(l);
        lines.push('\n');
    }
    let p = dir.join("manifest.jsonl");
    fs::write(&p, lines).unwrap();
    s(&p)
}

#[test]
fn simulate_writes_a_sealed_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("sim"));
    let o = poca(&[
        "simulate", "--mock", "--trials", "200", "--seed", "3", "--out", &out,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["holds"], true);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    let r = poca(&["report", &out]);
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    let out = s(&tmp.path().join("sim"));
    let mut summaries = Vec::new();
    for threads in [1, 4] {
        fs::write(
            &cfg,
            format!("seed = 11\n[simulate]\ntrials = 300\nthreads = {threads}\n"),
        )
        .unwrap();
        let o = poca(&["--config", &s(&cfg), "simulate", "--out", &out]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        let v: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(Path::new(&out).join("summary.json")).unwrap(),
        )
        .unwrap();
        summaries.push(v["runs"].clone());
        fs::remove_dir_all(&out).unwrap();
    }
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn pipeline_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), None);
    let out = s(&tmp.path().join("run"));
    let o = poca(&["pipeline", "--mock", "--manifest", &m, "--out", &out]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let records = fs::read_to_string(Path::new(&out).join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);

    for mode in ["vqa", "paragraph"] {
        let e = poca(&["eval", "--mock", &out, "--mode", mode]);
        assert_eq!(
            e.status.code(),
            Some(0),
            "{mode}: {}",
            String::from_utf8_lossy(&e.stderr)
        );
        assert!(Path::new(&out).join("report.csv").exists());
    }
    let r = poca(&["report", &out]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
}

#[test]
fn item_failure_exits_one_and_keeps_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(tmp.path(), Some(r#"{"id":"ghost","path":"missing.png"}"#));
    let out = s(&tmp.path().join("run"));
    let o = poca(&["pipeline", "--mock", "--manifest", &m, "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    let records = fs::read_to_string(Path::new(&out).join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 3);
    assert!(records.lines().last().unwrap().contains("\"ghost\""));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(poca(&["frobnicate"]).status.code(), Some(2));
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[simulate]\ntrails = 10\n").unwrap();
    let o = poca(&["--config", &s(&cfg), "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trails"));
    let missing = poca(&["eval", "--mock", &s(&tmp.path().join("nowhere"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn tampered_archive_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("sim"));
    assert_eq!(
        poca(&["simulate", "--mock", "--trials", "50", "--out", &out])
            .status
            .code(),
        Some(0)
    );
    fs::write(Path::new(&out).join("summary.json"), "{}").unwrap();
    assert_ne!(poca(&["report", &out]).status.code(), Some(0));
}

#[test]
fn export_prompts_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = s(&tmp.path().join("prompts"));
    assert_eq!(
        poca(&["export-prompts", "--out", &out]).status.code(),
        Some(0)
    );
    let read = || {
        let mut files: Vec<(String, String)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read_to_string(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let first = read();
    assert_eq!(
        poca(&["export-prompts", "--out", &out]).status.code(),
        Some(0)
    );
    assert_eq!(first, read());
    let all: String = first.iter().map(|(_, t)| t.as_str()).collect();
    assert!(all.contains("Prioritize Visual Details"));
    assert!(all.contains("plese make your response as short"));
}
