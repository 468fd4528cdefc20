use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clicklift"));
    c.env("RUST_LOG", "info");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn gen(dir: &Path, frames: &str) -> String {
    let out = run(&[
        "gen-synthetic",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "5",
        "--frames",
        frames,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.json").to_str().unwrap().to_string()
}

#[test]
fn pipeline_runs_all_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "3");
    let out = run(&["pipeline", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("plg: 30 of 30 clicks accepted"), "{stdout}");
    assert!(stdout.contains("mIoU"));
    assert!(dir.path().join("out/report.json").exists());
    assert!(dir.path().join("out/ile/000002.labels").exists());
}

#[test]
fn single_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "2");
    for cmd in ["plg", "tsu", "ile", "eval"] {
        let out = run(&[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["stage"], "ile");
}

#[test]
fn simulate_clicks_rewrites_the_click_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "1");
    let before = std::fs::read(dir.path().join("clicks.jsonl")).unwrap();
    let out = run(&[
        "simulate-clicks",
        "--config",
        &cfg,
        "--error-range",
        "0.5",
        "--seed",
        "9",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("10 clicks"));
    let after = std::fs::read(dir.path().join("clicks.jsonl")).unwrap();
    assert_ne!(before, after);
    assert_eq!(after.iter().filter(|&&b| b == b'\n').count(), 10);
}

#[test]
fn missing_input_fails_and_keeps_earlier_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "3");
    std::fs::remove_dir_all(dir.path().join("predictions")).unwrap();
    let out = run(&["pipeline", "--config", &cfg, "--stages", "plg,tsu"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tsu") && stderr.contains("predictions"), "{stderr}");
    assert!(dir.path().join("out/plg/000000.labels").exists());
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "1");
    assert!(!run(&["pipeline", "--config", &cfg, "--stages", "plg,nope"])
        .status
        .success());
    assert!(!run(&["eval", "--config", "/nonexistent/config.json"]).status.success());
    std::fs::write(dir.path().join("config.json"), r#"{"tsu": {"voxel_size": 0}}"#).unwrap();
    let out = run(&["tsu", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("voxel"));
}

#[test]
fn serve_answers_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gen(dir.path(), "1");
    let mut child = bin()
        .args(["serve", "--config", &cfg, "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("listening on http://").nth(1) {
            break rest.trim().to_string();
        }
    };
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /api/sequences HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"sequence_id\""));
}
