use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn sann() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sann"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    sann().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY: &str = r#""mlp": {"hidden_layers": 2, "hidden_width": 8, "epochs_per_iteration": 5, "max_training_iterations": 2},
    "controller": {"max_runs": 14, "minimizer": {"restarts": 1, "max_evals": 50}}"#;

fn write_config(dir: &Path, dim: usize, experiment: &str) -> std::path::PathBuf {
    let lower = vec!["-1"; dim].join(",");
    let upper = vec!["1"; dim].join(",");
    let text = format!(
        r#"{{"space": {{"lower": [{lower}], "upper": [{upper}]}}, {TINY}, "experiment": {experiment}}}"#
    );
    let path = dir.join("session.json");
    std::fs::write(&path, text).unwrap();
    path
}

/// Archive lines with the wall clock removed.
fn archive_without_times(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if let Some(obj) = v.as_object_mut() {
                obj.remove("wall_time");
            }
            v
        })
        .collect()
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(args: &[&str]) -> Self {
        let mut child = sann()
            .arg("serve-sim")
            .args(args)
            .args(["--port", "0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Self { child, addr }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn optimize_in_process_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3, r#"{"kind": "sim", "model": "quadratic", "seed": 7}"#);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for archive in [&a, &b] {
        let out = run(&[
            "optimize",
            "--config",
            config.to_str().unwrap(),
            "--archive",
            archive.to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("after 14 runs"));
    }
    let lines = archive_without_times(&a);
    assert_eq!(lines.len(), 15);
    assert_eq!(lines, archive_without_times(&b));

    let csv = dir.path().join("conv.csv");
    let out = run(&["report", "--archive", a.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("run_index,source,scaled_cost,best_so_far"));
    assert_eq!(rows.count(), 14);
}

#[test]
fn optimize_resume_extends_archive() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 2, r#"{"kind": "sim", "model": "quadratic"}"#);
    let archive = dir.path().join("run.jsonl");
    let args = ["optimize", "--config", config.to_str().unwrap(), "--archive", archive.to_str().unwrap()];
    assert_eq!(code(&run(&args)), 0);
    // Drop the last five runs as if the session had been interrupted.
    let text = std::fs::read_to_string(&archive).unwrap();
    let kept: Vec<&str> = text.lines().take(10).collect();
    std::fs::write(&archive, kept.join("\n") + "\n").unwrap();

    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let out = run(&resumed);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines = archive_without_times(&archive);
    assert_eq!(lines.len(), 15);
    let indices: Vec<u64> = lines[1..].iter().map(|l| l["run_index"].as_u64().unwrap()).collect();
    assert_eq!(indices, (0..14).collect::<Vec<_>>());
}

#[test]
fn optimize_over_tcp_against_serve_sim() {
    let server = Server::start(&["--model", "quadratic", "--dim", "2", "--seed", "3"]);
    let dir = tempfile::tempdir().unwrap();
    let tcp = format!(r#"{{"kind": "tcp", "address": "{}", "timeout_secs": 10}}"#, server.addr);
    let config = write_config(dir.path(), 2, &tcp);
    let tcp_archive = dir.path().join("tcp.jsonl");
    let out = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--archive",
        tcp_archive.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // The session ends with a shutdown message, which stops the server cleanly.
    let mut server = server;
    let status = server.child.wait().unwrap();
    assert!(status.success());

    let local = write_config(dir.path(), 2, r#"{"kind": "sim", "model": "quadratic", "seed": 3}"#);
    let local_archive = dir.path().join("local.jsonl");
    let out = run(&[
        "optimize",
        "--config",
        local.to_str().unwrap(),
        "--archive",
        local_archive.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let (t, l) = (archive_without_times(&tcp_archive), archive_without_times(&local_archive));
    assert_eq!(t.len(), l.len());
    for (a, b) in t.iter().zip(&l).skip(1) {
        assert_eq!(a["params"], b["params"]);
        let (ca, cb) = (a["raw_cost"].as_f64().unwrap(), b["raw_cost"].as_f64().unwrap());
        assert!((ca - cb).abs() <= 1e-9, "{ca} vs {cb}");
    }
}

#[test]
fn optimize_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("a.jsonl");
    let archive = archive.to_str().unwrap();

    let missing = run(&["optimize", "--config", "/nonexistent/session.json", "--archive", archive]);
    assert_eq!(code(&missing), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"space": {"lower": [1], "upper": [0]}}"#).unwrap();
    assert_eq!(code(&run(&["optimize", "--config", bad.to_str().unwrap(), "--archive", archive])), 2);

    // Nothing listens on a port we just released.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let refused = write_config(
        dir.path(),
        2,
        &format!(r#"{{"kind": "tcp", "address": "127.0.0.1:{port}", "timeout_secs": 2}}"#),
    );
    assert_eq!(code(&run(&["optimize", "--config", refused.to_str().unwrap(), "--archive", archive])), 3);
}

#[test]
fn dimension_mismatch_with_server_is_a_config_error() {
    let server = Server::start(&["--model", "sphere", "--dim", "4"]);
    let dir = tempfile::tempdir().unwrap();
    let tcp = format!(r#"{{"kind": "tcp", "address": "{}"}}"#, server.addr);
    let config = write_config(dir.path(), 2, &tcp);
    let archive = dir.path().join("a.jsonl");
    let out = run(&["optimize", "--config", config.to_str().unwrap(), "--archive", archive.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_od_prints_json_and_fails_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let (od, gamma) = (535.0_f64, 5.75_f64);
    let mut csv = String::from("delta_mhz,transmission\n");
    for i in 0..41 {
        let delta = -300.0 + 15.0 * i as f64;
        let t = (-od / (1.0 + 4.0 * (delta / gamma).powi(2))).exp();
        csv.push_str(&format!("{delta},{t}\n"));
    }
    let input = dir.path().join("scan.csv");
    std::fs::write(&input, csv).unwrap();
    let out = run(&["fit-od", "--input", input.to_str().unwrap(), "--gamma", "5.75"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((result["od"].as_f64().unwrap() - od).abs() < 1e-6 * od);

    let out = run(&["fit-od", "--input", input.to_str().unwrap(), "--gamma", "5.0", "--fit-gamma"]);
    assert_eq!(code(&out), 0);
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((result["gamma_used"].as_f64().unwrap() - gamma).abs() < 1e-6);

    let short = dir.path().join("short.csv");
    std::fs::write(&short, "delta_mhz,transmission\n0,0.5\n10,0.9\n").unwrap();
    assert_eq!(code(&run(&["fit-od", "--input", short.to_str().unwrap(), "--gamma", "5.75"])), 4);
}

#[test]
fn bench_scaling_prints_csv() {
    let out = run(&["bench-scaling", "--points", "16,32"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "count,fit_seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("16,"));
    let secs: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(secs > 0.0);
}
