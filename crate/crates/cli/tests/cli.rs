//! End-to-end tests of the `edgeprune` binary: exit codes, file outputs
//! and the flag/environment precedence of the global configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgeprune_core::model::{DeviceSpec, PlatformGraph};
use edgeprune_core::synthetic::{self, VclassOptions};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_edgeprune")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes graph, platform and mapping documents for a vehicle
/// classification pipeline split after `client_actors` actors, and
/// compiles them. Returns the deployment directory.
fn compile_vclass(dir: &Path, frames: u64, devices: usize, client_actors: usize, base_port: u16) -> PathBuf {
    let graph = synthetic::vehicle_classification_graph(VclassOptions {
        frames,
        ..VclassOptions::default()
    });
    let order: Vec<String> = graph.actors.iter().map(|a| a.id.clone()).collect();
    let platform = synthetic::loopback_platform(devices, base_port);
    let mapping = synthetic::prefix_mapping(&order, client_actors);

    let g = write(dir, "graph.json", &graph.to_document_string());
    let p = write(dir, "platform.json", &serde_json::to_string_pretty(&platform).unwrap());
    let m = write(dir, "mapping.json", &mapping.to_document_string());
    let out = dir.join("deploy");
    let status = Command::new(bin())
        .args(["compile", "-g"])
        .arg(&g)
        .arg("-p")
        .arg(&p)
        .arg("-m")
        .arg(&m)
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "compile failed: {}", stderr(&status));
    out
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = Command::new(bin()).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "unknown subcommand: {}", stderr(&out));

    let out = Command::new(bin()).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing -M: {}", stderr(&out));
}

#[test]
fn analyze_accepts_a_consistent_graph() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synthetic::vehicle_classification_graph(VclassOptions::default());
    let path = write(dir.path(), "graph.json", &graph.to_document_string());
    let report_path = dir.path().join("report.json");

    let out = Command::new(bin())
        .args(["analyze", "-g"])
        .arg(&path)
        .arg("--report")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("is consistent"), "stdout: {}", stdout(&out));

    let report = json_file(&report_path);
    assert_eq!(report["verdict"], "consistent");
    assert!(report["checked_assignments"].as_u64().unwrap() >= 1);
}

#[test]
fn analyze_rejects_rate_mismatches_and_reports_them() {
    let dir = tempfile::tempdir().unwrap();
    let mut graph = synthetic::vehicle_classification_graph(VclassOptions::default());
    let l2_out = graph
        .actors
        .iter_mut()
        .find(|a| a.id == "l2")
        .unwrap()
        .ports
        .iter_mut()
        .find(|p| p.id == "out")
        .unwrap();
    l2_out.lrl = 2;
    l2_out.url = 2;
    let path = write(dir.path(), "asym.json", &graph.to_document_string());
    let report_path = dir.path().join("report.json");

    let out = Command::new(bin())
        .args(["analyze", "-g"])
        .arg(&path)
        .arg("--report")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[R5]"), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("is inconsistent"), "stderr: {}", stderr(&out));

    let report = json_file(&report_path);
    assert_eq!(report["verdict"], "inconsistent");
}

#[test]
fn compile_writes_per_device_manifests_and_a_launch_index() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = compile_vclass(dir.path(), 8, 2, 2, 7600);

    let dev0 = json_file(&out_dir.join("manifest.dev0.json"));
    let dev1 = json_file(&out_dir.join("manifest.dev1.json"));
    let index = json_file(&out_dir.join("launch.json"));

    assert_eq!(dev0["device"], "dev0");
    assert_eq!(dev1["device"], "dev1");
    assert_eq!(dev0["graph_hash"], dev1["graph_hash"]);
    assert_eq!(index["graph_hash"], dev0["graph_hash"]);
    assert_eq!(index["devices"].as_array().unwrap().len(), 2);

    let cut = &dev1["net_edges"][0];
    assert_eq!(cut["edge"]["id"], "e_l1_l2");
    assert_eq!(cut["role"], "rx");
    assert_eq!(cut["port"], 7700);
}

#[test]
fn run_executes_one_manifest_and_writes_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = compile_vclass(dir.path(), 8, 1, 5, 7600);
    let stats_path = dir.path().join("stats.json");

    let out = Command::new(bin())
        .args(["run", "-M"])
        .arg(out_dir.join("manifest.dev0.json"))
        .args(["--frames", "3", "--stats"])
        .arg(&stats_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("device dev0: 3 frames"), "stdout: {}", stdout(&out));

    let stats = json_file(&stats_path);
    assert_eq!(stats["frames_processed"], 3);
    assert_eq!(stats["failed"], false);
    let digest = stats["actors"]["l4l5"]["report"]["digest"].as_str().unwrap();
    assert_eq!(digest.len(), 16);
}

#[test]
fn global_seed_drives_kernels_without_a_pinned_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut graph = synthetic::vehicle_classification_graph(VclassOptions {
        frames: 2,
        ..VclassOptions::default()
    });
    for actor in &mut graph.actors {
        actor.kernel_params.remove("seed");
    }
    let order: Vec<String> = graph.actors.iter().map(|a| a.id.clone()).collect();
    let platform = synthetic::loopback_platform(1, 7600);
    let mapping = synthetic::prefix_mapping(&order, order.len());
    let g = write(dir.path(), "graph.json", &graph.to_document_string());
    let p = write(dir.path(), "platform.json", &serde_json::to_string_pretty(&platform).unwrap());
    let m = write(dir.path(), "mapping.json", &mapping.to_document_string());
    let out_dir = dir.path().join("deploy");
    let status = Command::new(bin())
        .args(["compile", "-g"])
        .arg(&g)
        .arg("-p")
        .arg(&p)
        .arg("-m")
        .arg(&m)
        .arg("-o")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "compile failed: {}", stderr(&status));

    let digest_for = |seed: &str, name: &str| {
        let stats_path = dir.path().join(name);
        let out = Command::new(bin())
            .args(["run", "-M"])
            .arg(out_dir.join("manifest.dev0.json"))
            .args(["--seed", seed, "--stats"])
            .arg(&stats_path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        json_file(&stats_path)["actors"]["l4l5"]["report"]["digest"]
            .as_str()
            .unwrap()
            .to_string()
    };

    let a = digest_for("1", "a.json");
    let a_again = digest_for("1", "b.json");
    let b = digest_for("2", "c.json");
    assert_eq!(a, a_again, "same seed must reproduce the digest");
    assert_ne!(a, b, "different seeds must change the digest");
}

#[test]
fn base_port_comes_from_the_environment_and_the_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synthetic::vehicle_classification_graph(VclassOptions::default());
    let order: Vec<String> = graph.actors.iter().map(|a| a.id.clone()).collect();
    let platform = PlatformGraph {
        devices: vec![
            DeviceSpec { id: "dev0".into(), units: vec!["cpu0".into()], address: "127.0.0.1".into() },
            DeviceSpec { id: "dev1".into(), units: vec!["cpu0".into()], address: "127.0.0.1".into() },
        ],
        links: vec![("dev0".into(), "dev1".into())],
    };
    let mapping = synthetic::prefix_mapping(&order, 2);
    let g = write(dir.path(), "graph.json", &graph.to_document_string());
    let p = write(dir.path(), "platform.json", &serde_json::to_string_pretty(&platform).unwrap());
    let m = write(dir.path(), "mapping.json", &mapping.to_document_string());

    let compile = |out_name: &str, extra: &[&str]| {
        let out_dir = dir.path().join(out_name);
        let status = Command::new(bin())
            .args(["compile", "-g"])
            .arg(&g)
            .arg("-p")
            .arg(&p)
            .arg("-m")
            .arg(&m)
            .arg("-o")
            .arg(&out_dir)
            .args(extra)
            .env("EDGEPRUNE_BASE_PORT", "7610")
            .output()
            .unwrap();
        assert!(status.status.success(), "compile failed: {}", stderr(&status));
        json_file(&out_dir.join("manifest.dev1.json"))["net_edges"][0]["port"]
            .as_u64()
            .unwrap()
    };

    assert_eq!(compile("from_env", &[]), 7610);
    assert_eq!(compile("from_flag", &["--base-port", "7620"]), 7620);
}

#[test]
fn launch_runs_a_split_deployment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();

    let local_dir = compile_vclass(dir.path(), 4, 1, 5, 7600);
    let local_stats = dir.path().join("local.json");
    let out = Command::new(bin())
        .args(["run", "-M"])
        .arg(local_dir.join("manifest.dev0.json"))
        .arg("--stats")
        .arg(&local_stats)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let local_digest = json_file(&local_stats)["actors"]["l4l5"]["report"]["digest"]
        .as_str()
        .unwrap()
        .to_string();

    let split = dir.path().join("split");
    std::fs::create_dir(&split).unwrap();
    let split_dir = compile_vclass(&split, 4, 2, 2, 7600);
    let merged_path = dir.path().join("merged.json");
    let out = Command::new(bin())
        .args(["launch", "-d"])
        .arg(&split_dir)
        .arg("--stats")
        .arg(&merged_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("processed 4 frames"), "stdout: {}", stdout(&out));

    let merged = json_file(&merged_path);
    assert_eq!(merged["failed"], false);
    assert_eq!(merged["frames_processed"], 4);
    let split_digest = merged["devices"]["dev1"]["actors"]["l4l5"]["report"]["digest"]
        .as_str()
        .unwrap();
    assert_eq!(split_digest, local_digest, "split run must reproduce the local digest");
}

#[test]
fn predict_prices_every_split_from_declared_times() {
    let dir = tempfile::tempdir().unwrap();
    let graph = synthetic::dcal_busywork_graph(16, 1);
    let path = write(dir.path(), "dcal.json", &graph.to_document_string());

    let out = Command::new(bin())
        .args(["predict", "-g"])
        .arg(&path)
        .args(["--shape-bw", "2.3e6", "--shape-lat", "2.15"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pp,client_actors,crossing_bytes,predicted_ms");
    assert_eq!(lines.len(), 6, "four splits plus the local row: {text}");
    assert!(lines[5].starts_with("local,5,0,189.000"), "local row: {}", lines[5]);

    let pp3: Vec<&str> = lines[3].split(',').collect();
    assert_eq!(pp3[0], "3");
    assert_eq!(pp3[2], "73728");
    let ms: f64 = pp3[3].parse().unwrap();
    assert!((ms - 123.206).abs() < 0.01, "pp3 predicted {ms}");
}
