//! Two-device runs over loopback TCP: digest equivalence against a local
//! run, handshake rejection on a tampered deployment and the connect
//! timeout when the peer never shows up.

use std::thread;
use std::time::{Duration, Instant};

use edgeprune_core::deploy::{self, DeploymentManifest};
use edgeprune_core::runtime::{run_local, run_manifest, RunOptions, RunStats};
use edgeprune_core::synthetic;

fn split_vclass(frames: u64, seed: u64, base_port: u16) -> Vec<DeploymentManifest> {
    let graph = synthetic::vehicle_classification_graph(synthetic::VclassOptions {
        frames,
        seed,
        source_work_ms: 0.0,
    });
    let platform = synthetic::loopback_platform(2, base_port);
    let order: Vec<String> = ["input", "l1", "l2", "l3", "l4l5"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mapping = synthetic::prefix_mapping(&order, 2);
    deploy::partition(&graph, &platform, &mapping, base_port).unwrap()
}

fn run_pair(
    manifests: Vec<DeploymentManifest>,
    opts: &RunOptions,
) -> Vec<Result<RunStats, edgeprune_core::runtime::RuntimeError>> {
    let mut handles = Vec::new();
    for manifest in manifests {
        let opts = opts.clone();
        handles.push(thread::spawn(move || run_manifest(&manifest, &opts)));
    }
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

#[test]
fn split_run_reproduces_the_local_digest() {
    let graph = synthetic::vehicle_classification_graph(synthetic::VclassOptions {
        frames: 4,
        seed: 7,
        source_work_ms: 0.0,
    });
    let local = run_local(&graph, &RunOptions::default()).unwrap();
    assert!(!local.failed, "{:?}", local.errors);
    let want = local.actor_report("l4l5").unwrap()["digest"].as_str().unwrap().to_string();

    let manifests = split_vclass(4, 7, 7700);
    assert_eq!(manifests.len(), 2);
    let results = run_pair(manifests, &RunOptions::default());
    let mut by_device = std::collections::BTreeMap::new();
    for stats in results {
        let stats = stats.unwrap();
        assert!(!stats.failed, "{}: {:?}", stats.device, stats.errors);
        by_device.insert(stats.device.clone(), stats);
    }

    let client = &by_device["dev0"];
    assert_eq!(client.frames.len(), 4);
    assert_eq!(client.edges["e_l1_l2"].counters.produced, 4);

    let server = &by_device["dev1"];
    assert_eq!(server.edges["e_l1_l2"].counters.consumed, 4);
    let got = server.actor_report("l4l5").unwrap()["digest"].as_str().unwrap();
    assert_eq!(got, want, "split run drifted from the local result");
}

#[test]
fn tampered_graph_hash_is_rejected_at_handshake() {
    let mut manifests = split_vclass(2, 3, 7720);
    manifests[1].graph_hash ^= 1;
    let opts = RunOptions {
        connect_timeout: Duration::from_secs(2),
        ..RunOptions::default()
    };
    let results = run_pair(manifests, &opts);
    let client = results[0].as_ref().expect_err("transmit side must fail");
    assert!(
        client.to_string().contains("handshake rejected"),
        "client error: {client}"
    );
    let server = results[1].as_ref().expect_err("receive side must fail");
    assert!(server.to_string().contains("e_l1_l2"), "server error: {server}");
}

#[test]
fn absent_peer_fails_the_connect_after_the_deadline() {
    let manifests = split_vclass(2, 3, 7740);
    let client = manifests.into_iter().find(|m| m.device == "dev0").unwrap();
    let opts = RunOptions {
        connect_timeout: Duration::from_secs(1),
        ..RunOptions::default()
    };
    let begin = Instant::now();
    let err = run_manifest(&client, &opts).expect_err("no listener is running");
    let elapsed = begin.elapsed();
    let text = err.to_string();
    assert!(text.contains("e_l1_l2"), "error names the edge: {text}");
    assert!(elapsed >= Duration::from_millis(900), "gave up too early: {elapsed:?}");
    assert!(elapsed < Duration::from_secs(15), "gave up too late: {elapsed:?}");
}
