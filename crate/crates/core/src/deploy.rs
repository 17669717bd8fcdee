//! Partitioning a mapped graph into per-device deployment manifests,
//! emitting and loading them, and launching one runtime process per device.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer;
use crate::model::{
    ApplicationGraph, ActorSpec, EdgeSpec, GraphError, Mapping, PlatformGraph, PortDirection,
    PortSpec, validate_mapping,
};
use crate::netfifo::LinkShape;
use crate::runtime::stats::{MergedStats, RunStats};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const DEFAULT_BASE_PORT: u16 = 7100;

/// Edge id of the latency feedback loop added by `add_latency_feedback`.
pub const FEEDBACK_EDGE: &str = "__fb";

/// Ports and edges with this prefix are serviced by the engine itself and
/// stay invisible to kernels.
pub fn is_internal_port(id: &str) -> bool {
    id.starts_with("__fb")
}

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph is not consistent: {0}")]
    Inconsistent(String),
    #[error("dynamic processing group `{dpg}` is split across devices `{a}` and `{b}`")]
    SplitDpg { dpg: String, a: String, b: String },
    #[error("control edge `{edge}` crosses devices `{a}` -> `{b}`")]
    ControlCut { edge: String, a: String, b: String },
    #[error("cut edge `{edge}` has a dynamic rate range")]
    DynamicCut { edge: String },
    #[error("cut edge `{edge}`: port {base}+{ordinal} does not fit in 16 bits")]
    PortOverflow { edge: String, base: u16, ordinal: usize },
    #[error("manifest schema {found} is not supported, expected {MANIFEST_SCHEMA}")]
    Schema { found: u32 },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("latency feedback: {0}")]
    Feedback(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("launch: {0}")]
    Launch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    Tx,
    Rx,
}

/// One end of a cut edge as seen from a single device. The receive side
/// binds `host:port`; the transmit side connects to the same pair, so both
/// manifests of a cut edge carry identical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetEdge {
    pub edge: EdgeSpec,
    pub role: NetRole,
    /// Ordinal of this edge among all cut edges, sorted by edge id. Also
    /// the wire-level edge index checked by the handshake.
    pub edge_index: u16,
    pub host: String,
    pub port: u16,
    /// Tokens per firing; cut edges always run at a fixed rate.
    pub rate: u32,
}

/// Everything one device needs to run its share of the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentManifest {
    pub schema: u32,
    pub graph_name: String,
    pub graph_hash: u64,
    pub device: String,
    pub actors: Vec<ActorSpec>,
    /// Edges with both endpoints on this device.
    pub edges: Vec<EdgeSpec>,
    pub net_edges: Vec<NetEdge>,
}

impl DeploymentManifest {
    pub fn to_document_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn rx_count(&self) -> usize {
        self.net_edges.iter().filter(|n| n.role == NetRole::Rx).count()
    }

    pub fn tx_count(&self) -> usize {
        self.net_edges.iter().filter(|n| n.role == NetRole::Tx).count()
    }
}

pub fn load_manifest_str(text: &str) -> Result<DeploymentManifest, DeployError> {
    let manifest: DeploymentManifest =
        serde_json::from_str(text).map_err(|e| DeployError::Manifest(e.to_string()))?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(DeployError::Schema { found: manifest.schema });
    }
    Ok(manifest)
}

pub fn load_manifest_file(path: &Path) -> Result<DeploymentManifest, DeployError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DeployError::Manifest(format!("cannot read `{}`: {e}", path.display())))?;
    load_manifest_str(&text)
}

fn device_base(platform: &PlatformGraph, device: &str, default_base: u16) -> (String, u16) {
    let spec = platform.device(device).expect("mapping was validated");
    let (host, base) = spec.host_and_base();
    (host.to_string(), base.unwrap_or(default_base))
}

/// Splits a mapped graph into one manifest per device in use.
///
/// The graph must pass consistency analysis. Every dynamic processing
/// group must live on a single device, and no control edge may cross
/// devices. Cut edges get globally unique ports: sorted by edge id, the
/// edge at ordinal `i` claims `base + i` on its consumer's device, so
/// devices sharing a host never collide.
pub fn partition(
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
    mapping: &Mapping,
    default_base: u16,
) -> Result<Vec<DeploymentManifest>, DeployError> {
    validate_mapping(mapping, graph, platform)?;
    let report = analyzer::analyze(graph);
    if !report.is_consistent() {
        let detail = report
            .diagnostics
            .iter()
            .find(|d| d.severity == crate::diag::Severity::Error)
            .map(|d| format!("{} {}: {}", d.rule, d.element, d.message))
            .unwrap_or_else(|| "analysis failed".into());
        return Err(DeployError::Inconsistent(detail));
    }

    let device_of = |actor: &str| mapping.device_of(actor).expect("mapping is total");

    for dpg in &graph.dpgs {
        let mut home: Option<(&str, &str)> = None;
        for member in &dpg.members {
            let device = device_of(member);
            match home {
                None => home = Some((member, device)),
                Some((_, first)) if first != device => {
                    return Err(DeployError::SplitDpg {
                        dpg: dpg.id.clone(),
                        a: first.to_string(),
                        b: device.to_string(),
                    });
                }
                Some(_) => {}
            }
        }
    }

    let mut cut: Vec<&EdgeSpec> = Vec::new();
    for edge in &graph.edges {
        let from = device_of(&edge.producer.0);
        let to = device_of(&edge.consumer.0);
        if from == to {
            continue;
        }
        if edge.control {
            return Err(DeployError::ControlCut {
                edge: edge.id.clone(),
                a: from.to_string(),
                b: to.to_string(),
            });
        }
        let (lrl, url) = graph.edge_rate_range(edge);
        if lrl != url {
            return Err(DeployError::DynamicCut { edge: edge.id.clone() });
        }
        cut.push(edge);
    }
    cut.sort_by(|a, b| a.id.cmp(&b.id));

    struct CutSlot<'a> {
        edge: &'a EdgeSpec,
        index: u16,
        host: String,
        port: u16,
        rate: u32,
    }
    let mut slots = Vec::with_capacity(cut.len());
    for (ordinal, edge) in cut.iter().enumerate() {
        let consumer_device = device_of(&edge.consumer.0);
        let (host, base) = device_base(platform, consumer_device, default_base);
        let port = usize::from(base) + ordinal;
        let port = u16::try_from(port).map_err(|_| DeployError::PortOverflow {
            edge: edge.id.clone(),
            base,
            ordinal,
        })?;
        slots.push(CutSlot {
            edge,
            index: ordinal as u16,
            host,
            port,
            rate: graph.edge_rate_range(edge).0,
        });
    }

    let mut devices = mapping.devices_in_use(graph);
    devices.sort();

    let mut manifests = Vec::with_capacity(devices.len());
    for device in &devices {
        let actors: Vec<ActorSpec> = graph
            .actors
            .iter()
            .filter(|a| device_of(&a.id) == device)
            .cloned()
            .collect();
        let edges: Vec<EdgeSpec> = graph
            .edges
            .iter()
            .filter(|e| device_of(&e.producer.0) == device && device_of(&e.consumer.0) == device)
            .cloned()
            .collect();
        let mut net_edges = Vec::new();
        for slot in &slots {
            let producer_here = device_of(&slot.edge.producer.0) == device;
            let consumer_here = device_of(&slot.edge.consumer.0) == device;
            if !(producer_here || consumer_here) {
                continue;
            }
            net_edges.push(NetEdge {
                edge: (*slot.edge).clone(),
                role: if producer_here { NetRole::Tx } else { NetRole::Rx },
                edge_index: slot.index,
                host: slot.host.clone(),
                port: slot.port,
                rate: slot.rate,
            });
        }
        manifests.push(DeploymentManifest {
            schema: MANIFEST_SCHEMA,
            graph_name: graph.name.clone(),
            graph_hash: graph.graph_hash,
            device: device.clone(),
            actors,
            edges,
            net_edges,
        });
    }
    Ok(manifests)
}

// ---------------------------------------------------------------------------
// Latency feedback transform.

/// Adds a single-token feedback edge from the terminal actor back to the
/// source, serializing the pipeline: the source admits frame k+1 only
/// after frame k has fully left the graph. The returned graph has its own
/// hash, so all devices of a distributed run must compile with the same
/// setting.
pub fn add_latency_feedback(graph: &ApplicationGraph) -> Result<ApplicationGraph, DeployError> {
    if graph.edge(FEEDBACK_EDGE).is_some()
        || graph.actors.iter().any(|a| a.ports.iter().any(|p| is_internal_port(&p.id)))
    {
        return Err(DeployError::Feedback("already applied to this graph".into()));
    }
    let has_incoming = |actor: &str| graph.edges.iter().any(|e| e.consumer.0 == actor);
    let has_outgoing = |actor: &str| graph.edges.iter().any(|e| e.producer.0 == actor);
    let sources: Vec<&str> = graph
        .actors
        .iter()
        .filter(|a| {
            !has_incoming(&a.id)
                && graph.edges.iter().any(|e| !e.control && e.producer.0 == a.id)
        })
        .map(|a| a.id.as_str())
        .collect();
    let terminals: Vec<&str> = graph
        .actors
        .iter()
        .filter(|a| !has_outgoing(&a.id) && has_incoming(&a.id))
        .map(|a| a.id.as_str())
        .collect();
    let [source] = sources[..] else {
        return Err(DeployError::Feedback(format!(
            "need exactly one source actor, found {}",
            sources.len()
        )));
    };
    let [terminal] = terminals[..] else {
        return Err(DeployError::Feedback(format!(
            "need exactly one terminal actor, found {}",
            terminals.len()
        )));
    };

    let mut actors = graph.actors.clone();
    for actor in &mut actors {
        if actor.id == source {
            actor.ports.push(PortSpec {
                id: "__fb_in".into(),
                direction: PortDirection::Input,
                lrl: 1,
                url: 1,
                dynamic: false,
            });
        }
        if actor.id == terminal {
            actor.ports.push(PortSpec {
                id: "__fb_out".into(),
                direction: PortDirection::Output,
                lrl: 1,
                url: 1,
                dynamic: false,
            });
        }
    }
    let mut edges = graph.edges.clone();
    edges.push(EdgeSpec {
        id: FEEDBACK_EDGE.into(),
        producer: (terminal.to_string(), "__fb_out".into()),
        consumer: (source.to_string(), "__fb_in".into()),
        token_size: 8,
        capacity: 1,
        initial_tokens: 1,
        control: false,
    });
    Ok(ApplicationGraph::from_parts(
        graph.name.clone(),
        actors,
        edges,
        graph.dpgs.clone(),
    )?)
}

// ---------------------------------------------------------------------------
// Emission and loading.

#[derive(Debug, Serialize, Deserialize)]
struct LaunchIndex {
    schema: u32,
    graph_name: String,
    graph_hash: u64,
    devices: Vec<LaunchEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LaunchEntry {
    device: String,
    manifest: String,
    rx_edges: usize,
    tx_edges: usize,
}

/// Writes `manifest.<device>.json` per device plus a `launch.json` index
/// into `dir`, creating it if needed. Returns the manifest paths in index
/// order.
pub fn emit_manifests(
    manifests: &[DeploymentManifest],
    dir: &Path,
) -> Result<Vec<PathBuf>, DeployError> {
    if manifests.is_empty() {
        return Err(DeployError::Launch("nothing to emit: no manifests".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut entries = Vec::new();
    for manifest in manifests {
        let name = format!("manifest.{}.json", manifest.device);
        let path = dir.join(&name);
        std::fs::write(&path, manifest.to_document_string())?;
        entries.push(LaunchEntry {
            device: manifest.device.clone(),
            manifest: name,
            rx_edges: manifest.rx_count(),
            tx_edges: manifest.tx_count(),
        });
        paths.push(path);
    }
    let index = LaunchIndex {
        schema: MANIFEST_SCHEMA,
        graph_name: manifests[0].graph_name.clone(),
        graph_hash: manifests[0].graph_hash,
        devices: entries,
    };
    let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
    text.push('\n');
    std::fs::write(dir.join("launch.json"), text)?;
    Ok(paths)
}

/// Loads every manifest referenced by `dir/launch.json` and checks they
/// agree on the graph.
pub fn load_deployment(dir: &Path) -> Result<Vec<DeploymentManifest>, DeployError> {
    let index_path = dir.join("launch.json");
    let text = std::fs::read_to_string(&index_path).map_err(|e| {
        DeployError::Manifest(format!("cannot read `{}`: {e}", index_path.display()))
    })?;
    let index: LaunchIndex =
        serde_json::from_str(&text).map_err(|e| DeployError::Manifest(e.to_string()))?;
    if index.schema != MANIFEST_SCHEMA {
        return Err(DeployError::Schema { found: index.schema });
    }
    let mut manifests = Vec::new();
    for entry in &index.devices {
        let manifest = load_manifest_file(&dir.join(&entry.manifest))?;
        if manifest.graph_hash != index.graph_hash {
            return Err(DeployError::Manifest(format!(
                "manifest for `{}` disagrees with the index on the graph hash",
                manifest.device
            )));
        }
        manifests.push(manifest);
    }
    if manifests.is_empty() {
        return Err(DeployError::Manifest("launch.json lists no devices".into()));
    }
    Ok(manifests)
}

// ---------------------------------------------------------------------------
// Process launch.

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    /// Path to the runtime executable, invoked as `<binary> run -M ...`.
    pub binary: PathBuf,
    pub frames: Option<u64>,
    pub shape: LinkShape,
    pub seed: Option<u64>,
    /// Wall-clock budget for the whole fleet; stragglers are killed.
    pub timeout: Duration,
    /// Where per-device stats files land; defaults to the manifest dir.
    pub stats_dir: Option<PathBuf>,
}

impl LaunchOptions {
    pub fn new(binary: impl Into<PathBuf>) -> LaunchOptions {
        LaunchOptions {
            binary: binary.into(),
            frames: None,
            shape: LinkShape::default(),
            seed: None,
            timeout: Duration::from_secs(120),
            stats_dir: None,
        }
    }
}

struct Fleet {
    device: String,
    child: Child,
    stderr: Arc<Mutex<Vec<u8>>>,
    stats_path: PathBuf,
}

fn tail(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim_end();
    match text.char_indices().nth_back(799) {
        Some((idx, _)) => text[idx..].to_string(),
        None => text.to_string(),
    }
}

/// Runs one process per manifest in `dir`, receive-heavy devices first so
/// listeners are up before their peers connect, and merges the resulting
/// stats. Child failures do not abort the launch; they are folded into the
/// merged report with `failed` set and the device's stderr tail attached.
pub fn launch(dir: &Path, opts: &LaunchOptions) -> Result<MergedStats, DeployError> {
    let mut manifests = load_deployment(dir)?;
    manifests.sort_by(|a, b| b.rx_count().cmp(&a.rx_count()).then(a.device.cmp(&b.device)));
    let stats_dir = opts.stats_dir.clone().unwrap_or_else(|| dir.to_path_buf());
    std::fs::create_dir_all(&stats_dir)?;

    let mut fleet: Vec<Fleet> = Vec::new();
    for manifest in &manifests {
        let manifest_path = dir.join(format!("manifest.{}.json", manifest.device));
        let stats_path = stats_dir.join(format!("stats.{}.json", manifest.device));
        let _ = std::fs::remove_file(&stats_path);
        let mut cmd = Command::new(&opts.binary);
        cmd.arg("run")
            .arg("-M")
            .arg(&manifest_path)
            .arg("--stats")
            .arg(&stats_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped());
        if let Some(frames) = opts.frames {
            cmd.arg("--frames").arg(frames.to_string());
        }
        if opts.shape.bandwidth > 0.0 {
            cmd.arg("--shape-bw").arg(opts.shape.bandwidth.to_string());
        }
        if opts.shape.latency_ms > 0.0 {
            cmd.arg("--shape-lat").arg(opts.shape.latency_ms.to_string());
        }
        if let Some(seed) = opts.seed {
            cmd.arg("--seed").arg(seed.to_string());
        }
        let mut child = cmd.spawn().map_err(|e| {
            for f in &mut fleet {
                let _ = f.child.kill();
            }
            DeployError::Launch(format!(
                "cannot start `{}` for device `{}`: {e}",
                opts.binary.display(),
                manifest.device
            ))
        })?;
        let stderr_buf = Arc::new(Mutex::new(Vec::new()));
        if let Some(mut pipe) = child.stderr.take() {
            let sink = Arc::clone(&stderr_buf);
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = pipe.read_to_end(&mut buf);
                sink.lock().unwrap().extend_from_slice(&buf);
            });
        }
        fleet.push(Fleet {
            device: manifest.device.clone(),
            child,
            stderr: stderr_buf,
            stats_path,
        });
    }

    let deadline = Instant::now() + opts.timeout;
    let mut exits: BTreeMap<String, Option<i32>> = BTreeMap::new();
    let mut pending: Vec<&mut Fleet> = fleet.iter_mut().collect();
    while !pending.is_empty() {
        let timed_out = Instant::now() >= deadline;
        pending.retain_mut(|f| match f.child.try_wait() {
            Ok(Some(status)) => {
                exits.insert(f.device.clone(), status.code());
                false
            }
            Ok(None) if timed_out => {
                let _ = f.child.kill();
                let _ = f.child.wait();
                exits.insert(f.device.clone(), None);
                false
            }
            Ok(None) => true,
            Err(_) => {
                exits.insert(f.device.clone(), None);
                false
            }
        });
        if !pending.is_empty() {
            thread::sleep(Duration::from_millis(25));
        }
    }

    let mut parts = Vec::new();
    let mut extra_errors = Vec::new();
    for f in &fleet {
        let exit = exits.get(&f.device).copied().flatten();
        let stderr = tail(&f.stderr.lock().unwrap());
        let stats = std::fs::read_to_string(&f.stats_path)
            .ok()
            .and_then(|text| serde_json::from_str::<RunStats>(&text).ok());
        match stats {
            Some(stats) => {
                if exit != Some(0) && !stats.failed {
                    extra_errors.push(describe_exit(&f.device, exit, &stderr));
                }
                parts.push(stats);
            }
            None => {
                let mut stats = RunStats::new(&f.device);
                stats.failed = true;
                stats.errors.push(describe_exit(&f.device, exit, &stderr));
                parts.push(stats);
            }
        }
    }
    let mut merged = MergedStats::merge(parts);
    if !extra_errors.is_empty() {
        merged.failed = true;
        merged.errors.extend(extra_errors);
    }
    Ok(merged)
}

fn describe_exit(device: &str, exit: Option<i32>, stderr: &str) -> String {
    let status = match exit {
        Some(code) => format!("exited with status {code}"),
        None => "was killed or timed out".to_string(),
    };
    if stderr.is_empty() {
        format!("device `{device}` {status}")
    } else {
        format!("device `{device}` {status}: {stderr}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn vclass() -> ApplicationGraph {
        synthetic::vehicle_classification_graph(synthetic::VclassOptions::default())
    }

    fn actor_order(graph: &ApplicationGraph) -> Vec<String> {
        graph.actors.iter().map(|a| a.id.clone()).collect()
    }

    #[test]
    fn prefix_split_emits_one_manifest_per_device() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(2, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), 3);
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        assert_eq!(manifests.len(), 2);

        let client = &manifests[0];
        let server = &manifests[1];
        assert_eq!(client.device, "dev0");
        assert_eq!(server.device, "dev1");

        let client_ids: Vec<&str> = client.actors.iter().map(|a| a.id.as_str()).collect();
        let server_ids: Vec<&str> = server.actors.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(client_ids, ["input", "l1", "l2"]);
        assert_eq!(server_ids, ["l3", "l4l5"]);

        let local_client: Vec<&str> = client.edges.iter().map(|e| e.id.as_str()).collect();
        let local_server: Vec<&str> = server.edges.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(local_client, ["e_input_l1", "e_l1_l2"]);
        assert_eq!(local_server, ["e_l3_l4l5"]);

        assert_eq!(client.net_edges.len(), 1);
        assert_eq!(server.net_edges.len(), 1);
        let tx = &client.net_edges[0];
        let rx = &server.net_edges[0];
        assert_eq!(tx.role, NetRole::Tx);
        assert_eq!(rx.role, NetRole::Rx);
        assert_eq!(tx.edge.id, "e_l2_l3");
        // Sole cut edge: ordinal 0 on the consumer device's base.
        assert_eq!((tx.port, rx.port), (7200, 7200));
        assert_eq!((tx.edge_index, rx.edge_index), (0, 0));
        assert_eq!(tx.host, rx.host);
        assert_eq!(tx.rate, 1);
    }

    #[test]
    fn all_local_mapping_yields_a_single_manifest() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(1, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), graph.actors.len());
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        assert_eq!(manifests.len(), 1);
        assert_eq!(manifests[0].actors.len(), graph.actors.len());
        assert_eq!(manifests[0].edges.len(), graph.edges.len());
        assert!(manifests[0].net_edges.is_empty());
    }

    #[test]
    fn every_prefix_of_a_deep_chain_partitions_cleanly() {
        let graph = synthetic::deep_chain_graph(4, 1, 0.0);
        let platform = synthetic::loopback_platform(2, 7100);
        let order = actor_order(&graph);
        for k in 1..order.len() {
            let mapping = synthetic::prefix_mapping(&order, k);
            let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();

            let mut actor_union: Vec<String> = manifests
                .iter()
                .flat_map(|m| m.actors.iter().map(|a| a.id.clone()))
                .collect();
            actor_union.sort();
            let mut want: Vec<String> = order.clone();
            want.sort();
            assert_eq!(actor_union, want, "split at {k}");

            let mut seen: BTreeMap<String, Vec<(NetRole, u16)>> = BTreeMap::new();
            let mut local = 0usize;
            for m in &manifests {
                local += m.edges.len();
                for n in &m.net_edges {
                    seen.entry(n.edge.id.clone()).or_default().push((n.role, n.port));
                }
            }
            for (edge, ends) in &seen {
                assert_eq!(ends.len(), 2, "cut edge {edge} at split {k}");
                let roles: Vec<NetRole> = ends.iter().map(|(r, _)| *r).collect();
                assert!(roles.contains(&NetRole::Tx) && roles.contains(&NetRole::Rx));
                assert_eq!(ends[0].1, ends[1].1, "ports of {edge} disagree");
            }
            assert_eq!(local + seen.len(), graph.edges.len(), "split at {k}");
        }
    }

    #[test]
    fn fan_in_device_gets_distinct_ports() {
        let graph = synthetic::dual_input_graph(4, 9);
        let platform = synthetic::loopback_platform(3, 7100);
        let mut assignments = BTreeMap::new();
        for (actor, dev) in [
            ("cam0", "dev0"),
            ("conv0", "dev0"),
            ("cam1", "dev1"),
            ("conv1", "dev1"),
            ("join", "dev2"),
            ("head", "dev2"),
        ] {
            assignments.insert(actor.to_string(), (dev.to_string(), "cpu0".to_string()));
        }
        let mapping = Mapping { assignments };
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        assert_eq!(manifests.len(), 3);
        let join_dev = manifests.iter().find(|m| m.device == "dev2").unwrap();
        assert_eq!(join_dev.rx_count(), 2);
        let ports: Vec<u16> = join_dev.net_edges.iter().map(|n| n.port).collect();
        // e_br0 sorts before e_br1: ordinals 0 and 1 on dev2's base.
        assert_eq!(ports, [7300, 7301]);
    }

    #[test]
    fn partitioning_is_deterministic() {
        let graph = synthetic::deep_chain_graph(4, 1, 0.0);
        let platform = synthetic::loopback_platform(2, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), 20);
        let a = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        let b = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn splitting_a_dynamic_processing_group_is_rejected() {
        let graph = synthetic::pruned_pipeline_graph(4, 1, &[2, 0, 1]);
        let platform = synthetic::loopback_platform(2, 7100);
        // src, da_in, work on dev0; da_out, ca, sink on dev1: the group
        // `g` straddles the boundary.
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), 3);
        let err = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap_err();
        match err {
            DeployError::SplitDpg { dpg, .. } => assert_eq!(dpg, "g"),
            other => panic!("expected a split-group error, got {other}"),
        }
    }

    #[test]
    fn unmapped_actor_is_rejected() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(2, 7100);
        let mut mapping = synthetic::prefix_mapping(&actor_order(&graph), 3);
        mapping.assignments.remove("l2");
        let err = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap_err();
        assert!(err.to_string().contains("unmapped actor l2"), "{err}");
    }

    #[test]
    fn emit_and_load_round_trip() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(2, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), 2);
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_manifests(&manifests, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(dir.path().join("launch.json").is_file());
        let loaded = load_deployment(dir.path()).unwrap();
        assert_eq!(loaded, manifests);
    }

    #[test]
    fn unsupported_schema_is_rejected_on_load() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(1, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), graph.actors.len());
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        let mut text = manifests[0].to_document_string();
        text = text.replacen("\"schema\": 1", "\"schema\": 99", 1);
        match load_manifest_str(&text) {
            Err(DeployError::Schema { found: 99 }) => {}
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kernel_still_loads() {
        let graph = vclass();
        let platform = synthetic::loopback_platform(1, 7100);
        let mapping = synthetic::prefix_mapping(&actor_order(&graph), graph.actors.len());
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        let text = manifests[0]
            .to_document_string()
            .replacen("\"kernel\": \"conv2d\"", "\"kernel\": \"warp_drive\"", 1);
        let loaded = load_manifest_str(&text).unwrap();
        assert!(loaded.actors.iter().any(|a| a.kernel == "warp_drive"));
    }

    #[test]
    fn feedback_transform_adds_one_serializing_edge() {
        let graph = vclass();
        let looped = add_latency_feedback(&graph).unwrap();
        let fb = looped.edge(FEEDBACK_EDGE).expect("feedback edge present");
        assert_eq!(fb.producer.0, "l4l5");
        assert_eq!(fb.consumer.0, "input");
        assert_eq!((fb.token_size, fb.capacity, fb.initial_tokens), (8, 1, 1));
        assert_ne!(looped.graph_hash, graph.graph_hash);
        assert!(analyzer::analyze(&looped).is_consistent());
        let err = add_latency_feedback(&looped).unwrap_err();
        assert!(err.to_string().contains("already applied"), "{err}");
    }

    #[test]
    fn feedback_loop_crosses_the_cut_as_a_net_edge() {
        let graph = add_latency_feedback(&vclass()).unwrap();
        let platform = synthetic::loopback_platform(2, 7100);
        let order: Vec<String> = graph.actors.iter().map(|a| a.id.clone()).collect();
        let mapping = synthetic::prefix_mapping(&order, 3);
        let manifests = partition(&graph, &platform, &mapping, DEFAULT_BASE_PORT).unwrap();
        let client = &manifests[0];
        // `__fb` sorts ahead of `e_l2_l3`, so it takes ordinal 0 and lands
        // on the client's own base port; the forward cut takes base+1 on
        // the server.
        let fb = client.net_edges.iter().find(|n| n.edge.id == FEEDBACK_EDGE).unwrap();
        assert_eq!(fb.role, NetRole::Rx);
        assert_eq!(fb.port, 7100);
        let fwd = client.net_edges.iter().find(|n| n.edge.id == "e_l2_l3").unwrap();
        assert_eq!(fwd.role, NetRole::Tx);
        assert_eq!(fwd.port, 7201);
    }

    #[test]
    fn feedback_needs_an_unambiguous_source() {
        let graph = synthetic::dual_input_graph(4, 9);
        let err = add_latency_feedback(&graph).unwrap_err();
        assert!(err.to_string().contains("exactly one source"), "{err}");
    }
}
