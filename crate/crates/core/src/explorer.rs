//! Partition-point exploration.
//!
//! Orders the actors of a graph by precedence, enumerates every prefix
//! split between a client and a server device, predicts per-frame time
//! from a compute profile and a link model, and optionally measures each
//! split by compiling, launching and profiling a live deployment. The
//! result is a ranked report naming the split with the lowest mean
//! per-frame time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::deploy::{
    self, add_latency_feedback, emit_manifests, partition, DeployError, LaunchOptions,
};
use crate::model::{ActorKind, ApplicationGraph, Mapping, PlatformGraph};
use crate::netfifo::LinkShape;
use crate::runtime::stats::{mean, median, p95};

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("frames must be ≥ 1")]
    Frames,
    #[error("graph has {0} actor(s); exploration needs at least 2")]
    TooSmall(usize),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("device `{0}` declares no processing units")]
    NoUnits(String),
    #[error("data edges form a cycle through `{0}`")]
    Cycle(String),
    #[error("no time for actor `{0}` in the profile")]
    MissingTime(String),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Precedence ordering.

/// Actors in ascending precedence order: every data edge points from a
/// lower index to a higher one, ties are broken by declaration order, and
/// the members of a dynamic processing group stay contiguous at the
/// position of the group's entry actor. Deterministic for a given graph
/// document.
#[derive(Debug, Clone)]
pub struct PrecedenceIndex {
    pub order: Vec<String>,
}

impl PrecedenceIndex {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn position(&self, actor: &str) -> Option<usize> {
        self.order.iter().position(|a| a == actor)
    }
}

/// One scheduling unit: a free actor on its own, or a whole dynamic
/// processing group. The key is a declaration index used for tie-breaks.
struct PrecNode {
    key: usize,
    members: Vec<String>,
}

pub fn precedence_index(graph: &ApplicationGraph) -> Result<PrecedenceIndex, ExplorerError> {
    let decl: BTreeMap<&str, usize> =
        graph.actors.iter().enumerate().map(|(i, a)| (a.id.as_str(), i)).collect();

    let external_input = |actor: &str, group: &crate::model::DpgSpec| {
        graph.data_edges().any(|e| {
            e.consumer.0 == actor && !group.members.iter().any(|m| *m == e.producer.0)
        })
    };

    let mut nodes: Vec<PrecNode> = Vec::new();
    let mut node_of: BTreeMap<&str, usize> = BTreeMap::new();
    for group in &graph.dpgs {
        let mut members: Vec<&str> = group.members.iter().map(String::as_str).collect();
        members.sort_by_key(|m| decl[m]);
        let entry = members
            .iter()
            .copied()
            .filter(|m| {
                matches!(graph.actor(m).map(|a| a.kind), Some(ActorKind::Da))
                    && external_input(m, group)
            })
            .min_by_key(|m| decl[m])
            .or_else(|| {
                members
                    .iter()
                    .copied()
                    .filter(|m| matches!(graph.actor(m).map(|a| a.kind), Some(ActorKind::Da)))
                    .min_by_key(|m| decl[m])
            })
            .unwrap_or(members[0]);
        let idx = nodes.len();
        for m in &members {
            node_of.insert(m, idx);
        }
        nodes.push(PrecNode {
            key: decl[entry],
            members: members.iter().map(|m| m.to_string()).collect(),
        });
    }
    for actor in &graph.actors {
        if actor.dpg.is_none() {
            let idx = nodes.len();
            node_of.insert(&actor.id, idx);
            nodes.push(PrecNode {
                key: decl[actor.id.as_str()],
                members: vec![actor.id.clone()],
            });
        }
    }

    let mut indegree = vec![0usize; nodes.len()];
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for edge in graph.data_edges() {
        if deploy::is_internal_port(&edge.producer.1) {
            continue;
        }
        let u = node_of[edge.producer.0.as_str()];
        let v = node_of[edge.consumer.0.as_str()];
        if u == v {
            continue;
        }
        successors[u].push(v);
        indegree[v] += 1;
    }

    let mut ready: BTreeSet<(usize, usize)> = indegree
        .iter()
        .enumerate()
        .filter(|(_, deg)| **deg == 0)
        .map(|(i, _)| (nodes[i].key, i))
        .collect();
    let mut order = Vec::with_capacity(graph.actors.len());
    let mut emitted = vec![false; nodes.len()];
    while let Some(&(key, idx)) = ready.iter().next() {
        ready.remove(&(key, idx));
        emitted[idx] = true;
        order.extend(nodes[idx].members.iter().cloned());
        for &next in &successors[idx] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.insert((nodes[next].key, next));
            }
        }
    }
    if order.len() != graph.actors.len() {
        let stuck = nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !emitted[*i])
            .min_by_key(|(_, n)| n.key)
            .map(|(_, n)| n.members[0].clone())
            .unwrap_or_default();
        return Err(ExplorerError::Cycle(stuck));
    }
    Ok(PrecedenceIndex { order })
}

// ---------------------------------------------------------------------------
// Partition points.

/// A prefix cut of the precedence order: the first `pp` actors run on the
/// client, the rest on the server. `crossing_bytes` is the per-frame byte
/// volume over all data edges cut by the split, counting each edge at its
/// upper rate limit.
#[derive(Debug, Clone)]
pub struct PartitionPoint {
    pub pp: usize,
    pub client_actors: Vec<String>,
    pub server_actors: Vec<String>,
    /// Cut data edges as (edge id, token_size).
    pub crossing_edges: Vec<(String, u32)>,
    pub crossing_bytes: u64,
}

fn point_at(graph: &ApplicationGraph, index: &PrecedenceIndex, k: usize) -> PartitionPoint {
    let client: Vec<String> = index.order[..k].to_vec();
    let server: Vec<String> = index.order[k..].to_vec();
    let client_set: BTreeSet<&str> = client.iter().map(String::as_str).collect();
    let mut crossing_edges = Vec::new();
    let mut crossing_bytes = 0u64;
    for edge in graph.data_edges() {
        if deploy::is_internal_port(&edge.producer.1) {
            continue;
        }
        let from_client = client_set.contains(edge.producer.0.as_str());
        let to_client = client_set.contains(edge.consumer.0.as_str());
        if from_client != to_client {
            let (_, url) = graph.edge_rate_range(edge);
            crossing_edges.push((edge.id.clone(), edge.token_size));
            crossing_bytes += u64::from(edge.token_size) * u64::from(url);
        }
    }
    PartitionPoint {
        pp: k,
        client_actors: client,
        server_actors: server,
        crossing_edges,
        crossing_bytes,
    }
}

/// All prefix splits of the precedence order, PP 1 (source side only)
/// through PP N−1 (terminal side only). Splits that would divide a dynamic
/// processing group are still enumerated; they fail later at compile time.
pub fn partition_points(
    graph: &ApplicationGraph,
    index: &PrecedenceIndex,
) -> Vec<PartitionPoint> {
    (1..index.len()).map(|k| point_at(graph, index, k)).collect()
}

/// The degenerate split keeping every actor on the client: no cut edges,
/// no transfer term. Used as the baseline row of a sweep.
pub fn local_point(graph: &ApplicationGraph, index: &PrecedenceIndex) -> PartitionPoint {
    point_at(graph, index, index.len())
}

fn device_unit<'a>(
    platform: &'a PlatformGraph,
    id: &str,
) -> Result<(&'a str, &'a str), ExplorerError> {
    let device = platform
        .device(id)
        .ok_or_else(|| ExplorerError::UnknownDevice(id.to_string()))?;
    let unit = device
        .units
        .first()
        .ok_or_else(|| ExplorerError::NoUnits(id.to_string()))?;
    Ok((&device.id, unit))
}

fn prefix_assignment(
    point: &PartitionPoint,
    client: (&str, &str),
    server: (&str, &str),
) -> Mapping {
    let mut assignments = BTreeMap::new();
    for actor in &point.client_actors {
        assignments.insert(actor.clone(), (client.0.to_string(), client.1.to_string()));
    }
    for actor in &point.server_actors {
        assignments.insert(actor.clone(), (server.0.to_string(), server.1.to_string()));
    }
    Mapping { assignments }
}

/// One mapping per partition point, placing the precedence prefix on
/// `client` and the suffix on `server`, each on the device's first
/// processing unit. A graph with N actors yields exactly N−1 pairs.
pub fn generate_mappings(
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
    client: &str,
    server: &str,
) -> Result<Vec<(PartitionPoint, Mapping)>, ExplorerError> {
    if graph.actors.len() < 2 {
        return Err(ExplorerError::TooSmall(graph.actors.len()));
    }
    let client = device_unit(platform, client)?;
    let server = device_unit(platform, server)?;
    let index = precedence_index(graph)?;
    Ok(partition_points(graph, &index)
        .into_iter()
        .map(|point| {
            let mapping = prefix_assignment(&point, client, server);
            (point, mapping)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Prediction.

/// Per-actor compute times in milliseconds per firing, the input to the
/// predictive cost model.
#[derive(Debug, Clone, Default)]
pub struct Profile {
    pub actor_ms: BTreeMap<String, f64>,
}

impl Profile {
    /// Reads declared busy times from kernel parameters: `ms` on timed
    /// actors, `work_ms` on sources. Actors declaring neither are pure
    /// data movers and count as zero.
    pub fn from_params(graph: &ApplicationGraph) -> Profile {
        let actor_ms = graph
            .actors
            .iter()
            .map(|a| {
                let declared = a
                    .kernel_params
                    .get("ms")
                    .or_else(|| a.kernel_params.get("work_ms"))
                    .and_then(|v| v.as_f64())
                    .unwrap_or(0.0);
                (a.id.clone(), declared)
            })
            .collect();
        Profile { actor_ms }
    }

    /// Derives per-firing busy times from the actor counters of a
    /// measured run, merged across devices.
    pub fn from_stats(stats: &crate::runtime::MergedStats) -> Profile {
        let mut actor_ms = BTreeMap::new();
        for device in stats.devices.values() {
            for (actor, a) in &device.actors {
                actor_ms.insert(actor.clone(), a.busy_ms_per_firing());
            }
        }
        Profile { actor_ms }
    }

    pub fn time_of(&self, actor: &str) -> Result<f64, ExplorerError> {
        self.actor_ms
            .get(actor)
            .copied()
            .ok_or_else(|| ExplorerError::MissingTime(actor.to_string()))
    }

    fn total_of(&self, actors: &[String]) -> Result<f64, ExplorerError> {
        actors.iter().try_fold(0.0, |acc, a| Ok(acc + self.time_of(a)?))
    }
}

/// Predicted endpoint time per frame: the client-side compute total plus
/// the modeled transfer of the crossing bytes. A split with no cut edges
/// has no transfer term, so the all-local point predicts the plain compute
/// sum.
pub fn predict_endpoint_ms(
    point: &PartitionPoint,
    profile: &Profile,
    shape: &LinkShape,
) -> Result<f64, ExplorerError> {
    let compute = profile.total_of(&point.client_actors)?;
    let transfer = if point.crossing_edges.is_empty() {
        0.0
    } else {
        shape.transfer_ms(point.crossing_bytes)
    };
    Ok(compute + transfer)
}

/// Feedback tokens are 8-byte timestamps; the return transfer of one is
/// the latency floor of the reverse path.
const FEEDBACK_TOKEN_BYTES: u64 = 8;

/// Predicted end-to-end time per frame: the endpoint prediction plus the
/// server-side compute total and the return transfer of one feedback
/// token.
pub fn predict_roundtrip_ms(
    point: &PartitionPoint,
    profile: &Profile,
    shape: &LinkShape,
) -> Result<f64, ExplorerError> {
    let endpoint = predict_endpoint_ms(point, profile, shape)?;
    if point.server_actors.is_empty() {
        return Ok(endpoint);
    }
    let server = profile.total_of(&point.server_actors)?;
    Ok(endpoint + server + shape.transfer_ms(FEEDBACK_TOKEN_BYTES))
}

// ---------------------------------------------------------------------------
// Sweeps.

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub client: String,
    pub server: String,
    /// Measured frames per split, after warmup.
    pub frames: u64,
    /// Leading frames discarded from every measurement.
    pub warmup: u64,
    pub shape: LinkShape,
    pub seed: Option<u64>,
    /// Smallest and largest PP to run; `None` means up to N−1.
    pub pp_min: usize,
    pub pp_max: Option<usize>,
    /// Skip all launches and fill rows from the cost model only.
    pub predict_only: bool,
    /// Runtime executable handed to the launcher.
    pub binary: PathBuf,
    /// Directory receiving per-split manifests and stats.
    pub work_dir: PathBuf,
    pub base_port: u16,
    /// Wall-clock budget per launched split.
    pub timeout: Duration,
}

impl SweepOptions {
    pub fn new(
        client: impl Into<String>,
        server: impl Into<String>,
        frames: u64,
        binary: impl Into<PathBuf>,
        work_dir: impl Into<PathBuf>,
    ) -> SweepOptions {
        SweepOptions {
            client: client.into(),
            server: server.into(),
            frames,
            warmup: 3,
            shape: LinkShape::default(),
            seed: None,
            pp_min: 1,
            pp_max: None,
            predict_only: false,
            binary: binary.into(),
            work_dir: work_dir.into(),
            base_port: deploy::DEFAULT_BASE_PORT,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Failed,
    Predicted,
}

impl std::fmt::Display for RowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RowStatus::Ok => "ok",
            RowStatus::Failed => "failed",
            RowStatus::Predicted => "predicted",
        })
    }
}

/// One report row. `pp` is `None` for the all-local baseline.
#[derive(Debug, Clone)]
pub struct PpRow {
    pub pp: Option<usize>,
    pub client_actors: usize,
    pub crossing_bytes: u64,
    pub frames_measured: u64,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    /// Modeled time; kept on failed rows too, since the model does not
    /// depend on the run.
    pub predicted_ms: Option<f64>,
    pub server_ms: Option<f64>,
    pub transfer_ms: Option<f64>,
    pub status: RowStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ProfileReport {
    /// Baseline first, then partition points in ascending order.
    pub rows: Vec<PpRow>,
    /// Argmin of mean measured time over the swept range, or of predicted
    /// time when nothing was measured.
    pub chosen_pp: Option<usize>,
    pub shape: LinkShape,
    pub frames: u64,
    pub warmup: u64,
}

fn measure_split(
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
    mapping: &Mapping,
    dir: &Path,
    opts: &SweepOptions,
) -> Result<Vec<f64>, String> {
    let manifests =
        partition(graph, platform, mapping, opts.base_port).map_err(|e| e.to_string())?;
    emit_manifests(&manifests, dir).map_err(|e| e.to_string())?;
    let mut launch_opts = LaunchOptions::new(&opts.binary);
    launch_opts.frames = Some(opts.frames + opts.warmup);
    launch_opts.shape = opts.shape;
    launch_opts.seed = opts.seed;
    launch_opts.timeout = opts.timeout;
    let merged = deploy::launch(dir, &launch_opts).map_err(|e| e.to_string())?;
    if merged.failed {
        let detail = if merged.errors.is_empty() {
            "run failed".to_string()
        } else {
            merged.errors.join("; ")
        };
        return Err(detail);
    }
    let endpoint = merged
        .endpoint()
        .ok_or_else(|| "no device reported frame stats".to_string())?;
    let times = endpoint.endpoint_times_ms();
    if times.len() <= opts.warmup as usize {
        return Err(format!(
            "{} frame(s) recorded, warmup alone needs {}",
            times.len(),
            opts.warmup
        ));
    }
    Ok(times[opts.warmup as usize..].to_vec())
}

fn build_row(
    point: &PartitionPoint,
    label: Option<usize>,
    predicted: Option<f64>,
    server_ms: Option<f64>,
    transfer: Option<f64>,
    measured: Option<Result<Vec<f64>, String>>,
) -> PpRow {
    let mut row = PpRow {
        pp: label,
        client_actors: point.client_actors.len(),
        crossing_bytes: point.crossing_bytes,
        frames_measured: 0,
        mean_ms: None,
        median_ms: None,
        p95_ms: None,
        predicted_ms: predicted,
        server_ms,
        transfer_ms: transfer,
        status: RowStatus::Predicted,
        error: None,
    };
    match measured {
        None => {}
        Some(Ok(times)) => {
            row.frames_measured = times.len() as u64;
            row.mean_ms = Some(mean(&times));
            row.median_ms = Some(median(&times));
            row.p95_ms = Some(p95(&times));
            row.status = RowStatus::Ok;
        }
        Some(Err(detail)) => {
            row.status = RowStatus::Failed;
            row.error = Some(detail);
        }
    }
    row
}

/// Profiles every partition point in the requested range, plus the
/// all-local baseline. Each split is compiled, launched as one process per
/// device and measured over `frames` frames after discarding `warmup`;
/// the pipeline is serialized with a latency feedback edge so per-frame
/// times are not smeared by pipelining. A split that fails to compile or
/// run is reported as a failed row and the sweep continues. With
/// `predict_only` nothing is launched and rows carry model output alone.
pub fn sweep(
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
    opts: &SweepOptions,
) -> Result<ProfileReport, ExplorerError> {
    if opts.frames == 0 {
        return Err(ExplorerError::Frames);
    }
    if graph.actors.len() < 2 {
        return Err(ExplorerError::TooSmall(graph.actors.len()));
    }
    let client = device_unit(platform, &opts.client)?;
    let server = device_unit(platform, &opts.server)?;
    let index = precedence_index(graph)?;
    let profile = Profile::from_params(graph);
    let shape = opts.shape;

    let run_graph = if opts.predict_only {
        None
    } else {
        Some(add_latency_feedback(graph)?)
    };

    let pp_lo = opts.pp_min.max(1);
    let pp_hi = opts.pp_max.unwrap_or(index.len() - 1).min(index.len() - 1);

    let mut rows = Vec::new();

    let baseline = local_point(graph, &index);
    let base_predicted = predict_endpoint_ms(&baseline, &profile, &shape).ok();
    let base_measured = run_graph.as_ref().map(|g| {
        let mapping = prefix_assignment(&baseline, client, client);
        measure_split(g, platform, &mapping, &opts.work_dir.join("local"), opts)
    });
    rows.push(build_row(
        &baseline,
        None,
        base_predicted,
        Some(0.0),
        Some(0.0),
        base_measured,
    ));

    for k in pp_lo..=pp_hi {
        let point = point_at(graph, &index, k);
        let predicted = predict_endpoint_ms(&point, &profile, &shape).ok();
        let server_ms = profile.total_of(&point.server_actors).ok();
        let transfer = if point.crossing_edges.is_empty() {
            Some(0.0)
        } else {
            Some(shape.transfer_ms(point.crossing_bytes))
        };
        let measured = run_graph.as_ref().map(|g| {
            let mapping = prefix_assignment(&point, client, server);
            measure_split(g, platform, &mapping, &opts.work_dir.join(format!("pp{k}")), opts)
        });
        rows.push(build_row(&point, Some(k), predicted, server_ms, transfer, measured));
    }

    let chosen_pp = rows
        .iter()
        .filter(|r| r.pp.is_some())
        .filter_map(|r| {
            let key = if opts.predict_only { r.predicted_ms } else { r.mean_ms };
            key.map(|v| (r.pp.unwrap(), v))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(pp, _)| pp);

    Ok(ProfileReport {
        rows,
        chosen_pp,
        shape,
        frames: opts.frames,
        warmup: opts.warmup,
    })
}

// ---------------------------------------------------------------------------
// Report rendering.

fn csv_cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.3}")).unwrap_or_default()
}

/// Renders a sweep report as CSV, one row per split with the baseline
/// first. Timing cells of unmeasured rows are left empty.
pub fn report_csv(report: &ProfileReport) -> String {
    let mut out = String::from(
        "pp,client_actors,crossing_bytes,mean_ms,median_ms,p95_ms,predicted_ms,status\n",
    );
    for row in &report.rows {
        let pp = row.pp.map(|k| k.to_string()).unwrap_or_else(|| "local".to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            pp,
            row.client_actors,
            row.crossing_bytes,
            csv_cell(row.mean_ms),
            csv_cell(row.median_ms),
            csv_cell(row.p95_ms),
            csv_cell(row.predicted_ms),
            row.status,
        ));
    }
    out
}
