//! The execution engine: one thread per actor and per cut edge, blocking
//! FIFOs in between. An actor fires when its inputs hold enough tokens and
//! its outputs have room, which both fall out of the blocking pop/push
//! pair. Control edges and the latency feedback loop are serviced by the
//! actor loop itself and stay invisible to kernels.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::deploy::{self, DeployError, DeploymentManifest, NetRole, MANIFEST_SCHEMA};
use crate::kernels::{Kernel, KernelCtx, KernelError, KernelRegistry};
use crate::model::{ApplicationGraph, GraphError, PortDirection};
use crate::netfifo::{self, LinkShape, RxListener};
use crate::runtime::fifo::{Fifo, FifoError, Popped, Pushed};
use crate::runtime::stats::{ActorStats, EdgeStats, FrameStat, RunStats};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error("edge `{edge}`: {detail}")]
    Connect { edge: String, detail: String },
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the `frames` kernel parameter of every actor declaring it.
    pub frames: Option<u64>,
    /// Global seed mixed into kernels that do not pin their own.
    pub seed: u64,
    /// Transmit-side shaping applied to every cut edge.
    pub shape: LinkShape,
    /// `run_local` only: serialize the pipeline through a feedback loop so
    /// per-frame round trips can be measured.
    pub latency_feedback: bool,
    /// Budget for all cut edges to come up.
    pub connect_timeout: Duration,
    /// Hard wall-clock cap; a run past it is torn down and marked failed.
    /// Defaults to ten minutes, far above any sane run here, purely so a
    /// wedged graph fails loudly instead of hanging forever.
    pub run_timeout: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            frames: None,
            seed: 0,
            shape: LinkShape::default(),
            latency_feedback: false,
            connect_timeout: Duration::from_secs(30),
            run_timeout: Some(Duration::from_secs(600)),
        }
    }
}

/// What one port of one actor is wired to.
struct PortWire {
    port: String,
    fifos: Vec<Arc<Fifo>>,
    token_size: u32,
    lrl: u32,
    url: u32,
    dynamic: bool,
    /// True when every edge behind this wire is a control edge.
    control: bool,
}

struct ActorPlan {
    id: String,
    kernel: Box<dyn Kernel>,
    is_source: bool,
    is_terminal: bool,
    control_in: Option<Arc<Fifo>>,
    fb_in: Option<Arc<Fifo>>,
    fb_out: Option<Arc<Fifo>>,
    data_ins: Vec<PortWire>,
    data_outs: Vec<PortWire>,
}

#[derive(Default)]
struct ActorOutcome {
    firings: u64,
    busy_ns: u64,
    report: Option<serde_json::Value>,
    error: Option<String>,
    acquired: Vec<u64>,
    complete: Vec<u64>,
    fb_times: Vec<u64>,
}

enum Stop {
    Finished,
    UpstreamEnd(Option<String>),
    Failed(String),
    Downstream,
}

fn ns(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

/// Runs a whole graph in this process, as if it were deployed to a single
/// device named `local`.
pub fn run_local(graph: &ApplicationGraph, opts: &RunOptions) -> Result<RunStats, RuntimeError> {
    let looped;
    let graph = if opts.latency_feedback {
        looped = deploy::add_latency_feedback(graph)?;
        &looped
    } else {
        graph
    };
    let manifest = DeploymentManifest {
        schema: MANIFEST_SCHEMA,
        graph_name: graph.name.clone(),
        graph_hash: graph.graph_hash,
        device: "local".into(),
        actors: graph.actors.clone(),
        edges: graph.edges.clone(),
        net_edges: Vec::new(),
    };
    run_manifest(&manifest, opts)
}

pub fn run_manifest(
    manifest: &DeploymentManifest,
    opts: &RunOptions,
) -> Result<RunStats, RuntimeError> {
    run_with_registry(manifest, opts, &KernelRegistry::builtin())
}

/// Executes one device's share of a deployment and returns its statistics.
/// Kernel failures, wire failures and watchdog expiry do not error out;
/// they come back as a `failed` stats record naming what went wrong. An
/// `Err` means the run could not even be set up.
pub fn run_with_registry(
    manifest: &DeploymentManifest,
    opts: &RunOptions,
    registry: &KernelRegistry,
) -> Result<RunStats, RuntimeError> {
    let start = Instant::now();

    // Patch the frame budget before kernels are built.
    let mut actors = manifest.actors.clone();
    if let Some(frames) = opts.frames {
        for actor in &mut actors {
            if actor.kernel_params.contains_key("frames") {
                actor
                    .kernel_params
                    .insert("frames".into(), serde_json::json!(frames));
            }
        }
    }

    // One FIFO per edge this device touches. Initial tokens of a cut edge
    // materialize on the receive side only; the transmit side's FIFO is a
    // plain staging queue between the producer actor and the socket.
    let mut fifos: BTreeMap<String, Arc<Fifo>> = BTreeMap::new();
    for edge in &manifest.edges {
        fifos.insert(
            edge.id.clone(),
            Arc::new(Fifo::new(&edge.id, edge.token_size, edge.capacity, edge.initial_tokens)),
        );
    }
    for net in &manifest.net_edges {
        let edge = &net.edge;
        let initial = match net.role {
            NetRole::Rx => edge.initial_tokens,
            NetRole::Tx => 0,
        };
        if fifos
            .insert(
                edge.id.clone(),
                Arc::new(Fifo::new(&edge.id, edge.token_size, edge.capacity, initial)),
            )
            .is_some()
        {
            return Err(RuntimeError::Setup(format!(
                "edge `{}` appears twice in the manifest",
                edge.id
            )));
        }
    }

    let plans = build_plans(&actors, manifest, &fifos, opts.seed, registry)?;

    // Bind every listener before anything connects out, so peers that come
    // up faster than this process simply wait in the accept queue.
    let mut listeners: Vec<(String, u16, RxListener)> = Vec::new();
    for net in &manifest.net_edges {
        if net.role == NetRole::Rx {
            let listener = RxListener::bind(&net.host, net.port, manifest.graph_hash, net.edge_index)
                .map_err(|e| RuntimeError::Connect {
                    edge: net.edge.id.clone(),
                    detail: format!("cannot bind {}:{}: {e}", net.host, net.port),
                })?;
            listeners.push((net.edge.id.clone(), net.edge_index, listener));
        }
    }

    // Transport threads. Each reports its setup result once, then runs the
    // edge to completion and returns (edge id, commit times, error).
    let deadline = Instant::now() + opts.connect_timeout;
    let (setup_tx, setup_rx) = mpsc::channel::<(String, Option<String>)>();
    let mut net_handles: Vec<thread::JoinHandle<(String, Vec<u64>, Option<String>)>> = Vec::new();
    let socket_timeout = Some(Duration::from_secs(60));

    for (edge_id, edge_index, listener) in listeners {
        let fifo = Arc::clone(&fifos[&edge_id]);
        let setup = setup_tx.clone();
        net_handles.push(thread::spawn(move || {
            let stream = match listener.accept(deadline) {
                Ok(stream) => {
                    let _ = setup.send((edge_id.clone(), None));
                    stream
                }
                Err(e) => {
                    fifo.push_eos(Some(format!("edge `{edge_id}`: {e}")));
                    let _ = setup.send((edge_id.clone(), Some(e.to_string())));
                    return (edge_id, Vec::new(), None);
                }
            };
            let _ = stream.set_read_timeout(socket_timeout);
            let outcome = netfifo::run_rx_edge(stream, &fifo, edge_index);
            (edge_id, Vec::new(), outcome.error)
        }));
    }
    for net in &manifest.net_edges {
        if net.role != NetRole::Tx {
            continue;
        }
        let fifo = Arc::clone(&fifos[&net.edge.id]);
        let setup = setup_tx.clone();
        let (edge_id, host, port, index, rate) =
            (net.edge.id.clone(), net.host.clone(), net.port, net.edge_index, net.rate);
        let (hash, shape) = (manifest.graph_hash, opts.shape);
        net_handles.push(thread::spawn(move || {
            let stream = match netfifo::connect_tx(&host, port, hash, index, deadline) {
                Ok(stream) => {
                    let _ = setup.send((edge_id.clone(), None));
                    stream
                }
                Err(e) => {
                    fifo.close_consumer(Some(format!("edge `{edge_id}`: {e}")));
                    let _ = setup.send((edge_id.clone(), Some(e.to_string())));
                    return (edge_id, Vec::new(), None);
                }
            };
            let _ = stream.set_write_timeout(socket_timeout);
            let outcome = netfifo::run_tx_edge(stream, &fifo, rate, index, shape, start);
            (edge_id, outcome.commits, outcome.error)
        }));
    }
    drop(setup_tx);

    // Startup barrier: every cut edge must come up before actors start.
    for _ in 0..manifest.net_edges.len() {
        let recv_budget = opts.connect_timeout + Duration::from_secs(5);
        match setup_rx.recv_timeout(recv_budget) {
            Ok((_, None)) => {}
            Ok((edge, Some(detail))) => {
                teardown(&fifos, &format!("edge `{edge}`: {detail}"));
                return Err(RuntimeError::Connect { edge, detail });
            }
            Err(_) => {
                teardown(&fifos, "transport setup stalled");
                return Err(RuntimeError::Setup("transport setup stalled".into()));
            }
        }
    }

    // Watchdog. Closing every FIFO unblocks any actor or transmit thread;
    // receive threads fall back on their socket timeout.
    let watchdog_done = Arc::new(AtomicBool::new(false));
    let watchdog_fired = Arc::new(AtomicBool::new(false));
    let watchdog = opts.run_timeout.map(|budget| {
        let fifo_list: Vec<Arc<Fifo>> = fifos.values().cloned().collect();
        let done = Arc::clone(&watchdog_done);
        let fired = Arc::clone(&watchdog_fired);
        let deadline = start + budget;
        thread::spawn(move || {
            while !done.load(Ordering::Relaxed) {
                if Instant::now() >= deadline {
                    fired.store(true, Ordering::Relaxed);
                    for fifo in &fifo_list {
                        fifo.push_eos(Some("run timed out".into()));
                        fifo.close_consumer(Some("run timed out".into()));
                    }
                    return;
                }
                thread::sleep(Duration::from_millis(50));
            }
        })
    });

    let mut actor_handles: Vec<(String, thread::JoinHandle<ActorOutcome>)> = Vec::new();
    for mut plan in plans {
        let id = plan.id.clone();
        actor_handles.push((
            id,
            thread::spawn(move || {
                let mut out = ActorOutcome::default();
                actor_loop(&mut plan, start, &mut out);
                out
            }),
        ));
    }

    let mut errors: Vec<String> = Vec::new();
    let mut actor_stats: BTreeMap<String, ActorStats> = BTreeMap::new();
    let mut outcomes: BTreeMap<String, ActorOutcome> = BTreeMap::new();
    for (id, handle) in actor_handles {
        match handle.join() {
            Ok(out) => {
                if let Some(err) = &out.error {
                    errors.push(err.clone());
                }
                actor_stats.insert(
                    id.clone(),
                    ActorStats { firings: out.firings, busy_ns: out.busy_ns, report: out.report.clone() },
                );
                outcomes.insert(id, out);
            }
            Err(_) => errors.push(format!("actor `{id}` panicked")),
        }
    }

    let mut tx_commits: Vec<(String, Vec<u64>)> = Vec::new();
    for handle in net_handles {
        match handle.join() {
            Ok((edge, commits, error)) => {
                if let Some(err) = error {
                    errors.push(err);
                }
                if !commits.is_empty() {
                    tx_commits.push((edge, commits));
                }
            }
            Err(_) => errors.push("transport thread panicked".into()),
        }
    }

    watchdog_done.store(true, Ordering::Relaxed);
    if let Some(handle) = watchdog {
        let _ = handle.join();
    }
    if watchdog_fired.load(Ordering::Relaxed) {
        errors.push("run timed out".into());
    }

    let frames = assemble_frames(manifest, &outcomes, &tx_commits);
    let frames_processed = if frames.is_empty() {
        data_path_floor(manifest, &actor_stats)
    } else {
        frames.len() as u64
    };

    let mut edge_stats = BTreeMap::new();
    for (id, fifo) in &fifos {
        edge_stats.insert(
            id.clone(),
            EdgeStats {
                counters: fifo.counters(),
                capacity: fifo.capacity(),
                initial_tokens: fifo.initial_tokens(),
            },
        );
    }

    errors.sort();
    errors.dedup();
    Ok(RunStats {
        device: manifest.device.clone(),
        frames_processed,
        elapsed_ms: start.elapsed().as_secs_f64() * 1000.0,
        failed: !errors.is_empty(),
        errors,
        actors: actor_stats,
        edges: edge_stats,
        frames,
    })
}

fn teardown(fifos: &BTreeMap<String, Arc<Fifo>>, reason: &str) {
    for fifo in fifos.values() {
        fifo.push_eos(Some(reason.to_string()));
        fifo.close_consumer(Some(reason.to_string()));
    }
}

fn build_plans(
    actors: &[crate::model::ActorSpec],
    manifest: &DeploymentManifest,
    fifos: &BTreeMap<String, Arc<Fifo>>,
    global_seed: u64,
    registry: &KernelRegistry,
) -> Result<Vec<ActorPlan>, RuntimeError> {
    struct Attached {
        edge: crate::model::EdgeSpec,
        fifo: Arc<Fifo>,
    }
    let mut by_consumer: BTreeMap<(String, String), Vec<Attached>> = BTreeMap::new();
    let mut by_producer: BTreeMap<(String, String), Vec<Attached>> = BTreeMap::new();
    let local_actor = |id: &str| actors.iter().any(|a| a.id == id);
    {
        let mut note = |edge: &crate::model::EdgeSpec, producer_here: bool, consumer_here: bool| {
            let fifo = Arc::clone(&fifos[&edge.id]);
            if producer_here {
                by_producer
                    .entry(edge.producer.clone())
                    .or_default()
                    .push(Attached { edge: edge.clone(), fifo: Arc::clone(&fifo) });
            }
            if consumer_here {
                by_consumer
                    .entry(edge.consumer.clone())
                    .or_default()
                    .push(Attached { edge: edge.clone(), fifo });
            }
        };
        for edge in &manifest.edges {
            if !local_actor(&edge.producer.0) || !local_actor(&edge.consumer.0) {
                return Err(RuntimeError::Setup(format!(
                    "local edge `{}` references an actor not in the manifest",
                    edge.id
                )));
            }
            note(edge, true, true);
        }
        for net in &manifest.net_edges {
            let (here, name) = match net.role {
                NetRole::Tx => (local_actor(&net.edge.producer.0), "transmit"),
                NetRole::Rx => (local_actor(&net.edge.consumer.0), "receive"),
            };
            if !here {
                return Err(RuntimeError::Setup(format!(
                    "{name} edge `{}` references an actor not in the manifest",
                    net.edge.id
                )));
            }
            note(&net.edge, net.role == NetRole::Tx, net.role == NetRole::Rx);
        }
    }

    let mut plans = Vec::with_capacity(actors.len());
    for actor in actors {
        let mut control_in = None;
        let mut fb_in = None;
        let mut fb_out = None;
        let mut data_ins = Vec::new();
        let mut data_outs = Vec::new();
        let mut in_sizes = BTreeMap::new();
        let mut out_sizes = BTreeMap::new();
        for port in &actor.ports {
            let key = (actor.id.clone(), port.id.clone());
            match port.direction {
                PortDirection::Input => {
                    let attached = by_consumer.get(&key).map(|v| v.as_slice()).unwrap_or(&[]);
                    let [a] = attached else {
                        return Err(RuntimeError::Setup(format!(
                            "input port `{}.{}` needs exactly one edge, found {}",
                            actor.id,
                            port.id,
                            attached.len()
                        )));
                    };
                    if deploy::is_internal_port(&port.id) {
                        fb_in = Some(Arc::clone(&a.fifo));
                    } else if a.edge.control {
                        if a.edge.token_size != 4 {
                            return Err(RuntimeError::Setup(format!(
                                "control edge `{}` must carry 4-byte tokens",
                                a.edge.id
                            )));
                        }
                        if control_in.is_some() {
                            return Err(RuntimeError::Setup(format!(
                                "actor `{}` has more than one control input",
                                actor.id
                            )));
                        }
                        control_in = Some(Arc::clone(&a.fifo));
                    } else {
                        in_sizes.insert(port.id.clone(), a.edge.token_size);
                        data_ins.push(PortWire {
                            port: port.id.clone(),
                            fifos: vec![Arc::clone(&a.fifo)],
                            token_size: a.edge.token_size,
                            lrl: port.lrl,
                            url: port.url,
                            dynamic: port.dynamic,
                            control: false,
                        });
                    }
                }
                PortDirection::Output => {
                    let attached = by_producer.get(&key).map(|v| v.as_slice()).unwrap_or(&[]);
                    if attached.is_empty() {
                        return Err(RuntimeError::Setup(format!(
                            "output port `{}.{}` is not connected",
                            actor.id, port.id
                        )));
                    }
                    if deploy::is_internal_port(&port.id) {
                        fb_out = Some(Arc::clone(&attached[0].fifo));
                        continue;
                    }
                    let sizes: Vec<u32> = attached.iter().map(|a| a.edge.token_size).collect();
                    if sizes.windows(2).any(|w| w[0] != w[1]) {
                        return Err(RuntimeError::Setup(format!(
                            "output port `{}.{}` fans out to edges with different token sizes",
                            actor.id, port.id
                        )));
                    }
                    // Control tokens are ordinary output data to the
                    // kernel emitting them.
                    out_sizes.insert(port.id.clone(), sizes[0]);
                    data_outs.push(PortWire {
                        port: port.id.clone(),
                        fifos: attached.iter().map(|a| Arc::clone(&a.fifo)).collect(),
                        token_size: sizes[0],
                        lrl: port.lrl,
                        url: port.url,
                        dynamic: port.dynamic,
                        control: attached.iter().all(|a| a.edge.control),
                    });
                }
            }
        }
        let ctx = KernelCtx::new(actor.clone(), in_sizes, out_sizes, global_seed);
        let kernel = registry.build(&ctx)?;
        plans.push(ActorPlan {
            id: actor.id.clone(),
            kernel,
            is_source: data_ins.is_empty()
                && control_in.is_none()
                && data_outs.iter().any(|w| !w.control),
            is_terminal: data_outs.is_empty(),
            control_in,
            fb_in,
            fb_out,
            data_ins,
            data_outs,
        });
    }
    Ok(plans)
}

fn actor_loop(plan: &mut ActorPlan, start: Instant, out: &mut ActorOutcome) {
    let stop = 'run: loop {
        // The feedback gate first: with the loop in place the source may
        // admit frame k only once frame k-1 has fully left the graph. The
        // token popped ahead of firing k marks frame k-1's completion; the
        // one ahead of firing 0 is the loop's initial token.
        if let Some(fb) = &plan.fb_in {
            match fb.pop(1) {
                Popped::Tokens(_) => {
                    if out.firings > 0 {
                        out.fb_times.push(ns(start));
                    }
                }
                Popped::Eos { error } => break 'run Stop::UpstreamEnd(error),
            }
        }
        let mut rate_token = None;
        if let Some(ctl) = &plan.control_in {
            match ctl.pop(1) {
                Popped::Tokens(bytes) => {
                    rate_token = Some(u32::from_le_bytes(bytes[..4].try_into().unwrap()));
                }
                Popped::Eos { error } => break 'run Stop::UpstreamEnd(error),
            }
        }
        let mut rates = BTreeMap::new();
        for wire in plan.data_ins.iter().chain(plan.data_outs.iter()) {
            let rate = match (wire.dynamic, rate_token) {
                (true, Some(token)) => token.clamp(wire.lrl, wire.url),
                (true, None) => wire.lrl,
                (false, _) => wire.url,
            };
            rates.insert(wire.port.clone(), rate);
        }
        let mut inputs = BTreeMap::new();
        for wire in &plan.data_ins {
            match wire.fifos[0].pop(rates[&wire.port]) {
                Popped::Tokens(bytes) => {
                    inputs.insert(wire.port.clone(), bytes);
                }
                Popped::Eos { error } => break 'run Stop::UpstreamEnd(error),
            }
        }
        if plan.is_source {
            out.acquired.push(ns(start));
        }
        let fire_start = Instant::now();
        let firing = match plan.kernel.fire(out.firings, &rates, &inputs) {
            Ok(firing) => firing,
            Err(e) => break 'run Stop::Failed(e.to_string()),
        };
        out.busy_ns += fire_start.elapsed().as_nanos() as u64;
        out.firings += 1;

        let mut outputs = firing.outputs;
        let mut delivered_any = false;
        let mut discarded_any = false;
        for wire in &plan.data_outs {
            let rate = rates[&wire.port];
            let bytes = outputs.remove(&wire.port).unwrap_or_default();
            let expected = rate as usize * wire.token_size as usize;
            if bytes.len() != expected {
                break 'run Stop::Failed(format!(
                    "actor `{}` port `{}`: kernel produced {} bytes, expected {expected}",
                    plan.id,
                    wire.port,
                    bytes.len()
                ));
            }
            for fifo in &wire.fifos {
                match fifo.push(rate, &bytes) {
                    Ok(Pushed::Delivered) => delivered_any = true,
                    Ok(Pushed::Discarded) => discarded_any = true,
                    // The failure is recorded where it happened; this
                    // actor just has nowhere left to send.
                    Err(FifoError::ConsumerFailed { .. }) => discarded_any = true,
                    Err(e) => {
                        break 'run Stop::Failed(format!("edge `{}`: {e}", fifo.edge()))
                    }
                }
            }
        }
        if let Some((port, _)) = outputs.into_iter().next() {
            break 'run Stop::Failed(format!(
                "actor `{}`: kernel wrote to unknown port `{port}`",
                plan.id
            ));
        }
        if plan.is_terminal {
            out.complete.push(ns(start));
        }
        if let Some(fb) = &plan.fb_out {
            let _ = fb.push(1, &ns(start).to_le_bytes());
        }
        if !plan.data_outs.is_empty() && discarded_any && !delivered_any {
            break 'run Stop::Downstream;
        }
        if firing.finished {
            break 'run Stop::Finished;
        }
    };

    // A finished source still owes one feedback pop: the last frame's
    // completion token is in flight while the kernel retires.
    if matches!(stop, Stop::Finished) {
        if let Some(fb) = &plan.fb_in {
            if let Popped::Tokens(_) = fb.pop(1) {
                out.fb_times.push(ns(start));
            }
        }
    }

    let downstream = match &stop {
        Stop::Failed(msg) => Some(msg.clone()),
        Stop::UpstreamEnd(err) => err.clone(),
        Stop::Finished | Stop::Downstream => None,
    };
    for wire in &plan.data_outs {
        for fifo in &wire.fifos {
            fifo.push_eos(downstream.clone());
        }
    }
    if let Some(fb) = &plan.fb_out {
        fb.push_eos(downstream.clone());
    }
    let upstream = match &stop {
        Stop::Failed(msg) => Some(msg.clone()),
        _ => None,
    };
    for wire in &plan.data_ins {
        wire.fifos[0].close_consumer(upstream.clone());
    }
    if let Some(ctl) = &plan.control_in {
        ctl.close_consumer(upstream.clone());
    }
    if let Some(fb) = &plan.fb_in {
        fb.close_consumer(upstream.clone());
    }
    if let Stop::Failed(msg) = stop {
        out.error = Some(msg);
    }
    out.report = plan.kernel.report();
}

/// Builds the per-frame records: a frame is acquired when every local
/// source has begun it and committed when its last byte went out on every
/// cut edge, or when the terminal actor completed it on a device with no
/// transmit side. Round trips come from the feedback gate at the source.
fn assemble_frames(
    manifest: &DeploymentManifest,
    outcomes: &BTreeMap<String, ActorOutcome>,
    tx_commits: &[(String, Vec<u64>)],
) -> Vec<FrameStat> {
    let acquired: Vec<&Vec<u64>> = outcomes
        .values()
        .filter(|o| !o.acquired.is_empty())
        .map(|o| &o.acquired)
        .collect();
    if acquired.is_empty() {
        return Vec::new();
    }
    let data_commits: Vec<&Vec<u64>> = tx_commits
        .iter()
        .filter(|(edge, _)| edge != deploy::FEEDBACK_EDGE)
        .map(|(_, commits)| commits)
        .collect();
    let completes: Vec<&Vec<u64>> = outcomes
        .values()
        .filter(|o| !o.complete.is_empty())
        .map(|o| &o.complete)
        .collect();
    let committed: &[&Vec<u64>] = if manifest
        .net_edges
        .iter()
        .any(|n| n.role == NetRole::Tx && n.edge.id != deploy::FEEDBACK_EDGE)
    {
        &data_commits
    } else {
        &completes
    };
    if committed.is_empty() {
        return Vec::new();
    }

    let fb_times: Option<&Vec<u64>> = outcomes
        .values()
        .find(|o| !o.fb_times.is_empty())
        .map(|o| &o.fb_times);
    let count = acquired
        .iter()
        .map(|v| v.len())
        .chain(committed.iter().map(|v| v.len()))
        .min()
        .unwrap_or(0);
    (0..count)
        .map(|k| {
            let acquired_ns = acquired.iter().map(|v| v[k]).max().unwrap();
            let committed_ns = committed.iter().map(|v| v[k]).max().unwrap();
            FrameStat {
                frame: k as u64,
                acquired_ns,
                committed_ns,
                roundtrip_ns: fb_times
                    .and_then(|v| v.get(k))
                    .map(|&t| t.saturating_sub(acquired_ns)),
            }
        })
        .collect()
}

/// Frames fully processed by this device: the slowest data-path actor
/// bounds it, one firing per frame. Actors touching only control edges,
/// like a group's control actor, run ahead and are excluded.
fn data_path_floor(
    manifest: &DeploymentManifest,
    actor_stats: &BTreeMap<String, ActorStats>,
) -> u64 {
    let mut on_data_path: Vec<&str> = Vec::new();
    let data_edge = |actor: &str| {
        let touches = |e: &crate::model::EdgeSpec| {
            !e.control
                && e.id != deploy::FEEDBACK_EDGE
                && (e.producer.0 == actor || e.consumer.0 == actor)
        };
        manifest.edges.iter().any(touches) || manifest.net_edges.iter().any(|n| touches(&n.edge))
    };
    for actor in &manifest.actors {
        if data_edge(&actor.id) {
            on_data_path.push(&actor.id);
        }
    }
    on_data_path
        .iter()
        .filter_map(|id| actor_stats.get(*id).map(|s| s.firings))
        .min()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn quick(frames: u64) -> RunOptions {
        RunOptions {
            frames: Some(frames),
            run_timeout: Some(Duration::from_secs(30)),
            ..RunOptions::default()
        }
    }

    #[test]
    fn local_chain_runs_to_completion() {
        let graph = synthetic::feedback_chain_graph(3, 7);
        let stats = run_local(&graph, &quick(3)).unwrap();
        assert!(!stats.failed, "{:?}", stats.errors);
        assert_eq!(stats.frames_processed, 3);
        for id in ["src", "s1", "s2", "sink"] {
            assert_eq!(stats.actors[id].firings, 3, "actor {id}");
        }
        for id in ["e0", "e1", "e2"] {
            let edge = &stats.edges[id];
            assert_eq!(edge.counters.produced, 3, "edge {id}");
            assert_eq!(edge.counters.consumed, 3, "edge {id}");
            assert_eq!(edge.counters.drained, 0, "edge {id}");
        }
        assert_eq!(stats.frames.len(), 3);
        for frame in &stats.frames {
            assert!(frame.committed_ns > frame.acquired_ns);
            assert!(frame.roundtrip_ns.is_none());
        }
    }

    #[test]
    fn identical_seeds_reproduce_the_terminal_digest() {
        let graph = synthetic::vehicle_classification_graph(synthetic::VclassOptions {
            frames: 2,
            ..Default::default()
        });
        let a = run_local(&graph, &quick(2)).unwrap();
        let b = run_local(&graph, &quick(2)).unwrap();
        let digest = |s: &RunStats| s.actor_report("l4l5").unwrap()["digest"].clone();
        assert!(!a.failed && !b.failed);
        assert_eq!(digest(&a), digest(&b));
    }

    #[test]
    fn feedback_serializes_and_reports_round_trips() {
        let graph = synthetic::feedback_chain_graph(4, 3);
        let opts = RunOptions { latency_feedback: true, ..quick(4) };
        let stats = run_local(&graph, &opts).unwrap();
        assert!(!stats.failed, "{:?}", stats.errors);
        assert_eq!(stats.frames.len(), 4);
        for frame in &stats.frames {
            let rt = frame.roundtrip_ns.expect("round trip recorded") as f64 / 1e6;
            // Serialized: src 9 ms + s1 20 ms + s2 30 ms per frame.
            assert!(rt > 55.0, "round trip {rt:.1} ms too small");
            assert!(rt < 140.0, "round trip {rt:.1} ms too large");
        }
    }

    #[test]
    fn unknown_kernel_fails_setup_by_name() {
        let mut graph = synthetic::feedback_chain_graph(2, 1);
        graph.actors[1].kernel = "warp_drive".into();
        let err = run_local(&graph, &quick(2)).unwrap_err();
        assert!(err.to_string().contains("warp_drive"), "{err}");
    }

    #[test]
    fn kernel_fire_error_fails_the_run_without_hanging() {
        // concat demands rate-1 ports; handing it a rate-2 static port
        // makes every firing fail immediately.
        let mut graph = synthetic::dual_input_graph(4, 5);
        for actor in &mut graph.actors {
            if actor.id == "join" {
                for port in &mut actor.ports {
                    if port.id == "in0" {
                        port.lrl = 2;
                        port.url = 2;
                    }
                }
            }
        }
        for edge in &mut graph.edges {
            if edge.id == "e_br0" {
                edge.capacity = 2;
            }
        }
        let graph = ApplicationGraph::from_parts(
            graph.name.clone(),
            graph.actors.clone(),
            graph.edges.clone(),
            vec![],
        )
        .unwrap();
        let stats = run_local(&graph, &quick(4)).unwrap();
        assert!(stats.failed);
        assert!(
            stats.errors.iter().any(|e| e.contains("join")),
            "errors: {:?}",
            stats.errors
        );
    }

    #[test]
    fn frames_override_patches_every_source() {
        let graph = synthetic::dual_input_graph(64, 2);
        let stats = run_local(&graph, &quick(2)).unwrap();
        assert!(!stats.failed, "{:?}", stats.errors);
        assert_eq!(stats.frames_processed, 2);
        assert_eq!(stats.actors["cam0"].firings, 2);
        assert_eq!(stats.actors["cam1"].firings, 2);
    }
}
