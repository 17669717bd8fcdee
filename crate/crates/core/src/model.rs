//! Application graph, platform graph and mapping: types, JSON parsing and
//! the canonical graph hash.
//!
//! All rate symbols live here: every port carries a lower rate limit `lrl`
//! and an upper rate limit `url` (tokens per firing), and an edge requires
//! both of its ports to declare the same `(lrl, url)` range so that the
//! active rate chosen at run time is always equal on both sides.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::rules;

/// FNV-1a 64-bit, used for the canonical graph hash and sink digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invariant {rule} violated by `{element}`: {message}")]
    Invariant {
        rule: String,
        element: String,
        message: String,
    },
}

impl GraphError {
    pub fn invariant(rule: &str, element: &str, message: impl Into<String>) -> Self {
        GraphError::Invariant {
            rule: rule.to_string(),
            element: element.to_string(),
            message: message.into(),
        }
    }

    fn from_json(err: serde_json::Error) -> Self {
        GraphError::Syntax {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortDirection {
    Input,
    Output,
}

/// One connection point of an actor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortSpec {
    pub id: String,
    pub direction: PortDirection,
    /// Lower rate limit, tokens per firing.
    pub lrl: u32,
    /// Upper rate limit, tokens per firing. Always >= 1 and >= lrl.
    pub url: u32,
    /// Dynamic ports take their active rate from a control token each
    /// iteration; static ports always run at lrl == url.
    #[serde(default)]
    pub dynamic: bool,
}

impl PortSpec {
    pub fn is_static(&self) -> bool {
        !self.dynamic
    }

    /// The fixed rate of a static port.
    pub fn static_rate(&self) -> u32 {
        debug_assert!(!self.dynamic);
        self.url
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorKind {
    #[serde(rename = "SPA")]
    Spa,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "CA")]
    Ca,
    #[serde(rename = "DPA")]
    Dpa,
    #[serde(rename = "TXF")]
    Txf,
    #[serde(rename = "RXF")]
    Rxf,
}

impl ActorKind {
    /// Kinds that are only legal inside a dynamic processing group.
    pub fn is_dynamic_kind(self) -> bool {
        matches!(self, ActorKind::Da | ActorKind::Ca | ActorKind::Dpa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: String,
    pub kind: ActorKind,
    /// Kernel registry key resolved at run time.
    pub kernel: String,
    #[serde(default)]
    pub kernel_params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpg: Option<String>,
    pub ports: Vec<PortSpec>,
}

impl ActorSpec {
    pub fn port(&self, id: &str) -> Option<&PortSpec> {
        self.ports.iter().find(|p| p.id == id)
    }

    pub fn input_ports(&self) -> impl Iterator<Item = &PortSpec> {
        self.ports
            .iter()
            .filter(|p| p.direction == PortDirection::Input)
    }

    pub fn output_ports(&self) -> impl Iterator<Item = &PortSpec> {
        self.ports
            .iter()
            .filter(|p| p.direction == PortDirection::Output)
    }
}

/// Reference to one endpoint of an edge: `(actor id, port id)`.
pub type PortRef = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    pub producer: PortRef,
    pub consumer: PortRef,
    /// Bytes per token; fixed for the lifetime of the edge.
    pub token_size: u32,
    /// FIFO capacity in tokens. Defaults to the ports' url.
    pub capacity: u32,
    #[serde(default)]
    pub initial_tokens: u32,
    /// Control edges distribute the per-iteration rate from a CA.
    #[serde(default)]
    pub control: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpgSpec {
    pub id: String,
    pub members: Vec<String>,
}

/// A parsed and resolved application graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplicationGraph {
    pub name: String,
    pub actors: Vec<ActorSpec>,
    pub edges: Vec<EdgeSpec>,
    pub dpgs: Vec<DpgSpec>,
    /// FNV-1a over the canonical serialization; recomputed on parse and
    /// checked by the wire handshake.
    #[serde(skip)]
    pub graph_hash: u64,
}

// ---------------------------------------------------------------------------
// Raw document schema (what the JSON files actually contain).

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    name: String,
    actors: Vec<RawActor>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    dpgs: Vec<DpgSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActor {
    id: String,
    kind: ActorKind,
    kernel: String,
    #[serde(default)]
    kernel_params: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    dpg: Option<String>,
    #[serde(default)]
    ports: Vec<PortSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: String,
    producer: PortRef,
    consumer: PortRef,
    token_size: u32,
    #[serde(default)]
    capacity: Option<u32>,
    #[serde(default)]
    initial_tokens: u32,
    #[serde(default)]
    control: bool,
}

impl ApplicationGraph {
    /// Builds a graph from parts, running only the resolution checks (unique
    /// ids, resolvable endpoints, local rate sanity). Structural design
    /// rules are NOT enforced here; `analyzer::check_structure` reports them
    /// as diagnostics and `parse_application_graph` turns them into errors.
    pub fn from_parts(
        name: impl Into<String>,
        actors: Vec<ActorSpec>,
        edges: Vec<EdgeSpec>,
        dpgs: Vec<DpgSpec>,
    ) -> Result<Self, GraphError> {
        let mut graph = ApplicationGraph {
            name: name.into(),
            actors,
            edges,
            dpgs,
            graph_hash: 0,
        };
        graph.resolve_checks()?;
        graph.graph_hash = fnv1a64(graph.canonical_string().as_bytes());
        Ok(graph)
    }

    pub fn actor(&self, id: &str) -> Option<&ActorSpec> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn edge(&self, id: &str) -> Option<&EdgeSpec> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn dpg(&self, id: &str) -> Option<&DpgSpec> {
        self.dpgs.iter().find(|d| d.id == id)
    }

    /// Data (non-control) edges.
    pub fn data_edges(&self) -> impl Iterator<Item = &EdgeSpec> {
        self.edges.iter().filter(|e| !e.control)
    }

    /// The `(lrl, url)` range of an edge, read from its producer port.
    pub fn edge_rate_range(&self, edge: &EdgeSpec) -> (u32, u32) {
        let port = self
            .actor(&edge.producer.0)
            .and_then(|a| a.port(&edge.producer.1))
            .expect("edge endpoints resolve after construction");
        (port.lrl, port.url)
    }

    /// True when the edge may legally run at more than one rate.
    pub fn edge_is_dynamic(&self, edge: &EdgeSpec) -> bool {
        let (lrl, url) = self.edge_rate_range(edge);
        lrl != url
    }

    /// Canonical serialization: compact JSON with every object's keys
    /// sorted and all defaults made explicit. Key order in the source
    /// document therefore never affects the hash.
    pub fn canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("graph serializes");
        serde_json::to_string(&value).expect("canonical json")
    }

    /// Document form: pretty JSON matching the graph file schema.
    pub fn to_document_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("graph serializes");
        text.push('\n');
        text
    }

    fn resolve_checks(&self) -> Result<(), GraphError> {
        if self.actors.is_empty() {
            return Err(GraphError::invariant(
                "G1",
                &self.name,
                "graph must contain at least one actor",
            ));
        }

        let mut actor_ids = HashSet::new();
        for actor in &self.actors {
            if !actor_ids.insert(actor.id.as_str()) {
                return Err(GraphError::invariant(
                    "G2",
                    &actor.id,
                    "duplicate actor id",
                ));
            }
            if matches!(actor.kind, ActorKind::Txf | ActorKind::Rxf) {
                return Err(GraphError::invariant(
                    "G3",
                    &actor.id,
                    "TXF/RXF actors are inserted by the deployment compiler and may not \
                     appear in authored graphs",
                ));
            }
            let mut port_ids = HashSet::new();
            for port in &actor.ports {
                if !port_ids.insert(port.id.as_str()) {
                    return Err(GraphError::invariant(
                        "G4",
                        &format!("{}.{}", actor.id, port.id),
                        "duplicate port id within actor",
                    ));
                }
                if port.url == 0 {
                    return Err(GraphError::invariant(
                        "G5",
                        &format!("{}.{}", actor.id, port.id),
                        "url must be positive",
                    ));
                }
                if port.lrl > port.url {
                    return Err(GraphError::invariant(
                        "G5",
                        &format!("{}.{}", actor.id, port.id),
                        format!("lrl {} exceeds url {}", port.lrl, port.url),
                    ));
                }
                if !port.dynamic && port.lrl != port.url {
                    return Err(GraphError::invariant(
                        "G6",
                        &format!("{}.{}", actor.id, port.id),
                        "static ports have a fixed rate (lrl must equal url)",
                    ));
                }
                if port.dynamic && !actor.kind.is_dynamic_kind() {
                    return Err(GraphError::invariant(
                        "G7",
                        &format!("{}.{}", actor.id, port.id),
                        "dynamic ports are only allowed on DA, DPA or CA actors",
                    ));
                }
            }
            if actor.ports.is_empty() && actor.kernel != "source" && actor.kernel != "sink" {
                return Err(GraphError::invariant(
                    "G8",
                    &actor.id,
                    "actor must declare at least one port unless it is a pure source or sink",
                ));
            }
            if let Some(dpg) = &actor.dpg {
                if !self.dpgs.iter().any(|d| &d.id == dpg) {
                    return Err(GraphError::invariant(
                        "G9",
                        &actor.id,
                        format!("references unknown dpg `{dpg}`"),
                    ));
                }
            }
        }

        let mut edge_ids = HashSet::new();
        for edge in &self.edges {
            if !edge_ids.insert(edge.id.as_str()) {
                return Err(GraphError::invariant("G10", &edge.id, "duplicate edge id"));
            }
            if edge.token_size == 0 {
                return Err(GraphError::invariant(
                    "G11",
                    &edge.id,
                    "token_size must be positive",
                ));
            }
            if edge.capacity == 0 {
                return Err(GraphError::invariant(
                    "G11",
                    &edge.id,
                    "capacity must be positive",
                ));
            }
            if edge.initial_tokens > edge.capacity {
                return Err(GraphError::invariant(
                    "G12",
                    &edge.id,
                    format!(
                        "initial_tokens {} exceeds capacity {}",
                        edge.initial_tokens, edge.capacity
                    ),
                ));
            }
            for (role, (actor_id, port_id), want) in [
                ("producer", &edge.producer, PortDirection::Output),
                ("consumer", &edge.consumer, PortDirection::Input),
            ] {
                let actor = self.actor(actor_id).ok_or_else(|| {
                    GraphError::invariant(
                        "G13",
                        &edge.id,
                        format!("{role} references unknown actor `{actor_id}`"),
                    )
                })?;
                let port = actor.port(port_id).ok_or_else(|| {
                    GraphError::invariant(
                        "G13",
                        &edge.id,
                        format!("{role} references unknown port `{actor_id}.{port_id}`"),
                    )
                })?;
                if port.direction != want {
                    return Err(GraphError::invariant(
                        "G14",
                        &edge.id,
                        format!("{role} port `{actor_id}.{port_id}` has the wrong direction"),
                    ));
                }
            }
            if edge.control && edge.token_size != 4 {
                return Err(GraphError::invariant(
                    "G15",
                    &edge.id,
                    "control edges carry one 4-byte rate token (token_size must be 4)",
                ));
            }
        }

        // One producer and one consumer per port.
        let mut used: HashSet<(&str, &str)> = HashSet::new();
        for edge in &self.edges {
            for (actor_id, port_id) in [&edge.producer, &edge.consumer] {
                if !used.insert((actor_id, port_id)) {
                    return Err(GraphError::invariant(
                        "G16",
                        &edge.id,
                        format!("port `{actor_id}.{port_id}` is wired to more than one edge"),
                    ));
                }
            }
        }

        for dpg in &self.dpgs {
            for member in &dpg.members {
                if self.actor(member).is_none() {
                    return Err(GraphError::invariant(
                        "G17",
                        &dpg.id,
                        format!("dpg lists unknown actor `{member}`"),
                    ));
                }
            }
        }

        self.check_connected()?;
        Ok(())
    }

    /// The non-control data subgraph must be weakly connected. Actors that
    /// touch no data edge are exempt only when they are CAs (their control
    /// edges tie them to the group) or the graph has no data edges at all.
    fn check_connected(&self) -> Result<(), GraphError> {
        let data_edges: Vec<&EdgeSpec> = self.data_edges().collect();
        if data_edges.is_empty() {
            return Ok(());
        }
        let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
        for edge in &data_edges {
            adjacency
                .entry(edge.producer.0.as_str())
                .or_default()
                .push(edge.consumer.0.as_str());
            adjacency
                .entry(edge.consumer.0.as_str())
                .or_default()
                .push(edge.producer.0.as_str());
        }
        let start = data_edges[0].producer.0.as_str();
        let mut seen: HashSet<&str> = HashSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(actor) = queue.pop_front() {
            for &next in adjacency.get(actor).into_iter().flatten() {
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        for actor in &self.actors {
            let touches_data = adjacency.contains_key(actor.id.as_str());
            if touches_data && !seen.contains(actor.id.as_str()) {
                return Err(GraphError::invariant(
                    "G18",
                    &actor.id,
                    "non-control data subgraph is not connected",
                ));
            }
            if !touches_data && actor.kind != ActorKind::Ca {
                return Err(GraphError::invariant(
                    "G18",
                    &actor.id,
                    "actor is not connected to the data subgraph",
                ));
            }
        }
        Ok(())
    }
}

/// Parses and fully validates an application graph document. Both the
/// resolution checks and the structural design rules must pass.
pub fn parse_application_graph(text: &str) -> Result<ApplicationGraph, GraphError> {
    let graph = parse_application_graph_for_analysis(text)?;
    if let Some(diag) = rules::structure_diagnostics(&graph)
        .into_iter()
        .find(|d| d.severity == crate::diag::Severity::Error)
    {
        return Err(GraphError::Invariant {
            rule: diag.rule,
            element: diag.element,
            message: diag.message,
        });
    }
    Ok(graph)
}

/// Parses a graph document for diagnosis. The graph must still resolve
/// (unique ids, endpoints that exist, sane local rates), but structural
/// design rules are left to the analyzer, so a report can carry every
/// finding at once instead of stopping at the first.
pub fn parse_application_graph_for_analysis(text: &str) -> Result<ApplicationGraph, GraphError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(GraphError::from_json)?;

    // Resolve the per-edge capacity default (the ports' url) before
    // constructing; the default is the minimum deadlock-free capacity for
    // acyclic graphs.
    let port_url = |pref: &PortRef| -> Option<u32> {
        raw.actors
            .iter()
            .find(|a| a.id == pref.0)
            .and_then(|a| a.ports.iter().find(|p| p.id == pref.1))
            .map(|p| p.url)
    };

    let mut edges = Vec::with_capacity(raw.edges.len());
    for edge in &raw.edges {
        let capacity = match edge.capacity {
            Some(c) => c,
            None => port_url(&edge.producer)
                .or_else(|| port_url(&edge.consumer))
                .unwrap_or(1),
        };
        edges.push(EdgeSpec {
            id: edge.id.clone(),
            producer: edge.producer.clone(),
            consumer: edge.consumer.clone(),
            token_size: edge.token_size,
            capacity,
            initial_tokens: edge.initial_tokens,
            control: edge.control,
        });
    }

    let actors = raw
        .actors
        .into_iter()
        .map(|a| ActorSpec {
            id: a.id,
            kind: a.kind,
            kernel: a.kernel,
            kernel_params: a.kernel_params,
            dpg: a.dpg,
            ports: a.ports,
        })
        .collect();

    ApplicationGraph::from_parts(raw.name, actors, edges, raw.dpgs)
}

// ---------------------------------------------------------------------------
// Platform graph.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    pub units: Vec<String>,
    /// `host` or `host:port-base`; the port base seeds cut-edge port
    /// assignment for this device.
    pub address: String,
}

impl DeviceSpec {
    /// Splits the address into host and optional port base.
    pub fn host_and_base(&self) -> (&str, Option<u16>) {
        match self.address.rsplit_once(':') {
            Some((host, port)) => match port.parse::<u16>() {
                Ok(p) => (host, Some(p)),
                Err(_) => (self.address.as_str(), None),
            },
            None => (self.address.as_str(), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformGraph {
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub links: Vec<(String, String)>,
}

impl PlatformGraph {
    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }
}

pub fn parse_platform_graph(text: &str) -> Result<PlatformGraph, GraphError> {
    let platform: PlatformGraph = serde_json::from_str(text).map_err(GraphError::from_json)?;
    let mut ids = HashSet::new();
    for device in &platform.devices {
        if !ids.insert(device.id.as_str()) {
            return Err(GraphError::invariant(
                "P1",
                &device.id,
                "duplicate device id",
            ));
        }
        let mut units = HashSet::new();
        for unit in &device.units {
            if !units.insert(unit.as_str()) {
                return Err(GraphError::invariant(
                    "P2",
                    &format!("{}.{}", device.id, unit),
                    "duplicate processing unit id",
                ));
            }
        }
    }
    for (a, b) in &platform.links {
        for end in [a, b] {
            if platform.device(end).is_none() {
                return Err(GraphError::invariant(
                    "P3",
                    end,
                    "link references unknown device",
                ));
            }
        }
    }
    Ok(platform)
}

// ---------------------------------------------------------------------------
// Mapping.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mapping {
    /// actor id -> (device id, processing unit id). Total over the graph.
    pub assignments: BTreeMap<String, (String, String)>,
}

impl Mapping {
    pub fn device_of(&self, actor: &str) -> Option<&str> {
        self.assignments.get(actor).map(|(d, _)| d.as_str())
    }

    /// Devices that have at least one actor, in first-use order over the
    /// graph's actor declaration order.
    pub fn devices_in_use(&self, graph: &ApplicationGraph) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for actor in &graph.actors {
            if let Some(device) = self.device_of(&actor.id) {
                if seen.insert(device.to_string()) {
                    out.push(device.to_string());
                }
            }
        }
        out
    }

    pub fn to_document_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("mapping serializes");
        text.push('\n');
        text
    }
}

pub fn parse_mapping(
    text: &str,
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
) -> Result<Mapping, GraphError> {
    let mapping: Mapping = serde_json::from_str(text).map_err(GraphError::from_json)?;
    validate_mapping(&mapping, graph, platform)?;
    Ok(mapping)
}

/// Checks totality and that every assignment target exists.
pub fn validate_mapping(
    mapping: &Mapping,
    graph: &ApplicationGraph,
    platform: &PlatformGraph,
) -> Result<(), GraphError> {
    for actor in &graph.actors {
        if !mapping.assignments.contains_key(&actor.id) {
            return Err(GraphError::invariant(
                "M1",
                &actor.id,
                format!("unmapped actor {}", actor.id),
            ));
        }
    }
    for (actor, (device_id, unit_id)) in &mapping.assignments {
        if graph.actor(actor).is_none() {
            return Err(GraphError::invariant(
                "M2",
                actor,
                "mapping references unknown actor",
            ));
        }
        let device = platform.device(device_id).ok_or_else(|| {
            GraphError::invariant(
                "M3",
                actor,
                format!("mapping references unknown device `{device_id}`"),
            )
        })?;
        if !device.units.iter().any(|u| u == unit_id) {
            return Err(GraphError::invariant(
                "M3",
                actor,
                format!("device `{device_id}` has no processing unit `{unit_id}`"),
            ));
        }
    }
    Ok(())
}
