//! Generators for the synthetic benchmark graphs: the five-actor
//! vehicle-classification CNN, its busywork calibration twin, a deep chain
//! with skip connections, a dual-camera join pipeline and a short chain
//! for latency-feedback measurements.
//!
//! Every builder pins per-actor seeds derived from one graph seed, so two
//! processes executing different halves of a partition regenerate
//! identical weights and frames without any coordination.

use std::collections::BTreeMap;

use serde_json::json;

use crate::model::{
    fnv1a64, ActorKind, ActorSpec, ApplicationGraph, DeviceSpec, EdgeSpec, Mapping,
    PlatformGraph, PortDirection, PortSpec,
};
use crate::rng::splitmix64;

fn actor_seed(graph_seed: u64, actor_id: &str) -> u64 {
    let mut s = graph_seed ^ fnv1a64(actor_id.as_bytes());
    splitmix64(&mut s)
}

fn port(id: &str, direction: PortDirection, rate: u32) -> PortSpec {
    PortSpec {
        id: id.into(),
        direction,
        lrl: rate,
        url: rate,
        dynamic: false,
    }
}

fn spa(id: &str, kernel: &str, params: serde_json::Value, ports: Vec<PortSpec>) -> ActorSpec {
    ActorSpec {
        id: id.into(),
        kind: ActorKind::Spa,
        kernel: kernel.into(),
        kernel_params: params
            .as_object()
            .expect("params are an object")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        dpg: None,
        ports,
    }
}

fn data_edge(id: &str, producer: (&str, &str), consumer: (&str, &str), token_size: u32) -> EdgeSpec {
    EdgeSpec {
        id: id.into(),
        producer: (producer.0.into(), producer.1.into()),
        consumer: (consumer.0.into(), consumer.1.into()),
        token_size,
        capacity: 1,
        initial_tokens: 0,
        control: false,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VclassOptions {
    pub frames: u64,
    pub seed: u64,
    /// Busy time of the input actor per frame, emulating capture cost.
    pub source_work_ms: f64,
}

impl Default for VclassOptions {
    fn default() -> Self {
        VclassOptions {
            frames: 32,
            seed: 7,
            source_work_ms: 0.0,
        }
    }
}

/// The five-actor vehicle-classification pipeline: a 96x96x3 frame source,
/// two convolution+pool+relu layers, one 256-wide dense layer and a
/// terminal actor stacking the last two dense layers. The edge token
/// sizes are 110592, 294912, 73728 and 1024 bytes.
pub fn vehicle_classification_graph(opts: VclassOptions) -> ApplicationGraph {
    let s = |id: &str| actor_seed(opts.seed, id);
    let actors = vec![
        spa(
            "input",
            "source",
            json!({
                "frames": opts.frames, "seed": s("input"),
                "height": 96, "width": 96, "channels": 3,
                "work_ms": opts.source_work_ms,
            }),
            vec![port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l1",
            "conv2d",
            json!({
                "in_height": 96, "in_width": 96, "in_channels": 3,
                "filters": 32, "kernel_size": 5, "pool": 2,
                "activation": "relu", "seed": s("l1"),
            }),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l2",
            "conv2d",
            json!({
                "in_height": 48, "in_width": 48, "in_channels": 32,
                "filters": 32, "kernel_size": 5, "pool": 2,
                "activation": "relu", "seed": s("l2"),
            }),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l3",
            "dense",
            json!({
                "in_features": 18432, "seed": s("l3"),
                "layers": [{"out": 256, "activation": "relu"}],
            }),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l4l5",
            "dense",
            json!({
                "in_features": 256, "seed": s("l4l5"),
                "layers": [
                    {"out": 64, "activation": "relu"},
                    {"out": 4, "activation": "softmax"},
                ],
            }),
            vec![port("in", PortDirection::Input, 1)],
        ),
    ];
    let edges = vec![
        data_edge("e_input_l1", ("input", "out"), ("l1", "in"), 96 * 96 * 3 * 4),
        data_edge("e_l1_l2", ("l1", "out"), ("l2", "in"), 48 * 48 * 32 * 4),
        data_edge("e_l2_l3", ("l2", "out"), ("l3", "in"), 24 * 24 * 32 * 4),
        data_edge("e_l3_l4l5", ("l3", "out"), ("l4l5", "in"), 256 * 4),
    ];
    ApplicationGraph::from_parts("vehicle-classification", actors, edges, vec![])
        .expect("builder emits a valid graph")
}

/// Busy times per actor for the calibration twin, in milliseconds.
/// The proportions follow the classification pipeline's measured profile;
/// the total is 189 ms per frame when run on one device.
pub const DCAL_WORK_MS: [(&str, f64); 5] = [
    ("input", 9.0),
    ("l1", 36.0),
    ("l2", 44.0),
    ("l3", 62.0),
    ("l4l5", 38.0),
];

/// The calibration twin of the classification graph: same topology and
/// token sizes, but every actor is a busywork timer instead of real math.
/// Used to reproduce sweep shapes under emulated network conditions.
pub fn dcal_busywork_graph(frames: u64, seed: u64) -> ApplicationGraph {
    let work: BTreeMap<&str, f64> = DCAL_WORK_MS.iter().copied().collect();
    let actors = vec![
        spa(
            "input",
            "source",
            json!({"frames": frames, "seed": actor_seed(seed, "input"), "work_ms": work["input"]}),
            vec![port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l1",
            "busywork",
            json!({"ms": work["l1"]}),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l2",
            "busywork",
            json!({"ms": work["l2"]}),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l3",
            "busywork",
            json!({"ms": work["l3"]}),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "l4l5",
            "busywork",
            json!({"ms": work["l4l5"]}),
            vec![port("in", PortDirection::Input, 1)],
        ),
    ];
    let edges = vec![
        data_edge("e_input_l1", ("input", "out"), ("l1", "in"), 96 * 96 * 3 * 4),
        data_edge("e_l1_l2", ("l1", "out"), ("l2", "in"), 48 * 48 * 32 * 4),
        data_edge("e_l2_l3", ("l2", "out"), ("l3", "in"), 24 * 24 * 32 * 4),
        data_edge("e_l3_l4l5", ("l3", "out"), ("l4l5", "in"), 256 * 4),
    ];
    ApplicationGraph::from_parts("dcal-busywork", actors, edges, vec![])
        .expect("builder emits a valid graph")
}

/// A 53-actor, 69-edge chain: one source, 51 busywork stages and a sink,
/// with 17 skip edges jumping two stages ahead. Token sizes shrink along
/// the chain. Exercises explorer enumeration at a realistic graph scale.
pub fn deep_chain_graph(frames: u64, seed: u64, stage_ms: f64) -> ApplicationGraph {
    let chain_token = |i: usize| 4096 - 64 * i as u32;
    let mut actors = vec![spa(
        "a00",
        "source",
        json!({"frames": frames, "seed": actor_seed(seed, "a00")}),
        vec![port("out", PortDirection::Output, 1)],
    )];
    for i in 1..=51 {
        let ports = vec![
            port("in", PortDirection::Input, 1),
            port("out", PortDirection::Output, 1),
        ];
        actors.push(spa(&format!("a{i:02}"), "busywork", json!({"ms": stage_ms}), ports));
    }
    actors.push(spa(
        "a52",
        "sink",
        json!({}),
        vec![port("in", PortDirection::Input, 1)],
    ));

    let mut edges = Vec::new();
    for i in 0..=51 {
        edges.push(data_edge(
            &format!("c{i:02}"),
            (&format!("a{i:02}"), "out"),
            (&format!("a{:02}", i + 1), "in"),
            chain_token(i),
        ));
    }
    for (n, i) in (1..=49).step_by(3).enumerate() {
        let producer = format!("a{i:02}");
        let consumer = format!("a{:02}", i + 2);
        actors
            .iter_mut()
            .find(|a| a.id == producer)
            .unwrap()
            .ports
            .push(port(&format!("skip_out{n}"), PortDirection::Output, 1));
        actors
            .iter_mut()
            .find(|a| a.id == consumer)
            .unwrap()
            .ports
            .push(port(&format!("skip_in{n}"), PortDirection::Input, 1));
        edges.push(data_edge(
            &format!("s{n:02}"),
            (&producer, &format!("skip_out{n}")),
            (&consumer, &format!("skip_in{n}")),
            chain_token(i) / 2,
        ));
    }
    ApplicationGraph::from_parts("deep-chain", actors, edges, vec![])
        .expect("builder emits a valid graph")
}

/// Two camera branches joined on a server: each branch is a 32x32x1 source
/// into a small convolution layer; a concat actor merges the branch
/// outputs and a terminal dense head classifies the pair.
pub fn dual_input_graph(frames: u64, seed: u64) -> ApplicationGraph {
    let s = |id: &str| actor_seed(seed, id);
    let branch = |n: usize| -> Vec<ActorSpec> {
        vec![
            spa(
                &format!("cam{n}"),
                "source",
                json!({
                    "frames": frames, "seed": s(&format!("cam{n}")),
                    "height": 32, "width": 32, "channels": 1,
                }),
                vec![port("out", PortDirection::Output, 1)],
            ),
            spa(
                &format!("conv{n}"),
                "conv2d",
                json!({
                    "in_height": 32, "in_width": 32, "in_channels": 1,
                    "filters": 4, "kernel_size": 5, "pool": 2,
                    "activation": "relu", "seed": s(&format!("conv{n}")),
                }),
                vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
            ),
        ]
    };
    let mut actors = branch(0);
    actors.extend(branch(1));
    actors.push(spa(
        "join",
        "concat",
        json!({}),
        vec![
            port("in0", PortDirection::Input, 1),
            port("in1", PortDirection::Input, 1),
            port("out", PortDirection::Output, 1),
        ],
    ));
    actors.push(spa(
        "head",
        "dense",
        json!({
            "in_features": 2048, "seed": s("head"),
            "layers": [{"out": 16, "activation": "relu"}, {"out": 4, "activation": "softmax"}],
        }),
        vec![port("in", PortDirection::Input, 1)],
    ));
    let edges = vec![
        data_edge("e_cam0", ("cam0", "out"), ("conv0", "in"), 32 * 32 * 4),
        data_edge("e_cam1", ("cam1", "out"), ("conv1", "in"), 32 * 32 * 4),
        data_edge("e_br0", ("conv0", "out"), ("join", "in0"), 16 * 16 * 4 * 4),
        data_edge("e_br1", ("conv1", "out"), ("join", "in1"), 16 * 16 * 4 * 4),
        data_edge("e_join", ("join", "out"), ("head", "in"), 2 * 16 * 16 * 4 * 4),
    ];
    ApplicationGraph::from_parts("dual-input", actors, edges, vec![])
        .expect("builder emits a valid graph")
}

/// A four-stage chain for latency decomposition runs: a working source,
/// two busywork stages and a digesting sink, all pushing 64 KiB tokens.
pub fn feedback_chain_graph(frames: u64, seed: u64) -> ApplicationGraph {
    let actors = vec![
        spa(
            "src",
            "source",
            json!({"frames": frames, "seed": actor_seed(seed, "src"), "work_ms": 9.0}),
            vec![port("out", PortDirection::Output, 1)],
        ),
        spa(
            "s1",
            "busywork",
            json!({"ms": 20.0}),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "s2",
            "busywork",
            json!({"ms": 30.0}),
            vec![port("in", PortDirection::Input, 1), port("out", PortDirection::Output, 1)],
        ),
        spa(
            "sink",
            "sink",
            json!({}),
            vec![port("in", PortDirection::Input, 1)],
        ),
    ];
    let edges = vec![
        data_edge("e0", ("src", "out"), ("s1", "in"), 65536),
        data_edge("e1", ("s1", "out"), ("s2", "in"), 65536),
        data_edge("e2", ("s2", "out"), ("sink", "in"), 65536),
    ];
    ApplicationGraph::from_parts("feedback-chain", actors, edges, vec![])
        .expect("builder emits a valid graph")
}

/// A variable-rate pruning pipeline: src -> da_in -> work -> da_out ->
/// sink with a control actor walking `pattern`. Inner edges run at rates
/// 0..=2; a zero rate prunes the frame inside the group.
pub fn pruned_pipeline_graph(frames: u64, seed: u64, pattern: &[u32]) -> ApplicationGraph {
    let dyn_port = |id: &str, direction: PortDirection| PortSpec {
        id: id.into(),
        direction,
        lrl: 0,
        url: 2,
        dynamic: true,
    };
    let mut da_in = spa(
        "da_in",
        "rate_expand",
        json!({}),
        vec![
            port("in", PortDirection::Input, 1),
            dyn_port("out", PortDirection::Output),
            port("ctl", PortDirection::Input, 1),
        ],
    );
    da_in.kind = ActorKind::Da;
    da_in.dpg = Some("g".into());
    let mut work = spa(
        "work",
        "busywork",
        json!({"ms": 0.0}),
        vec![
            dyn_port("in", PortDirection::Input),
            dyn_port("out", PortDirection::Output),
            port("ctl", PortDirection::Input, 1),
        ],
    );
    work.kind = ActorKind::Dpa;
    work.dpg = Some("g".into());
    let mut da_out = spa(
        "da_out",
        "rate_collapse",
        json!({}),
        vec![
            dyn_port("in", PortDirection::Input),
            port("out", PortDirection::Output, 1),
            port("ctl", PortDirection::Input, 1),
        ],
    );
    da_out.kind = ActorKind::Da;
    da_out.dpg = Some("g".into());
    let mut ca = spa(
        "ca",
        "rate_pattern",
        json!({"pattern": pattern}),
        vec![
            port("c_in", PortDirection::Output, 1),
            port("c_work", PortDirection::Output, 1),
            port("c_out", PortDirection::Output, 1),
        ],
    );
    ca.kind = ActorKind::Ca;
    ca.dpg = Some("g".into());

    let actors = vec![
        spa(
            "src",
            "source",
            json!({"frames": frames, "seed": actor_seed(seed, "src")}),
            vec![port("out", PortDirection::Output, 1)],
        ),
        da_in,
        work,
        da_out,
        ca,
        spa("sink", "sink", json!({}), vec![port("in", PortDirection::Input, 1)]),
    ];
    let control = |id: &str, from: &str, to: &str| EdgeSpec {
        control: true,
        ..data_edge(id, ("ca", from), (to, "ctl"), 4)
    };
    let mut inner_a = data_edge("e_a", ("da_in", "out"), ("work", "in"), 8);
    inner_a.capacity = 2;
    let mut inner_b = data_edge("e_b", ("work", "out"), ("da_out", "in"), 8);
    inner_b.capacity = 2;
    let edges = vec![
        data_edge("e_src", ("src", "out"), ("da_in", "in"), 8),
        inner_a,
        inner_b,
        data_edge("e_sink", ("da_out", "out"), ("sink", "in"), 8),
        control("c_in", "c_in", "da_in"),
        control("c_work", "c_work", "work"),
        control("c_out", "c_out", "da_out"),
    ];
    ApplicationGraph::from_parts(
        "pruned-pipeline",
        actors,
        edges,
        vec![crate::model::DpgSpec {
            id: "g".into(),
            members: vec!["da_in".into(), "work".into(), "da_out".into(), "ca".into()],
        }],
    )
    .expect("builder emits a valid graph")
}

/// A platform of `n` loopback devices named dev0, dev1, ... with one CPU
/// unit each and port bases spaced 100 apart.
pub fn loopback_platform(n: usize, base_port: u16) -> PlatformGraph {
    let devices = (0..n)
        .map(|i| DeviceSpec {
            id: format!("dev{i}"),
            units: vec!["cpu0".into()],
            address: format!("127.0.0.1:{}", base_port + 100 * i as u16),
        })
        .collect();
    let links = (1..n).map(|i| ("dev0".to_string(), format!("dev{i}"))).collect();
    PlatformGraph { devices, links }
}

/// Maps the first `client_actors` of `order` onto dev0 and the rest onto
/// dev1.
pub fn prefix_mapping(order: &[String], client_actors: usize) -> Mapping {
    let assignments = order
        .iter()
        .enumerate()
        .map(|(i, actor)| {
            let dev = if i < client_actors { "dev0" } else { "dev1" };
            (actor.clone(), (dev.to_string(), "cpu0".to_string()))
        })
        .collect();
    Mapping { assignments }
}
