//! Graph construction helpers shared by the unit tests.

use std::collections::BTreeMap;

use crate::model::{
    ActorKind, ActorSpec, ApplicationGraph, DpgSpec, EdgeSpec, PortDirection, PortSpec,
};

pub fn in_port(id: &str, lrl: u32, url: u32) -> PortSpec {
    PortSpec {
        id: id.into(),
        direction: PortDirection::Input,
        lrl,
        url,
        dynamic: lrl != url,
    }
}

pub fn out_port(id: &str, lrl: u32, url: u32) -> PortSpec {
    PortSpec {
        id: id.into(),
        direction: PortDirection::Output,
        lrl,
        url,
        dynamic: lrl != url,
    }
}

pub fn actor(
    id: &str,
    kind: ActorKind,
    kernel: &str,
    dpg: Option<&str>,
    ports: Vec<PortSpec>,
) -> ActorSpec {
    ActorSpec {
        id: id.into(),
        kind,
        kernel: kernel.into(),
        kernel_params: BTreeMap::new(),
        dpg: dpg.map(String::from),
        ports,
    }
}

pub fn edge(
    id: &str,
    producer: (&str, &str),
    consumer: (&str, &str),
    token_size: u32,
    capacity: u32,
) -> EdgeSpec {
    EdgeSpec {
        id: id.into(),
        producer: (producer.0.into(), producer.1.into()),
        consumer: (consumer.0.into(), consumer.1.into()),
        token_size,
        capacity,
        initial_tokens: 0,
        control: false,
    }
}

pub fn control_edge(id: &str, producer: (&str, &str), consumer: (&str, &str)) -> EdgeSpec {
    EdgeSpec {
        control: true,
        ..edge(id, producer, consumer, 4, 1)
    }
}

/// Mutation knobs for the canonical dynamic-processing-group fixture. Each
/// flag introduces exactly one class of structural violation.
#[derive(Default)]
pub struct DpgFixture {
    pub drop_dpa_membership: bool,
    pub drop_ca: bool,
    pub duplicate_ca: bool,
    pub drop_dpa_control_edge: bool,
    pub source_feeds_dpa: bool,
    pub narrow_dpa_input: bool,
    pub undersize_inner_capacity: bool,
    /// Makes the dpa -> da_out edge static, leaving e_a as the only
    /// dynamic edge in the group.
    pub collapse_inner_rates: bool,
}

pub struct Fixture {
    pub actors: Vec<ActorSpec>,
    pub edges: Vec<EdgeSpec>,
    pub dpgs: Vec<DpgSpec>,
}

impl Fixture {
    pub fn build(self) -> ApplicationGraph {
        ApplicationGraph::from_parts("dpg-fixture", self.actors, self.edges, self.dpgs)
            .expect("fixture resolves")
    }
}

/// A five-actor pipeline whose middle three actors form a dynamic
/// processing group: src -> da_in -> dpa -> da_out -> sink, with a CA
/// controlling the three group members over control edges. Inner edges run
/// at a dynamic rate of 0..=2 tokens per firing.
pub fn dpg_fixture(opts: DpgFixture) -> Fixture {
    let mut actors = vec![
        actor("src", ActorKind::Spa, "source", None, vec![out_port("out", 1, 1)]),
        actor(
            "da_in",
            ActorKind::Da,
            "rate_expand",
            Some("g"),
            vec![in_port("in", 1, 1), out_port("out", 0, 2), in_port("ctl", 1, 1)],
        ),
        actor(
            "dpa",
            ActorKind::Dpa,
            "busywork",
            Some("g"),
            vec![in_port("in", 0, 2), out_port("out", 0, 2), in_port("ctl", 1, 1)],
        ),
        actor(
            "da_out",
            ActorKind::Da,
            "rate_collapse",
            Some("g"),
            vec![in_port("in", 0, 2), out_port("out", 1, 1), in_port("ctl", 1, 1)],
        ),
        actor(
            "ca",
            ActorKind::Ca,
            "rate_pattern",
            Some("g"),
            vec![out_port("c1", 1, 1), out_port("c2", 1, 1), out_port("c3", 1, 1)],
        ),
        actor("sink", ActorKind::Spa, "sink", None, vec![in_port("in", 1, 1)]),
    ];
    let mut edges = vec![
        edge("e_src", ("src", "out"), ("da_in", "in"), 8, 1),
        edge("e_a", ("da_in", "out"), ("dpa", "in"), 8, 2),
        edge("e_b", ("dpa", "out"), ("da_out", "in"), 8, 2),
        edge("e_sink", ("da_out", "out"), ("sink", "in"), 8, 1),
        control_edge("c1", ("ca", "c1"), ("da_in", "ctl")),
        control_edge("c2", ("ca", "c2"), ("dpa", "ctl")),
        control_edge("c3", ("ca", "c3"), ("da_out", "ctl")),
    ];
    let mut members: Vec<String> =
        ["da_in", "dpa", "da_out", "ca"].iter().map(|s| s.to_string()).collect();

    if opts.drop_dpa_membership {
        members.retain(|m| m != "dpa");
        actors.iter_mut().find(|a| a.id == "dpa").unwrap().dpg = None;
    }
    if opts.drop_ca {
        actors.retain(|a| a.id != "ca");
        members.retain(|m| m != "ca");
        edges.retain(|e| !e.control);
    }
    if opts.duplicate_ca {
        actors.push(actor(
            "ca2",
            ActorKind::Ca,
            "rate_pattern",
            Some("g"),
            vec![out_port("c0", 1, 1)],
        ));
        members.push("ca2".into());
    }
    if opts.drop_dpa_control_edge {
        edges.retain(|e| e.id != "c2");
    }
    if opts.source_feeds_dpa {
        actors
            .iter_mut()
            .find(|a| a.id == "dpa")
            .unwrap()
            .ports
            .push(in_port("side", 1, 1));
        let e = edges.iter_mut().find(|e| e.id == "e_src").unwrap();
        e.consumer = ("dpa".into(), "side".into());
    }
    if opts.narrow_dpa_input {
        let dpa = actors.iter_mut().find(|a| a.id == "dpa").unwrap();
        dpa.ports.iter_mut().find(|p| p.id == "in").unwrap().url = 1;
    }
    if opts.undersize_inner_capacity {
        edges.iter_mut().find(|e| e.id == "e_a").unwrap().capacity = 1;
    }
    if opts.collapse_inner_rates {
        let dpa = actors.iter_mut().find(|a| a.id == "dpa").unwrap();
        *dpa.ports.iter_mut().find(|p| p.id == "out").unwrap() = out_port("out", 1, 1);
        let da_out = actors.iter_mut().find(|a| a.id == "da_out").unwrap();
        *da_out.ports.iter_mut().find(|p| p.id == "in").unwrap() = in_port("in", 1, 1);
    }

    Fixture {
        actors,
        edges,
        dpgs: vec![DpgSpec { id: "g".into(), members }],
    }
}
