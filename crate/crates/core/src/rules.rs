//! Structural design rules for dynamic processing groups and rate ranges.
//!
//! `parse_application_graph` promotes any error-severity finding to a hard
//! parse failure; the analyzer reports the same findings as diagnostics so
//! that malformed graphs can still be inspected.
//!
//! R1  every DA, CA and DPA belongs to exactly one dynamic processing group
//! R2  every group contains exactly one CA and exactly two DAs
//! R3  the group's CA feeds a control edge to every DA and DPA member, and
//!     only such edges may be marked control
//! R4  edges crossing a group boundary attach to a DA through a static port
//! R5  both ports of an edge declare the same rate range
//! CAP a FIFO holds at least one full firing at the upper rate limit

use std::collections::HashMap;

use crate::diag::Diagnostic;
use crate::model::{ActorKind, ApplicationGraph};

/// R1 through R5. These are hard errors at parse time.
pub fn structure_diagnostics(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    // Group membership from the dpgs lists; an actor may appear at most once.
    let mut membership: HashMap<&str, Vec<&str>> = HashMap::new();
    for dpg in &graph.dpgs {
        for member in &dpg.members {
            membership
                .entry(member.as_str())
                .or_default()
                .push(dpg.id.as_str());
        }
    }
    let group_of = |actor: &str| -> Option<&str> {
        match membership.get(actor) {
            Some(groups) if groups.len() == 1 => Some(groups[0]),
            _ => None,
        }
    };

    for actor in &graph.actors {
        let listed = membership.get(actor.id.as_str()).map_or(&[][..], |v| v);
        if actor.kind.is_dynamic_kind() && listed.is_empty() {
            out.push(Diagnostic::error(
                "R1",
                &actor.id,
                format!(
                    "{:?} actor must belong to exactly one dynamic processing group",
                    actor.kind
                ),
            ));
        }
        if listed.len() > 1 {
            out.push(Diagnostic::error(
                "R1",
                &actor.id,
                format!("actor belongs to {} dynamic processing groups", listed.len()),
            ));
        }
        match (&actor.dpg, listed.first()) {
            (Some(declared), Some(actual)) if declared != actual => {
                out.push(Diagnostic::error(
                    "R1",
                    &actor.id,
                    format!("dpg field `{declared}` does not match group membership `{actual}`"),
                ));
            }
            (Some(declared), None) => {
                out.push(Diagnostic::error(
                    "R1",
                    &actor.id,
                    format!("dpg field `{declared}` set but the group does not list this actor"),
                ));
            }
            (None, Some(actual)) if listed.len() == 1 => {
                out.push(Diagnostic::error(
                    "R1",
                    &actor.id,
                    format!("listed as a member of `{actual}` but the dpg field is unset"),
                ));
            }
            _ => {}
        }
    }

    for dpg in &graph.dpgs {
        let mut cas = 0;
        let mut das = 0;
        for member in &dpg.members {
            match graph.actor(member).map(|a| a.kind) {
                Some(ActorKind::Ca) => cas += 1,
                Some(ActorKind::Da) => das += 1,
                _ => {}
            }
        }
        if cas != 1 {
            out.push(Diagnostic::error(
                "R2",
                &dpg.id,
                format!("group must contain exactly one control actor, found {cas}"),
            ));
        }
        if das != 2 {
            out.push(Diagnostic::error(
                "R2",
                &dpg.id,
                format!("group must contain exactly two decision actors, found {das}"),
            ));
        }
    }

    // R3: control edge shape, plus coverage of every DA/DPA member.
    for edge in graph.edges.iter().filter(|e| e.control) {
        let producer = graph.actor(&edge.producer.0).expect("resolved");
        let consumer = graph.actor(&edge.consumer.0).expect("resolved");
        if producer.kind != ActorKind::Ca {
            out.push(Diagnostic::error(
                "R3",
                &edge.id,
                format!("control edge must originate at a CA, not {:?}", producer.kind),
            ));
        }
        if !matches!(consumer.kind, ActorKind::Da | ActorKind::Dpa) {
            out.push(Diagnostic::error(
                "R3",
                &edge.id,
                format!("control edge must target a DA or DPA, not {:?}", consumer.kind),
            ));
        }
        if group_of(&edge.producer.0) != group_of(&edge.consumer.0) {
            out.push(Diagnostic::error(
                "R3",
                &edge.id,
                "control edge crosses a dynamic processing group boundary",
            ));
        }
        for (actor, port_id) in [
            (producer, &edge.producer.1),
            (consumer, &edge.consumer.1),
        ] {
            if let Some(port) = actor.port(port_id) {
                if (port.lrl, port.url) != (1, 1) {
                    out.push(Diagnostic::error(
                        "R3",
                        &format!("{}.{}", actor.id, port_id),
                        "control ports run at a fixed rate of one token per firing",
                    ));
                }
            }
        }
    }
    for dpg in &graph.dpgs {
        let ca = dpg
            .members
            .iter()
            .find(|m| graph.actor(m).map(|a| a.kind) == Some(ActorKind::Ca));
        let Some(ca) = ca else { continue };
        for member in &dpg.members {
            let Some(actor) = graph.actor(member) else { continue };
            if !matches!(actor.kind, ActorKind::Da | ActorKind::Dpa) {
                continue;
            }
            let covered = graph
                .edges
                .iter()
                .any(|e| e.control && &e.producer.0 == ca && &e.consumer.0 == member);
            if !covered {
                out.push(Diagnostic::error(
                    "R3",
                    member,
                    format!("no control edge from `{ca}` reaches this group member"),
                ));
            }
        }
    }

    for edge in graph.data_edges() {
        let pg = group_of(&edge.producer.0);
        let cg = group_of(&edge.consumer.0);
        if pg == cg {
            continue;
        }
        for (group, (actor_id, port_id)) in [(pg, &edge.producer), (cg, &edge.consumer)] {
            if group.is_none() {
                continue;
            }
            let actor = graph.actor(actor_id).expect("resolved");
            let port = actor.port(port_id).expect("resolved");
            if actor.kind != ActorKind::Da {
                out.push(Diagnostic::error(
                    "R4",
                    &edge.id,
                    format!(
                        "group boundary must be crossed via a decision actor, but `{actor_id}` \
                         is a {:?}",
                        actor.kind
                    ),
                ));
            } else if port.dynamic {
                out.push(Diagnostic::error(
                    "R4",
                    &edge.id,
                    format!("boundary edge attaches to dynamic port `{actor_id}.{port_id}`"),
                ));
            }
        }
    }

    for edge in &graph.edges {
        let p = graph
            .actor(&edge.producer.0)
            .and_then(|a| a.port(&edge.producer.1))
            .expect("resolved");
        let c = graph
            .actor(&edge.consumer.0)
            .and_then(|a| a.port(&edge.consumer.1))
            .expect("resolved");
        if (p.lrl, p.url) != (c.lrl, c.url) {
            out.push(Diagnostic::error(
                "R5",
                &edge.id,
                format!(
                    "symmetric rate ranges violated on edge `{}`: producer declares ({}, {}) \
                     but consumer declares ({}, {})",
                    edge.id, p.lrl, p.url, c.lrl, c.url
                ),
            ));
        }
    }

    sort(&mut out);
    out
}

/// A FIFO must be able to absorb one full firing at the upper rate limit;
/// anything smaller blocks the producer forever.
pub fn capacity_diagnostics(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for edge in &graph.edges {
        let (_, url) = graph.edge_rate_range(edge);
        if edge.capacity < url {
            out.push(Diagnostic::error(
                "CAP",
                &edge.id,
                format!(
                    "capacity {} cannot hold a full firing at the upper rate limit {} \
                     (buffer overflow)",
                    edge.capacity, url
                ),
            ));
        }
    }
    sort(&mut out);
    out
}

/// Unwired ports never block a firing but almost always indicate a typo.
pub fn hygiene_warnings(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for actor in &graph.actors {
        for port in &actor.ports {
            let wired = graph.edges.iter().any(|e| {
                (e.producer.0 == actor.id && e.producer.1 == port.id)
                    || (e.consumer.0 == actor.id && e.consumer.1 == port.id)
            });
            if !wired {
                out.push(Diagnostic::warning(
                    "UNWIRED",
                    format!("{}.{}", actor.id, port.id),
                    "port is not connected to any edge",
                ));
            }
        }
    }
    sort(&mut out);
    out
}

/// Everything the parser and analyzer know how to find, in one list.
pub fn structural_diagnostics(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    let mut out = structure_diagnostics(graph);
    out.extend(capacity_diagnostics(graph));
    out.extend(hygiene_warnings(graph));
    sort(&mut out);
    out
}

fn sort(diags: &mut [Diagnostic]) {
    diags.sort_by(|a, b| (&a.rule, &a.element).cmp(&(&b.rule, &b.element)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{dpg_fixture, DpgFixture};

    fn errors_for(graph: &ApplicationGraph) -> Vec<Diagnostic> {
        structural_diagnostics(graph)
            .into_iter()
            .filter(|d| d.severity == crate::diag::Severity::Error)
            .collect()
    }

    #[test]
    fn canonical_group_passes_all_rules() {
        let graph = dpg_fixture(DpgFixture::default()).build();
        assert!(errors_for(&graph).is_empty(), "{:?}", errors_for(&graph));
    }

    #[test]
    fn dynamic_actor_outside_any_group_violates_r1() {
        let graph = dpg_fixture(DpgFixture {
            drop_dpa_membership: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        assert!(errors.iter().any(|d| d.rule == "R1" && d.element == "dpa"), "{errors:?}");
    }

    #[test]
    fn group_without_its_ca_violates_r2() {
        let graph = dpg_fixture(DpgFixture {
            drop_ca: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        assert!(errors.iter().any(|d| d.rule == "R2"), "{errors:?}");
    }

    #[test]
    fn missing_control_edge_violates_r3() {
        let graph = dpg_fixture(DpgFixture {
            drop_dpa_control_edge: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        assert!(
            errors.iter().any(|d| d.rule == "R3" && d.element == "dpa"),
            "{errors:?}"
        );
    }

    #[test]
    fn boundary_edge_into_a_dpa_violates_r4() {
        let graph = dpg_fixture(DpgFixture {
            source_feeds_dpa: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        assert!(errors.iter().any(|d| d.rule == "R4"), "{errors:?}");
    }

    #[test]
    fn mismatched_rate_ranges_violate_r5() {
        let graph = dpg_fixture(DpgFixture {
            narrow_dpa_input: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        let r5 = errors.iter().find(|d| d.rule == "R5").expect("R5 reported");
        assert!(r5.message.contains("symmetric rate ranges violated on edge"));
    }

    #[test]
    fn undersized_fifo_is_reported() {
        let graph = dpg_fixture(DpgFixture {
            undersize_inner_capacity: true,
            ..DpgFixture::default()
        })
        .build();
        let errors = errors_for(&graph);
        assert!(errors.iter().any(|d| d.rule == "CAP"), "{errors:?}");
    }
}
