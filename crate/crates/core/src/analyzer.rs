//! Consistency analysis: structural rules, capacity checks and an abstract
//! token-count simulation that proves one graph iteration can always
//! complete, whatever rates the control actors pick.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::diag::{Diagnostic, Severity};
use crate::model::{ApplicationGraph, EdgeSpec, GraphError};
use crate::rng::Rng;
use crate::rules;

/// Active token rates for one simulated iteration, keyed by edge id.
/// Static edges and control edges need no entry; dynamic edges missing from
/// the map default to their lower rate limit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateAssignment {
    pub rates: BTreeMap<String, u32>,
}

impl RateAssignment {
    pub fn single(edge: &str, atr: u32) -> Self {
        let mut rates = BTreeMap::new();
        rates.insert(edge.to_string(), atr);
        RateAssignment { rates }
    }

    /// Resolves the active rate of an edge under this assignment.
    pub fn atr(&self, graph: &ApplicationGraph, edge: &EdgeSpec) -> u32 {
        if edge.control {
            return 1;
        }
        let (lrl, _) = graph.edge_rate_range(edge);
        self.rates.get(&edge.id).copied().unwrap_or(lrl)
    }

    fn validate(&self, graph: &ApplicationGraph) -> Result<(), GraphError> {
        for (edge_id, &atr) in &self.rates {
            let edge = graph.edge(edge_id).ok_or_else(|| {
                GraphError::invariant("ATR", edge_id, "rate assigned to unknown edge")
            })?;
            if edge.control && atr != 1 {
                return Err(GraphError::invariant(
                    "ATR",
                    edge_id,
                    "control edges always run at one token per firing",
                ));
            }
            let (lrl, url) = graph.edge_rate_range(edge);
            if atr < lrl || atr > url {
                return Err(GraphError::invariant(
                    "ATR",
                    edge_id,
                    format!("rate {atr} outside the declared range ({lrl}, {url})"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "lowercase")]
pub enum ScheduleOutcome {
    /// Every actor fired exactly once; the order is the deterministic
    /// lexicographic schedule.
    Completes { firing_order: Vec<String> },
    /// No unfired actor could fire. Carries the blocked state.
    Deadlock {
        fired: Vec<String>,
        blocked: Vec<String>,
        tokens: BTreeMap<String, u32>,
    },
}

/// Abstractly executes one graph iteration under the given rates.
///
/// An actor is enabled when every input edge holds at least its active rate
/// in tokens and every output edge has at least that many free slots.
/// Among enabled actors that have not fired yet, the lexicographically
/// smallest id fires, so the schedule is deterministic. Symmetric rate
/// ranges make the repetition vector all ones, hence "every actor fires
/// exactly once" is the completion condition.
pub fn simulate_schedule(
    graph: &ApplicationGraph,
    rates: &RateAssignment,
) -> Result<ScheduleOutcome, GraphError> {
    rates.validate(graph)?;

    let atr: HashMap<&str, u32> = graph
        .edges
        .iter()
        .map(|e| (e.id.as_str(), rates.atr(graph, e)))
        .collect();
    let mut tokens: BTreeMap<&str, u32> = graph
        .edges
        .iter()
        .map(|e| (e.id.as_str(), e.initial_tokens))
        .collect();

    let mut inputs: HashMap<&str, Vec<&EdgeSpec>> = HashMap::new();
    let mut outputs: HashMap<&str, Vec<&EdgeSpec>> = HashMap::new();
    for edge in &graph.edges {
        outputs.entry(edge.producer.0.as_str()).or_default().push(edge);
        inputs.entry(edge.consumer.0.as_str()).or_default().push(edge);
    }

    let mut order: Vec<&str> = graph.actors.iter().map(|a| a.id.as_str()).collect();
    order.sort_unstable();

    let enabled = |actor: &str, tokens: &BTreeMap<&str, u32>| -> bool {
        let ins = inputs.get(actor).map_or(&[][..], |v| v);
        let outs = outputs.get(actor).map_or(&[][..], |v| v);
        ins.iter().all(|e| tokens[e.id.as_str()] >= atr[e.id.as_str()])
            && outs
                .iter()
                .all(|e| e.capacity - tokens[e.id.as_str()] >= atr[e.id.as_str()])
    };

    let mut fired: Vec<String> = Vec::with_capacity(order.len());
    let mut done = vec![false; order.len()];

    loop {
        let next = (0..order.len()).find(|&i| !done[i] && enabled(order[i], &tokens));
        match next {
            Some(i) => {
                let actor = order[i];
                for e in inputs.get(actor).map_or(&[][..], |v| v) {
                    *tokens.get_mut(e.id.as_str()).unwrap() -= atr[e.id.as_str()];
                }
                for e in outputs.get(actor).map_or(&[][..], |v| v) {
                    *tokens.get_mut(e.id.as_str()).unwrap() += atr[e.id.as_str()];
                }
                done[i] = true;
                fired.push(actor.to_string());
                if fired.len() == order.len() {
                    return Ok(ScheduleOutcome::Completes { firing_order: fired });
                }
            }
            None => {
                let blocked = (0..order.len())
                    .filter(|&i| !done[i])
                    .map(|i| order[i].to_string())
                    .collect();
                return Ok(ScheduleOutcome::Deadlock {
                    fired,
                    blocked,
                    tokens: tokens.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                });
            }
        }
    }
}

/// Structural design rule findings (R1 through R5).
pub fn check_structure(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    rules::structure_diagnostics(graph)
}

/// Buffer overflow findings: an edge whose capacity is below its upper rate
/// limit can never absorb a maximal-rate firing.
pub fn check_capacities(graph: &ApplicationGraph) -> Vec<Diagnostic> {
    rules::capacity_diagnostics(graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub verdict: Verdict,
    pub diagnostics: Vec<Diagnostic>,
    /// Number of rate assignments that were actually simulated.
    pub checked_assignments: u64,
}

impl AnalysisReport {
    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }

    fn from_diagnostics(diagnostics: Vec<Diagnostic>, checked_assignments: u64) -> Self {
        let verdict = if diagnostics.iter().any(|d| d.severity == Severity::Error) {
            Verdict::Inconsistent
        } else {
            Verdict::Consistent
        };
        AnalysisReport {
            verdict,
            diagnostics,
            checked_assignments,
        }
    }
}

/// How many assignments the exhaustive sweep may enumerate before the
/// analyzer falls back to corner-plus-random sampling.
const EXHAUSTIVE_LIMIT: u64 = 4096;
const RANDOM_SAMPLES: u64 = 1024;

/// Full consistency analysis: structure, capacities, then deadlock freedom
/// over the boundary rate assignments.
///
/// Each dynamic edge contributes the candidate rates lrl and url, plus an
/// explicit 0 when its range starts at zero. The candidate list is taken
/// literally, so a prunable edge with lrl = 0 has three entries and the
/// coinciding zero is simulated (and counted) again. The full cross-product
/// is simulated when it stays at or below 4096 assignments; beyond that the
/// all-lower, all-upper and all-zero corners plus 1024 seeded random
/// assignments are sampled. Structural errors short-circuit the later
/// stages, so a report about a malformed graph never mixes in spurious
/// deadlock findings.
pub fn analyze(graph: &ApplicationGraph) -> AnalysisReport {
    let mut diagnostics = check_structure(graph);
    diagnostics.extend(rules::hygiene_warnings(graph));
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return AnalysisReport::from_diagnostics(diagnostics, 0);
    }

    diagnostics.extend(check_capacities(graph));
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return AnalysisReport::from_diagnostics(diagnostics, 0);
    }

    let dynamic: Vec<(&str, u32, u32)> = graph
        .data_edges()
        .filter(|e| graph.edge_is_dynamic(e))
        .map(|e| {
            let (lrl, url) = graph.edge_rate_range(e);
            (e.id.as_str(), lrl, url)
        })
        .collect();

    let mut checked = 0u64;
    let mut failure: Option<(RateAssignment, ScheduleOutcome)> = None;
    let mut run = |assignment: RateAssignment| -> bool {
        checked += 1;
        match simulate_schedule(graph, &assignment).expect("enumerated rates are in range") {
            ScheduleOutcome::Completes { .. } => true,
            outcome @ ScheduleOutcome::Deadlock { .. } => {
                failure = Some((assignment, outcome));
                false
            }
        }
    };

    let candidates: Vec<Vec<u32>> = dynamic
        .iter()
        .map(|(_, lrl, url)| {
            let mut c = vec![*lrl, *url];
            if *lrl == 0 {
                c.push(0);
            }
            c
        })
        .collect();
    let combinations: u64 = candidates.iter().map(|c| c.len() as u64).product();

    'sweep: {
        if combinations <= EXHAUSTIVE_LIMIT {
            let mut picks = vec![0usize; dynamic.len()];
            loop {
                let assignment = RateAssignment {
                    rates: dynamic
                        .iter()
                        .enumerate()
                        .map(|(i, (id, _, _))| (id.to_string(), candidates[i][picks[i]]))
                        .collect(),
                };
                if !run(assignment) {
                    break 'sweep;
                }
                // Odometer over the per-edge candidate lists.
                let mut i = 0;
                loop {
                    if i == picks.len() {
                        break 'sweep;
                    }
                    picks[i] += 1;
                    if picks[i] < candidates[i].len() {
                        break;
                    }
                    picks[i] = 0;
                    i += 1;
                }
            }
        } else {
            let corner = |f: &dyn Fn(u32, u32) -> u32| RateAssignment {
                rates: dynamic
                    .iter()
                    .map(|(id, lrl, url)| (id.to_string(), f(*lrl, *url)))
                    .collect(),
            };
            let corners = [
                corner(&|lrl, _| lrl),
                corner(&|_, url| url),
                corner(&|lrl, url| 0u32.clamp(lrl, url)),
            ];
            for assignment in corners {
                if !run(assignment) {
                    break 'sweep;
                }
            }
            let mut rng = Rng::seeded(graph.graph_hash);
            for _ in 0..RANDOM_SAMPLES {
                let assignment = RateAssignment {
                    rates: dynamic
                        .iter()
                        .map(|(id, lrl, url)| (id.to_string(), rng.range_u32(*lrl, *url)))
                        .collect(),
                };
                if !run(assignment) {
                    break 'sweep;
                }
            }
        }
    }

    if let Some((assignment, ScheduleOutcome::Deadlock { fired, blocked, tokens })) = failure {
        let rates: Vec<String> = assignment
            .rates
            .iter()
            .map(|(e, r)| format!("{e}={r}"))
            .collect();
        diagnostics.push(Diagnostic::error(
            "DEADLOCK",
            blocked.first().cloned().unwrap_or_else(|| graph.name.clone()),
            format!(
                "iteration cannot complete under rates [{}]: fired {:?}, blocked {:?}, \
                 tokens left {:?}",
                rates.join(", "),
                fired,
                blocked,
                tokens
            ),
        ));
    }

    AnalysisReport::from_diagnostics(diagnostics, checked)
}
