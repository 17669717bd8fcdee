//! Run statistics: what each actor and edge did, and per-frame timing at
//! the endpoint device.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fifo::EdgeCounters;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub firings: u64,
    /// Time spent inside the kernel, excluding blocking on edges.
    pub busy_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<serde_json::Value>,
}

impl ActorStats {
    pub fn busy_ms_per_firing(&self) -> f64 {
        if self.firings == 0 {
            0.0
        } else {
            self.busy_ns as f64 / self.firings as f64 / 1e6
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    #[serde(flatten)]
    pub counters: EdgeCounters,
    pub capacity: u32,
    pub initial_tokens: u64,
}

/// Timestamps for one frame, in nanoseconds from run start. A frame counts
/// as handled by this device once its last byte is committed to every
/// outgoing cut edge, or once the local terminal actor finishes it when
/// nothing crosses the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStat {
    pub frame: u64,
    pub acquired_ns: u64,
    pub committed_ns: u64,
    /// Time from acquisition until the latency-feedback token for this
    /// frame arrived back at the source. Absent without feedback wiring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roundtrip_ns: Option<u64>,
}

impl FrameStat {
    pub fn endpoint_ms(&self) -> f64 {
        (self.committed_ns.saturating_sub(self.acquired_ns)) as f64 / 1e6
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub device: String,
    pub frames_processed: u64,
    pub elapsed_ms: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    pub actors: BTreeMap<String, ActorStats>,
    pub edges: BTreeMap<String, EdgeStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameStat>,
}

impl RunStats {
    pub fn new(device: &str) -> RunStats {
        RunStats { device: device.to_string(), ..RunStats::default() }
    }

    pub fn endpoint_times_ms(&self) -> Vec<f64> {
        self.frames.iter().map(FrameStat::endpoint_ms).collect()
    }

    pub fn roundtrip_times_ms(&self) -> Vec<f64> {
        self.frames
            .iter()
            .filter_map(|f| f.roundtrip_ns.map(|ns| ns as f64 / 1e6))
            .collect()
    }

    /// The report the named actor's kernel left behind, if any.
    pub fn actor_report(&self, actor: &str) -> Option<&serde_json::Value> {
        self.actors.get(actor).and_then(|a| a.report.as_ref())
    }
}

/// Statistics of a multi-process run, one section per device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergedStats {
    pub failed: bool,
    pub frames_processed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    pub devices: BTreeMap<String, RunStats>,
}

impl MergedStats {
    pub fn merge(parts: Vec<RunStats>) -> MergedStats {
        let mut merged = MergedStats::default();
        for part in parts {
            merged.failed |= part.failed;
            merged.errors.extend(part.errors.iter().cloned());
            merged.frames_processed = merged.frames_processed.max(part.frames_processed);
            merged.devices.insert(part.device.clone(), part);
        }
        merged
    }

    /// The device section holding per-frame endpoint records.
    pub fn endpoint(&self) -> Option<&RunStats> {
        self.devices.values().find(|d| !d.frames.is_empty())
    }

    /// Searches every device for the named actor's kernel report.
    pub fn actor_report(&self, actor: &str) -> Option<&serde_json::Value> {
        self.devices.values().find_map(|d| d.actor_report(actor))
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    percentile(xs, 0.5)
}

pub fn p95(xs: &[f64]) -> f64 {
    percentile(xs, 0.95)
}

fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}
