//! Stress elements and the stress-weighted call-graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TrafficSample;
use crate::error::{Error, Result};

/// A caller/callee pair annotated with its averaged bidirectional traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressElement {
    pub um: String,
    pub dm: String,
    /// Bytes per second.
    pub stress: f64,
    /// Seconds actually spanned by the two samples used.
    pub window: f64,
}

fn ts_le(a: f64, b: f64) -> bool {
    a <= b + 1e-9 * b.abs().max(1.0)
}

/// Stress of `um -> dm` over the window ending at the stream's latest
/// sample: `(delta_sent + delta_received) / (2 * dt)`.
///
/// Only the latest monotone counter segment is considered, so a counter
/// reset restarts the stream. The baseline is the newest sample at or
/// before `latest - window`; if the segment does not reach that far back
/// the window is partial and rejected.
pub fn stress(um: &str, dm: &str, samples: &[TrafficSample], window: f64) -> Result<StressElement> {
    let mut stream: Vec<&TrafficSample> = samples
        .iter()
        .filter(|s| s.source_ms == um && s.dest_ms == dm)
        .collect();
    stream_stress(um, dm, &mut stream, window)
}

fn insufficient(um: &str, dm: &str, reason: impl Into<String>) -> Error {
    Error::InsufficientData {
        um: um.to_string(),
        dm: dm.to_string(),
        reason: reason.into(),
    }
}

fn stream_stress(um: &str, dm: &str, stream: &mut Vec<&TrafficSample>, window: f64) -> Result<StressElement> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::validation(format!("window must be > 0, got {window}")));
    }
    stream.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    if stream.len() < 2 {
        return Err(insufficient(um, dm, format!("{} sample(s), need 2", stream.len())));
    }
    let seg_start = stream
        .windows(2)
        .rposition(|w| {
            w[1].sent_bytes_total < w[0].sent_bytes_total || w[1].received_bytes_total < w[0].received_bytes_total
        })
        .map(|i| i + 1)
        .unwrap_or(0);
    let segment = &stream[seg_start..];
    if segment.len() < 2 {
        return Err(insufficient(um, dm, "counter reset leaves fewer than 2 samples"));
    }
    let latest = segment[segment.len() - 1];
    let start = latest.timestamp - window;
    let baseline = segment[..segment.len() - 1]
        .iter()
        .rev()
        .find(|s| ts_le(s.timestamp, start))
        .ok_or_else(|| insufficient(um, dm, format!("samples do not cover a {window}s window")))?;
    let span = latest.timestamp - baseline.timestamp;
    let traffic = (latest.sent_bytes_total - baseline.sent_bytes_total)
        + (latest.received_bytes_total - baseline.received_bytes_total);
    Ok(StressElement {
        um: um.to_string(),
        dm: dm.to_string(),
        stress: traffic / (2.0 * span),
        window: span,
    })
}

/// Directed caller -> callee graph with stress weights (bytes/s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<(String, String), f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    um: String,
    dm: String,
    stress_bps: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    nodes: Vec<String>,
    edges: Vec<EdgeRecord>,
}

impl CallGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>) {
        self.nodes.insert(name.into());
    }

    /// Inserts an edge, adding its endpoints. Self-edges and non-positive
    /// weights are rejected.
    pub fn add_edge(&mut self, um: &str, dm: &str, stress: f64) -> Result<()> {
        if um == dm {
            return Err(Error::validation(format!("self-edge on `{um}`")));
        }
        if !(stress > 0.0 && stress.is_finite()) {
            return Err(Error::validation(format!("edge {um} -> {dm} has weight {stress}")));
        }
        self.nodes.insert(um.to_string());
        self.nodes.insert(dm.to_string());
        self.edges.insert((um.to_string(), dm.to_string()), stress);
        Ok(())
    }

    pub fn weight(&self, um: &str, dm: &str) -> Option<f64> {
        self.edges.get(&(um.to_string(), dm.to_string())).copied()
    }

    /// Edges by descending stress, ties by (um, dm).
    pub fn edges_by_stress(&self) -> Vec<(&str, &str, f64)> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .map(|((u, d), w)| (u.as_str(), d.as_str(), *w))
            .collect();
        v.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| (a.0, a.1).cmp(&(b.0, b.1))));
        v
    }

    /// Sum of incident edge stress per node.
    pub fn incident_stress(&self) -> BTreeMap<&str, f64> {
        let mut out: BTreeMap<&str, f64> = self.nodes.iter().map(|n| (n.as_str(), 0.0)).collect();
        for ((u, d), w) in &self.edges {
            *out.entry(u.as_str()).or_default() += w;
            *out.entry(d.as_str()).or_default() += w;
        }
        out
    }

    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges.keys().cloned().collect()
    }

    pub fn scaled(&self, k: f64) -> CallGraph {
        CallGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|(e, w)| (e.clone(), w * k)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = GraphRecord {
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|((u, d), w)| EdgeRecord {
                    um: u.clone(),
                    dm: d.clone(),
                    stress_bps: *w,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: GraphRecord = serde_json::from_str(text)?;
        let mut g = CallGraph::new();
        for n in rec.nodes {
            g.add_node(n);
        }
        for e in rec.edges {
            g.add_edge(&e.um, &e.dm, e.stress_bps)?;
        }
        Ok(g)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph callgraph {\n  rankdir=LR;\n");
        for n in &self.nodes {
            writeln!(out, "  \"{n}\";").unwrap();
        }
        for ((u, d), w) in &self.edges {
            writeln!(out, "  \"{u}\" -> \"{d}\" [label=\"{w:.1} B/s\"];").unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the call-graph of every service seen in `samples` (restricted to
/// `namespace` when given). Each ordered pair with positive stress over
/// `window` becomes an edge; pairs without enough data contribute none.
pub fn build_call_graph(namespace: Option<&str>, samples: &[TrafficSample], window: f64) -> Result<CallGraph> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::validation(format!("window must be > 0, got {window}")));
    }
    let in_ns = |s: &&TrafficSample| match (namespace, s.namespace.as_deref()) {
        (Some(want), Some(have)) => want == have,
        _ => true,
    };
    let mut graph = CallGraph::new();
    let mut streams: BTreeMap<(&str, &str), Vec<&TrafficSample>> = BTreeMap::new();
    for s in samples.iter().filter(in_ns) {
        graph.add_node(s.source_ms.clone());
        graph.add_node(s.dest_ms.clone());
        if s.source_ms != s.dest_ms {
            streams.entry((&s.source_ms, &s.dest_ms)).or_default().push(s);
        }
    }
    for ((um, dm), mut stream) in streams {
        if let Ok(se) = stream_stress(um, dm, &mut stream, window) {
            if se.stress > 0.0 && se.stress.is_finite() {
                graph.add_edge(um, dm, se.stress)?;
            }
        }
    }
    Ok(graph)
}

/// As [`build_call_graph`], with the node set seeded from `services` so
/// idle services appear as isolated nodes.
pub fn build_call_graph_over<'a>(
    services: impl IntoIterator<Item = &'a str>,
    samples: &[TrafficSample],
    window: f64,
) -> Result<CallGraph> {
    let mut g = build_call_graph(None, samples, window)?;
    for s in services {
        g.add_node(s);
    }
    Ok(g)
}
