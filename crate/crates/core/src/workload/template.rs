use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvocationMode {
    /// Waits for every earlier call of the parent before starting.
    Sequential,
    /// Runs alongside the adjacent parallel calls of the parent.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateEdge {
    pub parent: String,
    pub child: String,
    pub request_bytes: u64,
    pub response_bytes: u64,
    #[serde(default)]
    pub mode: InvocationMode,
}

impl TemplateEdge {
    pub fn new(parent: &str, child: &str, request_bytes: u64, response_bytes: u64, mode: InvocationMode) -> Self {
        TemplateEdge {
            parent: parent.into(),
            child: child.into(),
            request_bytes,
            response_bytes,
            mode,
        }
    }
}

/// Call tree of one request type: which services call which, with what
/// payloads, and how long each service computes per call.
///
/// A parent's calls run in stages. Each sequential edge is a stage of its
/// own; a run of adjacent parallel edges shares a stage. Stages execute in
/// listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallGraphTemplate {
    pub entry: String,
    #[serde(default)]
    pub edges: Vec<TemplateEdge>,
    /// Per-call processing time of each service, ms.
    pub processing_ms: BTreeMap<String, f64>,
}

impl CallGraphTemplate {
    pub fn single(service: &str, processing_ms: f64) -> Self {
        CallGraphTemplate {
            entry: service.into(),
            edges: Vec::new(),
            processing_ms: [(service.to_string(), processing_ms)].into_iter().collect(),
        }
    }

    /// Services in breadth-first order from the entry.
    pub fn services(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.entry.as_str()]);
        while let Some(s) = queue.pop_front() {
            if !seen.insert(s) {
                continue;
            }
            order.push(s);
            for e in self.edges.iter().filter(|e| e.parent == s) {
                queue.push_back(e.child.as_str());
            }
        }
        order
    }

    pub fn edge_set(&self) -> BTreeSet<(String, String)> {
        self.edges.iter().map(|e| (e.parent.clone(), e.child.clone())).collect()
    }

    /// Indices into `edges`, grouped into execution stages.
    pub fn stages_of(&self, parent: &str) -> Vec<Vec<usize>> {
        let mut stages: Vec<Vec<usize>> = Vec::new();
        let mut open_parallel = false;
        for (i, e) in self.edges.iter().enumerate().filter(|(_, e)| e.parent == parent) {
            match e.mode {
                InvocationMode::Sequential => {
                    stages.push(vec![i]);
                    open_parallel = false;
                }
                InvocationMode::Parallel if open_parallel => stages.last_mut().unwrap().push(i),
                InvocationMode::Parallel => {
                    stages.push(vec![i]);
                    open_parallel = true;
                }
            }
        }
        stages
    }

    pub fn processing(&self, service: &str) -> f64 {
        self.processing_ms.get(service).copied().unwrap_or(0.0)
    }

    /// Response time with a free network and idle servers.
    pub fn critical_path_ms(&self) -> f64 {
        fn walk(t: &CallGraphTemplate, s: &str) -> f64 {
            t.processing(s)
                + t.stages_of(s)
                    .iter()
                    .map(|stage| stage.iter().map(|&i| walk(t, &t.edges[i].child)).fold(0.0, f64::max))
                    .sum::<f64>()
        }
        walk(self, &self.entry)
    }

    pub fn validate(&self) -> Result<()> {
        let mut all: BTreeSet<&str> = BTreeSet::from([self.entry.as_str()]);
        for e in &self.edges {
            if e.parent == e.child {
                return Err(Error::validation(format!(
                    "template edge {} -> {} is a self-call",
                    e.parent, e.child
                )));
            }
            all.insert(&e.parent);
            all.insert(&e.child);
        }
        for s in &all {
            match self.processing_ms.get(*s) {
                None => {
                    return Err(Error::validation(format!("service `{s}` has no processing time")));
                }
                Some(p) if !(*p >= 0.0 && p.is_finite()) => {
                    return Err(Error::validation(format!(
                        "service `{s}` processing time {p} is invalid"
                    )));
                }
                _ => {}
            }
        }
        let reachable: BTreeSet<&str> = self.services().into_iter().collect();
        if let Some(orphan) = all.iter().find(|s| !reachable.contains(*s)) {
            return Err(Error::validation(format!(
                "service `{orphan}` is not reachable from entry `{}`",
                self.entry
            )));
        }
        // cycle check: repeatedly strip nodes with no incoming edges
        let mut indeg: BTreeMap<&str, usize> = all.iter().map(|s| (*s, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(e.child.as_str()).unwrap() += 1;
        }
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(s, _)| *s).collect();
        let mut removed = 0;
        while let Some(s) = ready.pop() {
            removed += 1;
            for e in self.edges.iter().filter(|e| e.parent == s) {
                let d = indeg.get_mut(e.child.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(&e.child);
                }
            }
        }
        if removed != all.len() {
            return Err(Error::validation(format!(
                "template rooted at `{}` contains a cycle",
                self.entry
            )));
        }
        Ok(())
    }
}

use InvocationMode::{Parallel, Sequential};

fn template(
    entry: &str,
    edges: &[(&str, &str, u64, u64, InvocationMode)],
    processing: &[(&str, f64)],
) -> CallGraphTemplate {
    CallGraphTemplate {
        entry: entry.into(),
        edges: edges
            .iter()
            .map(|&(p, c, rq, rs, m)| TemplateEdge::new(p, c, rq, rs, m))
            .collect(),
        processing_ms: processing.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
    }
}

/// Default per-call processing times (ms) of the social-network services.
const PROCESSING: &[(&str, f64)] = &[
    ("nginx-thrift", 1.0),
    ("compose-post-service", 2.0),
    ("text-service", 1.0),
    ("url-shorten-service", 1.0),
    ("url-shorten-mongodb", 2.0),
    ("user-mention-service", 1.0),
    ("user-memcached", 0.5),
    ("unique-id-service", 0.5),
    ("user-service", 1.0),
    ("user-mongodb", 2.0),
    ("media-service", 1.0),
    ("media-mongodb", 2.0),
    ("post-storage-service", 1.5),
    ("post-storage-memcached", 0.5),
    ("post-storage-mongodb", 2.5),
    ("user-timeline-service", 1.5),
    ("user-timeline-redis", 0.5),
    ("user-timeline-mongodb", 3.0),
    ("home-timeline-service", 1.5),
    ("home-timeline-redis", 0.5),
    ("social-graph-service", 1.0),
    ("social-graph-redis", 0.5),
];

fn processing_for(edges: &[(&str, &str, u64, u64, InvocationMode)], entry: &str) -> Vec<(&'static str, f64)> {
    PROCESSING
        .iter()
        .filter(|(s, _)| *s == entry || edges.iter().any(|e| e.0 == *s || e.1 == *s))
        .copied()
        .collect()
}

/// Write path: wide fan-out from the compose service. The user-timeline
/// storage write is ~62x heavier than the text-service call
/// (74 040 B vs 1 200 B per request).
pub fn compose_post() -> CallGraphTemplate {
    let edges = [
        ("nginx-thrift", "compose-post-service", 2_000, 200, Sequential),
        ("compose-post-service", "unique-id-service", 100, 100, Parallel),
        ("compose-post-service", "text-service", 1_000, 200, Parallel),
        ("compose-post-service", "user-service", 100, 300, Parallel),
        ("compose-post-service", "media-service", 500, 100, Parallel),
        ("text-service", "url-shorten-service", 300, 300, Parallel),
        ("text-service", "user-mention-service", 300, 300, Parallel),
        ("url-shorten-service", "url-shorten-mongodb", 300, 100, Sequential),
        ("user-mention-service", "user-memcached", 100, 300, Sequential),
        ("user-service", "user-mongodb", 100, 400, Sequential),
        ("media-service", "media-mongodb", 500, 100, Sequential),
        ("compose-post-service", "post-storage-service", 2_000, 100, Sequential),
        ("post-storage-service", "post-storage-mongodb", 2_000, 100, Sequential),
        ("compose-post-service", "user-timeline-service", 300, 100, Parallel),
        ("compose-post-service", "home-timeline-service", 300, 100, Parallel),
        (
            "user-timeline-service",
            "user-timeline-mongodb",
            70_000,
            4_040,
            Sequential,
        ),
        ("user-timeline-service", "user-timeline-redis", 300, 100, Sequential),
        ("home-timeline-service", "social-graph-service", 200, 1_000, Sequential),
        ("social-graph-service", "social-graph-redis", 100, 1_000, Sequential),
        ("home-timeline-service", "home-timeline-redis", 500, 100, Sequential),
    ];
    template("nginx-thrift", &edges, &processing_for(&edges, "nginx-thrift"))
}

/// Short read path: timeline cache, then post bodies.
pub fn read_home_timeline() -> CallGraphTemplate {
    let edges = [
        ("nginx-thrift", "home-timeline-service", 200, 2_000, Sequential),
        ("home-timeline-service", "home-timeline-redis", 200, 1_000, Sequential),
        ("home-timeline-service", "post-storage-service", 300, 4_000, Sequential),
        ("post-storage-service", "post-storage-memcached", 200, 4_000, Parallel),
        ("post-storage-service", "post-storage-mongodb", 200, 4_000, Parallel),
    ];
    template("nginx-thrift", &edges, &processing_for(&edges, "nginx-thrift"))
}

/// Deeper read path whose timeline store returns bulky documents.
pub fn read_user_timeline() -> CallGraphTemplate {
    let edges = [
        ("nginx-thrift", "user-timeline-service", 200, 2_000, Sequential),
        ("user-timeline-service", "user-timeline-redis", 200, 1_000, Sequential),
        (
            "user-timeline-service",
            "user-timeline-mongodb",
            300,
            4_000_000,
            Sequential,
        ),
        ("user-timeline-service", "post-storage-service", 300, 4_000, Sequential),
        ("post-storage-service", "post-storage-memcached", 200, 4_000, Parallel),
        ("post-storage-service", "post-storage-mongodb", 200, 4_000, Parallel),
    ];
    template("nginx-thrift", &edges, &processing_for(&edges, "nginx-thrift"))
}

pub fn builtin_templates() -> BTreeMap<String, CallGraphTemplate> {
    [
        ("compose-post", compose_post()),
        ("read-home-timeline", read_home_timeline()),
        ("read-user-timeline", read_user_timeline()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Mix aliases usable in place of a request-type name.
pub fn builtin_mix_alias(name: &str) -> Option<Vec<(&'static str, f64)>> {
    match name {
        "mixed" => Some(vec![
            ("read-home-timeline", 0.6),
            ("read-user-timeline", 0.3),
            ("compose-post", 0.1),
        ]),
        _ => None,
    }
}
