#![allow(dead_code)]

use std::collections::BTreeMap;

use idyn_core::cluster::{uniform_nodes, ClusterState, NodeId, Placement, PodInfo, ReplicaId};
use idyn_core::net::{BandwidthMatrix, DelayMatrix};
use idyn_core::workload::{CallGraphTemplate, InvocationMode, RequestEvent, TemplateEdge};

/// Cluster of `delays.len()` roomy nodes with one replica per `(service, node)`
/// entry; repeated services get successive ordinals.
pub fn cluster(delays: Vec<Vec<u64>>, placement: &[(&str, usize)]) -> ClusterState {
    let n = delays.len();
    let mut p = Placement::new();
    let mut pods = Vec::new();
    let mut ordinals: BTreeMap<&str, u32> = BTreeMap::new();
    for (svc, node) in placement {
        let ord = ordinals.entry(svc).or_insert(0);
        p.assign(ReplicaId::new(*svc, *ord), NodeId(*node));
        pods.push(PodInfo::new(*svc, *ord, 100, 128));
        *ord += 1;
    }
    ClusterState::new(
        uniform_nodes(n, 64_000, 262_144),
        DelayMatrix::from_values(delays).unwrap(),
        BandwidthMatrix::unlimited(n),
        p,
        pods,
    )
    .unwrap()
}

pub fn zeros(n: usize) -> Vec<Vec<u64>> {
    vec![vec![0; n]; n]
}

/// `A -> B -> C`, sequential, `ms` processing each.
pub fn chain(ms: f64, req: u64, resp: u64) -> CallGraphTemplate {
    CallGraphTemplate {
        entry: "A".into(),
        edges: vec![
            TemplateEdge::new("A", "B", req, resp, InvocationMode::Sequential),
            TemplateEdge::new("B", "C", req, resp, InvocationMode::Sequential),
        ],
        processing_ms: [("A", ms), ("B", ms), ("C", ms)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    }
}

pub fn templates(items: &[(&str, CallGraphTemplate)]) -> BTreeMap<String, CallGraphTemplate> {
    items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn arrivals(ty: &str, times: &[f64]) -> Vec<RequestEvent> {
    times
        .iter()
        .enumerate()
        .map(|(i, t)| RequestEvent {
            arrival_time: *t,
            request_type: ty.into(),
            id: i as u64,
        })
        .collect()
}

/// Places every service of `templates` on node 0.
pub fn all_on_zero<'a>(templates: impl IntoIterator<Item = &'a CallGraphTemplate>) -> Vec<(String, usize)> {
    let mut seen = std::collections::BTreeSet::new();
    for t in templates {
        for s in t.services() {
            seen.insert(s.to_string());
        }
    }
    seen.into_iter().map(|s| (s, 0)).collect()
}
