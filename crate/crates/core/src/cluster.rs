//! Nodes, replicas, placements and capacity accounting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{BandwidthMatrix, DelayMatrix};

/// Dense node index `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Cloud,
    #[default]
    Edge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub name: String,
    /// Millicores.
    pub cpu_capacity: u64,
    /// MiB.
    pub mem_capacity: u64,
    pub role: NodeRole,
}

/// One placeable unit: a service replica.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaId {
    pub service: String,
    pub ordinal: u32,
}

impl ReplicaId {
    pub fn new(service: impl Into<String>, ordinal: u32) -> Self {
        ReplicaId {
            service: service.into(),
            ordinal,
        }
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.service, self.ordinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlaMetric {
    Avg,
    P99,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PodSla {
    pub metric: SlaMetric,
    pub threshold_ms: f64,
    #[serde(default)]
    pub throughput_rps: Option<f64>,
}

/// Scheduling view of one replica: resource requests/limits and SLA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodInfo {
    pub service: String,
    pub replica: u32,
    pub cpu_request: u64,
    pub cpu_limit: u64,
    pub mem_request: u64,
    pub mem_limit: u64,
    #[serde(default)]
    pub sla: Option<PodSla>,
}

impl PodInfo {
    pub fn new(service: impl Into<String>, replica: u32, cpu_m: u64, mem_mib: u64) -> Self {
        PodInfo {
            service: service.into(),
            replica,
            cpu_request: cpu_m,
            cpu_limit: cpu_m,
            mem_request: mem_mib,
            mem_limit: mem_mib,
            sla: None,
        }
    }

    pub fn replica_id(&self) -> ReplicaId {
        ReplicaId::new(self.service.clone(), self.replica)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cpu_request > self.cpu_limit || self.mem_request > self.mem_limit {
            return Err(Error::validation(format!(
                "pod {}: request exceeds limit",
                self.replica_id()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Placement {
    pub assignments: BTreeMap<ReplicaId, NodeId>,
}

impl Placement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, replica: ReplicaId, node: NodeId) -> Option<NodeId> {
        self.assignments.insert(replica, node)
    }

    pub fn node_of(&self, replica: &ReplicaId) -> Option<NodeId> {
        self.assignments.get(replica).copied()
    }

    /// Replicas of `service`, by ordinal.
    pub fn replicas_of<'a>(&'a self, service: &'a str) -> impl Iterator<Item = (&'a ReplicaId, NodeId)> + 'a {
        self.assignments
            .iter()
            .filter(move |(r, _)| r.service == service)
            .map(|(r, n)| (r, *n))
    }

    pub fn services(&self) -> BTreeSet<&str> {
        self.assignments.keys().map(|r| r.service.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

/// Resource requests indexed by replica, with a per-service fallback to
/// the lowest-ordinal entry.
#[derive(Debug, Clone, Default)]
pub struct PodIndex<'a> {
    exact: BTreeMap<(&'a str, u32), &'a PodInfo>,
    by_service: BTreeMap<&'a str, &'a PodInfo>,
}

impl<'a> PodIndex<'a> {
    pub fn new(pods: &'a [PodInfo]) -> Self {
        let mut idx = PodIndex::default();
        for p in pods {
            idx.exact.insert((p.service.as_str(), p.replica), p);
            idx.by_service
                .entry(p.service.as_str())
                .and_modify(|cur| {
                    if p.replica < cur.replica {
                        *cur = p;
                    }
                })
                .or_insert(p);
        }
        idx
    }

    pub fn get(&self, replica: &ReplicaId) -> Result<&'a PodInfo> {
        self.exact
            .get(&(replica.service.as_str(), replica.ordinal))
            .or_else(|| self.by_service.get(replica.service.as_str()))
            .copied()
            .ok_or_else(|| Error::unknown("service", replica.service.clone()))
    }
}

/// Per-node allocated CPU (millicores) and memory (MiB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityLedger {
    cpu_cap: Vec<u64>,
    mem_cap: Vec<u64>,
    cpu_used: Vec<u64>,
    mem_used: Vec<u64>,
}

impl CapacityLedger {
    pub fn new(nodes: &[NodeInfo]) -> Self {
        CapacityLedger {
            cpu_cap: nodes.iter().map(|n| n.cpu_capacity).collect(),
            mem_cap: nodes.iter().map(|n| n.mem_capacity).collect(),
            cpu_used: vec![0; nodes.len()],
            mem_used: vec![0; nodes.len()],
        }
    }

    /// Ledger of `placement`; node indices are checked, capacity is not.
    pub fn from_placement(nodes: &[NodeInfo], pods: &[PodInfo], placement: &Placement) -> Result<Self> {
        let idx = PodIndex::new(pods);
        let mut ledger = Self::new(nodes);
        for (replica, node) in &placement.assignments {
            if node.0 >= nodes.len() {
                return Err(Error::unknown("node", node.to_string()));
            }
            let pod = idx.get(replica)?;
            ledger.allocate(*node, pod);
        }
        Ok(ledger)
    }

    pub fn allocate(&mut self, node: NodeId, pod: &PodInfo) {
        self.cpu_used[node.0] += pod.cpu_request;
        self.mem_used[node.0] += pod.mem_request;
    }

    pub fn deallocate(&mut self, node: NodeId, pod: &PodInfo) {
        self.cpu_used[node.0] -= pod.cpu_request;
        self.mem_used[node.0] -= pod.mem_request;
    }

    pub fn fits(&self, node: NodeId, pod: &PodInfo) -> bool {
        self.cpu_used[node.0] + pod.cpu_request <= self.cpu_cap[node.0]
            && self.mem_used[node.0] + pod.mem_request <= self.mem_cap[node.0]
    }

    pub fn free_cpu(&self, node: NodeId) -> i64 {
        self.cpu_cap[node.0] as i64 - self.cpu_used[node.0] as i64
    }

    pub fn free_mem(&self, node: NodeId) -> i64 {
        self.mem_cap[node.0] as i64 - self.mem_used[node.0] as i64
    }

    pub fn overloaded(&self) -> Vec<NodeId> {
        (0..self.cpu_cap.len())
            .filter(|&i| self.cpu_used[i] > self.cpu_cap[i] || self.mem_used[i] > self.mem_cap[i])
            .map(NodeId)
            .collect()
    }
}

/// True iff every node's summed CPU and memory requests fit its capacity.
pub fn feasible(placement: &Placement, nodes: &[NodeInfo], pods: &[PodInfo]) -> Result<bool> {
    Ok(CapacityLedger::from_placement(nodes, pods, placement)?
        .overloaded()
        .is_empty())
}

/// One proposed replica move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingDecision {
    pub replica: ReplicaId,
    pub target: NodeId,
    pub reason: String,
    /// Simulated seconds.
    pub issued_at: f64,
    /// Stress (bytes/s) of the dependency that motivated the move; used to
    /// rank decisions when the queue is truncated.
    #[serde(default)]
    pub relevance: f64,
}

impl SchedulingDecision {
    pub fn new(replica: ReplicaId, target: NodeId, reason: impl Into<String>) -> Self {
        SchedulingDecision {
            replica,
            target,
            reason: reason.into(),
            issued_at: 0.0,
            relevance: 0.0,
        }
    }
}

/// Immutable snapshot of the cluster: nodes, network and placement.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub nodes: Vec<NodeInfo>,
    pub delays: DelayMatrix,
    pub bandwidths: BandwidthMatrix,
    pub placement: Placement,
    pub pods: Vec<PodInfo>,
}

impl ClusterState {
    pub fn new(
        nodes: Vec<NodeInfo>,
        delays: DelayMatrix,
        bandwidths: BandwidthMatrix,
        placement: Placement,
        pods: Vec<PodInfo>,
    ) -> Result<Self> {
        let state = ClusterState {
            nodes,
            delays,
            bandwidths,
            placement,
            pods,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::EmptyCluster);
        }
        let mut names = BTreeSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(Error::validation(format!(
                    "node `{}` has index {} at position {i}",
                    node.name, node.id.0
                )));
            }
            if node.cpu_capacity == 0 || node.mem_capacity == 0 {
                return Err(Error::validation(format!("node `{}` has zero capacity", node.name)));
            }
            if !names.insert(node.name.as_str()) {
                return Err(Error::validation(format!("duplicate node name `{}`", node.name)));
            }
        }
        if self.delays.n != n || self.bandwidths.n != n {
            return Err(Error::Shape(format!(
                "{n} nodes but delay matrix is {}x{} and bandwidth matrix {}x{}",
                self.delays.n, self.delays.n, self.bandwidths.n, self.bandwidths.n
            )));
        }
        for p in &self.pods {
            p.validate()?;
        }
        let ledger = CapacityLedger::from_placement(&self.nodes, &self.pods, &self.placement)?;
        let over = ledger.overloaded();
        if !over.is_empty() {
            return Err(Error::Infeasible {
                nodes: over.iter().map(|n| self.nodes[n.0].name.clone()).collect(),
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn ledger(&self) -> CapacityLedger {
        CapacityLedger::from_placement(&self.nodes, &self.pods, &self.placement).expect("validated cluster state")
    }

    pub fn with_network(&self, delays: DelayMatrix, bandwidths: BandwidthMatrix) -> Result<Self> {
        ClusterState::new(
            self.nodes.clone(),
            delays,
            bandwidths,
            self.placement.clone(),
            self.pods.clone(),
        )
    }

    pub fn with_placement(&self, placement: Placement) -> Result<Self> {
        ClusterState::new(
            self.nodes.clone(),
            self.delays.clone(),
            self.bandwidths.clone(),
            placement,
            self.pods.clone(),
        )
    }

    /// Applies every move or none of them.
    pub fn apply_decisions(&self, decisions: &[SchedulingDecision]) -> Result<ClusterState> {
        let mut placement = self.placement.clone();
        for d in decisions {
            if d.target.0 >= self.nodes.len() {
                return Err(Error::unknown("node", d.target.to_string()));
            }
            match placement.assignments.get_mut(&d.replica) {
                Some(node) => *node = d.target,
                None => return Err(Error::unknown("replica", d.replica.to_string())),
            }
        }
        let ledger = CapacityLedger::from_placement(&self.nodes, &self.pods, &placement)?;
        let over = ledger.overloaded();
        if !over.is_empty() {
            return Err(Error::Infeasible {
                nodes: over.iter().map(|n| self.nodes[n.0].name.clone()).collect(),
            });
        }
        Ok(ClusterState {
            placement,
            ..self.clone()
        })
    }
}

/// Capacity-aware round-robin: replicas in the given order go to the next
/// node (cyclically) that still has room.
pub fn spread_placement(nodes: &[NodeInfo], pods: &[PodInfo]) -> Result<Placement> {
    if nodes.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut ledger = CapacityLedger::new(nodes);
    let mut placement = Placement::new();
    let mut cursor = 0usize;
    for pod in pods {
        let target = (0..nodes.len())
            .map(|k| NodeId((cursor + k) % nodes.len()))
            .find(|&n| ledger.fits(n, pod))
            .ok_or_else(|| Error::Infeasible {
                nodes: vec![format!("no node can host {}", pod.replica_id())],
            })?;
        ledger.allocate(target, pod);
        placement.assign(pod.replica_id(), target);
        cursor = target.0 + 1;
    }
    Ok(placement)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeRecord {
    name: String,
    cpu_m: u64,
    mem_mib: u64,
    #[serde(default)]
    role: NodeRole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterFile {
    nodes: Vec<NodeRecord>,
}

/// Parses `{"nodes":[{"name":..,"cpu_m":..,"mem_mib":..,"role":..}]}`.
pub fn parse_cluster_file(text: &str) -> Result<Vec<NodeInfo>> {
    let file: ClusterFile = serde_json::from_str(text)?;
    nodes_from_records(file.nodes)
}

pub fn cluster_from_value(value: &serde_json::Value) -> Result<Vec<NodeInfo>> {
    let file: ClusterFile = serde_json::from_value(value.clone())?;
    nodes_from_records(file.nodes)
}

fn nodes_from_records(records: Vec<NodeRecord>) -> Result<Vec<NodeInfo>> {
    if records.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut seen = BTreeSet::new();
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.cpu_m == 0 || r.mem_mib == 0 {
                return Err(Error::validation(format!(
                    "nodes[{i}] `{}`: capacities must be > 0",
                    r.name
                )));
            }
            if !seen.insert(r.name.clone()) {
                return Err(Error::validation(format!("nodes[{i}]: duplicate name `{}`", r.name)));
            }
            Ok(NodeInfo {
                id: NodeId(i),
                name: r.name,
                cpu_capacity: r.cpu_m,
                mem_capacity: r.mem_mib,
                role: r.role,
            })
        })
        .collect()
}

pub fn cluster_file_json(nodes: &[NodeInfo]) -> Result<String> {
    let file = ClusterFile {
        nodes: nodes
            .iter()
            .map(|n| NodeRecord {
                name: n.name.clone(),
                cpu_m: n.cpu_capacity,
                mem_mib: n.mem_capacity,
                role: n.role,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// `count` identical worker nodes named `k8s-worker-1..`.
pub fn uniform_nodes(count: usize, cpu_m: u64, mem_mib: u64) -> Vec<NodeInfo> {
    (0..count)
        .map(|i| NodeInfo {
            id: NodeId(i),
            name: format!("k8s-worker-{}", i + 1),
            cpu_capacity: cpu_m,
            mem_capacity: mem_mib,
            role: NodeRole::Edge,
        })
        .collect()
}
