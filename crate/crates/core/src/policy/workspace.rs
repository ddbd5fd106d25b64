use std::collections::BTreeMap;

use crate::cluster::{CapacityLedger, ClusterState, NodeId, PodIndex, PodInfo, ReplicaId, SchedulingDecision};
use crate::error::Result;

/// Mutable scratch copy of a placement that policies edit before emitting
/// decisions. Units are replicas, indexed in placement order.
#[derive(Debug, Clone)]
pub(crate) struct Workspace<'a> {
    pub cluster: &'a ClusterState,
    pub ids: Vec<ReplicaId>,
    pub pods: Vec<PodInfo>,
    pub node: Vec<usize>,
    original: Vec<usize>,
    movable: Vec<bool>,
    pinned: Vec<bool>,
    ledger: CapacityLedger,
    by_service: BTreeMap<String, Vec<usize>>,
    notes: Vec<Option<(String, f64)>>,
    order: Vec<usize>,
}

impl<'a> Workspace<'a> {
    /// Only replicas listed in `movable` may change node.
    pub fn new(cluster: &'a ClusterState, movable: &[PodInfo]) -> Result<Self> {
        let idx = PodIndex::new(&cluster.pods);
        let wanted: std::collections::BTreeSet<ReplicaId> = movable.iter().map(|p| p.replica_id()).collect();
        let mut ws = Workspace {
            cluster,
            ids: Vec::new(),
            pods: Vec::new(),
            node: Vec::new(),
            original: Vec::new(),
            movable: Vec::new(),
            pinned: Vec::new(),
            ledger: cluster.ledger(),
            by_service: BTreeMap::new(),
            notes: Vec::new(),
            order: Vec::new(),
        };
        for (id, node) in &cluster.placement.assignments {
            let u = ws.ids.len();
            ws.by_service.entry(id.service.clone()).or_default().push(u);
            ws.pods.push(idx.get(id)?.clone());
            ws.movable.push(wanted.contains(id));
            ws.ids.push(id.clone());
            ws.node.push(node.0);
            ws.original.push(node.0);
            ws.pinned.push(false);
            ws.notes.push(None);
        }
        Ok(ws)
    }

    pub fn n(&self) -> usize {
        self.cluster.n()
    }

    pub fn units_of(&self, service: &str) -> &[usize] {
        self.by_service.get(service).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn can_move(&self, u: usize) -> bool {
        self.movable[u] && !self.pinned[u]
    }

    pub fn pin(&mut self, u: usize) {
        self.pinned[u] = true;
    }

    pub fn rtt(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else {
            self.cluster.delays.round_trip(a, b) as f64
        }
    }

    /// Bandwidth in Mbit/s; unshaped pairs are infinite.
    pub fn bw(&self, a: usize, b: usize) -> f64 {
        self.cluster.bandwidths.get(a, b).unwrap_or(f64::INFINITY)
    }

    /// Applies all `(unit, node)` moves or none, keeping capacity feasible.
    pub fn try_moves(&mut self, moves: &[(usize, usize)], reason: &str, relevance: f64) -> bool {
        let moves: Vec<(usize, usize)> = moves.iter().copied().filter(|&(u, n)| self.node[u] != n).collect();
        if moves.iter().any(|&(u, _)| !self.can_move(u)) {
            return false;
        }
        for &(u, _) in &moves {
            self.ledger.deallocate(NodeId(self.node[u]), &self.pods[u]);
        }
        let mut placed = Vec::new();
        let mut ok = true;
        for &(u, n) in &moves {
            if self.ledger.fits(NodeId(n), &self.pods[u]) {
                self.ledger.allocate(NodeId(n), &self.pods[u]);
                placed.push((u, n));
            } else {
                ok = false;
                break;
            }
        }
        if !ok {
            for &(u, n) in &placed {
                self.ledger.deallocate(NodeId(n), &self.pods[u]);
            }
            for &(u, _) in &moves {
                self.ledger.allocate(NodeId(self.node[u]), &self.pods[u]);
            }
            return false;
        }
        for &(u, n) in &moves {
            self.node[u] = n;
            if self.notes[u].is_none() {
                self.order.push(u);
            }
            self.notes[u] = Some((reason.to_string(), relevance));
        }
        true
    }

    /// Whether `try_moves(moves)` would succeed, without applying it.
    pub fn check_moves(&self, moves: &[(usize, usize)]) -> bool {
        let moves: Vec<(usize, usize)> = moves.iter().copied().filter(|&(u, n)| self.node[u] != n).collect();
        if moves.iter().any(|&(u, _)| !self.can_move(u)) {
            return false;
        }
        let mut ledger = self.ledger.clone();
        for &(u, _) in &moves {
            ledger.deallocate(NodeId(self.node[u]), &self.pods[u]);
        }
        moves.iter().all(|&(u, n)| {
            let fits = ledger.fits(NodeId(n), &self.pods[u]);
            ledger.allocate(NodeId(n), &self.pods[u]);
            fits
        })
    }

    /// One decision per unit whose node changed, in first-move order.
    pub fn decisions(&self) -> Vec<SchedulingDecision> {
        self.order
            .iter()
            .filter(|&&u| self.node[u] != self.original[u])
            .map(|&u| {
                let (reason, relevance) = self.notes[u].clone().unwrap_or_default();
                let mut d = SchedulingDecision::new(self.ids[u].clone(), NodeId(self.node[u]), reason);
                d.relevance = relevance;
                d
            })
            .collect()
    }

    /// Unit pairs `(u_i, v_(i mod kv))` covering every replica of both.
    pub fn replica_pairs(&self, u: &str, v: &str) -> Vec<(usize, usize)> {
        let (us, vs) = (self.units_of(u), self.units_of(v));
        if us.is_empty() || vs.is_empty() {
            return Vec::new();
        }
        let k = us.len().max(vs.len());
        (0..k).map(|i| (us[i % us.len()], vs[i % vs.len()])).collect()
    }

    /// Mean round-trip time from `a` to every other node.
    pub fn mean_rtt(&self, a: usize) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        (0..n).filter(|&b| b != a).map(|b| self.rtt(a, b)).sum::<f64>() / (n - 1) as f64
    }

    /// Nodes by ascending mean round-trip time, ties by index.
    pub fn best_connected(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n()).collect();
        v.sort_by(|&a, &b| self.mean_rtt(a).total_cmp(&self.mean_rtt(b)).then(a.cmp(&b)));
        v
    }
}
