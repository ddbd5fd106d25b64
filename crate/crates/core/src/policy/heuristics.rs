//! Greedy placement heuristics driven by the stress-weighted call-graph.

use crate::cluster::{ClusterState, PodInfo, SchedulingDecision};
use crate::error::Result;
use crate::graph::CallGraph;
use crate::sim::nearest_rank;

use super::workspace::Workspace;

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_PERCENTILE: f64 = 0.9;

/// Heaviest edges first: co-locate each pair on the heavier endpoint's
/// node, else on the lighter endpoint's node, else on the best-connected
/// node that holds both. Endpoints are settled once co-located.
pub fn policy_callgraph_aware(
    graph: &CallGraph,
    cluster: &ClusterState,
    pods: &[PodInfo],
) -> Result<Vec<SchedulingDecision>> {
    let mut ws = Workspace::new(cluster, pods)?;
    let incident = graph.incident_stress();
    for (u, v, w) in graph.edges_by_stress() {
        if ws.units_of(u).is_empty() || ws.units_of(v).is_empty() {
            continue;
        }
        let (iu, iv) = (incident[u], incident[v]);
        let (anchor, mover) = if iu > iv || (iu == iv && u < v) { (u, v) } else { (v, u) };
        let a_units = ws.units_of(anchor).to_vec();
        let m_units = ws.units_of(mover).to_vec();
        let (ka, km) = (a_units.len(), m_units.len());
        let together = m_units
            .iter()
            .enumerate()
            .all(|(i, &m)| ws.node[m] == ws.node[a_units[i % ka]]);
        let reason = format!("callgraph: co-locate {u} -> {v} ({w:.0} B/s)");
        let settled = together || {
            let to_anchor: Vec<(usize, usize)> = m_units
                .iter()
                .enumerate()
                .map(|(i, &m)| (m, ws.node[a_units[i % ka]]))
                .collect();
            let to_mover: Vec<(usize, usize)> = a_units
                .iter()
                .enumerate()
                .map(|(j, &a)| (a, ws.node[m_units[j % km]]))
                .collect();
            ws.try_moves(&to_anchor, &reason, w)
                || ws.try_moves(&to_mover, &reason, w)
                || ws.best_connected().into_iter().any(|c| {
                    let all: Vec<(usize, usize)> = a_units.iter().chain(&m_units).map(|&x| (x, c)).collect();
                    ws.try_moves(&all, &reason, w)
                })
        };
        if settled {
            for &x in a_units.iter().chain(&m_units) {
                ws.pin(x);
            }
        }
    }
    Ok(ws.decisions())
}

fn allowed(ws: &Workspace<'_>, u: usize) -> Vec<usize> {
    if ws.can_move(u) {
        (0..ws.n()).collect()
    } else {
        vec![ws.node[u]]
    }
}

/// For each of the `top_k` heaviest edges, places every replica pair on
/// the node pair with the smallest round-trip delay that has room.
/// Co-location wins ties, then the current pair, then the lowest indices.
pub fn policy_latency_aware(
    graph: &CallGraph,
    cluster: &ClusterState,
    pods: &[PodInfo],
    top_k: usize,
) -> Result<Vec<SchedulingDecision>> {
    let mut ws = Workspace::new(cluster, pods)?;
    for (u, v, w) in graph.edges_by_stress().into_iter().take(top_k) {
        let reason = format!("latency: critical pair {u} -> {v} ({w:.0} B/s)");
        for (x, y) in ws.replica_pairs(u, v) {
            let (cx, cy) = (ws.node[x], ws.node[y]);
            let mut best: Option<(f64, bool, bool, usize, usize)> = None;
            for a in allowed(&ws, x) {
                for b in allowed(&ws, y) {
                    if !ws.check_moves(&[(x, a), (y, b)]) {
                        continue;
                    }
                    let key = (ws.rtt(a, b), a != b, (a, b) != (cx, cy), a, b);
                    if best.is_none_or(|k| key_lt(&key, &k)) {
                        best = Some(key);
                    }
                }
            }
            if let Some((_, _, _, a, b)) = best {
                ws.try_moves(&[(x, a), (y, b)], &reason, w);
                ws.pin(x);
                ws.pin(y);
            }
        }
    }
    Ok(ws.decisions())
}

fn key_lt(a: &(f64, bool, bool, usize, usize), b: &(f64, bool, bool, usize, usize)) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
        .then(a.4.cmp(&b.4))
        .is_lt()
}

/// Edges at or above the `percentile` stress (nearest rank) are
/// co-located when possible, else moved to the node pair maximizing
/// `min(bw(a,b), bw(b,a))`. The current pair wins bandwidth ties.
pub fn policy_bandwidth_aware(
    graph: &CallGraph,
    cluster: &ClusterState,
    pods: &[PodInfo],
    percentile: f64,
) -> Result<Vec<SchedulingDecision>> {
    let mut ws = Workspace::new(cluster, pods)?;
    let edges = graph.edges_by_stress();
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let mut weights: Vec<f64> = edges.iter().map(|e| e.2).collect();
    weights.sort_by(f64::total_cmp);
    let threshold = nearest_rank(&weights, percentile.clamp(0.0, 1.0));
    for (u, v, w) in edges.into_iter().filter(|e| e.2 >= threshold) {
        let reason = format!("bandwidth: {u} -> {v} ({w:.0} B/s)");
        for (x, y) in ws.replica_pairs(u, v) {
            let (cx, cy) = (ws.node[x], ws.node[y]);
            let mut colocated = cx == cy;
            for c in [cx, cy].into_iter().chain(0..ws.n()) {
                if colocated {
                    break;
                }
                let reachable = |z: usize| ws.can_move(z) || ws.node[z] == c;
                if reachable(x) && reachable(y) {
                    colocated = ws.try_moves(&[(x, c), (y, c)], &reason, w);
                }
            }
            if !colocated {
                let mut best: Option<(f64, bool, usize, usize)> = None;
                for a in allowed(&ws, x) {
                    for b in allowed(&ws, y) {
                        if a == b || !ws.check_moves(&[(x, a), (y, b)]) {
                            continue;
                        }
                        let score = ws.bw(a, b).min(ws.bw(b, a));
                        let key = (score, (a, b) != (cx, cy), a, b);
                        let better = match best {
                            None => true,
                            Some(k) => score
                                .total_cmp(&k.0)
                                .reverse()
                                .then(key.1.cmp(&k.1))
                                .then((a, b).cmp(&(k.2, k.3)))
                                .is_lt(),
                        };
                        if better {
                            best = Some(key);
                        }
                    }
                }
                if let Some((_, _, a, b)) = best {
                    ws.try_moves(&[(x, a), (y, b)], &reason, w);
                }
            }
            ws.pin(x);
            ws.pin(y);
        }
    }
    Ok(ws.decisions())
}
