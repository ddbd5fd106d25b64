//! Service-node mapping: minimize stress-weighted round-trip delay under
//! capacity constraints.

use std::collections::BTreeMap;

use crate::cluster::{CapacityLedger, ClusterState, NodeId, Placement, PodInfo, SchedulingDecision};
use crate::error::{Error, Result};
use crate::graph::CallGraph;

use super::workspace::Workspace;

pub const DEFAULT_BRUTE_FORCE_LIMIT: usize = 10;

const RANDOM_RESTARTS: usize = 8;
const RESTART_SEED: u64 = 0x5eed;

/// Unit-level view of the mapping objective. A service with `k` replicas
/// spreads each incident edge's stress evenly over its replica pairs.
struct Problem {
    /// Units taking part in the search.
    units: Vec<usize>,
    /// `adj[i]` lists `(j, weight)` over positions in `units`.
    adj: Vec<Vec<(usize, f64)>>,
    rtt: Vec<Vec<f64>>,
    tolerance: f64,
}

impl Problem {
    fn new(ws: &Workspace<'_>, graph: &CallGraph) -> Self {
        let mut units = Vec::new();
        let mut pos = BTreeMap::new();
        for (u, v, _) in graph.edges_by_stress() {
            for s in [u, v] {
                for &x in ws.units_of(s) {
                    pos.entry(x).or_insert_with(|| {
                        units.push(x);
                        units.len() - 1
                    });
                }
            }
        }
        let mut adj = vec![Vec::new(); units.len()];
        let mut total = 0.0;
        for (u, v, w) in graph.edges_by_stress() {
            let (us, vs) = (ws.units_of(u), ws.units_of(v));
            if us.is_empty() || vs.is_empty() {
                continue;
            }
            let share = w / (us.len() * vs.len()) as f64;
            total += w;
            for &x in us {
                for &y in vs {
                    adj[pos[&x]].push((pos[&y], share));
                    adj[pos[&y]].push((pos[&x], share));
                }
            }
        }
        let n = ws.n();
        let rtt: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| ws.rtt(a, b)).collect()).collect();
        let max_rtt = rtt.iter().flatten().copied().fold(1.0, f64::max);
        Problem {
            units,
            adj,
            rtt,
            tolerance: 1e-12 * total.max(f64::MIN_POSITIVE) * max_rtt,
        }
    }

    /// Cost of unit `i` against its neighbours.
    fn local(&self, i: usize, nodes: &[usize]) -> f64 {
        self.adj[i].iter().map(|&(j, w)| w * self.rtt[nodes[i]][nodes[j]]).sum()
    }

    fn cost(&self, nodes: &[usize]) -> f64 {
        (0..self.units.len()).map(|i| self.local(i, nodes)).sum::<f64>() / 2.0
    }
}

/// Objective of `placement`: `sum over edges of stress * rtt`, split evenly
/// across replica pairs.
pub fn mapping_cost(graph: &CallGraph, cluster: &ClusterState, placement: &Placement) -> Result<f64> {
    let state = cluster.with_placement(placement.clone())?;
    let ws = Workspace::new(&state, &[])?;
    let p = Problem::new(&ws, graph);
    let nodes: Vec<usize> = p.units.iter().map(|&x| ws.node[x]).collect();
    Ok(p.cost(&nodes))
}

fn check_total_capacity(cluster: &ClusterState) -> Result<()> {
    let cpu: u64 = cluster.nodes.iter().map(|n| n.cpu_capacity).sum();
    let mem: u64 = cluster.nodes.iter().map(|n| n.mem_capacity).sum();
    let idx = crate::cluster::PodIndex::new(&cluster.pods);
    let (mut need_cpu, mut need_mem) = (0u64, 0u64);
    for id in cluster.placement.assignments.keys() {
        let p = idx.get(id)?;
        need_cpu += p.cpu_request;
        need_mem += p.mem_request;
    }
    if need_cpu > cpu || need_mem > mem {
        return Err(Error::Infeasible {
            nodes: vec![format!(
                "total requests {need_cpu}m/{need_mem}MiB exceed capacity {cpu}m/{mem}MiB"
            )],
        });
    }
    Ok(())
}

/// Greedy start: units of the heaviest edges first, each on the node with
/// the lowest added cost against units already placed. Ties keep the
/// unit's current node, then go to the lowest index. Units outside the
/// graph keep their node. `anchor` pins the first free unit to one node.
/// Returns `None` if some unit fits nowhere.
fn greedy_initial(ws: &Workspace<'_>, p: &Problem, anchor: Option<usize>) -> Option<Vec<usize>> {
    let n = ws.n();
    let in_problem: std::collections::BTreeSet<usize> = p.units.iter().copied().collect();
    let mut ledger = CapacityLedger::new(&ws.cluster.nodes);
    // fixed units first: everything not searched plus immovable searched units
    for x in 0..ws.ids.len() {
        if !in_problem.contains(&x) || !ws.can_move(x) {
            ledger.allocate(NodeId(ws.node[x]), &ws.pods[x]);
        }
    }
    if !ledger.overloaded().is_empty() {
        return None;
    }
    let mut nodes: Vec<Option<usize>> = p
        .units
        .iter()
        .map(|&x| if ws.can_move(x) { None } else { Some(ws.node[x]) })
        .collect();
    let mut anchor = anchor;
    for i in 0..p.units.len() {
        if nodes[i].is_some() {
            continue;
        }
        let x = p.units[i];
        let mut best: Option<(f64, usize)> = None;
        let candidates: Vec<usize> = match anchor.take() {
            Some(a) => vec![a],
            None => std::iter::once(ws.node[x]).chain(0..n).collect(),
        };
        for c in candidates {
            if !ledger.fits(NodeId(c), &ws.pods[x]) {
                continue;
            }
            let inc: f64 = p.adj[i]
                .iter()
                .filter_map(|&(j, w)| nodes[j].map(|nj| w * p.rtt[c][nj]))
                .sum();
            if best.is_none_or(|(b, _)| inc < b - p.tolerance) {
                best = Some((inc, c));
            }
        }
        let (_, c) = best?;
        ledger.allocate(NodeId(c), &ws.pods[x]);
        nodes[i] = Some(c);
    }
    nodes.into_iter().collect()
}

/// Random feasible mapping for restarts: free units in random order, each
/// on a random node with room.
fn random_start(ws: &Workspace<'_>, p: &Problem, rng: &mut impl rand::Rng) -> Option<Vec<usize>> {
    use rand::seq::SliceRandom;

    let n = ws.n();
    let in_problem: std::collections::BTreeSet<usize> = p.units.iter().copied().collect();
    let mut ledger = CapacityLedger::new(&ws.cluster.nodes);
    for x in 0..ws.ids.len() {
        if !in_problem.contains(&x) || !ws.can_move(x) {
            ledger.allocate(NodeId(ws.node[x]), &ws.pods[x]);
        }
    }
    let mut nodes: Vec<usize> = p.units.iter().map(|&x| ws.node[x]).collect();
    let mut order: Vec<usize> = (0..p.units.len()).filter(|&i| ws.can_move(p.units[i])).collect();
    order.shuffle(rng);
    for i in order {
        let pod = &ws.pods[p.units[i]];
        let room: Vec<usize> = (0..n).filter(|&c| ledger.fits(NodeId(c), pod)).collect();
        let &c = room.choose(rng)?;
        ledger.allocate(NodeId(c), pod);
        nodes[i] = c;
    }
    Some(nodes)
}

/// First-improvement local search over single-unit relocations, pairwise
/// swaps and exchanges of the movable contents of two nodes (which lets a
/// co-located group travel together). Every accepted step strictly lowers
/// the cost.
fn local_search(ws: &Workspace<'_>, p: &Problem, nodes: &mut [usize]) {
    let n = ws.n();
    let mut ledger = CapacityLedger::new(&ws.cluster.nodes);
    let in_problem: std::collections::BTreeSet<usize> = p.units.iter().copied().collect();
    for x in 0..ws.ids.len() {
        if !in_problem.contains(&x) {
            ledger.allocate(NodeId(ws.node[x]), &ws.pods[x]);
        }
    }
    for (i, &x) in p.units.iter().enumerate() {
        ledger.allocate(NodeId(nodes[i]), &ws.pods[x]);
    }
    let movable: Vec<bool> = p.units.iter().map(|&x| ws.can_move(x)).collect();
    loop {
        let mut improved = false;
        'relocate: for i in 0..p.units.len() {
            if !movable[i] {
                continue;
            }
            let pod = &ws.pods[p.units[i]];
            let from = nodes[i];
            let before = p.local(i, nodes);
            for c in 0..n {
                if c == from {
                    continue;
                }
                ledger.deallocate(NodeId(from), pod);
                let fits = ledger.fits(NodeId(c), pod);
                ledger.allocate(NodeId(from), pod);
                if !fits {
                    continue;
                }
                nodes[i] = c;
                let after = p.local(i, nodes);
                if after < before - p.tolerance {
                    ledger.deallocate(NodeId(from), pod);
                    ledger.allocate(NodeId(c), pod);
                    improved = true;
                    break 'relocate;
                }
                nodes[i] = from;
            }
        }
        if improved {
            continue;
        }
        'swap: for i in 0..p.units.len() {
            for j in i + 1..p.units.len() {
                let (a, b) = (nodes[i], nodes[j]);
                if a == b || !movable[i] || !movable[j] {
                    continue;
                }
                let (pi, pj) = (&ws.pods[p.units[i]], &ws.pods[p.units[j]]);
                ledger.deallocate(NodeId(a), pi);
                ledger.deallocate(NodeId(b), pj);
                let fits = ledger.fits(NodeId(b), pi) && {
                    ledger.allocate(NodeId(b), pi);
                    let ok = ledger.fits(NodeId(a), pj);
                    ledger.deallocate(NodeId(b), pi);
                    ok
                };
                ledger.allocate(NodeId(a), pi);
                ledger.allocate(NodeId(b), pj);
                if !fits {
                    continue;
                }
                let before = p.local(i, nodes) + p.local(j, nodes);
                nodes[i] = b;
                nodes[j] = a;
                let after = p.local(i, nodes) + p.local(j, nodes);
                if after < before - p.tolerance {
                    ledger.deallocate(NodeId(a), pi);
                    ledger.deallocate(NodeId(b), pj);
                    ledger.allocate(NodeId(b), pi);
                    ledger.allocate(NodeId(a), pj);
                    improved = true;
                    break 'swap;
                }
                nodes[i] = a;
                nodes[j] = b;
            }
        }
        if improved {
            continue;
        }
        'exchange: for a in 0..n {
            for b in a + 1..n {
                let on =
                    |k: usize| -> Vec<usize> { (0..p.units.len()).filter(|&i| movable[i] && nodes[i] == k).collect() };
                let (ga, gb) = (on(a), on(b));
                if ga.is_empty() && gb.is_empty() {
                    continue;
                }
                let before = p.cost(nodes);
                let mut trial = ledger.clone();
                for (&i, from, to) in ga.iter().map(|i| (i, a, b)).chain(gb.iter().map(|i| (i, b, a))) {
                    trial.deallocate(NodeId(from), &ws.pods[p.units[i]]);
                    nodes[i] = to;
                }
                let mut fits = true;
                for (&i, to) in ga.iter().map(|i| (i, b)).chain(gb.iter().map(|i| (i, a))) {
                    let pod = &ws.pods[p.units[i]];
                    fits &= trial.fits(NodeId(to), pod);
                    trial.allocate(NodeId(to), pod);
                }
                if fits && p.cost(nodes) < before - p.tolerance {
                    ledger = trial;
                    improved = true;
                    break 'exchange;
                }
                for &i in &ga {
                    nodes[i] = a;
                }
                for &i in &gb {
                    nodes[i] = b;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Result of the hybrid solver before it is turned into decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingSolution {
    pub placement: Placement,
    pub initial_cost: f64,
    pub cost: f64,
}

/// Local search from several deterministic starts: the greedy mapping, the
/// greedy mapping with its first unit anchored on each node, the current
/// placement and a few seeded random feasible mappings. The best local
/// optimum wins; earlier starts win ties. `initial_cost` is the cost of the
/// plain greedy mapping (or the current placement when greedy fails).
pub fn solve_mapping(graph: &CallGraph, cluster: &ClusterState, pods: &[PodInfo]) -> Result<MappingSolution> {
    check_total_capacity(cluster)?;
    let ws = Workspace::new(cluster, pods)?;
    let p = Problem::new(&ws, graph);
    let current: Vec<usize> = p.units.iter().map(|&x| ws.node[x]).collect();
    let first = greedy_initial(&ws, &p, None).unwrap_or_else(|| current.clone());
    let initial_cost = p.cost(&first);
    let mut starts = vec![first];
    starts.extend((0..ws.n()).filter_map(|a| greedy_initial(&ws, &p, Some(a))));
    starts.push(current);
    let mut rng = crate::net::seeded_rng(RESTART_SEED);
    starts.extend((0..RANDOM_RESTARTS).filter_map(|_| random_start(&ws, &p, &mut rng)));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mut nodes in starts {
        local_search(&ws, &p, &mut nodes);
        let c = p.cost(&nodes);
        if best.as_ref().is_none_or(|(b, _)| c < *b - p.tolerance) {
            best = Some((c, nodes));
        }
    }
    let (_, nodes) = best.expect("at least one start");
    let mut placement = cluster.placement.clone();
    for (i, &x) in p.units.iter().enumerate() {
        placement.assign(ws.ids[x].clone(), NodeId(nodes[i]));
    }
    Ok(MappingSolution {
        placement,
        initial_cost,
        cost: p.cost(&nodes),
    })
}

pub fn policy_hybrid(graph: &CallGraph, cluster: &ClusterState, pods: &[PodInfo]) -> Result<Vec<SchedulingDecision>> {
    let sol = solve_mapping(graph, cluster, pods)?;
    let incident = graph.incident_stress();
    let reason = format!("hybrid: mapping cost {:.1}", sol.cost);
    Ok(cluster
        .placement
        .assignments
        .iter()
        .filter_map(|(id, node)| {
            let target = sol.placement.node_of(id)?;
            (target != *node).then(|| {
                let mut d = SchedulingDecision::new(id.clone(), target, reason.clone());
                d.relevance = incident.get(id.service.as_str()).copied().unwrap_or(0.0);
                d
            })
        })
        .collect())
}

/// Exhaustive search over the graph's replicas listed in `pods`; other
/// replicas stay put. Fails when more than `limit` replicas would be
/// enumerated or no feasible mapping exists.
pub fn brute_force_mapping(
    graph: &CallGraph,
    cluster: &ClusterState,
    pods: &[PodInfo],
    limit: usize,
) -> Result<(Placement, f64)> {
    let ws = Workspace::new(cluster, pods)?;
    let p = Problem::new(&ws, graph);
    let free: Vec<usize> = (0..p.units.len()).filter(|&i| ws.can_move(p.units[i])).collect();
    if free.len() > limit {
        return Err(Error::validation(format!(
            "brute force over {} replicas exceeds limit {limit}",
            free.len()
        )));
    }
    let n = ws.n();
    let in_free: std::collections::BTreeSet<usize> = free.iter().map(|&i| p.units[i]).collect();
    let mut base = CapacityLedger::new(&ws.cluster.nodes);
    for x in 0..ws.ids.len() {
        if !in_free.contains(&x) {
            base.allocate(NodeId(ws.node[x]), &ws.pods[x]);
        }
    }
    let mut nodes: Vec<usize> = p.units.iter().map(|&x| ws.node[x]).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut digits = vec![0usize; free.len()];
    loop {
        let mut ledger = base.clone();
        let mut ok = true;
        for (k, &i) in free.iter().enumerate() {
            nodes[i] = digits[k];
            let pod = &ws.pods[p.units[i]];
            if !ledger.fits(NodeId(digits[k]), pod) {
                ok = false;
                break;
            }
            ledger.allocate(NodeId(digits[k]), pod);
        }
        if ok && ledger.overloaded().is_empty() {
            let c = p.cost(&nodes);
            if best.as_ref().is_none_or(|(b, _)| c < *b - p.tolerance) {
                best = Some((c, nodes.clone()));
            }
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == digits.len() {
                let (cost, nodes) = best.ok_or_else(|| Error::Infeasible {
                    nodes: vec!["no feasible mapping".into()],
                })?;
                let mut placement = cluster.placement.clone();
                for (i, &x) in p.units.iter().enumerate() {
                    placement.assign(ws.ids[x].clone(), NodeId(nodes[i]));
                }
                return Ok((placement, cost));
            }
            digits[k] += 1;
            if digits[k] < n {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Random mapping instance for solver benchmarking: 3..=`max_services`
/// single-replica services on 2..=`max_nodes` nodes with slack capacity,
/// a random connected call-graph and a generated delay matrix. The start
/// placement is the spread baseline.
pub fn random_instance(seed: u64, max_services: usize, max_nodes: usize) -> Result<(CallGraph, ClusterState)> {
    use rand::Rng;

    if max_services < 3 || max_nodes < 2 {
        return Err(Error::validation("random instance needs >= 3 services and >= 2 nodes"));
    }
    let mut rng = crate::net::seeded_rng(seed);
    let s = rng.gen_range(3..=max_services);
    let m = rng.gen_range(2..=max_nodes);
    let per_node = s.div_ceil(m) + rng.gen_range(0..=1);
    let nodes = crate::cluster::uniform_nodes(m, 1000 * per_node as u64, 1024 * per_node as u64);
    let names: Vec<String> = (0..s).map(|i| format!("svc-{i}")).collect();
    let pods: Vec<PodInfo> = names.iter().map(|n| PodInfo::new(n.clone(), 0, 1000, 1024)).collect();
    let mut graph = CallGraph::new();
    for i in 1..s {
        let parent = rng.gen_range(0..i);
        graph.add_edge(&names[parent], &names[i], rng.gen_range(1.0..1000.0))?;
    }
    for _ in 0..rng.gen_range(0..s) {
        let (a, b) = (rng.gen_range(0..s), rng.gen_range(0..s));
        if a != b && graph.weight(&names[a], &names[b]).is_none() {
            graph.add_edge(&names[a], &names[b], rng.gen_range(1.0..1000.0))?;
        }
    }
    let delays = crate::net::generate_delay_matrix(m, 3.0, 40.0, seed)?;
    let placement = crate::cluster::spread_placement(&nodes, &pods)?;
    let cluster = ClusterState::new(
        nodes,
        delays,
        crate::net::BandwidthMatrix::unlimited(m),
        placement,
        pods,
    )?;
    Ok((graph, cluster))
}
