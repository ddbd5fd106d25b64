//! Event-driven request execution over a placement.
//!
//! Model:
//! - every replica is a single FIFO server with deterministic per-call
//!   processing time taken from the request's template;
//! - a caller picks among the callee's replicas round-robin, with one
//!   counter per (caller service, callee service) edge;
//! - a call from node `a` to node `b != a` costs `delay(a,b)` plus
//!   `request_bytes / bandwidth(a,b)`; the reply costs `delay(b,a)` plus
//!   `response_bytes / bandwidth(b,a)`; same-node hops cost the per-hop
//!   overhead each way;
//! - after processing, a service issues its calls stage by stage and
//!   replies once the last stage has returned;
//! - response time is entry completion minus arrival.
//!
//! Time is kept in integer nanoseconds. Node lookups happen when a payload
//! is sent, so placement and network changes between steps apply to
//! traffic sent afterwards.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use crate::cluster::{ClusterState, Placement};
use crate::error::{Error, Result};
use crate::net::{BandwidthMatrix, DelayMatrix};
use crate::workload::{CallGraphTemplate, RequestEvent};

use super::metrics::{samples_at, RequestRecord, RunMetrics, Transfer, WindowStats, NS_PER_MS, NS_PER_S};
use crate::graph::TrafficSample;

pub const DEFAULT_WINDOW_S: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub cluster: ClusterState,
    pub templates: BTreeMap<String, CallGraphTemplate>,
    pub arrivals: Vec<RequestEvent>,
    /// Sidecar cost per same-node hop, each way, ms.
    pub per_hop_overhead_ms: f64,
    pub horizon_s: f64,
    pub window_s: f64,
}

impl SimConfig {
    pub fn new(
        cluster: ClusterState,
        templates: BTreeMap<String, CallGraphTemplate>,
        arrivals: Vec<RequestEvent>,
        horizon_s: f64,
    ) -> Self {
        SimConfig {
            cluster,
            templates,
            arrivals,
            per_hop_overhead_ms: 0.0,
            horizon_s,
            window_s: DEFAULT_WINDOW_S,
        }
    }
}

type CallId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival(usize),
    CallArrive(CallId),
    ProcDone(usize),
    ReplyArrive(CallId),
}

#[derive(Debug, Clone)]
struct Call {
    request: usize,
    template: usize,
    service: u32,
    unit: usize,
    parent: Option<CallId>,
    /// Template edge that created this call.
    edge: Option<usize>,
    next_stage: usize,
    pending: usize,
}

#[derive(Debug, Clone, Default)]
struct Server {
    current: Option<CallId>,
    queue: VecDeque<CallId>,
}

#[derive(Debug, Clone)]
struct CompiledEdge {
    parent: u32,
    child: u32,
    request_bytes: u64,
    response_bytes: u64,
}

#[derive(Debug, Clone)]
struct CompiledTemplate {
    entry: u32,
    edges: Vec<CompiledEdge>,
    stages: BTreeMap<u32, Vec<Vec<usize>>>,
    processing_ns: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone)]
struct Request {
    id: u64,
    template: usize,
    arrival_ns: u64,
    end_ns: Option<u64>,
}

/// Resumable simulation. [`simulate`] drives one to the horizon; the
/// rescheduling loop steps it window by window.
#[derive(Debug, Clone)]
pub struct Simulator {
    type_names: Vec<String>,
    templates: Vec<CompiledTemplate>,
    services: Vec<String>,
    service_replicas: Vec<Vec<usize>>,
    unit_ids: Vec<crate::cluster::ReplicaId>,
    unit_node: Vec<usize>,
    servers: Vec<Server>,
    rr: BTreeMap<(u32, u32), usize>,
    delays: DelayMatrix,
    bandwidths: BandwidthMatrix,
    overhead_ns: u64,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64, Event)>>,
    calls: Vec<Call>,
    requests: Vec<Request>,
    transfers: Vec<Transfer>,
    edge_universe: BTreeSet<(u32, u32)>,
    horizon_ns: u64,
    window_s: f64,
    truncated: u64,
}

const ENTRY: u32 = u32::MAX;

fn to_ns(seconds: f64) -> u64 {
    (seconds * NS_PER_S).round() as u64
}

impl Simulator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let cluster = &config.cluster;
        if !(config.per_hop_overhead_ms >= 0.0 && config.per_hop_overhead_ms.is_finite()) {
            return Err(Error::validation("per-hop overhead must be >= 0"));
        }
        if !(config.window_s > 0.0 && config.window_s.is_finite()) {
            return Err(Error::validation("metrics window must be > 0"));
        }
        let last_arrival = config.arrivals.iter().map(|a| a.arrival_time).fold(0.0, f64::max);
        if !(config.horizon_s.is_finite() && config.horizon_s >= last_arrival) {
            return Err(Error::validation(format!(
                "horizon {}s precedes last arrival at {last_arrival}s",
                config.horizon_s
            )));
        }
        if config
            .arrivals
            .windows(2)
            .any(|w| w[1].arrival_time < w[0].arrival_time)
        {
            return Err(Error::validation("arrivals must be sorted by time"));
        }

        // Units: every replica in the placement.
        let mut services: Vec<String> = Vec::new();
        let mut service_index: BTreeMap<String, u32> = BTreeMap::new();
        let mut intern = |name: &str, services: &mut Vec<String>| -> u32 {
            if let Some(&i) = service_index.get(name) {
                return i;
            }
            let i = services.len() as u32;
            services.push(name.to_string());
            service_index.insert(name.to_string(), i);
            i
        };
        let mut unit_ids = Vec::new();
        let mut unit_node = Vec::new();
        let mut service_replicas: Vec<Vec<usize>> = Vec::new();
        for (replica, node) in &cluster.placement.assignments {
            let s = intern(&replica.service, &mut services) as usize;
            if service_replicas.len() <= s {
                service_replicas.resize(s + 1, Vec::new());
            }
            service_replicas[s].push(unit_ids.len());
            unit_ids.push(replica.clone());
            unit_node.push(node.0);
        }

        // Templates actually referenced by arrivals.
        let referenced: BTreeSet<&str> = config.arrivals.iter().map(|a| a.request_type.as_str()).collect();
        let mut type_names = Vec::new();
        let mut compiled = Vec::new();
        let mut edge_universe = BTreeSet::new();
        for name in &referenced {
            let t = config
                .templates
                .get(*name)
                .ok_or_else(|| Error::unknown("template", *name))?;
            t.validate()?;
            for svc in t.services() {
                if !service_index.contains_key(svc) {
                    return Err(Error::validation(format!(
                        "service `{svc}` of template `{name}` has no placed replica"
                    )));
                }
            }
            let idx = |s: &str| service_index[s];
            let edges: Vec<CompiledEdge> = t
                .edges
                .iter()
                .map(|e| CompiledEdge {
                    parent: idx(&e.parent),
                    child: idx(&e.child),
                    request_bytes: e.request_bytes,
                    response_bytes: e.response_bytes,
                })
                .collect();
            for e in &edges {
                edge_universe.insert((e.parent, e.child));
            }
            let stages = t.services().into_iter().map(|s| (idx(s), t.stages_of(s))).collect();
            let processing_ns = t
                .services()
                .into_iter()
                .map(|s| (idx(s), (t.processing(s) * NS_PER_MS).round() as u64))
                .collect();
            type_names.push(name.to_string());
            compiled.push(CompiledTemplate {
                entry: idx(&t.entry),
                edges,
                stages,
                processing_ns,
            });
        }
        let type_index: BTreeMap<&str, usize> = type_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

        let horizon_ns = to_ns(config.horizon_s);
        let mut sim = Simulator {
            type_names: type_names.clone(),
            templates: compiled,
            services,
            service_replicas,
            servers: vec![Server::default(); unit_ids.len()],
            unit_ids,
            unit_node,
            rr: BTreeMap::new(),
            delays: cluster.delays.clone(),
            bandwidths: cluster.bandwidths.clone(),
            overhead_ns: (config.per_hop_overhead_ms * NS_PER_MS).round() as u64,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            calls: Vec::new(),
            requests: Vec::with_capacity(config.arrivals.len()),
            transfers: Vec::new(),
            edge_universe,
            horizon_ns,
            window_s: config.window_s,
            truncated: 0,
        };
        for a in &config.arrivals {
            let t = to_ns(a.arrival_time);
            if t >= horizon_ns {
                sim.truncated += 1;
                continue;
            }
            let idx = sim.requests.len();
            sim.requests.push(Request {
                id: a.id,
                template: type_index[a.request_type.as_str()],
                arrival_ns: t,
                end_ns: None,
            });
            sim.push(t, Event::Arrival(idx));
        }
        Ok(sim)
    }

    pub fn now_s(&self) -> f64 {
        self.now as f64 / NS_PER_S
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_ns as f64 / NS_PER_S
    }

    fn push(&mut self, t: u64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((t, self.seq, ev)));
    }

    /// Moves replicas; every simulated replica must appear in `placement`.
    pub fn set_placement(&mut self, placement: &Placement) -> Result<()> {
        let mut next = self.unit_node.clone();
        for (i, id) in self.unit_ids.iter().enumerate() {
            let node = placement
                .node_of(id)
                .ok_or_else(|| Error::unknown("replica", id.to_string()))?;
            if node.0 >= self.delays.n {
                return Err(Error::unknown("node", node.to_string()));
            }
            next[i] = node.0;
        }
        self.unit_node = next;
        Ok(())
    }

    pub fn set_network(&mut self, delays: DelayMatrix, bandwidths: BandwidthMatrix) -> Result<()> {
        if delays.n != self.delays.n || bandwidths.n != self.delays.n {
            return Err(Error::Shape("network matrices changed dimension".into()));
        }
        self.delays = delays;
        self.bandwidths = bandwidths;
        Ok(())
    }

    fn link_ns(&self, from: usize, to: usize, bytes: u64) -> u64 {
        if from == to {
            return self.overhead_ns;
        }
        let delay = self.delays.get(from, to) * 1_000_000;
        let transfer = match self.bandwidths.get(from, to) {
            Some(mbit) if bytes > 0 => (bytes as f64 * 8_000.0 / mbit).ceil() as u64,
            _ => 0,
        };
        delay + transfer
    }

    fn pick_replica(&mut self, caller: u32, callee: u32) -> usize {
        let replicas = &self.service_replicas[callee as usize];
        let counter = self.rr.entry((caller, callee)).or_insert(0);
        let unit = replicas[*counter % replicas.len()];
        *counter += 1;
        unit
    }

    fn enqueue(&mut self, call: CallId, t: u64) {
        let unit = self.calls[call].unit;
        if self.servers[unit].current.is_none() {
            self.start_service(unit, call, t);
        } else {
            self.servers[unit].queue.push_back(call);
        }
    }

    fn start_service(&mut self, unit: usize, call: CallId, t: u64) {
        self.servers[unit].current = Some(call);
        let c = &self.calls[call];
        let p = self.templates[c.template].processing_ns[&c.service];
        self.push(t + p, Event::ProcDone(unit));
    }

    fn advance(&mut self, call: CallId, t: u64) {
        let (template, service, stage) = {
            let c = &self.calls[call];
            (c.template, c.service, c.next_stage)
        };
        let stages = &self.templates[template].stages[&service];
        if stage == stages.len() {
            self.complete(call, t);
            return;
        }
        let edges = stages[stage].clone();
        self.calls[call].next_stage += 1;
        self.calls[call].pending = edges.len();
        let from = self.unit_node[self.calls[call].unit];
        for ei in edges {
            let e = self.templates[template].edges[ei].clone();
            let unit = self.pick_replica(e.parent, e.child);
            let cost = self.link_ns(from, self.unit_node[unit], e.request_bytes);
            self.transfers.push(Transfer {
                t_ns: t,
                um: e.parent,
                dm: e.child,
                sent: e.request_bytes,
                received: 0,
            });
            let child = self.calls.len();
            self.calls.push(Call {
                request: self.calls[call].request,
                template,
                service: e.child,
                unit,
                parent: Some(call),
                edge: Some(ei),
                next_stage: 0,
                pending: 0,
            });
            self.push(t + cost, Event::CallArrive(child));
        }
    }

    fn complete(&mut self, call: CallId, t: u64) {
        let c = self.calls[call].clone();
        match (c.parent, c.edge) {
            (Some(parent), Some(ei)) => {
                let e = &self.templates[c.template].edges[ei];
                let (um, dm, bytes) = (e.parent, e.child, e.response_bytes);
                let cost = self.link_ns(self.unit_node[c.unit], self.unit_node[self.calls[parent].unit], bytes);
                self.transfers.push(Transfer {
                    t_ns: t,
                    um,
                    dm,
                    sent: 0,
                    received: bytes,
                });
                self.push(t + cost, Event::ReplyArrive(call));
            }
            _ => self.requests[c.request].end_ns = Some(t),
        }
    }

    fn handle(&mut self, t: u64, ev: Event) {
        match ev {
            Event::Arrival(r) => {
                let template = self.requests[r].template;
                let entry = self.templates[template].entry;
                let unit = self.pick_replica(ENTRY, entry);
                let call = self.calls.len();
                self.calls.push(Call {
                    request: r,
                    template,
                    service: entry,
                    unit,
                    parent: None,
                    edge: None,
                    next_stage: 0,
                    pending: 0,
                });
                self.enqueue(call, t);
            }
            Event::CallArrive(call) => self.enqueue(call, t),
            Event::ProcDone(unit) => {
                let done = self.servers[unit].current.take().expect("busy server");
                if let Some(next) = self.servers[unit].queue.pop_front() {
                    self.start_service(unit, next, t);
                }
                self.advance(done, t);
            }
            Event::ReplyArrive(call) => {
                let parent = self.calls[call].parent.expect("reply without parent");
                self.calls[parent].pending -= 1;
                if self.calls[parent].pending == 0 {
                    self.advance(parent, t);
                }
            }
        }
    }

    /// Processes every event strictly before `t_s` (capped at the horizon).
    pub fn run_until(&mut self, t_s: f64) {
        let limit = to_ns(t_s).min(self.horizon_ns);
        while let Some(Reverse((t, _, _))) = self.heap.peek() {
            if *t >= limit {
                break;
            }
            let Reverse((t, _, ev)) = self.heap.pop().unwrap();
            self.now = t;
            self.handle(t, ev);
        }
        self.now = self.now.max(limit);
    }

    /// Stats over requests completed in `[start_s, end_s)`.
    pub fn window_stats(&self, start_s: f64, end_s: f64) -> WindowStats {
        let (a, b) = (to_ns(start_s), to_ns(end_s));
        let responses: Vec<f64> = self
            .requests
            .iter()
            .filter_map(|r| {
                r.end_ns
                    .filter(|e| *e >= a && *e < b)
                    .map(|e| (e - r.arrival_ns) as f64 / NS_PER_MS)
            })
            .collect();
        WindowStats::from_responses(start_s, end_s, &responses)
    }

    /// Cumulative traffic counters at `times`, sorted ascending.
    pub fn traffic_samples_at(&self, times: &[f64]) -> Vec<TrafficSample> {
        samples_at(&self.services, &self.transfers, &self.edge_universe, times)
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    /// Window boundaries tiling `[0, horizon)`.
    pub fn window_bounds(&self) -> Vec<(f64, f64)> {
        window_bounds(self.window_s, self.horizon_s())
    }

    /// Snapshot of everything recorded so far.
    pub fn metrics(&self) -> RunMetrics {
        let mut requests: Vec<RequestRecord> = self
            .requests
            .iter()
            .filter_map(|r| {
                r.end_ns.map(|e| RequestRecord {
                    id: r.id,
                    request_type: self.type_names[r.template].clone(),
                    arrival_s: r.arrival_ns as f64 / NS_PER_S,
                    end_s: e as f64 / NS_PER_S,
                    response_ms: (e - r.arrival_ns) as f64 / NS_PER_MS,
                })
            })
            .collect();
        requests.sort_by_key(|r| r.id);
        let windows = self
            .window_bounds()
            .into_iter()
            .map(|(a, b)| self.window_stats(a, b))
            .collect();
        let dropped = self.requests.iter().filter(|r| r.end_ns.is_none()).count() as u64;
        RunMetrics {
            requests,
            windows,
            window_s: self.window_s,
            horizon_s: self.horizon_s(),
            services: self.services.clone(),
            transfers: self.transfers.clone(),
            edge_universe: self.edge_universe.clone(),
            dropped,
            truncated: self.truncated,
        }
    }

    pub fn finish(mut self) -> RunMetrics {
        self.run_until(self.horizon_s());
        self.metrics()
    }
}

pub(crate) fn window_bounds(window_s: f64, horizon_s: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * window_s;
        if start >= horizon_s - 1e-12 {
            break;
        }
        out.push((start, ((k + 1) as f64 * window_s).min(horizon_s)));
        k += 1;
    }
    out
}

/// Runs `config` to its horizon.
pub fn simulate(config: &SimConfig) -> Result<RunMetrics> {
    Ok(Simulator::new(config)?.finish())
}
