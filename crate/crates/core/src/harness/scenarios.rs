//! Ready-made scenarios at desk scale: a minute-long testbed phase becomes
//! one simulated second.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::spec::{
    BandwidthSpec, ClusterSpec, DelaySpec, NetworkSpec, ScenarioSpec, ServicesSpec, SimSection, UniformNodes,
};
use crate::policy::{PolicyParams, PolicySpec};
use crate::sim::SlaTarget;
use crate::workload::{ArrivalLaw, CallGraphTemplate, WorkloadPhase, WorkloadSpec};

/// Sub-phase rates of every call-graph block.
pub const BLOCK_QPS: [f64; 4] = [30.0, 10.0, 50.0, 70.0];

/// Request type driving each of the four call-graph blocks.
pub const BLOCK_TYPES: [&str; 4] = ["compose-post", "read-user-timeline", "read-home-timeline", "mixed"];

fn base(name: &str, nodes: UniformNodes, workload: WorkloadSpec, policy: &str, sla_ms: f64) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        cluster: ClusterSpec {
            uniform: Some(nodes),
            ..Default::default()
        },
        ips: None,
        interface: "eth0".into(),
        network: NetworkSpec::default(),
        services: ServicesSpec::default(),
        templates: BTreeMap::new(),
        workload,
        policy: PolicySpec {
            name: policy.into(),
            params: PolicyParams::default(),
        },
        sla: SlaTarget::avg(sla_ms),
        sim: SimSection {
            window_s: 1.0,
            ..Default::default()
        },
        reschedule_on_refresh: false,
        output_dir: PathBuf::from("out"),
        base_dir: PathBuf::new(),
    }
}

/// Four call-graph blocks of `block_s` seconds, each split into equal
/// sub-phases at 30/10/50/70 qps. Nine workers with small injected delays
/// and 200 Mbit/s links, so the bulky timeline read dominates once its
/// storage sits on another node. SLA: 150 ms windowed average.
pub fn burst_scenario(block_s: f64) -> ScenarioSpec {
    let sub = block_s / BLOCK_QPS.len() as f64;
    let phases = BLOCK_TYPES
        .iter()
        .flat_map(|ty| BLOCK_QPS.iter().map(move |&q| WorkloadPhase::new(sub, q, &[(ty, 1.0)])))
        .collect();
    let workload = WorkloadSpec {
        phases,
        arrival_law: ArrivalLaw::Deterministic,
        seed: 1,
    };
    let nodes = UniformNodes {
        count: 9,
        cpu_m: 4000,
        mem_mib: 8192,
    };
    let mut spec = base("burst", nodes, workload, "callgraph", 150.0);
    spec.network = NetworkSpec {
        delay: Some(DelaySpec {
            bl: Some(1.0),
            mal: Some(4.0),
            seed: Some(42),
            file: None,
        }),
        bandwidth: Some(BandwidthSpec {
            uniform_mbit: Some(200.0),
            ..Default::default()
        }),
        refresh_period_s: None,
    };
    spec
}

/// Sustained mixed traffic with varying rate under cross-node delays
/// regenerated every `refresh_s` seconds (bl = 3, mal = 40, seeds derived
/// from `seed`). Nodes hold six default pods each, so the policies cannot
/// simply co-locate everything. The move cap is lifted because the hybrid
/// policy proposes one joint mapping, which is meaningless half-applied.
/// SLA: 300 ms windowed average.
pub fn randomized_delay_scenario(seed: u64, duration_s: f64, refresh_s: f64) -> ScenarioSpec {
    let rates = [40.0, 60.0, 30.0, 70.0, 50.0];
    let phase = duration_s / rates.len() as f64;
    let workload = WorkloadSpec {
        phases: rates
            .iter()
            .map(|&q| WorkloadPhase::new(phase, q, &[("mixed", 1.0)]))
            .collect(),
        arrival_law: ArrivalLaw::Poisson,
        seed,
    };
    let nodes = UniformNodes {
        count: 9,
        cpu_m: 600,
        mem_mib: 1024,
    };
    let mut spec = base(&format!("randomized-delay-{seed}"), nodes, workload, "hybrid", 300.0);
    spec.network = NetworkSpec {
        delay: Some(DelaySpec {
            bl: Some(3.0),
            mal: Some(40.0),
            seed: Some(seed),
            file: None,
        }),
        bandwidth: None,
        refresh_period_s: Some(refresh_s),
    };
    spec.reschedule_on_refresh = true;
    spec.policy.params.cooldown_s = 0.0;
    spec.policy.params.max_moves = 64;
    spec
}

/// One node, one service, one phase.
pub fn minimal_scenario() -> ScenarioSpec {
    let workload = WorkloadSpec {
        phases: vec![WorkloadPhase::new(2.0, 5.0, &[("ping", 1.0)])],
        arrival_law: ArrivalLaw::Deterministic,
        seed: 0,
    };
    let nodes = UniformNodes {
        count: 1,
        cpu_m: 1000,
        mem_mib: 1024,
    };
    let mut spec = base("minimal", nodes, workload, "spread", 150.0);
    spec.templates.insert(
        "ping".into(),
        super::spec::TemplateRef::Inline(CallGraphTemplate::single("echo", 2.0)),
    );
    spec
}
