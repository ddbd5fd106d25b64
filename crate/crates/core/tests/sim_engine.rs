mod common;

use std::collections::BTreeSet;

use common::*;
use idyn_core::cluster::SlaMetric;
use idyn_core::graph::build_call_graph;
use idyn_core::net::DelayMatrix;
use idyn_core::sim::{simulate, sla_series, traffic_export, SimConfig, Simulator, SlaTarget, WindowStats};
use idyn_core::workload::{
    builtin_templates, compose_post, generate_arrivals, ArrivalLaw, CallGraphTemplate, InvocationMode, TemplateEdge,
    WorkloadPhase,
};
use proptest::prelude::*;

fn chain_config(delays: Vec<Vec<u64>>, placement: &[(&str, usize)], times: &[f64], horizon: f64) -> SimConfig {
    SimConfig::new(
        cluster(delays, placement),
        templates(&[("chain", chain(5.0, 0, 0))]),
        arrivals("chain", times),
        horizon,
    )
}

#[test]
fn colocated_chain_is_pure_sum() {
    let cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0], 1.0);
    let m = simulate(&cfg).unwrap();
    assert_eq!(m.requests.len(), 1);
    assert_eq!(m.requests[0].response_ms, 15.0);
}

#[test]
fn cross_node_edge_adds_both_directions() {
    let cfg = chain_config(
        vec![vec![0, 10], vec![10, 0]],
        &[("A", 0), ("B", 0), ("C", 1)],
        &[0.0],
        1.0,
    );
    assert_eq!(simulate(&cfg).unwrap().requests[0].response_ms, 35.0);
}

#[test]
fn asymmetric_delays_use_each_direction() {
    let cfg = chain_config(
        vec![vec![0, 7], vec![3, 0]],
        &[("A", 0), ("B", 1), ("C", 1)],
        &[0.0],
        1.0,
    );
    assert_eq!(simulate(&cfg).unwrap().requests[0].response_ms, 25.0);
}

#[test]
fn bandwidth_adds_serialization_time() {
    let mut cfg = chain_config(zeros(2), &[("A", 0), ("B", 1), ("C", 1)], &[0.0], 1.0);
    cfg.templates = templates(&[("chain", chain(5.0, 125_000, 250_000))]);
    // 1 Mbit/s each way: 125 kB -> 1 s, 250 kB -> 2 s on the crossing edge
    cfg.cluster.bandwidths = idyn_core::net::BandwidthMatrix::uniform(2, 1.0);
    cfg.horizon_s = 10.0;
    assert_eq!(simulate(&cfg).unwrap().requests[0].response_ms, 3015.0);
}

#[test]
fn per_hop_overhead_on_colocated_hops() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0], 1.0);
    cfg.per_hop_overhead_ms = 0.18;
    let r = simulate(&cfg).unwrap().requests[0].response_ms;
    assert!((r - (15.0 + 4.0 * 0.18)).abs() < 1e-9, "{r}");
}

#[test]
fn parallel_children_overlap() {
    let t = CallGraphTemplate {
        entry: "A".into(),
        edges: vec![
            TemplateEdge::new("A", "B", 0, 0, InvocationMode::Parallel),
            TemplateEdge::new("A", "C", 0, 0, InvocationMode::Parallel),
        ],
        processing_ms: [("A", 1.0), ("B", 4.0), ("C", 6.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
    };
    let cfg = SimConfig::new(
        cluster(zeros(1), &[("A", 0), ("B", 0), ("C", 0)]),
        templates(&[("p", t.clone())]),
        arrivals("p", &[0.0]),
        1.0,
    );
    let r = simulate(&cfg).unwrap().requests[0].response_ms;
    assert_eq!(r, 7.0);
    assert_eq!(r, t.critical_path_ms());
}

#[test]
fn unplaced_service_is_rejected() {
    let cfg = chain_config(zeros(1), &[("A", 0), ("B", 0)], &[0.0], 1.0);
    let err = simulate(&cfg).unwrap_err().to_string();
    assert!(err.contains("`C`"), "{err}");
}

#[test]
fn unknown_template_is_rejected() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0], 1.0);
    cfg.arrivals[0].request_type = "nope".into();
    assert!(simulate(&cfg).unwrap_err().to_string().contains("nope"));
}

#[test]
fn invalid_config_values() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[2.0], 1.0);
    assert!(simulate(&cfg).is_err(), "horizon before last arrival");
    cfg.horizon_s = 3.0;
    cfg.per_hop_overhead_ms = -1.0;
    assert!(simulate(&cfg).is_err());
}

#[test]
fn arrivals_at_horizon_are_truncated_and_late_ones_dropped() {
    let cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0, 0.99, 1.0], 1.0);
    let m = simulate(&cfg).unwrap();
    assert_eq!(m.requests.len(), 1);
    assert_eq!(m.dropped, 1);
    assert_eq!(m.truncated, 1);
}

#[test]
fn round_robin_per_calling_edge() {
    // two replicas of B on different nodes; alternating requests see the
    // cross-node cost every other time
    let cfg = chain_config(
        vec![vec![0, 10], vec![10, 0]],
        &[("A", 0), ("B", 0), ("B", 1), ("C", 0)],
        &[0.0, 1.0, 2.0, 3.0],
        5.0,
    );
    let r: Vec<f64> = simulate(&cfg).unwrap().requests.iter().map(|r| r.response_ms).collect();
    assert_eq!(r, vec![15.0, 55.0, 15.0, 55.0]);
}

fn single_service(qps: f64, secs: f64) -> Vec<WindowStats> {
    let t = CallGraphTemplate::single("S", 10.0);
    let times: Vec<f64> = (0..(qps * secs) as usize).map(|k| k as f64 / qps).collect();
    let mut cfg = SimConfig::new(
        cluster(zeros(1), &[("S", 0)]),
        templates(&[("s", t)]),
        arrivals("s", &times),
        secs,
    );
    cfg.window_s = 1.0;
    simulate(&cfg).unwrap().windows
}

#[test]
fn queue_bounded_at_service_rate() {
    let w = single_service(100.0, 5.0);
    assert!(w
        .iter()
        .all(|w| (w.avg_ms - 10.0).abs() < 1e-9 && w.p99_ms <= 10.0 + 1e-9));
}

#[test]
fn queue_grows_at_twice_service_rate() {
    let w = single_service(200.0, 6.0);
    assert!(w.len() == 6 && w.iter().all(|w| w.count > 0));
    for pair in w.windows(2) {
        assert!(
            pair[1].avg_ms > pair[0].avg_ms,
            "{:?}",
            w.iter().map(|w| w.avg_ms).collect::<Vec<_>>()
        );
    }
}

#[test]
fn windows_tile_horizon_and_p99_at_least_median() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0, 0.1, 0.2, 2.5], 3.5);
    cfg.window_s = 1.0;
    let m = simulate(&cfg).unwrap();
    let bounds: Vec<(f64, f64)> = m.windows.iter().map(|w| (w.start_s, w.end_s)).collect();
    assert_eq!(bounds, vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 3.5)]);
    assert!(m.windows.iter().all(|w| w.p99_ms >= w.median_ms));
    assert_eq!(m.windows.iter().map(|w| w.count).sum::<usize>(), 4);
}

#[test]
fn requests_end_after_start() {
    let arr = generate_arrivals(
        &[WorkloadPhase::new(5.0, 40.0, &[("mixed", 1.0)])],
        ArrivalLaw::Poisson,
        4,
    )
    .unwrap();
    let tpl = builtin_templates();
    let placement = all_on_zero(tpl.values());
    let pl: Vec<(&str, usize)> = placement.iter().map(|(s, n)| (s.as_str(), *n)).collect();
    let cfg = SimConfig::new(cluster(zeros(1), &pl), tpl, arr, 10.0);
    let m = simulate(&cfg).unwrap();
    assert!(!m.requests.is_empty());
    assert!(m
        .requests
        .iter()
        .all(|r| r.end_s >= r.arrival_s && r.response_ms >= 0.0));
}

#[test]
fn deterministic_given_config() {
    let arr = generate_arrivals(
        &[WorkloadPhase::new(5.0, 60.0, &[("mixed", 1.0)])],
        ArrivalLaw::Poisson,
        11,
    )
    .unwrap();
    let tpl = builtin_templates();
    let services: Vec<String> = all_on_zero(tpl.values()).into_iter().map(|(s, _)| s).collect();
    let pl: Vec<(&str, usize)> = services.iter().enumerate().map(|(i, s)| (s.as_str(), i % 3)).collect();
    let delays = idyn_core::net::generate_delay_matrix(3, 3.0, 40.0, 5).unwrap().values;
    let cfg = SimConfig::new(cluster(delays, &pl), tpl, arr, 8.0);
    assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
}

#[test]
fn zero_network_identity_for_builtins() {
    for (name, t) in builtin_templates() {
        let services: Vec<(String, usize)> = all_on_zero([&t]);
        let pl: Vec<(&str, usize)> = services.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        let cfg = SimConfig::new(
            cluster(zeros(1), &pl),
            templates(&[(&name, t.clone())]),
            arrivals(&name, &[0.0]),
            1.0,
        );
        let r = simulate(&cfg).unwrap().requests[0].response_ms;
        assert!(
            (r - t.critical_path_ms()).abs() < 1e-6,
            "{name}: {r} vs {}",
            t.critical_path_ms()
        );
    }
}

#[test]
fn export_counts_one_request() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0], 1.0);
    cfg.templates = templates(&[("chain", chain(5.0, 100, 300))]);
    let m = simulate(&cfg).unwrap();
    let samples = traffic_export(&m, 0.5).unwrap();
    let last = samples
        .iter()
        .filter(|s| s.source_ms == "A" && s.dest_ms == "B")
        .last()
        .unwrap();
    assert_eq!((last.sent_bytes_total, last.received_bytes_total), (100.0, 300.0));
}

#[test]
fn export_of_empty_run_is_zero() {
    let cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[], 2.0);
    let m = simulate(&cfg).unwrap();
    let samples = traffic_export(&m, 1.0).unwrap();
    assert!(samples
        .iter()
        .all(|s| s.sent_bytes_total == 0.0 && s.received_bytes_total == 0.0));
}

#[test]
fn export_rebuilds_compose_post_topology() {
    let t = compose_post();
    let services = all_on_zero([&t]);
    let pl: Vec<(&str, usize)> = services
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.as_str(), i % 2))
        .collect();
    let arr = generate_arrivals(
        &[WorkloadPhase::new(5.0, 10.0, &[("compose-post", 1.0)])],
        ArrivalLaw::Deterministic,
        0,
    )
    .unwrap();
    let cfg = SimConfig::new(
        cluster(vec![vec![0, 2], vec![2, 0]], &pl),
        templates(&[("compose-post", t.clone())]),
        arr,
        5.0,
    );
    let m = simulate(&cfg).unwrap();
    let g = build_call_graph(None, &traffic_export(&m, 1.0).unwrap(), 1.0).unwrap();
    assert_eq!(g.edge_set(), t.edge_set());
}

#[test]
fn exported_bytes_are_conserved() {
    let arr = generate_arrivals(
        &[WorkloadPhase::new(4.0, 25.0, &[("mixed", 1.0)])],
        ArrivalLaw::Poisson,
        2,
    )
    .unwrap();
    let tpl = builtin_templates();
    let services = all_on_zero(tpl.values());
    let pl: Vec<(&str, usize)> = services
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.as_str(), i % 2))
        .collect();
    let cfg = SimConfig::new(cluster(vec![vec![0, 5], vec![5, 0]], &pl), tpl.clone(), arr, 60.0);
    let m = simulate(&cfg).unwrap();
    assert_eq!(m.dropped, 0);
    let exported: u64 = m.edge_totals().values().map(|e| e.sent + e.received).sum();
    let expected: u64 = m
        .requests
        .iter()
        .map(|r| {
            tpl[&r.request_type]
                .edges
                .iter()
                .map(|e| e.request_bytes + e.response_bytes)
                .sum::<u64>()
        })
        .sum();
    assert_eq!(exported, expected);
}

#[test]
fn sla_series_flags_strict_violations() {
    let mut cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[0.0, 1.0], 2.0);
    cfg.window_s = 1.0;
    let m = simulate(&cfg).unwrap();
    assert_eq!(sla_series(&m, &SlaTarget::avg(15.0)), vec![(0.0, false), (1.0, false)]);
    assert_eq!(sla_series(&m, &SlaTarget::avg(14.9)), vec![(0.0, true), (1.0, true)]);
    let p99 = SlaTarget {
        metric: SlaMetric::P99,
        threshold_ms: 150.0,
    };
    assert!(sla_series(&m, &p99).iter().all(|(_, v)| !v));
}

#[test]
fn stepping_matches_one_shot() {
    let arr = generate_arrivals(
        &[WorkloadPhase::new(4.0, 30.0, &[("mixed", 1.0)])],
        ArrivalLaw::Poisson,
        8,
    )
    .unwrap();
    let tpl = builtin_templates();
    let services = all_on_zero(tpl.values());
    let pl: Vec<(&str, usize)> = services
        .iter()
        .enumerate()
        .map(|(i, (s, _))| (s.as_str(), i % 2))
        .collect();
    let mut cfg = SimConfig::new(cluster(vec![vec![0, 5], vec![9, 0]], &pl), tpl, arr, 5.0);
    cfg.window_s = 1.0;
    let mut sim = Simulator::new(&cfg).unwrap();
    for k in 1..=5 {
        sim.run_until(k as f64 * 0.7);
    }
    assert_eq!(sim.finish(), simulate(&cfg).unwrap());
}

#[test]
fn placement_change_applies_to_later_traffic() {
    let cfg = chain_config(
        vec![vec![0, 10], vec![10, 0]],
        &[("A", 0), ("B", 0), ("C", 1)],
        &[0.0, 1.0],
        2.0,
    );
    let mut sim = Simulator::new(&cfg).unwrap();
    sim.run_until(0.5);
    let moved = cfg
        .cluster
        .apply_decisions(&[idyn_core::cluster::SchedulingDecision::new(
            idyn_core::cluster::ReplicaId::new("C", 0),
            idyn_core::cluster::NodeId(0),
            "test",
        )])
        .unwrap();
    sim.set_placement(&moved.placement).unwrap();
    let r: Vec<f64> = sim.finish().requests.iter().map(|r| r.response_ms).collect();
    assert_eq!(r, vec![35.0, 15.0]);
}

#[test]
fn network_change_applies_to_later_traffic() {
    let cfg = chain_config(
        vec![vec![0, 10], vec![10, 0]],
        &[("A", 0), ("B", 0), ("C", 1)],
        &[0.0, 1.0],
        2.0,
    );
    let mut sim = Simulator::new(&cfg).unwrap();
    sim.run_until(0.5);
    sim.set_network(
        DelayMatrix::from_values(vec![vec![0, 20], vec![20, 0]]).unwrap(),
        cfg.cluster.bandwidths.clone(),
    )
    .unwrap();
    assert!(sim
        .set_network(DelayMatrix::zeros(3), cfg.cluster.bandwidths.clone())
        .is_err());
    let r: Vec<f64> = sim.finish().requests.iter().map(|r| r.response_ms).collect();
    assert_eq!(r, vec![35.0, 55.0]);
}

/// Random tree template over services `s0..sN` (each service called once),
/// random modes and processing times.
fn tree_template() -> impl Strategy<Value = CallGraphTemplate> {
    (2usize..7)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec(any::<bool>(), n - 1),
                proptest::collection::vec(1u32..20, n),
                proptest::collection::vec((0u64..50_000, 0u64..50_000), n - 1),
            )
        })
        .prop_map(|(n, parents, modes, proc_ms, bytes)| {
            let edges = (1..n)
                .map(|c| {
                    let p = parents[c - 1].index(c);
                    let mode = if modes[c - 1] {
                        InvocationMode::Sequential
                    } else {
                        InvocationMode::Parallel
                    };
                    TemplateEdge::new(&format!("s{p}"), &format!("s{c}"), bytes[c - 1].0, bytes[c - 1].1, mode)
                })
                .collect();
            CallGraphTemplate {
                entry: "s0".into(),
                edges,
                processing_ms: (0..n).map(|i| (format!("s{i}"), proc_ms[i] as f64 * 0.5)).collect(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn raising_a_delay_never_speeds_up_a_request(
        t in tree_template(),
        nodes in proptest::collection::vec(0usize..3, 7),
        base in proptest::collection::vec(0u64..30, 9),
        cell in (0usize..3, 0usize..3),
        bump in 1u64..50,
    ) {
        let services: Vec<String> = t.services().iter().map(|s| s.to_string()).collect();
        let pl: Vec<(&str, usize)> = services.iter().enumerate().map(|(i, s)| (s.as_str(), nodes[i])).collect();
        let mut delays = vec![vec![0u64; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    delays[a][b] = base[a * 3 + b];
                }
            }
        }
        let times: Vec<f64> = (0..4).map(|k| k as f64 * 10.0).collect();
        let mut cfg = SimConfig::new(cluster(delays.clone(), &pl), templates(&[("t", t)]), arrivals("t", &times), 60.0);
        cfg.cluster.bandwidths = idyn_core::net::BandwidthMatrix::uniform(3, 100.0);
        let before = simulate(&cfg).unwrap();
        let (a, b) = cell;
        prop_assume!(a != b);
        delays[a][b] += bump;
        cfg.cluster.delays = DelayMatrix::from_values(delays).unwrap();
        let after = simulate(&cfg).unwrap();
        prop_assert_eq!(before.requests.len(), after.requests.len());
        for (x, y) in before.requests.iter().zip(&after.requests) {
            prop_assert!(y.response_ms >= x.response_ms, "{} -> {}", x.response_ms, y.response_ms);
        }
    }

    #[test]
    fn zero_network_identity_random_trees(t in tree_template()) {
        let services: Vec<String> = t.services().iter().map(|s| s.to_string()).collect();
        let pl: Vec<(&str, usize)> = services.iter().map(|s| (s.as_str(), 0)).collect();
        let expected = t.critical_path_ms();
        let cfg = SimConfig::new(cluster(zeros(1), &pl), templates(&[("t", t)]), arrivals("t", &[0.0]), 1.0);
        let r = simulate(&cfg).unwrap().requests[0].response_ms;
        prop_assert!((r - expected).abs() < 1e-6);
    }
}

#[test]
fn edge_universe_covers_untraversed_edges() {
    // the only arrival is truncated, so nothing is traversed
    let cfg = chain_config(zeros(1), &[("A", 0), ("B", 0), ("C", 0)], &[1.0], 1.0);
    let m = simulate(&cfg).unwrap();
    let names: BTreeSet<(String, String)> = m.edge_totals().keys().cloned().collect();
    assert_eq!(names, chain(5.0, 0, 0).edge_set());
}
