use idyn_core::cluster::{
    feasible, spread_placement, uniform_nodes, CapacityLedger, ClusterState, NodeId, PodInfo, SchedulingDecision,
};
use idyn_core::net::{BandwidthMatrix, DelayMatrix};
use idyn_core::Error;
use proptest::prelude::*;

/// Pods as `(cpu_m, mem_mib)`, one replica per service `s<i>`.
fn pods(sizes: &[(u64, u64)]) -> Vec<PodInfo> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, (c, m))| PodInfo::new(format!("s{i}"), 0, *c, *m))
        .collect()
}

fn instance() -> impl Strategy<Value = (usize, Vec<(u64, u64)>)> {
    (1usize..6, proptest::collection::vec((50u64..900, 64u64..900), 1..12))
}

/// Spread-placed state, or `None` when the pods cannot all fit.
fn spread_state(n: usize, sizes: &[(u64, u64)]) -> Option<ClusterState> {
    let nodes = uniform_nodes(n, 2000, 2048);
    let pods = pods(sizes);
    let placement = spread_placement(&nodes, &pods).ok()?;
    Some(
        ClusterState::new(
            nodes,
            DelayMatrix::zeros(n),
            BandwidthMatrix::unlimited(n),
            placement,
            pods,
        )
        .unwrap(),
    )
}

#[test]
fn overflowing_move_names_the_node() {
    let s = spread_state(2, &[(1500, 100), (1500, 100)]).unwrap();
    let target = s.placement.node_of(&s.pods[1].replica_id()).unwrap();
    let d = SchedulingDecision::new(s.pods[0].replica_id(), target, "test");
    match s.apply_decisions(&[d]) {
        Err(Error::Infeasible { nodes }) => assert_eq!(nodes, vec![s.nodes[target.0].name.clone()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_replica_and_node() {
    let s = spread_state(2, &[(100, 100)]).unwrap();
    let ghost = SchedulingDecision::new(PodInfo::new("ghost", 0, 1, 1).replica_id(), NodeId(0), "x");
    assert!(matches!(s.apply_decisions(&[ghost]), Err(Error::Unknown { .. })));
    let far = SchedulingDecision::new(s.pods[0].replica_id(), NodeId(7), "x");
    assert!(matches!(s.apply_decisions(&[far]), Err(Error::Unknown { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spread_is_feasible_and_complete((n, sizes) in instance()) {
        if let Some(s) = spread_state(n, &sizes) {
            prop_assert!(feasible(&s.placement, &s.nodes, &s.pods).unwrap());
            prop_assert_eq!(s.placement.len(), s.pods.len());
        }
    }

    #[test]
    fn apply_never_yields_infeasible((n, sizes) in instance(), moves in proptest::collection::vec((0usize..12, 0usize..6), 0..8)) {
        let Some(s) = spread_state(n, &sizes) else { return Ok(()) };
        let decisions: Vec<SchedulingDecision> = moves
            .iter()
            .map(|(p, t)| SchedulingDecision::new(s.pods[p % s.pods.len()].replica_id(), NodeId(t % n), "prop"))
            .collect();
        match s.apply_decisions(&decisions) {
            Ok(next) => {
                prop_assert!(feasible(&next.placement, &next.nodes, &next.pods).unwrap());
                for d in &decisions {
                    let last = decisions.iter().rev().find(|x| x.replica == d.replica).unwrap();
                    prop_assert_eq!(next.placement.node_of(&d.replica), Some(last.target));
                }
            }
            Err(Error::Infeasible { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn apply_empty_is_identity((n, sizes) in instance()) {
        let Some(s) = spread_state(n, &sizes) else { return Ok(()) };
        prop_assert_eq!(s.apply_decisions(&[]).unwrap(), s);
    }

    #[test]
    fn ledger_alloc_dealloc_restores((n, sizes) in instance(), node in 0usize..6) {
        let nodes = uniform_nodes(n, 2000, 2048);
        let mut ledger = CapacityLedger::new(&nodes);
        let node = NodeId(node % n);
        let before: Vec<(i64, i64)> = (0..n).map(|i| (ledger.free_cpu(NodeId(i)), ledger.free_mem(NodeId(i)))).collect();
        let pods = pods(&sizes);
        for p in &pods {
            ledger.allocate(node, p);
        }
        for p in pods.iter().rev() {
            ledger.deallocate(node, p);
        }
        let after: Vec<(i64, i64)> = (0..n).map(|i| (ledger.free_cpu(NodeId(i)), ledger.free_mem(NodeId(i)))).collect();
        prop_assert_eq!(before, after);
    }
}
