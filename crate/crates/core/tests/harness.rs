use std::fs;
use std::path::Path;

use idyn_core::harness::{
    burst_scenario, compare, compare_runs, compare_scenario, load_spec, minimal_scenario, parse_spec, run_policy,
    run_scenario, ScenarioSpec, TemplateRef, BLOCK_QPS,
};
use idyn_core::workload::CallGraphTemplate;

const RUN_FILES: [&str; 11] = [
    "cluster.json",
    "delays.json",
    "bandwidths.json",
    "arrivals.csv",
    "windows.csv",
    "requests.csv",
    "traffic.csv",
    "events.jsonl",
    "report.json",
    "tc/k8s-worker-1.sh",
    "tc/k8s-worker-1-teardown.sh",
];

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn error_of(spec: &ScenarioSpec) -> String {
    spec.resolve().unwrap_err().to_string()
}

#[test]
fn minimal_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&minimal_scenario(), dir.path()).unwrap();
    for f in RUN_FILES {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    assert_eq!(r.arrivals, 10);
    assert_eq!(r.completed, 10);
    assert_eq!(r.violation_windows, 0);
    assert_eq!(r.invocations, 0);
    // A single service with 2 ms processing and 200 ms spacing never queues.
    assert!(r.windows.iter().all(|w| w.count == 0 || (w.avg_ms - 2.0).abs() < 1e-9));
    let windows = fs::read_to_string(dir.path().join("windows.csv")).unwrap();
    assert_eq!(windows.lines().count(), 1 + 2);
}

#[test]
fn burst_windows_cover_four_blocks() {
    let spec = burst_scenario(8.0);
    let dir = tempfile::tempdir().unwrap();
    let r = run_scenario(&spec, dir.path()).unwrap();
    assert_eq!(r.windows.len(), 32);
    let expected: usize = BLOCK_QPS.iter().map(|q| (*q * 2.0) as usize).sum::<usize>() * 4;
    assert_eq!(r.arrivals, expected);
    let csv = fs::read_to_string(dir.path().join("windows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn burst_callgraph_triggers_once_and_recovers() {
    let spec = burst_scenario(8.0);
    let report = compare(&spec, &["callgraph".to_string()]).unwrap();
    let (base, cg) = (&report.runs[0], &report.runs[1]);
    assert_eq!(base.policy, "spread");
    assert_eq!(cg.invocations, 1);
    let t = cg.first_trigger_s.expect("callgraph run never triggered");
    assert!((8.0..16.0).contains(&t), "trigger at {t}");
    assert!(base.windows[8..16].iter().any(|w| w.violated));
    let d = &report.deltas[1];
    assert!(d.post_trigger_avg_ms.unwrap() < d.baseline_post_trigger_avg_ms.unwrap());
    assert!(cg.violation_windows < base.violation_windows);
}

#[test]
fn comparing_a_policy_with_itself_gives_zero_deltas() {
    let spec = burst_scenario(4.0);
    let (scenario, runs) = compare_runs(&spec, "callgraph", &["callgraph".to_string(), "policy1".to_string()]).unwrap();
    assert_eq!(runs.len(), 1, "aliases are de-duplicated");
    let report = idyn_core::harness::comparison_report(&scenario, &runs);
    let d = &report.deltas[0];
    assert_eq!(d.avg_improvement_pct, 0.0);
    assert_eq!(d.p99_improvement_pct, 0.0);
    assert_eq!(d.violation_windows, d.baseline_violation_windows);
}

#[test]
fn all_runs_share_the_arrivals_digest() {
    let spec = burst_scenario(4.0);
    let policies: Vec<String> = ["callgraph", "latency", "bandwidth", "hybrid"]
        .map(String::from)
        .to_vec();
    let report = compare(&spec, &policies).unwrap();
    assert_eq!(report.runs.len(), 5);
    for r in &report.runs {
        assert_eq!(r.arrivals_sha256, report.arrivals_sha256);
        assert_eq!(r.arrivals, report.runs[0].arrivals);
    }
    let scenario = spec.resolve().unwrap();
    let solo = run_policy(&scenario, "hybrid").unwrap();
    assert_eq!(solo.report.arrivals_sha256, report.arrivals_sha256);
    assert_eq!(solo.report, report.runs[4]);
}

#[test]
fn runs_are_byte_identical() {
    let spec = burst_scenario(4.0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario(&spec, a.path()).unwrap();
    run_scenario(&spec, b.path()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

#[test]
fn comparison_writes_per_policy_dirs() {
    let dir = tempfile::tempdir().unwrap();
    compare_scenario(&burst_scenario(4.0), &["latency".to_string()], dir.path()).unwrap();
    for f in [
        "comparison.json",
        "comparison.csv",
        "spread/windows.csv",
        "latency/report.json",
        "tc/k8s-worker-9.sh",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "start_s,spread_avg_ms,spread_p99_ms,spread_violated,latency_avg_ms,latency_p99_ms,latency_violated"
    );
    assert_eq!(csv.lines().count(), 1 + 16);
}

#[test]
fn spec_json_round_trip_and_file_loading() {
    let spec = burst_scenario(8.0);
    let text = spec.to_json().unwrap();
    assert_eq!(parse_spec(&text).unwrap(), spec);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/scenario.json");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(&path, minimal_scenario().to_json().unwrap()).unwrap();
    let loaded = load_spec(&path).unwrap();
    assert_eq!(loaded.base_dir, dir.path().join("nested"));
    assert_eq!(
        idyn_core::harness::output_dir(&loaded, None),
        dir.path().join("nested/out")
    );
}

#[test]
fn missing_template_is_named_with_its_field() {
    let mut spec = minimal_scenario();
    spec.workload.phases[0].mix = [("pong".to_string(), 1.0)].into_iter().collect();
    let e = error_of(&spec);
    assert!(e.contains("workload.phases[0].mix"), "{e}");
    assert!(e.contains("pong"), "{e}");
}

#[test]
fn field_precise_validation() {
    let mut s = minimal_scenario();
    s.sim.window_s = 0.0;
    assert!(error_of(&s).contains("sim.window_s"));

    let mut s = minimal_scenario();
    s.policy.name = "magic".into();
    assert!(error_of(&s).contains("policy.name"));

    let mut s = minimal_scenario();
    s.sla.threshold_ms = -1.0;
    assert!(error_of(&s).contains("sla.threshold_ms"));

    let mut s = minimal_scenario();
    s.templates.insert("ping".into(), TemplateRef::Builtin("nope".into()));
    assert!(error_of(&s).contains("templates.ping"));

    let mut s = minimal_scenario();
    let mut bad = CallGraphTemplate::single("echo", 1.0);
    bad.entry = "missing".into();
    s.templates.insert("ping".into(), TemplateRef::Inline(bad));
    assert!(error_of(&s).contains("templates.ping"));

    let mut s = minimal_scenario();
    s.sim.horizon_s = Some(0.5);
    assert!(error_of(&s).contains("sim.horizon_s"));
}

#[test]
fn parse_errors_carry_paths() {
    let mut v: serde_json::Value = serde_json::from_str(&minimal_scenario().to_json().unwrap()).unwrap();
    v["policy"]["params"]["top_k"] = serde_json::json!("three");
    let e = parse_spec(&v.to_string()).unwrap_err().to_string();
    assert!(e.contains("policy.params.top_k"), "{e}");

    let mut v: serde_json::Value = serde_json::from_str(&minimal_scenario().to_json().unwrap()).unwrap();
    v["workload"]["sed"] = serde_json::json!(1);
    let e = parse_spec(&v.to_string()).unwrap_err().to_string();
    assert!(e.contains("workload") && e.contains("sed"), "{e}");
}

#[test]
fn capacity_overflow_is_reported_on_services() {
    let mut s = minimal_scenario();
    s.services.cpu_m = 5000;
    assert!(error_of(&s).contains("services"));
}
