use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::{Scenario, ScenarioSpec};
use crate::cluster::{cluster_file_json, NodeId, Placement};
use crate::error::{Error, Result};
use crate::graph::write_trace_csv;
use crate::net::TcEmitter;
use crate::policy::{canonical_policy_name, make_policy, rescheduling_loop, write_event_log, LoopEvent, LoopOutcome};
use crate::sim::{traffic_export, RunMetrics, SlaTarget, WindowStats};
use crate::workload::write_arrivals_csv;

pub const BASELINE_POLICY: &str = "spread";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn arrivals_csv(scenario: &Scenario) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_arrivals_csv(&mut buf, scenario.arrivals())?;
    Ok(buf)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Replica -> node name.
fn named_placement(scenario: &Scenario, p: &Placement) -> BTreeMap<String, String> {
    let nodes = &scenario.cluster().nodes;
    p.assignments
        .iter()
        .map(|(id, NodeId(n))| (id.to_string(), nodes[*n].name.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub start_s: f64,
    pub end_s: f64,
    pub avg_ms: f64,
    pub p99_ms: f64,
    pub stdev_ms: f64,
    pub count: usize,
    pub violated: bool,
}

impl WindowRow {
    fn new(w: &WindowStats, sla: &SlaTarget) -> Self {
        WindowRow {
            start_s: w.start_s,
            end_s: w.end_s,
            avg_ms: w.avg_ms,
            p99_ms: w.p99_ms,
            stdev_ms: w.stdev_ms,
            count: w.count,
            violated: sla.violated_by(w),
        }
    }
}

/// Summary written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub policy: String,
    pub arrivals_sha256: String,
    pub arrivals: usize,
    pub completed: usize,
    pub dropped: u64,
    pub truncated: u64,
    pub sla: SlaTarget,
    pub windows: Vec<WindowRow>,
    pub violation_windows: usize,
    pub mean_window_avg_ms: f64,
    pub mean_window_p99_ms: f64,
    pub overall_avg_ms: f64,
    pub overall_p99_ms: f64,
    pub invocations: usize,
    pub moves: usize,
    pub first_trigger_s: Option<f64>,
    pub final_placement: BTreeMap<String, String>,
}

/// One finished run: the loop outcome and its summary.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub outcome: LoopOutcome,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn summarize(scenario: &Scenario, policy: &str, digest: &str, outcome: &LoopOutcome) -> RunReport {
    let m = &outcome.metrics;
    let sla = scenario.loop_cfg.sla;
    let windows: Vec<WindowRow> = m.windows.iter().map(|w| WindowRow::new(w, &sla)).collect();
    let all: Vec<f64> = m.requests.iter().map(|r| r.response_ms).collect();
    let overall = WindowStats::from_responses(0.0, m.horizon_s, &all);
    let mut moves = 0;
    let mut first_trigger_s = None;
    for e in &outcome.events {
        if let LoopEvent::Trigger { t_s, applied, .. } = e {
            moves += applied;
            first_trigger_s.get_or_insert(*t_s);
        }
    }
    RunReport {
        scenario: scenario.spec.name.clone(),
        policy: policy.to_string(),
        arrivals_sha256: digest.to_string(),
        arrivals: scenario.arrivals().len(),
        completed: m.requests.len(),
        dropped: m.dropped,
        truncated: m.truncated,
        sla,
        violation_windows: windows.iter().filter(|w| w.violated).count(),
        mean_window_avg_ms: m.mean_window_avg(),
        mean_window_p99_ms: mean(m.windows.iter().filter(|w| w.count > 0).map(|w| w.p99_ms)),
        overall_avg_ms: overall.avg_ms,
        overall_p99_ms: overall.p99_ms,
        windows,
        invocations: outcome.invocations,
        moves,
        first_trigger_s,
        final_placement: named_placement(scenario, &outcome.final_state.placement),
    }
}

/// Runs `scenario` under `policy` (canonical name or alias) with the
/// spec's filter parameters.
pub fn run_policy(scenario: &Scenario, policy: &str) -> Result<RunResult> {
    let digest = sha256_hex(&arrivals_csv(scenario)?);
    run_with_digest(scenario, policy, &digest)
}

fn run_with_digest(scenario: &Scenario, policy: &str, digest: &str) -> Result<RunResult> {
    let mut p = make_policy(policy, &scenario.spec.policy.params)?;
    let outcome = rescheduling_loop(p.as_mut(), &scenario.sim, &scenario.loop_cfg)?;
    let report = summarize(scenario, p.name(), digest, &outcome);
    Ok(RunResult { report, outcome })
}

/// Writes the network artifacts: matrices, cluster file and per-node tc
/// scripts with their teardown counterparts.
pub fn write_network_artifacts(scenario: &Scenario, dir: &Path) -> Result<()> {
    let c = scenario.cluster();
    write(&dir.join("cluster.json"), cluster_file_json(&c.nodes)?)?;
    write(&dir.join("delays.json"), c.delays.to_json()?)?;
    write(&dir.join("bandwidths.json"), c.bandwidths.to_json()?)?;
    let names = scenario.node_names();
    let emitter = TcEmitter::new(&names, &scenario.ips, &scenario.spec.interface);
    for (i, name) in names.iter().enumerate() {
        let script = emitter.combined_script(NodeId(i), &c.delays, &c.bandwidths)?;
        write(&dir.join("tc").join(format!("{name}.sh")), script.render())?;
        write(&dir.join("tc").join(format!("{name}-teardown.sh")), script.teardown())?;
    }
    Ok(())
}

fn write_metrics(dir: &Path, metrics: &RunMetrics, sla: &SlaTarget) -> Result<()> {
    let mut buf = Vec::new();
    metrics.write_windows_csv(&mut buf, Some(sla))?;
    write(&dir.join("windows.csv"), buf)?;
    let mut buf = Vec::new();
    metrics.write_requests_csv(&mut buf)?;
    write(&dir.join("requests.csv"), buf)?;
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &traffic_export(metrics, metrics.window_s)?)?;
    write(&dir.join("traffic.csv"), buf)
}

fn write_run(dir: &Path, scenario: &Scenario, run: &RunResult) -> Result<()> {
    write_metrics(dir, &run.outcome.metrics, &scenario.loop_cfg.sla)?;
    let mut buf = Vec::new();
    write_event_log(&mut buf, &run.outcome.events)?;
    write(&dir.join("events.jsonl"), buf)?;
    let mut report = serde_json::to_string_pretty(&run.report)?;
    report.push('\n');
    write(&dir.join("report.json"), report)
}

/// Output directory: `override_dir` if set, else the spec's own
/// (relative to the spec file).
pub fn output_dir(spec: &ScenarioSpec, override_dir: Option<&Path>) -> PathBuf {
    match override_dir {
        Some(d) => d.to_path_buf(),
        None if spec.output_dir.is_absolute() => spec.output_dir.clone(),
        None => spec.base_dir.join(&spec.output_dir),
    }
}

/// Runs the spec's policy and writes every artifact into `out`:
/// `cluster.json`, `delays.json`, `bandwidths.json`, `tc/*.sh`,
/// `arrivals.csv`, `windows.csv`, `requests.csv`, `traffic.csv`,
/// `events.jsonl` and `report.json`.
pub fn run_scenario(spec: &ScenarioSpec, out: &Path) -> Result<RunReport> {
    let scenario = spec.resolve()?;
    let arrivals = arrivals_csv(&scenario)?;
    let digest = sha256_hex(&arrivals);
    let run = run_with_digest(&scenario, &spec.policy.name, &digest)?;
    write_network_artifacts(&scenario, out)?;
    write(&out.join("arrivals.csv"), &arrivals)?;
    write_run(out, &scenario, &run)?;
    Ok(run.report)
}

/// Per-policy headline numbers relative to the baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDelta {
    pub policy: String,
    /// Positive when the policy is faster than the baseline.
    pub avg_improvement_pct: f64,
    pub p99_improvement_pct: f64,
    pub violation_windows: usize,
    pub baseline_violation_windows: usize,
    pub first_trigger_s: Option<f64>,
    /// Mean windowed avg from the first trigger on, for policy and baseline.
    pub post_trigger_avg_ms: Option<f64>,
    pub baseline_post_trigger_avg_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    /// Every run consumed the arrivals with this digest.
    pub arrivals_sha256: String,
    pub sla: SlaTarget,
    pub baseline: String,
    pub runs: Vec<RunReport>,
    pub deltas: Vec<PolicyDelta>,
}

fn improvement(base: f64, value: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - value) / base * 100.0
    }
}

fn avg_from(r: &RunReport, t: f64) -> f64 {
    mean(
        r.windows
            .iter()
            .filter(|w| w.start_s >= t - 1e-9 && w.count > 0)
            .map(|w| w.avg_ms),
    )
}

fn delta(base: &RunReport, run: &RunReport) -> PolicyDelta {
    let t = run.first_trigger_s;
    PolicyDelta {
        policy: run.policy.clone(),
        avg_improvement_pct: improvement(base.mean_window_avg_ms, run.mean_window_avg_ms),
        p99_improvement_pct: improvement(base.mean_window_p99_ms, run.mean_window_p99_ms),
        violation_windows: run.violation_windows,
        baseline_violation_windows: base.violation_windows,
        first_trigger_s: t,
        post_trigger_avg_ms: t.map(|t| avg_from(run, t)),
        baseline_post_trigger_avg_ms: t.map(|t| avg_from(base, t)),
    }
}

/// Canonical, de-duplicated policy list with `baseline` first.
fn lineup(baseline: &str, policies: &[String]) -> Result<Vec<&'static str>> {
    let mut out = Vec::new();
    for p in std::iter::once(baseline).chain(policies.iter().map(String::as_str)) {
        let c = canonical_policy_name(p).ok_or_else(|| Error::unknown("policy", p))?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Runs `baseline` and every policy on the identical arrivals, one thread
/// per run. Runs are ordered baseline first, then as listed.
pub fn compare_runs(spec: &ScenarioSpec, baseline: &str, policies: &[String]) -> Result<(Scenario, Vec<RunResult>)> {
    let scenario = spec.resolve()?;
    let names = lineup(baseline, policies)?;
    let digest = sha256_hex(&arrivals_csv(&scenario)?);
    let results: Vec<Result<RunResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = names
            .iter()
            .map(|name| {
                let (scenario, digest) = (&scenario, &digest);
                s.spawn(move || run_with_digest(scenario, name, digest))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((scenario, runs))
}

pub fn comparison_report(scenario: &Scenario, runs: &[RunResult]) -> ComparisonReport {
    let base = &runs[0].report;
    ComparisonReport {
        scenario: scenario.spec.name.clone(),
        arrivals_sha256: base.arrivals_sha256.clone(),
        sla: scenario.loop_cfg.sla,
        baseline: base.policy.clone(),
        runs: runs.iter().map(|r| r.report.clone()).collect(),
        deltas: runs.iter().map(|r| delta(base, &r.report)).collect(),
    }
}

/// Compares `policies` against the spread baseline without writing files.
pub fn compare(spec: &ScenarioSpec, policies: &[String]) -> Result<ComparisonReport> {
    let (scenario, runs) = compare_runs(spec, BASELINE_POLICY, policies)?;
    Ok(comparison_report(&scenario, &runs))
}

/// Like [`compare`], writing shared artifacts into `out`, each run into
/// `out/<policy>/`, plus `comparison.json` and the aligned
/// `comparison.csv`.
pub fn compare_scenario(spec: &ScenarioSpec, policies: &[String], out: &Path) -> Result<ComparisonReport> {
    let (scenario, runs) = compare_runs(spec, BASELINE_POLICY, policies)?;
    write_network_artifacts(&scenario, out)?;
    write(&out.join("arrivals.csv"), arrivals_csv(&scenario)?)?;
    for r in &runs {
        write_run(&out.join(&r.report.policy), &scenario, r)?;
    }
    let report = comparison_report(&scenario, &runs);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write(&out.join("comparison.json"), json)?;
    write(&out.join("comparison.csv"), aligned_csv(&report)?)?;
    Ok(report)
}

/// One row per window: `start_s` then `<policy>_avg_ms`,
/// `<policy>_p99_ms` and `<policy>_violated` for each run.
fn aligned_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["start_s".to_string()];
    for r in &report.runs {
        for col in ["avg_ms", "p99_ms", "violated"] {
            header.push(format!("{}_{col}", r.policy));
        }
    }
    w.write_record(&header)?;
    let rows = report.runs.first().map_or(0, |r| r.windows.len());
    for i in 0..rows {
        let mut rec = vec![format!("{:.3}", report.runs[0].windows[i].start_s)];
        for r in &report.runs {
            let win = &r.windows[i];
            rec.push(format!("{:.3}", win.avg_ms));
            rec.push(format!("{:.3}", win.p99_ms));
            rec.push(win.violated.to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}
