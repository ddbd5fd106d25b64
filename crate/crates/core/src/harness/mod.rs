//! Scenario files, experiment runs, policy comparisons and their
//! on-disk artifacts.

mod run;
mod scenarios;
mod spec;

pub use run::{
    compare, compare_runs, compare_scenario, comparison_report, output_dir, run_policy, run_scenario,
    write_network_artifacts, ComparisonReport, PolicyDelta, RunReport, RunResult, WindowRow, BASELINE_POLICY,
};
pub use scenarios::{burst_scenario, minimal_scenario, randomized_delay_scenario, BLOCK_QPS, BLOCK_TYPES};
pub use spec::{
    load_spec, parse_spec, BandwidthSpec, ClusterSpec, DelaySpec, NetworkSpec, Scenario, ScenarioSpec, ServiceOverride,
    ServicesSpec, SimSection, TemplateRef, UniformNodes,
};
