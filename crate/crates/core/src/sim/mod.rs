//! Discrete-event execution of request workloads over a placement.

mod engine;
mod metrics;

pub(crate) use engine::window_bounds;
pub use engine::{simulate, SimConfig, Simulator, DEFAULT_WINDOW_S};
pub use metrics::{
    nearest_rank, sla_series, traffic_export, traffic_samples_at, EdgeBytes, RequestRecord, RunMetrics, SlaTarget,
    Transfer, WindowStats,
};
