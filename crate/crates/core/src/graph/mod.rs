//! Traffic ingestion and stress-weighted call-graph construction.

mod callgraph;
mod diff;
mod exposition;
mod sample;

pub use callgraph::{build_call_graph, build_call_graph_over, stress, CallGraph, StressElement};
pub use diff::{graph_diff, EdgeWeight, GraphDelta, WeightChange};
pub use exposition::{
    parse_exposition, parse_exposition_with, render_exposition, LabelMap, LineError, ParsedExposition,
};
pub use sample::{read_trace_csv, write_trace_csv, TrafficSample};
