//! Network dynamics: delay/bandwidth generation, tc emission, measurement.

mod matrix;
mod measure;
mod tc;

pub(crate) use matrix::seeded_rng;
pub use matrix::{
    generate_bandwidth_matrix, generate_delay_matrix, BandwidthMatrix, BandwidthParams, DelayMatrix, DelayParams,
};
pub use measure::{
    simulate_bandwidth_measurement, simulate_delay_measurement, MeasurementKind, MeasurementReport, NoiseParams,
    SparseMatrix,
};
pub use tc::{
    class_minor, emit_bandwidth_script, emit_delay_script, IpMap, TcEmitter, TcScript, DEFAULT_CLASS_MINOR,
    UNSHAPED_RATE,
};
