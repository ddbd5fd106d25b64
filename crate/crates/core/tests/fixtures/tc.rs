//! Fixtures behind the checked-in tc golden scripts. Shared by the core
//! tests and the acceptance suite.

#![allow(dead_code)]

use idyn_core::net::{generate_delay_matrix, BandwidthMatrix, DelayMatrix};

/// Golden directory relative to the core crate root.
pub const GOLDEN_DIR: &str = "tests/golden";

/// Worker-1 row of the injection table: (injected, measured) ms per
/// destination worker 2..9.
pub const WORKER1_ROW: [(f64, f64); 8] = [
    (3.0, 3.21),
    (8.0, 8.51),
    (10.0, 11.01),
    (14.0, 14.21),
    (6.0, 6.73),
    (27.0, 28.98),
    (13.0, 13.89),
    (21.0, 22.31),
];

/// Target bandwidths (Mbit/s) between the nine workers.
pub const TARGET_MBIT: [[u32; 9]; 9] = [
    [0, 594, 659, 437, 345, 550, 277, 755, 659],
    [251, 0, 512, 270, 432, 404, 274, 625, 386],
    [721, 512, 0, 485, 300, 439, 340, 234, 751],
    [427, 772, 201, 0, 692, 238, 427, 594, 252],
    [385, 398, 467, 622, 0, 288, 501, 502, 683],
    [675, 779, 247, 229, 484, 0, 429, 230, 698],
    [555, 467, 240, 534, 580, 202, 0, 449, 737],
    [313, 361, 427, 628, 419, 707, 564, 0, 393],
    [605, 400, 346, 693, 372, 748, 783, 566, 0],
];

pub fn names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("k8s-worker-{i}")).collect()
}

/// The two golden fixtures: hand-written n=2 and seeded n=9.
pub fn fixture(n: usize) -> (DelayMatrix, BandwidthMatrix) {
    match n {
        2 => (
            DelayMatrix::from_values(vec![vec![0, 5], vec![12, 0]]).unwrap(),
            BandwidthMatrix::from_values(vec![vec![None, Some(100.0)], vec![Some(250.0), None]]).unwrap(),
        ),
        9 => (
            generate_delay_matrix(9, 3.0, 40.0, 42).unwrap(),
            BandwidthMatrix::from_values(
                (0..9)
                    .map(|i| (0..9).map(|j| (i != j).then(|| TARGET_MBIT[i][j] as f64)).collect())
                    .collect(),
            )
            .unwrap(),
        ),
        _ => panic!("no golden fixture for n={n}"),
    }
}

/// `(file name, contents)` of every golden script for the `n` fixture.
pub fn scripts(n: usize) -> Vec<(String, String)> {
    use idyn_core::cluster::NodeId;
    use idyn_core::net::{emit_bandwidth_script, emit_delay_script, IpMap};

    let (d, b) = fixture(n);
    let names = names(n);
    let ips = IpMap::sequential(&names);
    let mut out = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let delay = emit_delay_script(NodeId(i), &d, &names, &ips, "eth0").unwrap();
        let bw = emit_bandwidth_script(NodeId(i), &b, &names, &ips, "eth0").unwrap();
        out.push((format!("{name}-delay.sh"), delay.render()));
        out.push((format!("{name}-bandwidth.sh"), bw.render()));
        out.push((format!("{name}-teardown.sh"), delay.teardown()));
    }
    out
}
