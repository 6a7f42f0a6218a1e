//! Shared oracles and fixtures for the integration suites. Everything here
//! is deliberately independent of the library's geometry kernels: the Monte
//! Carlo estimator only needs a point-in-rotated-rectangle test.
#![allow(dead_code)] // each test binary uses its own subset

use mononext::geometry::BoxSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Is the BEV point inside the rotated footprint of `b`?
fn contains(b: &BoxSpec<f64>, x: f64, z: f64) -> bool {
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let dx = x - b.center[0];
    let dz = z - b.center[2];
    // Inverse of the corner rotation: local forward/lateral coordinates.
    let u = c * dx - s * dz;
    let v = s * dx + c * dz;
    u.abs() <= b.dims[2] / 2.0 && v.abs() <= b.dims[0] / 2.0
}

/// Monte Carlo estimate of the BEV intersection area of two boxes.
pub fn mc_intersection_area(a: &BoxSpec<f64>, b: &BoxSpec<f64>, samples: usize, seed: u64) -> f64 {
    // Sample over the bounding rectangle of both footprints.
    let r_a = (a.dims[0].hypot(a.dims[2])) / 2.0;
    let r_b = (b.dims[0].hypot(b.dims[2])) / 2.0;
    let x_min = (a.center[0] - r_a).min(b.center[0] - r_b);
    let x_max = (a.center[0] + r_a).max(b.center[0] + r_b);
    let z_min = (a.center[2] - r_a).min(b.center[2] - r_b);
    let z_max = (a.center[2] + r_a).max(b.center[2] + r_b);
    let area = (x_max - x_min) * (z_max - z_min);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let x = rng.random_range(x_min..x_max);
        let z = rng.random_range(z_min..z_max);
        if contains(a, x, z) && contains(b, x, z) {
            hits += 1;
        }
    }
    area * hits as f64 / samples as f64
}

/// Monte Carlo BEV IoU oracle.
pub fn mc_bev_iou(a: &BoxSpec<f64>, b: &BoxSpec<f64>, samples: usize, seed: u64) -> f64 {
    let inter = mc_intersection_area(a, b, samples, seed);
    let union = a.dims[0] * a.dims[2] + b.dims[0] * b.dims[2] - inter;
    inter / union
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoxSpec<f64> {
    BoxSpec::new(
        [
            rng.random_range(-4.0..4.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-4.0..4.0),
        ],
        [
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..6.0),
        ],
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        0,
    )
}
