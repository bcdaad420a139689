//! Seeded random scenarios for property sweeps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tiersplat::arp::Scenario;
use tiersplat::costmodel::{CostCurve, CurveKind, DeviceProfile, EdgeProfile, ProfileSamples};
use tiersplat::geometry::{BoundingBox, Camera, CameraSet, Point2};

pub struct Shape {
    pub edges: (usize, usize),
    pub devices: (usize, usize),
    pub cameras: (usize, usize),
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            edges: (2, 4),
            devices: (1, 3),
            cameras: (20, 120),
        }
    }
}

/// Monotone samples at a few counts with per-segment slopes drawn from
/// `[lo, hi]`, so curves can bend either way.
pub fn random_curve(rng: &mut ChaCha8Rng, kind: CurveKind, lo: f64, hi: f64) -> CostCurve {
    let mut n = 0u64;
    let mut v = 0.0;
    let mut pts = Vec::new();
    for _ in 0..rng.gen_range(2..=4) {
        let dn = rng.gen_range(3..=15);
        n += dn;
        v += rng.gen_range(lo..=hi) * dn as f64;
        pts.push((n, v));
    }
    CostCurve::fit(ProfileSamples::new(kind, pts)).unwrap()
}

pub fn random_device(rng: &mut ChaCha8Rng, id: u32, speed: f64, cap: usize) -> DeviceProfile {
    DeviceProfile {
        device_id: id,
        train_curve: random_curve(rng, CurveKind::TrainTime, 0.5 * speed, 3.0 * speed),
        init_curve: random_curve(rng, CurveKind::InitTime, 0.0, 0.3 * speed),
        size_curve: random_curve(rng, CurveKind::ModelSize, 0.5, 3.0),
        bandwidth: rng.gen_range(5.0..50.0),
        max_cameras: cap,
    }
}

pub fn random_cameras(rng: &mut ChaCha8Rng, n: usize, bbox: &BoundingBox) -> CameraSet {
    (0..n)
        .map(|i| {
            Camera::new(
                i as u32,
                rng.gen_range(bbox.min_x..bbox.max_x),
                rng.gen_range(bbox.min_y..bbox.max_y),
            )
        })
        .collect()
}

/// Scenario with ample capacity everywhere, so every partition is feasible.
pub fn random_scenario(rng: &mut ChaCha8Rng, shape: &Shape) -> Scenario {
    let bbox = BoundingBox::new(0.0, 0.0, 100.0, 100.0);
    let n = rng.gen_range(shape.cameras.0..=shape.cameras.1);
    let cameras = random_cameras(rng, n, &bbox);
    let edges = (0..rng.gen_range(shape.edges.0..=shape.edges.1))
        .map(|e| {
            let speed = if rng.gen_bool(0.3) {
                rng.gen_range(2.0..5.0)
            } else {
                1.0
            };
            let devices = (0..rng.gen_range(shape.devices.0..=shape.devices.1))
                .map(|d| random_device(rng, d as u32, speed, n))
                .collect();
            EdgeProfile {
                edge_id: e as u32,
                position: Point2::new(rng.gen_range(5.0..95.0), rng.gen_range(5.0..95.0)),
                bandwidth_to_cloud: rng.gen_range(10.0..100.0),
                aggregate_curve: random_curve(rng, CurveKind::AggregateTime, 0.05, 0.5),
                devices,
            }
        })
        .collect();
    Scenario {
        cameras,
        edges,
        bounding_box: bbox,
        step_d: rng.gen_range(2.0..10.0),
        threshold: 0.01,
        max_iterations: 200,
        retrain_epochs: 10,
        seed: rng.gen(),
        cloud_aggregate_curve: rng
            .gen_bool(0.5)
            .then(|| random_curve(rng, CurveKind::AggregateTime, 0.01, 0.1)),
    }
}
