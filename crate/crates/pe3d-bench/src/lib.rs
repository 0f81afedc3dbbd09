//! Shared setup for the criterion benches.

use nalgebra::Vector3;
use pe3d_core::encode::FeatureGridSpec;
use pe3d_core::geometry::CameraParams;
use pe3d_core::sim::{default_rig, SimScene};

pub fn bench_rig() -> Vec<CameraParams> {
    default_rig(0.8, 0.3)
}

pub fn bench_scene() -> SimScene {
    SimScene::ground(-2.0)
        .with_sphere(Vector3::new(10.0, 2.0, -0.5), 1.5, 1)
        .with_box(
            Vector3::new(6.0, -6.0, -2.0),
            Vector3::new(8.0, -4.0, 0.0),
            2,
        )
}

pub fn bench_grid() -> FeatureGridSpec {
    FeatureGridSpec::new(16, 44, 16)
}
