//! Angular discrepancy between a camera ray and the range-sensor ray
//! through the same 3D point, plus generators for the ray-style PE point
//! sets.
//!
//! The discrepancy model is planar (top-down): the camera sits `d_lc`
//! meters along its own view direction from the rig origin and `delta`
//! meters perpendicular to it, and the target point lies at camera-view
//! depth `d` with camera-ray azimuth `alpha_c`.

use nalgebra::Vector3;

use crate::bins::DepthBins;
use crate::error::{Error, Result};
use crate::geometry::{back_project, CameraParams};

/// Planar camera/sensor ray configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayGeometry {
    /// Camera-ray azimuth, radians, |alpha_c| < pi/2.
    pub alpha_c: f64,
    /// Depth of the point along the camera view direction, meters.
    pub d: f64,
    /// Camera offset from the rig origin along the view direction, meters.
    pub d_lc: f64,
    /// Camera offset perpendicular to the view direction, meters.
    pub delta: f64,
}

impl RayGeometry {
    pub fn new(alpha_c: f64, d: f64, d_lc: f64, delta: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::NonPositiveDepth { depth: d });
        }
        if d_lc < 0.0 || delta < 0.0 || alpha_c.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config {
                path: "ray_geometry".into(),
                message: format!(
                    "require d_lc >= 0, delta >= 0, |alpha_c| < pi/2; got d_lc={d_lc}, delta={delta}, alpha_c={alpha_c}"
                ),
            });
        }
        Ok(Self {
            alpha_c,
            d,
            d_lc,
            delta,
        })
    }
}

/// `Dis = 1 - cos(alpha_c - arctan((tan(alpha_c) + delta/d) / (1 + d_lc/d)))`,
/// the cosine gap between the camera ray and the origin ray through the
/// same point. Dimensionless, in [0, 2]; depends only on the ratios
/// `d_lc/d` and `delta/d`.
pub fn discrepancy(g: &RayGeometry) -> f64 {
    let sensor_azimuth = ((g.alpha_c.tan() + g.delta / g.d) / (1.0 + g.d_lc / g.d)).atan();
    1.0 - (g.alpha_c - sensor_azimuth).cos()
}

/// The same quantity from explicit planar vectors: camera at the origin of
/// a 2D slice looking along +y, sensor at `(-delta, -d_lc)`, point at
/// `(d * tan(alpha_c), d)`. Kept as an independent cross-check of
/// [`discrepancy`].
pub fn discrepancy_from_vectors(g: &RayGeometry) -> f64 {
    let point = [g.d * g.alpha_c.tan(), g.d];
    let cam_ray = point;
    let sensor_ray = [point[0] + g.delta, point[1] + g.d_lc];
    let dot = cam_ray[0] * sensor_ray[0] + cam_ray[1] * sensor_ray[1];
    let n1 = (cam_ray[0] * cam_ray[0] + cam_ray[1] * cam_ray[1]).sqrt();
    let n2 = (sensor_ray[0] * sensor_ray[0] + sensor_ray[1] * sensor_ray[1]).sqrt();
    1.0 - dot / (n1 * n2)
}

/// Frustum points along the ray through pixel `(u, v)`: one back-projected
/// point per bin center, in ascending depth order. All returned points are
/// collinear with the camera center.
pub fn camera_ray_points(
    u: f64,
    v: f64,
    cam: &CameraParams,
    bins: &DepthBins,
) -> Result<Vec<Vector3<f64>>> {
    bins.centers()
        .iter()
        .map(|&d| back_project(u, v, d, cam))
        .collect()
}

/// Single fixed-depth point on the ray through pixel `(u, v)`. Together
/// with the rig origin it fixes the origin-ray direction.
pub fn lidar_ray_point(u: f64, v: f64, cam: &CameraParams, fixed_d: f64) -> Result<Vector3<f64>> {
    back_project(u, v, fixed_d, cam)
}
