//! Pinhole camera model, projection/back-projection between pixels and
//! rig-frame 3D points, and perception-region normalization.
//!
//! Conventions used throughout the crate:
//! * the rig frame is the common coordinate system shared by all cameras
//!   (the origin sits at the virtual range sensor);
//! * `rotation`/`translation` map camera-frame points into the rig frame,
//!   `p_rig = R * p_cam + T`;
//! * depth is the camera-frame z coordinate, not the ray length;
//! * feature-grid cell `(row b, col a)` samples the pixel center
//!   `u = (a + 0.5) * stride`, `v = (b + 0.5) * stride`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const DET_EPS: f64 = 1e-12;
const BEHIND_EPS: f64 = 1e-9;
const ROTATION_TOL: f64 = 1e-9;

/// Intrinsics, pose and sensor size of one pinhole camera in the rig frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    /// 3x3 intrinsics in pixels; last row must be (0, 0, 1).
    pub intrinsics: Matrix3<f64>,
    /// Camera-to-rig rotation (orthonormal, det +1).
    pub rotation: Matrix3<f64>,
    /// Camera center in the rig frame, meters.
    pub translation: Vector3<f64>,
    /// Image width in pixels.
    pub width: u32,
    /// Image height in pixels.
    pub height: u32,
}

impl CameraParams {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Check the type invariants: invertible intrinsics with projective last
    /// row, orthonormal right-handed rotation, positive sensor size.
    pub fn validate(&self) -> Result<()> {
        let det = self.intrinsics.determinant();
        if det.abs() <= DET_EPS {
            return Err(Error::NonInvertibleIntrinsics { det });
        }
        let last = self.intrinsics.row(2);
        if (last[0]).abs() > 1e-12 || (last[1]).abs() > 1e-12 || (last[2] - 1.0).abs() > 1e-12 {
            return Err(Error::Config {
                path: "intrinsics".into(),
                message: format!(
                    "last row must be (0, 0, 1), got ({}, {}, {})",
                    last[0], last[1], last[2]
                ),
            });
        }
        let gram = self.rotation.transpose() * self.rotation;
        let mut max_dev: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                max_dev = max_dev.max((gram[(r, c)] - target).abs());
            }
        }
        if max_dev >= ROTATION_TOL {
            return Err(Error::Config {
                path: "rotation".into(),
                message: format!("not orthonormal, max |R'R - I| = {max_dev:e}"),
            });
        }
        let det_r = self.rotation.determinant();
        if (det_r - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Config {
                path: "rotation".into(),
                message: format!("determinant must be +1, got {det_r}"),
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config {
                path: "width/height".into(),
                message: "image dimensions must be positive".into(),
            });
        }
        Ok(())
    }

    /// Inverse intrinsics, or `NonInvertibleIntrinsics`.
    pub fn intrinsics_inverse(&self) -> Result<Matrix3<f64>> {
        let det = self.intrinsics.determinant();
        if det.abs() <= DET_EPS {
            return Err(Error::NonInvertibleIntrinsics { det });
        }
        self.intrinsics
            .try_inverse()
            .ok_or(Error::NonInvertibleIntrinsics { det })
    }

    /// Camera yaw in the rig frame: azimuth of the optical axis.
    pub fn yaw(&self) -> f64 {
        let view = self.rotation * Vector3::new(0.0, 0.0, 1.0);
        view.y.atan2(view.x)
    }
}

/// Axis-aligned 3D box inside which point coordinates are normalized to
/// the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl PerceptionRegion {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        let region = Self {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            z_min: z.0,
            z_max: z.1,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, min, max) in [
            ("x", self.x_min, self.x_max),
            ("y", self.y_min, self.y_max),
            ("z", self.z_min, self.z_max),
        ] {
            if !(max > min) {
                return Err(Error::Config {
                    path: format!("region.{name}"),
                    message: format!("max ({max}) must be strictly greater than min ({min})"),
                });
            }
        }
        Ok(())
    }

    /// Component-wise extent (x_max - x_min, ...), meters.
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.x_max - self.x_min,
            self.y_max - self.y_min,
            self.z_max - self.z_min,
        )
    }

    /// Map a metric rig-frame point into the unit cube, clamping out-of-region
    /// coordinates. Returns the normalized point and whether clamping fired.
    pub fn normalize_point(&self, p: Vector3<f64>) -> (Vector3<f64>, bool) {
        let raw = Vector3::new(
            (p.x - self.x_min) / (self.x_max - self.x_min),
            (p.y - self.y_min) / (self.y_max - self.y_min),
            (p.z - self.z_min) / (self.z_max - self.z_min),
        );
        let clamped = raw.map(|c| c.clamp(0.0, 1.0));
        (clamped, raw != clamped)
    }
}

impl Default for PerceptionRegion {
    /// Conventional surround-view region: x, y in [-61.2, 61.2] m,
    /// z in [-10, 10] m.
    fn default() -> Self {
        Self {
            x_min: -61.2,
            x_max: 61.2,
            y_min: -61.2,
            y_max: 61.2,
            z_min: -10.0,
            z_max: 10.0,
        }
    }
}

/// Coordinate frame tag for [`PointGrid3D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFrame {
    MetricRig,
    Normalized,
}

/// Per-cell 3D coordinates for one camera view, channel-major
/// `[3][height][width]`, with an out-of-region/invalid mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid3D {
    pub height: usize,
    pub width: usize,
    pub frame: GridFrame,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl PointGrid3D {
    pub fn zeros(height: usize, width: usize, frame: GridFrame) -> Self {
        Self {
            height,
            width,
            frame,
            data: vec![0.0; 3 * height * width],
            mask: vec![false; height * width],
        }
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn point(&self, row: usize, col: usize) -> Vector3<f64> {
        let n = self.height * self.width;
        let i = self.idx(row, col);
        Vector3::new(self.data[i], self.data[n + i], self.data[2 * n + i])
    }

    pub fn set_point(&mut self, row: usize, col: usize, p: Vector3<f64>) {
        let n = self.height * self.width;
        let i = self.idx(row, col);
        self.data[i] = p.x;
        self.data[n + i] = p.y;
        self.data[2 * n + i] = p.z;
    }

    pub fn masked(&self, row: usize, col: usize) -> bool {
        self.mask[self.idx(row, col)]
    }

    pub fn set_masked(&mut self, row: usize, col: usize, masked: bool) {
        let i = self.idx(row, col);
        self.mask[i] = masked;
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Dense per-cell depth raster with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    depths: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, depths: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if depths.len() != height * width || valid.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width}"),
                got: format!("{} depths, {} flags", depths.len(), valid.len()),
            });
        }
        Ok(Self {
            height,
            width,
            depths,
            valid,
        })
    }

    pub fn constant(height: usize, width: usize, depth: f64) -> Self {
        Self {
            height,
            width,
            depths: vec![depth; height * width],
            valid: vec![true; height * width],
        }
    }

    pub fn invalid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            depths: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn depth(&self, row: usize, col: usize) -> f64 {
        self.depths[self.idx(row, col)]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, depth: f64) {
        let i = self.idx(row, col);
        self.depths[i] = depth;
        self.valid[i] = true;
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.depths[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn valid_flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn fill_rate(&self) -> f64 {
        self.valid_count() as f64 / (self.height * self.width) as f64
    }
}

/// Pixel center of feature-grid index `i` at the given stride.
#[inline]
pub fn pixel_center(index: usize, stride: u32) -> f64 {
    (index as f64 + 0.5) * stride as f64
}

#[inline]
fn back_project_with_inverse(
    u: f64,
    v: f64,
    depth: f64,
    k_inv: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> Vector3<f64> {
    let ray = k_inv * Vector3::new(u, v, 1.0);
    rotation * (ray * depth) + translation
}

/// Lift pixel `(u, v)` at the given camera-frame depth into the rig frame:
/// `R * K^-1 * depth * (u, v, 1)' + T`.
pub fn back_project(u: f64, v: f64, depth: f64, cam: &CameraParams) -> Result<Vector3<f64>> {
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth { depth });
    }
    let k_inv = cam.intrinsics_inverse()?;
    Ok(back_project_with_inverse(
        u,
        v,
        depth,
        &k_inv,
        &cam.rotation,
        &cam.translation,
    ))
}

/// Project a rig-frame point into pixel coordinates and camera-frame depth.
/// Exact inverse of [`back_project`].
pub fn project(point: Vector3<f64>, cam: &CameraParams) -> Result<(f64, f64, f64)> {
    let p_cam = cam.rotation.transpose() * (point - cam.translation);
    let z = p_cam.z;
    if z <= BEHIND_EPS {
        return Err(Error::BehindCamera { z });
    }
    let h = cam.intrinsics * p_cam;
    Ok((h.x / z, h.y / z, z))
}

/// Back-project every valid depth cell at its pixel center. Invalid cells
/// are emitted masked at the origin; valid cells with non-positive depth
/// are an error.
pub fn back_project_grid(
    depth_map: &DepthMap,
    cam: &CameraParams,
    stride: u32,
) -> Result<PointGrid3D> {
    if stride == 0 {
        return Err(Error::Config {
            path: "stride".into(),
            message: "stride must be >= 1".into(),
        });
    }
    let k_inv = cam.intrinsics_inverse()?;
    let mut grid = PointGrid3D::zeros(depth_map.height, depth_map.width, GridFrame::MetricRig);
    for row in 0..depth_map.height {
        let v = pixel_center(row, stride);
        for col in 0..depth_map.width {
            if !depth_map.is_valid(row, col) {
                grid.set_masked(row, col, true);
                continue;
            }
            let depth = depth_map.depth(row, col);
            if depth <= 0.0 {
                return Err(Error::NonPositiveDepth { depth });
            }
            let u = pixel_center(col, stride);
            let p =
                back_project_with_inverse(u, v, depth, &k_inv, &cam.rotation, &cam.translation);
            grid.set_point(row, col, p);
        }
    }
    Ok(grid)
}

/// Map a metric grid into normalized unit-cube coordinates, clamping
/// out-of-region points and flagging them in the mask.
pub fn normalize_grid(grid: &PointGrid3D, region: &PerceptionRegion) -> PointGrid3D {
    debug_assert_eq!(grid.frame, GridFrame::MetricRig);
    let mut out = PointGrid3D::zeros(grid.height, grid.width, GridFrame::Normalized);
    for row in 0..grid.height {
        for col in 0..grid.width {
            let (norm, clamped) = region.normalize_point(grid.point(row, col));
            out.set_point(row, col, norm);
            out.set_masked(row, col, grid.masked(row, col) || clamped);
        }
    }
    out
}

/// Random valid camera: arbitrary yaw/pitch/roll rotation, offset
/// translation, plausible intrinsics. Test-only sampling helper.
#[cfg(test)]
pub(crate) fn random_camera(rng: &mut impl rand::Rng) -> CameraParams {
    let (yaw, pitch, roll) = (
        rng.gen_range(-3.1..3.1),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    );
    let rot = nalgebra::Rotation3::from_euler_angles(roll, pitch, yaw);
    let fx = rng.gen_range(200.0..800.0);
    let fy = rng.gen_range(200.0..800.0);
    let k = Matrix3::new(fx, 0.0, 352.0, 0.0, fy, 128.0, 0.0, 0.0, 1.0);
    let t = Vector3::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-1.0..1.0),
    );
    CameraParams::new(k, *rot.matrix(), t, 704, 256).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn simple_intrinsics() -> Matrix3<f64> {
        Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 160.0, 0.0, 0.0, 1.0)
    }

    fn axis_camera() -> CameraParams {
        CameraParams::new(
            simple_intrinsics(),
            Matrix3::identity(),
            Vector3::zeros(),
            640,
            320,
        )
        .unwrap()
    }

    #[test]
    fn back_project_principal_ray() {
        let cam = axis_camera();
        let p = back_project(320.0, 160.0, 10.0, &cam).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 10.0));
    }

    #[test]
    fn back_project_identity_intrinsics_applies_translation() {
        let cam = CameraParams::new(
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::new(1.0, 2.0, 3.0),
            10,
            10,
        )
        .unwrap();
        let p = back_project(0.0, 0.0, 5.0, &cam).unwrap();
        assert_eq!(p, Vector3::new(1.0, 2.0, 8.0));
    }

    #[test]
    fn back_project_off_axis_verified_by_forward_projection() {
        let cam = axis_camera();
        let p = back_project(820.0, 160.0, 10.0, &cam).unwrap();
        assert!((p - Vector3::new(10.0, 0.0, 10.0)).norm() < 1e-12, "p = {p:?}");
        let (u, v, d) = project(p, &cam).unwrap();
        assert!((u - 820.0).abs() < 1e-9);
        assert!((v - 160.0).abs() < 1e-9);
        assert!((d - 10.0).abs() < 1e-9);
    }

    #[test]
    fn back_project_rejects_non_positive_depth() {
        let cam = axis_camera();
        assert!(matches!(
            back_project(0.0, 0.0, 0.0, &cam),
            Err(Error::NonPositiveDepth { .. })
        ));
        assert!(matches!(
            back_project(0.0, 0.0, -1.0, &cam),
            Err(Error::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn singular_intrinsics_rejected() {
        let mut k = simple_intrinsics();
        k[(0, 0)] = 0.0;
        k[(0, 1)] = 0.0;
        k[(0, 2)] = 0.0;
        let err = CameraParams::new(k, Matrix3::identity(), Vector3::zeros(), 4, 4);
        assert!(matches!(err, Err(Error::NonInvertibleIntrinsics { .. })));
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        let err = CameraParams::new(simple_intrinsics(), r, Vector3::zeros(), 4, 4);
        assert!(matches!(err, Err(Error::Config { .. })));
    }

    #[test]
    fn project_camera_center_is_behind() {
        let mut rng = seeded_rng(7);
        for _ in 0..10 {
            let cam = random_camera(&mut rng);
            assert!(matches!(
                project(cam.translation, &cam),
                Err(Error::BehindCamera { .. })
            ));
        }
    }

    #[test]
    fn round_trip_1000_seeded_samples() {
        let mut rng = seeded_rng(42);
        for i in 0..1000 {
            let cam = random_camera(&mut rng);
            let u = rng.gen_range(0.0..cam.width as f64);
            let v = rng.gen_range(0.0..cam.height as f64);
            let depth = rng.gen_range(0.1..200.0);
            let p = back_project(u, v, depth, &cam).unwrap();
            let (u2, v2, d2) = project(p, &cam).unwrap();
            let p2 = back_project(u2, v2, d2, &cam).unwrap();
            let err = (p2 - p).amax();
            assert!(err < 1e-9, "sample {i}: round-trip error {err:e}");
        }
    }

    #[test]
    fn depth_is_camera_frame_z_for_any_pose() {
        let mut rng = seeded_rng(11);
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let p_cam = Vector3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.5..50.0),
            );
            let p_rig = cam.rotation * p_cam + cam.translation;
            let (_, _, d) = project(p_rig, &cam).unwrap();
            assert!((d - p_cam.z).abs() < 1e-9, "depth {d} vs z {}", p_cam.z);
        }
    }

    #[test]
    fn grid_matches_scalar_back_projection_exactly() {
        let cam = axis_camera();
        let depth_map = DepthMap::constant(4, 6, 7.5);
        let grid = back_project_grid(&depth_map, &cam, 16).unwrap();
        for row in 0..4 {
            for col in 0..6 {
                let scalar = back_project(
                    pixel_center(col, 16),
                    pixel_center(row, 16),
                    7.5,
                    &cam,
                )
                .unwrap();
                assert_eq!(grid.point(row, col), scalar, "cell ({row},{col})");
            }
        }
    }

    #[test]
    fn grid_constant_depth_identity_camera() {
        let cam = CameraParams::new(
            Matrix3::identity(),
            Matrix3::identity(),
            Vector3::zeros(),
            8,
            8,
        )
        .unwrap();
        let d = 3.0;
        let grid = back_project_grid(&DepthMap::constant(2, 2, d), &cam, 1).unwrap();
        for row in 0..2 {
            for col in 0..2 {
                let expect = Vector3::new(
                    (col as f64 + 0.5) * d,
                    (row as f64 + 0.5) * d,
                    d,
                );
                assert_eq!(grid.point(row, col), expect);
            }
        }
    }

    #[test]
    fn grid_propagates_invalid_cells() {
        let cam = axis_camera();
        let mut dm = DepthMap::constant(2, 2, 5.0);
        dm.clear(0, 1);
        let grid = back_project_grid(&dm, &cam, 16).unwrap();
        assert!(grid.masked(0, 1));
        assert!(!grid.masked(0, 0));
    }

    #[test]
    fn normalize_region_corners_and_midpoint() {
        let region = PerceptionRegion::default();
        let mut grid = PointGrid3D::zeros(1, 3, GridFrame::MetricRig);
        grid.set_point(0, 0, Vector3::new(-61.2, -61.2, -10.0));
        grid.set_point(0, 1, Vector3::new(0.0, 0.0, 0.0));
        grid.set_point(0, 2, Vector3::new(61.2, 61.2, 10.0));
        let norm = normalize_grid(&grid, &region);
        assert_eq!(norm.point(0, 0), Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(norm.point(0, 1), Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(norm.point(0, 2), Vector3::new(1.0, 1.0, 1.0));
        assert!(!norm.masked(0, 0) && !norm.masked(0, 1) && !norm.masked(0, 2));
    }

    #[test]
    fn normalize_clamps_and_masks_outside_points() {
        let region = PerceptionRegion::default();
        let mut grid = PointGrid3D::zeros(1, 1, GridFrame::MetricRig);
        grid.set_point(0, 0, Vector3::new(62.2, 0.0, 0.0));
        let norm = normalize_grid(&grid, &region);
        assert_eq!(norm.point(0, 0).x, 1.0);
        assert!(norm.masked(0, 0));
    }
}
