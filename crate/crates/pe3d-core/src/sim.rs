//! Synthetic six-camera surround-view rig and analytic scenes.
//!
//! Scenes are lists of exact primitives (ground plane, spheres, axis-aligned
//! boxes), so rendered depth is analytic and tests can hold 1e-6-tight
//! tolerances. The rig origin is the virtual range sensor; cameras sit
//! `d_lc` meters along their own view direction and `delta` meters
//! perpendicular to it.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::encode::FeatureGridSpec;
use crate::error::{Error, Result};
use crate::geometry::{pixel_center, project, CameraParams, DepthMap, PerceptionRegion};

/// Default sensor: 704x256 pixels, ~80 degree horizontal field of view, so
/// six cameras at 60 degree yaw steps overlap by ~20 degrees.
pub const DEFAULT_WIDTH: u32 = 704;
pub const DEFAULT_HEIGHT: u32 = 256;
pub const DEFAULT_FOCAL: f64 = 420.0;
/// Default feature stride (44x16 cells per camera).
pub const DEFAULT_STRIDE: u32 = 16;

const RAY_EPS: f64 = 1e-9;

/// Analytic scene primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    Ground { z: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    #[serde(rename = "box")]
    Cuboid { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    pub fn center(&self) -> Vector3<f64> {
        match self {
            Shape::Ground { z } => Vector3::new(0.0, 0.0, *z),
            Shape::Sphere { center, .. } => Vector3::from_row_slice(center),
            Shape::Cuboid { min, max } => {
                (Vector3::from_row_slice(min) + Vector3::from_row_slice(max)) / 2.0
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Shape::Ground { z } => z.is_finite(),
            Shape::Sphere { center, radius } => {
                center.iter().all(|c| c.is_finite()) && radius.is_finite() && *radius > 0.0
            }
            Shape::Cuboid { min, max } => {
                min.iter().all(|c| c.is_finite())
                    && max.iter().all(|c| c.is_finite())
                    && min.iter().zip(max).all(|(a, b)| a < b)
            }
        }
    }

    /// Smallest ray parameter t > eps with `origin + t * dir` on the
    /// surface, where `dir` need not be normalized (t is then camera depth
    /// when `dir` has unit camera-frame z).
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Ground { z } => {
                if dir.z.abs() < 1e-12 {
                    return None;
                }
                let t = (z - origin.z) / dir.z;
                (t > RAY_EPS).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let c = Vector3::from_row_slice(center);
                let oc = origin - c;
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(&oc);
                let cc = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t1 = (-b - sq) / (2.0 * a);
                let t2 = (-b + sq) / (2.0 * a);
                if t1 > RAY_EPS {
                    Some(t1)
                } else if t2 > RAY_EPS {
                    Some(t2)
                } else {
                    None
                }
            }
            Shape::Cuboid { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for axis in 0..3 {
                    let (o, d) = (origin[axis], dir[axis]);
                    if d.abs() < 1e-12 {
                        if o < min[axis] || o > max[axis] {
                            return None;
                        }
                        continue;
                    }
                    let mut t0 = (min[axis] - o) / d;
                    let mut t1 = (max[axis] - o) / d;
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    t_near = t_near.max(t0);
                    t_far = t_far.min(t1);
                    if t_near > t_far {
                        return None;
                    }
                }
                if t_near > RAY_EPS {
                    Some(t_near)
                } else if t_far > RAY_EPS {
                    Some(t_far)
                } else {
                    None
                }
            }
        }
    }

    /// Unsigned distance to the surface (signed-distance oracle for tests).
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Ground { z } => (p.z - z).abs(),
            Shape::Sphere { center, radius } => {
                ((p - Vector3::from_row_slice(center)).norm() - radius).abs()
            }
            Shape::Cuboid { min, max } => {
                let mut outside = Vector3::zeros();
                let mut min_face = f64::INFINITY;
                for axis in 0..3 {
                    let below = min[axis] - p[axis];
                    let above = p[axis] - max[axis];
                    outside[axis] = below.max(above).max(0.0);
                    min_face = min_face.min(below.abs().min(above.abs()));
                }
                let d_out = outside.norm();
                if d_out > 0.0 {
                    d_out
                } else {
                    min_face
                }
            }
        }
    }
}

/// A primitive with its semantic class and detection-target flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default)]
    pub class: u32,
    #[serde(default)]
    pub object: bool,
}

/// Analytic scene: primitives plus the subset flagged as detection targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SimScene {
    pub primitives: Vec<ScenePrimitive>,
}

impl SimScene {
    pub fn new(primitives: Vec<ScenePrimitive>) -> Self {
        Self { primitives }
    }

    /// Ground plane at `z`, class 0, not a target.
    pub fn ground(z: f64) -> Self {
        Self {
            primitives: vec![ScenePrimitive {
                shape: Shape::Ground { z },
                class: 0,
                object: false,
            }],
        }
    }

    pub fn with_sphere(mut self, center: Vector3<f64>, radius: f64, class: u32) -> Self {
        self.primitives.push(ScenePrimitive {
            shape: Shape::Sphere {
                center: [center.x, center.y, center.z],
                radius,
            },
            class,
            object: true,
        });
        self
    }

    pub fn with_box(mut self, min: Vector3<f64>, max: Vector3<f64>, class: u32) -> Self {
        self.primitives.push(ScenePrimitive {
            shape: Shape::Cuboid {
                min: [min.x, min.y, min.z],
                max: [max.x, max.y, max.z],
            },
            class,
            object: true,
        });
        self
    }

    /// A box that is scenery, not a detection target.
    pub fn with_background_box(
        mut self,
        min: Vector3<f64>,
        max: Vector3<f64>,
        class: u32,
    ) -> Self {
        self.primitives.push(ScenePrimitive {
            shape: Shape::Cuboid {
                min: [min.x, min.y, min.z],
                max: [max.x, max.y, max.z],
            },
            class,
            object: false,
        });
        self
    }

    /// Detection targets as (class, center) pairs.
    pub fn objects(&self) -> Vec<(u32, Vector3<f64>)> {
        self.primitives
            .iter()
            .filter(|p| p.object)
            .map(|p| (p.class, p.shape.center()))
            .collect()
    }

    pub fn validate(&self, region: &PerceptionRegion) -> Result<()> {
        for (i, prim) in self.primitives.iter().enumerate() {
            if !prim.shape.is_finite() {
                return Err(Error::Config {
                    path: format!("primitives[{i}]"),
                    message: "shape parameters must be finite and well-ordered".into(),
                });
            }
            if prim.object {
                let c = prim.shape.center();
                let (_, clamped) = region.normalize_point(c);
                if clamped {
                    return Err(Error::Config {
                        path: format!("primitives[{i}]"),
                        message: format!("object center {c:?} outside the perception region"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Six cameras at 60 degree yaw increments sharing one intrinsics matrix.
/// Camera i looks along `(cos(i*60deg), sin(i*60deg), 0)` from the rig
/// origin offset `d_lc` along the view direction and `delta` perpendicular.
pub fn default_rig(d_lc: f64, delta: f64) -> Vec<CameraParams> {
    let k = Matrix3::new(
        DEFAULT_FOCAL,
        0.0,
        DEFAULT_WIDTH as f64 / 2.0,
        0.0,
        DEFAULT_FOCAL,
        DEFAULT_HEIGHT as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    (0..6)
        .map(|i| {
            let yaw = i as f64 * std::f64::consts::FRAC_PI_3;
            let (sin, cos) = yaw.sin_cos();
            let view = Vector3::new(cos, sin, 0.0);
            let left = Vector3::new(-sin, cos, 0.0);
            // Columns: image right, image down, optical axis (in rig frame).
            let rotation = Matrix3::from_columns(&[
                Vector3::new(sin, -cos, 0.0),
                Vector3::new(0.0, 0.0, -1.0),
                view,
            ]);
            let translation = d_lc * view + delta * left;
            CameraParams::new(k, rotation, translation, DEFAULT_WIDTH, DEFAULT_HEIGHT)
                .expect("rig construction preserves camera invariants")
        })
        .collect()
}

/// One rendered camera view: analytic depth plus per-cell hit bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    /// Class of the nearest hit per cell (meaningless where depth invalid).
    pub class: Vec<u32>,
    /// Index of the hit primitive, -1 where nothing was hit.
    pub prim: Vec<i32>,
}

impl RenderedView {
    /// Cells whose nearest hit is a detection target.
    pub fn object_mask(&self, scene: &SimScene) -> Vec<bool> {
        self.prim
            .iter()
            .map(|&p| p >= 0 && scene.primitives[p as usize].object)
            .collect()
    }
}

/// Cast one ray per feature-cell center and keep the nearest hit. Depth is
/// the camera-frame z of the hit; cells with no hit are invalid.
pub fn render(scene: &SimScene, cam: &CameraParams, grid: FeatureGridSpec) -> Result<RenderedView> {
    let k_inv = cam.intrinsics_inverse()?;
    let mut depth = DepthMap::invalid(grid.height, grid.width);
    let mut class = vec![0u32; grid.height * grid.width];
    let mut prim = vec![-1i32; grid.height * grid.width];
    for row in 0..grid.height {
        let v = pixel_center(row, grid.stride);
        for col in 0..grid.width {
            let u = pixel_center(col, grid.stride);
            // Unnormalized direction with unit camera-frame z, so the ray
            // parameter equals camera depth.
            let dir = cam.rotation * (k_inv * Vector3::new(u, v, 1.0));
            let mut best: Option<(f64, usize)> = None;
            for (i, p) in scene.primitives.iter().enumerate() {
                if let Some(t) = p.shape.intersect(&cam.translation, &dir) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            if let Some((t, i)) = best {
                depth.set(row, col, t);
                class[row * grid.width + col] = scene.primitives[i].class;
                prim[row * grid.width + col] = i as i32;
            }
        }
    }
    Ok(RenderedView { depth, class, prim })
}

/// Depth-only convenience wrapper around [`render`].
pub fn render_depth(scene: &SimScene, cam: &CameraParams, grid: FeatureGridSpec) -> Result<DepthMap> {
    Ok(render(scene, cam, grid)?.depth)
}

/// Sparse projected depth: z-buffered projection of explicit 3D samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    pub map: DepthMap,
}

impl SparseDepth {
    pub fn fill_rate(&self) -> f64 {
        self.map.fill_rate()
    }
}

/// Project point samples into the camera; the nearest depth wins per cell.
pub fn project_sparse(
    points: &[Vector3<f64>],
    cam: &CameraParams,
    grid: FeatureGridSpec,
) -> SparseDepth {
    let mut map = DepthMap::invalid(grid.height, grid.width);
    for p in points {
        let Ok((u, v, d)) = project(*p, cam) else {
            continue;
        };
        if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
            continue;
        }
        let col = (u / grid.stride as f64) as usize;
        let row = (v / grid.stride as f64) as usize;
        if row >= grid.height || col >= grid.width {
            continue;
        }
        if !map.is_valid(row, col) || d < map.depth(row, col) {
            map.set(row, col, d);
        }
    }
    SparseDepth { map }
}

/// Fill every invalid cell with its nearest valid neighbor's depth
/// (Euclidean cell distance, ties broken by row-major scan order of the
/// valid cells). Valid input cells pass through unchanged.
pub fn complete_depth(sparse: &SparseDepth) -> Result<DepthMap> {
    let src = &sparse.map;
    if src.valid_count() == 0 {
        return Err(Error::EmptySparseMap);
    }
    let valid_cells: Vec<(usize, usize)> = (0..src.height)
        .flat_map(|r| (0..src.width).map(move |c| (r, c)))
        .filter(|&(r, c)| src.is_valid(r, c))
        .collect();
    let mut out = DepthMap::constant(src.height, src.width, 0.0);
    for row in 0..src.height {
        for col in 0..src.width {
            if src.is_valid(row, col) {
                out.set(row, col, src.depth(row, col));
                continue;
            }
            let mut best = (usize::MAX, 0.0);
            for &(vr, vc) in &valid_cells {
                let dr = vr as isize - row as isize;
                let dc = vc as isize - col as isize;
                let d2 = (dr * dr + dc * dc) as usize;
                if d2 < best.0 {
                    best = (d2, src.depth(vr, vc));
                }
            }
            out.set(row, col, best.1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::back_project;

    fn grid() -> FeatureGridSpec {
        FeatureGridSpec::new(16, 44, DEFAULT_STRIDE)
    }

    #[test]
    fn rig_yaw_steps_are_sixty_degrees() {
        let rig = default_rig(0.8, 0.3);
        assert_eq!(rig.len(), 6);
        for i in 0..6 {
            let a = rig[i].yaw();
            let b = rig[(i + 1) % 6].yaw();
            let mut diff = (b - a).rem_euclid(std::f64::consts::TAU);
            if diff > std::f64::consts::PI {
                diff -= std::f64::consts::TAU;
            }
            assert!(
                (diff.abs() - std::f64::consts::FRAC_PI_3).abs() < 1e-12,
                "cameras {i}: yaw step {diff}"
            );
        }
    }

    #[test]
    fn rig_origin_is_behind_every_camera() {
        let rig = default_rig(0.6, 0.2);
        for cam in &rig {
            assert!(matches!(
                project(Vector3::zeros(), cam),
                Err(Error::BehindCamera { .. })
            ));
        }
    }

    #[test]
    fn zero_offsets_put_camera_centers_at_origin() {
        for cam in default_rig(0.0, 0.0) {
            assert_eq!(cam.translation, Vector3::zeros());
        }
    }

    #[test]
    fn ground_plane_depth_profile() {
        let scene = SimScene::ground(-2.0);
        let cam = &default_rig(0.0, 0.0)[0];
        let view = render(&scene, cam, grid()).unwrap();
        // Rows above the horizon (pixel center v < cy) see nothing.
        for row in 0..8 {
            for col in 0..44 {
                assert!(!view.depth.is_valid(row, col), "row {row} col {col}");
            }
        }
        // Below the horizon, depth decreases away from the horizon row.
        for col in [0, 21, 43] {
            let mut prev = f64::INFINITY;
            for row in 8..16 {
                let d = view.depth.depth(row, col);
                assert!(view.depth.is_valid(row, col));
                assert!(d < prev, "row {row}: {d} !< {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn sphere_dead_ahead_center_pixel_depth() {
        let d_lc = 0.7;
        let rig = default_rig(d_lc, 0.0);
        let scene = SimScene::default().with_sphere(Vector3::new(10.0, 0.0, 0.0), 1.0, 1);
        let view = render(&scene, &rig[0], grid()).unwrap();
        // Independent quadratic: front camera at (d_lc, 0, 0) looking +x,
        // so the first root is 10 - 1 - d_lc.
        let expected = 10.0 - 1.0 - d_lc;
        // Center pixel (352, 128) sits at the corner of four cells; use the
        // analytic projection instead of a cell center to pin the value.
        let k_inv = rig[0].intrinsics_inverse().unwrap();
        let dir = rig[0].rotation * (k_inv * Vector3::new(352.0, 128.0, 1.0));
        let t = Shape::Sphere {
            center: [10.0, 0.0, 0.0],
            radius: 1.0,
        }
        .intersect(&rig[0].translation, &dir)
        .unwrap();
        assert!((t - expected).abs() < 1e-9, "t = {t}");
        // And the rendered cell nearest the center agrees to within the
        // curvature across one cell.
        let d = view.depth.depth(8, 22);
        assert!((d - expected).abs() < 0.05, "rendered {d}");
    }

    #[test]
    fn valid_cells_back_project_onto_surfaces() {
        let scene = SimScene::ground(-2.0)
            .with_sphere(Vector3::new(12.0, 2.0, 0.0), 1.5, 1)
            .with_box(
                Vector3::new(6.0, -4.0, -2.0),
                Vector3::new(8.0, -2.0, 0.0),
                2,
            );
        let rig = default_rig(0.8, 0.3);
        for cam in &rig {
            let view = render(&scene, cam, grid()).unwrap();
            for row in 0..16 {
                for col in 0..44 {
                    if !view.depth.is_valid(row, col) {
                        continue;
                    }
                    let p = back_project(
                        pixel_center(col, DEFAULT_STRIDE),
                        pixel_center(row, DEFAULT_STRIDE),
                        view.depth.depth(row, col),
                        cam,
                    )
                    .unwrap();
                    let dist = scene
                        .primitives
                        .iter()
                        .map(|pr| pr.shape.surface_distance(&p))
                        .fold(f64::INFINITY, f64::min);
                    assert!(dist < 1e-6, "cell ({row},{col}) off-surface by {dist:e}");
                }
            }
        }
    }

    #[test]
    fn box_face_cells_lie_on_the_face_plane() {
        let scene = SimScene::default().with_box(
            Vector3::new(9.0, -3.0, -2.0),
            Vector3::new(11.0, 3.0, 2.0),
            1,
        );
        let cam = &default_rig(0.0, 0.0)[0];
        let view = render(&scene, cam, grid()).unwrap();
        let mut points = Vec::new();
        for row in 0..16 {
            for col in 0..44 {
                if view.depth.is_valid(row, col) {
                    points.push(
                        back_project(
                            pixel_center(col, DEFAULT_STRIDE),
                            pixel_center(row, DEFAULT_STRIDE),
                            view.depth.depth(row, col),
                            cam,
                        )
                        .unwrap(),
                    );
                }
            }
        }
        assert!(points.len() > 20, "box should cover many cells");
        // Plane-fit residual oracle: all hits are on the x = 9 face.
        for p in &points {
            assert!((p.x - 9.0).abs() < 1e-6, "residual {}", (p.x - 9.0).abs());
        }
    }

    #[test]
    fn overlap_consistency_between_adjacent_cameras() {
        let rig = default_rig(0.8, 0.3);
        // A point in the overlap of cameras 0 (yaw 0) and 1 (yaw 60):
        // azimuth ~30 degrees, depth ~12 m.
        let p = Vector3::new(12.0 * 0.866, 12.0 * 0.5, -0.4);
        for pair in [(0usize, 1usize)] {
            let (ua, va, da) = project(p, &rig[pair.0]).unwrap();
            let (ub, vb, db) = project(p, &rig[pair.1]).unwrap();
            assert!(ua >= 0.0 && ua < DEFAULT_WIDTH as f64 && ub >= 0.0 && ub < DEFAULT_WIDTH as f64);
            let pa = back_project(ua, va, da, &rig[pair.0]).unwrap();
            let pb = back_project(ub, vb, db, &rig[pair.1]).unwrap();
            assert!((pa - pb).amax() < 1e-6);
            assert!((pa - p).amax() < 1e-6);
        }
    }

    #[test]
    fn sparse_projection_empty_and_single_point() {
        let cam = &default_rig(0.5, 0.0)[0];
        let empty = project_sparse(&[], cam, grid());
        assert_eq!(empty.fill_rate(), 0.0);
        assert!(matches!(complete_depth(&empty), Err(Error::EmptySparseMap)));

        let p = Vector3::new(15.0, 0.5, -1.0);
        let sparse = project_sparse(&[p], cam, grid());
        assert_eq!(sparse.map.valid_count(), 1);
        let (u, v, d) = project(p, cam).unwrap();
        let (row, col) = ((v / 16.0) as usize, (u / 16.0) as usize);
        assert!(sparse.map.is_valid(row, col));
        assert_eq!(sparse.map.depth(row, col), d);
    }

    #[test]
    fn sparse_resampling_agrees_with_dense_render() {
        let scene = SimScene::ground(-2.0).with_sphere(Vector3::new(11.0, 1.0, 0.0), 1.0, 1);
        let cam = &default_rig(0.6, 0.2)[0];
        let dense = render_depth(&scene, cam, grid()).unwrap();
        // Resample the rendered surface points and re-project them.
        let mut points = Vec::new();
        for row in 0..16 {
            for col in 0..44 {
                if dense.is_valid(row, col) {
                    points.push(
                        back_project(
                            pixel_center(col, DEFAULT_STRIDE),
                            pixel_center(row, DEFAULT_STRIDE),
                            dense.depth(row, col),
                            cam,
                        )
                        .unwrap(),
                    );
                }
            }
        }
        let sparse = project_sparse(&points, cam, grid());
        for row in 0..16 {
            for col in 0..44 {
                if sparse.map.is_valid(row, col) && dense.is_valid(row, col) {
                    assert!(
                        (sparse.map.depth(row, col) - dense.depth(row, col)).abs() < 1e-6,
                        "cell ({row},{col})"
                    );
                }
            }
        }
    }

    #[test]
    fn completion_identity_on_dense_input() {
        let map = DepthMap::constant(3, 4, 7.0);
        let sparse = SparseDepth { map: map.clone() };
        assert_eq!(complete_depth(&sparse).unwrap(), map);
    }

    #[test]
    fn completion_single_cell_floods_everything() {
        let mut map = DepthMap::invalid(3, 4);
        map.set(1, 2, 9.5);
        let full = complete_depth(&SparseDepth { map }).unwrap();
        for row in 0..3 {
            for col in 0..4 {
                assert_eq!(full.depth(row, col), 9.5);
                assert!(full.is_valid(row, col));
            }
        }
    }

    #[test]
    fn completion_checkerboard_nearest_neighbor() {
        let (h, w) = (5, 6);
        let mut map = DepthMap::invalid(h, w);
        for row in 0..h {
            for col in 0..w {
                if (row + col) % 2 == 0 {
                    map.set(row, col, (row * w + col) as f64 + 1.0);
                }
            }
        }
        let src = map.clone();
        let full = complete_depth(&SparseDepth { map }).unwrap();
        for row in 0..h {
            for col in 0..w {
                if src.is_valid(row, col) {
                    assert_eq!(full.depth(row, col), src.depth(row, col));
                    continue;
                }
                // Filled cells must equal one of the 4-neighbors (all at
                // distance 1, the nearest valid cells on a checkerboard).
                let mut neighbor_depths = Vec::new();
                for (dr, dc) in [(-1i32, 0i32), (0, -1), (0, 1), (1, 0)] {
                    let (nr, nc) = (row as i32 + dr, col as i32 + dc);
                    if nr >= 0 && nr < h as i32 && nc >= 0 && nc < w as i32 {
                        let (nr, nc) = (nr as usize, nc as usize);
                        if src.is_valid(nr, nc) {
                            neighbor_depths.push(src.depth(nr, nc));
                        }
                    }
                }
                assert!(
                    neighbor_depths.contains(&full.depth(row, col)),
                    "cell ({row},{col}) filled with {}",
                    full.depth(row, col)
                );
            }
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let scene = SimScene::ground(-2.0).with_sphere(Vector3::new(10.0, 0.0, 0.0), 1.0, 3);
        let json = serde_json::to_string(&scene).unwrap();
        let back: SimScene = serde_json::from_str(&json).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn object_outside_region_rejected() {
        let region = PerceptionRegion::default();
        let scene = SimScene::default().with_sphere(Vector3::new(100.0, 0.0, 0.0), 1.0, 1);
        assert!(scene.validate(&region).is_err());
        let ok = SimScene::ground(-2.0).with_sphere(Vector3::new(10.0, 0.0, 0.0), 1.0, 1);
        assert!(ok.validate(&region).is_ok());
    }
}
