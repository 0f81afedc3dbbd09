//! Similarity-map generation and the cohesion metric that quantifies how
//! locally concentrated a PE variant's similarity structure is.

use crate::encode::PeGrid;
use crate::error::{Error, Result};

/// Per-view cosine similarities against one selected reference cell.
/// Masked cells are NaN. Values are stored as f32, the export precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityView {
    pub height: usize,
    pub width: usize,
    values: Vec<f32>,
}

impl SimilarityView {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Cosine similarity of every cell in every view against a reference cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    /// (view, u = column, v = row) of the reference cell.
    pub reference: (usize, usize, usize),
    pub views: Vec<SimilarityView>,
}

/// Compute the per-cell cosine similarity between the reference cell's PE
/// and every cell of every view. The reference must be unmasked with a
/// norm above 1e-12; masked cells come out as NaN.
pub fn similarity_map(
    pes: &[PeGrid],
    ref_view: usize,
    ref_u: usize,
    ref_v: usize,
) -> Result<SimilarityMap> {
    let reference = pes.get(ref_view).ok_or_else(|| Error::Config {
        path: "ref.view".into(),
        message: format!("view {ref_view} out of range ({} views)", pes.len()),
    })?;
    if ref_v >= reference.height || ref_u >= reference.width {
        return Err(Error::Config {
            path: "ref".into(),
            message: format!(
                "cell (u={ref_u}, v={ref_v}) outside {}x{} grid",
                reference.width, reference.height
            ),
        });
    }
    if reference.masked(ref_v, ref_u) {
        return Err(Error::Config {
            path: "ref".into(),
            message: "reference cell is masked".into(),
        });
    }
    let ref_pe = reference.cell(ref_v, ref_u);
    let ref_norm = ref_pe.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ref_norm <= 1e-12 {
        return Err(Error::ZeroReferenceVector { norm: ref_norm });
    }
    let views = pes
        .iter()
        .map(|pe| {
            let mut values = Vec::with_capacity(pe.height * pe.width);
            for row in 0..pe.height {
                for col in 0..pe.width {
                    if pe.masked(row, col) {
                        values.push(f32::NAN);
                        continue;
                    }
                    let cell = pe.cell(row, col);
                    let norm = cell.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm <= 1e-300 {
                        values.push(f32::NAN);
                        continue;
                    }
                    let dot: f64 = cell.iter().zip(ref_pe).map(|(a, b)| a * b).sum();
                    values.push((dot / (norm * ref_norm)) as f32);
                }
            }
            SimilarityView::new(pe.height, pe.width, values)
        })
        .collect();
    Ok(SimilarityMap {
        reference: (ref_view, ref_u, ref_v),
        views,
    })
}

/// In-object mean, background mean and their difference across all views
/// of a similarity map. The reference cell itself is excluded from the
/// in-object mean; NaN (masked) cells are excluded from both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohesionMetric {
    pub in_object_mean: f64,
    pub background_mean: f64,
    pub margin: f64,
}

/// `object_mask` concatenates the per-view cell masks in view order, the
/// same layout the map's views use.
///
/// Object pixels count across every view (the same object seen from two
/// cameras is still the same object); background pixels are drawn from the
/// reference pixel's own view, mirroring the front-view selection the
/// similarity figures use.
pub fn cohesion_metric(map: &SimilarityMap, object_mask: &[bool]) -> Result<CohesionMetric> {
    let total: usize = map.views.iter().map(|v| v.height * v.width).sum();
    if object_mask.len() != total {
        return Err(Error::ShapeMismatch {
            expected: format!("{total} mask entries"),
            got: format!("{}", object_mask.len()),
        });
    }
    let (ref_view, ref_u, ref_v) = map.reference;
    let mut in_sum = 0.0;
    let mut in_count = 0usize;
    let mut bg_sum = 0.0;
    let mut bg_count = 0usize;
    let mut offset = 0usize;
    for (view, sim) in map.views.iter().enumerate() {
        for row in 0..sim.height {
            for col in 0..sim.width {
                let value = sim.value(row, col);
                if value.is_nan() {
                    continue;
                }
                if view == ref_view && col == ref_u && row == ref_v {
                    continue;
                }
                if object_mask[offset + row * sim.width + col] {
                    in_sum += value as f64;
                    in_count += 1;
                } else if view == ref_view {
                    bg_sum += value as f64;
                    bg_count += 1;
                }
            }
        }
        offset += sim.height * sim.width;
    }
    if in_count == 0 {
        return Err(Error::EmptyRegion {
            which: "in-object".into(),
        });
    }
    if bg_count == 0 {
        return Err(Error::EmptyRegion {
            which: "background".into(),
        });
    }
    let in_object_mean = in_sum / in_count as f64;
    let background_mean = bg_sum / bg_count as f64;
    Ok(CohesionMetric {
        in_object_mean,
        background_mean,
        margin: in_object_mean - background_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bins::{make_bins, BinMethod};
    use crate::encode::{
        pe_camera_ray, pe_oracle_point, FeatureGridSpec, MlpParams, PeVariant, SineSpec,
    };
    use crate::geometry::PerceptionRegion;
    use crate::sim::{default_rig, render, SimScene, DEFAULT_STRIDE};
    use nalgebra::Vector3;

    fn constant_grid(value: f64) -> PeGrid {
        let mut pe = PeGrid::zeros(4, 2, 3, PeVariant::Pe2d);
        for row in 0..2 {
            for col in 0..3 {
                pe.cell_mut(row, col).fill(value);
            }
        }
        pe
    }

    #[test]
    fn reference_similarity_is_one_and_negation_is_minus_one() {
        let mut pe = constant_grid(0.5);
        for c in pe.cell_mut(1, 2) {
            *c = -*c;
        }
        let map = similarity_map(&[pe], 0, 0, 0).unwrap();
        assert_eq!(map.views[0].value(0, 0), 1.0);
        assert_eq!(map.views[0].value(1, 2), -1.0);
    }

    #[test]
    fn masked_cells_are_nan() {
        let mut pe = constant_grid(1.0);
        pe.set_masked(0, 1, true);
        let map = similarity_map(&[pe], 0, 0, 0).unwrap();
        assert!(map.views[0].value(0, 1).is_nan());
    }

    #[test]
    fn zero_reference_is_rejected() {
        let pe = constant_grid(0.0);
        assert!(matches!(
            similarity_map(&[pe], 0, 0, 0),
            Err(Error::ZeroReferenceVector { .. })
        ));
    }

    #[test]
    fn constant_pe_has_zero_margin() {
        let pe = constant_grid(0.7);
        let map = similarity_map(&[pe], 0, 0, 0).unwrap();
        let mut mask = vec![false; 6];
        mask[1] = true;
        mask[2] = true;
        let m = cohesion_metric(&map, &mask).unwrap();
        assert_eq!(m.margin, 0.0);
    }

    #[test]
    fn empty_regions_are_errors() {
        let pe = constant_grid(0.7);
        let map = similarity_map(&[pe], 0, 0, 0).unwrap();
        assert!(matches!(
            cohesion_metric(&map, &vec![true; 6]),
            Err(Error::EmptyRegion { .. })
        ));
        assert!(matches!(
            cohesion_metric(&map, &vec![false; 6]),
            Err(Error::EmptyRegion { .. })
        ));
    }

    /// Desk-scale reproduction of the similarity-locality finding: with a
    /// wall behind the object, camera-ray PE cannot separate the object
    /// from the surface directly behind it (same rays, different depth),
    /// while the oracle point PE can. In-object pixels span the two
    /// overlapping views; background pixels are the reference view's other
    /// scene surfaces.
    #[test]
    fn oracle_margin_exceeds_camera_ray_margin() {
        let region = PerceptionRegion::default();
        let spec = SineSpec::for_channels(64).unwrap();
        let az = 36.0f64.to_radians();
        let center = Vector3::new(10.0 * az.cos(), 10.0 * az.sin(), 0.0);
        let scene = SimScene::default()
            .with_sphere(center, 1.5, 1)
            .with_background_box(
                Vector3::new(22.0, 8.0, -3.0),
                Vector3::new(27.0, 28.0, 4.0),
                2,
            );
        let rig = default_rig(0.8, 0.3);
        let grid = FeatureGridSpec::new(16, 44, DEFAULT_STRIDE);
        let views: Vec<_> = rig
            .iter()
            .map(|cam| render(&scene, cam, grid).unwrap())
            .collect();
        let mut object_mask = Vec::new();
        for view in &views {
            object_mask.extend(view.object_mask(&scene));
        }
        let per_view = 16 * 44;
        let ref_cell = (0..per_view)
            .filter(|&i| object_mask[i])
            .nth(1)
            .expect("object visible in view 0");
        let (ref_v, ref_u) = (ref_cell / 44, ref_cell % 44);
        assert!(
            object_mask[per_view..2 * per_view].iter().any(|m| *m),
            "object must also be visible in the adjacent view"
        );

        let point_mlp = MlpParams::point_encoder(64, 256, &spec, 0);
        let bins = make_bins(BinMethod::Lid, 1.0, 61.0, 64).unwrap();
        let ray_mlp = MlpParams::ray_encoder(64, 256, &spec, 64, 0);
        let oracle_grids: Vec<_> = rig
            .iter()
            .zip(&views)
            .map(|(cam, view)| {
                pe_oracle_point(&view.depth, cam, &region, &point_mlp, &spec, 16).unwrap()
            })
            .collect();
        // Background pixels are pixels of the scene: carry the render
        // validity over to the (scene-independent) ray grids so both
        // variants rank the same cell population.
        let ray_grids: Vec<_> = rig
            .iter()
            .zip(&views)
            .map(|(cam, view)| {
                let mut g = pe_camera_ray(cam, &bins, &ray_mlp, &region, &spec, grid).unwrap();
                for row in 0..g.height {
                    for col in 0..g.width {
                        if !view.depth.is_valid(row, col) {
                            g.set_masked(row, col, true);
                        }
                    }
                }
                g
            })
            .collect();

        let oracle_map = similarity_map(&oracle_grids, 0, ref_u, ref_v).unwrap();
        let ray_map = similarity_map(&ray_grids, 0, ref_u, ref_v).unwrap();
        let m_oracle = cohesion_metric(&oracle_map, &object_mask).unwrap();
        let m_ray = cohesion_metric(&ray_map, &object_mask).unwrap();
        println!("oracle margin {:.5}, camera-ray margin {:.5}", m_oracle.margin, m_ray.margin);
        assert!(
            m_oracle.margin > 0.0,
            "oracle margin not positive: {m_oracle:?}"
        );
        assert!(
            m_oracle.margin > m_ray.margin,
            "oracle {m_oracle:?} vs camera-ray {m_ray:?}"
        );
    }
}
