//! Surround-view 3D positional encodings for cross-attention detection,
//! at desk scale: pinhole geometry, depth-bin discretization, the
//! camera-ray/sensor-ray discrepancy model, PE grid generators (2D,
//! camera-ray, fixed-depth ray, oracle point, depth-guided point, top-k),
//! depth-head losses with analytic gradients, an analytic six-camera
//! simulator, and a toy cross-attention detector that orders PE variants
//! by localization quality.

#![warn(clippy::all)]

pub mod analysis;
pub mod bins;
pub mod depth;
pub mod detector;
pub mod encode;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod ray;
pub mod rng;
pub mod sim;

pub use analysis::{cohesion_metric, similarity_map, CohesionMetric, SimilarityMap};
pub use bins::{bracket, make_bins, BinMethod, DepthBins};
pub use depth::{
    depth_loss, dfl_loss, expected_depth, fuse_depth, smooth_l1, DepthDistribution, DepthHead,
    DepthLossWeights, FusionWeight,
};
pub use detector::{
    ablation_suite, decode, fuse_features, greedy_assign, standard_scenes, train_toy,
    DecoderState, FeatureGrid, PeVariantConfig, PointAwareFeatures, SuiteKind, SuiteRow,
    TrainConfig, TrainOutcome,
};
pub use encode::{
    encode_anchors, encode_point, encode_point_backward, pe2d, pe_camera_ray, pe_depth_point,
    pe_lidar_ray, pe_oracle_point, pe_topk, sine_encode, AnchorPoints, FeatureGridSpec, MlpParams,
    PeGrid, PeVariant, SineSpec, TopKParams,
};
pub use error::{Error, Result};
pub use geometry::{
    back_project, back_project_grid, normalize_grid, project, CameraParams, DepthMap, GridFrame,
    PerceptionRegion, PointGrid3D,
};
pub use ray::{camera_ray_points, discrepancy, lidar_ray_point, RayGeometry};
pub use sim::{
    complete_depth, default_rig, project_sparse, render, render_depth, RenderedView, Shape,
    SimScene, SparseDepth,
};
