//! Semantic scene completion from a single RGB-D view.
//!
//! The pipeline turns a registered color + depth image pair into a pair of
//! flipped-TSDF voxel volumes (one for the visible surface, one for color
//! edges lifted to 3D), feeds them to a small 3D encoder-decoder network,
//! and scores the predicted per-voxel semantic labels against ground truth.
//!
//! Grid convention throughout: `x` is horizontal width, `y` is up, `z` is
//! depth, and the camera frustum faces `+z`. Volumes are stored flat in
//! x-fastest order (`idx = ix + nx * (iy + ny * iz)`).

pub mod cli;
pub mod data;
pub mod edges;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod occupancy;
pub mod rng;
pub mod train;
pub mod tsdf;

pub use geometry::{
    BinaryVolume, CameraIntrinsics, DepthMap, GeometryError, PointCloud, RigidTransform,
    VoxelGridSpec,
};
pub use metrics::{EvalReport, LabelVolume};
pub use network::{CompletionNet, FusionScheme, NetworkConfig, NetworkError, Tensor5};
pub use occupancy::{OccupancyGrid, OccupancyState, WeightTensor};
pub use tsdf::{DistanceVolume, TsdfVolume, Visibility, VisibilityVolume};
