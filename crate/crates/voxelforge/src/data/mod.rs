//! Synthetic scenes with exact ground truth, a small ray-cast renderer, and
//! bit-exact serialization for every artifact the pipeline touches.
//!
//! The renderer and the generator share one coordinate frame with the voxel
//! grid (origin at the grid corner), so ground-truth labels come straight
//! from point-in-solid tests on voxel centers with no resampling step.

mod image_io;
mod manifest;
mod ply;
mod render;
mod resample;
mod scene;
mod volume_io;

pub use image_io::{read_pgm16, read_ppm, write_pgm16, write_ppm};
pub use manifest::{
    camera_path_for, read_camera, read_manifest, write_camera, write_manifest, Manifest,
    ManifestEntry,
};
pub use ply::{export_label_ply, export_tsdf_ply, PlyStats, CLASS_PALETTE};
pub use render::render;
pub use resample::{downsample_labels, downsample_room};
pub use scene::{
    generate_scene, Aabb, BoxObject, Decal, SceneSpec, ROOM_EXTENT, WALL_ALBEDO, WALL_MARGIN,
    WALL_THICKNESS,
};
pub use volume_io::{read_volume, write_volume, VolumeFile, VolumePayload};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::edges::{EdgeError, RgbImage};
use crate::geometry::{BinaryVolume, CameraIntrinsics, DepthMap, GeometryError, RigidTransform};
use crate::metrics::{LabelVolume, MetricsError};
use crate::tsdf::TsdfError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a recognized volume container")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported container version {got}")]
    BadVersion { path: PathBuf, got: u32 },
    #[error("{path}: unknown dtype code {got}")]
    BadDtype { path: PathBuf, got: u8 },
    #[error("{path}: file is truncated")]
    Truncated { path: PathBuf },
    #[error("{path}: {what}")]
    Malformed { path: PathBuf, what: String },
    #[error("volume payload is not {expected}")]
    WrongPayload { expected: &'static str },
    #[error("scene invariant violated: {0}")]
    SceneInvariant(String),
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("grid does not cover the scene: {0}")]
    GridMismatch(String),
    #[error("sample is inconsistent: {0}")]
    InconsistentSample(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Edges(#[from] EdgeError),
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
    #[error(transparent)]
    Labels(#[from] MetricsError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One fully observed training example: the camera view plus volumetric
/// ground truth, all expressed against the same grid frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub gt: LabelVolume,
    pub room: BinaryVolume,
    pub camera: CameraIntrinsics,
    /// Camera-to-grid rigid motion (the grid frame doubles as world frame).
    pub cam_to_grid: RigidTransform,
}

impl Sample {
    pub fn new(
        rgb: RgbImage,
        depth: DepthMap,
        gt: LabelVolume,
        room: BinaryVolume,
        camera: CameraIntrinsics,
        cam_to_grid: RigidTransform,
    ) -> Result<Self, DataError> {
        let s = Self { rgb, depth, gt, room, camera, cam_to_grid };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.rgb.width() != self.camera.width || self.rgb.height() != self.camera.height {
            return Err(DataError::InconsistentSample(format!(
                "rgb is {}x{} but the camera expects {}x{}",
                self.rgb.width(),
                self.rgb.height(),
                self.camera.width,
                self.camera.height
            )));
        }
        if self.depth.width() != self.camera.width || self.depth.height() != self.camera.height {
            return Err(DataError::InconsistentSample(format!(
                "depth is {}x{} but the camera expects {}x{}",
                self.depth.width(),
                self.depth.height(),
                self.camera.width,
                self.camera.height
            )));
        }
        if self.gt.spec() != self.room.spec() {
            return Err(DataError::InconsistentSample(format!(
                "label grid {:?} differs from room grid {:?}",
                self.gt.spec().dims,
                self.room.spec().dims
            )));
        }
        Ok(())
    }
}
