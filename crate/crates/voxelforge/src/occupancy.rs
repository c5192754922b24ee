//! Three-state occupancy grid and the stochastic class-balancing weights
//! used by the training loss.
//!
//! Occluded free space vastly outnumbers occupied space, so the loss keeps
//! every occupied voxel and a random subset of occluded-free voxels sized
//! to roughly twice the occupied count.

use crate::geometry::{BinaryVolume, VoxelGridSpec};
use crate::metrics::{LabelVolume, IGNORE};
use crate::tsdf::{Visibility, VisibilityVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("volume dims {got:?} do not match expected {expected:?}")]
    DimMismatch { got: [usize; 3], expected: [usize; 3] },
}

/// Training/evaluation relevance of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyState {
    /// Non-empty ground truth, inside the room, inside the view.
    OccupiedIn,
    /// Empty ground truth, occluded, inside the room.
    OccludedFreeIn,
    /// Everything else; never weighted, never scored.
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: VoxelGridSpec,
    values: Vec<OccupancyState>,
}

impl OccupancyGrid {
    pub fn from_values(spec: VoxelGridSpec, values: Vec<OccupancyState>) -> Self {
        assert_eq!(values.len(), spec.voxel_count(), "volume size mismatch");
        Self { spec, values }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[OccupancyState] {
        &self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> OccupancyState {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }

    pub fn count(&self, state: OccupancyState) -> usize {
        self.values.iter().filter(|s| **s == state).count()
    }
}

/// Per-voxel loss weights in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    spec: VoxelGridSpec,
    values: Vec<f32>,
}

impl WeightTensor {
    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|w| *w as f64).sum()
    }
}

/// Classifies every voxel from ground truth, visibility, and the room mask.
///
/// IGNORE ground truth counts as neither empty nor occupied; such voxels
/// land in Other unless the label alone would have put them there anyway.
pub fn build_occupancy_grid(
    gt: &LabelVolume,
    vis: &VisibilityVolume,
    room: &BinaryVolume,
) -> Result<OccupancyGrid, OccupancyError> {
    let spec = *gt.spec();
    for dims in [vis.spec().dims, room.spec().dims] {
        if dims != spec.dims {
            return Err(OccupancyError::DimMismatch { got: dims, expected: spec.dims });
        }
    }
    let values = gt
        .values()
        .iter()
        .zip(vis.values())
        .zip(room.values())
        .map(|((&g, &v), &in_room)| {
            if g != 0 && g != IGNORE && in_room && v != Visibility::OutsideView {
                OccupancyState::OccupiedIn
            } else if g == 0 && v == Visibility::Occluded && in_room {
                OccupancyState::OccludedFreeIn
            } else {
                OccupancyState::Other
            }
        })
        .collect();
    Ok(OccupancyGrid { spec, values })
}

/// Samples the loss weights: every OccupiedIn voxel gets 1; each
/// OccludedFreeIn voxel keeps weight 1 independently with probability
/// `r = min(1, 2 * occupied / occluded)`. With no occluded voxels the
/// weights are the occupied indicator alone.
///
/// Deterministic given (grid, seed); draws happen only at occluded voxels
/// in flat scan order.
pub fn balance_weights(grid: &OccupancyGrid, seed: u64) -> WeightTensor {
    let occu = grid.count(OccupancyState::OccupiedIn);
    let occl = grid.count(OccupancyState::OccludedFreeIn);
    let r = if occl == 0 { 0.0 } else { (2.0 * occu as f64 / occl as f64).min(1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = grid
        .values
        .iter()
        .map(|state| match state {
            OccupancyState::OccupiedIn => 1.0,
            OccupancyState::OccludedFreeIn => {
                if rng.gen_bool(r) {
                    1.0
                } else {
                    0.0
                }
            }
            OccupancyState::Other => 0.0,
        })
        .collect();
    WeightTensor { spec: grid.spec, values }
}
