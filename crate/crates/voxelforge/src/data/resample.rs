//! Block downsampling to the evaluation resolution. Labels use an
//! occupancy-favored vote so thin structures (walls, decal layers) survive
//! a 4x reduction instead of being washed out by the empty majority.

use super::DataError;
use crate::geometry::BinaryVolume;
use crate::metrics::{LabelVolume, IGNORE, SEMANTIC_CLASS_COUNT};

/// A coarse voxel becomes occupied when at least 1/8 of its fine block is,
/// taking the most frequent non-empty class (ties to the smaller id).
/// All-IGNORE blocks stay IGNORE; IGNORE voxels never vote.
pub fn downsample_labels(v: &LabelVolume, factor: usize) -> Result<LabelVolume, DataError> {
    let coarse = v.spec().coarsened(factor)?;
    let mut out = LabelVolume::new_empty(coarse);
    let block = factor * factor * factor;
    for cz in 0..coarse.dims[2] {
        for cy in 0..coarse.dims[1] {
            for cx in 0..coarse.dims[0] {
                let mut counts = [0usize; SEMANTIC_CLASS_COUNT + 1];
                let mut ignored = 0usize;
                for dz in 0..factor {
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let c = v.get(cx * factor + dx, cy * factor + dy, cz * factor + dz);
                            if c == IGNORE {
                                ignored += 1;
                            } else {
                                counts[c as usize] += 1;
                            }
                        }
                    }
                }
                let label = if ignored == block {
                    IGNORE
                } else {
                    let occupied: usize = counts[1..].iter().sum();
                    if occupied * 8 >= block {
                        let best = (1..=SEMANTIC_CLASS_COUNT)
                            .max_by_key(|&c| (counts[c], SEMANTIC_CLASS_COUNT - c))
                            .expect("non-empty class range");
                        best as u8
                    } else {
                        0
                    }
                };
                out.set(cx, cy, cz, label);
            }
        }
    }
    Ok(out)
}

/// Majority vote: the coarse voxel is in-room when at least half its fine
/// block is.
pub fn downsample_room(v: &BinaryVolume, factor: usize) -> Result<BinaryVolume, DataError> {
    let coarse = v.spec().coarsened(factor)?;
    let mut out = BinaryVolume::new_empty(coarse);
    let block = factor * factor * factor;
    for cz in 0..coarse.dims[2] {
        for cy in 0..coarse.dims[1] {
            for cx in 0..coarse.dims[0] {
                let mut inside = 0usize;
                for dz in 0..factor {
                    for dy in 0..factor {
                        for dx in 0..factor {
                            if v.get(cx * factor + dx, cy * factor + dy, cz * factor + dz) {
                                inside += 1;
                            }
                        }
                    }
                }
                out.set(cx, cy, cz, inside * 2 >= block);
            }
        }
    }
    Ok(out)
}
