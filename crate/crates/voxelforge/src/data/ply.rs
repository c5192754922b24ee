//! ASCII PLY export for eyeballing volumes: one colored cube per selected
//! voxel, 8 vertices and 12 triangles each.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{io_err, DataError};
use crate::geometry::VoxelGridSpec;
use crate::metrics::{LabelVolume, IGNORE, SEMANTIC_CLASS_COUNT};
use crate::tsdf::TsdfVolume;

/// Fixed render colors for classes 1..=11, in class order.
pub const CLASS_PALETTE: [[u8; 3]; SEMANTIC_CLASS_COUNT] = [
    [205, 205, 90],  // ceil.
    [120, 190, 90],  // floor
    [160, 160, 160], // wall
    [90, 200, 220],  // win.
    [225, 120, 60],  // chair
    [225, 80, 160],  // bed
    [140, 90, 200],  // sofa
    [170, 120, 60],  // table
    [60, 60, 225],   // tvs
    [100, 220, 180], // furn.
    [225, 60, 60],   // objs.
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlyStats {
    pub cubes: usize,
}

impl PlyStats {
    pub fn vertices(&self) -> usize {
        self.cubes * 8
    }

    pub fn faces(&self) -> usize {
        self.cubes * 12
    }
}

/// Triangle corners per cube face, indexing the 8 cube vertices in
/// `(x + 2y + 4z)` bit order; wound counter-clockwise seen from outside.
const CUBE_TRIS: [[usize; 3]; 12] = [
    [0, 2, 1], [1, 2, 3], // z min
    [4, 5, 6], [5, 7, 6], // z max
    [0, 1, 4], [1, 5, 4], // y min
    [2, 6, 3], [3, 6, 7], // y max
    [0, 4, 2], [2, 4, 6], // x min
    [1, 3, 5], [3, 7, 5], // x max
];

pub fn export_label_ply(path: &Path, v: &LabelVolume) -> Result<PlyStats, DataError> {
    let cells = select(v.spec(), |i| {
        let c = v.values()[i];
        (c != 0 && c != IGNORE).then(|| CLASS_PALETTE[c as usize - 1])
    });
    write_cubes(path, v.spec(), &cells)
}

/// Exports voxels with `|value| >= threshold`, green for non-negative and
/// red for negative, brighter with magnitude.
pub fn export_tsdf_ply(
    path: &Path,
    v: &TsdfVolume,
    threshold: f32,
) -> Result<PlyStats, DataError> {
    let cells = select(v.spec(), |i| {
        let x = v.values()[i];
        (x.abs() >= threshold).then(|| {
            let m = (64.0 + 191.0 * x.abs().min(1.0)) as u8;
            if x.is_sign_negative() && x != 0.0 {
                [m, 40, 40]
            } else {
                [40, m, 40]
            }
        })
    });
    write_cubes(path, v.spec(), &cells)
}

fn select(
    spec: &VoxelGridSpec,
    mut pick: impl FnMut(usize) -> Option<[u8; 3]>,
) -> Vec<(usize, [u8; 3])> {
    (0..spec.voxel_count()).filter_map(|i| pick(i).map(|c| (i, c))).collect()
}

fn write_cubes(
    path: &Path,
    spec: &VoxelGridSpec,
    cells: &[(usize, [u8; 3])],
) -> Result<PlyStats, DataError> {
    let stats = PlyStats { cubes: cells.len() };
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!(
        "element vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n",
        stats.vertices()
    ));
    out.push_str(&format!(
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        stats.faces()
    ));

    let vs = spec.voxel_size;
    for &(idx, [r, g, b]) in cells {
        let [ix, iy, iz] = spec.unflatten(idx);
        let base = [
            spec.origin[0] + ix as f64 * vs,
            spec.origin[1] + iy as f64 * vs,
            spec.origin[2] + iz as f64 * vs,
        ];
        for corner in 0..8 {
            let x = base[0] + f64::from((corner & 1) as u8) * vs;
            let y = base[1] + f64::from((corner >> 1 & 1) as u8) * vs;
            let z = base[2] + f64::from((corner >> 2 & 1) as u8) * vs;
            out.push_str(&format!("{x} {y} {z} {r} {g} {b}\n"));
        }
    }
    for cube in 0..cells.len() {
        let base = cube * 8;
        for tri in CUBE_TRIS {
            out.push_str(&format!(
                "3 {} {} {}\n",
                base + tri[0],
                base + tri[1],
                base + tri[2]
            ));
        }
    }

    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(out.as_bytes()).map_err(io_err(path))?;
    Ok(stats)
}
