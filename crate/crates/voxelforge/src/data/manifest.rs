//! Dataset manifest: one line per sample holding four whitespace-separated
//! paths (rgb, depth, gt, room) relative to the manifest's directory. The
//! camera rides in a `camera.txt` sidecar next to the depth image, written
//! with shortest-round-trip floats so poses reload bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, DataError};
use crate::geometry::{CameraIntrinsics, RigidTransform};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
    pub room: PathBuf,
}

impl ManifestEntry {
    /// The same entry with every path resolved against `base`.
    pub fn resolved(&self, base: &Path) -> ManifestEntry {
        ManifestEntry {
            rgb: base.join(&self.rgb),
            depth: base.join(&self.depth),
            gt: base.join(&self.gt),
            room: base.join(&self.room),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), DataError> {
    let mut out = String::new();
    for e in &m.entries {
        let line: Vec<&str> = [&e.rgb, &e.depth, &e.gt, &e.room]
            .into_iter()
            .map(|p| p.to_str().expect("manifest paths are utf-8"))
            .collect();
        assert!(
            line.iter().all(|s| !s.chars().any(char::is_whitespace)),
            "manifest paths must not contain whitespace"
        );
        writeln!(out, "{}", line.join(" ")).expect("string write");
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [rgb, depth, gt, room] = fields[..] else {
            return Err(DataError::Malformed {
                path: path.to_path_buf(),
                what: format!("line {}: expected 4 paths, got {}", ln + 1, fields.len()),
            });
        };
        entries.push(ManifestEntry {
            rgb: rgb.into(),
            depth: depth.into(),
            gt: gt.into(),
            room: room.into(),
        });
    }
    Ok(Manifest { entries })
}

/// Location of the camera sidecar belonging to a depth image.
pub fn camera_path_for(depth_path: &Path) -> PathBuf {
    depth_path.with_file_name("camera.txt")
}

/// Three lines: intrinsics `fx fy cx cy width height`, the row-major
/// rotation, and the translation of the camera-to-grid transform.
pub fn write_camera(
    path: &Path,
    k: &CameraIntrinsics,
    pose: &RigidTransform,
) -> Result<(), DataError> {
    let mut out = String::new();
    writeln!(out, "{} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
        .expect("string write");
    let r = pose.rotation();
    writeln!(
        out,
        "{} {} {} {} {} {} {} {} {}",
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]
    )
    .expect("string write");
    let t = pose.translation();
    writeln!(out, "{} {} {}", t[0], t[1], t[2]).expect("string write");
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_camera(path: &Path) -> Result<(CameraIntrinsics, RigidTransform), DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |what: String| DataError::Malformed { path: path.to_path_buf(), what };
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| malformed(format!("bad number {t:?}"))))
        .collect::<Result<_, _>>()?;
    if nums.len() != 18 {
        return Err(malformed(format!("expected 18 fields, got {}", nums.len())));
    }
    let k = CameraIntrinsics::new(
        nums[0],
        nums[1],
        nums[2],
        nums[3],
        nums[4] as usize,
        nums[5] as usize,
    )?;
    let rotation = [
        [nums[6], nums[7], nums[8]],
        [nums[9], nums[10], nums[11]],
        [nums[12], nums[13], nums[14]],
    ];
    let pose = RigidTransform::new(rotation, [nums[15], nums[16], nums[17]])?;
    Ok((k, pose))
}
