//! Visibility classification, exact Euclidean distance transform, TSDF
//! encoding, and the flipped-TSDF transform applied to surface and edge
//! volumes alike.
//!
//! The flip `x -> sign(x) * (1 - |x|)` moves the strongest gradients onto
//! the encoded set itself: a voxel on the surface (or on an edge) encodes
//! +1, free space decays to +0, occluded space to -0, and the
//! visible/occluded boundary at the surface carries a full -1 to +1 jump.

use crate::geometry::{
    voxelize, BinaryVolume, CameraIntrinsics, DepthMap, PointCloud, RigidTransform, VoxelGridSpec,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("volume dims {got:?} do not match expected {expected:?}")]
    DimMismatch { got: [usize; 3], expected: [usize; 3] },
    #[error("depth map is {dm_width}x{dm_height} but intrinsics expect {k_width}x{k_height}")]
    ImageSizeMismatch { dm_width: usize, dm_height: usize, k_width: usize, k_height: usize },
    #[error("distance transform of a volume with no occupied voxel")]
    EmptyVolume,
    #[error("truncation {0} must be positive and finite")]
    BadTruncation(f64),
    #[error("volume is already flipped")]
    AlreadyFlipped,
}

/// Camera-relative classification of a voxel center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Visibility {
    /// Strictly in front of the observed surface.
    VisibleFree = 0,
    /// Strictly behind the observed surface.
    Occluded = 1,
    /// Within half a voxel of the observed depth and marked in the surface
    /// occupancy volume.
    Occupied = 2,
    /// Off-image, behind the camera, or projecting to a missing reading.
    OutsideView = 3,
}

/// Per-voxel visibility labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityVolume {
    spec: VoxelGridSpec,
    values: Vec<Visibility>,
}

impl VisibilityVolume {
    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[Visibility] {
        &self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> Visibility {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }

    pub fn count(&self, v: Visibility) -> usize {
        self.values.iter().filter(|x| **x == v).count()
    }
}

/// Exact squared Euclidean distances in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVolume {
    spec: VoxelGridSpec,
    values: Vec<u32>,
}

impl DistanceVolume {
    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> u32 {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }
}

/// Whether a scalar volume holds raw truncated distances or flipped ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsdfKind {
    Tsdf,
    Ftsdf,
}

/// Which input modality a scalar volume encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Surface,
    Edge,
}

/// Signed truncated distance field over a grid, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    spec: VoxelGridSpec,
    values: Vec<f32>,
    kind: TsdfKind,
    channel: ChannelKind,
}

impl TsdfVolume {
    pub fn from_values(
        spec: VoxelGridSpec,
        values: Vec<f32>,
        kind: TsdfKind,
        channel: ChannelKind,
    ) -> Self {
        assert_eq!(values.len(), spec.voxel_count(), "volume size mismatch");
        debug_assert!(values.iter().all(|v| v.abs() <= 1.0));
        Self { spec, values, kind, channel }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn kind(&self) -> TsdfKind {
        self.kind
    }

    pub fn channel(&self) -> ChannelKind {
        self.channel
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }
}

/// Classifies every voxel center against the depth map.
///
/// A voxel's depth is its center's `z` in the camera frame; it is compared
/// to the depth reading at the nearest pixel of its projection. The
/// comparison band is half a voxel on each side.
pub fn compute_visibility(
    dm: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    spec: &VoxelGridSpec,
    occupied: &BinaryVolume,
) -> Result<VisibilityVolume, TsdfError> {
    if dm.width() != k.width || dm.height() != k.height {
        return Err(TsdfError::ImageSizeMismatch {
            dm_width: dm.width(),
            dm_height: dm.height(),
            k_width: k.width,
            k_height: k.height,
        });
    }
    if occupied.spec().dims != spec.dims {
        return Err(TsdfError::DimMismatch { got: occupied.spec().dims, expected: spec.dims });
    }
    let half_band = spec.voxel_size / 2.0;
    let [nx, ny, nz] = spec.dims;
    let mut values = vec![Visibility::OutsideView; spec.voxel_count()];
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let center = spec.voxel_center([ix, iy, iz]);
                let p_cam = t.apply_inverse(center);
                if p_cam[2] <= 0.0 {
                    continue; // behind the camera
                }
                let u = (k.fx * p_cam[0] / p_cam[2] + k.cx).round();
                let v = (k.fy * p_cam[1] / p_cam[2] + k.cy).round();
                if !k.contains(u, v) {
                    continue;
                }
                let observed = dm.get(u as usize, v as usize);
                if observed == DepthMap::MISSING {
                    continue;
                }
                let idx = spec.flat_index(ix, iy, iz);
                let z = p_cam[2];
                values[idx] = if z < observed - half_band {
                    Visibility::VisibleFree
                } else if z > observed + half_band {
                    Visibility::Occluded
                } else if occupied.get(ix, iy, iz) {
                    Visibility::Occupied
                } else {
                    Visibility::VisibleFree
                };
            }
        }
    }
    Ok(VisibilityVolume { spec: *spec, values })
}

/// Large-but-safe stand-in for "no source in this scanline yet"; headroom
/// for the `+ q^2` terms of the envelope pass without i64 overflow.
const EDT_INF: i64 = 1 << 40;

/// 1D lower-envelope squared distance transform (Felzenszwalb-Huttenlocher).
/// `f` holds per-cell source costs, `out` the resulting lower envelope
/// sampled at integers. Exact for integer costs: envelope boundaries are
/// rationals with denominator < 2n, so f64 comparisons against integer
/// sample positions cannot misorder them.
fn envelope_1d(f: &[i64], out: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    debug_assert!(n >= 1 && out.len() == n && v.len() >= n && z.len() >= n + 1);
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as i64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as i64)) as f64 / (2 * (q - p)) as f64;
            if s <= z[k] {
                debug_assert!(k > 0, "first parabola displaced below -inf boundary");
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as i64 - p as i64;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance to the nearest occupied voxel, by three
/// separable passes (x scanline sweep, then lower envelopes along y and z).
/// Scanlines are independent within each pass.
pub fn edt3_squared(b: &BinaryVolume) -> Result<DistanceVolume, TsdfError> {
    let spec = *b.spec();
    let [nx, ny, nz] = spec.dims;
    if b.count_occupied() == 0 {
        return Err(TsdfError::EmptyVolume);
    }

    let mut work: Vec<i64> = Vec::with_capacity(spec.voxel_count());
    let mut line = vec![0i64; nx];
    // Pass 1, along x: two sweeps give the 1D distance, squared afterwards.
    for iz in 0..nz {
        for iy in 0..ny {
            let base = spec.flat_index(0, iy, iz);
            let mut dist = EDT_INF;
            for ix in 0..nx {
                dist = if b.values()[base + ix] { 0 } else { dist.saturating_add(1).min(EDT_INF) };
                line[ix] = dist;
            }
            dist = line[nx - 1];
            for ix in (0..nx).rev() {
                dist = if b.values()[base + ix] { 0 } else { (dist + 1).min(EDT_INF) };
                if dist < line[ix] {
                    line[ix] = dist;
                }
            }
            for ix in 0..nx {
                let d = line[ix];
                work.push(if d >= EDT_INF { EDT_INF } else { d * d });
            }
        }
    }

    // Pass 2, along y.
    let nmax = ny.max(nz);
    let mut f = vec![0i64; nmax];
    let mut out1 = vec![0i64; nmax];
    let mut v = vec![0usize; nmax];
    let mut z = vec![0f64; nmax + 1];
    for iz in 0..nz {
        for ix in 0..nx {
            for iy in 0..ny {
                f[iy] = work[spec.flat_index(ix, iy, iz)];
            }
            envelope_1d(&f[..ny], &mut out1[..ny], &mut v, &mut z);
            for iy in 0..ny {
                work[spec.flat_index(ix, iy, iz)] = out1[iy];
            }
        }
    }

    // Pass 3, along z.
    for iy in 0..ny {
        for ix in 0..nx {
            for iz in 0..nz {
                f[iz] = work[spec.flat_index(ix, iy, iz)];
            }
            envelope_1d(&f[..nz], &mut out1[..nz], &mut v, &mut z);
            for iz in 0..nz {
                work[spec.flat_index(ix, iy, iz)] = out1[iz];
            }
        }
    }

    let values = work
        .into_iter()
        .map(|d| {
            debug_assert!(d < EDT_INF, "unreachable voxel in non-empty volume");
            d as u32
        })
        .collect();
    Ok(DistanceVolume { spec, values })
}

fn visibility_sign(v: Visibility) -> f32 {
    match v {
        Visibility::VisibleFree | Visibility::Occupied => 1.0,
        // Outside-view voxels are treated as occluded space; metrics never
        // score them.
        Visibility::Occluded | Visibility::OutsideView => -1.0,
    }
}

/// Encodes a truncated signed distance field for `channel`: distance to the
/// occupied set of `b`, sign from the camera visibility.
pub fn tsdf_encode(
    b: &BinaryVolume,
    vis: &VisibilityVolume,
    truncation: f64,
    channel: ChannelKind,
) -> Result<TsdfVolume, TsdfError> {
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(TsdfError::BadTruncation(truncation));
    }
    if b.spec().dims != vis.spec.dims {
        return Err(TsdfError::DimMismatch { got: b.spec().dims, expected: vis.spec.dims });
    }
    let spec = *b.spec();
    let dist = edt3_squared(b)?;
    let scale = spec.voxel_size / truncation;
    let values = dist
        .values()
        .iter()
        .zip(vis.values())
        .map(|(&d2, &v)| {
            let magnitude = ((d2 as f64).sqrt() * scale).min(1.0) as f32;
            visibility_sign(v) * magnitude
        })
        .collect();
    Ok(TsdfVolume { spec, values, kind: TsdfKind::Tsdf, channel })
}

/// Scalar flip `x -> sign(x) * (1 - |x|)` with `sign(0) := +1`, so encoded
/// (zero-distance) voxels map to +1.
#[inline]
pub fn flip_value(x: f32) -> f32 {
    let sign = if x >= 0.0 { 1.0f32 } else { -1.0 };
    sign * (1.0 - x.abs())
}

/// Applies the flip to a raw TSDF volume. Flipping twice is rejected.
pub fn flip_tsdf(v: &TsdfVolume) -> Result<TsdfVolume, TsdfError> {
    if v.kind != TsdfKind::Tsdf {
        return Err(TsdfError::AlreadyFlipped);
    }
    Ok(TsdfVolume {
        spec: v.spec,
        values: v.values.iter().map(|&x| flip_value(x)).collect(),
        kind: TsdfKind::Ftsdf,
        channel: v.channel,
    })
}

/// Flipped-TSDF channel volume plus bookkeeping from the voxelization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedChannel {
    pub volume: TsdfVolume,
    /// True when the channel had no points inside the grid; the volume is
    /// then all signed zeros (the far-field limit) rather than an error.
    pub empty_input: bool,
    /// Points that fell outside the grid.
    pub dropped_points: usize,
}

/// Full channel pipeline: voxelize, encode distances against the channel's
/// own occupied set with the shared camera visibility, then flip. Used
/// identically for the surface and edge channels.
pub fn encode_channel(
    points: &PointCloud,
    vis: &VisibilityVolume,
    spec: &VoxelGridSpec,
    truncation: f64,
    channel: ChannelKind,
) -> Result<EncodedChannel, TsdfError> {
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(TsdfError::BadTruncation(truncation));
    }
    if vis.spec.dims != spec.dims {
        return Err(TsdfError::DimMismatch { got: vis.spec.dims, expected: spec.dims });
    }
    let outcome = voxelize(points, spec);
    if outcome.volume.count_occupied() == 0 {
        // Far-field limit of the flip: |TSDF| = 1 everywhere, so F-TSDF is a
        // signed zero per voxel.
        let values = vis.values().iter().map(|&v| visibility_sign(v) * 0.0).collect();
        return Ok(EncodedChannel {
            volume: TsdfVolume { spec: *spec, values, kind: TsdfKind::Ftsdf, channel },
            empty_input: true,
            dropped_points: outcome.dropped,
        });
    }
    let tsdf = tsdf_encode(&outcome.volume, vis, truncation, channel)?;
    Ok(EncodedChannel {
        volume: flip_tsdf(&tsdf)?,
        empty_input: false,
        dropped_points: outcome.dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::depth_to_point_cloud;
    use proptest::prelude::*;

    fn flat_wall_setup() -> (DepthMap, CameraIntrinsics, RigidTransform, VoxelGridSpec) {
        // Camera at the grid's -z face looking along +z at a wall 2.03 m
        // away, safely inside the iz = 20 voxel band.
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 20.0, 40, 40).unwrap();
        let dm = DepthMap::new(40, 40, vec![2.03; 1600]).unwrap();
        let t = RigidTransform::camera_upright([0.0, 0.0, 0.0]);
        let spec = VoxelGridSpec::new([-1.0, -1.0, 0.0], 0.1, [20, 20, 30]).unwrap();
        (dm, k, t, spec)
    }

    fn wall_volumes() -> (BinaryVolume, VisibilityVolume, VoxelGridSpec) {
        let (dm, k, t, spec) = flat_wall_setup();
        let cloud = depth_to_point_cloud(&dm, &k, &t).unwrap();
        let occ = voxelize(&cloud, &spec).volume;
        let vis = compute_visibility(&dm, &k, &t, &spec, &occ).unwrap();
        (occ, vis, spec)
    }

    #[test]
    fn visibility_front_and_behind() {
        let (_, vis, spec) = wall_volumes();
        // Wall plane z = 2.0 falls in voxel iz = 19 (centers at 0.05 + 0.1 iz).
        let probe = spec.world_to_voxel([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(vis.get(probe[0], probe[1], probe[2]), Visibility::VisibleFree);
        let probe = spec.world_to_voxel([0.0, 0.0, 2.95]).unwrap();
        assert_eq!(vis.get(probe[0], probe[1], probe[2]), Visibility::Occluded);
        assert!(vis.count(Visibility::Occupied) > 0);
    }

    #[test]
    fn visibility_marks_outside_view() {
        let (dm, k, t, _) = flat_wall_setup();
        // Grid partially behind the camera.
        let spec = VoxelGridSpec::new([-1.0, -1.0, -2.0], 0.1, [20, 20, 30]).unwrap();
        let occ = BinaryVolume::new_empty(spec);
        let vis = compute_visibility(&dm, &k, &t, &spec, &occ).unwrap();
        let behind = spec.world_to_voxel([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(vis.get(behind[0], behind[1], behind[2]), Visibility::OutsideView);
    }

    #[test]
    fn visibility_missing_depth_is_outside_view() {
        let (_, k, t, spec) = flat_wall_setup();
        let dm = DepthMap::new(40, 40, vec![0.0; 1600]).unwrap();
        let occ = BinaryVolume::new_empty(spec);
        let vis = compute_visibility(&dm, &k, &t, &spec, &occ).unwrap();
        assert_eq!(vis.count(Visibility::OutsideView), spec.voxel_count());
    }

    #[test]
    fn edt_all_occupied_is_zero() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [4, 3, 5]).unwrap();
        let vol = BinaryVolume::from_values(spec, vec![true; spec.voxel_count()]);
        let d = edt3_squared(&vol).unwrap();
        assert!(d.values().iter().all(|v| *v == 0));
    }

    #[test]
    fn edt_single_center_voxel() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [5, 5, 5]).unwrap();
        let mut vol = BinaryVolume::new_empty(spec);
        vol.set(2, 2, 2, true);
        let d = edt3_squared(&vol).unwrap();
        assert_eq!(d.get(2, 2, 2), 0);
        assert_eq!(d.get(0, 0, 0), 12);
        assert_eq!(d.get(4, 4, 4), 12);
        assert_eq!(d.get(0, 2, 2), 4);
        assert_eq!(d.get(3, 1, 2), 2);
    }

    #[test]
    fn edt_empty_volume_is_an_error() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [4, 4, 4]).unwrap();
        let vol = BinaryVolume::new_empty(spec);
        assert!(matches!(edt3_squared(&vol), Err(TsdfError::EmptyVolume)));
    }

    fn brute_force_edt(b: &BinaryVolume) -> Vec<u32> {
        let [nx, ny, nz] = b.spec().dims;
        let occupied: Vec<[i64; 3]> = (0..nx)
            .flat_map(|x| (0..ny).flat_map(move |y| (0..nz).map(move |z| [x, y, z])))
            .filter(|&[x, y, z]| b.get(x, y, z))
            .map(|[x, y, z]| [x as i64, y as i64, z as i64])
            .collect();
        let mut out = Vec::with_capacity(b.spec().voxel_count());
        for iz in 0..nz as i64 {
            for iy in 0..ny as i64 {
                for ix in 0..nx as i64 {
                    let best = occupied
                        .iter()
                        .map(|&[x, y, z]| {
                            let (dx, dy, dz) = (ix - x, iy - y, iz - z);
                            (dx * dx + dy * dy + dz * dz) as u32
                        })
                        .min()
                        .unwrap();
                    out.push(best);
                }
            }
        }
        // Brute-force scan fills z-down; reorder to x-fastest.
        let mut reordered = vec![0u32; out.len()];
        let mut i = 0;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    reordered[b.spec().flat_index(ix, iy, iz)] = out[i];
                    i += 1;
                }
            }
        }
        reordered
    }

    #[test]
    fn edt_matches_brute_force_on_random_volumes() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [9, 7, 8]).unwrap();
        for seed in 0..8u64 {
            let mut values = vec![false; spec.voxel_count()];
            let mut s = seed;
            let mut any = false;
            for v in &mut values {
                s = crate::rng::splitmix64(s.wrapping_add(1));
                *v = s % 11 == 0;
                any |= *v;
            }
            if !any {
                values[3] = true;
            }
            let vol = BinaryVolume::from_values(spec, values);
            let fast = edt3_squared(&vol).unwrap();
            let slow = brute_force_edt(&vol);
            assert_eq!(fast.values(), slow.as_slice(), "seed {seed}");
        }
    }

    #[test]
    fn encode_hits_spec_ratios() {
        // One occupied voxel; a probe 6 voxels away at 0.02 m spacing is
        // 0.12 m out: half of the 0.24 m truncation.
        let spec = VoxelGridSpec::new([0.0; 3], 0.02, [14, 1, 1]).unwrap();
        let mut b = BinaryVolume::new_empty(spec);
        b.set(0, 0, 0, true);
        let vis = VisibilityVolume {
            spec,
            values: vec![Visibility::VisibleFree; spec.voxel_count()],
        };
        let t = tsdf_encode(&b, &vis, 0.24, ChannelKind::Surface).unwrap();
        assert_eq!(t.get(0, 0, 0), 0.0);
        assert!((t.get(6, 0, 0) - 0.5).abs() < 1e-6);

        // Occluded voxels at or past truncation clamp to -1 (13 voxels is
        // 0.26 m, past the 0.24 m truncation).
        let vis = VisibilityVolume {
            spec,
            values: vec![Visibility::Occluded; spec.voxel_count()],
        };
        let t = tsdf_encode(&b, &vis, 0.24, ChannelKind::Surface).unwrap();
        assert_eq!(t.get(13, 0, 0), -1.0);
    }

    #[test]
    fn encode_rejects_bad_truncation() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.02, [4, 1, 1]).unwrap();
        let mut b = BinaryVolume::new_empty(spec);
        b.set(0, 0, 0, true);
        let vis = VisibilityVolume {
            spec,
            values: vec![Visibility::VisibleFree; spec.voxel_count()],
        };
        assert!(matches!(
            tsdf_encode(&b, &vis, 0.0, ChannelKind::Surface),
            Err(TsdfError::BadTruncation(_))
        ));
    }

    #[test]
    fn flip_fixed_points_and_boundaries() {
        assert_eq!(flip_value(0.5), 0.5);
        assert_eq!(flip_value(-0.25), -0.75);
        let plus = flip_value(1.0);
        assert_eq!(plus, 0.0);
        assert!(!plus.is_sign_negative());
        let minus = flip_value(-1.0);
        assert_eq!(minus, 0.0);
        assert!(minus.is_sign_negative());
        assert_eq!(flip_value(0.0), 1.0);
    }

    #[test]
    fn flip_rejects_double_application() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [2, 2, 2]).unwrap();
        let v = TsdfVolume::from_values(
            spec,
            vec![0.5; 8],
            TsdfKind::Tsdf,
            ChannelKind::Surface,
        );
        let flipped = flip_tsdf(&v).unwrap();
        assert_eq!(flipped.kind(), TsdfKind::Ftsdf);
        assert!(matches!(flip_tsdf(&flipped), Err(TsdfError::AlreadyFlipped)));
    }

    #[test]
    fn ftsdf_ridge_and_discontinuity_on_flat_wall() {
        let (occ, vis, spec) = wall_volumes();
        let tsdf = tsdf_encode(&occ, &vis, 0.5, ChannelKind::Surface).unwrap();
        let f = flip_tsdf(&tsdf).unwrap();
        let [nx, ny, nz] = spec.dims;
        // Every occupied voxel encodes +1.
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    if occ.get(ix, iy, iz) {
                        assert_eq!(f.get(ix, iy, iz), 1.0);
                    }
                }
            }
        }
        // Across the surface the field jumps from near +1 to near -1.
        let [ix, iy, wall_iz] = spec.world_to_voxel([0.0, 0.0, 2.03]).unwrap();
        assert!(occ.get(ix, iy, wall_iz));
        let front = f.get(ix, iy, wall_iz - 1);
        let behind = f.get(ix, iy, wall_iz + 1);
        assert!(front > 0.7, "front of wall: {front}");
        assert!(behind < -0.7, "behind wall: {behind}");
        assert!((front - behind) > 1.5);
    }

    #[test]
    fn encode_channel_empty_input_yields_signed_zeros_with_flag() {
        let (_, vis, spec) = wall_volumes();
        let empty = PointCloud::new(vec![]).unwrap();
        let out = encode_channel(&empty, &vis, &spec, 0.24, ChannelKind::Edge).unwrap();
        assert!(out.empty_input);
        assert!(out.volume.values().iter().all(|v| *v == 0.0));
        assert_eq!(out.volume.kind(), TsdfKind::Ftsdf);
        assert_eq!(out.volume.channel(), ChannelKind::Edge);
    }

    #[test]
    fn encode_channel_counts_dropped_points() {
        let (_, vis, spec) = wall_volumes();
        let pc = PointCloud::new(vec![[0.0, 0.0, 1.0], [50.0, 0.0, 0.0]]).unwrap();
        let out = encode_channel(&pc, &vis, &spec, 0.24, ChannelKind::Surface).unwrap();
        assert!(!out.empty_input);
        assert_eq!(out.dropped_points, 1);
    }

    proptest! {
        /// |TSDF| is 1-Lipschitz per voxel step scaled by voxel_size/truncation.
        #[test]
        fn tsdf_lipschitz_along_axes(seed in 0u64..40) {
            let spec = VoxelGridSpec::new([0.0; 3], 0.05, [8, 8, 8]).unwrap();
            let mut vol = BinaryVolume::new_empty(spec);
            let mut s = seed;
            let mut any = false;
            for iz in 0..8 { for iy in 0..8 { for ix in 0..8 {
                s = crate::rng::splitmix64(s.wrapping_add(3));
                if s % 13 == 0 { vol.set(ix, iy, iz, true); any = true; }
            }}}
            if !any { vol.set(4, 4, 4, true); }
            let vis = VisibilityVolume {
                spec,
                values: vec![Visibility::VisibleFree; spec.voxel_count()],
            };
            let truncation = 0.2;
            let t = tsdf_encode(&vol, &vis, truncation, ChannelKind::Surface).unwrap();
            let step = (0.05 / truncation) as f32 + 1e-6;
            for iz in 0..8 { for iy in 0..8 { for ix in 0..8 {
                let v = t.get(ix, iy, iz).abs();
                if ix + 1 < 8 {
                    prop_assert!((v - t.get(ix + 1, iy, iz).abs()).abs() <= step);
                }
                if iy + 1 < 8 {
                    prop_assert!((v - t.get(ix, iy + 1, iz).abs()).abs() <= step);
                }
                if iz + 1 < 8 {
                    prop_assert!((v - t.get(ix, iy, iz + 1).abs()).abs() <= step);
                }
            }}}
        }

        /// Applying the flip twice returns the magnitude with sign preserved
        /// (away from the +/-1 endpoints, whose first flip lands on zero).
        #[test]
        fn flip_is_an_involution_on_magnitudes(x in -0.999f32..0.999) {
            let twice = flip_value(flip_value(x));
            prop_assert!((twice - x).abs() < 1e-6);
            if x != 0.0 {
                prop_assert_eq!(twice.is_sign_negative(), x.is_sign_negative());
            }
        }

        /// All encoder outputs stay inside [-1, 1].
        #[test]
        fn outputs_bounded(seed in 0u64..20) {
            let spec = VoxelGridSpec::new([0.0; 3], 0.04, [6, 6, 6]).unwrap();
            let mut vol = BinaryVolume::new_empty(spec);
            let mut s = seed;
            vol.set((s % 6) as usize, 2, 3, true);
            let mut vis_values = Vec::with_capacity(spec.voxel_count());
            for _ in 0..spec.voxel_count() {
                s = crate::rng::splitmix64(s.wrapping_add(7));
                vis_values.push(match s % 4 {
                    0 => Visibility::VisibleFree,
                    1 => Visibility::Occluded,
                    2 => Visibility::Occupied,
                    _ => Visibility::OutsideView,
                });
            }
            let vis = VisibilityVolume { spec, values: vis_values };
            let t = tsdf_encode(&vol, &vis, 0.1, ChannelKind::Surface).unwrap();
            prop_assert!(t.values().iter().all(|v| v.abs() <= 1.0));
            let f = flip_tsdf(&t).unwrap();
            prop_assert!(f.values().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
