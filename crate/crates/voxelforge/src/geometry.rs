//! Pinhole camera model, rigid transforms, depth unprojection, and
//! voxelization of point clouds onto axis-aligned grids.
//!
//! World/grid axes: `x` width, `y` up, `z` depth; the camera faces `+z`.
//! The camera frame itself follows the usual computer-vision convention
//! (`x` right, `y` down, `z` forward), so a typical camera-to-grid rotation
//! is a half turn about `z`.

use thiserror::Error;

pub type Vec3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("focal lengths must be positive, got fx={fx} fy={fy}")]
    BadFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside {width}x{height} image")]
    PrincipalPointOutside { cx: f64, cy: f64, width: usize, height: usize },
    #[error("image dimensions must be nonzero")]
    EmptyImage,
    #[error("rotation matrix is not orthonormal with determinant +1")]
    NotARotation,
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("depth {0} is not strictly positive")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutside { u: f64, v: f64, width: usize, height: usize },
    #[error("depth map is {dm_width}x{dm_height} but intrinsics expect {k_width}x{k_height}")]
    SizeMismatch { dm_width: usize, dm_height: usize, k_width: usize, k_height: usize },
    #[error("voxel size {0} must be positive and finite")]
    BadVoxelSize(f64),
    #[error("grid dimensions must be nonzero")]
    EmptyGrid,
    #[error("extent {extent} along axis {axis} is not a whole multiple of voxel size {voxel_size}")]
    ExtentNotDivisible { axis: usize, extent: f64, voxel_size: f64 },
    #[error("grid dims {dims:?} not divisible by factor {factor}")]
    DimsNotDivisible { dims: [usize; 3], factor: usize },
}

pub(crate) fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn vdot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn vnorm(a: Vec3) -> f64 {
    vdot(a, a).sqrt()
}

/// Pinhole intrinsics for a `width` x `height` image. Pixel coordinates are
/// continuous, with integer values at pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage);
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::BadFocal { fx, fy });
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::PrincipalPointOutside { cx, cy, width, height });
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Proper rigid motion: `p -> R p + t` with `R` orthonormal, `det R = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
}

const ORTHONORMALITY_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self, GeometryError> {
        for row in &rotation {
            for v in row {
                if !v.is_finite() {
                    return Err(GeometryError::NonFinite { context: "rotation" });
                }
            }
        }
        for v in &translation {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite { context: "translation" });
            }
        }
        // R Rᵀ = I within tolerance.
        for i in 0..3 {
            for j in 0..3 {
                let dot = vdot(rotation[i], rotation[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHONORMALITY_TOL {
                    return Err(GeometryError::NotARotation);
                }
            }
        }
        let det = rotation[0][0] * (rotation[1][1] * rotation[2][2] - rotation[1][2] * rotation[2][1])
            - rotation[0][1] * (rotation[1][0] * rotation[2][2] - rotation[1][2] * rotation[2][0])
            + rotation[0][2] * (rotation[1][0] * rotation[2][1] - rotation[1][1] * rotation[2][0]);
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation about `axis` by `angle` radians (Rodrigues), then translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self, GeometryError> {
        let n = vnorm(axis);
        if !(n > 0.0) || !angle.is_finite() {
            return Err(GeometryError::NonFinite { context: "axis-angle" });
        }
        let [x, y, z] = vscale(axis, 1.0 / n);
        let (s, c) = angle.sin_cos();
        let c1 = 1.0 - c;
        let rotation = [
            [c + x * x * c1, x * y * c1 - z * s, x * z * c1 + y * s],
            [y * x * c1 + z * s, c + y * y * c1, y * z * c1 - x * s],
            [z * x * c1 - y * s, z * y * c1 + x * s, c + z * z * c1],
        ];
        Self::new(rotation, translation)
    }

    /// Half turn about `z`: maps the camera frame (x right, y down, z forward)
    /// into the grid frame (x width, y up, z depth) so the frustum faces `+z`.
    pub fn camera_upright(position: Vec3) -> Self {
        Self {
            rotation: [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: position,
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Applies the inverse motion `p -> Rᵀ (p - t)` without forming it.
    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        let d = vsub(p, self.translation);
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.apply_inverse([0.0; 3]);
        Self { rotation: rt, translation: t }
    }
}

/// Depth image in meters; `0.0` encodes a missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub const MISSING: f64 = 0.0;

    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage);
        }
        assert_eq!(values.len(), width * height, "depth buffer size mismatch");
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeometryError::NonFinite { context: "depth map" });
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Axis-aligned voxel grid: `dims` cells of edge `voxel_size` starting at
/// `origin` (the min corner of voxel `(0,0,0)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self, GeometryError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GeometryError::BadVoxelSize(voxel_size));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(GeometryError::EmptyGrid);
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { context: "grid origin" });
        }
        Ok(Self { origin, voxel_size, dims })
    }

    /// Derives dims from physical extents; each extent must divide evenly.
    pub fn from_extents(origin: Vec3, extents: Vec3, voxel_size: f64) -> Result<Self, GeometryError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GeometryError::BadVoxelSize(voxel_size));
        }
        let mut dims = [0usize; 3];
        for axis in 0..3 {
            let n = (extents[axis] / voxel_size).round();
            if !(n >= 1.0) || (n * voxel_size - extents[axis]).abs() > 1e-9 {
                return Err(GeometryError::ExtentNotDivisible {
                    axis,
                    extent: extents[axis],
                    voxel_size,
                });
            }
            dims[axis] = n as usize;
        }
        Self::new(origin, voxel_size, dims)
    }

    /// Full-scale grid: 4.8 m x 2.88 m x 4.8 m at 2 cm, 240 x 144 x 240 cells.
    pub fn canonical() -> Self {
        Self::from_extents([0.0; 3], [4.8, 2.88, 4.8], 0.02).expect("canonical grid is valid")
    }

    /// Reduced grid covering the same extents at 8 cm: 60 x 36 x 60 cells.
    pub fn desk() -> Self {
        Self::from_extents([0.0; 3], [4.8, 2.88, 4.8], 0.08).expect("desk grid is valid")
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.dims[0] as f64 * self.voxel_size,
            self.dims[1] as f64 * self.voxel_size,
            self.dims[2] as f64 * self.voxel_size,
        ]
    }

    /// Flat index in x-fastest order.
    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn voxel_center(&self, i: [usize; 3]) -> Vec3 {
        [
            self.origin[0] + (i[0] as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (i[1] as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (i[2] as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Maps a world point to its voxel, or `None` when outside the grid.
    /// Floor semantics: a point exactly on a boundary belongs to the
    /// higher-index voxel.
    pub fn world_to_voxel(&self, p: Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.origin[axis]) / self.voxel_size).floor();
            if f < 0.0 || f >= self.dims[axis] as f64 {
                return None;
            }
            idx[axis] = f as usize;
        }
        Some(idx)
    }

    /// Same grid at `factor`-times coarser resolution; dims must divide.
    pub fn coarsened(&self, factor: usize) -> Result<Self, GeometryError> {
        if factor == 0 || self.dims.iter().any(|d| d % factor != 0) {
            return Err(GeometryError::DimsNotDivisible { dims: self.dims, factor });
        }
        Self::new(
            self.origin,
            self.voxel_size * factor as f64,
            [self.dims[0] / factor, self.dims[1] / factor, self.dims[2] / factor],
        )
    }
}

/// Unordered set of 3D points in world coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { context: "point cloud" });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }
}

/// Per-voxel occupancy flags over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    spec: VoxelGridSpec,
    values: Vec<bool>,
}

impl BinaryVolume {
    pub fn new_empty(spec: VoxelGridSpec) -> Self {
        Self { values: vec![false; spec.voxel_count()], spec }
    }

    pub fn from_values(spec: VoxelGridSpec, values: Vec<bool>) -> Self {
        assert_eq!(values.len(), spec.voxel_count(), "volume size mismatch");
        Self { spec, values }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, v: bool) {
        let i = self.spec.flat_index(ix, iy, iz);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count_occupied(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }
}

/// Back-projects continuous pixel `(u, v)` at depth `d` into the camera frame.
pub fn unproject_pixel(
    u: f64,
    v: f64,
    d: f64,
    k: &CameraIntrinsics,
) -> Result<Vec3, GeometryError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    if !k.contains(u, v) {
        return Err(GeometryError::PixelOutside { u, v, width: k.width, height: k.height });
    }
    Ok([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d])
}

/// Unprojects every pixel with a valid depth reading and maps the result into
/// the world frame via `t` (camera-to-world).
pub fn depth_to_point_cloud(
    dm: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<PointCloud, GeometryError> {
    if dm.width() != k.width || dm.height() != k.height {
        return Err(GeometryError::SizeMismatch {
            dm_width: dm.width(),
            dm_height: dm.height(),
            k_width: k.width,
            k_height: k.height,
        });
    }
    let mut points = Vec::new();
    for v in 0..dm.height() {
        for u in 0..dm.width() {
            let d = dm.get(u, v);
            if d == DepthMap::MISSING {
                continue;
            }
            let p_cam = unproject_pixel(u as f64, v as f64, d, k)?;
            points.push(t.apply(p_cam));
        }
    }
    PointCloud::new(points)
}

/// Result of scattering a point cloud onto a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizeOutcome {
    pub volume: BinaryVolume,
    /// Points that fell outside the grid bounds.
    pub dropped: usize,
}

/// Marks the voxel containing each point. Order-independent by construction.
pub fn voxelize(pc: &PointCloud, spec: &VoxelGridSpec) -> VoxelizeOutcome {
    let mut volume = BinaryVolume::new_empty(*spec);
    let mut dropped = 0usize;
    for &p in pc.points() {
        match spec.world_to_voxel(p) {
            Some([ix, iy, iz]) => volume.set(ix, iy, iz, true),
            None => dropped += 1,
        }
    }
    VoxelizeOutcome { volume, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(70.0, 70.0, 40.0, 30.0, 80, 60).unwrap()
    }

    #[test]
    fn unproject_principal_point_lands_on_axis() {
        let k = test_intrinsics();
        let p = unproject_pixel(k.cx, k.cy, 2.0, &k).unwrap();
        assert_eq!(p, [0.0, 0.0, 2.0]);
    }

    #[test]
    fn unproject_rejects_nonpositive_depth_and_oob_pixels() {
        let k = test_intrinsics();
        assert!(matches!(
            unproject_pixel(10.0, 10.0, 0.0, &k),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            unproject_pixel(10.0, 10.0, -1.0, &k),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            unproject_pixel(-0.5, 10.0, 1.0, &k),
            Err(GeometryError::PixelOutside { .. })
        ));
        assert!(matches!(
            unproject_pixel(10.0, 60.0, 1.0, &k),
            Err(GeometryError::PixelOutside { .. })
        ));
    }

    #[test]
    fn unproject_scales_with_offset_from_principal_point() {
        let k = test_intrinsics();
        let p = unproject_pixel(k.cx + 7.0, k.cy - 14.0, 2.0, &k).unwrap();
        assert!((p[0] - 7.0 * 2.0 / 70.0).abs() < 1e-12);
        assert!((p[1] + 14.0 * 2.0 / 70.0).abs() < 1e-12);
        assert_eq!(p[2], 2.0);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 70.0, 40.0, 30.0, 80, 60).is_err());
        assert!(CameraIntrinsics::new(70.0, 70.0, 80.0, 30.0, 80, 60).is_err());
        assert!(CameraIntrinsics::new(70.0, 70.0, 40.0, 30.0, 0, 60).is_err());
    }

    #[test]
    fn rotation_validation_rejects_scaled_and_reflected_matrices() {
        let scaled = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(matches!(
            RigidTransform::new(scaled, [0.0; 3]),
            Err(GeometryError::NotARotation)
        ));
        // Orthonormal but det = -1.
        let mirror = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(matches!(
            RigidTransform::new(mirror, [0.0; 3]),
            Err(GeometryError::NotARotation)
        ));
    }

    #[test]
    fn inverse_round_trips_points() {
        let t = RigidTransform::from_axis_angle([0.3, 1.0, -0.2], 0.7, [1.0, -2.0, 3.0]).unwrap();
        let p = [0.5, 1.5, -0.25];
        let q = t.apply(p);
        let back = t.apply_inverse(q);
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
        let inv = t.inverse();
        let back2 = inv.apply(q);
        for a in 0..3 {
            assert!((back2[a] - p[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn camera_upright_faces_positive_z() {
        let t = RigidTransform::camera_upright([1.0, 2.0, 3.0]);
        // A point straight ahead of the camera moves along +z in grid space.
        assert_eq!(t.apply([0.0, 0.0, 2.0]), [1.0, 2.0, 5.0]);
        // Camera-down (+y) becomes grid-down (-y).
        assert_eq!(t.apply([0.0, 1.0, 0.0]), [1.0, 1.0, 3.0]);
    }

    #[test]
    fn canonical_grid_arithmetic() {
        let spec = VoxelGridSpec::canonical();
        assert_eq!(spec.dims, [240, 144, 240]);
        assert_eq!(spec.voxel_size, 0.02);
        let e = spec.extent();
        assert_eq!(e, [4.8, 2.88, 4.8]);
    }

    #[test]
    fn desk_grid_matches_canonical_extents() {
        let desk = VoxelGridSpec::desk();
        assert_eq!(desk.dims, [60, 36, 60]);
        assert_eq!(desk.extent(), VoxelGridSpec::canonical().extent());
    }

    #[test]
    fn world_to_voxel_corners() {
        let spec = VoxelGridSpec::new([1.0, 2.0, 3.0], 0.5, [4, 5, 6]).unwrap();
        assert_eq!(spec.world_to_voxel([1.0, 2.0, 3.0]), Some([0, 0, 0]));
        let last = [
            1.0 + 0.5 * (4.0 - 0.5),
            2.0 + 0.5 * (5.0 - 0.5),
            3.0 + 0.5 * (6.0 - 0.5),
        ];
        assert_eq!(spec.world_to_voxel(last), Some([3, 4, 5]));
        let beyond = [1.0 + 0.5 * 5.0, 2.0 + 0.5 * 2.0, 3.0 + 0.5 * 2.0];
        assert_eq!(spec.world_to_voxel(beyond), None);
        assert_eq!(spec.world_to_voxel([0.999, 2.5, 3.5]), None);
    }

    #[test]
    fn boundary_points_belong_to_higher_voxel() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [4, 4, 4]).unwrap();
        assert_eq!(spec.world_to_voxel([2.0, 0.5, 0.5]), Some([2, 0, 0]));
    }

    #[test]
    fn voxelize_merges_copoints_and_counts_dropped() {
        let spec = VoxelGridSpec::new([0.0; 3], 1.0, [4, 4, 4]).unwrap();
        let pc = PointCloud::new(vec![
            [0.2, 0.2, 0.2],
            [0.8, 0.8, 0.8],
            [9.0, 0.0, 0.0],
        ])
        .unwrap();
        let out = voxelize(&pc, &spec);
        assert_eq!(out.volume.count_occupied(), 1);
        assert_eq!(out.dropped, 1);
        assert!(out.volume.get(0, 0, 0));
    }

    #[test]
    fn depth_to_point_cloud_skips_missing_and_matches_unproject() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 1.5, 4, 3).unwrap();
        let mut depths = vec![0.0; 12];
        depths[1 * 4 + 2] = 2.5; // (u=2, v=1)
        let dm = DepthMap::new(4, 3, depths).unwrap();
        let t = RigidTransform::camera_upright([1.0, 1.0, 0.0]);
        let pc = depth_to_point_cloud(&dm, &k, &t).unwrap();
        assert_eq!(pc.len(), 1);
        let expect = t.apply(unproject_pixel(2.0, 1.0, 2.5, &k).unwrap());
        assert_eq!(pc.points()[0], expect);
    }

    #[test]
    fn depth_to_point_cloud_rejects_size_mismatch() {
        let k = test_intrinsics();
        let dm = DepthMap::new(4, 3, vec![0.0; 12]).unwrap();
        let t = RigidTransform::identity();
        assert!(matches!(
            depth_to_point_cloud(&dm, &k, &t),
            Err(GeometryError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn coarsened_divides_dims_and_scales_voxels() {
        let spec = VoxelGridSpec::desk();
        let q = spec.coarsened(4).unwrap();
        assert_eq!(q.dims, [15, 9, 15]);
        assert_eq!(q.voxel_size, 0.32);
        assert_eq!(q.extent(), spec.extent());
        assert!(spec.coarsened(7).is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = RigidTransform> {
        (
            [-1.0f64..1.0, -1.0..1.0, -1.0..1.0],
            -3.0f64..3.0,
            [-5.0f64..5.0, -5.0..5.0, -5.0..5.0],
        )
            .prop_filter_map("degenerate axis", |(axis, angle, t)| {
                if vnorm(axis) < 1e-3 {
                    None
                } else {
                    RigidTransform::from_axis_angle(axis, angle, t).ok()
                }
            })
    }

    proptest! {
        #[test]
        fn rigid_transform_preserves_pairwise_distances(
            t in arb_rotation(),
            p in [-10.0f64..10.0, -10.0..10.0, -10.0..10.0],
            q in [-10.0f64..10.0, -10.0..10.0, -10.0..10.0],
        ) {
            let before = vnorm(vsub(p, q));
            let after = vnorm(vsub(t.apply(p), t.apply(q)));
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn voxelize_is_order_independent(
            points in proptest::collection::vec([0.0f64..4.0, 0.0..4.0, 0.0..4.0], 0..40),
            seed in 0u64..1000,
        ) {
            let spec = VoxelGridSpec::new([0.0; 3], 0.5, [8, 8, 8]).unwrap();
            let pc = PointCloud::new(points.clone()).unwrap();
            let mut shuffled = points;
            // Deterministic Fisher-Yates driven by the seed.
            let mut state = seed.wrapping_add(1);
            for i in (1..shuffled.len()).rev() {
                state = crate::rng::splitmix64(state);
                let j = (state % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let pc2 = PointCloud::new(shuffled).unwrap();
            let a = voxelize(&pc, &spec);
            let b = voxelize(&pc2, &spec);
            prop_assert_eq!(a.volume.values(), b.volume.values());
            prop_assert_eq!(a.dropped, b.dropped);
        }

        #[test]
        fn voxel_center_round_trips(
            ix in 0usize..8, iy in 0usize..8, iz in 0usize..8,
        ) {
            let spec = VoxelGridSpec::new([-1.0, 0.5, 2.0], 0.25, [8, 8, 8]).unwrap();
            let c = spec.voxel_center([ix, iy, iz]);
            prop_assert_eq!(spec.world_to_voxel(c), Some([ix, iy, iz]));
        }
    }
}
