//! Per-pixel ray caster plus voxel-center ground-truth labeling. Both read
//! the same `SceneSpec`, which is what makes the labels exact rather than a
//! reconstruction.

use rayon::prelude::*;

use super::scene::{Aabb, SceneSpec, CLASS_DECAL, WALL_ALBEDO};
use super::{DataError, Sample};
use crate::edges::RgbImage;
use crate::geometry::{BinaryVolume, DepthMap, Vec3, VoxelGridSpec};
use crate::metrics::LabelVolume;

/// Flat-shading factor per hit-face axis; breaks up same-albedo faces so
/// geometry edges survive into the color image.
pub(crate) const FACE_SHADE: [f64; 3] = [0.85, 1.0, 0.92];

struct Solid {
    shape: Aabb,
    albedo: [f64; 3],
}

/// Slab-method ray/box intersection. Returns the entry distance along `dir`
/// (unnormalized) and the axis of the face crossed, for rays starting
/// outside the box; `t` must be strictly positive to count.
fn ray_aabb(origin: Vec3, dir: Vec3, b: &Aabb) -> Option<(f64, usize)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < b.min[a] || origin[a] >= b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let mut t0 = (b.min[a] - origin[a]) * inv;
        let mut t1 = (b.max[a] - origin[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
    }
    (t_near < t_far && t_near > 0.0).then_some((t_near, axis))
}

fn mat_vec(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Renders a scene into a fully consistent `Sample` on the given grid.
///
/// Depth equals the camera-frame z of the nearest hit exactly (ray
/// directions carry `dir_z = 1`), so stored depth unprojects back onto the
/// hit point bit-for-bit. Decals are tested only in the color pass; depth
/// is bitwise independent of them by construction.
pub fn render(scene: &SceneSpec, grid: &VoxelGridSpec) -> Result<Sample, DataError> {
    scene.validate()?;
    if grid.origin != [0.0, 0.0, 0.0] {
        return Err(DataError::GridMismatch(format!(
            "grid origin {:?} is not the scene origin",
            grid.origin
        )));
    }
    let extent = grid.extent();
    if (0..3).any(|a| (extent[a] - scene.extent[a]).abs() > 1e-9) {
        return Err(DataError::GridMismatch(format!(
            "grid extent {extent:?} vs scene extent {:?}",
            scene.extent
        )));
    }

    // Shell first: on exact-tie corner hits the earlier solid wins.
    let mut solids: Vec<Solid> = scene
        .shell_slabs()
        .iter()
        .map(|&(shape, _)| Solid { shape, albedo: WALL_ALBEDO })
        .collect();
    solids.extend(
        scene.objects.iter().map(|o| Solid { shape: o.shape, albedo: o.albedo }),
    );

    let k = &scene.camera;
    let origin = scene.camera_pose.translation();
    let rot = scene.camera_pose.rotation();
    let (w, h) = (k.width, k.height);

    let mut depth = vec![DepthMap::MISSING; w * h];
    let mut rgb = vec![[0.0f64; 3]; w * h];
    depth
        .par_chunks_mut(w)
        .zip(rgb.par_chunks_mut(w))
        .enumerate()
        .for_each(|(v, (depth_row, rgb_row))| {
            for u in 0..w {
                let dir_cam = [
                    (u as f64 - k.cx) / k.fx,
                    (v as f64 - k.cy) / k.fy,
                    1.0,
                ];
                let dir = mat_vec(rot, dir_cam);
                let mut best: Option<(f64, usize, usize)> = None;
                for (i, s) in solids.iter().enumerate() {
                    if let Some((t, axis)) = ray_aabb(origin, dir, &s.shape) {
                        if best.map_or(true, |(bt, _, _)| t < bt) {
                            best = Some((t, axis, i));
                        }
                    }
                }
                let Some((t, axis, idx)) = best else {
                    continue;
                };
                let mut albedo = solids[idx].albedo;
                // Back-wall hits may land on a decal; depth is left alone.
                if idx == 5 && axis == 2 {
                    let hx = origin[0] + t * dir[0];
                    let hy = origin[1] + t * dir[1];
                    if let Some(d) =
                        scene.decals.iter().find(|d| d.contains_xy(hx, hy))
                    {
                        albedo = d.albedo;
                    }
                }
                depth_row[u] = t;
                let shade = FACE_SHADE[axis];
                rgb_row[u] = [albedo[0] * shade, albedo[1] * shade, albedo[2] * shade];
            }
        });

    let depth = DepthMap::new(w, h, depth)?;
    let rgb = RgbImage::new(w, h, rgb)?;
    let (gt, room) = label_volumes(scene, grid);
    Sample::new(rgb, depth, gt, room, *k, scene.camera_pose)
}

/// Classifies every voxel center: decal layer, then objects (later
/// declarations win), then the wall shell, else empty.
fn label_volumes(scene: &SceneSpec, grid: &VoxelGridSpec) -> (LabelVolume, BinaryVolume) {
    let [nx, ny, _] = grid.dims;
    let vs = grid.voxel_size;
    let back_wall = scene.back_wall_z();
    let slabs = scene.shell_slabs();
    let room_box = scene.room_box();

    let mut labels = vec![0u8; grid.voxel_count()];
    let mut room = vec![false; grid.voxel_count()];
    labels
        .par_chunks_mut(nx * ny)
        .zip(room.par_chunks_mut(nx * ny))
        .enumerate()
        .for_each(|(iz, (label_slice, room_slice))| {
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = grid.voxel_center([ix, iy, iz]);
                    let i = ix + nx * iy;
                    room_slice[i] = room_box.contains(p);
                    label_slice[i] = classify(scene, back_wall, vs, &slabs, p);
                }
            }
        });

    let spec = *grid;
    let gt = LabelVolume::new(spec, labels).expect("classes stay in range");
    (gt, BinaryVolume::from_values(spec, room))
}

fn classify(
    scene: &SceneSpec,
    back_wall: f64,
    vs: f64,
    slabs: &[(Aabb, u8); 6],
    p: Vec3,
) -> u8 {
    // Decals take the one voxel layer on the air side of the wall plane;
    // both cutoffs sit on voxel boundaries, half a voxel from any center.
    if p[2] >= back_wall - vs && p[2] < back_wall {
        if scene.decals.iter().any(|d| d.contains_xy(p[0], p[1])) {
            return CLASS_DECAL;
        }
    }
    if let Some(o) = scene.objects.iter().rev().find(|o| o.shape.contains(p)) {
        return o.class;
    }
    if let Some((_, class)) = slabs.iter().find(|(b, _)| b.contains(p)) {
        return *class;
    }
    0
}
