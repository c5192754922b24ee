//! Procedural box-world rooms: a hollow wall shell, furniture boxes on the
//! floor, and optional zero-thickness wall decals ("posters") that show up
//! in color but not in depth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3};
use crate::metrics::SEMANTIC_CLASS_COUNT;

/// Room bounding extents in meters; matches the supported grid extents.
pub const ROOM_EXTENT: Vec3 = [4.8, 2.88, 4.8];
/// Air gap between the grid boundary and the outside of the wall shell.
pub const WALL_MARGIN: f64 = 0.16;
pub const WALL_THICKNESS: f64 = 0.16;
pub const WALL_ALBEDO: [f64; 3] = [0.78, 0.77, 0.74];

pub(crate) const CLASS_CEILING: u8 = 1;
pub(crate) const CLASS_FLOOR: u8 = 2;
pub(crate) const CLASS_WALL: u8 = 3;
/// Decals score as the "objects" class.
pub(crate) const CLASS_DECAL: u8 = SEMANTIC_CLASS_COUNT as u8;

/// Axis-aligned box, half-open: a point belongs iff `min <= p < max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!((0..3).all(|a| min[a] < max[a]), "degenerate box");
        Self { min, max }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    pub fn size(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s[0] * s[1] * s[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObject {
    pub shape: Aabb,
    pub class: u8,
    pub albedo: [f64; 3],
}

/// Colored rectangle flush on the back wall's interior face (the plane
/// `z = interior().max[2]`). Zero thickness: it tints RGB but never depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decal {
    pub x0: f64,
    pub width: f64,
    pub y0: f64,
    pub height: f64,
    pub albedo: [f64; 3],
}

impl Decal {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub extent: Vec3,
    pub camera: CameraIntrinsics,
    /// Camera-to-world pose; the world frame is the grid frame.
    pub camera_pose: RigidTransform,
    pub objects: Vec<BoxObject>,
    pub decals: Vec<Decal>,
}

impl SceneSpec {
    /// Interior air region enclosed by the wall shell.
    pub fn interior(&self) -> Aabb {
        let lo = WALL_MARGIN + WALL_THICKNESS;
        Aabb::new(
            [lo, lo, lo],
            [self.extent[0] - lo, self.extent[1] - lo, self.extent[2] - lo],
        )
    }

    /// Room region including the shell itself; everything outside is void.
    pub fn room_box(&self) -> Aabb {
        Aabb::new(
            [WALL_MARGIN, WALL_MARGIN, WALL_MARGIN],
            [
                self.extent[0] - WALL_MARGIN,
                self.extent[1] - WALL_MARGIN,
                self.extent[2] - WALL_MARGIN,
            ],
        )
    }

    /// Interior face of the wall the camera looks at; decals live here.
    pub fn back_wall_z(&self) -> f64 {
        self.interior().max[2]
    }

    /// Shell solids with their semantic classes. Floor and ceiling come
    /// first so they win the overlap at box edges deterministically.
    pub fn shell_slabs(&self) -> [(Aabb, u8); 6] {
        let r = self.room_box();
        let i = self.interior();
        [
            (Aabb::new(r.min, [r.max[0], i.min[1], r.max[2]]), CLASS_FLOOR),
            (Aabb::new([r.min[0], i.max[1], r.min[2]], r.max), CLASS_CEILING),
            (Aabb::new(r.min, [i.min[0], r.max[1], r.max[2]]), CLASS_WALL),
            (Aabb::new([i.max[0], r.min[1], r.min[2]], r.max), CLASS_WALL),
            (Aabb::new(r.min, [r.max[0], r.max[1], i.min[2]]), CLASS_WALL),
            (Aabb::new([r.min[0], r.min[1], i.max[2]], r.max), CLASS_WALL),
        ]
    }

    /// The same scene with every decal removed. Depth renders identically.
    pub fn without_decals(&self) -> SceneSpec {
        let mut s = self.clone();
        s.decals.clear();
        s
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |what: String| Err(DataError::SceneInvariant(what));
        if self.extent.iter().any(|&e| !(e > 2.0 * (WALL_MARGIN + WALL_THICKNESS))) {
            return bad(format!("extent {:?} leaves no interior", self.extent));
        }
        let interior = self.interior();
        let cam = self.camera_pose.translation();
        if !interior.contains(cam) {
            return Err(DataError::DegenerateCamera(format!(
                "position {cam:?} is outside the room interior"
            )));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let s = obj.shape;
            if (0..3).any(|a| s.min[a] < interior.min[a] || s.max[a] > interior.max[a]) {
                return bad(format!("object {i} leaves the interior: {s:?}"));
            }
            if s.contains(cam) {
                return Err(DataError::DegenerateCamera(format!(
                    "position {cam:?} is inside object {i}"
                )));
            }
            if obj.class == 0 || obj.class as usize > SEMANTIC_CLASS_COUNT {
                return bad(format!("object {i} has class {}", obj.class));
            }
            if obj.albedo.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return bad(format!("object {i} albedo out of range"));
            }
        }
        for (i, d) in self.decals.iter().enumerate() {
            if !(d.width > 0.0 && d.height > 0.0) {
                return bad(format!("decal {i} is degenerate"));
            }
            if d.x0 < interior.min[0]
                || d.x0 + d.width > interior.max[0]
                || d.y0 < interior.min[1]
                || d.y0 + d.height > interior.max[1]
            {
                return bad(format!("decal {i} leaves the back wall face"));
            }
            if d.albedo.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return bad(format!("decal {i} albedo out of range"));
            }
            for (j, other) in self.decals[..i].iter().enumerate() {
                let apart = d.x0 + d.width <= other.x0
                    || other.x0 + other.width <= d.x0
                    || d.y0 + d.height <= other.y0
                    || other.y0 + other.height <= d.y0;
                if !apart {
                    return bad(format!("decals {j} and {i} overlap"));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic scene synthesis. `difficulty` scales clutter: object count
/// is drawn from `[difficulty, 2*difficulty]` and each of the two decal
/// slots fires with probability `min(1, 0.55 * difficulty)`, so difficulty
/// 0 yields a bare room and difficulty 2 always carries both decals.
pub fn generate_scene(seed: u64, difficulty: u32) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = CameraIntrinsics::new(70.0, 70.0, 40.0, 30.0, 80, 60)
        .expect("fixed intrinsics are valid");

    let position = [
        2.4 + rng.gen_range(-0.3..0.3),
        1.44 + rng.gen_range(-0.12..0.12),
        0.45 + rng.gen_range(-0.08..0.08),
    ];
    let camera_pose = RigidTransform::camera_upright(position);

    let mut scene = SceneSpec {
        extent: ROOM_EXTENT,
        camera,
        camera_pose,
        objects: Vec::new(),
        decals: Vec::new(),
    };
    let interior = scene.interior();

    let n_obj = rng.gen_range(difficulty..=2 * difficulty) as usize;
    for _ in 0..n_obj {
        let sx = rng.gen_range(0.3..0.9);
        let sz = rng.gen_range(0.3..0.9);
        // Height cap keeps object tops below every sampled camera height.
        let sy = rng.gen_range(0.3..0.95);
        let x0 = rng.gen_range(interior.min[0]..interior.max[0] - sx);
        let z0 = rng.gen_range(interior.min[2]..interior.max[2] - sz);
        let y0 = interior.min[1];
        let class = rng.gen_range(4..=10u8);
        let albedo = [
            rng.gen_range(0.2..0.75),
            rng.gen_range(0.2..0.75),
            rng.gen_range(0.2..0.75),
        ];
        scene.objects.push(BoxObject {
            shape: Aabb::new([x0, y0, z0], [x0 + sx, y0 + sy, z0 + sz]),
            class,
            albedo,
        });
    }

    let p_decal = (0.55 * f64::from(difficulty)).min(1.0);
    // Slot x-ranges are disjoint by construction, so decals never overlap.
    let slots: [(std::ops::Range<f64>, std::ops::Range<f64>); 2] =
        [(0.5..1.1, 0.8..1.3), (2.5..3.0, 0.8..1.4)];
    for (x0_range, w_range) in slots {
        if !rng.gen_bool(p_decal) {
            continue;
        }
        let x0 = rng.gen_range(x0_range);
        let width = rng.gen_range(w_range);
        let y0 = rng.gen_range(0.8..1.3);
        let height = rng.gen_range(0.8..1.2);
        let albedo = [
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.05..0.3),
        ];
        scene.decals.push(Decal { x0, width, y0, height, albedo });
    }

    debug_assert!(scene.validate().is_ok());
    scene
}
