//! Canny edge detection on RGB renders, and lifting of edge pixels into a
//! 3D point cloud through the registered depth map.
//!
//! The detector is the classic chain: luma grayscale, separable Gaussian
//! blur, 3x3 Sobel gradients, non-maximum suppression across four quantized
//! orientations, then two-threshold hysteresis with 8-connectivity. Sobel
//! responses are scaled by 1/4 so gradient magnitudes are in intensity
//! units: a full-contrast step yields magnitude 1, which makes the
//! hysteresis thresholds directly comparable to pixel values in `[0, 1]`.

use crate::geometry::{
    unproject_pixel, CameraIntrinsics, DepthMap, GeometryError, PointCloud, RigidTransform,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("image dimensions must be nonzero")]
    EmptyImage,
    #[error("pixel value outside [0, 1] or non-finite")]
    BadPixel,
    #[error("sigma {0} must be positive and finite")]
    BadSigma(f64),
    #[error("thresholds must satisfy 0 < t_low < t_high, got ({t_low}, {t_high})")]
    BadThresholds { t_low: f64, t_high: f64 },
    #[error("image is {width}x{height}; need at least 3x3")]
    TooSmall { width: usize, height: usize },
    #[error("edge mask is {mask_width}x{mask_height} but depth map is {dm_width}x{dm_height}")]
    SizeMismatch {
        mask_width: usize,
        mask_height: usize,
        dm_width: usize,
        dm_height: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// 8-bit-agnostic RGB image; channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self, EdgeError> {
        if width == 0 || height == 0 {
            return Err(EdgeError::EmptyImage);
        }
        assert_eq!(data.len(), width * height, "pixel buffer size mismatch");
        if data
            .iter()
            .flatten()
            .any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0)
        {
            return Err(EdgeError::BadPixel);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        self.data[v * self.width + u]
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, EdgeError> {
        if width == 0 || height == 0 {
            return Err(EdgeError::EmptyImage);
        }
        assert_eq!(data.len(), width * height, "pixel buffer size mismatch");
        if data.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(EdgeError::BadPixel);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Boolean edge map aligned with its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl EdgeMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size mismatch");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// Per-pixel Sobel output: components, magnitude, and orientation
/// (`atan2(gy, gx)` in radians). Components are in intensity units.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub orientation: Vec<f64>,
}

/// ITU-R 601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    let data = img
        .data()
        .iter()
        .map(|[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)` and edge
/// replication at the borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, EdgeError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EdgeError::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);

    let mut horizontal = vec![0.0; w * h];
    for v in 0..h {
        let row = &img.data[v * w..(v + 1) * w];
        for u in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let su = clamp_index(u as isize + ki as isize - radius, w);
                acc += kv * row[su];
            }
            horizontal[v * w + u] = acc;
        }
    }

    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sv = clamp_index(v as isize + ki as isize - radius, h);
                acc += kv * horizontal[sv * w + u];
            }
            // Convex combination of [0,1] values; clamp shields rounding.
            out[v * w + u] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(GrayImage { width: w, height: h, data: out })
}

/// 3x3 Sobel gradients with border replication, responses scaled by 1/4.
pub fn sobel_gradients(img: &GrayImage) -> Result<Gradients, EdgeError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(EdgeError::TooSmall { width: w, height: h });
    }
    let at = |u: isize, v: isize| img.data[clamp_index(v, h) * w + clamp_index(u, w)];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut magnitude = vec![0.0; w * h];
    let mut orientation = vec![0.0; w * h];
    for v in 0..h as isize {
        for u in 0..w as isize {
            let tl = at(u - 1, v - 1);
            let tc = at(u, v - 1);
            let tr = at(u + 1, v - 1);
            let ml = at(u - 1, v);
            let mr = at(u + 1, v);
            let bl = at(u - 1, v + 1);
            let bc = at(u, v + 1);
            let br = at(u + 1, v + 1);
            // Differenced per tap so constant regions cancel exactly.
            let sx = ((tr - tl) + 2.0 * (mr - ml) + (br - bl)) / 4.0;
            let sy = ((bl - tl) + 2.0 * (bc - tc) + (br - tr)) / 4.0;
            let i = (v as usize) * w + u as usize;
            gx[i] = sx;
            gy[i] = sy;
            magnitude[i] = (sx * sx + sy * sy).sqrt();
            orientation[i] = sy.atan2(sx);
        }
    }
    Ok(Gradients { width: w, height: h, gx, gy, magnitude, orientation })
}

/// Neighbor offset for one of the four quantized gradient orientations.
fn quantized_offset(orientation: f64) -> (isize, isize) {
    let mut deg = orientation.to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Thins gradient magnitudes to local maxima along the quantized gradient
/// direction. The asymmetric tie rule (`>` forward, `>=` backward) collapses
/// the two-pixel plateau an ideal step produces into a single pixel.
fn non_maximum_suppression(g: &Gradients) -> Vec<f64> {
    let (w, h) = (g.width, g.height);
    let mut out = vec![0.0; w * h];
    for v in 0..h as isize {
        for u in 0..w as isize {
            let i = (v as usize) * w + u as usize;
            let m = g.magnitude[i];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy) = quantized_offset(g.orientation[i]);
            let sample = |uu: isize, vv: isize| -> f64 {
                if uu < 0 || vv < 0 || uu >= w as isize || vv >= h as isize {
                    0.0
                } else {
                    g.magnitude[(vv as usize) * w + uu as usize]
                }
            };
            let forward = sample(u + dx, v + dy);
            let backward = sample(u - dx, v - dy);
            if m > forward && m >= backward {
                out[i] = m;
            }
        }
    }
    out
}

/// Grows the strong-edge set into weak pixels via 8-connectivity.
fn hysteresis(thinned: &[f64], w: usize, h: usize, t_low: f64, t_high: f64) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if thinned[v * w + u] >= t_high && !mask[v * w + u] {
                mask[v * w + u] = true;
                stack.push((u, v));
                while let Some((cu, cv)) = stack.pop() {
                    for dv in -1isize..=1 {
                        for du in -1isize..=1 {
                            if du == 0 && dv == 0 {
                                continue;
                            }
                            let nu = cu as isize + du;
                            let nv = cv as isize + dv;
                            if nu < 0 || nv < 0 || nu >= w as isize || nv >= h as isize {
                                continue;
                            }
                            let ni = (nv as usize) * w + nu as usize;
                            if !mask[ni] && thinned[ni] >= t_low {
                                mask[ni] = true;
                                stack.push((nu as usize, nv as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    mask
}

/// Full Canny detector. Thresholds are in intensity units relative to a
/// unit-contrast step.
pub fn canny(
    img: &GrayImage,
    sigma: f64,
    t_low: f64,
    t_high: f64,
) -> Result<EdgeMask, EdgeError> {
    if !(t_low > 0.0 && t_low < t_high && t_high.is_finite()) {
        return Err(EdgeError::BadThresholds { t_low, t_high });
    }
    let blurred = gaussian_blur(img, sigma)?;
    let grads = sobel_gradients(&blurred)?;
    let thinned = non_maximum_suppression(&grads);
    let mask = hysteresis(&thinned, img.width, img.height, t_low, t_high);
    Ok(EdgeMask { width: img.width, height: img.height, data: mask })
}

/// Outcome of lifting edge pixels to 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCloudOutcome {
    pub cloud: PointCloud,
    /// Edge pixels without a depth reading.
    pub skipped: usize,
}

/// Unprojects each edge pixel through the depth map into world space.
/// Edge pixels with missing depth are skipped and counted.
pub fn edges_to_point_cloud(
    mask: &EdgeMask,
    dm: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<EdgeCloudOutcome, EdgeError> {
    if mask.width != dm.width() || mask.height != dm.height() {
        return Err(EdgeError::SizeMismatch {
            mask_width: mask.width,
            mask_height: mask.height,
            dm_width: dm.width(),
            dm_height: dm.height(),
        });
    }
    if dm.width() != k.width || dm.height() != k.height {
        return Err(EdgeError::Geometry(GeometryError::SizeMismatch {
            dm_width: dm.width(),
            dm_height: dm.height(),
            k_width: k.width,
            k_height: k.height,
        }));
    }
    let mut points = Vec::new();
    let mut skipped = 0usize;
    for v in 0..mask.height {
        for u in 0..mask.width {
            if !mask.get(u, v) {
                continue;
            }
            let d = dm.get(u, v);
            if d == DepthMap::MISSING {
                skipped += 1;
                continue;
            }
            let p_cam = unproject_pixel(u as f64, v as f64, d, k)?;
            points.push(t.apply(p_cam));
        }
    }
    Ok(EdgeCloudOutcome { cloud: PointCloud::new(points)?, skipped })
}
