//! Scene-completion (binary) and semantic-scene-completion (per-class IoU)
//! evaluation.
//!
//! Both metrics score only voxels the occupancy grid marks as inside the
//! room and field of view (OccupiedIn or OccludedFreeIn) whose ground truth
//! is not IGNORE. Undefined ratios (0/0) are reported as `None`, never
//! silently zeroed.

use crate::geometry::VoxelGridSpec;
use crate::occupancy::{OccupancyGrid, OccupancyState};
use thiserror::Error;

/// Ground-truth marker for voxels outside the view or the room.
pub const IGNORE: u8 = 255;

/// Semantic classes 1..=11; 0 is empty space.
pub const SEMANTIC_CLASS_COUNT: usize = 11;

/// Column names for reports, classes 1..=11 in order.
pub const CLASS_NAMES: [&str; SEMANTIC_CLASS_COUNT] = [
    "ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tvs", "furn.", "objs.",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("volume dims {got:?} do not match expected {expected:?}")]
    DimMismatch { got: [usize; 3], expected: [usize; 3] },
    #[error("label {label} at voxel {index} is not a class id or the ignore marker")]
    BadLabel { label: u8, index: usize },
}

/// Per-voxel class indices in `{0..=11}` or [`IGNORE`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    spec: VoxelGridSpec,
    values: Vec<u8>,
}

impl LabelVolume {
    pub fn new(spec: VoxelGridSpec, values: Vec<u8>) -> Result<Self, MetricsError> {
        assert_eq!(values.len(), spec.voxel_count(), "volume size mismatch");
        for (index, &label) in values.iter().enumerate() {
            if label as usize > SEMANTIC_CLASS_COUNT && label != IGNORE {
                return Err(MetricsError::BadLabel { label, index });
            }
        }
        Ok(Self { spec, values })
    }

    pub fn new_empty(spec: VoxelGridSpec) -> Self {
        Self { spec, values: vec![0; spec.voxel_count()] }
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> u8 {
        self.values[self.spec.flat_index(ix, iy, iz)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, label: u8) {
        debug_assert!(label as usize <= SEMANTIC_CLASS_COUNT || label == IGNORE);
        let idx = self.spec.flat_index(ix, iy, iz);
        self.values[idx] = label;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Binary completion counts, accumulable across samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ScCounts {
    pub fn add_volume(
        &mut self,
        pred: &LabelVolume,
        gt: &LabelVolume,
        grid: &OccupancyGrid,
    ) -> Result<(), MetricsError> {
        for (p, g) in eval_domain(pred, gt, grid)? {
            let (p, g) = (p >= 1, g >= 1);
            match (p, g) {
                (true, true) => self.true_pos += 1,
                (true, false) => self.false_pos += 1,
                (false, true) => self.false_neg += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ScCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    pub fn iou(&self) -> Option<f64> {
        ratio(self.true_pos, self.true_pos + self.false_pos + self.false_neg)
    }
}

/// Per-class intersection and union counts, accumulable across samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SemanticCounts {
    pub intersection: [u64; SEMANTIC_CLASS_COUNT],
    pub union: [u64; SEMANTIC_CLASS_COUNT],
}

impl Default for SemanticCounts {
    fn default() -> Self {
        Self { intersection: [0; SEMANTIC_CLASS_COUNT], union: [0; SEMANTIC_CLASS_COUNT] }
    }
}

impl SemanticCounts {
    pub fn add_volume(
        &mut self,
        pred: &LabelVolume,
        gt: &LabelVolume,
        grid: &OccupancyGrid,
    ) -> Result<(), MetricsError> {
        for (p, g) in eval_domain(pred, gt, grid)? {
            for c in 1..=SEMANTIC_CLASS_COUNT as u8 {
                let (pc, gc) = (p == c, g == c);
                if pc && gc {
                    self.intersection[c as usize - 1] += 1;
                }
                if pc || gc {
                    self.union[c as usize - 1] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SemanticCounts) {
        for c in 0..SEMANTIC_CLASS_COUNT {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
        }
    }

    /// IoU per class; `None` for classes absent from both pred and gt.
    pub fn per_class_iou(&self) -> [Option<f64>; SEMANTIC_CLASS_COUNT] {
        let mut out = [None; SEMANTIC_CLASS_COUNT];
        for c in 0..SEMANTIC_CLASS_COUNT {
            out[c] = ratio(self.intersection[c], self.union[c]);
        }
        out
    }

    /// Mean over classes present in at least one of pred and gt.
    pub fn avg_iou(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_iou().iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

/// Iterator over (pred, gt) label pairs inside the evaluation domain:
/// in-room in-FOV voxels (grid not Other) with gt not IGNORE. Pred IGNORE
/// inside the domain scores as empty.
fn eval_domain<'a>(
    pred: &'a LabelVolume,
    gt: &'a LabelVolume,
    grid: &'a OccupancyGrid,
) -> Result<impl Iterator<Item = (u8, u8)> + 'a, MetricsError> {
    if pred.spec.dims != gt.spec.dims {
        return Err(MetricsError::DimMismatch { got: pred.spec.dims, expected: gt.spec.dims });
    }
    if grid.spec().dims != gt.spec.dims {
        return Err(MetricsError::DimMismatch { got: grid.spec().dims, expected: gt.spec.dims });
    }
    Ok(pred
        .values
        .iter()
        .zip(gt.values.iter())
        .zip(grid.values().iter())
        .filter(|((_, &g), &s)| s != OccupancyState::Other && g != IGNORE)
        .map(|((&p, &g), _)| (if p == IGNORE { 0 } else { p }, g)))
}

/// Binary completion scores over the evaluation domain.
pub fn scene_completion(
    pred: &LabelVolume,
    gt: &LabelVolume,
    grid: &OccupancyGrid,
) -> Result<(Option<f64>, Option<f64>, Option<f64>), MetricsError> {
    let mut counts = ScCounts::default();
    counts.add_volume(pred, gt, grid)?;
    Ok((counts.precision(), counts.recall(), counts.iou()))
}

/// Per-class IoU plus the average over defined classes.
pub fn semantic_iou(
    pred: &LabelVolume,
    gt: &LabelVolume,
    grid: &OccupancyGrid,
) -> Result<([Option<f64>; SEMANTIC_CLASS_COUNT], Option<f64>), MetricsError> {
    let mut counts = SemanticCounts::default();
    counts.add_volume(pred, gt, grid)?;
    Ok((counts.per_class_iou(), counts.avg_iou()))
}

/// Combined evaluation scores; `None` marks undefined ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sc_precision: Option<f64>,
    pub sc_recall: Option<f64>,
    pub sc_iou: Option<f64>,
    pub per_class_iou: [Option<f64>; SEMANTIC_CLASS_COUNT],
    pub avg_iou: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(sc: &ScCounts, sem: &SemanticCounts) -> Self {
        Self {
            sc_precision: sc.precision(),
            sc_recall: sc.recall(),
            sc_iou: sc.iou(),
            per_class_iou: sem.per_class_iou(),
            avg_iou: sem.avg_iou(),
        }
    }

    /// Two-row table with percentages, dashes for undefined entries.
    pub fn text_table(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            match v {
                Some(x) => format!("{:5.1}", 100.0 * x),
                None => format!("{:>5}", "-"),
            }
        }
        let mut header = vec!["prec.".to_string(), "rec.".to_string(), "IoU".to_string()];
        let mut row = vec![cell(self.sc_precision), cell(self.sc_recall), cell(self.sc_iou)];
        header.push("|".into());
        row.push("|".into());
        for (name, iou) in CLASS_NAMES.iter().zip(self.per_class_iou.iter()) {
            header.push(name.to_string());
            row.push(cell(*iou));
        }
        header.push("avg.".into());
        row.push(cell(self.avg_iou));
        let widths: Vec<usize> =
            header.iter().zip(row.iter()).map(|(h, r)| h.len().max(r.len())).collect();
        let fmt = |cells: &[String]| {
            cells
                .iter()
                .zip(widths.iter())
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!("{}\n{}\n", fmt(&header), fmt(&row))
    }

    /// `key value` lines with fractional values; `undef` for undefined.
    pub fn key_values(&self) -> String {
        fn line(key: &str, v: Option<f64>) -> String {
            match v {
                Some(x) => format!("{key} {x:.6}\n"),
                None => format!("{key} undef\n"),
            }
        }
        let mut out = String::new();
        out.push_str(&line("prec.", self.sc_precision));
        out.push_str(&line("rec.", self.sc_recall));
        out.push_str(&line("IoU", self.sc_iou));
        for (name, iou) in CLASS_NAMES.iter().zip(self.per_class_iou.iter()) {
            out.push_str(&line(name, *iou));
        }
        out.push_str(&line("avg.", self.avg_iou));
        out
    }
}
