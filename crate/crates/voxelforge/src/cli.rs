//! Command-line front end wiring the whole pipeline: synthesize samples,
//! preprocess them into network-ready volumes, train, evaluate, export.
//!
//! Every command validates its configuration before touching the
//! filesystem and writes a JSON snapshot of it next to its outputs, so a
//! finished run can be reproduced with `--config <snapshot>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    camera_path_for, export_label_ply, export_tsdf_ply, generate_scene, read_camera, read_manifest, read_pgm16,
    read_ppm, read_volume, render, write_camera, write_manifest, write_pgm16, write_ppm,
    write_volume, DataError, Manifest, ManifestEntry, PlyStats, Sample, VolumeFile, VolumePayload,
};
use crate::edges::{canny, edges_to_point_cloud, rgb_to_gray, EdgeError};
use crate::geometry::{depth_to_point_cloud, voxelize, GeometryError, VoxelGridSpec};
use crate::metrics::{EvalReport, MetricsError, ScCounts, SemanticCounts};
use crate::network::{
    checkpoint, logits_to_labels, CheckpointError, CompletionNet, FusionScheme, NetworkConfig,
    NetworkError,
};
use crate::occupancy::{build_occupancy_grid, OccupancyError, OccupancyGrid};
use crate::rng::derive_seed;
use crate::train::{batch_input, train, StepLog, TrainError, TrainSample};
use crate::tsdf::{
    compute_visibility, encode_channel, ChannelKind, TsdfError, TsdfKind, TsdfVolume,
};

/// Truncation distance in voxels; fixed across grid resolutions so the
/// encoded band always spans the same number of cells.
pub const TRUNCATION_VOXELS: f64 = 12.0;

const RUN_CONFIG: &str = "run_config.json";
const LOG_FILE: &str = "train_log.txt";
const CHECKPOINT_FILE: &str = "checkpoint.enck";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Edges(#[from] EdgeError),
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    /// 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Train(TrainError::NonFinite { .. }) => 3,
            CliError::Network(NetworkError::NotADistribution { sum, .. }) if sum.is_nan() => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

// stdout may be a closed pipe (`voxelforge train | head`); progress output
// must never abort the run.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "voxelforge",
    version,
    about = "Semantic scene completion from synthetic RGB-D: edges, F-TSDF volumes, 3D fusion network"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic RGB-D samples with exact ground truth
    Synth(SynthArgs),
    /// Turn samples into surface/edge F-TSDF volumes plus training targets
    Preprocess(PreprocessArgs),
    /// Train the completion network on a preprocessed directory
    Train(TrainArgs),
    /// Score a checkpoint against preprocessed ground truth
    Eval(EvalArgs),
    /// Export a volume file as a colored PLY mesh
    ExportPly(ExportPlyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridChoice {
    /// 240x144x240 at 0.02 m
    Canonical,
    /// 60x36x60 at 0.08 m
    Desk,
}

impl GridChoice {
    pub fn spec(self) -> VoxelGridSpec {
        match self {
            GridChoice::Canonical => VoxelGridSpec::canonical(),
            GridChoice::Desk => VoxelGridSpec::desk(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionChoice {
    Ef,
    Mf,
    Lf,
}

impl FusionChoice {
    pub fn scheme(self) -> FusionScheme {
        match self {
            FusionChoice::Ef => FusionScheme::Early,
            FusionChoice::Mf => FusionScheme::Middle,
            FusionChoice::Lf => FusionScheme::Late,
        }
    }
}

/// Self-describing snapshot of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunConfig {
    Synth(SynthConfig),
    Preprocess(PreprocessConfig),
    Train(TrainCmdConfig),
    Eval(EvalConfig),
    ExportPly(ExportPlyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub difficulty: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub grid: GridChoice,
    pub sigma: f64,
    pub t_low: f64,
    pub t_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub fusion: FusionChoice,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub schedule: bool,
    pub zero_edges: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub oracle: bool,
    pub zero_edges: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportPlyConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    pub threshold: f32,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Replay a saved run configuration instead of passing flags
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Number of samples to generate
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    count: Option<usize>,
    /// Scene difficulty; scales object count and decal probability
    #[arg(long, default_value_t = 1, conflicts_with = "config")]
    difficulty: u32,
    /// Master seed; sample i derives its own stream from it
    #[arg(long, default_value_t = 0, conflicts_with = "config")]
    seed: u64,
    /// Output directory for samples and the manifest
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    out: Option<PathBuf>,
    /// Voxel grid the ground truth is labeled on
    #[arg(long, value_enum, default_value_t = GridChoice::Desk, conflicts_with = "config")]
    grid: GridChoice,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Replay a saved run configuration instead of passing flags
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Manifest file listing rgb/depth/gt/room paths per sample
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Output directory for preprocessed volumes
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    out: Option<PathBuf>,
    /// Voxel grid to encode on; must match the ground-truth grid
    #[arg(long, value_enum, default_value_t = GridChoice::Desk, conflicts_with = "config")]
    grid: GridChoice,
    /// Gaussian blur width for the edge detector
    #[arg(long, default_value_t = 1.4, conflicts_with = "config")]
    sigma: f64,
    /// Lower hysteresis threshold
    #[arg(long, default_value_t = 0.1, conflicts_with = "config")]
    t_low: f64,
    /// Upper hysteresis threshold
    #[arg(long, default_value_t = 0.2, conflicts_with = "config")]
    t_high: f64,
    /// Recompute samples whose outputs are already up to date
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Replay a saved run configuration instead of passing flags
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Preprocessed directory to train on
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint and loss log
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    out: Option<PathBuf>,
    /// Fusion scheme
    #[arg(long, value_enum, default_value_t = FusionChoice::Ef, conflicts_with = "config")]
    fusion: FusionChoice,
    #[arg(long, default_value_t = 12, conflicts_with = "config")]
    epochs: usize,
    /// Samples per optimizer step
    #[arg(long, default_value_t = 3, conflicts_with = "config")]
    batch: usize,
    /// Seed for initialization and per-step weight resampling
    #[arg(long, default_value_t = 0, conflicts_with = "config")]
    seed: u64,
    /// Constant base learning rate instead of the one-cycle schedule
    #[arg(long, conflicts_with = "config")]
    no_schedule: bool,
    /// Ablation: feed a zeroed edge channel
    #[arg(long, conflicts_with = "config")]
    zero_edges: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Replay a saved run configuration instead of passing flags
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Trained checkpoint to score
    #[arg(long, required_unless_present_any = ["config", "oracle"], conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
    /// Preprocessed directory with inputs and ground truth
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    data: Option<PathBuf>,
    /// Output directory for the report
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    out: Option<PathBuf>,
    /// Score the ground truth against itself instead of a checkpoint
    #[arg(long, conflicts_with = "config")]
    oracle: bool,
    /// Ablation: feed a zeroed edge channel
    #[arg(long, conflicts_with = "config")]
    zero_edges: bool,
}

#[derive(Args, Debug)]
struct ExportPlyArgs {
    /// Replay a saved run configuration instead of passing flags
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Volume file to export (labels or scalar volume)
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    input: Option<PathBuf>,
    /// Output PLY path
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    out: Option<PathBuf>,
    /// Minimum |value| for a scalar voxel to be emitted
    #[arg(long, default_value_t = 0.5, conflicts_with = "config")]
    threshold: f32,
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn save_config(path: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(cfg).expect("config serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn wrong_command(expected: &str, path: &Path) -> CliError {
    CliError::Usage(format!("{}: not a saved {expected} configuration", path.display()))
}

impl SynthArgs {
    fn resolve(self) -> Result<SynthConfig, CliError> {
        if let Some(path) = &self.config {
            return match load_config(path)? {
                RunConfig::Synth(c) => Ok(c),
                _ => Err(wrong_command("synth", path)),
            };
        }
        Ok(SynthConfig {
            count: self.count.expect("clap enforces count"),
            difficulty: self.difficulty,
            seed: self.seed,
            out: self.out.expect("clap enforces out"),
            grid: self.grid,
        })
    }
}

impl PreprocessArgs {
    fn resolve(self) -> Result<PreprocessConfig, CliError> {
        if let Some(path) = &self.config {
            return match load_config(path)? {
                RunConfig::Preprocess(c) => Ok(c),
                _ => Err(wrong_command("preprocess", path)),
            };
        }
        Ok(PreprocessConfig {
            manifest: self.manifest.expect("clap enforces manifest"),
            out: self.out.expect("clap enforces out"),
            grid: self.grid,
            sigma: self.sigma,
            t_low: self.t_low,
            t_high: self.t_high,
        })
    }
}

impl TrainArgs {
    fn resolve(self) -> Result<TrainCmdConfig, CliError> {
        if let Some(path) = &self.config {
            return match load_config(path)? {
                RunConfig::Train(c) => Ok(c),
                _ => Err(wrong_command("train", path)),
            };
        }
        Ok(TrainCmdConfig {
            data: self.data.expect("clap enforces data"),
            out: self.out.expect("clap enforces out"),
            fusion: self.fusion,
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            schedule: !self.no_schedule,
            zero_edges: self.zero_edges,
        })
    }
}

impl EvalArgs {
    fn resolve(self) -> Result<EvalConfig, CliError> {
        if let Some(path) = &self.config {
            return match load_config(path)? {
                RunConfig::Eval(c) => Ok(c),
                _ => Err(wrong_command("eval", path)),
            };
        }
        Ok(EvalConfig {
            checkpoint: self.checkpoint,
            data: self.data.expect("clap enforces data"),
            out: self.out.expect("clap enforces out"),
            oracle: self.oracle,
            zero_edges: self.zero_edges,
        })
    }
}

impl ExportPlyArgs {
    fn resolve(self) -> Result<ExportPlyConfig, CliError> {
        if let Some(path) = &self.config {
            return match load_config(path)? {
                RunConfig::ExportPly(c) => Ok(c),
                _ => Err(wrong_command("export-ply", path)),
            };
        }
        Ok(ExportPlyConfig {
            input: self.input.expect("clap enforces input"),
            out: self.out.expect("clap enforces out"),
            threshold: self.threshold,
        })
    }
}

impl PreprocessConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CliError::Usage(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.t_low > 0.0 && self.t_low < self.t_high && self.t_high.is_finite()) {
            return Err(CliError::Usage(format!(
                "need 0 < t-low < t-high, got {} and {}",
                self.t_low, self.t_high
            )));
        }
        Ok(())
    }
}

impl TrainCmdConfig {
    fn validate(&self) -> Result<(), CliError> {
        if self.epochs == 0 {
            return Err(CliError::Usage("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(CliError::Usage("batch must be at least 1".into()));
        }
        Ok(())
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !self.oracle && self.checkpoint.is_none() {
            return Err(CliError::Usage("eval needs --checkpoint or --oracle".into()));
        }
        Ok(())
    }
}

impl ExportPlyConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(CliError::Usage(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Caps the global worker pool when VOXELFORGE_THREADS is set.
fn init_threads() {
    if let Some(n) = std::env::var("VOXELFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
    {
        // Ignores failure: the pool can only be built once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses and runs the given command line, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match cli.cmd {
        Cmd::Synth(args) => args.resolve().and_then(|c| cmd_synth(&c)),
        Cmd::Preprocess(args) => {
            let force = args.force;
            args.resolve().and_then(|c| cmd_preprocess(&c, force))
        }
        Cmd::Train(args) => args.resolve().and_then(|c| cmd_train(&c)),
        Cmd::Eval(args) => args.resolve().and_then(|c| cmd_eval(&c)),
        Cmd::ExportPly(args) => args.resolve().and_then(|c| cmd_export_ply(&c)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            code_with_sources(&e)
        }
    }
}

fn code_with_sources(e: &CliError) -> i32 {
    let code = e.exit_code();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    code
}

pub fn cmd_synth(cfg: &SynthConfig) -> Result<(), CliError> {
    let grid = cfg.grid.spec();
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let mut entries = Vec::with_capacity(cfg.count);
    let mut clamped = 0usize;
    for i in 0..cfg.count {
        let name = format!("sample_{i:04}");
        let dir = cfg.out.join(&name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let scene = generate_scene(derive_seed(cfg.seed, i as u64), cfg.difficulty);
        let sample = render(&scene, &grid)?;
        let depth_path = dir.join("depth.pgm");
        write_ppm(&dir.join("rgb.ppm"), &sample.rgb)?;
        clamped += write_pgm16(&depth_path, &sample.depth)?;
        write_volume(&dir.join("gt.evox"), &VolumeFile::from_labels(&sample.gt))?;
        write_volume(&dir.join("room.evox"), &VolumeFile::from_binary(&sample.room))?;
        write_camera(&camera_path_for(&depth_path), &sample.camera, &sample.cam_to_grid)?;
        entries.push(ManifestEntry {
            rgb: PathBuf::from(&name).join("rgb.ppm"),
            depth: PathBuf::from(&name).join("depth.pgm"),
            gt: PathBuf::from(&name).join("gt.evox"),
            room: PathBuf::from(&name).join("room.evox"),
        });
    }
    write_manifest(&cfg.out.join("manifest.txt"), &Manifest { entries })?;
    save_config(&cfg.out.join(RUN_CONFIG), &RunConfig::Synth(cfg.clone()))?;
    if clamped > 0 {
        eprintln!("warning: {clamped} depth readings clamped to the 16-bit millimeter range");
    }
    say!("synthesized {} samples into {}", cfg.count, cfg.out.display());
    Ok(())
}

/// Canny settings for the edge channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannySettings {
    pub sigma: f64,
    pub t_low: f64,
    pub t_high: f64,
}

impl Default for CannySettings {
    fn default() -> Self {
        Self { sigma: 1.4, t_low: 0.1, t_high: 0.2 }
    }
}

/// One sample's worth of network-ready volumes: F-TSDF inputs at grid
/// resolution, targets and loss domain at the output (1/4) resolution.
#[derive(Debug, Clone)]
pub struct PreprocessedSample {
    pub surface: TsdfVolume,
    pub edge: TsdfVolume,
    pub occupancy: OccupancyGrid,
    pub labels: crate::metrics::LabelVolume,
}

impl From<PreprocessedSample> for TrainSample {
    fn from(p: PreprocessedSample) -> Self {
        TrainSample { surface: p.surface, edge: p.edge, occupancy: p.occupancy, labels: p.labels }
    }
}

/// Full per-sample pipeline: depth cloud and edge cloud to flipped TSDF
/// channels sharing one visibility classification, then downsampled labels,
/// room mask, and occupancy states for the loss.
pub fn preprocess_sample(
    sample: &Sample,
    grid: &VoxelGridSpec,
    canny_cfg: &CannySettings,
) -> Result<PreprocessedSample, CliError> {
    if sample.gt.spec() != grid {
        return Err(CliError::Data(DataError::GridMismatch(format!(
            "sample is labeled on {:?} at {} but preprocessing expects {:?} at {}",
            sample.gt.spec().dims,
            sample.gt.spec().voxel_size,
            grid.dims,
            grid.voxel_size
        ))));
    }
    let truncation = TRUNCATION_VOXELS * grid.voxel_size;
    let cloud = depth_to_point_cloud(&sample.depth, &sample.camera, &sample.cam_to_grid)?;
    let occupied = voxelize(&cloud, grid).volume;
    let vis =
        compute_visibility(&sample.depth, &sample.camera, &sample.cam_to_grid, grid, &occupied)?;
    let surface = encode_channel(&cloud, &vis, grid, truncation, ChannelKind::Surface)?.volume;

    let mask = canny(&rgb_to_gray(&sample.rgb), canny_cfg.sigma, canny_cfg.t_low, canny_cfg.t_high)?;
    let edge_cloud =
        edges_to_point_cloud(&mask, &sample.depth, &sample.camera, &sample.cam_to_grid)?.cloud;
    let edge = encode_channel(&edge_cloud, &vis, grid, truncation, ChannelKind::Edge)?.volume;

    let labels = crate::data::downsample_labels(&sample.gt, 4)?;
    let room = crate::data::downsample_room(&sample.room, 4)?;
    let coarse = *labels.spec();
    let coarse_occupied = voxelize(&cloud, &coarse).volume;
    let coarse_vis = compute_visibility(
        &sample.depth,
        &sample.camera,
        &sample.cam_to_grid,
        &coarse,
        &coarse_occupied,
    )?;
    let occupancy = build_occupancy_grid(&labels, &coarse_vis, &room)?;
    Ok(PreprocessedSample { surface, edge, occupancy, labels })
}

fn load_sample(entry: &ManifestEntry) -> Result<Sample, CliError> {
    let rgb = read_ppm(&entry.rgb)?;
    let depth = read_pgm16(&entry.depth)?;
    let gt = read_volume(&entry.gt)?.into_labels()?;
    let room = read_volume(&entry.room)?.into_binary()?;
    let (camera, cam_to_grid) = read_camera(&camera_path_for(&entry.depth))?;
    Ok(Sample::new(rgb, depth, gt, room, camera, cam_to_grid)?)
}

fn mtime(path: &Path) -> Result<SystemTime, CliError> {
    fs::metadata(path).and_then(|m| m.modified()).map_err(io_err(path))
}

/// True when all four outputs exist and none predates any input.
fn up_to_date(entry: &ManifestEntry, outputs: &[PathBuf; 4]) -> Result<bool, CliError> {
    if outputs.iter().any(|p| !p.exists()) {
        return Ok(false);
    }
    let inputs = [
        entry.rgb.clone(),
        entry.depth.clone(),
        entry.gt.clone(),
        entry.room.clone(),
        camera_path_for(&entry.depth),
    ];
    let mut newest_in = SystemTime::UNIX_EPOCH;
    for p in &inputs {
        newest_in = newest_in.max(mtime(p)?);
    }
    for p in outputs {
        if mtime(p)? < newest_in {
            return Ok(false);
        }
    }
    Ok(true)
}

fn sample_output_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("surface.evox"),
        dir.join("edge.evox"),
        dir.join("occupancy.evox"),
        dir.join("labels.evox"),
    ]
}

pub fn cmd_preprocess(cfg: &PreprocessConfig, force: bool) -> Result<(), CliError> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.manifest)?;
    let base = cfg.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let grid = cfg.grid.spec();
    let canny_cfg = CannySettings { sigma: cfg.sigma, t_low: cfg.t_low, t_high: cfg.t_high };
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;

    let processed: Vec<bool> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, raw)| -> Result<bool, CliError> {
            let entry = raw.resolved(&base);
            let dir = cfg.out.join(format!("sample_{i:04}"));
            let outputs = sample_output_paths(&dir);
            if !force && up_to_date(&entry, &outputs)? {
                return Ok(false);
            }
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let sample = load_sample(&entry)?;
            let pre = preprocess_sample(&sample, &grid, &canny_cfg)?;
            write_volume(&outputs[0], &VolumeFile::from_tsdf(&pre.surface))?;
            write_volume(&outputs[1], &VolumeFile::from_tsdf(&pre.edge))?;
            write_volume(&outputs[2], &VolumeFile::from_occupancy(&pre.occupancy))?;
            write_volume(&outputs[3], &VolumeFile::from_labels(&pre.labels))?;
            Ok(true)
        })
        .collect::<Result<_, _>>()?;

    save_config(&cfg.out.join(RUN_CONFIG), &RunConfig::Preprocess(cfg.clone()))?;
    let fresh = processed.iter().filter(|p| **p).count();
    say!(
        "preprocessed {fresh} samples into {} ({} already up to date)",
        cfg.out.display(),
        processed.len() - fresh
    );
    Ok(())
}

/// Loads every `sample_NNNN` directory under `data`, in index order.
pub fn load_preprocessed(data: &Path) -> Result<Vec<TrainSample>, CliError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data)
        .map_err(io_err(data))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("sample_"))
        })
        .collect();
    dirs.sort();
    let mut samples = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let [surface, edge, occupancy, labels] = sample_output_paths(dir);
        let (spec, values) = read_volume(&surface)?.into_scalars()?;
        let surface = TsdfVolume::from_values(spec, values, TsdfKind::Ftsdf, ChannelKind::Surface);
        let (spec, values) = read_volume(&edge)?.into_scalars()?;
        let edge = TsdfVolume::from_values(spec, values, TsdfKind::Ftsdf, ChannelKind::Edge);
        samples.push(TrainSample {
            surface,
            edge,
            occupancy: read_volume(&occupancy)?.into_occupancy()?,
            labels: read_volume(&labels)?.into_labels()?,
        });
    }
    Ok(samples)
}

fn no_samples(data: &Path) -> CliError {
    CliError::Data(DataError::Malformed {
        path: data.to_path_buf(),
        what: "no preprocessed samples found".into(),
    })
}

pub fn cmd_train(cfg: &TrainCmdConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let samples = load_preprocessed(&cfg.data)?;
    if samples.is_empty() {
        return Err(no_samples(&cfg.data));
    }
    let [nx, ny, nz] = samples[0].surface.spec().dims;
    let net_cfg = NetworkConfig::toy(cfg.fusion.scheme(), [nz, ny, nx]);
    // The init stream must never collide with per-step weight streams.
    let net = CompletionNet::new(net_cfg, derive_seed(cfg.seed, u64::MAX))?;
    let loop_cfg = crate::train::TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        seed: cfg.seed,
        use_schedule: cfg.schedule,
        base_lr: 0.01,
        zero_edges: cfg.zero_edges,
        clip_norm: Some(1.0),
    };
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    save_config(&cfg.out.join(RUN_CONFIG), &RunConfig::Train(cfg.clone()))?;

    let mut lines = Vec::new();
    let result = train(net, &samples, &loop_cfg, |l: &StepLog| {
        let line = format!("step {} lr {} loss {}", l.step, l.lr, l.loss);
        say!("{line}");
        lines.push(line);
    });
    // The partial log is still worth keeping when a run aborts.
    let log_path = cfg.out.join(LOG_FILE);
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&log_path, text).map_err(io_err(&log_path))?;
    let outcome = result?;

    let ckpt_path = cfg.out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.net, &ckpt_path)?;
    say!(
        "trained {} steps on {} samples; checkpoint at {}",
        outcome.logs.len(),
        samples.len(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let samples = load_preprocessed(&cfg.data)?;
    if samples.is_empty() {
        return Err(no_samples(&cfg.data));
    }
    let net = match (&cfg.checkpoint, cfg.oracle) {
        (_, true) => None,
        (Some(path), false) => Some(checkpoint::load(path)?),
        (None, false) => unreachable!("validate requires a checkpoint"),
    };
    let mut sc = ScCounts::default();
    let mut sem = SemanticCounts::default();
    for sample in &samples {
        let pred = match &net {
            None => sample.labels.clone(),
            Some(net) => {
                let x = batch_input(&[sample], cfg.zero_edges);
                let (logits, _) = net.forward(&x)?;
                if !logits.all_finite() {
                    return Err(CliError::Train(TrainError::NonFinite { step: 0 }));
                }
                logits_to_labels(&logits, sample.labels.spec())?.remove(0)
            }
        };
        sc.add_volume(&pred, &sample.labels, &sample.occupancy)?;
        sem.add_volume(&pred, &sample.labels, &sample.occupancy)?;
    }
    let report = EvalReport::from_counts(&sc, &sem);
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let table_path = cfg.out.join("report.txt");
    fs::write(&table_path, report.text_table()).map_err(io_err(&table_path))?;
    let kv_path = cfg.out.join("metrics.txt");
    fs::write(&kv_path, report.key_values()).map_err(io_err(&kv_path))?;
    save_config(&cfg.out.join(RUN_CONFIG), &RunConfig::Eval(cfg.clone()))?;
    say!("{}", report.text_table().trim_end());
    Ok(())
}

pub fn cmd_export_ply(cfg: &ExportPlyConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let volume = read_volume(&cfg.input)?;
    let stats: PlyStats = match &volume.payload {
        VolumePayload::U8(_) => export_label_ply(&cfg.out, &volume.into_labels()?)?,
        VolumePayload::F32(_) => {
            let (spec, values) = volume.into_scalars()?;
            let v = TsdfVolume::from_values(spec, values, TsdfKind::Ftsdf, ChannelKind::Surface);
            export_tsdf_ply(&cfg.out, &v, cfg.threshold)?
        }
    };
    let snapshot = cfg.out.with_extension("run_config.json");
    save_config(&snapshot, &RunConfig::ExportPly(cfg.clone()))?;
    say!(
        "exported {} cubes ({} vertices, {} faces) to {}",
        stats.cubes,
        stats.vertices(),
        stats.faces(),
        cfg.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_choices_map_to_the_two_specs() {
        assert_eq!(GridChoice::Canonical.spec().dims, [240, 144, 240]);
        assert_eq!(GridChoice::Desk.spec().dims, [60, 36, 60]);
        assert_eq!(GridChoice::Desk.spec().voxel_size, 0.08);
    }

    #[test]
    fn run_config_json_round_trips() {
        let cfg = RunConfig::Train(TrainCmdConfig {
            data: PathBuf::from("pre"),
            out: PathBuf::from("run"),
            fusion: FusionChoice::Mf,
            epochs: 12,
            batch: 3,
            seed: 7,
            schedule: true,
            zero_edges: false,
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"command\":\"train\""));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_canny_settings_are_usage_errors() {
        let mut cfg = PreprocessConfig {
            manifest: PathBuf::from("m"),
            out: PathBuf::from("o"),
            grid: GridChoice::Desk,
            sigma: 1.4,
            t_low: 0.3,
            t_high: 0.2,
        };
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        cfg.t_low = 0.1;
        cfg.sigma = 0.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
        cfg.sigma = 1.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parse_errors_and_conflicts_exit_with_one() {
        // Unknown flag.
        assert_eq!(run(["voxelforge", "synth", "--bogus"]), 1);
        // Missing required argument.
        assert_eq!(run(["voxelforge", "synth", "--count", "1"]), 1);
        // Config replay conflicts with explicit flags.
        assert_eq!(
            run(["voxelforge", "synth", "--config", "x.json", "--count", "1"]),
            1
        );
        // Help is not an error.
        assert_eq!(run(["voxelforge", "--help"]), 0);
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let code = run([
            "voxelforge",
            "preprocess",
            "--manifest",
            tmp.path().join("nope.txt").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn preprocessed_sample_volumes_stay_inside_unit_range() {
        let grid = VoxelGridSpec::desk();
        let scene = generate_scene(42, 1);
        let sample = render(&scene, &grid).unwrap();
        let pre = preprocess_sample(&sample, &grid, &CannySettings::default()).unwrap();
        for v in pre.surface.values().iter().chain(pre.edge.values()) {
            assert!(v.abs() <= 1.0, "out-of-range value {v}");
        }
        assert_eq!(pre.labels.spec().dims, [15, 9, 15]);
        assert_eq!(pre.occupancy.spec().dims, [15, 9, 15]);
    }

    #[test]
    fn preprocess_rejects_a_grid_mismatch() {
        let grid = VoxelGridSpec::desk();
        let scene = generate_scene(43, 1);
        let sample = render(&scene, &grid).unwrap();
        let other = VoxelGridSpec::canonical();
        let err = preprocess_sample(&sample, &other, &CannySettings::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
