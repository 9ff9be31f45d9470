//! `pgmfuse` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format error.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::groundtruth::rasterize_labels;
use crate::kitti_io::{
    read_boxes_report, read_calibration, read_frame_list, read_image, read_labels,
    read_point_cloud, read_tensor, write_labels, write_tensor, ClassId,
};
use crate::metrics::ConfusionMatrix;
use crate::models::{
    init_weights, load_weights, load_weights_expecting, predict, save_weights, train_toy, ArchKind,
    Frame, NetworkSpec, TrainConfig, WidthConfig,
};
use crate::nn::init::InitScheme;
use crate::pgm::{build_pgm, fuse_rgb, ChannelSchema, GridSpec, LabelGrid, PgmTensor};
use crate::synthetic;
use crate::viz::{render_labels, render_tensor, upscale, write_png, ChannelSelector, ColorMap};

pub const TENSOR_EXT: &str = "pgmt";
pub const LABEL_EXT: &str = "pgml";
pub const WEIGHTS_EXT: &str = "pgmw";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "pgmfuse", version, about = "RGB + LiDAR polar grid map segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project a velodyne scan onto the polar grid, optionally fusing camera RGB.
    Project(ProjectArgs),
    /// Rasterize KITTI object labels onto a projected tensor.
    Label(LabelArgs),
    /// Train a network on (tensor, label) frames.
    Train(TrainArgs),
    /// Predict label grids with trained weights.
    Infer(InferArgs),
    /// Class-wise IoU of predictions against ground truth.
    Eval(EvalArgs),
    /// Render a tensor channel or a label grid to PNG.
    Viz(VizArgs),
    /// Write synthetic KITTI-layout scans or toy training sets.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Grid JSON (rows, cols, azimuth/elevation bounds in radians).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Write XYZDI only.
    #[arg(long)]
    no_rgb: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Baseline)]
    arch: ArchArg,
    /// `default`, `tiny`, `scaled:<base>` or a width JSON file.
    #[arg(long, default_value = "default")]
    widths: String,
    #[arg(long, value_enum, default_value_t = InitArg::Glorot)]
    init: InitArg,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Training config JSON; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    flip_prob: Option<f64>,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV; defaults to the weights path with a `.loss.csv` suffix.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Reject weights trained for another architecture.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Output directory for predicted label grids.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Tensors whose masks select evaluated cells; all cells when omitted.
    #[arg(long)]
    tensors: Option<PathBuf>,
    /// Comma-separated classes averaged into mIoU.
    #[arg(long, default_value = "Car,Pedestrian,Cyclist")]
    classes: String,
    /// JSON report path; the text table goes to stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VizArgs {
    /// Tensor or label container.
    #[arg(long)]
    input: PathBuf,
    /// X, Y, Z, D, I, R, G, B or rgb (tensors only).
    #[arg(long, default_value = "D")]
    channel: String,
    /// Colormap JSON mapping class names to [r, g, b].
    #[arg(long)]
    colormap: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    scale: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    no_rgb: bool,
    /// Output root; a `frames.txt` list is written alongside the data.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ArchArg {
    Baseline,
    Early,
    Mid,
}

impl From<ArchArg> for ArchKind {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Baseline => ArchKind::Baseline,
            ArchArg::Early => ArchKind::EarlyFusion,
            ArchArg::Mid => ArchKind::MidFusion,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum InitArg {
    Glorot,
    He,
}

impl From<InitArg> for InitScheme {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Glorot => InitScheme::Glorot,
            InitArg::He => InitScheme::He,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SynthKind {
    /// Ray-cast street scenes in KITTI directory layout.
    Scan,
    /// Toy frames whose labels follow depth thresholds.
    Depth,
    /// Toy frames whose labels are visible only in RGB.
    Rgb,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("PGMFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PGMFUSE_THREADS must be a positive integer, got '{v}'")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Project(a) => cmd_project(&a),
        Command::Label(a) => cmd_label(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Viz(a) => cmd_viz(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_grid(path: Option<&Path>) -> Result<GridSpec> {
    match path {
        Some(p) => GridSpec::from_json(&read_text(p)?),
        None => Ok(GridSpec::default()),
    }
}

fn parse_widths(s: &str) -> Result<WidthConfig> {
    let widths = match s {
        "default" => WidthConfig::default(),
        "tiny" => WidthConfig::tiny(),
        _ => match s.strip_prefix("scaled:") {
            Some(n) => {
                let base: usize = n
                    .parse()
                    .ok()
                    .filter(|b| b % 4 == 0 && *b > 0)
                    .ok_or_else(|| Error::Config(format!("scaled width base must be a positive multiple of 4, got '{n}'")))?;
                WidthConfig::scaled(base)
            }
            None => serde_json::from_str(&read_text(Path::new(s))?)
                .map_err(|e| Error::Config(format!("width config {s}: {e}")))?,
        },
    };
    widths.validate()?;
    Ok(widths)
}

fn parse_classes(s: &str) -> Result<Vec<ClassId>> {
    let classes = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| ClassId::parse(t).ok_or_else(|| Error::Config(format!("unknown class '{}'", t.trim()))))
        .collect::<Result<Vec<_>>>()?;
    if classes.is_empty() {
        return Err(Error::Config("--classes is empty".into()));
    }
    Ok(classes)
}

fn frame_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

fn cmd_project(a: &ProjectArgs) -> Result<()> {
    let grid = load_grid(a.grid.as_deref())?;
    let cloud = read_point_cloud(&a.cloud)?;
    let mut pgm = build_pgm(&cloud, &grid);
    if !a.no_rgb {
        let (Some(calib), Some(image)) = (&a.calib, &a.image) else {
            return Err(Error::Config("--calib and --image are required unless --no-rgb is given".into()));
        };
        let calib = read_calibration(calib)?;
        let image = read_image(image)?;
        pgm = fuse_rgb(&pgm, &image, &calib)?;
    }
    write_tensor(&a.out, &pgm)?;
    let cells = grid.cells();
    println!(
        "{}: {} points, {} of {} cells occupied ({:.1}%), schema {}",
        a.out.display(),
        cloud.len(),
        pgm.occupied(),
        cells,
        100.0 * pgm.occupied() as f64 / cells as f64,
        pgm.schema().name()
    );
    Ok(())
}

fn cmd_label(a: &LabelArgs) -> Result<()> {
    let pgm = read_tensor(&a.tensor)?;
    let calib = read_calibration(&a.calib)?;
    let report = read_boxes_report(&a.boxes, &calib)?;
    for s in report.skipped.iter().filter(|s| s.unknown_type) {
        eprintln!(
            "warning: {}:{}: unknown object type '{}' treated as Background",
            a.boxes.display(),
            s.line,
            s.type_name
        );
    }
    let labels = rasterize_labels(&pgm, &report.boxes);
    write_labels(&a.out, &labels)?;
    let counts: Vec<String> = ClassId::ALL
        .iter()
        .map(|&c| format!("{c}={}", labels.count(c)))
        .collect();
    println!("{}: {} boxes, {}", a.out.display(), report.boxes.len(), counts.join(" "));
    Ok(())
}

fn load_frames(list: &Path, tensors: &Path, labels: &Path) -> Result<(Vec<String>, Vec<Frame>)> {
    let ids = read_frame_list(list)?;
    if ids.is_empty() {
        return Err(Error::domain(format!("frame list {} is empty", list.display())));
    }
    let frames = ids
        .par_iter()
        .map(|id| {
            Ok(Frame {
                input: read_tensor(&frame_path(tensors, id, TENSOR_EXT))?,
                labels: read_labels(&frame_path(labels, id, LABEL_EXT))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, frames))
}

fn check_schemas(ids: &[String], tensors: &[&PgmTensor], arch: ArchKind) -> Result<()> {
    let want = arch.input_schema();
    let bad: Vec<String> = ids
        .iter()
        .zip(tensors)
        .filter(|(_, t)| t.schema() != want)
        .map(|(id, t)| format!("{id} ({})", t.schema().name()))
        .collect();
    if !bad.is_empty() {
        return Err(Error::domain(format!(
            "{} expects {} tensors; mismatched frames: {}",
            arch.name(),
            want.name(),
            bad.join(", ")
        )));
    }
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Error::Config(format!("training config {}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.flip_prob {
        cfg.flip_prob = v;
    }
    if a.normalize {
        cfg.normalize = true;
    }
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a)?;
    let arch: ArchKind = a.model.arch.into();
    let spec = NetworkSpec::new(arch, parse_widths(&a.model.widths)?, ClassId::COUNT)?
        .with_init(a.model.init.into());
    cfg.validate(spec.num_classes)?;
    let (ids, frames) = load_frames(&a.frames, &a.tensors, &a.labels)?;
    check_schemas(&ids, &frames.iter().map(|f| &f.input).collect::<Vec<_>>(), arch)?;
    let weights = init_weights(&spec, cfg.seed)?;
    let (trained, curve) = train_toy(&spec, &weights, &frames, &cfg)?;
    save_weights(&a.out, &trained)?;
    let csv = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", a.out.display())));
    let mut text = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        text.push_str(&format!("{i},{l:.17e}\n"));
    }
    std::fs::write(&csv, text).map_err(|e| Error::io(&csv, e))?;
    println!(
        "{}: {} parameters, {} steps, loss {:.6} -> {:.6}",
        a.out.display(),
        trained.param_count(),
        curve.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let weights = match a.arch {
        Some(arch) => load_weights_expecting(&a.weights, arch.into())?,
        None => load_weights(&a.weights)?,
    };
    let spec = weights.meta.spec.clone();
    let ids = read_frame_list(&a.frames)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let tensors = ids
        .par_iter()
        .map(|id| read_tensor(&frame_path(&a.tensors, id, TENSOR_EXT)))
        .collect::<Result<Vec<_>>>()?;
    check_schemas(&ids, &tensors.iter().collect::<Vec<_>>(), spec.arch)?;
    ids.par_iter().zip(&tensors).try_for_each(|(id, t)| {
        let pred = predict(&spec, &weights, t)?;
        write_labels(&frame_path(&a.out, id, LABEL_EXT), &pred)
    })?;
    println!("{} frames written to {}", ids.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let classes = parse_classes(&a.classes)?;
    let ids = read_frame_list(&a.frames)?;
    let per_frame = ids
        .par_iter()
        .map(|id| {
            let pred = read_labels(&frame_path(&a.pred, id, LABEL_EXT))?;
            let gt = read_labels(&frame_path(&a.gt, id, LABEL_EXT))?;
            let mask = match &a.tensors {
                Some(dir) => read_tensor(&frame_path(dir, id, TENSOR_EXT))?.mask().to_vec(),
                None => vec![true; gt.labels().len()],
            };
            ConfusionMatrix::default()
                .accumulate(&pred, &gt, &mask)
                .map_err(|e| Error::domain(format!("frame {id}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::default();
    for m in &per_frame {
        cm = cm.merge(m)?;
    }
    let report = cm.report(&classes);
    std::fs::write(&a.out, report.to_json()).map_err(|e| Error::io(&a.out, e))?;
    let text = report.to_text("result");
    if let Some(p) = &a.text {
        std::fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn cmd_viz(a: &VizArgs) -> Result<()> {
    let container = crate::container::Container::read(&a.input)?;
    let img = match container.kind.as_str() {
        "pgm" => {
            let pgm = PgmTensor::from_container(&container)?;
            let sel = ChannelSelector::parse(&a.channel, pgm.schema())?;
            render_tensor(&pgm, sel)?
        }
        "labels" => {
            let labels = LabelGrid::from_container(&container)?;
            let cmap = match &a.colormap {
                Some(p) => ColorMap::read(p)?,
                None => ColorMap::default(),
            };
            render_labels(&labels, &cmap)?
        }
        other => {
            return Err(Error::format(format!(
                "{} holds '{other}', not a tensor or label grid",
                a.input.display()
            )))
        }
    };
    let img = upscale(&img, a.scale)?;
    write_png(&a.out, &img)?;
    println!("{}: {}x{}", a.out.display(), img.width(), img.height());
    Ok(())
}

fn write_list(root: &Path, ids: &[String]) -> Result<()> {
    let p = root.join("frames.txt");
    std::fs::write(&p, ids.join("\n") + "\n").map_err(|e| Error::io(&p, e))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ids: Vec<String> = (0..a.frames).map(|i| format!("{i:06}")).collect();
    match a.kind {
        SynthKind::Scan => {
            for (i, id) in ids.iter().enumerate() {
                synthetic::simulate_scan(a.seed + i as u64)?.write_kitti(&a.out, id)?;
            }
        }
        SynthKind::Depth | SynthKind::Rgb => {
            let grid = match &a.grid {
                Some(p) => load_grid(Some(p))?,
                None => GridSpec::with_dims(8, 64),
            };
            let frames = if a.kind == SynthKind::Depth {
                let schema = if a.no_rgb { ChannelSchema::Xyzdi } else { ChannelSchema::Xyzdirgb };
                synthetic::depth_threshold_dataset(grid, a.frames, a.seed, schema)
            } else {
                let rgb = synthetic::rgb_only_dataset(grid, a.frames, synthetic::BandAxis::Rows, 4, a.seed)?;
                if a.no_rgb {
                    rgb.iter().map(synthetic::drop_rgb).collect::<Result<_>>()?
                } else {
                    rgb
                }
            };
            let (td, ld) = (a.out.join("tensors"), a.out.join("labels"));
            for d in [&td, &ld] {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            for (id, f) in ids.iter().zip(&frames) {
                write_tensor(&frame_path(&td, id, TENSOR_EXT), &f.input)?;
                write_labels(&frame_path(&ld, id, LABEL_EXT), &f.labels)?;
            }
        }
    }
    write_list(&a.out, &ids)?;
    println!("{} frames written to {}", ids.len(), a.out.display());
    Ok(())
}
