//! `clinker`: command-line front end for the clinker-core pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use clinker_core::annotation::{export_coco, import_coco, import_labelme, plan_split, AnnotatedImage, CocoOptions};
use clinker_core::eval::{best_f1_threshold, format_table, instance_prf, pixel_prf, Average, InstanceScores, SweepOptions};
use clinker_core::mesh::{export_mesh, mesh_label_map, LabelRule, MeshFormat, MeshOptions};
use clinker_core::mow::{run_mow, HyperGrid, MowConfig, WindowSampling};
use clinker_core::particles::{
    attach_normalized, extract_instances, particle_stats, point_count, psd_curve, stats_to_csv, Normalization,
    PointSampling, SizeMetric,
};
use clinker_core::{Error, LabelMap, PhaseLabel, RasterImage};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "clinker", version, about = "Phase identification and quantification for clinker micrographs")]
struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice (window draws, splits, subsampling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert annotations: labelme or COCO to COCO (polygon or RLE) or label-map masks.
    Convert(ConvertArgs),
    /// Plan the particle-balanced train/test split with cross-validation folds.
    Split(SplitArgs),
    /// Train a window pixel classifier on one image and label every pixel.
    Mow(MowArgs),
    /// Particle statistics, size distribution and point-count phase fractions.
    Analyze(AnalyzeArgs),
    /// Pixel or particle level precision, recall and F1.
    Eval(EvalArgs),
    /// Phase-labelled conforming Delaunay mesh of a label map.
    Mesh(MeshArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceFormat {
    Labelme,
    Coco,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetFormat {
    Coco,
    Masks,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Encoding {
    Polygon,
    Rle,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long, value_enum, default_value = "labelme")]
    from: SourceFormat,
    #[arg(long, value_enum, default_value = "coco")]
    to: TargetFormat,
    /// Segmentation encoding of COCO output.
    #[arg(long, value_enum)]
    encoding: Option<Encoding>,
    /// Input documents; labelme files get image ids 1, 2, … in order.
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// COCO annotation file.
    input: Option<PathBuf>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct MowArgs {
    /// Micrograph (PNG or JPEG).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Ground-truth label map (class indices or palette PNG).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Neighbourhood side (odd).
    #[arg(long)]
    p: Option<usize>,
    /// Also write the sampled dataset as CSV.
    #[arg(long)]
    dump_dataset: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum PointMode {
    Grid,
    Random,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Label map to analyse.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    /// Number of point-count samples.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, value_enum)]
    sampling: Option<PointMode>,
    /// Drop particles smaller than this many pixels.
    #[arg(long)]
    min_area: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Area,
    Diagonal,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Linear,
    Log,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum EvalMode {
    Pixel,
    Instance,
}

#[derive(Clone, Copy, ValueEnum)]
enum AverageArg {
    Macro,
    Micro,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "instance")]
    mode: EvalMode,
    /// Predicted label map (pixel) or COCO detections with scores (instance).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth label map (pixel) or COCO annotations (instance).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Spacing of the confidence sweep.
    #[arg(long)]
    step: Option<f64>,
    /// Score at a fixed confidence cutoff instead of sweeping.
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long, value_enum)]
    average: Option<AverageArg>,
    /// Match particles regardless of phase.
    #[arg(long)]
    phase_agnostic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshFormatArg {
    NodeEle,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelRuleArg {
    Centroid,
    Majority,
}

#[derive(Args)]
struct MeshArgs {
    /// Label map to mesh.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Boundary node spacing in pixels.
    #[arg(long)]
    spacing: Option<usize>,
    /// Minimum triangle angle in degrees.
    #[arg(long)]
    min_angle: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<MeshFormatArg>,
    #[arg(long, value_enum)]
    label_rule: Option<LabelRuleArg>,
    /// Also render the labelled mesh as SVG.
    #[arg(long)]
    svg: bool,
}

/// Run configuration file. Every table and key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    paths: PathsConfig,
    convert: ConvertConfig,
    split: SplitConfig,
    mow: MowConfig,
    grid: HyperGrid,
    analyze: AnalyzeConfig,
    eval: EvalConfig,
    mesh: MeshConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PathsConfig {
    image: Option<PathBuf>,
    labels: Option<PathBuf>,
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConvertConfig {
    encoding: Option<Encoding>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitConfig {
    train_fraction: f64,
    folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            folds: 4,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeConfig {
    metric: SizeMetric,
    normalization: Normalization,
    points: usize,
    sampling: PointMode,
    min_area: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            metric: SizeMetric::Diagonal,
            normalization: Normalization::Linear,
            points: 4000,
            sampling: PointMode::Grid,
            min_area: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    iou_threshold: f64,
    step: f64,
    average: Average,
    phase_agnostic: bool,
    cutoff: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let d = SweepOptions::default();
        Self {
            iou_threshold: d.iou_threshold,
            step: d.step,
            average: d.average,
            phase_agnostic: d.phase_agnostic,
            cutoff: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MeshConfig {
    spacing: usize,
    min_angle: f64,
    max_insertions: usize,
    format: MeshFormat,
    label_rule: LabelRule,
    svg: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        let d = MeshOptions::default();
        Self {
            spacing: 4,
            min_angle: d.min_angle,
            max_insertions: d.max_insertions,
            format: MeshFormat::NodeEle,
            label_rule: LabelRule::Centroid,
            svg: false,
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn kind(&self) -> &'static str {
        match self.code {
            EXIT_USAGE => "usage",
            EXIT_NUMERIC => "numeric",
            _ => "data",
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else if matches!(e, Error::InvalidArgument(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

struct Ctx {
    out_dir: PathBuf,
    quiet: bool,
}

impl Ctx {
    /// Writes via a temporary sibling file and a rename.
    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
        let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
        fs::write(&tmp, bytes).map_err(|e| io_failure(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_failure(&path, e))?;
        if !self.quiet {
            println!("wrote {}", path.display());
        }
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(Error::from(e)))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Failure::usage(format!("missing input: pass --{name} or set paths.{name} in the config")))
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| {
        let msg = e.message().replace('\n', " ");
        Failure::usage(format!("{}: invalid config: {msg}", path.display()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = serde_json::to_string(&f.message).unwrap_or_else(|_| "\"?\"".into());
            eprintln!("error code={} kind={} message={msg}", f.code, f.kind());
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed);
    if let Some(seed) = seed {
        cfg.mow.seed = seed;
        if let WindowSampling::StratifiedRandom { seed: s, .. } = &mut cfg.mow.sampling {
            *s = seed;
        }
        cfg.grid.seed = seed;
    }
    let ctx = Ctx {
        out_dir: cli.out_dir.or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        quiet: cli.quiet,
    };
    let seed = seed.unwrap_or(0);
    match cli.command {
        Command::Convert(a) => convert(&ctx, &cfg, a),
        Command::Split(a) => split(&ctx, &cfg, a, seed),
        Command::Mow(a) => mow(&ctx, cfg, a),
        Command::Analyze(a) => analyze(&ctx, &cfg, a, seed),
        Command::Eval(a) => eval(&ctx, &cfg, a),
        Command::Mesh(a) => mesh(&ctx, &cfg, a),
    }
}

fn convert(ctx: &Ctx, cfg: &RunConfig, a: ConvertArgs) -> CliResult<()> {
    let inputs = if a.inputs.is_empty() { cfg.paths.inputs.clone() } else { a.inputs };
    if inputs.is_empty() {
        return Err(Failure::usage("convert needs at least one input file"));
    }
    let mut images: Vec<AnnotatedImage> = Vec::new();
    match a.from {
        SourceFormat::Labelme => {
            for (i, path) in inputs.iter().enumerate() {
                let doc = import_labelme(&read_text(path)?, i as u64 + 1)
                    .map_err(|e| Failure::from(e).context(path))?;
                images.push(doc);
            }
        }
        SourceFormat::Coco => {
            for path in &inputs {
                images.extend(import_coco(&read_text(path)?).map_err(|e| Failure::from(e).context(path))?);
            }
        }
    }
    match a.to {
        TargetFormat::Coco => {
            let use_rle = matches!(a.encoding.or(cfg.convert.encoding), Some(Encoding::Rle));
            let mut text = export_coco(&images, CocoOptions { use_rle })?;
            text.push('\n');
            ctx.write("coco.json", text.as_bytes())?;
        }
        TargetFormat::Masks => {
            for img in &images {
                let mut map = LabelMap::filled(img.width, img.height, PhaseLabel::Other);
                for inst in &img.instances {
                    for (x, y) in inst.region.pixels() {
                        map.set(x, y, inst.phase);
                    }
                }
                let png = map.to_color_image().encode_png()?;
                ctx.write(&format!("image_{}_labels.png", img.image_id), &png)?;
            }
        }
    }
    Ok(())
}

impl Failure {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn split(ctx: &Ctx, cfg: &RunConfig, a: SplitArgs, seed: u64) -> CliResult<()> {
    let input = a
        .input
        .or_else(|| cfg.paths.inputs.first().cloned())
        .ok_or_else(|| Failure::usage("split needs a COCO annotation file"))?;
    let images = import_coco(&read_text(&input)?).map_err(|e| Failure::from(e).context(&input))?;
    let plan = plan_split(
        &images,
        a.train_fraction.unwrap_or(cfg.split.train_fraction),
        a.folds.unwrap_or(cfg.split.folds),
        seed,
    )?;
    ctx.json("split.json", &plan)?;
    ctx.say(format!(
        "train particles {} test particles {} share {:.4}",
        plan.train_particles,
        plan.test_particles,
        plan.train_share()
    ));
    Ok(())
}

fn mow(ctx: &Ctx, mut cfg: RunConfig, a: MowArgs) -> CliResult<()> {
    let image_path = required(a.image, &cfg.paths.image, "image")?;
    let labels_path = required(a.labels, &cfg.paths.labels, "labels")?;
    if let Some(p) = a.p {
        cfg.mow.p = p;
    }
    let img = RasterImage::load(&image_path)?;
    let labels = LabelMap::load(&labels_path)?;
    let out = run_mow(&img, &labels, &cfg.mow, &cfg.grid)?;
    let mut model = out.model.to_json()?;
    model.push('\n');
    ctx.write("model.json", model.as_bytes())?;
    ctx.write("prediction.png", &out.prediction.to_color_image().encode_png()?)?;
    ctx.json("mow_report.json", &out.report)?;
    if a.dump_dataset {
        ctx.write("dataset.csv", out.dataset.to_csv().as_bytes())?;
    }
    let r = &out.report;
    ctx.say(format!("samples {} x features {}", r.samples, r.features));
    for phase in PhaseLabel::ALL {
        let s = r.test_scores.get(phase);
        ctx.say(format!(
            "test {:<6} precision {:.4} recall {:.4} f1 {:.4}",
            phase.name(),
            s.precision,
            s.recall,
            s.f1
        ));
    }
    Ok(())
}

fn analyze(ctx: &Ctx, cfg: &RunConfig, a: AnalyzeArgs, seed: u64) -> CliResult<()> {
    let labels_path = required(a.labels, &cfg.paths.labels, "labels")?;
    let labels = LabelMap::load(&labels_path)?;
    let c = &cfg.analyze;
    let metric = match a.metric {
        Some(MetricArg::Area) => SizeMetric::Area,
        Some(MetricArg::Diagonal) => SizeMetric::Diagonal,
        None => c.metric,
    };
    let mode = match a.normalization {
        Some(NormArg::Linear) => Normalization::Linear,
        Some(NormArg::Log) => Normalization::Log,
        None => c.normalization,
    };
    let instances = extract_instances(&labels, a.min_area.unwrap_or(c.min_area));
    let mut stats: Vec<_> = instances.iter().map(particle_stats).collect();
    let curve = psd_curve(&stats, metric, mode)?;
    attach_normalized(&mut stats, metric, mode)?;
    ctx.write("particles.csv", stats_to_csv(&stats).as_bytes())?;
    ctx.write("psd.csv", curve.to_csv().as_bytes())?;
    ctx.write("psd.svg", curve.to_svg().as_bytes())?;
    let sampling = match a.sampling.unwrap_or(c.sampling) {
        PointMode::Grid => PointSampling::Grid,
        PointMode::Random => PointSampling::Random { seed },
    };
    let pc = point_count(&labels, a.points.unwrap_or(c.points), sampling)?;
    ctx.json("point_count.json", &pc)?;
    ctx.say(format!(
        "{} particles; point count alite {:.4} belite {:.4} matrix {:.4}",
        stats.len(),
        pc.fractions.alite,
        pc.fractions.belite,
        pc.fractions.other
    ));
    Ok(())
}

#[derive(Serialize)]
struct PixelReport {
    mode: &'static str,
    other: clinker_core::eval::PrfScores,
    alite: clinker_core::eval::PrfScores,
    belite: clinker_core::eval::PrfScores,
}

#[derive(Serialize)]
struct InstanceReport {
    mode: &'static str,
    iou_threshold: f64,
    average: Average,
    threshold: f64,
    scores: InstanceScores,
    curve: Vec<(f64, f64)>,
}

fn eval(ctx: &Ctx, cfg: &RunConfig, a: EvalArgs) -> CliResult<()> {
    let pred_path = required(a.pred, &cfg.paths.pred, "pred")?;
    let gt_path = required(a.gt, &cfg.paths.gt, "gt")?;
    let c = &cfg.eval;
    match a.mode {
        EvalMode::Pixel => {
            let pred = LabelMap::load(&pred_path)?;
            let gt = LabelMap::load(&gt_path)?;
            let report = PixelReport {
                mode: "pixel",
                other: pixel_prf(&pred, &gt, PhaseLabel::Other)?,
                alite: pixel_prf(&pred, &gt, PhaseLabel::Alite)?,
                belite: pixel_prf(&pred, &gt, PhaseLabel::Belite)?,
            };
            let table = format_table(&[("pixel".into(), InstanceScores::new(report.alite, report.belite))]);
            ctx.json("eval_report.json", &report)?;
            ctx.write("eval_report.txt", table.as_bytes())?;
            ctx.say(table.trim_end());
        }
        EvalMode::Instance => {
            let dets = import_coco(&read_text(&pred_path)?).map_err(|e| Failure::from(e).context(&pred_path))?;
            let gts = import_coco(&read_text(&gt_path)?).map_err(|e| Failure::from(e).context(&gt_path))?;
            let opts = SweepOptions {
                iou_threshold: a.iou_threshold.unwrap_or(c.iou_threshold),
                step: a.step.unwrap_or(c.step),
                average: match a.average {
                    Some(AverageArg::Macro) => Average::Macro,
                    Some(AverageArg::Micro) => Average::Micro,
                    None => c.average,
                },
                phase_agnostic: a.phase_agnostic || c.phase_agnostic,
            };
            let report = match a.cutoff.or(c.cutoff) {
                Some(cut) => {
                    if !(0.0..=1.0).contains(&cut) {
                        return Err(Failure::usage(format!("cutoff must lie in [0, 1], got {cut}")));
                    }
                    let scores = instance_prf(&dets, &gts, cut, &opts)?;
                    InstanceReport {
                        mode: "instance",
                        iou_threshold: opts.iou_threshold,
                        average: opts.average,
                        threshold: cut,
                        curve: vec![(cut, scores.objective(opts.average))],
                        scores,
                    }
                }
                None => {
                    let sweep = best_f1_threshold(&dets, &gts, &opts)?;
                    InstanceReport {
                        mode: "instance",
                        iou_threshold: opts.iou_threshold,
                        average: opts.average,
                        threshold: sweep.threshold,
                        scores: sweep.scores,
                        curve: sweep.curve,
                    }
                }
            };
            let label = format!("instance @ {:.2}", report.threshold);
            let table = format_table(&[(label, report.scores.clone())]);
            ctx.json("eval_report.json", &report)?;
            ctx.write("eval_report.txt", table.as_bytes())?;
            ctx.say(table.trim_end());
        }
    }
    Ok(())
}

fn mesh(ctx: &Ctx, cfg: &RunConfig, a: MeshArgs) -> CliResult<()> {
    let labels_path = required(a.labels, &cfg.paths.labels, "labels")?;
    let labels = LabelMap::load(&labels_path)?;
    let c = &cfg.mesh;
    let opts = MeshOptions {
        min_angle: a.min_angle.unwrap_or(c.min_angle),
        max_insertions: c.max_insertions,
    };
    let rule = match a.label_rule {
        Some(LabelRuleArg::Centroid) => LabelRule::Centroid,
        Some(LabelRuleArg::Majority) => LabelRule::Majority,
        None => c.label_rule,
    };
    let format = match a.format {
        Some(MeshFormatArg::NodeEle) => MeshFormat::NodeEle,
        Some(MeshFormatArg::Json) => MeshFormat::Json,
        None => c.format,
    };
    let m = mesh_label_map(&labels, a.spacing.unwrap_or(c.spacing), &opts, rule)?;
    for (ext, text) in export_mesh(&m, format)? {
        ctx.write(&format!("mesh.{ext}"), text.as_bytes())?;
    }
    if a.svg || c.svg {
        ctx.write("mesh.svg", m.to_svg(2.0).as_bytes())?;
    }
    ctx.say(format!("{} nodes, {} triangles", m.nodes.len(), m.triangles.len()));
    Ok(())
}
