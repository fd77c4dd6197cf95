//! Command-line front end. The `panomerge` binary is a thin shell around
//! [`run`], which tests can also call in-process.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{self as formats, LabelSidecar};
use crate::keyframe::{fps_select, Metric, DEFAULT_KEYFRAMES};
use crate::mask::{ClassTable, PanopticMap, VOID_INSTANCE};
use crate::merging::{merge_baseline, merge_qubo, BaselineConfig, MergeConfig, MergeStatus, Solver};
use crate::metrics::{dataset_pq, scene_pq, PqOptions, PqReport};
use crate::qubo::{solve_anneal, solve_exact, AnnealConfig, InitStrategy, Temperature, DEFAULT_PENALTY};
use crate::synthgen::{generate_scene, CorruptionSpec, SceneSpec};
use crate::uplift::{render_panoptic, uplift_labels};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PANOMERGE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "panomerge", version, about = "Multi-view panoptic mask merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: ground truth, proposals, splat weights.
    Synth(SynthArgs),
    /// Merge proposals by solving the selection QUBO.
    Merge(MergeArgs),
    /// Merge proposals with the confidence-filter / pixel-vote baseline.
    MergeBaseline(BaselineArgs),
    /// Scene-level panoptic quality of a prediction (or directories of them).
    EvalPq(EvalArgs),
    /// Lift a 2D label map onto splats.
    Uplift(UpliftArgs),
    /// Render a splat label field back into every view.
    RenderLabels(RenderArgs),
    /// Farthest-point keyframe selection.
    Fps(FpsArgs),
    /// Solve a QUBO instance given as JSON.
    SolveQubo(SolveArgs),
}

#[derive(Args, Debug)]
struct AnnealArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    sweeps: usize,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long, default_value_t = 0.97)]
    cooling: f64,
    /// Initial temperature; defaults to the largest linear weight.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitArg::Greedy)]
    init: InitArg,
}

impl AnnealArgs {
    fn config(&self) -> AnnealConfig {
        AnnealConfig {
            seed: self.seed,
            initial_temperature: self.temperature.map_or(Temperature::Auto, Temperature::Fixed),
            cooling_rate: self.cooling,
            sweeps: self.sweeps,
            restarts: self.restarts,
            init: match self.init {
                InitArg::Greedy => InitStrategy::Greedy,
                InitArg::Empty => InitStrategy::Empty,
                InitArg::AllOn => InitStrategy::AllOn,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitArg {
    Greedy,
    Empty,
    AllOn,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Anneal,
    Exact,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 6)]
    things: usize,
    #[arg(long, default_value_t = 2)]
    stuff: usize,
    #[arg(long, default_value_t = 4)]
    thing_classes: usize,
    #[arg(long, default_value_t = 80)]
    world_size: usize,
    #[arg(long, default_value_t = 2)]
    tile_size: usize,
    /// Proposals equal to the ground truth; overrides the corruption flags.
    #[arg(long)]
    clean: bool,
    #[arg(long, default_value_t = 0.3)]
    duplicate_rate: f64,
    #[arg(long, default_value_t = 2)]
    duplicates: usize,
    #[arg(long, default_value_t = 1)]
    boundary_noise: usize,
    #[arg(long, default_value_t = 1.0)]
    softness: f64,
    #[arg(long, default_value_t = 0.1)]
    fragment_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    class_noise: f64,
    #[arg(long, default_value_t = 0.25)]
    view_jitter: f64,
    /// Instances with fewer visible pixels get no proposal.
    #[arg(long, default_value_t = 32)]
    min_visible: usize,
}

#[derive(Args, Debug)]
struct MergeArgs {
    /// Mask tensor, f32 `m × N × H × W`.
    masks: PathBuf,
    /// Class score tensor, f32 `m × C`, with class-table sidecar.
    classes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "lambda-p", default_value_t = DEFAULT_PENALTY)]
    lambda_p: f64,
    #[arg(long, default_value_t = 0.5)]
    void_threshold: f64,
    /// Drop queries whose best class score is below this before solving.
    #[arg(long)]
    prefilter: Option<f64>,
    #[arg(long, value_enum, default_value_t = SolverArg::Anneal)]
    solver: SolverArg,
    #[command(flatten)]
    anneal: AnnealArgs,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    masks: PathBuf,
    classes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    confidence_threshold: f64,
    #[arg(long, default_value_t = 0.8)]
    support_threshold: f64,
    /// Vote over all views at once instead of view by view.
    #[arg(long)]
    joint_views: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted label map, or a directory of them.
    pred: PathBuf,
    /// Ground-truth label map, or a directory with the same file names.
    gt: PathBuf,
    #[arg(long)]
    per_class: bool,
    #[arg(long)]
    no_void_exemption: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct UpliftArgs {
    labels: PathBuf,
    splats: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    field: PathBuf,
    splats: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FpsArgs {
    /// Descriptor tensor, f32 `frames × dim`.
    descriptors: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KEYFRAMES)]
    k: usize,
    /// Index of the first keyframe.
    #[arg(long, default_value_t = 0)]
    seed_index: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    metric: MetricArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// JSON file `{"penalty", "linear", "quadratic"}`.
    instance: PathBuf,
    /// Overrides the penalty stored in the instance.
    #[arg(long = "lambda-p")]
    lambda_p: Option<f64>,
    /// Shorthand for `--solver exact`.
    #[arg(long, conflicts_with = "solver")]
    exact: bool,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[command(flatten)]
    anneal: AnnealArgs,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code: 0 success, 2 usage or validation error, 3 I/O or
/// parse error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return e.exit_code();
    }
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{THREADS_ENV}={raw:?} is not a thread count")))?;
    // The global pool can be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Merge(a) => merge(a, out, err),
        Command::MergeBaseline(a) => baseline(a, out, err),
        Command::EvalPq(a) => eval(a, out),
        Command::Uplift(a) => uplift(a, out),
        Command::RenderLabels(a) => render(a, out),
        Command::Fps(a) => fps(a, out),
        Command::SolveQubo(a) => solve(a, out),
    }
}

/// File names written by `synth` inside its output directory.
pub mod names {
    pub const GT: &str = "gt.pmt";
    pub const MASKS: &str = "masks.pmt";
    pub const CLASSES: &str = "classes.pmt";
    pub const SPLATS: &str = "splats.psw";
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let corruption = if a.clean {
        CorruptionSpec::none()
    } else {
        CorruptionSpec {
            duplicate_rate: a.duplicate_rate,
            duplicates: a.duplicates,
            boundary_noise_px: a.boundary_noise,
            softness: a.softness,
            fragment_rate: a.fragment_rate,
            class_noise: a.class_noise,
            view_confidence_jitter: a.view_jitter,
            min_visible_px: a.min_visible,
        }
    };
    let spec = SceneSpec {
        seed: a.seed,
        num_views: a.views,
        height: a.height,
        width: a.width,
        num_things: a.things,
        num_stuff: a.stuff,
        thing_classes: a.thing_classes,
        world_size: a.world_size,
        tile_size: a.tile_size,
        view_windows: None,
        corruption,
    };
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(&a.out)?;
    formats::write_panoptic(&a.out.join(names::GT), &scene.gt, &scene.classes)?;
    formats::write_proposals(&a.out.join(names::MASKS), &a.out.join(names::CLASSES), &scene.proposals)?;
    formats::write_splats(&a.out.join(names::SPLATS), &scene.splats)?;
    writeln!(
        out,
        "proposals={} instances={} splats={}",
        scene.proposals.num_queries(),
        scene.gt.present_instances().len(),
        scene.splats.num_splats()
    )?;
    Ok(())
}

fn merge(a: MergeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = MergeConfig {
        penalty: a.lambda_p,
        void_threshold: a.void_threshold,
        confidence_prefilter: a.prefilter,
        solver: match a.solver {
            SolverArg::Anneal => Solver::Anneal,
            SolverArg::Exact => Solver::Exact,
        },
        anneal: a.anneal.config(),
    };
    cfg.validate()?;
    let masks = formats::read_proposals(&a.masks, &a.classes)?;
    let outcome = merge_qubo(&masks, &cfg)?;
    formats::write_panoptic(&a.out, &outcome.map, masks.classes())?;
    if outcome.status == MergeStatus::AllFiltered {
        writeln!(err, "warning: every query was filtered out; the output is all void")?;
    }
    writeln!(
        out,
        "objective={} selected={}",
        outcome.objective,
        outcome.selected.len()
    )?;
    Ok(())
}

fn baseline(a: BaselineArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = BaselineConfig {
        confidence_threshold: a.confidence_threshold,
        vote_support_threshold: a.support_threshold,
        per_view_independent: !a.joint_views,
    };
    cfg.validate()?;
    let masks = formats::read_proposals(&a.masks, &a.classes)?;
    let outcome = merge_baseline(&masks, &cfg)?;
    formats::write_panoptic(&a.out, &outcome.map, masks.classes())?;
    if outcome.status == MergeStatus::AllFiltered {
        writeln!(err, "warning: every query was filtered out; the output is all void")?;
    }
    writeln!(out, "selected={}", outcome.selected.len())?;
    Ok(())
}

/// Brings `pred` to the resolution of `gt` when the two differ by an
/// integer factor per axis.
fn align_resolution(pred: PanopticMap, gt: &PanopticMap) -> Result<PanopticMap> {
    if pred.same_shape(gt) {
        return Ok(pred);
    }
    let (ph, pw, gh, gw) = (pred.height(), pred.width(), gt.height(), gt.width());
    if pred.num_views() != gt.num_views() {
        return Err(Error::shape(format!(
            "view dimension N differs: prediction has {}, ground truth has {}",
            pred.num_views(),
            gt.num_views()
        )));
    }
    if ph == 0 || pw == 0 || gh % ph != 0 || gw % pw != 0 {
        return Err(Error::shape(format!(
            "prediction resolution {ph}x{pw} is not an integer fraction of ground truth {gh}x{gw}"
        )));
    }
    pred.upsample_nearest(gh / ph, gw / pw)
}

fn evaluate_pair(pred: &Path, gt: &Path, opts: &PqOptions) -> Result<PqReport> {
    let (gt_map, gt_classes) = formats::read_panoptic(gt)?;
    let (pred_map, pred_classes) = formats::read_panoptic(pred)?;
    check_same_classes(&pred_classes, &gt_classes)?;
    let pred_map = align_resolution(pred_map, &gt_map)?;
    scene_pq(&pred_map, &gt_map, &gt_classes, opts)
}

fn check_same_classes(pred: &ClassTable, gt: &ClassTable) -> Result<()> {
    if pred != gt {
        return Err(Error::shape(format!(
            "class tables differ: prediction has {} classes, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Label-map files (`*.pmt`) directly inside `dir`, sorted by path.
fn label_maps(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "pmt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let opts = PqOptions {
        void_exemption: !a.no_void_exemption,
    };
    let text = if a.pred.is_dir() && a.gt.is_dir() {
        let gts = label_maps(&a.gt)?;
        if gts.is_empty() {
            return Err(Error::Empty("ground-truth directory has no .pmt files"));
        }
        let pairs = gts
            .iter()
            .map(|gt| {
                let pred = a.pred.join(gt.file_name().expect("file"));
                if pred.is_file() {
                    Ok((pred, gt.clone()))
                } else {
                    Err(Error::shape(format!("no prediction for scene {}", gt.display())))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let reports = pairs
            .par_iter()
            .map(|(pred, gt)| evaluate_pair(pred, gt, &opts))
            .collect::<Result<Vec<_>>>()?;
        dataset_json(&pairs, &reports, a.per_class)?
    } else if a.pred.is_dir() || a.gt.is_dir() {
        return Err(Error::invalid("pass two label maps or two directories"));
    } else {
        evaluate_pair(&a.pred, &a.gt, &opts)?.to_json(a.per_class)?
    };
    match a.out {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

fn dataset_json(pairs: &[(PathBuf, PathBuf)], reports: &[PqReport], per_class: bool) -> Result<String> {
    let scenes = pairs
        .iter()
        .zip(reports)
        .map(|((_, gt), r)| {
            let mut v = serde_json::from_str::<serde_json::Value>(&r.to_json(per_class)?)?;
            let name = gt.file_name().expect("file").to_string_lossy().into_owned();
            v.as_object_mut().expect("object").insert("scene".into(), name.into());
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = serde_json::json!({ "summary": dataset_pq(reports)?, "scenes": scenes });
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn uplift(a: UpliftArgs, out: &mut dyn Write) -> Result<()> {
    let (labels, classes) = formats::read_panoptic(&a.labels)?;
    let weights = formats::read_splats(&a.splats)?;
    let field = uplift_labels(&labels, &weights)?;
    let sidecar = LabelSidecar {
        instance_to_class: labels.instance_to_class().clone(),
        class_table: (&classes).into(),
        void_id: VOID_INSTANCE,
    };
    formats::write_field(&a.out, &field, &sidecar)?;
    let observed = (0..field.num_splats()).filter(|&g| field.is_observed(g)).count();
    writeln!(
        out,
        "splats={} observed={} labels={}",
        field.num_splats(),
        observed,
        field.num_labels()
    )?;
    Ok(())
}

fn render(a: RenderArgs, out: &mut dyn Write) -> Result<()> {
    let (field, sidecar) = formats::read_field(&a.field)?;
    let weights = formats::read_splats(&a.splats)?;
    let classes = sidecar.class_table.to_table()?;
    let map = render_panoptic(&field, &weights, &sidecar.instance_to_class)?;
    formats::write_panoptic(&a.out, &map, &classes)?;
    writeln!(
        out,
        "views={} instances={}",
        map.num_views(),
        map.present_instances().len()
    )?;
    Ok(())
}

fn fps(a: FpsArgs, out: &mut dyn Write) -> Result<()> {
    let desc = formats::read_descriptors(&a.descriptors)?;
    let metric = match a.metric {
        MetricArg::Euclidean => Metric::Euclidean,
        MetricArg::Cosine => Metric::Cosine,
    };
    let picked = fps_select(&desc, a.k, a.seed_index, metric)?;
    let text = serde_json::to_string(&picked)?;
    match a.out {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Result<()> {
    let mut json: formats::QuboJson = serde_json::from_slice(&fs::read(&a.instance)?)?;
    if let Some(p) = a.lambda_p {
        json.penalty = p;
    }
    let q = json.to_instance()?;
    let exact = a.exact || matches!(a.solver, Some(SolverArg::Exact));
    let result = if exact {
        solve_exact(&q)?
    } else {
        let cfg = a.anneal.config();
        cfg.validate()?;
        solve_anneal(&q, &cfg)?
    };
    let bits: Vec<&str> = result.bits().iter().map(|&b| if b { "1" } else { "0" }).collect();
    writeln!(out, "u=[{}]", bits.join(","))?;
    writeln!(out, "objective={}", result.objective())?;
    writeln!(out, "selected={}", result.selected().len())?;
    Ok(())
}
