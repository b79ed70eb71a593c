//! The `gausshand` command-line driver.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gausshand_core::depth::{preprocess, quadtree_encode, DepthImage, ImageBlob};
use gausshand_core::energy::{total_energy, EnergyReport, ImageEvidence, JointTarget, Scene};
use gausshand_core::fitter::fit_frame;
use gausshand_core::math::{arr3, vec3, Vec3};
use gausshand_core::metrics::{bone_cluster_f1, mdpc, mean_per_joint_error, pcf_curve, per_frame_max_error, summarize};
use gausshand_core::surface::CameraIntrinsics;
use gausshand_core::synth::{add_depth_noise, render_depth, RenderSpec};
use gausshand_core::NUM_JOINTS;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::assets;
use crate::config::{discover, load_weights, Resolved, RunConfig};
use crate::depth_io::{read_depth, write_depth, DepthFormat};
use crate::error::{Error, Result};
use crate::files::{
    load_annotations, load_fit, load_ground_truth, load_poses, write_json, AnnotatedFrame, Annotations, FitRecord,
    GroundTruth, PoseSet,
};

/// Keypoints annotated by `render --targets`: the wrist and the five tips.
pub const SUPERVISED_KEYPOINTS: [usize; 6] = [0, 4, 8, 12, 16, 20];

#[derive(Debug, Parser)]
#[command(name = "gausshand", version, about = "Fit a Gaussian hand model to depth frames")]
struct Cli {
    /// Run configuration (JSON). Defaults to $GAUSSHAND_CONFIG when set.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for directory inputs.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render depth frames and ground truth from poses.
    Render(RenderArgs),
    /// Fit pose and bone lengths to depth frames and/or keypoint annotations.
    Fit(FitArgs),
    /// Score fitted frames against ground truth.
    Eval(EvalArgs),
    /// Print the quadtree blobs of a depth frame.
    QuadtreeDump(DumpArgs),
    /// Print per-term energies of a pose on a frame.
    EnergyReport(EnergyArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Skeleton definition (JSON); built-in hand when omitted.
    #[arg(long, value_name = "FILE")]
    skeleton: Option<PathBuf>,
    /// Camera intrinsics (JSON).
    #[arg(long, value_name = "FILE")]
    camera: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetKind {
    None,
    #[value(name = "3d")]
    Point,
    #[value(name = "2d")]
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Pgm,
    Raw,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Pose set (JSON); the built-in synthetic set when omitted.
    #[arg(long, value_name = "FILE")]
    pose: Option<PathBuf>,
    /// A `.pgm`/`.raw` file for a single pose, otherwise an output directory.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Ground-truth file in single-frame mode [default: <out>.gt.json].
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Annotation file [default in directory mode: <out>/annotations.json].
    #[arg(long, value_name = "FILE")]
    annotations_out: Option<PathBuf>,
    /// Keypoint targets written to the annotations (wrist and fingertips).
    #[arg(long, value_enum, default_value = "none")]
    targets: TargetKind,
    /// Depth format in directory mode.
    #[arg(long, value_enum, default_value = "pgm")]
    format: FormatArg,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Standard deviation of additive depth noise (mm).
    #[arg(long, default_value_t = 0.0)]
    noise_mm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Depth file or directory of `.pgm`/`.raw` files.
    #[arg(long, value_name = "PATH")]
    depth: Option<PathBuf>,
    /// Crop centers and keypoint targets (JSON).
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Energy weights (JSON).
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Slack radius of the keypoint term (mm).
    #[arg(long, value_name = "MM")]
    slack: Option<f64>,
    /// Crop center `x,y,z` in mm; overrides the annotations.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_point)]
    crop_center: Option<[f64; 3]>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Quadtree threshold (mm).
    #[arg(long, value_name = "MM")]
    threshold: Option<f64>,
    /// Output file, or directory when `--depth` is a directory.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Fit result file or directory of `*.fit.json`.
    #[arg(long, value_name = "PATH")]
    pred: PathBuf,
    /// Ground-truth file or directory of `*.gt.json`.
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    /// Depth file or directory for MDPC; frames are matched by name.
    #[arg(long, value_name = "PATH")]
    cloud_from: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    camera: Option<PathBuf>,
    /// Comma-separated PCF thresholds (mm) [default: 0,5,...,80].
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
    #[arg(long, value_name = "MM")]
    threshold: Option<f64>,
    /// Camera for cropping; needs `--crop-center`.
    #[arg(long, value_name = "FILE")]
    camera: Option<PathBuf>,
    /// Preprocess about this center before encoding.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_point)]
    crop_center: Option<[f64; 3]>,
    /// Also write the dump to a file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnergyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
    /// Pose set (JSON); the first pose is evaluated.
    #[arg(long, value_name = "FILE")]
    pose: PathBuf,
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    #[arg(long, value_name = "MM")]
    slack: Option<f64>,
    /// Defaults to the annotations, then the pose's joint centroid.
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_point)]
    crop_center: Option<[f64; 3]>,
    #[arg(long, value_name = "MM")]
    threshold: Option<f64>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] if parts.iter().all(|v| v.is_finite()) => Ok([*x, *y, *z]),
        _ => Err("expected three finite numbers `x,y,z`".into()),
    }
}

/// What a command prints: JSON for `--json`, text otherwise.
struct Outcome {
    json: Value,
    text: String,
}

/// Parse `args` (program name first), run, print and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json = args.iter().any(|a| a == "--json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => return clap_failure(e, json),
    };
    match dispatch(&cli) {
        Ok(out) => {
            if cli.json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&out.json).expect("JSON values serialize")));
            } else {
                emit(&out.text);
            }
            0
        }
        Err(e) => report_error(&e, cli.json),
    }
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn clap_failure(e: clap::Error, json: bool) -> i32 {
    use clap::error::{ContextKind, ContextValue, ErrorKind};
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            emit(&e.to_string());
            0
        }
        ErrorKind::InvalidSubcommand => {
            let name = match e.get(ContextKind::InvalidSubcommand) {
                Some(ContextValue::String(s)) => s.clone(),
                _ => String::new(),
            };
            report_error(&Error::UnknownSubcommand(name), json)
        }
        _ => {
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            report_error(&Error::Usage(first), json)
        }
    }
}

fn report_error(e: &Error, json: bool) -> i32 {
    eprintln!("error[{}]: {e}", e.class());
    if json {
        let v = json!({"error": {"class": e.class(), "message": e.to_string()}});
        emit(&format!("{}\n", serde_json::to_string_pretty(&v).expect("JSON values serialize")));
    }
    match e {
        Error::UnknownSubcommand(_) | Error::Usage(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let mut cfg = discover(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    let work = || match &cli.command {
        Command::Render(a) => render_cmd(a, cfg.clone()),
        Command::Fit(a) => fit_cmd(a, cfg.clone()),
        Command::Eval(a) => eval_cmd(a, cfg.clone()),
        Command::QuadtreeDump(a) => dump_cmd(a, cfg.clone()),
        Command::EnergyReport(a) => energy_cmd(a, cfg.clone()),
    };
    match cfg.threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) {
    if let Some(p) = &m.skeleton {
        cfg.skeleton = Some(p.clone());
    }
    if let Some(p) = &m.camera {
        cfg.camera = Some(p.clone());
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `dir/name.ext` → `name`; also strips the compound `.fit.json`/`.gt.json`.
fn frame_stem(name: &str) -> &str {
    for suffix in [".fit.json", ".gt.json", ".pgm", ".raw", ".json"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s;
        }
    }
    name
}

/// Regular files in `dir` accepted by `keep`, sorted by file name.
fn list_dir(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let path = entry.path();
        if path.is_file() && keep(&file_name(&path)) {
            out.push(path);
        }
    }
    out.sort_by_key(|p| file_name(p));
    Ok(out)
}

fn joint_centroid(joints: &[Vec3; NUM_JOINTS]) -> [f64; 3] {
    arr3(&(joints.iter().sum::<Vec3>() / NUM_JOINTS as f64))
}

fn render_cmd(a: &RenderArgs, mut cfg: RunConfig) -> Result<Outcome> {
    apply_model_args(&mut cfg, &a.model);
    let setup = cfg.resolve()?;
    let model = &setup.model;
    let cam_file = match setup.camera {
        Some(c) => c,
        None => assets::camera(),
    };
    let camera = cam_file.intrinsics()?;
    let width = a.width.or(cam_file.width).unwrap_or(640);
    let height = a.height.or(cam_file.height).unwrap_or(480);
    let spec = RenderSpec::new(camera, width, height);
    spec.validate()?;
    if !(a.noise_mm.is_finite() && a.noise_mm >= 0.0) {
        return Err(Error::Usage("--noise-mm must be finite and nonnegative".into()));
    }
    let poses: PoseSet = match &a.pose {
        Some(p) => load_poses(p, model)?,
        None => assets::poses(),
    };

    let single = DepthFormat::from_path(&a.out);
    if single.is_some() && poses.poses.len() != 1 {
        return Err(Error::Usage(format!(
            "--out names a single depth file but the pose set has {} poses; pass a directory",
            poses.poses.len()
        )));
    }
    let names: Vec<String> = poses
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| p.name.clone().unwrap_or_else(|| format!("pose_{i:03}")))
        .collect();
    let (depth_paths, gt_paths, ann_path): (Vec<PathBuf>, Vec<PathBuf>, Option<PathBuf>) = match single {
        Some(_) => {
            let stem = a.out.with_extension("");
            let gt =
                a.gt.clone()
                    .unwrap_or_else(|| PathBuf::from(format!("{}.gt.json", stem.display())));
            (vec![a.out.clone()], vec![gt], a.annotations_out.clone())
        }
        None => {
            fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
            let ext = match a.format {
                FormatArg::Pgm => DepthFormat::Pgm,
                FormatArg::Raw => DepthFormat::Raw,
            }
            .extension();
            (
                names.iter().map(|n| a.out.join(format!("{n}.{ext}"))).collect(),
                names.iter().map(|n| a.out.join(format!("{n}.gt.json"))).collect(),
                Some(
                    a.annotations_out
                        .clone()
                        .unwrap_or_else(|| a.out.join("annotations.json")),
                ),
            )
        }
    };

    let rendered: Vec<(DepthImage, GroundTruth)> = poses
        .poses
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let pose = entry.resolve(model)?;
            let mut frame = render_depth(model, &pose, &entry.beta, &spec)?;
            if a.noise_mm > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
                add_depth_noise(&mut frame.depth, a.noise_mm, &mut rng)?;
            }
            let gt = GroundTruth {
                frame: file_name(&depth_paths[i]),
                theta: pose,
                beta: entry.beta,
                joints: frame.joints.iter().map(arr3).collect(),
                bone_lengths: frame.bone_lengths,
                crop_center: joint_centroid(&frame.joints),
                subject: entry.subject.clone(),
            };
            Ok((frame.depth, gt))
        })
        .collect::<Result<_>>()?;

    let mut annotations = Annotations { frames: Vec::new() };
    let mut summary = Vec::new();
    for (i, (depth, gt)) in rendered.iter().enumerate() {
        write_depth(&depth_paths[i], depth)?;
        write_json(&gt_paths[i], gt)?;
        let targets = SUPERVISED_KEYPOINTS
            .iter()
            .filter_map(|&j| {
                let p = gt.joints[j];
                match a.targets {
                    TargetKind::None => None,
                    TargetKind::Point => Some(Ok(JointTarget::point(j, p))),
                    TargetKind::Pixel => Some(camera.project(&vec3(p)).map(|uv| JointTarget::pixel(j, uv))),
                }
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        annotations.frames.push(AnnotatedFrame {
            frame: Some(gt.frame.clone()),
            crop_center: Some(gt.crop_center),
            targets,
        });
        summary.push(json!({
            "frame": gt.frame,
            "depth": depth_paths[i],
            "gt": gt_paths[i],
            "valid_pixels": depth.valid_count(),
        }));
    }
    if let Some(p) = &ann_path {
        write_json(p, &annotations)?;
    }
    let text = summary
        .iter()
        .map(|s| {
            format!(
                "rendered {} ({} valid pixels)\n",
                s["depth"].as_str().unwrap_or(""),
                s["valid_pixels"]
            )
        })
        .collect();
    Ok(Outcome {
        json: json!({"frames": summary, "annotations": ann_path}),
        text,
    })
}

/// Setup shared by `fit` and `energy-report`.
fn energy_setup(
    cfg: &mut RunConfig,
    model: &ModelArgs,
    weights: &Option<PathBuf>,
    slack: Option<f64>,
    threshold: Option<f64>,
) -> Result<Resolved> {
    apply_model_args(cfg, model);
    if let Some(t) = threshold {
        cfg.quadtree_threshold_mm = t;
    }
    let mut setup = cfg.resolve()?;
    if let Some(p) = weights {
        setup.weights = load_weights(p)?;
    }
    if let Some(s) = slack {
        setup.weights.slack_mm = s;
    }
    setup.weights.validate()?;
    Ok(setup)
}

/// Crop, encode and fit one raw depth frame.
///
/// `camera` is the raw frame's intrinsics; 2D targets refer to it.
pub fn fit_depth_frame(
    raw: &DepthImage,
    camera: &CameraIntrinsics,
    crop_center: [f64; 3],
    targets: &[JointTarget],
    setup: &Resolved,
) -> gausshand_core::Result<(gausshand_core::fitter::FitResult, [f64; 3])> {
    let frame = preprocess(raw, camera, crop_center, &setup.config.crop())?;
    let image = ImageEvidence::new(frame.encode(setup.config.quadtree_threshold_mm));
    let scene = Scene {
        model: &setup.model,
        image: &image,
        camera: frame.camera,
        targets,
        target_camera: Some(*camera),
    };
    let fit = fit_frame(&scene, frame.crop_center, &setup.weights, &setup.config.fit)?;
    Ok((fit, frame.crop_center))
}

/// Intrinsics never used for projection: the image is empty in keypoint-only fits.
const NO_IMAGE_CAMERA: CameraIntrinsics = CameraIntrinsics {
    fx: 1.0,
    fy: 1.0,
    cx: 0.0,
    cy: 0.0,
};

fn fit_cmd(a: &FitArgs, mut cfg: RunConfig) -> Result<Outcome> {
    if let Some(n) = a.max_iters {
        cfg.fit.max_iters = n;
    }
    let setup = energy_setup(&mut cfg, &a.model, &a.weights, a.slack, a.threshold)?;
    let annotations = a.annotations.as_deref().map(load_annotations).transpose()?;
    let camera = setup.camera.map(|c| c.intrinsics()).transpose()?;

    let Some(depth) = &a.depth else {
        // Keypoint-only fit.
        let ann = annotations
            .as_ref()
            .ok_or_else(|| Error::Usage("fit needs --depth or --annotations".into()))?;
        let entry = match ann.frames.as_slice() {
            [only] => only,
            _ => {
                return Err(Error::Usage(
                    "without --depth the annotations must hold exactly one frame".into(),
                ))
            }
        };
        let center = a
            .crop_center
            .or(entry.crop_center)
            .ok_or_else(|| Error::Usage("no crop center: pass --crop-center or annotate one".into()))?;
        let image = ImageEvidence::new(Vec::new());
        let scene = Scene {
            model: &setup.model,
            image: &image,
            camera: NO_IMAGE_CAMERA,
            targets: &entry.targets,
            target_camera: camera,
        };
        let fit = fit_frame(&scene, center, &setup.weights, &setup.config.fit)?;
        let record = FitRecord::new(entry.frame.clone(), center, fit, &setup.model)?;
        write_json(&a.out, &record)?;
        return Ok(fit_outcome(&[(&a.out, &record)]));
    };

    let camera = camera.ok_or_else(|| Error::Usage("--depth needs --camera (or `camera` in the config)".into()))?;
    let is_dir = depth.is_dir();
    let inputs = if is_dir {
        list_dir(depth, |n| DepthFormat::from_path(Path::new(n)).is_some())?
    } else {
        vec![depth.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::Usage(format!("{}: no .pgm or .raw files", depth.display())));
    }
    let jobs = inputs
        .iter()
        .map(|path| {
            let name = file_name(path);
            let entry = annotations.as_ref().and_then(|a| a.for_frame(&name));
            let center = a
                .crop_center
                .or(entry.and_then(|e| e.crop_center))
                .ok_or_else(|| Error::Usage(format!("{name}: no crop center: pass --crop-center or annotate one")))?;
            let targets = entry.map(|e| e.targets.clone()).unwrap_or_default();
            Ok((path.clone(), name, center, targets))
        })
        .collect::<Result<Vec<_>>>()?;

    let records: Vec<FitRecord> = jobs
        .par_iter()
        .map(|(path, name, center, targets)| {
            let raw = read_depth(path)?;
            let (fit, recentered) =
                fit_depth_frame(&raw, &camera, *center, targets, &setup).map_err(Error::invalid(path))?;
            Ok(FitRecord::new(Some(name.clone()), recentered, fit, &setup.model)?)
        })
        .collect::<Result<_>>()?;

    let outs: Vec<PathBuf> = if is_dir {
        fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
        jobs.iter()
            .map(|(_, name, _, _)| a.out.join(format!("{}.fit.json", frame_stem(name))))
            .collect()
    } else {
        vec![a.out.clone()]
    };
    for (out, record) in outs.iter().zip(&records) {
        write_json(out, record)?;
    }
    let pairs: Vec<_> = outs.iter().zip(&records).map(|(o, r)| (o.as_path(), r)).collect();
    Ok(fit_outcome(&pairs))
}

fn fit_outcome(done: &[(&Path, &FitRecord)]) -> Outcome {
    let mut text = String::new();
    let mut rows = Vec::new();
    for (out, r) in done {
        text.push_str(&format!(
            "{}: energy {:.6} after {} iterations (seed {}) -> {}\n",
            r.frame.as_deref().unwrap_or("frame"),
            r.report.e_total,
            r.iterations,
            r.seed_index,
            out.display()
        ));
        rows.push(json!({
            "frame": r.frame,
            "out": out,
            "e_total": r.report.e_total,
            "iterations": r.iterations,
            "seed_index": r.seed_index,
        }));
    }
    Outcome {
        json: json!({"frames": rows}),
        text,
    }
}

#[derive(Debug, Clone, Serialize)]
struct FrameScore {
    frame: String,
    mean_error_mm: f64,
    max_error_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mdpc_mean_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mdpc_median_mm: Option<f64>,
}

fn to_joints(v: &[[f64; 3]]) -> [Vec3; NUM_JOINTS] {
    std::array::from_fn(|j| vec3(v[j]))
}

fn eval_cmd(a: &EvalArgs, mut cfg: RunConfig) -> Result<Outcome> {
    if let Some(c) = &a.camera {
        cfg.camera = Some(c.clone());
    }
    let setup = cfg.resolve()?;
    let pairs: Vec<(PathBuf, PathBuf)> = if a.pred.is_dir() {
        list_dir(&a.pred, |n| n.ends_with(".fit.json"))?
            .into_iter()
            .map(|p| {
                let gt = a.gt.join(format!("{}.gt.json", frame_stem(&file_name(&p))));
                (p, gt)
            })
            .collect()
    } else {
        vec![(a.pred.clone(), a.gt.clone())]
    };
    if pairs.is_empty() {
        return Err(Error::Usage(format!("{}: no *.fit.json files", a.pred.display())));
    }
    let loaded = pairs
        .iter()
        .map(|(p, g)| Ok((load_fit(p)?, load_ground_truth(g)?)))
        .collect::<Result<Vec<_>>>()?;
    let pred: Vec<_> = loaded.iter().map(|(p, _)| to_joints(&p.joints)).collect();
    let gt: Vec<_> = loaded.iter().map(|(_, g)| to_joints(&g.joints)).collect();
    let all: Vec<usize> = (0..NUM_JOINTS).collect();
    let mean = mean_per_joint_error(&pred, &gt, &all)?;
    let max = per_frame_max_error(&pred, &gt, &all)?;
    let thresholds = a
        .thresholds
        .clone()
        .unwrap_or_else(|| (0..=16).map(|k| 5.0 * k as f64).collect());
    let pcf = pcf_curve(&max, &thresholds)?;

    let clouds: Option<Vec<Vec<f64>>> = match &a.cloud_from {
        None => None,
        Some(src) => {
            let camera = setup
                .camera
                .ok_or_else(|| Error::Usage("--cloud-from needs --camera".into()))?
                .intrinsics()?;
            let per_frame = loaded
                .par_iter()
                .map(|(p, g)| {
                    let depth_path = if src.is_dir() {
                        let name = p.frame.clone().unwrap_or_else(|| g.frame.clone());
                        src.join(name)
                    } else {
                        src.clone()
                    };
                    let raw = read_depth(&depth_path)?;
                    let frame = preprocess(&raw, &camera, p.crop_center, &setup.config.crop())
                        .map_err(Error::invalid(&depth_path))?;
                    let joints: Vec<Vec3> = p.joints.iter().map(|j| vec3(*j)).collect();
                    mdpc(&joints, &frame.point_cloud()).map_err(Error::invalid(&depth_path))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(per_frame)
        }
    };

    let mut frames = Vec::new();
    for (i, (p, g)) in loaded.iter().enumerate() {
        let errors: Vec<f64> = (0..NUM_JOINTS).map(|j| (pred[i][j] - gt[i][j]).norm()).collect();
        let m = clouds.as_ref().map(|c| summarize(&c[i])).transpose()?;
        frames.push(FrameScore {
            frame: p.frame.clone().unwrap_or_else(|| g.frame.clone()),
            mean_error_mm: errors.iter().sum::<f64>() / NUM_JOINTS as f64,
            max_error_mm: max[i],
            mdpc_mean_mm: m.map(|s| s.mean),
            mdpc_median_mm: m.map(|s| s.median),
        });
    }
    let mdpc_all = clouds.map(|c| summarize(&c.concat())).transpose()?;

    // Bone-length clustering when the ground truth names exactly two subjects.
    let subjects: Option<Vec<String>> = loaded.iter().map(|(_, g)| g.subject.clone()).collect();
    let clustering = match subjects {
        Some(s) => {
            let mut names = s.clone();
            names.sort();
            names.dedup();
            if names.len() == 2 {
                let labels: Vec<usize> = s.iter().map(|x| names.iter().position(|n| n == x).unwrap()).collect();
                let vectors: Vec<Vec<f64>> = loaded.iter().map(|(p, _)| p.bone_lengths.to_vec()).collect();
                let r = bone_cluster_f1(&vectors, &labels)?;
                Some(json!({"subjects": names, "f1": r.f1}))
            } else {
                None
            }
        }
        None => None,
    };

    let report = json!({
        "frames": frames.len(),
        "mean_per_joint_error_mm": mean,
        "pcf": {"thresholds_mm": thresholds, "fraction": pcf},
        "mdpc_mm": mdpc_all.map(|s| json!({"mean": s.mean, "median": s.median})),
        "bone_cluster_f1": clustering,
        "per_frame": frames,
    });
    write_json(&a.report, &report)?;
    let mut text = format!("{} frames, mean per-joint error {mean:.3} mm\n", frames.len());
    if let Some(s) = mdpc_all {
        text.push_str(&format!("MDPC mean {:.3} mm, median {:.3} mm\n", s.mean, s.median));
    }
    if let Some(c) = &report["bone_cluster_f1"].as_object() {
        text.push_str(&format!("bone clustering F1 {}\n", c["f1"]));
    }
    text.push_str(&format!("report -> {}\n", a.report.display()));
    Ok(Outcome { json: report, text })
}

fn dump_cmd(a: &DumpArgs, mut cfg: RunConfig) -> Result<Outcome> {
    if let Some(c) = &a.camera {
        cfg.camera = Some(c.clone());
    }
    if let Some(t) = a.threshold {
        cfg.quadtree_threshold_mm = t;
    }
    let setup = cfg.resolve()?;
    let c = setup.config.quadtree_threshold_mm;
    let raw = read_depth(&a.depth)?;
    let (image, cropped) = match a.crop_center {
        Some(center) => {
            let camera = setup
                .camera
                .ok_or_else(|| Error::Usage("--crop-center needs --camera".into()))?
                .intrinsics()?;
            let frame = preprocess(&raw, &camera, center, &setup.config.crop()).map_err(Error::invalid(&a.depth))?;
            (frame.image, true)
        }
        None => (raw, false),
    };
    let blobs: Vec<ImageBlob> = quadtree_encode(&image, c);
    let dump = json!({
        "width": image.width,
        "height": image.height,
        "threshold_mm": c,
        "cropped": cropped,
        "blobs": blobs,
    });
    if let Some(out) = &a.out {
        write_json(out, &dump)?;
    }
    let mut text = format!("{} blobs ({}x{}, c = {c} mm)\n", blobs.len(), image.width, image.height);
    for b in &blobs {
        text.push_str(&format!(
            "  mu ({:.1}, {:.1})  sigma {:.1} px  z {:.2} mm\n",
            b.mu[0], b.mu[1], b.sigma, b.z
        ));
    }
    Ok(Outcome { json: dump, text })
}

fn energy_cmd(a: &EnergyArgs, mut cfg: RunConfig) -> Result<Outcome> {
    let setup = energy_setup(&mut cfg, &a.model, &a.weights, a.slack, a.threshold)?;
    let camera = setup
        .camera
        .ok_or_else(|| Error::Usage("energy-report needs --camera".into()))?
        .intrinsics()?;
    let poses = load_poses(&a.pose, &setup.model)?;
    let entry = &poses.poses[0];
    let pose = entry.resolve(&setup.model)?;
    let annotations = a.annotations.as_deref().map(load_annotations).transpose()?;
    let name = file_name(&a.depth);
    let ann = annotations.as_ref().and_then(|x| x.for_frame(&name));
    let center = match a.crop_center.or(ann.and_then(|e| e.crop_center)) {
        Some(c) => c,
        None => joint_centroid(&setup.model.joints(&pose, &entry.beta)?),
    };
    let targets = ann.map(|e| e.targets.clone()).unwrap_or_default();
    let raw = read_depth(&a.depth)?;
    let frame = preprocess(&raw, &camera, center, &setup.config.crop()).map_err(Error::invalid(&a.depth))?;
    let image = ImageEvidence::new(frame.encode(setup.config.quadtree_threshold_mm));
    let scene = Scene {
        model: &setup.model,
        image: &image,
        camera: frame.camera,
        targets: &targets,
        target_camera: Some(camera),
    };
    let r: EnergyReport = total_energy(&scene, &pose, &entry.beta, &setup.weights)?;
    let grad_norm = r.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let text = format!(
        "e_total     {:.9}\ne_dissim    {:.9}\ne_collision {:.9}\ne_bone      {:.9}\ne_lim       {:.9}\ne_joint     {:.9}\n|grad|      {:.9}\nimage blobs {}\n",
        r.e_total,
        r.e_dissim,
        r.e_collision,
        r.e_bone,
        r.e_lim,
        r.e_joint,
        grad_norm,
        image.blobs().len()
    );
    Ok(Outcome {
        json: json!({"report": r, "weights": setup.weights, "grad_norm": grad_norm, "image_blobs": image.blobs().len()}),
        text,
    })
}
