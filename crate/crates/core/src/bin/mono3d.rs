use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use mono3d::assign::{assign, MatchMode};
use mono3d::dataio::kitti::{label_files, read_label_file, KittiCalib};
use mono3d::dataio::{RunConfig, TeacherFeatures, TensorContainer};
use mono3d::distill::{distill_loss, importance_omega, DistillPair, FEATURE_DIM};
use mono3d::geometry::{Box3D, BOX_ROW_LEN};
use mono3d::infer::{infer, DecodeConfig, InferMode, InferenceOutput, StageTimings};
use mono3d::mgiou::mgiou_3d;
use mono3d::nn::{DetectorHeads, HIDDEN};
use mono3d::synth::{
    assignment_scene, generate_scene, perturb, random_feature_maps, write_kitti_scenes, AssignmentScene, DimRange,
    KittiOutput, NoiseSpec, SceneSpec,
};
use mono3d::Error;

/// Rotation blocks in box-pair files must be orthonormal to this tolerance.
const ROW_ROTATION_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "mono3d", version, about = "Monocular 3D detection toolkit")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, env = "MONO3D_CONFIG")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set gamma=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Render human-readable tables instead of JSON lines.
    #[arg(long, global = true)]
    table: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// AP_3D and AP_BEV at R40 over KITTI label directories.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Worker threads; all cores when omitted.
        #[arg(long)]
        jobs: Option<usize>,
        /// Also write the PR curves as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Dense versus gated head evaluation on random features.
    GatedBench {
        #[arg(long)]
        weights: PathBuf,
        /// Channels and stride-8 map size as `C,H8,W8`.
        #[arg(long)]
        shape: String,
        /// Locations kept; the configured `gated_k` when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Label assignment on a JSON scene or a seeded synthetic one.
    MatchDemo {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::OneToOne)]
        mode: ModeArg,
    },
    /// Weighted feature distillation loss between two feature dumps.
    DistillLoss {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        /// Head weights whose depth output layer sets channel importance;
        /// uniform when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// MGIoU for each line of 30 numbers (two boxes in row layout).
    Mgiou {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Synthetic KITTI-format ground truth, detections and calibration.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 8)]
        objects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        sigma_depth: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_dims: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_yaw: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_center: f64,
        #[arg(long, default_value_t = 0.0)]
        fp_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        fn_rate: f64,
    },
    /// Random head weights written to a tensor container.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    OneToOne,
    OneToMany,
}

enum Failure {
    /// Bad or missing input; exit code 2.
    Input(String),
    /// An internal consistency check failed; exit code 3.
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.with_overrides(&cli.overrides)?)
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
}

fn run(cli: Cli) -> CliResult {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Eval { gt, pred, jobs, csv } => cmd_eval(&cfg, gt, pred, *jobs, csv.as_deref(), cli.table),
        Command::GatedBench {
            weights,
            shape,
            k,
            repeat,
            seed,
        } => cmd_gated_bench(&cfg, weights, shape, k.unwrap_or(cfg.gated_k), *repeat, *seed, cli.table),
        Command::MatchDemo { scene, seed, mode } => cmd_match_demo(&cfg, scene.as_deref(), *seed, *mode, cli.table),
        Command::DistillLoss {
            teacher,
            student,
            weights,
        } => cmd_distill(&cfg, teacher, student, weights.as_deref(), cli.table),
        Command::Mgiou { pairs } => cmd_mgiou(pairs, cli.table),
        Command::Synth {
            out,
            images,
            objects,
            seed,
            sigma_depth,
            sigma_dims,
            sigma_yaw,
            sigma_center,
            fp_rate,
            fn_rate,
        } => {
            let noise = NoiseSpec {
                sigma_depth: *sigma_depth,
                sigma_dims: *sigma_dims,
                sigma_yaw: *sigma_yaw,
                sigma_center: *sigma_center,
                fp_rate: *fp_rate,
                fn_rate: *fn_rate,
            };
            cmd_synth(&cfg, out, *images, *objects, *seed, noise, cli.table)
        }
        Command::InitWeights { out, channels, seed } => cmd_init_weights(&cfg, out, *channels, *seed, cli.table),
    }
}

fn cmd_eval(cfg: &RunConfig, gt: &Path, pred: &Path, jobs: Option<usize>, csv: Option<&Path>, table: bool) -> CliResult {
    if !pred.is_dir() {
        return Err(Failure::Input(format!("prediction directory {} not found", pred.display())));
    }
    let gt_files = label_files(gt)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
    let classes = &cfg.classes;
    let report = pool.install(|| -> CliResult<_> {
        let loaded: Vec<_> = gt_files
            .par_iter()
            .map(|g| -> CliResult<_> {
                let name = g.file_name().expect("label file has a name");
                let p = pred.join(name);
                if !p.is_file() {
                    return Err(Failure::Input(format!("missing prediction file {}", p.display())));
                }
                let gts = read_label_file(g)?.ground_truths(classes)?;
                let dets = read_label_file(&p)?.detections(classes)?;
                Ok((dets, gts))
            })
            .collect::<CliResult<_>>()?;
        let (dets, gts): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
        Ok(mono3d::eval::evaluate(&dets, &gts, &cfg.eval_config())?)
    })?;
    if let Some(path) = csv {
        fs::write(path, report.to_csv()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    if table {
        print!("{}", report.to_table());
    } else {
        emit(&report);
    }
    Ok(())
}

fn parse_shape(shape: &str) -> CliResult<(usize, usize, usize)> {
    let parts: Vec<usize> = shape
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Input(format!("--shape {shape:?} is not C,H8,W8")))?;
    match parts.as_slice() {
        [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Ok((*c, *h, *w)),
        _ => Err(Failure::Input(format!("--shape {shape:?} needs three positive integers"))),
    }
}

fn median(mut v: Vec<Duration>) -> f64 {
    v.sort();
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let d = if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2 };
    d.as_secs_f64() * 1e3
}

#[derive(Serialize)]
struct StageRow {
    stage: &'static str,
    dense_ms: f64,
    gated_ms: f64,
}

fn stage_rows(dense: &[StageTimings], gated: &[StageTimings]) -> Vec<StageRow> {
    type Pick = fn(&StageTimings) -> Duration;
    let stages: [(&str, Pick); 5] = [
        ("classification_head", |t| t.classification),
        ("topk", |t| t.topk),
        ("patch_extraction", |t| t.patch_extraction),
        ("regression_heads", |t| t.regression_heads),
        ("decoding", |t| t.decoding),
    ];
    stages
        .iter()
        .map(|(stage, f)| StageRow {
            stage,
            dense_ms: median(dense.iter().map(f).collect()),
            gated_ms: median(gated.iter().map(f).collect()),
        })
        .collect()
}

fn cmd_gated_bench(cfg: &RunConfig, weights: &Path, shape: &str, k: usize, repeat: usize, seed: u64, table: bool) -> CliResult {
    let heads = DetectorHeads::from_container(&TensorContainer::read_file(weights)?)?;
    heads.validate()?;
    let (c, h8, w8) = parse_shape(shape)?;
    if c != heads.in_channels {
        return Err(Failure::Input(format!("--shape has {c} channels, weights expect {}", heads.in_channels)));
    }
    if heads.num_classes != cfg.classes.len() {
        return Err(Failure::Input(format!(
            "weights predict {} classes, config lists {}",
            heads.num_classes,
            cfg.classes.len()
        )));
    }
    if repeat == 0 || k == 0 {
        return Err(Failure::Input("--repeat and --k must be at least 1".into()));
    }
    let features = random_feature_maps(c, h8, w8, seed)?;
    let decode = DecodeConfig {
        intrinsics: cfg.camera()?,
        class_mean_dims: cfg.mean_dims()?,
        orientation_mode: heads.orientation_mode,
    };
    let mut dense_t = Vec::with_capacity(repeat);
    let mut gated_t = Vec::with_capacity(repeat);
    let mut last: Option<(InferenceOutput, InferenceOutput)> = None;
    for _ in 0..repeat {
        let d = infer(&features, &heads, k, InferMode::Dense, &decode)?;
        let g = infer(&features, &heads, k, InferMode::Gated, &decode)?;
        if !d.detections.bitwise_eq(&g.detections) {
            return Err(Failure::Invariant(format!(
                "gated detections differ from dense (max abs diff {:e})",
                d.detections.max_abs_diff(&g.detections)
            )));
        }
        dense_t.push(d.timings);
        gated_t.push(g.timings);
        last = Some((d, g));
    }
    let (_, g) = last.expect("repeat >= 1");
    let macs = g.macs;
    let (num, den) = macs.regression_ratio();
    let [(h8, w8), (h16, w16)] = features.level_sizes();
    let rows = stage_rows(&dense_t, &gated_t);
    let out = json!({
        "channels": c,
        "hidden": HIDDEN,
        "levels": [[h8, w8], [h16, w16]],
        "k": k,
        "selected": macs.selected,
        "locations": macs.locations,
        "repeat": repeat,
        "equivalent": true,
        "macs": {
            "classification": macs.classification,
            "regression_dense": macs.regression_dense,
            "regression_gated": macs.regression_gated,
            "ratio_numerator": num,
            "ratio_denominator": den,
            "ratio": macs.regression_ratio_f64(),
        },
        "stages": rows,
    });
    if table {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>12} {:>12}", "stage", "dense ms", "gated ms");
        for r in &rows {
            let _ = writeln!(s, "{:<20} {:>12.3} {:>12.3}", r.stage, r.dense_ms, r.gated_ms);
        }
        let _ = writeln!(s, "classification MACs  {}", macs.classification);
        let _ = writeln!(s, "regression MACs      dense {}  gated {}", macs.regression_dense, macs.regression_gated);
        let _ = writeln!(s, "gated/dense ratio    {num}/{den} = {:.6}", macs.regression_ratio_f64());
        let _ = writeln!(s, "equivalence          PASS");
        print!("{s}");
    } else {
        emit(&out);
    }
    Ok(())
}

fn cmd_match_demo(cfg: &RunConfig, scene: Option<&Path>, seed: u64, mode: ModeArg, table: bool) -> CliResult {
    let scene: AssignmentScene = match scene {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None => assignment_scene(seed, 3, 30, cfg.classes.len())?,
    };
    let mode = match mode {
        ModeArg::OneToOne => MatchMode::OneToOne,
        ModeArg::OneToMany => MatchMode::OneToMany,
    };
    let m = cfg.match_config();
    let result = assign(&scene.gts, &scene.preds, &m, mode)?;
    if table {
        println!("{:>4} {:>7} {:>12}", "gt", "anchor", "score");
        for p in &result.pairs {
            println!("{:>4} {:>7} {:>12.6}", p.gt_index, p.anchor_index, p.score);
        }
        println!("unmatched: {:?}", result.unmatched_gt);
    } else {
        emit(&json!({
            "mode": match mode { MatchMode::OneToOne => "one_to_one", MatchMode::OneToMany => "one_to_many" },
            "alpha": m.alpha,
            "beta": m.beta,
            "gamma": m.gamma,
            "topk": m.topk,
            "num_gt": scene.gts.len(),
            "num_anchors": scene.preds.len(),
            "pairs": result.pairs,
            "unmatched_gt": result.unmatched_gt,
        }));
    }
    Ok(())
}

fn cmd_distill(cfg: &RunConfig, teacher: &Path, student: &Path, weights: Option<&Path>, table: bool) -> CliResult {
    let t = TeacherFeatures::read_file(teacher)?;
    let s = TeacherFeatures::read_file(student)?;
    if t.instances != s.instances {
        return Err(Failure::Input("teacher and student dumps list different instances".into()));
    }
    let gt_depth = t
        .gt_depth
        .as_ref()
        .ok_or_else(|| Failure::Input(format!("{} has no gt_depth tensor", teacher.display())))?;
    let w_final: Vec<f64> = match weights {
        Some(p) => {
            let heads = DetectorHeads::from_container(&TensorContainer::read_file(p)?)?;
            heads.depth.conv1x1_b.weight.iter().map(|v| *v as f64).collect()
        }
        None => vec![1.0; FEATURE_DIM],
    };
    let omega = importance_omega(&w_final)?;
    let dcfg = cfg.distill_config();
    let mut pairs = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let (image, instance) = t.instances[i];
        let to64 = |v: &[f32]| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
        pairs.push(DistillPair::new(
            image,
            instance,
            to64(&t.features[i]),
            to64(&s.features[i]),
            gt_depth[i] as f64,
            t.depth[i] as f64,
        )?);
    }
    let etas: Vec<f64> = pairs.iter().map(|p| p.eta(&dcfg)).collect();
    let loss = if pairs.is_empty() { 0.0 } else { distill_loss(&pairs, &omega, &etas)?.value };
    if table {
        println!("pairs {}  loss {:.9}", pairs.len(), loss);
        for (p, e) in pairs.iter().zip(&etas) {
            println!("  image {:>4} instance {:>4} eta {:.6}", p.image, p.instance, e);
        }
    } else {
        emit(&json!({
            "loss": loss,
            "num_pairs": pairs.len(),
            "epsilon": dcfg.epsilon,
            "eta": etas,
        }));
    }
    Ok(())
}

fn parse_box_pairs(text: &str, source: &str) -> CliResult<Vec<(Box3D, Box3D)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| Failure::Input(format!("{source}:{}: {m}", i + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(e.to_string()))?;
        if v.len() != 2 * BOX_ROW_LEN {
            return Err(err(format!("expected {} numbers, found {}", 2 * BOX_ROW_LEN, v.len())));
        }
        let a = Box3D::from_row(&v[..BOX_ROW_LEN], ROW_ROTATION_TOL).map_err(|e| err(e.to_string()))?;
        let b = Box3D::from_row(&v[BOX_ROW_LEN..], ROW_ROTATION_TOL).map_err(|e| err(e.to_string()))?;
        out.push((a, b));
    }
    Ok(out)
}

fn cmd_mgiou(path: &Path, table: bool) -> CliResult {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let pairs = parse_box_pairs(&text, &path.display().to_string())?;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let v = mgiou_3d(a, b);
        if table {
            println!("{i:>6} {v:>14.9}");
        } else {
            emit(&json!({ "index": i, "mgiou": v }));
        }
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &Path, images: usize, objects: usize, seed: u64, noise: NoiseSpec, table: bool) -> CliResult {
    let spec_for = |i: usize| SceneSpec {
        seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
        n_objects: objects,
        dim_ranges: cfg
            .class_mean_dims
            .iter()
            .map(|m| DimRange {
                min: m.map(|v| 0.9 * v),
                max: m.map(|v| 1.1 * v),
            })
            .collect(),
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        intrinsics: cfg.camera().expect("validated config"),
        noise,
        ..SceneSpec::default()
    };
    let scenes = (0..images)
        .map(|i| -> CliResult<_> {
            let spec = spec_for(i);
            let scene = generate_scene(&spec)?;
            let dets = perturb(&scene.gts, &noise, spec.seed ^ 0x5eed_0f_de7)?;
            Ok((scene.gts, dets))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let gt_dir = out.join("label_2");
    let pred_dir = out.join("pred");
    let calib_dir = out.join("calib");
    write_kitti_scenes(&gt_dir, &cfg.classes, &scenes, KittiOutput::GroundTruth)?;
    write_kitti_scenes(&pred_dir, &cfg.classes, &scenes, KittiOutput::Detections)?;
    fs::create_dir_all(&calib_dir).map_err(|e| Failure::Input(format!("{}: {e}", calib_dir.display())))?;
    let calib = KittiCalib::from_intrinsics(cfg.camera()?).to_text();
    for i in 0..images {
        let p = calib_dir.join(format!("{i:06}.txt"));
        fs::write(&p, &calib).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
    }
    let n_gt: usize = scenes.iter().map(|s| s.0.len()).sum();
    let n_det: usize = scenes.iter().map(|s| s.1.len()).sum();
    if table {
        println!("images {images}  objects {n_gt}  detections {n_det}  -> {}", out.display());
    } else {
        emit(&json!({
            "images": images,
            "objects": n_gt,
            "detections": n_det,
            "gt_dir": gt_dir,
            "pred_dir": pred_dir,
            "calib_dir": calib_dir,
        }));
    }
    Ok(())
}

fn cmd_init_weights(cfg: &RunConfig, out: &Path, channels: usize, seed: u64, table: bool) -> CliResult {
    if channels == 0 {
        return Err(Failure::Input("--channels must be at least 1".into()));
    }
    let heads = DetectorHeads::random(channels, cfg.classes.len(), cfg.orientation, seed);
    let container = heads.to_container()?;
    let parameters: usize = container.tensors.iter().map(|t| t.data.len()).sum();
    container.write_file(out)?;
    if table {
        println!("wrote {} ({parameters} parameters)", out.display());
    } else {
        emit(&json!({
            "path": out,
            "in_channels": channels,
            "num_classes": heads.num_classes,
            "orientation": cfg.orientation,
            "parameters": parameters,
        }));
    }
    Ok(())
}
