//! `mdepth`: train, run and check the selective-scan depth estimator.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error, 3 data or
//! checkpoint error, 4 input dimension constraint violated.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mambadepth_core::gradcheck;
use mambadepth_core::io::checkpoint::{load_model, CheckpointError};
use mambadepth_core::io::config::{parse_file, ConfigError, DataSource, RunConfig};
use mambadepth_core::io::dataset::{load_scene_dir, triplets_from_scene, write_scene_dir, DataError};
use mambadepth_core::io::{pfm, ppm};
use mambadepth_core::metrics::{compute_metrics, median_scale, EvalReport, DEPTH_CAP};
use mambadepth_core::net::{check_input_dims, disparity_to_depth, DepthNet, PoseNet};
use mambadepth_core::ssm::{scan_parallel, scan_sequential, SsmParams};
use mambadepth_core::synthetic::{SceneKind, SyntheticScene};
use mambadepth_core::tensor::ops as tops;
use mambadepth_core::trainer::{train, TrainError};

#[derive(Parser)]
#[command(name = "mdepth", version, about = "Self-supervised monocular depth estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the depth and pose networks.
    Train {
        /// Training config file (key = value with [sections]).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train on a generated synthetic scene (allows running without --config).
        #[arg(long)]
        synthetic: bool,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoints and the loss CSV.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Predict a full-resolution inverse-depth map for one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (binary PPM).
        #[arg(long)]
        image: PathBuf,
        /// Output PFM path; a PNG visualization is written alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Seven-metric depth evaluation over directories of PFM depth maps.
    Eval {
        #[arg(long = "pred-dir")]
        pred_dir: PathBuf,
        #[arg(long = "gt-dir")]
        gt_dir: PathBuf,
    },
    /// Finite-difference verification of every autodiff primitive and the
    /// composite mechanisms.
    Gradcheck {
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
    /// Sequential-vs-parallel selective-scan equivalence sweep.
    Scancheck {
        #[arg(long, default_value_t = 100)]
        cases: u64,
    },
    /// Generate a synthetic scene directory (frames, depths, poses, intrinsics).
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value = "training")]
        kind: SceneKindArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKindArg {
    Training,
    Shift,
    Static,
}

impl From<SceneKindArg> for SceneKind {
    fn from(k: SceneKindArg) -> SceneKind {
        match k {
            SceneKindArg::Training => SceneKind::Training,
            SceneKindArg::Shift => SceneKind::IntegerShift { shift_px: 2 },
            SceneKindArg::Static => SceneKind::StaticCamera,
        }
    }
}

enum CliError {
    Config(String),
    Data(String),
    Dimension(String),
    CheckFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailed => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Dimension(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<pfm::PfmError> for CliError {
    fn from(e: pfm::PfmError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ppm::PpmError> for CliError {
    fn from(e: ppm::PpmError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn threads_mode() -> u32 {
    // 0 = auto, 1 = strict deterministic. All compute in this build is
    // single-threaded and deterministic either way; the variable is parsed
    // so misconfiguration fails loudly.
    match std::env::var("MDEPTH_THREADS") {
        Err(_) => 0,
        Ok(v) => v.parse().unwrap_or_else(|_| {
            eprintln!("warning: MDEPTH_THREADS='{v}' is not an integer; using auto");
            0
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = threads_mode();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("config error: {m}"),
                CliError::Data(m) => eprintln!("data error: {m}"),
                CliError::Dimension(m) => eprintln!("input error: {m}"),
                CliError::CheckFailed => {}
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train { config, synthetic, seed, out } => cmd_train(config, synthetic, seed, &out),
        Command::Infer { checkpoint, image, out } => cmd_infer(&checkpoint, &image, &out),
        Command::Eval { pred_dir, gt_dir } => cmd_eval(&pred_dir, &gt_dir),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Scancheck { cases } => cmd_scancheck(cases),
        Command::MakeSynthetic { out, frames, kind, seed, width, height } => {
            let scene = SyntheticScene::generate(kind.into(), width, height, frames, seed);
            write_scene_dir(&scene, &out)?;
            println!("wrote {} frames to {}", frames, out.display());
            Ok(())
        }
    }
}

fn cmd_train(
    config: Option<PathBuf>,
    synthetic: bool,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg: RunConfig = match &config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "config file {} not found",
                    path.display()
                )));
            }
            parse_file(path)?
        }
        None => {
            if !synthetic {
                return Err(CliError::Config(
                    "either --config or --synthetic is required".to_string(),
                ));
            }
            RunConfig::default()
        }
    };
    if synthetic {
        cfg.data.source = DataSource::Synthetic;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }

    let dataset = match &cfg.data.source {
        DataSource::Synthetic => {
            let scene = SyntheticScene::generate(
                SceneKind::Training,
                cfg.data.width,
                cfg.data.height,
                cfg.data.frames,
                cfg.data.scene_seed,
            );
            triplets_from_scene(&scene)
        }
        DataSource::Directory(dir) => load_scene_dir(Path::new(dir))?,
    };
    if let Some(t) = dataset.first() {
        let (h, w) = (t.frames[1].shape()[0], t.frames[1].shape()[1]);
        check_input_dims(h, w, &cfg.net).map_err(|e| CliError::Dimension(e.to_string()))?;
    }

    let mut depth = DepthNet::new(cfg.net, cfg.train.seed);
    let mut pose = PoseNet::new(cfg.train.seed.wrapping_add(1));
    let result = train(&dataset, &mut depth, &mut pose, &cfg.train, &cfg.loss, Some(out))?;
    for (epoch, (total, photo)) in result
        .epoch_mean_total
        .iter()
        .zip(&result.epoch_mean_photo)
        .enumerate()
    {
        println!("epoch {epoch}: loss {total:.6} photo {photo:.6}");
    }
    println!(
        "wrote {} checkpoints and loss.csv to {}",
        result.checkpoints.len(),
        out.display()
    );
    Ok(())
}

const COLORMAP: [(f64, [f64; 3]); 7] = [
    (0.00, [0.050, 0.030, 0.530]),
    (0.17, [0.280, 0.070, 0.650]),
    (0.33, [0.540, 0.110, 0.590]),
    (0.50, [0.760, 0.210, 0.460]),
    (0.67, [0.930, 0.390, 0.270]),
    (0.83, [0.990, 0.660, 0.140]),
    (1.00, [0.940, 0.980, 0.130]),
];

fn colorize(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let mut lo = COLORMAP[0];
    for &hi in &COLORMAP[1..] {
        if v <= hi.0 {
            let t = (v - lo.0) / (hi.0 - lo.0).max(1e-12);
            let mix = |a: f64, b: f64| ((a + (b - a) * t) * 255.0).round() as u8;
            return [
                mix(lo.1[0], hi.1[0]),
                mix(lo.1[1], hi.1[1]),
                mix(lo.1[2], hi.1[2]),
            ];
        }
        lo = hi;
    }
    [239, 250, 33]
}

fn cmd_infer(checkpoint: &Path, image: &Path, out: &Path) -> Result<(), CliError> {
    let (depth_net, _pose) = load_model(checkpoint)?;
    let (w, h, rgb) = ppm::read_ppm(image)?;
    check_input_dims(h, w, &depth_net.config).map_err(|e| CliError::Dimension(e.to_string()))?;
    let img = ppm::rgb8_to_tensor(&rgb, w, h);

    let outputs = depth_net.forward(&img);
    let fine = &outputs.disparities[0];
    let (fh, fw) = (fine.shape()[0], fine.shape()[1]);
    let up = tops::upsample_bilinear(&fine.reshape(&[fh, fw, 1]), h, w).reshape(&[h, w]);
    let cfg = depth_net.config;
    let depth_map = disparity_to_depth(&up, cfg.min_depth, cfg.max_depth);
    let inv_depth: Vec<f64> = depth_map.data().iter().map(|d| 1.0 / d).collect();

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let as_f32: Vec<f32> = inv_depth.iter().map(|&v| v as f32).collect();
    pfm::write_pfm(out, w, h, &as_f32)?;

    let lo = inv_depth.iter().cloned().fold(f64::MAX, f64::min);
    let hi = inv_depth.iter().cloned().fold(f64::MIN, f64::max);
    let span = (hi - lo).max(1e-12);
    let mut png = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (inv_depth[y * w + x] - lo) / span;
            png.put_pixel(x as u32, y as u32, image::Rgb(colorize(v)));
        }
    }
    let png_path = out.with_extension("png");
    png.save(&png_path)
        .map_err(|e| CliError::Data(format!("png write: {e}")))?;
    println!("wrote {} and {}", out.display(), png_path.display());
    Ok(())
}

fn pfm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pfm").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path) -> Result<(), CliError> {
    let preds = pfm_files(pred_dir)?;
    let gts = pfm_files(gt_dir)?;
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(CliError::Data(format!(
            "prediction/ground-truth count mismatch: {} vs {}",
            preds.len(),
            gts.len()
        )));
    }
    let mut sums = [0.0f64; 7];
    for (p_path, g_path) in preds.iter().zip(&gts) {
        let (pw, ph, p) = pfm::read_pfm(p_path)?;
        let (gw, gh, g) = pfm::read_pfm(g_path)?;
        if (pw, ph) != (gw, gh) {
            return Err(CliError::Data(format!(
                "{}: size {}x{} does not match ground truth {}x{}",
                p_path.display(),
                pw,
                ph,
                gw,
                gh
            )));
        }
        let pred: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let gt: Vec<f64> = g.iter().map(|&v| v as f64).collect();
        let valid: Vec<bool> = gt.iter().map(|&v| v > 0.0).collect();
        let scaled = median_scale(&pred, &gt, &valid)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let report = compute_metrics(&scaled, &gt, &valid, DEPTH_CAP)
            .map_err(|e| CliError::Data(e.to_string()))?;
        for (s, v) in sums.iter_mut().zip([
            report.abs_rel,
            report.sq_rel,
            report.rmse,
            report.rmse_log,
            report.delta1,
            report.delta2,
            report.delta3,
        ]) {
            *s += v;
        }
    }
    let n = preds.len() as f64;
    println!("{}", EvalReport::CSV_HEADER);
    println!(
        "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
        sums[4] / n,
        sums[5] / n,
        sums[6] / n
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<(), CliError> {
    let mut failed = false;
    for report in gradcheck::primitive_suite(seed) {
        let ok = report.passed(1e-6);
        println!(
            "primitive {:<18} max rel err {:>10.3e} over {:>3} coords  {}",
            report.name,
            report.max_rel_err,
            report.coords_checked,
            if ok { "PASS" } else { "FAIL" }
        );
        failed |= !ok;
    }
    for report in gradcheck::composite_suite(seed) {
        let ok = report.passed(1e-5);
        println!(
            "composite {:<18} max rel err {:>10.3e} over {:>3} coords  {}",
            report.name,
            report.max_rel_err,
            report.coords_checked,
            if ok { "PASS" } else { "FAIL" }
        );
        failed |= !ok;
    }
    if failed {
        Err(CliError::CheckFailed)
    } else {
        Ok(())
    }
}

fn cmd_scancheck(cases: u64) -> Result<(), CliError> {
    use rand::{Rng, SeedableRng};
    let mut max_diff = 0.0f64;
    for seed in 0..cases {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let channels = 1 + (rng.gen::<usize>() % 6);
        let state = 1 + (rng.gen::<usize>() % 16);
        let len = 1 + (rng.gen::<usize>() % 257);
        let params = SsmParams::new(channels, state, &mut rng);
        let u: Vec<f64> = (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = scan_sequential(&params, &u, len);
        let par = scan_parallel(&params, &u, len);
        for (a, b) in seq.y.iter().zip(&par) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    println!("scancheck: {cases} cases, max |sequential - parallel| = {max_diff:.3e}");
    if max_diff < 1e-10 {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}
