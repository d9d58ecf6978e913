//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test -p mambadepth-cli --test acceptance
//! -- --nocapture` to see the lines.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use mambadepth_core::geometry::{
    backproject, project, warp_coords, warp_frame, CameraModel, PixelGrid, PoseTransform,
};
use mambadepth_core::gradcheck;
use mambadepth_core::loss::{auto_mask, photometric_error, LossConfig};
use mambadepth_core::metrics::{compute_metrics, median_scale, DEPTH_CAP};
use mambadepth_core::net::{DepthNet, NetConfig};
use mambadepth_core::ssm::{scan_parallel, scan_sequential, SsmParams};
use mambadepth_core::synthetic::{SceneKind, SyntheticScene};
use mambadepth_core::tensor::Tensor;
use mambadepth_core::trainer::TrainConfig;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n} ({name}): {} [{detail}]",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn mdepth() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdepth"))
}

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let mut worst: (String, f64) = (String::new(), 0.0);
    let mut pass = true;
    for report in gradcheck::primitive_suite(0x5eed) {
        if !report.passed(1e-6) {
            pass = false;
        }
        if report.max_rel_err > worst.1 {
            worst = (format!("primitive {}", report.name), report.max_rel_err);
        }
    }
    for report in gradcheck::composite_suite(0x5eed) {
        if !report.passed(1e-5) {
            pass = false;
        }
        if report.max_rel_err > worst.1 {
            worst = (format!("composite {}", report.name), report.max_rel_err);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = pass && elapsed < 120.0;
    verdict(
        1,
        "gradient suite",
        pass,
        &format!("worst {} {:.2e}, {:.1}s", worst.0, worst.1, elapsed),
    );
}

#[test]
fn criterion_02_scan_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut max_diff = 0.0f64;
    for _ in 0..1000 {
        let channels = 1 + rng.gen::<usize>() % 6;
        let state = 1 + rng.gen::<usize>() % 16;
        let len = 1 + rng.gen::<usize>() % 257;
        let params = SsmParams::new(channels, state, &mut rng);
        let u: Vec<f64> = (0..len * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq = scan_sequential(&params, &u, len);
        let par = scan_parallel(&params, &u, len);
        for (a, b) in seq.y.iter().zip(&par) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_diff < 1e-10 && elapsed < 60.0;
    verdict(
        2,
        "scan equivalence",
        pass,
        &format!("1000 cases, max diff {:.2e}, {:.1}s", max_diff, elapsed),
    );
}

#[test]
fn criterion_03_geometry_round_trip() {
    let mut rng = ChaCha12Rng::seed_from_u64(33);
    let cam = CameraModel::new(70.0, 65.0, 31.5, 23.5, 64, 48);
    let grid = PixelGrid::new(cam.width, cam.height);
    let mut max_err = 0.0f64;
    for _ in 0..100 {
        let depth_data: Vec<f64> = (0..64 * 48).map(|_| rng.gen_range(0.1..100.0)).collect();
        let depth = Tensor::from_vec(depth_data, &[48, 64]);
        let points = backproject(&grid, &depth, &cam);
        let proj = project(&points, &cam);
        for i in 0..64 * 48 {
            max_err = max_err.max((proj.u.data()[i] - grid.u.data()[i]).abs());
            max_err = max_err.max((proj.v.data()[i] - grid.v.data()[i]).abs());
        }
    }

    // Identity-pose warp must reproduce the pixel grid exactly: power-of-two
    // focal length and half-integer principal point keep every arithmetic
    // step representable.
    let cam2 = CameraModel::new(64.0, 64.0, 31.5, 23.5, 64, 48);
    let grid2 = PixelGrid::new(cam2.width, cam2.height);
    let mut exact = true;
    for _ in 0..10 {
        let depth_data: Vec<f64> = (0..64 * 48)
            .map(|_| [0.5, 1.0, 2.0, 4.0, 8.0][rng.gen::<usize>() % 5])
            .collect();
        let depth = Tensor::from_vec(depth_data, &[48, 64]);
        let proj = warp_coords(&grid2, &depth, &PoseTransform::identity(), &cam2);
        exact &= proj.u.to_vec() == grid2.u.to_vec() && proj.v.to_vec() == grid2.v.to_vec();
    }

    let pass = max_err < 1e-10 && exact;
    verdict(
        3,
        "geometry round trip",
        pass,
        &format!("max round-trip err {:.2e}, identity warp exact: {}", max_err, exact),
    );
}

/// The photometric term is windowed (3x3 SSIM), so a pixel's value is only
/// meaningful when its whole window support is valid: erode the sampling
/// validity mask by the window radius.
fn erode_valid(valid: &[bool], h: usize, w: usize, radius: isize) -> Vec<bool> {
    let mut out = vec![false; valid.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut ok = true;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let yy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x + dx).clamp(0, w as isize - 1) as usize;
                    ok &= valid[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = ok;
        }
    }
    out
}

#[test]
fn criterion_04_synthetic_reconstruction() {
    let scene = SyntheticScene::generate(SceneKind::IntegerShift { shift_px: 2 }, 64, 64, 3, 7);
    let cfg = LossConfig::default();
    let target = 1usize;
    let mut worst = 0.0f64;
    let mut n_checked = 0usize;
    for source in [0usize, 2] {
        let pose = PoseTransform::from_matrix_values(&scene.relative_pose(target, source));
        let (warped, valid) = warp_frame(
            &scene.image_tensor(source),
            &scene.depth_tensor(target),
            &pose,
            &scene.cam,
        );
        let pe = photometric_error(&scene.image_tensor(target), &warped, &cfg);
        let valid = erode_valid(&valid, 64, 64, 1);
        for (i, &v) in valid.iter().enumerate() {
            if v {
                worst = worst.max(pe.data()[i]);
                n_checked += 1;
            }
        }
    }
    let pass = worst < 1e-6 && n_checked > 2 * 64 * 64 * 9 / 10;
    verdict(
        4,
        "synthetic reconstruction",
        pass,
        &format!(
            "max photometric error {:.2e} over {} valid pixels",
            worst, n_checked
        ),
    );
}

#[test]
fn criterion_05_overfit() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    let status = mdepth()
        .args([
            "make-synthetic",
            "--out",
            scene_dir.to_str().unwrap(),
            "--frames",
            "20",
            "--seed",
            "1",
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let cfg_path = dir.path().join("desk.cfg");
    std::fs::write(
        &cfg_path,
        format!("[data]\nsource = {}\n", scene_dir.display()),
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let status = mdepth()
        .args([
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("MDEPTH_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());

    // Photometric halving from the loss curve.
    let csv = std::fs::read_to_string(out_dir.join("loss.csv")).unwrap();
    let mut per_epoch: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let epoch: usize = fields[0].parse().unwrap();
        let photo: f64 = fields[3].parse().unwrap();
        let e = per_epoch.entry(epoch).or_insert((0.0, 0));
        e.0 += photo;
        e.1 += 1;
    }
    let means: Vec<f64> = per_epoch.values().map(|(s, n)| s / *n as f64).collect();
    let first = means[0];
    let last = *means.last().unwrap();
    let halved = last <= 0.5 * first;

    // Disparity accuracy: infer a training frame, compare against the
    // ground-truth depth with per-image median scaling.
    let pfm_out = dir.path().join("pred.pfm");
    let status = mdepth()
        .args([
            "infer",
            "--checkpoint",
            out_dir.join("final.ckpt").to_str().unwrap(),
            "--image",
            scene_dir.join("frame_0009.ppm").to_str().unwrap(),
            "--out",
            pfm_out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let (w, h, pred) = mambadepth_core::io::pfm::read_pfm(&pfm_out).unwrap();
    let (_, _, gt_depth) =
        mambadepth_core::io::pfm::read_pfm(&scene_dir.join("depth_0009.pfm")).unwrap();
    let pred_disp: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let gt_disp: Vec<f64> = gt_depth.iter().map(|&v| 1.0 / v as f64).collect();
    let valid = vec![true; w * h];
    let scaled = median_scale(&pred_disp, &gt_disp, &valid).unwrap();
    let ok = scaled
        .iter()
        .zip(&gt_disp)
        .filter(|(p, g)| ((*p - *g) / *g).abs() <= 0.2)
        .count();
    let frac = ok as f64 / (w * h) as f64;

    // Flip-consistency smoke check on the trained model: predictions on a
    // mirrored input, mirrored back, should roughly match (the model trains
    // with flip augmentation). Generous bound; approximate equivariance only.
    let (depth_net, _) =
        mambadepth_core::io::checkpoint::load_model(&out_dir.join("final.ckpt")).unwrap();
    let (iw, ih, rgb) =
        mambadepth_core::io::ppm::read_ppm(&scene_dir.join("frame_0009.ppm")).unwrap();
    let img = mambadepth_core::io::ppm::rgb8_to_tensor(&rgb, iw, ih);
    let disp = depth_net.forward(&img).disparities[0].clone();
    let flipped_img = mambadepth_core::augment::flip_horizontal(&img);
    let disp_flip = depth_net.forward(&flipped_img).disparities[0].clone();
    let (dh, dw) = (disp.shape()[0], disp.shape()[1]);
    let mut mad = 0.0;
    for y in 0..dh {
        for x in 0..dw {
            mad += (disp.data()[y * dw + x] - disp_flip.data()[y * dw + (dw - 1 - x)]).abs();
        }
    }
    mad /= (dh * dw) as f64;
    let spread = disp.data().iter().cloned().fold(f64::MIN, f64::max)
        - disp.data().iter().cloned().fold(f64::MAX, f64::min);
    let flip_ok = mad < 0.5 * spread.max(1e-6);

    let elapsed = start.elapsed().as_secs_f64();
    let pass = halved && frac >= 0.9 && elapsed < 1800.0 && flip_ok;
    verdict(
        5,
        "overfit",
        pass,
        &format!(
            "photo {:.5} -> {:.5} (x{:.2}), disparity within 20%: {:.1}%, flip-equivariance mad/spread {:.2}, {:.0}s",
            first,
            last,
            last / first,
            100.0 * frac,
            mad / spread.max(1e-6),
            elapsed
        ),
    );
}

#[test]
fn criterion_06_parameter_count() {
    let mut net = DepthNet::new(NetConfig::full(), 6);
    let n = net.param_count();
    let pass = (n as f64) > 24e6 && (n as f64) < 36e6;
    verdict(
        6,
        "parameter count",
        pass,
        &format!("{n} trainable parameters ({:.2}M, target 30M +/- 20%)", n as f64 / 1e6),
    );
}

#[test]
fn criterion_07_metric_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut max_dev = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(8..80);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..120.0)).collect();
        let gt: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..120.0)).collect();
        let valid: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.9)).collect();
        if !valid.iter().any(|&v| v) {
            continue;
        }
        let r = compute_metrics(&pred, &gt, &valid, DEPTH_CAP).unwrap();

        // Naive per-pixel scalar oracle.
        let pairs: Vec<(f64, f64)> = (0..n)
            .filter(|&i| valid[i])
            .map(|i| (pred[i].clamp(1e-3, DEPTH_CAP), gt[i].clamp(1e-3, DEPTH_CAP)))
            .collect();
        let m = pairs.len() as f64;
        let abs_rel = pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / m;
        let sq_rel = pairs.iter().map(|(p, g)| (p - g) * (p - g) / g).sum::<f64>() / m;
        let rmse = (pairs.iter().map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / m).sqrt();
        let rmse_log = (pairs
            .iter()
            .map(|(p, g)| (p.ln() - g.ln()) * (p.ln() - g.ln()))
            .sum::<f64>()
            / m)
            .sqrt();
        let frac = |k: i32| {
            pairs
                .iter()
                .filter(|(p, g)| (p / g).max(g / p) < 1.25f64.powi(k))
                .count() as f64
                / m
        };
        for (a, b) in [
            (r.abs_rel, abs_rel),
            (r.sq_rel, sq_rel),
            (r.rmse, rmse),
            (r.rmse_log, rmse_log),
            (r.delta1, frac(1)),
            (r.delta2, frac(2)),
            (r.delta3, frac(3)),
        ] {
            max_dev = max_dev.max((a - b).abs());
        }
    }

    let gt: Vec<f64> = (1..=64).map(|i| i as f64).collect();
    let valid = vec![true; 64];
    let perfect = compute_metrics(&gt, &gt, &valid, DEPTH_CAP).unwrap();
    let exact = perfect.abs_rel == 0.0
        && perfect.sq_rel == 0.0
        && perfect.rmse == 0.0
        && perfect.rmse_log == 0.0
        && perfect.delta1 == 1.0
        && perfect.delta2 == 1.0
        && perfect.delta3 == 1.0;

    let pass = max_dev < 1e-12 && exact;
    verdict(
        7,
        "metric oracle",
        pass,
        &format!("max oracle deviation {:.2e}, perfect row exact: {exact}", max_dev),
    );
}

#[test]
fn criterion_08_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.cfg");
    std::fs::write(
        &cfg_path,
        "[train]\nepochs = 3\n[data]\nsource = synthetic\nframes = 8\n",
    )
    .unwrap();
    let run = |out: &Path| {
        let status = mdepth()
            .args([
                "train",
                "--config",
                cfg_path.to_str().unwrap(),
                "--synthetic",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ])
            .env("MDEPTH_THREADS", "1")
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    let csv_a = std::fs::read(out_a.join("loss.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("loss.csv")).unwrap();
    let ckpt_a = std::fs::read(out_a.join("final.ckpt")).unwrap();
    let ckpt_b = std::fs::read(out_b.join("final.ckpt")).unwrap();
    let pass = csv_a == csv_b && ckpt_a == ckpt_b;
    verdict(
        8,
        "determinism",
        pass,
        &format!(
            "loss.csv identical: {}, final.ckpt identical: {}",
            csv_a == csv_b,
            ckpt_a == ckpt_b
        ),
    );
}

#[test]
fn criterion_09_auto_mask() {
    let cfg = LossConfig::default();

    // Zero camera motion: every frame identical, warped equals raw exactly,
    // the strict inequality fails everywhere.
    let static_scene = SyntheticScene::generate(SceneKind::StaticCamera, 64, 64, 3, 5);
    let target = static_scene.image_tensor(1);
    let mut warped_pes = Vec::new();
    let mut raw_pes = Vec::new();
    for source in [0usize, 2] {
        let pose =
            PoseTransform::from_matrix_values(&static_scene.relative_pose(1, source));
        let (warped, _) = warp_frame(
            &static_scene.image_tensor(source),
            &static_scene.depth_tensor(1),
            &pose,
            &static_scene.cam,
        );
        warped_pes.push(photometric_error(&target, &warped, &cfg));
        raw_pes.push(photometric_error(&target, &static_scene.image_tensor(source), &cfg));
    }
    let mask = auto_mask(&warped_pes, &raw_pes);
    let zero_frac =
        mask.data().iter().filter(|&&m| m == 0.0).count() as f64 / mask.numel() as f64;

    // Moving camera with correct warping: the warped error is at rounding
    // level while raw frames differ on textured pixels.
    let moving = SyntheticScene::generate(SceneKind::IntegerShift { shift_px: 2 }, 64, 64, 3, 9);
    let target = moving.image_tensor(1);
    let mut warped_pes = Vec::new();
    let mut raw_pes = Vec::new();
    let mut valid_all = vec![true; 64 * 64];
    for source in [0usize, 2] {
        let pose = PoseTransform::from_matrix_values(&moving.relative_pose(1, source));
        let (warped, valid) = warp_frame(
            &moving.image_tensor(source),
            &moving.depth_tensor(1),
            &pose,
            &moving.cam,
        );
        for (va, v) in valid_all.iter_mut().zip(&valid) {
            *va &= v;
        }
        warped_pes.push(photometric_error(&target, &warped, &cfg));
        raw_pes.push(photometric_error(&target, &moving.image_tensor(source), &cfg));
    }
    let mask = auto_mask(&warped_pes, &raw_pes);
    let (mut kept, mut total) = (0usize, 0usize);
    for (i, &v) in valid_all.iter().enumerate() {
        if v {
            total += 1;
            if mask.data()[i] == 1.0 {
                kept += 1;
            }
        }
    }
    let one_frac = kept as f64 / total as f64;

    let pass = zero_frac >= 0.99 && one_frac >= 0.90;
    verdict(
        9,
        "auto-mask",
        pass,
        &format!(
            "static: mask zero on {:.1}%, moving: mask one on {:.1}% of valid pixels",
            100.0 * zero_frac,
            100.0 * one_frac
        ),
    );
}

#[test]
fn criterion_10_hyperparameter_conformance() {
    let loss = LossConfig::default();
    let train = TrainConfig::default();
    let mut ok = true;
    ok &= loss.alpha == 0.85;
    ok &= loss.lambda == 1e-3;
    ok &= train.beta1 == 0.9;
    ok &= train.beta2 == 0.999;
    ok &= train.lr_initial == 1e-4;
    ok &= train.lr_after == 1e-5;
    ok &= train.lr_drop_epoch == 15;
    ok &= mambadepth_core::optim::lr_schedule(14, train.lr_initial, train.lr_after, 15) == 1e-4;
    ok &= mambadepth_core::optim::lr_schedule(15, train.lr_initial, train.lr_after, 15) == 1e-5;
    ok &= mambadepth_core::optim::lr_schedule(16, train.lr_initial, train.lr_after, 15) == 1e-5;
    verdict(
        10,
        "hyperparameter conformance",
        ok,
        "alpha=0.85 lambda=1e-3 beta=(0.9,0.999) lr 1e-4->1e-5 at epoch 15",
    );
}
