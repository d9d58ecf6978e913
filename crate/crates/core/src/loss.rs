//! Training objective: SSIM-blended photometric error, edge-aware smoothness,
//! the static-pixel auto-mask, and the multi-scale total loss.

use crate::geometry::{warp_frame, CameraModel, PoseTransform};
use crate::net::disparity_to_depth;
use crate::tensor::ops as t;
use crate::tensor::Tensor;

/// Penalty added to the photometric error of invalid (out-of-view) samples
/// before the per-pixel minimum, so a valid source always wins.
const INVALID_PE_PENALTY: f64 = 1e6;

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// SSIM weight in the photometric blend.
    pub alpha: f64,
    /// Smoothness weight (halved per pyramid scale).
    pub lambda: f64,
    /// Box window side for SSIM.
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.85,
            lambda: 1e-3,
            ssim_window: 3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

fn expect_hwc(x: &Tensor, op: &str) -> (usize, usize, usize) {
    match x.shape() {
        [h, w, c] => (*h, *w, *c),
        s => panic!("{op}: expected [H,W,C], got {s:?}"),
    }
}

/// Windowed box mean with reflection padding.
fn box_mean(x: &Tensor, window: usize) -> Tensor {
    let (_, _, c) = expect_hwc(x, "box_mean");
    let half = window / 2;
    let padded = t::pad2d(x, (half, half, half, half), t::PadMode::Reflect);
    let kernel = Tensor::full(&[window, window, c], 1.0 / (window * window) as f64);
    t::depthwise_conv2d(&padded, &kernel, 0)
}

/// Per-pixel, per-channel structural similarity of two images in `[0,1]`,
/// using a box window with reflection padding. Identical inputs give 1.
pub fn ssim_map(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "ssim: shape mismatch");
    let w = cfg.ssim_window;
    let mu_a = box_mean(a, w);
    let mu_b = box_mean(b, w);
    let mu_aa = &mu_a * &mu_a;
    let mu_bb = &mu_b * &mu_b;
    let mu_ab = &mu_a * &mu_b;
    let sigma_a = &box_mean(&(a * a), w) - &mu_aa;
    let sigma_b = &box_mean(&(b * b), w) - &mu_bb;
    let sigma_ab = &box_mean(&(a * b), w) - &mu_ab;

    let num = &mu_ab.mul_scalar(2.0).add_scalar(cfg.ssim_c1)
        * &sigma_ab.mul_scalar(2.0).add_scalar(cfg.ssim_c2);
    let den = &(&mu_aa + &mu_bb).add_scalar(cfg.ssim_c1)
        * &(&sigma_a + &sigma_b).add_scalar(cfg.ssim_c2);
    &num / &den
}

/// Photometric error map `[H,W]`:
/// `alpha/2 * (1 - SSIM) + (1 - alpha) * |a - b|`, both terms channel-meaned.
pub fn photometric_error(a: &Tensor, b: &Tensor, cfg: &LossConfig) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "photometric_error: shape mismatch");
    let ssim = t::mean_axis(&ssim_map(a, b, cfg), 2);
    let l1 = t::mean_axis(&(a - b).abs(), 2);
    let ssim_term = ssim.mul_scalar(-1.0).add_scalar(1.0).mul_scalar(cfg.alpha / 2.0);
    let l1_term = l1.mul_scalar(1.0 - cfg.alpha);
    &ssim_term + &l1_term
}

/// Edge-aware smoothness of a mean-normalized disparity map `disp: [h,w]`
/// against image edges of `image: [h,w,3]`. Forward differences; the image
/// gradient magnitude is channel-meaned.
pub fn smoothness_loss(disp: &Tensor, image: &Tensor) -> Tensor {
    let (h, w) = match disp.shape() {
        [h, w] => (*h, *w),
        s => panic!("smoothness_loss: expected [h,w] disparity, got {s:?}"),
    };
    assert_eq!(&image.shape()[..2], &[h, w], "smoothness_loss: image mismatch");

    let norm = disp / &disp.mean_all().add_scalar(1e-7);
    // Degenerate extents (single row or column) contribute nothing along
    // that axis.
    let term_x = if w >= 2 {
        let dx =
            (&t::slice(&norm, &[(0, h), (1, w)]) - &t::slice(&norm, &[(0, h), (0, w - 1)])).abs();
        let ix = t::mean_axis(
            &(&t::slice(image, &[(0, h), (1, w), (0, 3)])
                - &t::slice(image, &[(0, h), (0, w - 1), (0, 3)]))
                .abs(),
            2,
        );
        (&dx * &ix.mul_scalar(-1.0).exp()).mean_all()
    } else {
        Tensor::zeros(&[1])
    };
    let term_y = if h >= 2 {
        let dy =
            (&t::slice(&norm, &[(1, h), (0, w)]) - &t::slice(&norm, &[(0, h - 1), (0, w)])).abs();
        let iy = t::mean_axis(
            &(&t::slice(image, &[(1, h), (0, w), (0, 3)])
                - &t::slice(image, &[(0, h - 1), (0, w), (0, 3)]))
                .abs(),
            2,
        );
        (&dy * &iy.mul_scalar(-1.0).exp()).mean_all()
    } else {
        Tensor::zeros(&[1])
    };
    &term_x + &term_y
}

/// Iverson-bracket auto-mask: 1 where the best warped reconstruction beats
/// the best raw (unwarped) source, 0 elsewhere. Returned as a constant
/// tensor; the spatial shape follows the inputs.
pub fn auto_mask(warped_pe: &[Tensor], raw_pe: &[Tensor]) -> Tensor {
    assert!(!warped_pe.is_empty() && !raw_pe.is_empty(), "auto_mask: empty inputs");
    let shape = warped_pe[0].shape().to_vec();
    let n = warped_pe[0].numel();
    let mut mask = vec![0.0; n];
    for i in 0..n {
        let min_w = warped_pe
            .iter()
            .map(|t| t.data()[i])
            .fold(f64::INFINITY, f64::min);
        let min_r = raw_pe
            .iter()
            .map(|t| t.data()[i])
            .fold(f64::INFINITY, f64::min);
        mask[i] = if min_w < min_r { 1.0 } else { 0.0 };
    }
    Tensor::from_vec(mask, &shape)
}

fn validity_penalty(valid: &[bool], shape: &[usize]) -> Tensor {
    let data = valid
        .iter()
        .map(|&v| if v { 0.0 } else { INVALID_PE_PENALTY })
        .collect();
    Tensor::from_vec(data, shape)
}

/// Everything the trainer logs about one loss evaluation.
pub struct LossOutputs {
    /// Scalar objective, on the tape.
    pub total: Tensor,
    /// Mean masked photometric term across scales.
    pub photo: f64,
    /// Mean raw smoothness term across scales (before the lambda weight).
    pub smooth: f64,
    /// Fraction of pixels kept by the auto-mask, averaged over scales.
    pub mask_coverage: f64,
}

/// Multi-scale masked objective.
///
/// For each scale: the raw disparity is upsampled to the input resolution,
/// converted to depth, and used to warp both source frames; the per-pixel
/// minimum photometric error over sources is masked by the auto-mask and
/// averaged; the edge-aware smoothness of the scale-resolution disparity
/// (against the resized target image) joins with weight `lambda / 2^scale`.
/// Scale losses are averaged.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    target: &Tensor,
    sources: &[Tensor; 2],
    disparities: &[Tensor],
    poses: &[PoseTransform; 2],
    cam: &CameraModel,
    cfg: &LossConfig,
    min_depth: f64,
    max_depth: f64,
) -> LossOutputs {
    let (h, w, _) = expect_hwc(target, "total_loss");
    assert_eq!((cam.height, cam.width), (h, w), "total_loss: camera mismatch");

    // Raw-source errors are pose/depth independent: compute once, detached.
    let raw_pe: Vec<Tensor> = sources
        .iter()
        .map(|s| photometric_error(target, &s.detach(), cfg).detach())
        .collect();

    let mut total: Option<Tensor> = None;
    let mut photo_sum = 0.0;
    let mut smooth_sum = 0.0;
    let mut coverage_sum = 0.0;
    for (scale, disp) in disparities.iter().enumerate() {
        let (sh, sw) = match disp.shape() {
            [a, b] => (*a, *b),
            s => panic!("total_loss: disparity {scale} has shape {s:?}"),
        };
        let up = t::upsample_bilinear(&disp.reshape(&[sh, sw, 1]), h, w).reshape(&[h, w]);
        let depth = disparity_to_depth(&up, min_depth, max_depth);

        let mut pes = Vec::with_capacity(2);
        let mut valids = Vec::with_capacity(2);
        for (src, pose) in sources.iter().zip(poses.iter()) {
            let (warped, valid) = warp_frame(src, &depth, pose, cam);
            let pe = photometric_error(target, &warped, cfg);
            pes.push(&pe + &validity_penalty(&valid, pe.shape()));
            valids.push(valid);
        }
        let min_pe = t::min2(&pes[0], &pes[1]);

        let mask = auto_mask(&[pes[0].detach(), pes[1].detach()], &raw_pe);
        // Pixels invalid in both sources are excluded outright.
        let mask_data: Vec<f64> = mask
            .data()
            .iter()
            .enumerate()
            .map(|(i, &m)| if valids[0][i] || valids[1][i] { m } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask_data, mask.shape());
        coverage_sum += mask.data().iter().sum::<f64>() / mask.numel() as f64;

        // The Iverson mask as a per-pixel minimum against the (constant) raw
        // error: identical gradients to mask * min_pe where the mask is 1,
        // but bounded below by the raw error, so the objective cannot be
        // driven down by making the warp worse until the mask collapses.
        let min_raw = t::min2(&raw_pe[0], &raw_pe[1]);
        let photo = t::min2(&min_pe, &min_raw).mean_all();
        // Reported photometric term: the masked map itself.
        photo_sum += (&min_pe * &mask).mean_all().item();

        let target_small = if (sh, sw) == (h, w) {
            target.detach()
        } else {
            t::upsample_bilinear(&target.detach(), sh, sw)
        };
        let smooth = smoothness_loss(disp, &target_small);
        smooth_sum += smooth.item();

        let weight = cfg.lambda / (1 << scale) as f64;
        let scale_loss = &photo + &smooth.mul_scalar(weight);
        total = Some(match total {
            None => scale_loss,
            Some(acc) => &acc + &scale_loss,
        });
    }
    let n = disparities.len() as f64;
    LossOutputs {
        total: total.expect("total_loss: no scales").mul_scalar(1.0 / n),
        photo: photo_sum / n,
        smooth: smooth_sum / n,
        mask_coverage: coverage_sum / n,
    }
}
