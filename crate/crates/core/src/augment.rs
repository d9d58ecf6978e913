//! Training-time augmentation: coin-flipped horizontal mirroring and color
//! jitter, drawn once per triplet and applied identically to all three
//! frames. The jittered frames feed the networks; the loss keeps un-jittered
//! frames so photometric consistency between frames survives. Flipping is
//! geometric, so it applies to both variants and mirrors the principal point.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::geometry::CameraModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub color: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl AugmentDraw {
    /// One draw per triplet: independent coins for flip and color jitter,
    /// then jitter magnitudes (drawn unconditionally to keep the RNG stream
    /// length fixed).
    pub fn sample(rng: &mut ChaCha12Rng) -> AugmentDraw {
        AugmentDraw {
            flip: rng.gen_bool(0.5),
            color: rng.gen_bool(0.5),
            brightness: rng.gen_range(0.8..1.2),
            contrast: rng.gen_range(0.8..1.2),
            saturation: rng.gen_range(0.8..1.2),
            hue: rng.gen_range(-0.05..0.05),
        }
    }

    pub fn identity() -> AugmentDraw {
        AugmentDraw {
            flip: false,
            color: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && !self.color
    }
}

/// Mirrors an `[H,W,3]` frame about its vertical axis.
pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let (h, w, c) = match img.shape() {
        [h, w, c] => (*h, *w, *c),
        s => panic!("flip_horizontal: expected [H,W,C], got {s:?}"),
    };
    let d = img.data();
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + x) * c;
            let dst = (y * w + (w - 1 - x)) * c;
            out[dst..dst + c].copy_from_slice(&d[src..src + c]);
        }
    }
    Tensor::from_vec(out, img.shape())
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, contrast, saturation, and a hue rotation about the gray axis,
/// in that order, clamped back to [0,1].
pub fn color_jitter(img: &Tensor, d: &AugmentDraw) -> Tensor {
    let data = img.data();
    let n = data.len() / 3;
    let mean_gray: f64 = (0..n)
        .map(|i| luma(data[i * 3], data[i * 3 + 1], data[i * 3 + 2]))
        .sum::<f64>()
        / n as f64;

    let theta = d.hue * std::f64::consts::TAU;
    let (s, c) = theta.sin_cos();
    let one_third = 1.0 / 3.0;
    let sq3 = (1.0f64 / 3.0).sqrt();
    // Rotation about the (1,1,1) axis expressed directly on RGB.
    let m = |i: usize, j: usize| -> f64 {
        if i == j {
            c + (1.0 - c) * one_third
        } else {
            let sign = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
            (1.0 - c) * one_third - sign * sq3 * s
        }
    };

    let mut out = Vec::with_capacity(data.len());
    for i in 0..n {
        let mut rgb = [data[i * 3], data[i * 3 + 1], data[i * 3 + 2]];
        rgb = rgb.map(|v| v * d.brightness);
        rgb = rgb.map(|v| v * d.contrast + (1.0 - d.contrast) * mean_gray * d.brightness);
        let gray = luma(rgb[0], rgb[1], rgb[2]);
        rgb = rgb.map(|v| gray + (v - gray) * d.saturation);
        let rotated = [
            m(0, 0) * rgb[0] + m(0, 1) * rgb[1] + m(0, 2) * rgb[2],
            m(1, 0) * rgb[0] + m(1, 1) * rgb[1] + m(1, 2) * rgb[2],
            m(2, 0) * rgb[0] + m(2, 1) * rgb[1] + m(2, 2) * rgb[2],
        ];
        out.extend(rotated.map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::from_vec(out, img.shape())
}

pub struct AugmentedTriplet {
    /// Jittered (and possibly flipped) frames for the networks.
    pub net_frames: [Tensor; 3],
    /// Un-jittered (but equally flipped) frames for the photometric loss.
    pub loss_frames: [Tensor; 3],
    /// Intrinsics matching the (possibly flipped) frames.
    pub cam: CameraModel,
    pub flipped: bool,
}

/// Applies one draw to a `(t-1, t, t+1)` triplet.
pub fn augment(frames: &[Tensor; 3], cam: &CameraModel, d: &AugmentDraw) -> AugmentedTriplet {
    let (geo_frames, cam): ([Tensor; 3], CameraModel) = if d.flip {
        (
            std::array::from_fn(|i| flip_horizontal(&frames[i])),
            cam.flipped_horizontal(),
        )
    } else {
        (frames.clone(), *cam)
    };
    let net_frames = if d.color {
        std::array::from_fn(|i| color_jitter(&geo_frames[i], d))
    } else {
        geo_frames.clone()
    };
    AugmentedTriplet {
        net_frames,
        loss_frames: geo_frames,
        cam,
        flipped: d.flip,
    }
}
