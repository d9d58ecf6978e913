//! Parameter initialization helpers.

use rand::Rng;

use super::Tensor;

/// Xavier/Glorot uniform draw over `[-sqrt(6/(fan_in+fan_out)), +...]`.
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::param(data, shape)
}

/// Xavier uniform for a `[in, out]` linear weight.
pub fn xavier_linear(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng)
}

/// Xavier uniform for a `[kh, kw, ci, co]` convolution weight.
pub fn xavier_conv(kh: usize, kw: usize, ci: usize, co: usize, rng: &mut impl Rng) -> Tensor {
    xavier_uniform(&[kh, kw, ci, co], kh * kw * ci, kh * kw * co, rng)
}

/// He/Kaiming uniform for ReLU conv stacks: `limit = sqrt(6/fan_in)`.
pub fn he_conv(kh: usize, kw: usize, ci: usize, co: usize, rng: &mut impl Rng) -> Tensor {
    let fan_in = kh * kw * ci;
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = kh * kw * ci * co;
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::param(data, &[kh, kw, ci, co])
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(data, shape)
}

/// Standard normal draws via Box-Muller (used for randomized test probes).
pub fn randn_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out.push(r * th.cos());
        if out.len() < n {
            out.push(r * th.sin());
        }
    }
    out
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(randn_vec(n, rng), shape)
}
