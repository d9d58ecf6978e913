//! Depth and pose networks.
//!
//! The depth network is a U-shaped stack of MD blocks: a 4x4 patch embedding,
//! four encoder stages with feature fusion (2x spatial compaction, channel
//! doubling) after the first three, a mirrored decoder with feature
//! decomposition (2x spatial expansion, channel halving) and parameter-free
//! additive skips, and a sigmoid disparity head per decoder stage. The pose
//! network is a small strided conv encoder that regresses an axis-angle
//! rotation and translation between two frames.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::block::{md_block_forward, MdBlockParams, LAYER_NORM_EPS};
use crate::geometry::{rotation_from_axis_angle, PoseTransform};
use crate::tensor::ops as t;
use crate::tensor::{init, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// First-stage channel width C; stages run [C, 2C, 4C, 8C].
    pub base_channels: usize,
    /// Hidden state dimension N of every S6 scan.
    pub state_dim: usize,
    pub patch_size: usize,
    pub blocks_per_stage: [usize; 4],
    pub num_scales: usize,
    /// Depth range of the bounded inverse disparity mapping, in meters.
    pub min_depth: f64,
    pub max_depth: f64,
}

impl NetConfig {
    /// Full-scale configuration.
    pub fn full() -> NetConfig {
        NetConfig {
            base_channels: 96,
            state_dim: 16,
            patch_size: 4,
            blocks_per_stage: [2, 2, 2, 2],
            num_scales: 4,
            min_depth: 0.1,
            max_depth: 100.0,
        }
    }

    /// Small configuration for fast desk-scale training and tests. The
    /// depth floor sits lower than the full config's: over a few hundred
    /// optimizer steps the joint depth/pose scale settles only a little
    /// below the disparity-head initialization, and a 0.1 m floor would
    /// clip that equilibrium against the top of the sigmoid.
    pub fn desk() -> NetConfig {
        NetConfig {
            base_channels: 8,
            state_dim: 4,
            min_depth: 0.017,
            max_depth: 0.0545,
            ..NetConfig::full()
        }
    }

    /// Input extents must divide by patch_size * 2^3 (three fusions).
    pub fn required_divisor(&self) -> usize {
        self.patch_size * 8
    }

    pub fn stage_channels(&self) -> [usize; 4] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::full()
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input {height}x{width} not divisible by {divisor} (patch embedding plus three fusion stages)")]
    IndivisibleInput {
        height: usize,
        width: usize,
        divisor: usize,
    },
}

pub fn check_input_dims(height: usize, width: usize, cfg: &NetConfig) -> Result<(), NetError> {
    let d = cfg.required_divisor();
    if height % d != 0 || width % d != 0 || height == 0 || width == 0 {
        return Err(NetError::IndivisibleInput {
            height,
            width,
            divisor: d,
        });
    }
    Ok(())
}

/// Bounded inverse mapping from a sigmoid disparity in (0,1) to metric depth:
/// `depth = 1 / (1/max + (1/min - 1/max) * disp)`, monotonically decreasing.
pub fn disparity_to_depth(disp: &Tensor, min_depth: f64, max_depth: f64) -> Tensor {
    let min_inv = 1.0 / max_depth;
    let max_inv = 1.0 / min_depth;
    let scaled = disp.mul_scalar(max_inv - min_inv).add_scalar(min_inv);
    t::div(&Tensor::scalar(1.0), &scaled)
}

struct PatchEmbed {
    w: Tensor,
    b: Tensor,
    gamma: Tensor,
    beta: Tensor,
}

impl PatchEmbed {
    fn new(patch: usize, channels: usize, rng: &mut ChaCha12Rng) -> PatchEmbed {
        let in_dim = patch * patch * 3;
        PatchEmbed {
            w: init::xavier_linear(in_dim, channels, rng),
            b: Tensor::param(vec![0.0; channels], &[channels]),
            gamma: Tensor::param(vec![1.0; channels], &[channels]),
            beta: Tensor::param(vec![0.0; channels], &[channels]),
        }
    }

    fn forward(&self, image: &Tensor, patch: usize) -> Tensor {
        let folded = t::space_to_depth(image, patch);
        let (h, w, d) = (folded.shape()[0], folded.shape()[1], folded.shape()[2]);
        let c = self.w.shape()[1];
        let tokens = t::add(&t::matmul(&folded.reshape(&[h * w, d]), &self.w), &self.b);
        t::layer_norm(&tokens, &self.gamma, &self.beta, LAYER_NORM_EPS).reshape(&[h, w, c])
    }
}

/// Downsampling transition: 2x2 neighborhood concat, linear 4C -> 2C, norm.
struct FeatureFusion {
    w: Tensor,
    b: Tensor,
    gamma: Tensor,
    beta: Tensor,
}

impl FeatureFusion {
    fn new(c_in: usize, rng: &mut ChaCha12Rng) -> FeatureFusion {
        let c_out = 2 * c_in;
        FeatureFusion {
            w: init::xavier_linear(4 * c_in, c_out, rng),
            b: Tensor::param(vec![0.0; c_out], &[c_out]),
            gamma: Tensor::param(vec![1.0; c_out], &[c_out]),
            beta: Tensor::param(vec![0.0; c_out], &[c_out]),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (h, w) = (x.shape()[0], x.shape()[1]);
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "feature_fusion: odd extents {h}x{w}"
        );
        let folded = t::space_to_depth(x, 2);
        let (fh, fw, fd) = (folded.shape()[0], folded.shape()[1], folded.shape()[2]);
        let c_out = self.w.shape()[1];
        let tokens = t::add(&t::matmul(&folded.reshape(&[fh * fw, fd]), &self.w), &self.b);
        t::layer_norm(&tokens, &self.gamma, &self.beta, LAYER_NORM_EPS).reshape(&[fh, fw, c_out])
    }
}

/// Upsampling transition: linear C -> 2C, then each position's vector becomes
/// a 2x2 spatial block of C/2 channels.
struct FeatureDecomposition {
    w: Tensor,
    b: Tensor,
}

impl FeatureDecomposition {
    fn new(c_in: usize, rng: &mut ChaCha12Rng) -> FeatureDecomposition {
        assert!(c_in % 2 == 0, "feature_decomposition: odd channel count {c_in}");
        FeatureDecomposition {
            w: init::xavier_linear(c_in, 2 * c_in, rng),
            b: Tensor::param(vec![0.0; 2 * c_in], &[2 * c_in]),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let tokens = t::add(&t::matmul(&x.reshape(&[h * w, c]), &self.w), &self.b);
        t::depth_to_space(&tokens.reshape(&[h, w, 2 * c]), 2)
    }
}

/// 3x3 conv to one channel followed by a sigmoid.
struct DisparityHead {
    w: Tensor,
    b: Tensor,
}

impl DisparityHead {
    /// Head weights are scaled well below Xavier: the decoder's residual
    /// stream has accumulated multi-block magnitude, and a full-scale head
    /// would start half the disparities deep in the sigmoid tails.
    fn new(c_in: usize, rng: &mut ChaCha12Rng) -> DisparityHead {
        let w = init::xavier_conv(3, 3, c_in, 1, rng);
        DisparityHead {
            w: Tensor::param(w.data().iter().map(|v| v * 0.05).collect(), w.shape()),
            b: Tensor::param(vec![0.0; 1], &[1]),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let conv = t::add(&t::conv2d(x, &self.w, 1, 1), &self.b);
        t::sigmoid(&conv).reshape(&[h, w])
    }
}

/// Multi-scale depth predictions.
///
/// `disparities[k]` sits at `1/(4 * 2^k)` of the input resolution (index 0 is
/// the finest), sigmoid-activated and strictly inside (0,1). `depths` applies
/// the bounded inverse mapping per scale; `upsampled_disparities` resizes all
/// scales to the input resolution.
pub struct DepthOutputs {
    pub disparities: Vec<Tensor>,
    pub depths: Vec<Tensor>,
    pub upsampled_disparities: Vec<Tensor>,
}

impl DepthOutputs {
    pub fn from_disparities(
        disparities: Vec<Tensor>,
        cfg: &NetConfig,
        input_h: usize,
        input_w: usize,
    ) -> DepthOutputs {
        let depths = disparities
            .iter()
            .map(|d| disparity_to_depth(d, cfg.min_depth, cfg.max_depth))
            .collect();
        let upsampled = disparities
            .iter()
            .map(|d| {
                let (h, w) = (d.shape()[0], d.shape()[1]);
                t::upsample_bilinear(&d.reshape(&[h, w, 1]), input_h, input_w)
                    .reshape(&[input_h, input_w])
            })
            .collect();
        DepthOutputs {
            disparities,
            depths,
            upsampled_disparities: upsampled,
        }
    }
}

pub struct DepthNet {
    pub config: NetConfig,
    patch: PatchEmbed,
    encoder: Vec<Vec<MdBlockParams>>,
    fusions: Vec<FeatureFusion>,
    decoder: Vec<Vec<MdBlockParams>>,
    decomps: Vec<FeatureDecomposition>,
    heads: Vec<DisparityHead>,
}

impl DepthNet {
    pub fn new(config: NetConfig, seed: u64) -> DepthNet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let dims = config.stage_channels();
        let patch = PatchEmbed::new(config.patch_size, dims[0], &mut rng);
        let encoder = (0..4)
            .map(|s| {
                (0..config.blocks_per_stage[s])
                    .map(|_| MdBlockParams::new(dims[s], config.state_dim, &mut rng))
                    .collect()
            })
            .collect();
        let fusions = (0..3).map(|s| FeatureFusion::new(dims[s], &mut rng)).collect();
        // Decoder stages run [8C, 4C, 2C, C].
        let decoder = (0..4)
            .map(|s| {
                (0..config.blocks_per_stage[s])
                    .map(|_| MdBlockParams::new(dims[3 - s], config.state_dim, &mut rng))
                    .collect()
            })
            .collect();
        let decomps = (0..3)
            .map(|s| FeatureDecomposition::new(dims[3 - s], &mut rng))
            .collect();
        let heads = (0..4)
            .map(|s| DisparityHead::new(dims[3 - s], &mut rng))
            .collect();
        DepthNet {
            config,
            patch,
            encoder,
            fusions,
            decoder,
            decomps,
            heads,
        }
    }

    /// Full forward pass: `image: [H,W,3]` with extents divisible by 32.
    pub fn forward(&self, image: &Tensor) -> DepthOutputs {
        let (h, w, _) = match image.shape() {
            [h, w, 3] => (*h, *w, 3),
            s => panic!("depthnet: expected [H,W,3] image, got {s:?}"),
        };
        if let Err(e) = check_input_dims(h, w, &self.config) {
            panic!("depthnet: {e}");
        }

        let mut x = self.patch.forward(image, self.config.patch_size);
        let mut skips = Vec::with_capacity(4);
        for (s, stage) in self.encoder.iter().enumerate() {
            for block in stage {
                x = md_block_forward(&x, block);
            }
            skips.push(x.clone());
            if s < 3 {
                x = self.fusions[s].forward(&x);
            }
        }

        // Bottleneck is the final encoder output, passed through directly.
        let mut disparities_coarse_first = Vec::with_capacity(4);
        for (s, stage) in self.decoder.iter().enumerate() {
            if s > 0 {
                let expanded = self.decomps[s - 1].forward(&x);
                x = t::add(&expanded, &skips[3 - s]);
            }
            for block in stage {
                x = md_block_forward(&x, block);
            }
            disparities_coarse_first.push(self.heads[s].forward(&x));
        }
        disparities_coarse_first.reverse();
        DepthOutputs::from_disparities(disparities_coarse_first, &self.config, h, w)
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("depth.patch.w", &mut self.patch.w);
        f("depth.patch.b", &mut self.patch.b);
        f("depth.patch.norm.gamma", &mut self.patch.gamma);
        f("depth.patch.norm.beta", &mut self.patch.beta);
        for (s, stage) in self.encoder.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.for_each_param(&format!("depth.enc{s}.block{b}"), f);
            }
        }
        for (s, fusion) in self.fusions.iter_mut().enumerate() {
            f(&format!("depth.fusion{s}.w"), &mut fusion.w);
            f(&format!("depth.fusion{s}.b"), &mut fusion.b);
            f(&format!("depth.fusion{s}.norm.gamma"), &mut fusion.gamma);
            f(&format!("depth.fusion{s}.norm.beta"), &mut fusion.beta);
        }
        for (s, stage) in self.decoder.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.for_each_param(&format!("depth.dec{s}.block{b}"), f);
            }
        }
        for (s, dec) in self.decomps.iter_mut().enumerate() {
            f(&format!("depth.decomp{s}.w"), &mut dec.w);
            f(&format!("depth.decomp{s}.b"), &mut dec.b);
        }
        for (s, head) in self.heads.iter_mut().enumerate() {
            f(&format!("depth.head{s}.w"), &mut head.w);
            f(&format!("depth.head{s}.b"), &mut head.b);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.numel());
        n
    }

    /// Zeroes decoder stage `s`: its MD blocks and, for stages past the
    /// bottleneck, the incoming decomposition. With a zero update the stage
    /// output equals its additive skip input exactly.
    pub fn zero_decoder_stage(&mut self, s: usize) {
        for block in self.decoder[s].iter_mut() {
            block.zero_all();
        }
        if s > 0 {
            let d = &mut self.decomps[s - 1];
            d.w = Tensor::param(vec![0.0; d.w.numel()], d.w.shape());
            d.b = Tensor::param(vec![0.0; d.b.numel()], d.b.shape());
        }
    }

    /// Decoder stage output (before its head), exposed for wiring tests.
    pub fn decoder_stage_output(&self, image: &Tensor, stage: usize) -> Tensor {
        let mut x = self.patch.forward(image, self.config.patch_size);
        let mut skips = Vec::with_capacity(4);
        for (s, st) in self.encoder.iter().enumerate() {
            for block in st {
                x = md_block_forward(&x, block);
            }
            skips.push(x.clone());
            if s < 3 {
                x = self.fusions[s].forward(&x);
            }
        }
        for (s, st) in self.decoder.iter().enumerate() {
            if s > 0 {
                x = t::add(&self.decomps[s - 1].forward(&x), &skips[3 - s]);
            }
            for block in st {
                x = md_block_forward(&x, block);
            }
            if s == stage {
                return x;
            }
        }
        unreachable!("decoder stage {stage} out of range");
    }

    /// Encoder stage output, exposed for wiring tests.
    pub fn encoder_stage_output(&self, image: &Tensor, stage: usize) -> Tensor {
        let mut x = self.patch.forward(image, self.config.patch_size);
        for (s, st) in self.encoder.iter().enumerate() {
            for block in st {
                x = md_block_forward(&x, block);
            }
            if s == stage {
                return x;
            }
            if s < 3 {
                x = self.fusions[s].forward(&x);
            }
        }
        unreachable!("encoder stage {stage} out of range");
    }
}

const POSE_CHANNELS: [usize; 6] = [16, 32, 64, 128, 256, 256];
const POSE_OUTPUT_SCALE: f64 = 0.01;

/// Pose regression network over a channel-concatenated frame pair `[H,W,6]`.
pub struct PoseNet {
    convs: Vec<(Tensor, Tensor)>,
    head_w: Tensor,
    head_b: Tensor,
}

impl PoseNet {
    pub fn new(seed: u64) -> PoseNet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(POSE_CHANNELS.len());
        let mut c_in = 6;
        for &c_out in POSE_CHANNELS.iter() {
            // He init keeps activation magnitude through the ReLU stack.
            let w = init::he_conv(3, 3, c_in, c_out, &mut rng);
            let b = Tensor::param(vec![0.0; c_out], &[c_out]);
            convs.push((w, b));
            c_in = c_out;
        }
        // Zero-initialized head: the first prediction is exactly the
        // identity pose, so early training never warps along a random
        // direction (the conv stack still breaks symmetry through the head
        // gradient after the first step).
        PoseNet {
            convs,
            head_w: Tensor::param(vec![0.0; c_in * 6], &[1, 1, c_in, 6]),
            head_b: Tensor::param(vec![0.0; 6], &[6]),
        }
    }

    /// Relative pose of the chronologically ordered pair: the returned
    /// transform maps `earlier`-frame camera coordinates to `later`-frame
    /// camera coordinates.
    pub fn forward(&self, earlier: &Tensor, later: &Tensor) -> PoseTransform {
        assert_eq!(earlier.shape(), later.shape(), "posenet: frame shape mismatch");
        let mut x = t::concat(&[earlier, later], 2);
        for (w, b) in &self.convs {
            x = t::relu(&t::add(&t::conv2d(&x, w, 2, 1), b));
        }
        let x = t::add(&t::conv2d(&x, &self.head_w, 1, 0), &self.head_b);
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let pooled = t::mean_axis(&x.reshape(&[h * w, 6]), 0);
        let six = pooled.mul_scalar(POSE_OUTPUT_SCALE);
        let axis_angle = t::slice(&six, &[(0, 3)]);
        let translation = t::slice(&six, &[(3, 6)]);
        PoseTransform::from_rt(rotation_from_axis_angle(&axis_angle), translation)
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, (w, b)) in self.convs.iter_mut().enumerate() {
            f(&format!("pose.conv{i}.w"), w);
            f(&format!("pose.conv{i}.b"), b);
        }
        f("pose.head.w", &mut self.head_w);
        f("pose.head.b", &mut self.head_b);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.numel());
        n
    }
}
