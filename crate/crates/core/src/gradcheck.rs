//! Central finite-difference verification of analytic gradients.
//!
//! The checker treats the function under test as a black box: it runs one
//! taped forward/backward pass for the analytic gradients, then perturbs
//! individual input coordinates by `±h` in pure (untaped) forward passes.
//! Relative error uses `|analytic - fd| / max(1, |fd|)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::{Tape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

impl FdReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Checks `f` (a scalar-valued function of the given leaf tensors) against
/// central finite differences on up to `max_coords` randomly chosen
/// coordinates per input. Inputs must be `Tensor::param` leaves.
pub fn check_fn(
    name: &str,
    f: impl Fn(&[Tensor]) -> Tensor,
    inputs: &[Tensor],
    h: f64,
    max_coords: usize,
    rng: &mut ChaCha12Rng,
) -> FdReport {
    for t in inputs {
        assert!(t.requires_grad(), "gradcheck: inputs must be parameters");
        t.zero_grad();
    }
    let tape = Tape::new();
    let guard = tape.activate();
    let loss = f(inputs);
    assert_eq!(loss.numel(), 1, "gradcheck: function must return a scalar");
    tape.backward(&loss);
    drop(guard);

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        let analytic = t
            .grad()
            .unwrap_or_else(|| panic!("gradcheck: no gradient for input {ti}"));
        let mut coords: Vec<usize> = (0..t.numel()).collect();
        coords.shuffle(rng);
        coords.truncate(max_coords);
        for &ci in &coords {
            let base = t.to_vec();
            let eval = |v: f64| -> f64 {
                let mut data = base.clone();
                data[ci] = v;
                let mut probe: Vec<Tensor> = inputs.to_vec();
                probe[ti] = Tensor::param(data, t.shape());
                f(&probe).item()
            };
            let fp = eval(base[ci] + h);
            let fm = eval(base[ci] - h);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (analytic[ci] - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    FdReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        coords_checked: checked,
    }
}

fn probe(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha12Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::param(data, shape)
}

/// Random projection of a tensor-valued op to a scalar so its full Jacobian
/// is exercised through a single backward pass.
fn project(y: &Tensor, weights: &Tensor) -> Tensor {
    crate::tensor::ops::mul(y, weights).sum_all()
}

/// Finite-difference checks for every registered primitive. Each check
/// probes a randomized ~100-element input away from non-differentiable
/// points of the op in question.
pub fn primitive_suite(seed: u64) -> Vec<FdReport> {
    use crate::tensor::ops as t;
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // Weight tensors used for scalar projection are constants.
    let w_for = |shape: &[usize], rng: &mut ChaCha12Rng| {
        let n: usize = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)
    };

    macro_rules! unary_check {
        ($name:expr, $f:expr, $lo:expr, $hi:expr, $rng:expr) => {{
            let x = probe(&[100], $lo, $hi, $rng);
            let w = w_for(&[100], $rng);
            let op = $f;
            reports.push(check_fn(
                $name,
                move |ins| project(&op(&ins[0]), &w),
                &[x],
                DEFAULT_STEP,
                100,
                $rng,
            ));
        }};
    }

    unary_check!("neg", t::neg, -2.0, 2.0, &mut rng);
    // abs has a kink at 0; probe away from it.
    unary_check!("abs", t::abs, 0.1, 2.0, &mut rng);
    unary_check!("exp", t::exp, -2.0, 2.0, &mut rng);
    unary_check!("sqrt", t::sqrt, 0.5, 4.0, &mut rng);
    unary_check!("sin", t::sin, -3.0, 3.0, &mut rng);
    unary_check!("cos", t::cos, -3.0, 3.0, &mut rng);
    unary_check!("sigmoid", t::sigmoid, -4.0, 4.0, &mut rng);
    unary_check!("silu", t::silu, -4.0, 4.0, &mut rng);
    unary_check!("softplus", t::softplus, -4.0, 4.0, &mut rng);
    unary_check!("relu", t::relu, 0.1, 3.0, &mut rng);
    unary_check!("add_scalar", |x: &Tensor| x.add_scalar(0.7), -2.0, 2.0, &mut rng);
    unary_check!("mul_scalar", |x: &Tensor| x.mul_scalar(-1.3), -2.0, 2.0, &mut rng);
    {
        let x = probe(&[100], -2.0, 2.0, &mut rng);
        let w = w_for(&[10, 10], &mut rng);
        reports.push(check_fn(
            "reshape",
            move |ins| project(&ins[0].reshape(&[10, 10]), &w),
            &[x],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }

    macro_rules! binary_check {
        ($name:expr, $f:expr, $sa:expr, $sb:expr, $lo:expr, $hi:expr, $rng:expr) => {{
            let a = probe($sa, $lo, $hi, $rng);
            let b = probe($sb, $lo, $hi, $rng);
            let out_shape =
                crate::tensor::ops::broadcast_shapes($sa, $sb).expect("broadcastable");
            let w = w_for(&out_shape, $rng);
            let op = $f;
            reports.push(check_fn(
                $name,
                move |ins| project(&op(&ins[0], &ins[1]), &w),
                &[a, b],
                DEFAULT_STEP,
                60,
                $rng,
            ));
        }};
    }

    binary_check!("add", t::add, &[10, 10], &[10, 10], -2.0, 2.0, &mut rng);
    binary_check!("add_broadcast", t::add, &[10, 10], &[10], -2.0, 2.0, &mut rng);
    binary_check!("sub", t::sub, &[100], &[100], -2.0, 2.0, &mut rng);
    binary_check!("mul", t::mul, &[10, 10], &[10, 10], -2.0, 2.0, &mut rng);
    binary_check!("mul_broadcast", t::mul, &[10, 10], &[1], -2.0, 2.0, &mut rng);
    binary_check!("div", t::div, &[100], &[100], 0.5, 2.0, &mut rng);
    // min2/max2 kink at ties: ranges keep |a-b| >> h with high probability.
    binary_check!("min2", t::min2, &[100], &[100], -3.0, 3.0, &mut rng);
    binary_check!("max2", t::max2, &[100], &[100], -3.0, 3.0, &mut rng);

    {
        let a = probe(&[6, 5], -1.0, 1.0, &mut rng);
        let b = probe(&[5, 4], -1.0, 1.0, &mut rng);
        let w = w_for(&[6, 4], &mut rng);
        reports.push(check_fn(
            "matmul",
            move |ins| project(&t::matmul(&ins[0], &ins[1]), &w),
            &[a, b],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }
    {
        let x = probe(&[6, 6, 3], -1.0, 1.0, &mut rng);
        let k = probe(&[3, 3, 3, 4], -1.0, 1.0, &mut rng);
        let w = w_for(&[3, 3, 4], &mut rng);
        reports.push(check_fn(
            "conv2d",
            move |ins| project(&t::conv2d(&ins[0], &ins[1], 2, 1), &w),
            &[x, k],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }
    {
        let x = probe(&[5, 5, 4], -1.0, 1.0, &mut rng);
        let k = probe(&[3, 3, 4], -1.0, 1.0, &mut rng);
        let w = w_for(&[5, 5, 4], &mut rng);
        reports.push(check_fn(
            "depthwise_conv2d",
            move |ins| project(&t::depthwise_conv2d(&ins[0], &ins[1], 1), &w),
            &[x, k],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }
    {
        let x = probe(&[8, 6], -2.0, 2.0, &mut rng);
        let g = probe(&[6], 0.5, 1.5, &mut rng);
        let b = probe(&[6], -0.5, 0.5, &mut rng);
        let w = w_for(&[8, 6], &mut rng);
        reports.push(check_fn(
            "layer_norm",
            move |ins| project(&t::layer_norm(&ins[0], &ins[1], &ins[2], 1e-6), &w),
            &[x, g, b],
            DEFAULT_STEP,
            100,
            &mut rng,
        ));
    }
    {
        let x = probe(&[100], -2.0, 2.0, &mut rng);
        reports.push(check_fn(
            "sum",
            |ins| ins[0].sum_all(),
            &[x],
            DEFAULT_STEP,
            100,
            &mut rng,
        ));
        let x = probe(&[100], -2.0, 2.0, &mut rng);
        reports.push(check_fn(
            "mean",
            |ins| ins[0].mean_all(),
            &[x],
            DEFAULT_STEP,
            100,
            &mut rng,
        ));
        let x = probe(&[5, 20], -2.0, 2.0, &mut rng);
        let w = w_for(&[5], &mut rng);
        reports.push(check_fn(
            "mean_axis",
            move |ins| project(&t::mean_axis(&ins[0], 1), &w),
            &[x],
            DEFAULT_STEP,
            100,
            &mut rng,
        ));
        let x = probe(&[5, 20], -2.0, 2.0, &mut rng);
        let w = w_for(&[20], &mut rng);
        reports.push(check_fn(
            "sum_axis",
            move |ins| project(&t::sum_axis(&ins[0], 0), &w),
            &[x],
            DEFAULT_STEP,
            100,
            &mut rng,
        ));
    }
    {
        let a = probe(&[4, 5], -2.0, 2.0, &mut rng);
        let b = probe(&[6, 5], -2.0, 2.0, &mut rng);
        let w = w_for(&[10, 5], &mut rng);
        reports.push(check_fn(
            "concat",
            move |ins| project(&t::concat(&[&ins[0], &ins[1]], 0), &w),
            &[a, b],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }
    {
        let x = probe(&[6, 7], -2.0, 2.0, &mut rng);
        let w = w_for(&[3, 4], &mut rng);
        reports.push(check_fn(
            "slice",
            move |ins| project(&t::slice(&ins[0], &[(2, 5), (1, 5)]), &w),
            &[x],
            DEFAULT_STEP,
            42,
            &mut rng,
        ));
        let x = probe(&[6, 7], -2.0, 2.0, &mut rng);
        let w = w_for(&[7, 6], &mut rng);
        reports.push(check_fn(
            "transpose",
            move |ins| project(&t::transpose2d(&ins[0]), &w),
            &[x],
            DEFAULT_STEP,
            42,
            &mut rng,
        ));
    }
    {
        let x = probe(&[4, 4, 3], -2.0, 2.0, &mut rng);
        let w = w_for(&[2, 2, 12], &mut rng);
        reports.push(check_fn(
            "space_to_depth",
            move |ins| project(&t::space_to_depth(&ins[0], 2), &w),
            &[x],
            DEFAULT_STEP,
            48,
            &mut rng,
        ));
        let x = probe(&[2, 2, 12], -2.0, 2.0, &mut rng);
        let w = w_for(&[4, 4, 3], &mut rng);
        reports.push(check_fn(
            "depth_to_space",
            move |ins| project(&t::depth_to_space(&ins[0], 2), &w),
            &[x],
            DEFAULT_STEP,
            48,
            &mut rng,
        ));
    }
    {
        let x = probe(&[4, 5, 2], -2.0, 2.0, &mut rng);
        let w = w_for(&[6, 7, 2], &mut rng);
        reports.push(check_fn(
            "pad_zero",
            move |ins| project(&t::pad2d(&ins[0], (1, 1, 1, 1), t::PadMode::Zero), &w),
            &[x],
            DEFAULT_STEP,
            40,
            &mut rng,
        ));
        let x = probe(&[4, 5, 2], -2.0, 2.0, &mut rng);
        let w = w_for(&[6, 7, 2], &mut rng);
        reports.push(check_fn(
            "pad_reflect",
            move |ins| project(&t::pad2d(&ins[0], (1, 1, 1, 1), t::PadMode::Reflect), &w),
            &[x],
            DEFAULT_STEP,
            40,
            &mut rng,
        ));
    }
    {
        let x = probe(&[4, 4, 2], -2.0, 2.0, &mut rng);
        let w = w_for(&[7, 9, 2], &mut rng);
        reports.push(check_fn(
            "upsample_bilinear",
            move |ins| project(&t::upsample_bilinear(&ins[0], 7, 9), &w),
            &[x],
            DEFAULT_STEP,
            32,
            &mut rng,
        ));
    }
    {
        // Sample coordinates away from integers: the interpolant has corners
        // exactly at integer coordinates.
        let img = probe(&[6, 6, 2], -1.0, 1.0, &mut rng);
        let n = 12;
        let coords: Vec<f64> = (0..2 * n)
            .map(|_| {
                let base = rng.gen_range(0i64..5) as f64;
                base + rng.gen_range(0.2..0.8)
            })
            .collect();
        let u = Tensor::param(coords[..n].to_vec(), &[n]);
        let v = Tensor::param(coords[n..].to_vec(), &[n]);
        let w = w_for(&[n, 2], &mut rng);
        reports.push(check_fn(
            "grid_sample",
            move |ins| project(&t::grid_sample(&ins[0], &ins[1], &ins[2]), &w),
            &[img, u, v],
            DEFAULT_STEP,
            60,
            &mut rng,
        ));
    }
    reports
}

/// Finite-difference checks for the composite mechanisms: the selective
/// scan, the MD block, SS2D, the bilinear warp, and the full training
/// objective with respect to disparities and pose.
pub fn composite_suite(seed: u64) -> Vec<FdReport> {
    use crate::block::{md_block_forward, MdBlockParams};
    use crate::geometry::{rotation_from_axis_angle, warp_frame, CameraModel, PoseTransform};
    use crate::loss::{total_loss, LossConfig};
    use crate::ss2d::{ss2d_forward, Ss2dParams};
    use crate::ssm::{selective_scan, SsmParams};
    use crate::tensor::ops as t;
    use rand::SeedableRng;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    {
        // Selective scan over [L=8, C=2, N=4] with all parameter groups.
        let (len, c, n) = (8, 2, 4);
        let mut params = SsmParams::new(c, n, &mut rng);
        let u = Tensor::param(
            (0..len * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[len, c],
        );
        let mut leaves = vec![u];
        params.for_each_param("p", &mut |_, t| leaves.push(t.clone()));
        let w = Tensor::from_vec(
            (0..len * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[len, c],
        );
        reports.push(check_fn(
            "selective_scan",
            move |ins| {
                let p = SsmParams {
                    a_log: ins[1].clone(),
                    d_skip: ins[2].clone(),
                    b_proj: ins[3].clone(),
                    c_proj: ins[4].clone(),
                    delta_down: ins[5].clone(),
                    delta_up: ins[6].clone(),
                    delta_bias: ins[7].clone(),
                };
                t::mul(&selective_scan(&ins[0], &p), &w).sum_all()
            },
            &leaves,
            DEFAULT_STEP,
            25,
            &mut rng,
        ));
    }
    {
        // SS2D over a 4x4x2 map, checking input and one path's projections.
        let seed2 = rng.gen::<u64>();
        let x = Tensor::param(
            (0..4 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[4, 4, 2],
        );
        let w = Tensor::from_vec(
            (0..4 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[4, 4, 2],
        );
        reports.push(check_fn(
            "ss2d",
            move |ins| {
                let mut r = ChaCha12Rng::seed_from_u64(seed2);
                let mut params = Ss2dParams::new(2, 4, &mut r);
                params.paths[0].b_proj = ins[1].clone();
                params.paths[2].c_proj = ins[2].clone();
                t::mul(&ss2d_forward(&ins[0], &params), &w).sum_all()
            },
            &[
                x,
                Tensor::param(
                    (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    &[2, 4],
                ),
                Tensor::param(
                    (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    &[2, 4],
                ),
            ],
            DEFAULT_STEP,
            25,
            &mut rng,
        ));
    }
    {
        // MD block at [4,4,8] through every parameter group.
        let c = 8;
        let seed2 = rng.gen::<u64>();
        let mut p = MdBlockParams::new(c, 4, &mut ChaCha12Rng::seed_from_u64(seed2));
        let x = Tensor::param(
            (0..4 * 4 * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[4, 4, c],
        );
        let mut leaves = vec![x];
        p.for_each_param("b", &mut |_, t| leaves.push(t.clone()));
        let w = Tensor::from_vec(
            (0..4 * 4 * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[4, 4, c],
        );
        reports.push(check_fn(
            "md_block",
            move |ins| {
                let mut p = MdBlockParams::new(c, 4, &mut ChaCha12Rng::seed_from_u64(seed2));
                let mut it = ins[1..].iter();
                p.for_each_param("b", &mut |_, t| *t = it.next().unwrap().clone());
                t::mul(&md_block_forward(&ins[0], &p), &w).sum_all()
            },
            &leaves,
            DEFAULT_STEP,
            4,
            &mut rng,
        ));
    }
    {
        // Bilinear warp: gradient w.r.t. depth, rotation and translation.
        let cam = CameraModel::new(20.0, 20.0, 7.5, 5.5, 16, 12);
        let src = Tensor::from_vec(
            (0..12 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
            &[12, 16, 3],
        );
        let depth0 = Tensor::param(
            (0..12 * 16).map(|_| rng.gen_range(2.0..4.0)).collect(),
            &[12, 16],
        );
        let aa = Tensor::param(vec![0.015, -0.02, 0.01], &[3]);
        let tr = Tensor::param(vec![0.04, -0.03, 0.05], &[3]);
        let w = Tensor::from_vec(
            (0..12 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            &[12, 16, 3],
        );
        reports.push(check_fn(
            "bilinear_warp",
            move |ins| {
                let pose =
                    PoseTransform::from_rt(rotation_from_axis_angle(&ins[1]), ins[2].clone());
                let (warped, _) = warp_frame(&src, &ins[0], &pose, &cam);
                t::mul(&warped, &w).sum_all()
            },
            &[depth0, aa, tr],
            1e-6,
            30,
            &mut rng,
        ));
    }
    {
        // Total loss w.r.t. the four raw disparities and the pose leaves on
        // a small synthetic scene with two sources.
        use crate::synthetic::{SceneKind, SyntheticScene};
        let scene = SyntheticScene::generate(SceneKind::Training, 32, 32, 3, seed ^ 0x9e37);
        let cam = scene.cam;
        let target = scene.image_tensor(1);
        let sources = [scene.image_tensor(0), scene.image_tensor(2)];
        let mut disparities = Vec::new();
        for k in 0..4 {
            let (h, w) = (8 >> k, 8 >> k);
            let (h, w) = (h.max(1), w.max(1));
            disparities.push(Tensor::param(
                (0..h * w).map(|_| rng.gen_range(0.25..0.75)).collect(),
                &[h, w],
            ));
        }
        let aa0 = Tensor::param(vec![0.003, -0.004, 0.002], &[3]);
        let tr0 = Tensor::param(vec![-0.02, 0.004, -0.03], &[3]);
        let aa1 = Tensor::param(vec![-0.002, 0.003, 0.001], &[3]);
        let tr1 = Tensor::param(vec![0.02, -0.004, 0.03], &[3]);
        let mut leaves = disparities.clone();
        leaves.extend([aa0, tr0, aa1, tr1]);
        reports.push(check_fn(
            "total_loss",
            move |ins| {
                let poses = [
                    PoseTransform::from_rt(rotation_from_axis_angle(&ins[4]), ins[5].clone()),
                    PoseTransform::from_rt(rotation_from_axis_angle(&ins[6]), ins[7].clone()),
                ];
                total_loss(
                    &target,
                    &sources,
                    &ins[..4],
                    &poses,
                    &cam,
                    &LossConfig::default(),
                    0.1,
                    100.0,
                )
                .total
            },
            &leaves,
            1e-6,
            12,
            &mut rng,
        ));
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_primitives_match_finite_differences() {
        for report in primitive_suite(0x5eed) {
            assert!(
                report.passed(1e-6),
                "{}: max rel err {:.3e} over {} coords",
                report.name,
                report.max_rel_err,
                report.coords_checked
            );
        }
    }

    #[test]
    fn composites_match_finite_differences() {
        for report in composite_suite(0xc0ffee) {
            assert!(
                report.passed(1e-5),
                "{}: max rel err {:.3e} over {} coords",
                report.name,
                report.max_rel_err,
                report.coords_checked
            );
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        use crate::tensor::ops;
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = probe(&[20], 0.5, 2.0, &mut rng);

        let grad_of = |scale_f: f64, scale_g: f64| -> Vec<f64> {
            x.zero_grad();
            let tape = Tape::new();
            let _g = tape.activate();
            let f = ops::mul(&x, &x).sum_all();
            let g = x.exp().mean_all();
            let loss = &f.mul_scalar(scale_f) + &g.mul_scalar(scale_g);
            tape.backward(&loss);
            x.grad().unwrap()
        };

        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let combined = grad_of(2.5, -1.5);
        for i in 0..20 {
            let expect = 2.5 * gf[i] - 1.5 * gg[i];
            assert!((combined[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_bitwise_across_runs() {
        use crate::tensor::ops;
        use rand::SeedableRng;
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let x = probe(&[32], -1.0, 1.0, &mut rng);
            let k = probe(&[3, 3, 2, 2], -1.0, 1.0, &mut rng);
            let tape = Tape::new();
            let _g = tape.activate();
            let img = x.reshape(&[4, 4, 2]);
            let y = ops::conv2d(&img, &k, 1, 1);
            let loss = y.silu().mean_all();
            tape.backward(&loss);
            (y.to_vec(), x.grad().unwrap())
        };
        let (y1, g1) = run();
        let (y2, g2) = run();
        assert!(y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn untouched_leaf_gets_zero_grad() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        let y = Tensor::param(vec![3.0], &[1]);
        let tape = Tape::new();
        let _g = tape.activate();
        let a = x.sum_all();
        let _unused = y.mul_scalar(2.0); // on tape, but not part of the loss
        tape.backward(&a);
        assert_eq!(y.grad().unwrap(), vec![0.0]);
    }
}
