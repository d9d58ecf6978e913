//! S6 selective state-space scan.
//!
//! The continuous system `x' = A x + B u`, `y = C x + D u` is discretized per
//! step with an input-dependent step size: `Abar = exp(delta * A)` (zero-order
//! hold on the state matrix) and `Bbar = delta * B` (Euler-style input
//! scaling). `A` is diagonal and strictly negative, stored as `log(-A)`, so
//! `0 < Abar < 1` for every `delta > 0`. The selection parameters `B`, `C`
//! and `delta` are linear functions of the current input.
//!
//! Three executors cover the recurrence:
//! * [`scan_sequential`] — plain reference loop exposing hidden states;
//! * [`scan_parallel`] — blockwise associative prefix scan, forward only;
//! * [`selective_scan`] — fused differentiable op with a hand-derived VJP,
//!   used by the network blocks.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::ops as t;
use crate::tensor::{init, Tensor};

/// Per-channel state matrices and input-dependent selection projections.
///
/// Shapes for `channels = C`, `state_dim = N`, `dt_rank = R`:
/// `a_log: [C,N]`, `d_skip: [C]`, `b_proj/c_proj: [C,N]`,
/// `delta_down: [C,R]`, `delta_up: [R,C]`, `delta_bias: [C]`.
/// The delta projection is factorized through rank `R = ceil(C/16)`.
pub struct SsmParams {
    pub a_log: Tensor,
    pub d_skip: Tensor,
    pub b_proj: Tensor,
    pub c_proj: Tensor,
    pub delta_down: Tensor,
    pub delta_up: Tensor,
    pub delta_bias: Tensor,
}

pub fn dt_rank_for(channels: usize) -> usize {
    channels.div_ceil(16).max(1)
}

fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

impl SsmParams {
    /// Fresh parameters: `-A` spans `[1, N]` per channel, `D = 1`, selection
    /// projections Xavier-uniform, and the delta bias drawn so the softplus
    /// step size starts log-uniform in `[1e-3, 1e-1]`.
    pub fn new(channels: usize, state_dim: usize, rng: &mut ChaCha12Rng) -> SsmParams {
        let r = dt_rank_for(channels);
        let mut a_log = Vec::with_capacity(channels * state_dim);
        for _ in 0..channels {
            for n in 0..state_dim {
                a_log.push(((n + 1) as f64).ln());
            }
        }
        let delta_bias: Vec<f64> = (0..channels)
            .map(|_| {
                let lo = (1e-3f64).ln();
                let hi = (1e-1f64).ln();
                inv_softplus(rng.gen_range(lo..hi).exp())
            })
            .collect();
        SsmParams {
            a_log: Tensor::param(a_log, &[channels, state_dim]),
            d_skip: Tensor::param(vec![1.0; channels], &[channels]),
            b_proj: init::xavier_linear(channels, state_dim, rng),
            c_proj: init::xavier_linear(channels, state_dim, rng),
            delta_down: init::xavier_linear(channels, r, rng),
            delta_up: init::xavier_linear(r, channels, rng),
            delta_bias: Tensor::param(delta_bias, &[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.a_log"), &mut self.a_log);
        f(&format!("{prefix}.d_skip"), &mut self.d_skip);
        f(&format!("{prefix}.b_proj"), &mut self.b_proj);
        f(&format!("{prefix}.c_proj"), &mut self.c_proj);
        f(&format!("{prefix}.delta_down"), &mut self.delta_down);
        f(&format!("{prefix}.delta_up"), &mut self.delta_up);
        f(&format!("{prefix}.delta_bias"), &mut self.delta_bias);
    }
}

/// Input-dependent selection values for a sequence, computed with plain
/// scalar math (the reference path, independent of the tape ops).
pub struct Selection {
    /// `[L,C]` softplus step sizes, strictly positive.
    pub delta: Vec<f64>,
    /// `[L,N]` input projections B.
    pub b_sel: Vec<f64>,
    /// `[L,N]` output projections C.
    pub c_sel: Vec<f64>,
}

/// Reference projection of the raw input into (delta, B, C).
pub fn select(params: &SsmParams, u: &[f64], len: usize) -> Selection {
    let c = params.channels();
    let n = params.state_dim();
    let r = params.delta_down.shape()[1];
    assert_eq!(u.len(), len * c, "select: input length mismatch");
    let bd = params.b_proj.data();
    let cd = params.c_proj.data();
    let dd = params.delta_down.data();
    let du = params.delta_up.data();
    let bias = params.delta_bias.data();

    let mut delta = vec![0.0; len * c];
    let mut b_sel = vec![0.0; len * n];
    let mut c_sel = vec![0.0; len * n];
    let mut low = vec![0.0; r];
    for l in 0..len {
        let row = &u[l * c..(l + 1) * c];
        for j in 0..n {
            let mut accb = 0.0;
            let mut accc = 0.0;
            for i in 0..c {
                accb += row[i] * bd[i * n + j];
                accc += row[i] * cd[i * n + j];
            }
            b_sel[l * n + j] = accb;
            c_sel[l * n + j] = accc;
        }
        low.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..c {
            for k in 0..r {
                low[k] += row[i] * dd[i * r + k];
            }
        }
        for j in 0..c {
            let mut acc = bias[j];
            for k in 0..r {
                acc += low[k] * du[k * c + j];
            }
            delta[l * c + j] = crate::tensor::ops::softplus_value(acc);
        }
    }
    Selection { delta, b_sel, c_sel }
}

/// Discretized per-step state update coefficients.
pub struct Discretized {
    /// `[L,C,N]`: `exp(delta[l,c] * A[c,n])`, in `(0,1)`.
    pub a_bar: Vec<f64>,
    /// `[L,C,N]`: `delta[l,c] * B[l,n]`.
    pub b_bar: Vec<f64>,
    pub len: usize,
    pub channels: usize,
    pub state_dim: usize,
}

/// Zero-order-hold discretization of the state matrix with Euler scaling of
/// the input map. Rejects non-finite step sizes or state matrices.
pub fn discretize(params: &SsmParams, u: &[f64], len: usize) -> (Discretized, Selection) {
    let c = params.channels();
    let n = params.state_dim();
    let sel = select(params, u, len);
    let ad = params.a_log.data();
    assert!(
        ad.iter().all(|v| v.is_finite()),
        "discretize: non-finite state matrix"
    );
    assert!(
        sel.delta.iter().all(|v| v.is_finite()),
        "discretize: non-finite step size"
    );
    let mut a_bar = vec![0.0; len * c * n];
    let mut b_bar = vec![0.0; len * c * n];
    for l in 0..len {
        for ch in 0..c {
            let dt = sel.delta[l * c + ch];
            for j in 0..n {
                let a = -ad[ch * n + j].exp();
                a_bar[(l * c + ch) * n + j] = (dt * a).exp();
                b_bar[(l * c + ch) * n + j] = dt * sel.b_sel[l * n + j];
            }
        }
    }
    (
        Discretized {
            a_bar,
            b_bar,
            len,
            channels: c,
            state_dim: n,
        },
        sel,
    )
}

/// A scanned sequence with its hidden-state trajectory (reference executor).
pub struct ScanSequence {
    /// `[L,C]` input.
    pub u: Vec<f64>,
    /// `[L,C]` output.
    pub y: Vec<f64>,
    /// `[L,C,N]` hidden states after each step.
    pub states: Vec<f64>,
    pub len: usize,
    pub channels: usize,
}

/// Raw recurrence on explicit coefficients:
/// `x_k = a_bar_k * x_{k-1} + b_in_k`, `y_k[c] = sum_n c_sel[k,n] x_k[c,n] + d[c] u_k[c]`
/// with `x_0 = 0`. This is the ground-truth loop other executors are checked
/// against.
pub fn scan_rec(
    a_bar: &[f64],
    b_in: &[f64],
    c_sel: &[f64],
    d: &[f64],
    u: &[f64],
    len: usize,
    channels: usize,
    state_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (c, n) = (channels, state_dim);
    let mut x = vec![0.0; c * n];
    let mut states = vec![0.0; len * c * n];
    let mut y = vec![0.0; len * c];
    for l in 0..len {
        for ch in 0..c {
            let mut acc = 0.0;
            for j in 0..n {
                let idx = ch * n + j;
                let gidx = (l * c + ch) * n + j;
                x[idx] = a_bar[gidx] * x[idx] + b_in[gidx];
                acc += c_sel[l * n + j] * x[idx];
            }
            y[l * c + ch] = acc + d[ch] * u[l * c + ch];
        }
        states[l * c * n..(l + 1) * c * n].copy_from_slice(&x);
    }
    (y, states)
}

/// Reference sequential executor for parameterized inputs `u: [L,C]`.
pub fn scan_sequential(params: &SsmParams, u: &[f64], len: usize) -> ScanSequence {
    let c = params.channels();
    let n = params.state_dim();
    let (disc, sel) = discretize(params, u, len);
    // b_in = Bbar * u
    let mut b_in = disc.b_bar.clone();
    for l in 0..len {
        for ch in 0..c {
            let uv = u[l * c + ch];
            for j in 0..n {
                b_in[(l * c + ch) * n + j] *= uv;
            }
        }
    }
    let (y, states) = scan_rec(
        &disc.a_bar,
        &b_in,
        &sel.c_sel,
        params.d_skip.data(),
        u,
        len,
        c,
        n,
    );
    ScanSequence {
        u: u.to_vec(),
        y,
        states,
        len,
        channels: c,
    }
}

/// One element of the associative scan: the state update `s' = a*s + b`
/// restricted to a single (channel, state) lane.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ScanElem {
    pub a: f64,
    pub b: f64,
}

/// Composition of two updates applied first-then-second:
/// `(a1,b1) then (a2,b2)  ->  (a1*a2, a2*b1 + b2)`.
pub fn combine(first: ScanElem, second: ScanElem) -> ScanElem {
    ScanElem {
        a: first.a * second.a,
        b: second.a * first.b + second.b,
    }
}

/// Timesteps per block in the blockwise prefix scan. Fixed so the reduction
/// order (and therefore the floating-point result) is deterministic.
pub const SCAN_BLOCK: usize = 64;

/// Blockwise associative prefix-scan executor. Computes the same recurrence
/// as [`scan_sequential`]: within each block of [`SCAN_BLOCK`] steps the
/// prefix compositions are formed locally, block carries are composed in
/// order, and each state is `prefix.a * carry + prefix.b`.
pub fn scan_parallel(params: &SsmParams, u: &[f64], len: usize) -> Vec<f64> {
    let c = params.channels();
    let n = params.state_dim();
    let (disc, sel) = discretize(params, u, len);
    let d = params.d_skip.data();

    let lanes = c * n;
    let mut y = vec![0.0; len * c];
    // Per-lane carry state entering the current block.
    let mut carry = vec![0.0f64; lanes];
    let mut prefix = vec![ScanElem { a: 1.0, b: 0.0 }; SCAN_BLOCK.min(len.max(1)) * lanes];

    let mut start = 0;
    while start < len {
        let blk = SCAN_BLOCK.min(len - start);
        for i in 0..blk {
            let l = start + i;
            for ch in 0..c {
                let uv = u[l * c + ch];
                for j in 0..n {
                    let lane = ch * n + j;
                    let gidx = (l * c + ch) * n + j;
                    let elem = ScanElem {
                        a: disc.a_bar[gidx],
                        b: disc.b_bar[gidx] * uv,
                    };
                    prefix[i * lanes + lane] = if i == 0 {
                        elem
                    } else {
                        combine(prefix[(i - 1) * lanes + lane], elem)
                    };
                }
            }
        }
        for i in 0..blk {
            let l = start + i;
            for ch in 0..c {
                let mut acc = 0.0;
                for j in 0..n {
                    let lane = ch * n + j;
                    let p = prefix[i * lanes + lane];
                    let x = p.a * carry[lane] + p.b;
                    acc += sel.c_sel[l * n + j] * x;
                }
                y[l * c + ch] = acc + d[ch] * u[l * c + ch];
            }
        }
        for lane in 0..lanes {
            let p = prefix[(blk - 1) * lanes + lane];
            carry[lane] = p.a * carry[lane] + p.b;
        }
        start += blk;
    }
    y
}

/// Differentiable selective scan over `u: [L,C]`. The selection projections
/// run as ordinary tape ops; the recurrence itself is a fused primitive with
/// a reverse-time adjoint VJP.
pub fn selective_scan(u: &Tensor, params: &SsmParams) -> Tensor {
    let (l, c) = match u.shape() {
        [l, c] => (*l, *c),
        s => panic!("selective_scan: expected [L,C], got {s:?}"),
    };
    assert_eq!(c, params.channels(), "selective_scan: channel mismatch");

    let low = t::matmul(u, &params.delta_down); // [L,R]
    let pre = t::add(&t::matmul(&low, &params.delta_up), &params.delta_bias); // [L,C]
    let delta = t::softplus(&pre);
    let b_sel = t::matmul(u, &params.b_proj); // [L,N]
    let c_sel = t::matmul(u, &params.c_proj); // [L,N]
    let a = t::neg(&t::exp(&params.a_log)); // [C,N]
    scan_core(u, &delta, &a, &b_sel, &c_sel, &params.d_skip, l, c, params.state_dim())
}

/// Fused scan primitive. Inputs: `u,delta: [L,C]`, `a: [C,N]`,
/// `b,c: [L,N]`, `d: [C]`. Saves the hidden-state trajectory from the
/// forward pass and replays the recurrence backwards for the VJP.
#[allow(clippy::too_many_arguments)]
fn scan_core(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c_sel: &Tensor,
    d: &Tensor,
    l: usize,
    c: usize,
    n: usize,
) -> Tensor {
    use crate::tensor::ops::{finish_op, recording_for};

    let rec = recording_for(&[u, delta, a, b, c_sel, d]);
    let ud = u.data();
    let dl = delta.data();
    let ad = a.data();
    let bd = b.data();
    let cd = c_sel.data();
    let dd = d.data();

    let mut x = vec![0.0; c * n];
    let mut states = vec![0.0; (l + 1) * c * n];
    let mut y = vec![0.0; l * c];
    for k in 0..l {
        for ch in 0..c {
            let dt = dl[k * c + ch];
            let uv = ud[k * c + ch];
            let mut acc = 0.0;
            for j in 0..n {
                let lane = ch * n + j;
                let abar = (dt * ad[lane]).exp();
                x[lane] = abar * x[lane] + dt * bd[k * n + j] * uv;
                acc += cd[k * n + j] * x[lane];
            }
            y[k * c + ch] = acc + dd[ch] * uv;
        }
        states[(k + 1) * c * n..(k + 2) * c * n].copy_from_slice(&x);
    }

    let ud = u.data_arc();
    let dl = delta.data_arc();
    let ad = a.data_arc();
    let bd = b.data_arc();
    let cd = c_sel.data_arc();
    let dd = d.data_arc();
    let states = std::sync::Arc::new(states);
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("selective_scan", rec, y, vec![l, c], move || {
        let tracked = tracked.unwrap();
        Box::new(move |gy| {
            let mut gu = tracked[0].then(|| vec![0.0; l * c]);
            let mut gdl = tracked[1].then(|| vec![0.0; l * c]);
            let mut ga = tracked[2].then(|| vec![0.0; c * n]);
            let mut gb = tracked[3].then(|| vec![0.0; l * n]);
            let mut gc = tracked[4].then(|| vec![0.0; l * n]);
            let mut gd = tracked[5].then(|| vec![0.0; c]);
            // lambda[ch,j] = dL/dx_k while sweeping k backwards.
            let mut lambda = vec![0.0; c * n];
            for k in (0..l).rev() {
                for ch in 0..c {
                    let g = gy[k * c + ch];
                    let dt = dl[k * c + ch];
                    let uv = ud[k * c + ch];
                    let mut du_acc = dd[ch] * g;
                    let mut ddt_acc = 0.0;
                    for j in 0..n {
                        let lane = ch * n + j;
                        let xk = states[(k + 1) * c * n + lane];
                        let xprev = states[k * c * n + lane];
                        let lam = lambda[lane] + g * cd[k * n + j];
                        if let Some(gc) = gc.as_mut() {
                            gc[k * n + j] += g * xk;
                        }
                        let abar = (dt * ad[lane]).exp();
                        let dabar = lam * xprev;
                        ddt_acc += dabar * abar * ad[lane] + lam * bd[k * n + j] * uv;
                        if let Some(ga) = ga.as_mut() {
                            ga[lane] += dabar * abar * dt;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[k * n + j] += lam * dt * uv;
                        }
                        du_acc += lam * dt * bd[k * n + j];
                        lambda[lane] = lam * abar;
                    }
                    if let Some(gd) = gd.as_mut() {
                        gd[ch] += g * uv;
                    }
                    if let Some(gu) = gu.as_mut() {
                        gu[k * c + ch] += du_acc;
                    }
                    if let Some(gdl) = gdl.as_mut() {
                        gdl[k * c + ch] += ddt_acc;
                    }
                }
            }
            vec![gu, gdl, ga, gb, gc, gd]
        })
    })
}
