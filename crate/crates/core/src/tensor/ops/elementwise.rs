//! Elementwise unary and binary ops with right-aligned broadcasting.

use super::{finish_op, recording_for, shape_panic};
use crate::tensor::Tensor;

/// Right-aligned numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Element strides for reading `shape` broadcast up to `out` (0 on expanded axes).
pub(crate) fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Walks all broadcast positions of `out_shape` calling `visit(i, off_a, off_b)`.
fn for_each_bcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut visit: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let sa = bcast_strides(a_shape, out_shape);
    let sb = bcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for i in 0..n {
        visit(i, oa, ob);
        if i + 1 < n {
            for d in (0..rank).rev() {
                idx[d] += 1;
                oa += sa[d];
                ob += sb[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                oa -= idx[d] * sa[d];
                ob -= idx[d] * sb[d];
                idx[d] = 0;
            }
        }
    }
}

fn binary_op(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64 + Copy + 'static,
    dfda: impl Fn(f64, f64) -> f64 + Copy + 'static,
    dfdb: impl Fn(f64, f64) -> f64 + Copy + 'static,
) -> Tensor {
    let out_shape = match broadcast_shapes(a.shape(), b.shape()) {
        Some(s) => s,
        None => shape_panic(op, a.shape(), b.shape()),
    };
    let rec = recording_for(&[a, b]);
    let n: usize = out_shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(n);
    let same = a.shape() == b.shape();
    if same {
        out.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    } else if b.numel() == 1 {
        let y = bd[0];
        out.extend(ad.iter().map(|&x| f(x, y)));
    } else if a.numel() == 1 {
        let x = ad[0];
        out.extend(bd.iter().map(|&y| f(x, y)));
    } else {
        for_each_bcast(&out_shape, a.shape(), b.shape(), |_, oa, ob| {
            out.push(f(ad[oa], bd[ob]));
        });
    }

    let a_shape = a.shape().to_vec();
    let b_shape = b.shape().to_vec();
    let a_numel = a.numel();
    let b_numel = b.numel();
    let ad = a.data_arc();
    let bd = b.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    let vjp_shape = out_shape.clone();
    finish_op(op, rec, out, out_shape, move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut ga = if tracked[0] { Some(vec![0.0; a_numel]) } else { None };
            let mut gb = if tracked[1] { Some(vec![0.0; b_numel]) } else { None };
            if a_shape == b_shape {
                for i in 0..gout.len() {
                    let (x, y) = (ad[i], bd[i]);
                    if let Some(g) = ga.as_mut() {
                        g[i] += gout[i] * dfda(x, y);
                    }
                    if let Some(g) = gb.as_mut() {
                        g[i] += gout[i] * dfdb(x, y);
                    }
                }
            } else {
                for_each_bcast(&vjp_shape, &a_shape, &b_shape, |i, oa, ob| {
                    let (x, y) = (ad[oa], bd[ob]);
                    if let Some(g) = ga.as_mut() {
                        g[oa] += gout[i] * dfda(x, y);
                    }
                    if let Some(g) = gb.as_mut() {
                        g[ob] += gout[i] * dfdb(x, y);
                    }
                });
            }
            vec![ga, gb]
        })
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

pub fn div(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op(
        "div",
        a,
        b,
        |x, y| x / y,
        |_, y| 1.0 / y,
        |x, y| -x / (y * y),
    )
}

/// Elementwise minimum; ties route the gradient to the first argument.
pub fn min2(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op(
        "min2",
        a,
        b,
        |x, y| if x <= y { x } else { y },
        |x, y| if x <= y { 1.0 } else { 0.0 },
        |x, y| if x <= y { 0.0 } else { 1.0 },
    )
}

/// Elementwise maximum; ties route the gradient to the first argument.
pub fn max2(a: &Tensor, b: &Tensor) -> Tensor {
    binary_op(
        "max2",
        a,
        b,
        |x, y| if x >= y { x } else { y },
        |x, y| if x >= y { 1.0 } else { 0.0 },
        |x, y| if x >= y { 0.0 } else { 1.0 },
    )
}

fn unary_op(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64 + Copy + 'static,
) -> Tensor {
    let rec = recording_for(&[x]);
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let shape = x.shape().to_vec();
    let xd = x.data_arc();
    finish_op(op, rec, out, shape, move || {
        Box::new(move |gout| {
            let g = gout
                .iter()
                .zip(xd.iter())
                .map(|(gv, &xv)| gv * df(xv))
                .collect();
            vec![Some(g)]
        })
    })
}

pub fn neg(x: &Tensor) -> Tensor {
    unary_op("neg", x, |v| -v, |_| -1.0)
}

pub fn abs(x: &Tensor) -> Tensor {
    unary_op("abs", x, f64::abs, |v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

pub fn exp(x: &Tensor) -> Tensor {
    unary_op("exp", x, f64::exp, |v| v.exp())
}

pub fn sqrt(x: &Tensor) -> Tensor {
    unary_op("sqrt", x, f64::sqrt, |v| {
        let y = v.sqrt();
        if y > 0.0 {
            0.5 / y
        } else {
            0.0
        }
    })
}

pub fn sin(x: &Tensor) -> Tensor {
    unary_op("sin", x, f64::sin, |v| v.cos())
}

pub fn cos(x: &Tensor) -> Tensor {
    unary_op("cos", x, f64::cos, |v| -v.sin())
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary_op("sigmoid", x, sigmoid_scalar, |v| {
        let s = sigmoid_scalar(v);
        s * (1.0 - s)
    })
}

pub fn silu(x: &Tensor) -> Tensor {
    unary_op(
        "silu",
        x,
        |v| v * sigmoid_scalar(v),
        |v| {
            let s = sigmoid_scalar(v);
            s * (1.0 + v * (1.0 - s))
        },
    )
}

/// Numerically stable scalar softplus, shared with reference (untaped) code.
pub fn softplus_value(v: f64) -> f64 {
    softplus_scalar(v)
}

pub(crate) fn softplus_scalar(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

pub fn softplus(x: &Tensor) -> Tensor {
    unary_op("softplus", x, softplus_scalar, sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    unary_op(
        "relu",
        x,
        |v| v.max(0.0),
        |v| if v > 0.0 { 1.0 } else { 0.0 },
    )
}

pub fn add_scalar(x: &Tensor, c: f64) -> Tensor {
    unary_op("add_scalar", x, move |v| v + c, |_| 1.0)
}

pub fn mul_scalar(x: &Tensor, c: f64) -> Tensor {
    unary_op("mul_scalar", x, move |v| v * c, move |_| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shapes(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[4, 1], &[1, 5]), Some(vec![4, 5]));
        assert_eq!(broadcast_shapes(&[2, 3], &[4]), None);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let x = Tensor::from_vec(vec![0.0], &[1]);
        assert_eq!(sigmoid(&x).item(), 0.5);
    }

    #[test]
    fn silu_at_zero_is_zero() {
        let x = Tensor::from_vec(vec![0.0], &[1]);
        assert_eq!(silu(&x).item(), 0.0);
    }

    #[test]
    fn elementwise_square_gradient() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0], &[3]);
        let tape = Tape::new();
        let _g = tape.activate();
        let loss = mul(&x, &x).sum_all();
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = Tensor::param(vec![10.0, 20.0, 30.0], &[3]);
        let tape = Tape::new();
        let _g = tape.activate();
        let loss = add(&a, &b).sum_all();
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "add: incompatible shapes")]
    fn mismatched_shapes_panic() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let _ = add(&a, &b);
    }
}
