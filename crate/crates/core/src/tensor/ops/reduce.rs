//! Reductions to scalars and along single axes.

use super::{finish_op, recording_for};
use crate::tensor::Tensor;

pub fn sum_all(x: &Tensor) -> Tensor {
    let rec = recording_for(&[x]);
    let s: f64 = x.data().iter().sum();
    let n = x.numel();
    finish_op("sum", rec, vec![s], vec![1], move || {
        Box::new(move |gout| {
            let g = gout[0];
            vec![Some(vec![g; n])]
        })
    })
}

pub fn mean_all(x: &Tensor) -> Tensor {
    let rec = recording_for(&[x]);
    let n = x.numel();
    assert!(n > 0, "mean: empty tensor");
    let s: f64 = x.data().iter().sum::<f64>() / n as f64;
    finish_op("mean", rec, vec![s], vec![1], move || {
        Box::new(move |gout| {
            let g = gout[0] / n as f64;
            vec![Some(vec![g; n])]
        })
    })
}

fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn reduce_axis(x: &Tensor, axis: usize, mean: bool) -> Tensor {
    assert!(
        axis < x.shape().len(),
        "reduce_axis: axis {} out of range for shape {:?}",
        axis,
        x.shape()
    );
    let shape = x.shape().to_vec();
    let (outer, len, inner) = axis_geometry(&shape, axis);
    let rec = recording_for(&[x]);
    let xd = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let base = (o * len + k) * inner;
            for i in 0..inner {
                out[o * inner + i] += xd[base + i];
            }
        }
    }
    let scale = if mean { 1.0 / len as f64 } else { 1.0 };
    if mean {
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let name: &'static str = if mean { "mean_axis" } else { "sum_axis" };
    finish_op(name, rec, out, out_shape, move || {
        Box::new(move |gout| {
            let mut g = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for i in 0..inner {
                        g[base + i] = gout[o * inner + i] * scale;
                    }
                }
            }
            vec![Some(g)]
        })
    })
}

/// Sum along `axis`, removing it from the shape.
pub fn sum_axis(x: &Tensor, axis: usize) -> Tensor {
    reduce_axis(x, axis, false)
}

/// Mean along `axis`, removing it from the shape.
pub fn mean_axis(x: &Tensor, axis: usize) -> Tensor {
    reduce_axis(x, axis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn mean_gradient_is_uniform() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[4]);
        let tape = Tape::new();
        let _g = tape.activate();
        let loss = mean_all(&x);
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn axis_reduction() {
        let x = Tensor::from_vec((1..=6).map(|v| v as f64).collect(), &[2, 3]);
        assert_eq!(sum_axis(&x, 0).to_vec(), vec![5.0, 7.0, 9.0]);
        assert_eq!(mean_axis(&x, 1).to_vec(), vec![2.0, 5.0]);
    }

    #[test]
    #[should_panic(expected = "backward: loss must be scalar")]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        let tape = Tape::new();
        let _g = tape.activate();
        let y = x.mul_scalar(2.0);
        tape.backward(&y);
    }
}
