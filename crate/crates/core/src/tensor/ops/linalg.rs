//! Dense matrix multiplication.

use super::{finish_op, recording_for, shape_panic};
use crate::tensor::Tensor;

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// `[M,K] x [K,N] -> [M,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        shape_panic("matmul", a.shape(), b.shape());
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let rec = recording_for(&[a, b]);
    let out = mm(a.data(), b.data(), m, k, n);
    let ad = a.data_arc();
    let bd = b.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("matmul", rec, out, vec![m, n], move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            // dA = G B^T ; dB = A^T G
            let ga = if tracked[0] {
                let mut g = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gout[i * n + j] * bd[p * n + j];
                        }
                        g[i * k + p] = acc;
                    }
                }
                Some(g)
            } else {
                None
            };
            let gb = if tracked[1] {
                let mut g = vec![0.0; k * n];
                for i in 0..m {
                    let av = &ad[i * k..(i + 1) * k];
                    let gr = &gout[i * n..(i + 1) * n];
                    for p in 0..k {
                        if av[p] == 0.0 {
                            continue;
                        }
                        let grow = &mut g[p * n..(p + 1) * n];
                        for j in 0..n {
                            grow[j] += av[p] * gr[j];
                        }
                    }
                }
                Some(g)
            } else {
                None
            };
            vec![ga, gb]
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn known_product() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = Tensor::from_vec(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]);
        let c = matmul(&a, &b);
        assert_eq!(c.to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gradient_shapes_and_values() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = Tensor::param(vec![1.0; 3], &[3, 1]);
        let tape = Tape::new();
        let _g = tape.activate();
        let loss = matmul(&a, &b).sum_all();
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![1.0; 6]);
        assert_eq!(b.grad().unwrap(), vec![5.0, 7.0, 9.0]);
    }
}
