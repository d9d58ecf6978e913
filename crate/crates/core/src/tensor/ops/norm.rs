//! Layer normalization over the trailing axis.

use super::{finish_op, recording_for, shape_panic};
use crate::tensor::Tensor;

/// Normalizes each trailing-axis row of `x` to zero mean and unit variance
/// (biased variance, `eps` inside the square root), then applies the affine
/// transform `gamma * xhat + beta`. `gamma` and `beta` have shape `[C]` where
/// `C` is the trailing extent of `x`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let shape = x.shape().to_vec();
    let c = *shape.last().unwrap_or(&0);
    if c == 0 || gamma.shape() != [c] || beta.shape() != [c] {
        shape_panic("layer_norm", &shape, gamma.shape());
    }
    let rows = x.numel() / c;
    let rec = recording_for(&[x, gamma, beta]);

    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![0.0; x.numel()];
    let mut xhat = vec![0.0; x.numel()];
    let mut inv_sigma = vec![0.0; rows];
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mu = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_sigma[r] = inv;
        for j in 0..c {
            let h = (row[j] - mu) * inv;
            xhat[r * c + j] = h;
            out[r * c + j] = gd[j] * h + bd[j];
        }
    }

    let gd = gamma.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    let xhat = std::sync::Arc::new(xhat);
    let inv_sigma = std::sync::Arc::new(inv_sigma);
    finish_op("layer_norm", rec, out, shape, move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut gx = if tracked[0] { Some(vec![0.0; rows * c]) } else { None };
            let mut gg = if tracked[1] { Some(vec![0.0; c]) } else { None };
            let mut gb = if tracked[2] { Some(vec![0.0; c]) } else { None };
            for r in 0..rows {
                let g = &gout[r * c..(r + 1) * c];
                let h = &xhat[r * c..(r + 1) * c];
                if let Some(gg) = gg.as_mut() {
                    for j in 0..c {
                        gg[j] += g[j] * h[j];
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for j in 0..c {
                        gb[j] += g[j];
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / sigma
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..c {
                        let dh = g[j] * gd[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh /= c as f64;
                    mean_dh_h /= c as f64;
                    for j in 0..c {
                        let dh = g[j] * gd[j];
                        gx[r * c + j] = (dh - mean_dh - h[j] * mean_dh_h) * inv_sigma[r];
                    }
                }
            }
            vec![gx, gg, gb]
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row_normalizes_to_beta() {
        // Zero variance: (x - mu) = 0, the eps keeps the division finite.
        let x = Tensor::from_vec(vec![3.0; 8], &[2, 4]);
        let gamma = Tensor::ones(&[4]);
        let beta = Tensor::zeros(&[4]);
        let y = layer_norm(&x, &gamma, &beta, 1e-6);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_row_statistics() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]);
        let gamma = Tensor::ones(&[4]);
        let beta = Tensor::zeros(&[4]);
        let y = layer_norm(&x, &gamma, &beta, 1e-6);
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }
}
