//! 2D convolutions over channels-last `[H,W,C]` maps.

use super::{finish_op, recording_for, shape_panic};
use crate::tensor::Tensor;

fn conv_out_extent(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        n + 2 * pad >= k,
        "conv2d: input extent {n} with pad {pad} smaller than kernel {k}"
    );
    (n + 2 * pad - k) / stride + 1
}

/// Cross-correlation of `x: [H,W,Ci]` with `w: [Kh,Kw,Ci,Co]`, explicit zero
/// padding, no bias (add one separately with a broadcast add).
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (h, wd, ci) = match x.shape() {
        [h, w, c] => (*h, *w, *c),
        _ => shape_panic("conv2d", x.shape(), w.shape()),
    };
    let (kh, kw, wci, co) = match w.shape() {
        [kh, kw, ci, co] => (*kh, *kw, *ci, *co),
        _ => shape_panic("conv2d", x.shape(), w.shape()),
    };
    if ci != wci {
        shape_panic("conv2d", x.shape(), w.shape());
    }
    let oh = conv_out_extent(h, kh, stride, pad);
    let ow = conv_out_extent(wd, kw, stride, pad);

    let rec = recording_for(&[x, w]);
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; oh * ow * co];
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xoff = (iy as usize * wd + ix as usize) * ci;
                    let woff = (ky * kw + kx) * ci * co;
                    let ooff = (oy * ow + ox) * co;
                    for c_in in 0..ci {
                        let xv = xd[xoff + c_in];
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wdat[woff + c_in * co..woff + (c_in + 1) * co];
                        for c_out in 0..co {
                            out[ooff + c_out] += xv * wrow[c_out];
                        }
                    }
                }
            }
        }
    }

    let xd = x.data_arc();
    let wdat = w.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("conv2d", rec, out, vec![oh, ow, co], move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut gx = if tracked[0] { Some(vec![0.0; h * wd * ci]) } else { None };
            let mut gw = if tracked[1] { Some(vec![0.0; kh * kw * ci * co]) } else { None };
            for oy in 0..oh {
                for ox in 0..ow {
                    let ooff = (oy * ow + ox) * co;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xoff = (iy as usize * wd + ix as usize) * ci;
                            let woff = (ky * kw + kx) * ci * co;
                            for c_in in 0..ci {
                                let mut acc = 0.0;
                                for c_out in 0..co {
                                    acc += gout[ooff + c_out] * wdat[woff + c_in * co + c_out];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[xoff + c_in] += acc;
                                }
                                if let Some(gw) = gw.as_mut() {
                                    let xv = xd[xoff + c_in];
                                    for c_out in 0..co {
                                        gw[woff + c_in * co + c_out] +=
                                            gout[ooff + c_out] * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![gx, gw]
        })
    })
}

/// Depthwise cross-correlation of `x: [H,W,C]` with `w: [Kh,Kw,C]`, stride 1,
/// explicit zero padding, no bias.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let (h, wd, c) = match x.shape() {
        [h, w, c] => (*h, *w, *c),
        _ => shape_panic("depthwise_conv2d", x.shape(), w.shape()),
    };
    let (kh, kw, wc) = match w.shape() {
        [kh, kw, c] => (*kh, *kw, *c),
        _ => shape_panic("depthwise_conv2d", x.shape(), w.shape()),
    };
    if c != wc {
        shape_panic("depthwise_conv2d", x.shape(), w.shape());
    }
    let oh = conv_out_extent(h, kh, 1, pad);
    let ow = conv_out_extent(wd, kw, 1, pad);

    let rec = recording_for(&[x, w]);
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let ooff = (oy * ow + ox) * c;
            for ky in 0..kh {
                let iy = (oy + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox + kx) as isize - pad as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    let xoff = (iy as usize * wd + ix as usize) * c;
                    let woff = (ky * kw + kx) * c;
                    for ch in 0..c {
                        out[ooff + ch] += xd[xoff + ch] * wdat[woff + ch];
                    }
                }
            }
        }
    }

    let xd = x.data_arc();
    let wdat = w.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("depthwise_conv2d", rec, out, vec![oh, ow, c], move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut gx = if tracked[0] { Some(vec![0.0; h * wd * c]) } else { None };
            let mut gw = if tracked[1] { Some(vec![0.0; kh * kw * c]) } else { None };
            for oy in 0..oh {
                for ox in 0..ow {
                    let ooff = (oy * ow + ox) * c;
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xoff = (iy as usize * wd + ix as usize) * c;
                            let woff = (ky * kw + kx) * c;
                            for ch in 0..c {
                                if let Some(gx) = gx.as_mut() {
                                    gx[xoff + ch] += gout[ooff + ch] * wdat[woff + ch];
                                }
                                if let Some(gw) = gw.as_mut() {
                                    gw[woff + ch] += gout[ooff + ch] * xd[xoff + ch];
                                }
                            }
                        }
                    }
                }
            }
            vec![gx, gw]
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passthrough() {
        let x = Tensor::from_vec((0..9).map(|v| v as f64).collect(), &[3, 3, 1]);
        let w = Tensor::from_vec(vec![1.0], &[1, 1, 1, 1]);
        let y = conv2d(&x, &w, 1, 0);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn box_kernel_sums_neighborhood() {
        let x = Tensor::ones(&[3, 3, 1]);
        let w = Tensor::ones(&[3, 3, 1, 1]);
        let y = conv2d(&x, &w, 1, 1);
        assert_eq!(y.shape(), &[3, 3, 1]);
        // Center sees all nine ones, corners see four.
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn strided_output_shape() {
        let x = Tensor::zeros(&[8, 8, 3]);
        let w = Tensor::zeros(&[3, 3, 3, 16]);
        let y = conv2d(&x, &w, 2, 1);
        assert_eq!(y.shape(), &[4, 4, 16]);
    }

    #[test]
    fn depthwise_keeps_channels_separate() {
        let x = Tensor::from_vec(vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0], &[2, 2, 2]);
        let w = Tensor::from_vec(vec![1.0, 2.0], &[1, 1, 2]);
        let y = depthwise_conv2d(&x, &w, 0);
        assert_eq!(y.to_vec(), vec![1.0, 20.0, 2.0, 40.0, 3.0, 60.0, 4.0, 80.0]);
    }
}
