//! Bilinear resampling: fixed-grid resize and coordinate-field sampling.

use super::{finish_op, recording_for, shape_panic};
use crate::tensor::Tensor;

/// Neighborhood of a continuous coordinate clamped to `[0, n-1]`:
/// `(lo, hi, frac, interior)`. `interior` is false when the raw coordinate
/// fell outside the valid range (the sample is border-clamped there and the
/// coordinate gradient is zero).
fn clamp_lerp(v: f64, n: usize) -> (usize, usize, f64, bool) {
    let max = (n - 1) as f64;
    let interior = (0.0..=max).contains(&v);
    let c = v.clamp(0.0, max);
    let lo = c.floor();
    let frac = c - lo;
    let lo = lo as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, frac, interior)
}

/// Resizes `x: [h,w,C]` to `[out_h, out_w, C]` by bilinear interpolation.
/// Source coordinates follow the half-pixel convention
/// `src = (dst + 0.5) * scale - 0.5`.
pub fn upsample_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w, c) = match x.shape() {
        [h, w, c] => (*h, *w, *c),
        s => panic!("upsample_bilinear: expected [H,W,C], got {s:?}"),
    };
    assert!(out_h > 0 && out_w > 0, "upsample_bilinear: empty output");
    let rec = recording_for(&[x]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;

    // (y0, y1, fy) per output row, likewise per column.
    let rows: Vec<(usize, usize, f64)> = (0..out_h)
        .map(|oy| {
            let (lo, hi, f, _) = clamp_lerp((oy as f64 + 0.5) * sy - 0.5, h);
            (lo, hi, f)
        })
        .collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|ox| {
            let (lo, hi, f, _) = clamp_lerp((ox as f64 + 0.5) * sx - 0.5, w);
            (lo, hi, f)
        })
        .collect();

    let xd = x.data();
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            let o = (oy * out_w + ox) * c;
            for ch in 0..c {
                let v00 = xd[(y0 * w + x0) * c + ch];
                let v01 = xd[(y0 * w + x1) * c + ch];
                let v10 = xd[(y1 * w + x0) * c + ch];
                let v11 = xd[(y1 * w + x1) * c + ch];
                out[o + ch] = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
            }
        }
    }

    finish_op("upsample_bilinear", rec, out, vec![out_h, out_w, c], move || {
        Box::new(move |gout| {
            let mut g = vec![0.0; h * w * c];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let o = (oy * out_w + ox) * c;
                    for ch in 0..c {
                        let gv = gout[o + ch];
                        g[(y0 * w + x0) * c + ch] += gv * (1.0 - fy) * (1.0 - fx);
                        g[(y0 * w + x1) * c + ch] += gv * (1.0 - fy) * fx;
                        g[(y1 * w + x0) * c + ch] += gv * fy * (1.0 - fx);
                        g[(y1 * w + x1) * c + ch] += gv * fy * fx;
                    }
                }
            }
            vec![Some(g)]
        })
    })
}

/// Samples `image: [H,W,C]` at per-pixel coordinates `u, v: [Oh,Ow]`
/// (pixel centers at integer coordinates). The four-neighbor weights sum to
/// one; out-of-range coordinates clamp to the border and there the gradient
/// with respect to the coordinate is zero. Differentiable in the image and in
/// both coordinate fields.
pub fn grid_sample(image: &Tensor, u: &Tensor, v: &Tensor) -> Tensor {
    let (h, w, c) = match image.shape() {
        [h, w, c] => (*h, *w, *c),
        _ => shape_panic("grid_sample", image.shape(), u.shape()),
    };
    if u.shape() != v.shape() {
        shape_panic("grid_sample", u.shape(), v.shape());
    }
    let out_hw = u.shape().to_vec();
    let n = u.numel();
    let rec = recording_for(&[image, u, v]);

    let id = image.data();
    let ud = u.data();
    let vd = v.data();
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let (x0, x1, fx, _) = clamp_lerp(ud[i], w);
        let (y0, y1, fy, _) = clamp_lerp(vd[i], h);
        for ch in 0..c {
            let v00 = id[(y0 * w + x0) * c + ch];
            let v01 = id[(y0 * w + x1) * c + ch];
            let v10 = id[(y1 * w + x0) * c + ch];
            let v11 = id[(y1 * w + x1) * c + ch];
            out[i * c + ch] = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
        }
    }

    let mut out_shape = out_hw.clone();
    out_shape.push(c);
    let id = image.data_arc();
    let ud = u.data_arc();
    let vd = v.data_arc();
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("grid_sample", rec, out, out_shape, move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut gi = if tracked[0] { Some(vec![0.0; h * w * c]) } else { None };
            let mut gu = if tracked[1] { Some(vec![0.0; n]) } else { None };
            let mut gv = if tracked[2] { Some(vec![0.0; n]) } else { None };
            for i in 0..n {
                let (x0, x1, fx, x_in) = clamp_lerp(ud[i], w);
                let (y0, y1, fy, y_in) = clamp_lerp(vd[i], h);
                for ch in 0..c {
                    let gvout = gout[i * c + ch];
                    if gvout == 0.0 {
                        continue;
                    }
                    let v00 = id[(y0 * w + x0) * c + ch];
                    let v01 = id[(y0 * w + x1) * c + ch];
                    let v10 = id[(y1 * w + x0) * c + ch];
                    let v11 = id[(y1 * w + x1) * c + ch];
                    if let Some(g) = gi.as_mut() {
                        g[(y0 * w + x0) * c + ch] += gvout * (1.0 - fy) * (1.0 - fx);
                        g[(y0 * w + x1) * c + ch] += gvout * (1.0 - fy) * fx;
                        g[(y1 * w + x0) * c + ch] += gvout * fy * (1.0 - fx);
                        g[(y1 * w + x1) * c + ch] += gvout * fy * fx;
                    }
                    if let Some(g) = gu.as_mut() {
                        if x_in {
                            let dx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
                            g[i] += gvout * dx;
                        }
                    }
                    if let Some(g) = gv.as_mut() {
                        if y_in {
                            let dy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
                            g[i] += gvout * dy;
                        }
                    }
                }
            }
            vec![gi, gu, gv]
        })
    })
}
