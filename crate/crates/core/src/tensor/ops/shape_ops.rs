//! Data-movement ops: reshape, index-map gathers (transpose, slice, pixel
//! shuffle, padding, scan-path unfolds), and concatenation.

use std::sync::Arc;

use super::{finish_op, recording_for};
use crate::tensor::Tensor;

/// Sentinel source index: the output element is zero and takes no gradient.
pub(crate) const ZERO_SRC: usize = usize::MAX;

/// Core gather: `out[i] = x[map[i]]` (or 0 for [`ZERO_SRC`]). Duplicate source
/// indices are allowed; the backward pass scatter-adds, so every reader
/// contributes to its source element's gradient.
pub(crate) fn gather_map(
    name: &'static str,
    x: &Tensor,
    map: Arc<Vec<usize>>,
    out_shape: Vec<usize>,
) -> Tensor {
    let n: usize = out_shape.iter().product();
    assert_eq!(n, map.len(), "{name}: index map length mismatch");
    let rec = recording_for(&[x]);
    let xd = x.data();
    let out: Vec<f64> = map
        .iter()
        .map(|&s| if s == ZERO_SRC { 0.0 } else { xd[s] })
        .collect();
    let in_len = x.numel();
    finish_op(name, rec, out, out_shape, move || {
        Box::new(move |gout| {
            let mut g = vec![0.0; in_len];
            for (i, &s) in map.iter().enumerate() {
                if s != ZERO_SRC {
                    g[s] += gout[i];
                }
            }
            vec![Some(g)]
        })
    })
}

/// Same element count, new shape; the payload is shared.
pub fn reshape(x: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    assert_eq!(
        n,
        x.numel(),
        "reshape: cannot view shape {:?} as {:?}",
        x.shape(),
        shape
    );
    let rec = recording_for(&[x]);
    match rec {
        None => x.view_as(shape.to_vec(), None),
        Some(r) => {
            let out = r.tape.alloc_node(n);
            r.tape.push_record(
                "reshape",
                r.input_nodes,
                out,
                Box::new(move |gout| vec![Some(gout.to_vec())]),
            );
            x.view_as(shape.to_vec(), Some((r.tape.tape_id(), out)))
        }
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// General axis permutation: `out[idx[perm]] = x[idx]` reindexed so that
/// output axis `d` is input axis `perm[d]`.
pub fn permute_axes(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape();
    assert_eq!(perm.len(), shape.len(), "permute_axes: rank mismatch");
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = row_major_strides(shape);
    let n = x.numel();
    let mut map = vec![0usize; n];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in map.iter_mut().take(n) {
        let mut src = 0;
        for (d, &p) in perm.iter().enumerate() {
            src += idx[d] * in_strides[p];
        }
        *slot = src;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    gather_map("permute_axes", x, Arc::new(map), out_shape)
}

/// 2D transpose.
pub fn transpose2d(x: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 2, "transpose2d: expected rank 2");
    permute_axes(x, &[1, 0])
}

/// Contiguous sub-block selection; `ranges[d] = (start, end)` per axis.
pub fn slice(x: &Tensor, ranges: &[(usize, usize)]) -> Tensor {
    let shape = x.shape();
    assert_eq!(ranges.len(), shape.len(), "slice: rank mismatch");
    for (d, &(s, e)) in ranges.iter().enumerate() {
        assert!(
            s < e && e <= shape[d],
            "slice: range {}..{} out of bounds for axis {} of {:?}",
            s,
            e,
            d,
            shape
        );
    }
    let out_shape: Vec<usize> = ranges.iter().map(|&(s, e)| e - s).collect();
    let strides = row_major_strides(shape);
    let n: usize = out_shape.iter().product();
    let mut map = vec![0usize; n];
    let mut idx = vec![0usize; out_shape.len()];
    for slot in map.iter_mut().take(n) {
        let mut src = 0;
        for d in 0..out_shape.len() {
            src += (ranges[d].0 + idx[d]) * strides[d];
        }
        *slot = src;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    gather_map("slice", x, Arc::new(map), out_shape)
}

/// `[H,W,C] -> [H/b, W/b, b*b*C]`: each b x b patch is flattened row-major
/// with channels last.
pub fn space_to_depth(x: &Tensor, b: usize) -> Tensor {
    let (h, w, c) = expect_hwc(x, "space_to_depth");
    assert!(
        h % b == 0 && w % b == 0,
        "space_to_depth: dims {}x{} not divisible by block {}",
        h,
        w,
        b
    );
    let (oh, ow) = (h / b, w / b);
    let oc = b * b * c;
    let mut map = vec![0usize; oh * ow * oc];
    for i in 0..oh {
        for j in 0..ow {
            for dy in 0..b {
                for dx in 0..b {
                    for ch in 0..c {
                        let dst = ((i * ow + j) * oc) + (dy * b + dx) * c + ch;
                        let src = ((i * b + dy) * w + (j * b + dx)) * c + ch;
                        map[dst] = src;
                    }
                }
            }
        }
    }
    gather_map("space_to_depth", x, Arc::new(map), vec![oh, ow, oc])
}

/// `[H,W,b*b*C'] -> [H*b, W*b, C']`: inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, b: usize) -> Tensor {
    let (h, w, c) = expect_hwc(x, "depth_to_space");
    assert!(
        c % (b * b) == 0,
        "depth_to_space: channels {} not divisible by block^2 {}",
        c,
        b * b
    );
    let oc = c / (b * b);
    let (oh, ow) = (h * b, w * b);
    let mut map = vec![0usize; oh * ow * oc];
    for i in 0..h {
        for j in 0..w {
            for dy in 0..b {
                for dx in 0..b {
                    for ch in 0..oc {
                        let dst = ((i * b + dy) * ow + (j * b + dx)) * oc + ch;
                        let src = (i * w + j) * c + (dy * b + dx) * oc + ch;
                        map[dst] = src;
                    }
                }
            }
        }
    }
    gather_map("depth_to_space", x, Arc::new(map), vec![oh, ow, oc])
}

/// Row gather over a token matrix: output row `t` copies input row
/// `table[t]`, where rows are `c`-element channel vectors. Works on any
/// tensor whose flat layout is `[T, c]`; `out_shape` chooses the shape of the
/// result (e.g. `[H*W, c]` or `[H, W, c]`).
pub fn gather_tokens(
    name: &'static str,
    x: &Tensor,
    table: Arc<Vec<usize>>,
    c: usize,
    out_shape: Vec<usize>,
) -> Tensor {
    let tokens = x.numel() / c;
    assert_eq!(x.numel(), tokens * c, "{name}: channel count mismatch");
    let mut map = vec![0usize; table.len() * c];
    for (t, &src) in table.iter().enumerate() {
        assert!(src < tokens, "{name}: token index out of range");
        for ch in 0..c {
            map[t * c + ch] = src * c + ch;
        }
    }
    gather_map(name, x, Arc::new(map), out_shape)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample; needs extent >= 2.
    Reflect,
}

fn reflect_index(i: isize, n: isize) -> usize {
    // Single reflection is enough for pad < n.
    let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    debug_assert!(j >= 0 && j < n);
    j as usize
}

/// Spatial padding of an `[H,W,C]` map: `(top, bottom, left, right)`.
pub fn pad2d(x: &Tensor, pad: (usize, usize, usize, usize), mode: PadMode) -> Tensor {
    let (h, w, c) = expect_hwc(x, "pad2d");
    let (t, b, l, r) = pad;
    if mode == PadMode::Reflect {
        assert!(
            (t.max(b) < h || t.max(b) == 0) && (l.max(r) < w || l.max(r) == 0),
            "pad2d: reflect padding {:?} too large for {}x{}",
            pad,
            h,
            w
        );
    }
    let (oh, ow) = (h + t + b, w + l + r);
    let mut map = vec![0usize; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let iy = oy as isize - t as isize;
            let ix = ox as isize - l as isize;
            for ch in 0..c {
                let dst = (oy * ow + ox) * c + ch;
                map[dst] = match mode {
                    PadMode::Zero => {
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            ZERO_SRC
                        } else {
                            (iy as usize * w + ix as usize) * c + ch
                        }
                    }
                    PadMode::Reflect => {
                        let ry = reflect_index(iy, h as isize);
                        let rx = reflect_index(ix, w as isize);
                        (ry * w + rx) * c + ch
                    }
                };
            }
        }
    }
    gather_map("pad2d", x, Arc::new(map), vec![oh, ow, c])
}

/// Concatenation along `axis`.
pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    assert!(!parts.is_empty(), "concat: no inputs");
    let rank = parts[0].shape().len();
    assert!(axis < rank, "concat: axis {axis} out of range");
    for p in parts {
        assert_eq!(p.shape().len(), rank, "concat: rank mismatch");
        for d in 0..rank {
            if d != axis {
                assert_eq!(
                    p.shape()[d],
                    parts[0].shape()[d],
                    "concat: incompatible shapes {:?} and {:?}",
                    parts[0].shape(),
                    p.shape()
                );
            }
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();

    let rec = recording_for(&parts.to_vec());
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis];
            let pd = p.data();
            out.extend_from_slice(&pd[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let part_lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let tracked = rec.as_ref().map(|r| r.tracked());
    finish_op("concat", rec, out, out_shape, move || {
        let tracked = tracked.unwrap();
        Box::new(move |gout| {
            let mut grads: Vec<Option<Vec<f64>>> = part_lens
                .iter()
                .zip(&tracked)
                .map(|(&len, &tr)| tr.then(|| vec![0.0; outer * len * inner]))
                .collect();
            let stride: usize = part_lens.iter().sum::<usize>() * inner;
            for o in 0..outer {
                let mut off = o * stride;
                for (k, &len) in part_lens.iter().enumerate() {
                    if let Some(g) = grads[k].as_mut() {
                        g[o * len * inner..(o + 1) * len * inner]
                            .copy_from_slice(&gout[off..off + len * inner]);
                    }
                    off += len * inner;
                }
            }
            grads
        })
    })
}

fn expect_hwc(x: &Tensor, op: &str) -> (usize, usize, usize) {
    match x.shape() {
        [h, w, c] => (*h, *w, *c),
        s => panic!("{op}: expected [H,W,C], got {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn transpose_round_trip() {
        let x = Tensor::from_vec((0..6).map(|v| v as f64).collect(), &[2, 3]);
        let t = transpose2d(&x);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(transpose2d(&t).to_vec(), x.to_vec());
    }

    #[test]
    fn space_depth_inverse() {
        let x = Tensor::from_vec((0..48).map(|v| v as f64).collect(), &[4, 4, 3]);
        let d = space_to_depth(&x, 2);
        assert_eq!(d.shape(), &[2, 2, 12]);
        let back = depth_to_space(&d, 2);
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn zero_pad_and_gradient() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]);
        let tape = Tape::new();
        let _g = tape.activate();
        let p = pad2d(&x, (1, 1, 1, 1), PadMode::Zero);
        assert_eq!(p.shape(), &[4, 4, 1]);
        assert_eq!(p.data()[0], 0.0);
        assert_eq!(p.data()[5], 1.0);
        let loss = p.sum_all();
        tape.backward(&loss);
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[1, 3, 1]);
        let p = pad2d(&x, (0, 0, 1, 1), PadMode::Reflect);
        assert_eq!(p.to_vec(), vec![2.0, 1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn concat_axis0_gradient_splits() {
        let a = Tensor::param(vec![1.0, 2.0], &[2]);
        let b = Tensor::param(vec![3.0], &[1]);
        let tape = Tape::new();
        let _g = tape.activate();
        let c = concat(&[&a, &b], 0);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0]);
        let loss = c.mul_scalar(2.0).sum_all();
        tape.backward(&loss);
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn slice_extracts_block() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[3, 4]);
        let s = slice(&x, &[(1, 3), (0, 2)]);
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.to_vec(), vec![4.0, 5.0, 8.0, 9.0]);
    }
}
