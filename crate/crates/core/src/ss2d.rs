//! 2D selective scan: unfold a feature map along four directional paths, run
//! an independent S6 scan on each, fold the outputs back, and sum.
//!
//! The four paths over an `H x W` grid:
//! 1. row-major, left-to-right top-to-bottom;
//! 2. column-major, top-to-bottom left-to-right;
//! 3. reverse of path 1;
//! 4. reverse of path 2.
//!
//! Each path is a permutation of the `H*W` positions, so expand followed by
//! the inverse permutation is exactly the identity; the merge is a plain sum
//! with no interpolation or renormalization.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;

use crate::ssm::{selective_scan, SsmParams};
use crate::tensor::ops::gather_tokens;
use crate::tensor::Tensor;

pub const NUM_PATHS: usize = 4;

/// Token-order tables for the four scan paths. `forward[p][t]` is the
/// row-major position index placed at sequence slot `t` of path `p`;
/// `inverse[p]` is the inverse permutation.
pub struct ScanPaths {
    pub h: usize,
    pub w: usize,
    pub forward: [Vec<usize>; NUM_PATHS],
    pub inverse: [Vec<usize>; NUM_PATHS],
}

impl ScanPaths {
    pub fn new(h: usize, w: usize) -> ScanPaths {
        assert!(h >= 1 && w >= 1, "scan paths need a non-empty grid");
        let hw = h * w;
        let path1: Vec<usize> = (0..hw).collect();
        let path2: Vec<usize> = (0..hw)
            .map(|t| {
                let col = t / h;
                let row = t % h;
                row * w + col
            })
            .collect();
        let path3: Vec<usize> = path1.iter().rev().copied().collect();
        let path4: Vec<usize> = path2.iter().rev().copied().collect();
        let forward = [path1, path2, path3, path4];
        let inverse = std::array::from_fn(|p| {
            let mut inv = vec![0usize; hw];
            for (t, &src) in forward[p].iter().enumerate() {
                inv[src] = t;
            }
            inv
        });
        ScanPaths { h, w, forward, inverse }
    }
}

/// Parameters for one SS2D unit: four independent S6 parameter sets.
pub struct Ss2dParams {
    pub paths: [SsmParams; NUM_PATHS],
}

impl Ss2dParams {
    pub fn new(channels: usize, state_dim: usize, rng: &mut ChaCha12Rng) -> Ss2dParams {
        Ss2dParams {
            paths: std::array::from_fn(|_| SsmParams::new(channels, state_dim, rng)),
        }
    }

    pub fn channels(&self) -> usize {
        self.paths[0].channels()
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, p) in self.paths.iter_mut().enumerate() {
            p.for_each_param(&format!("{prefix}.path{i}"), f);
        }
    }
}

/// Unfolds `x: [H,W,C]` into the four path sequences, each `[H*W, C]`.
pub fn scan_expand(x: &Tensor, paths: &ScanPaths) -> [Tensor; NUM_PATHS] {
    let (h, w, c) = expect_hwc(x);
    assert_eq!((h, w), (paths.h, paths.w), "scan_expand: grid mismatch");
    std::array::from_fn(|p| {
        gather_tokens(
            "scan_expand",
            x,
            Arc::new(paths.forward[p].clone()),
            c,
            vec![h * w, c],
        )
    })
}

/// Folds a path output `[H*W, C]` back to `[H,W,C]` by the inverse permutation.
pub fn scan_fold(y: &Tensor, paths: &ScanPaths, path: usize) -> Tensor {
    let (hw, c) = match y.shape() {
        [hw, c] => (*hw, *c),
        s => panic!("scan_fold: expected [HW,C], got {s:?}"),
    };
    assert_eq!(hw, paths.h * paths.w, "scan_fold: length mismatch");
    gather_tokens(
        "scan_fold",
        y,
        Arc::new(paths.inverse[path].clone()),
        c,
        vec![paths.h, paths.w, c],
    )
}

/// SS2D with a caller-supplied per-path scan. The production path plugs the
/// parameterized S6 scan in; tests plug reference scans.
pub fn ss2d_forward_with(
    x: &Tensor,
    paths: &ScanPaths,
    mut scan: impl FnMut(usize, &Tensor) -> Tensor,
) -> Tensor {
    let seqs = scan_expand(x, paths);
    let mut acc: Option<Tensor> = None;
    for (p, seq) in seqs.iter().enumerate() {
        let y = scan(p, seq);
        assert_eq!(y.shape(), seq.shape(), "ss2d: scan changed sequence shape");
        let folded = scan_fold(&y, paths, p);
        acc = Some(match acc {
            None => folded,
            Some(a) => &a + &folded,
        });
    }
    acc.expect("ss2d: at least one path")
}

/// Full SS2D: expand, run the four independent S6 scans, fold and sum.
pub fn ss2d_forward(x: &Tensor, params: &Ss2dParams) -> Tensor {
    let (h, w, _) = expect_hwc(x);
    let paths = ScanPaths::new(h, w);
    ss2d_forward_with(x, &paths, |p, seq| selective_scan(seq, &params.paths[p]))
}

fn expect_hwc(x: &Tensor) -> (usize, usize, usize) {
    match x.shape() {
        [h, w, c] => (*h, *w, *c),
        s => panic!("ss2d: expected [H,W,C], got {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::scan_sequential;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_by_two_paths_match_hand_enumeration() {
        // [[a,b],[c,d]] with row-major positions a=0, b=1, c=2, d=3.
        let p = ScanPaths::new(2, 2);
        assert_eq!(p.forward[0], vec![0, 1, 2, 3]); // a,b,c,d
        assert_eq!(p.forward[1], vec![0, 2, 1, 3]); // a,c,b,d
        assert_eq!(p.forward[2], vec![3, 2, 1, 0]); // d,c,b,a
        assert_eq!(p.forward[3], vec![3, 1, 2, 0]); // d,b,c,a
    }

    #[test]
    fn single_pixel_grid_gives_four_identical_sequences() {
        let x = Tensor::from_vec(vec![0.3, 0.7], &[1, 1, 2]);
        let paths = ScanPaths::new(1, 1);
        for seq in scan_expand(&x, &paths) {
            assert_eq!(seq.shape(), &[1, 2]);
            assert_eq!(seq.to_vec(), vec![0.3, 0.7]);
        }
    }

    #[test]
    fn expand_then_fold_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..5 * 7 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[5, 7, 3]);
        let paths = ScanPaths::new(5, 7);
        for (p, seq) in scan_expand(&x, &paths).iter().enumerate() {
            let back = scan_fold(seq, &paths, p);
            assert_eq!(back.to_vec(), data);
        }
    }

    #[test]
    fn reversed_paths_touch_pixels_at_mirrored_timesteps() {
        let (h, w) = (4, 6);
        let paths = ScanPaths::new(h, w);
        for pos in [0usize, 5, 13, 23] {
            let t1 = paths.inverse[0][pos];
            let t3 = paths.inverse[2][pos];
            assert_eq!(t3, h * w - 1 - t1);
            let t2 = paths.inverse[1][pos];
            let t4 = paths.inverse[3][pos];
            assert_eq!(t4, h * w - 1 - t2);
        }
    }

    #[test]
    fn identity_scans_sum_to_four_x() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..3 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[3, 4, 2]);
        let paths = ScanPaths::new(3, 4);
        // Memoryless identity scan on every path: y = u.
        let y = ss2d_forward_with(&x, &paths, |_, seq| seq.clone());
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - 4.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn skip_only_params_sum_to_four_x() {
        // c_proj = 0 and D = 1 make each path y = u exactly.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let c = 3;
        let mut params = Ss2dParams::new(c, 4, &mut rng);
        for p in params.paths.iter_mut() {
            p.c_proj = Tensor::param(vec![0.0; c * 4], &[c, 4]);
            p.d_skip = Tensor::param(vec![1.0; c], &[c]);
        }
        let data: Vec<f64> = (0..2 * 3 * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[2, 3, c]);
        let y = ss2d_forward(&x, &params);
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_permute_and_scan_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let (h, w, c) = (3, 3, 2);
        let params = Ss2dParams::new(c, 4, &mut rng);
        let data: Vec<f64> = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data.clone(), &[h, w, c]);
        let y = ss2d_forward(&x, &params);

        // Oracle: materialize each permutation by hand, run the reference
        // sequential executor, invert, and sum.
        let paths = ScanPaths::new(h, w);
        let hw = h * w;
        let mut want = vec![0.0; hw * c];
        for p in 0..NUM_PATHS {
            let mut seq = vec![0.0; hw * c];
            for t in 0..hw {
                let src = paths.forward[p][t];
                seq[t * c..(t + 1) * c].copy_from_slice(&data[src * c..(src + 1) * c]);
            }
            let out = scan_sequential(&params.paths[p], &seq, hw);
            for t in 0..hw {
                let dst = paths.forward[p][t];
                for ch in 0..c {
                    want[dst * c + ch] += out.y[t * c + ch];
                }
            }
        }
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_flow_to_all_four_paths() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut params = Ss2dParams::new(2, 4, &mut rng);
        let data: Vec<f64> = (0..4 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(data, &[4, 4, 2]);
        let tape = Tape::new();
        let _g = tape.activate();
        let y = ss2d_forward(&x, &params);
        let loss = (&y * &y).sum_all();
        tape.backward(&loss);
        for (i, p) in params.paths.iter_mut().enumerate() {
            let mut any = false;
            p.for_each_param("p", &mut |_, t| {
                if t.grad().map(|g| g.iter().any(|v| *v != 0.0)).unwrap_or(false) {
                    any = true;
                }
            });
            assert!(any, "no gradient reached path {i}");
        }
    }
}
