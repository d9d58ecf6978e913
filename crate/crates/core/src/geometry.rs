//! Differentiable rigid-scene geometry: pinhole projection, backprojection,
//! rigid transforms, and bilinear warping.
//!
//! Conventions: pixel origin `(0,0)` at the top-left, pixel centers at integer
//! coordinates, camera looks along +Z. Points behind the camera or samples
//! outside the source frame are flagged invalid and excluded from losses via
//! the returned validity mask rather than raised as errors.

use crate::tensor::ops as t;
use crate::tensor::Tensor;

/// Minimum depth treated as "in front of the camera".
pub const MIN_VALID_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> CameraModel {
        assert!(fx > 0.0 && fy > 0.0, "camera: focal lengths must be positive");
        CameraModel { fx, fy, cx, cy, width, height }
    }

    /// Intrinsics after mirroring the image about its vertical axis.
    pub fn flipped_horizontal(&self) -> CameraModel {
        CameraModel {
            cx: (self.width - 1) as f64 - self.cx,
            ..*self
        }
    }
}

/// Constant per-pixel coordinate fields `u[y,x] = x`, `v[y,x] = y`.
pub struct PixelGrid {
    pub u: Tensor,
    pub v: Tensor,
    pub width: usize,
    pub height: usize,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize) -> PixelGrid {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        PixelGrid {
            u: Tensor::from_vec(u, &[height, width]),
            v: Tensor::from_vec(v, &[height, width]),
            width,
            height,
        }
    }
}

/// A field of 3D points stored as coordinate planes of identical shape.
pub struct Points3 {
    pub x: Tensor,
    pub y: Tensor,
    pub z: Tensor,
}

/// Rigid transform: rotation `r: [3,3]` and translation `t: [3]`, both
/// tape-participating tensors.
pub struct PoseTransform {
    pub r: Tensor,
    pub t: Tensor,
}

impl PoseTransform {
    pub fn identity() -> PoseTransform {
        PoseTransform {
            r: Tensor::from_vec(
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                &[3, 3],
            ),
            t: Tensor::zeros(&[3]),
        }
    }

    pub fn from_rt(r: Tensor, t: Tensor) -> PoseTransform {
        assert_eq!(r.shape(), &[3, 3], "pose: rotation must be 3x3");
        assert_eq!(t.shape(), &[3], "pose: translation must be a 3-vector");
        PoseTransform { r, t }
    }

    /// Constant pose from a row-major 4x4 matrix.
    pub fn from_matrix_values(m: &[f64]) -> PoseTransform {
        assert_eq!(m.len(), 16, "pose: expected 16 matrix entries");
        let r = Tensor::from_vec(
            vec![m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]],
            &[3, 3],
        );
        let t = Tensor::from_vec(vec![m[3], m[7], m[11]], &[3]);
        PoseTransform { r, t }
    }

    /// Homogeneous `[4,4]` matrix; the last row is `[0,0,0,1]` exactly.
    pub fn matrix(&self) -> Tensor {
        let mut rows = Vec::with_capacity(4);
        for i in 0..3 {
            let r_row = t::slice(&self.r, &[(i, i + 1), (0, 3)]).reshape(&[3]);
            let t_i = t::slice(&self.t, &[(i, i + 1)]);
            rows.push(t::concat(&[&r_row, &t_i], 0));
        }
        let last = Tensor::from_vec(vec![0.0, 0.0, 0.0, 1.0], &[4]);
        let all = [&rows[0], &rows[1], &rows[2], &last];
        t::concat(&all, 0).reshape(&[4, 4])
    }

    /// Rigid inverse `[R^T | -R^T t]`, differentiable through both fields.
    pub fn inverse(&self) -> PoseTransform {
        let rt = t::transpose2d(&self.r);
        let t_col = self.t.reshape(&[3, 1]);
        let back = t::matmul(&rt, &t_col).reshape(&[3]);
        PoseTransform {
            r: rt,
            t: t::neg(&back),
        }
    }

    /// Max deviation of `R^T R` from the identity (pure data check).
    pub fn orthonormality_error(&self) -> f64 {
        let rd = self.r.data();
        let mut max = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += rd[k * 3 + i] * rd[k * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                max = max.max((acc - want).abs());
            }
        }
        max
    }

    pub fn rotation_determinant(&self) -> f64 {
        let m = self.r.data();
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }
}

fn scalar_at(x: &Tensor, i: usize) -> Tensor {
    t::slice(x, &[(i, i + 1)])
}

/// Rodrigues' formula on the tape: axis-angle 3-vector to rotation matrix.
/// `R = cos(th) I + sin(th) K + (1 - cos(th)) nn^T` with `n = v/max(|v|,1e-12)`
/// so the axis is exactly unit away from the origin and the zero vector maps
/// to the identity.
pub fn rotation_from_axis_angle(v: &Tensor) -> Tensor {
    assert_eq!(v.shape(), &[3], "axis-angle must be a 3-vector");
    let sq = (v * v).sum_all();
    let theta = sq.sqrt();
    let floor = Tensor::scalar(1e-12);
    let n = &v.clone() / &t::max2(&theta, &floor);
    let nx = scalar_at(&n, 0);
    let ny = scalar_at(&n, 1);
    let nz = scalar_at(&n, 2);
    let c = theta.cos();
    let s = theta.sin();
    let k = c.mul_scalar(-1.0).add_scalar(1.0); // 1 - cos

    let e = |d: &Tensor, off_a: &Tensor, off_b: &Tensor, sign: f64| -> Tensor {
        // (1-c) * a * b + sign * s * d   (generic off-diagonal entry)
        let prod = &(&k * off_a) * off_b;
        let skew = (&s * d).mul_scalar(sign);
        &prod + &skew
    };
    let diag = |a: &Tensor| -> Tensor {
        // c + (1-c) a^2
        &c + &(&k * &(a * a))
    };

    let r00 = diag(&nx);
    let r01 = e(&nz, &nx, &ny, -1.0);
    let r02 = e(&ny, &nx, &nz, 1.0);
    let r10 = e(&nz, &ny, &nx, 1.0);
    let r11 = diag(&ny);
    let r12 = e(&nx, &ny, &nz, -1.0);
    let r20 = e(&ny, &nz, &nx, -1.0);
    let r21 = e(&nx, &nz, &ny, 1.0);
    let r22 = diag(&nz);

    let entries = [&r00, &r01, &r02, &r10, &r11, &r12, &r20, &r21, &r22];
    t::concat(&entries, 0).reshape(&[3, 3])
}

/// Backprojection: `(X,Y,Z) = D * ((u-cx)/fx, (v-cy)/fy, 1)`.
/// `depth` may be any shape matching the grid planes.
pub fn backproject(grid: &PixelGrid, depth: &Tensor, cam: &CameraModel) -> Points3 {
    assert_eq!(
        depth.shape(),
        grid.u.shape(),
        "backproject: depth grid mismatch"
    );
    let xdir = grid.u.add_scalar(-cam.cx).mul_scalar(1.0 / cam.fx);
    let ydir = grid.v.add_scalar(-cam.cy).mul_scalar(1.0 / cam.fy);
    Points3 {
        x: depth * &xdir,
        y: depth * &ydir,
        z: depth.clone(),
    }
}

/// Applies the rigid transform to every point.
pub fn transform_points(p: &Points3, pose: &PoseTransform) -> Points3 {
    let r = |i: usize, j: usize| t::slice(&pose.r, &[(i, i + 1), (j, j + 1)]).reshape(&[1]);
    let tr = |i: usize| scalar_at(&pose.t, i);
    let row = |i: usize| -> Tensor {
        let a = &(&r(i, 0) * &p.x) + &(&r(i, 1) * &p.y);
        let b = &(&r(i, 2) * &p.z) + &tr(i);
        &a + &b
    };
    Points3 {
        x: row(0),
        y: row(1),
        z: row(2),
    }
}

/// Projected pixel coordinates with a per-pixel validity flag.
pub struct Projection {
    pub u: Tensor,
    pub v: Tensor,
    /// False where the point sat at or behind the camera plane.
    pub valid: Vec<bool>,
}

/// Perspective projection `(u,v) = (fx X/Z + cx, fy Y/Z + cy)`. Points with
/// `Z <= MIN_VALID_Z` are flagged invalid and evaluated against a clamped
/// denominator so the forward value stays finite.
pub fn project(p: &Points3, cam: &CameraModel) -> Projection {
    let valid: Vec<bool> = p.z.data().iter().map(|&z| z > MIN_VALID_Z).collect();
    let floor = Tensor::scalar(MIN_VALID_Z);
    let z_safe = t::max2(&p.z, &floor);
    let u = (&p.x / &z_safe).mul_scalar(cam.fx).add_scalar(cam.cx);
    let v = (&p.y / &z_safe).mul_scalar(cam.fy).add_scalar(cam.cy);
    Projection { u, v, valid }
}

/// Full warp: backproject the target grid at `depth`, transform by `pose`,
/// and project into the source camera.
pub fn warp_coords(
    grid: &PixelGrid,
    depth: &Tensor,
    pose: &PoseTransform,
    cam: &CameraModel,
) -> Projection {
    let points = backproject(grid, depth, cam);
    let moved = transform_points(&points, pose);
    project(&moved, cam)
}

/// True where a continuous coordinate lies inside the sampleable area.
pub fn sample_validity(u: &[f64], v: &[f64], width: usize, height: usize) -> Vec<bool> {
    u.iter()
        .zip(v)
        .map(|(&x, &y)| {
            x >= 0.0 && x <= (width - 1) as f64 && y >= 0.0 && y <= (height - 1) as f64
        })
        .collect()
}

/// Differentiable bilinear sampling of `image: [H,W,C]` at the projection's
/// coordinates; returns the resampled image and the combined validity mask
/// (in-frustum and in-bounds).
pub fn bilinear_sample(image: &Tensor, proj: &Projection) -> (Tensor, Vec<bool>) {
    let (h, w) = match image.shape() {
        [h, w, _] => (*h, *w),
        s => panic!("bilinear_sample: expected [H,W,C], got {s:?}"),
    };
    let sampled = t::grid_sample(image, &proj.u, &proj.v);
    let bounds = sample_validity(proj.u.data(), proj.v.data(), w, h);
    let valid = proj
        .valid
        .iter()
        .zip(&bounds)
        .map(|(&a, &b)| a && b)
        .collect();
    (sampled, valid)
}

/// Reconstructs the target view from `source` given target `depth` and the
/// target-to-source pose.
pub fn warp_frame(
    source: &Tensor,
    depth: &Tensor,
    pose: &PoseTransform,
    cam: &CameraModel,
) -> (Tensor, Vec<bool>) {
    let grid = PixelGrid::new(cam.width, cam.height);
    let proj = warp_coords(&grid, depth, pose, cam);
    bilinear_sample(source, &proj)
}
