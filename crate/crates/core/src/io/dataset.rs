//! Frame-triplet datasets: in-memory synthetic scenes and on-disk scene
//! directories (PPM frames, optional PFM depths, intrinsics, poses).

use std::path::Path;

use thiserror::Error;

use crate::geometry::CameraModel;
use crate::io::{pfm, ppm};
use crate::synthetic::SyntheticScene;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Ppm(#[from] ppm::PpmError),
    #[error("{0}")]
    Pfm(#[from] pfm::PfmError),
    #[error("scene directory {0}: missing intrinsics.txt")]
    MissingIntrinsics(String),
    #[error("intrinsics.txt: {0}")]
    BadIntrinsics(String),
    #[error("scene has {0} frames; at least 3 are needed for triplets")]
    TooFewFrames(usize),
    #[error("frame {index} is {found_w}x{found_h}, expected {want_w}x{want_h}")]
    InconsistentFrames {
        index: usize,
        found_w: usize,
        found_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// One training sample: frames (t-1, t, t+1) sharing intrinsics, plus the
/// center frame's ground-truth depth when known.
pub struct FrameTriplet {
    pub frames: [Tensor; 3],
    pub cam: CameraModel,
    pub gt_depth: Option<Tensor>,
}

/// Consecutive triplets of a synthetic scene (exact f64 frames).
pub fn triplets_from_scene(scene: &SyntheticScene) -> Vec<FrameTriplet> {
    assert!(scene.frames.len() >= 3, "need at least 3 frames");
    (1..scene.frames.len() - 1)
        .map(|t| FrameTriplet {
            frames: [
                scene.image_tensor(t - 1),
                scene.image_tensor(t),
                scene.image_tensor(t + 1),
            ],
            cam: scene.cam,
            gt_depth: Some(scene.depth_tensor(t)),
        })
        .collect()
}

/// Writes a scene as a directory: `intrinsics.txt`, `poses.csv` (row-major
/// camera-to-world per frame), `frame_%04d.ppm`, `depth_%04d.pfm`.
pub fn write_scene_dir(scene: &SyntheticScene, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let cam = &scene.cam;
    std::fs::write(
        dir.join("intrinsics.txt"),
        format!(
            "{:.17e} {:.17e} {:.17e} {:.17e} {} {}\n",
            cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
        ),
    )?;
    let mut poses = String::from("frame,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n");
    for (i, f) in scene.frames.iter().enumerate() {
        poses.push_str(&format!("{i}"));
        for row in 0..3 {
            for col in 0..3 {
                poses.push_str(&format!(",{:.17e}", f.rotation[row][col]));
            }
            poses.push_str(&format!(",{:.17e}", f.position[row]));
        }
        poses.push('\n');
        let img = scene.image_tensor(i);
        ppm::write_ppm(
            &dir.join(format!("frame_{i:04}.ppm")),
            cam.width,
            cam.height,
            &ppm::tensor_to_rgb8(&img),
        )?;
        let depth32: Vec<f32> = scene.frames[i].depth.iter().map(|&d| d as f32).collect();
        pfm::write_pfm(
            &dir.join(format!("depth_{i:04}.pfm")),
            cam.width,
            cam.height,
            &depth32,
        )?;
    }
    std::fs::write(dir.join("poses.csv"), poses)?;
    Ok(())
}

/// Loads a scene directory into triplets. Depth maps are attached when the
/// matching `depth_%04d.pfm` exists.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<FrameTriplet>, DataError> {
    let intr_path = dir.join("intrinsics.txt");
    if !intr_path.exists() {
        return Err(DataError::MissingIntrinsics(dir.display().to_string()));
    }
    let text = std::fs::read_to_string(&intr_path)?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| DataError::BadIntrinsics(format!("unparseable token '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() != 6 {
        return Err(DataError::BadIntrinsics(format!(
            "expected 6 values, found {}",
            vals.len()
        )));
    }
    let cam = CameraModel::new(
        vals[0],
        vals[1],
        vals[2],
        vals[3],
        vals[4] as usize,
        vals[5] as usize,
    );

    let mut frame_paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_") && n.ends_with(".ppm"))
                .unwrap_or(false)
        })
        .collect();
    frame_paths.sort();
    if frame_paths.len() < 3 {
        return Err(DataError::TooFewFrames(frame_paths.len()));
    }

    let mut frames = Vec::with_capacity(frame_paths.len());
    let mut depths = Vec::with_capacity(frame_paths.len());
    for (i, p) in frame_paths.iter().enumerate() {
        let (w, h, rgb) = ppm::read_ppm(p)?;
        if (w, h) != (cam.width, cam.height) {
            return Err(DataError::InconsistentFrames {
                index: i,
                found_w: w,
                found_h: h,
                want_w: cam.width,
                want_h: cam.height,
            });
        }
        frames.push(ppm::rgb8_to_tensor(&rgb, w, h));
        let depth_path = dir.join(
            p.file_name()
                .and_then(|n| n.to_str())
                .unwrap()
                .replace("frame_", "depth_")
                .replace(".ppm", ".pfm"),
        );
        depths.push(if depth_path.exists() {
            let (dw, dh, d) = pfm::read_pfm(&depth_path)?;
            if (dw, dh) != (cam.width, cam.height) {
                return Err(DataError::InconsistentFrames {
                    index: i,
                    found_w: dw,
                    found_h: dh,
                    want_w: cam.width,
                    want_h: cam.height,
                });
            }
            Some(Tensor::from_vec(
                d.iter().map(|&v| v as f64).collect(),
                &[cam.height, cam.width],
            ))
        } else {
            None
        });
    }

    Ok((1..frames.len() - 1)
        .map(|t| FrameTriplet {
            frames: [
                frames[t - 1].clone(),
                frames[t].clone(),
                frames[t + 1].clone(),
            ],
            cam,
            gt_depth: depths[t].clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SceneKind;

    #[test]
    fn scene_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SyntheticScene::generate(SceneKind::Training, 32, 32, 5, 3);
        write_scene_dir(&scene, dir.path()).unwrap();
        let triplets = load_scene_dir(dir.path()).unwrap();
        assert_eq!(triplets.len(), 3);
        assert_eq!(triplets[0].cam, scene.cam);
        assert!(triplets[0].gt_depth.is_some());
        // 8-bit quantization bounds the image round-trip error.
        let orig = scene.image_tensor(1);
        let loaded = &triplets[0].frames[1];
        for (a, b) in orig.data().iter().zip(loaded.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
        // Depth survives at f32 precision.
        let d_orig = scene.depth_tensor(1);
        let d_loaded = triplets[0].gt_depth.as_ref().unwrap();
        for (a, b) in d_orig.data().iter().zip(d_loaded.data()) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn missing_intrinsics_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_scene_dir(dir.path()),
            Err(DataError::MissingIntrinsics(_))
        ));
    }

    #[test]
    fn too_few_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SyntheticScene::generate(SceneKind::StaticCamera, 16, 16, 2, 0);
        write_scene_dir(&scene, dir.path()).unwrap();
        assert!(matches!(
            load_scene_dir(dir.path()),
            Err(DataError::TooFewFrames(2))
        ));
    }
}
