//! Joint optimization loop for the depth and pose networks.
//!
//! Per sample: augment the triplet, run the depth network on the jittered
//! target and the pose network on both (target, source) pairs, evaluate the
//! masked multi-scale objective against the un-jittered frames, and
//! accumulate gradients; per batch, one Adam step updates both networks.
//! Single-threaded and fully deterministic under a fixed seed.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::augment::{augment, AugmentDraw};
use crate::io::checkpoint::{save_model, CheckpointError};
use crate::io::dataset::FrameTriplet;
use crate::loss::{total_loss, LossConfig};
use crate::net::{DepthNet, PoseNet};
use crate::optim::{lr_schedule, Adam, Joint, OptimError};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    pub lr_drop_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            lr_initial: 1e-4,
            lr_after: 1e-5,
            lr_drop_epoch: 15,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 20,
            seed: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{0}")]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_photo: f64,
    pub loss_smooth: f64,
    pub mask_coverage: f64,
}

pub struct TrainResult {
    pub steps: Vec<StepRecord>,
    pub epoch_mean_total: Vec<f64>,
    pub epoch_mean_photo: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,loss_total,loss_photo,loss_smooth,mask_coverage";

fn csv_row(r: &StepRecord) -> String {
    format!(
        "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
        r.epoch, r.step, r.loss_total, r.loss_photo, r.loss_smooth, r.mask_coverage
    )
}

/// Runs the full loop. When `out_dir` is given, writes `loss.csv`, a
/// checkpoint per epoch, and `final.ckpt` (which exists even for zero-epoch
/// runs, capturing the initialization).
pub fn train(
    dataset: &[FrameTriplet],
    depth: &mut DepthNet,
    pose: &mut PoseNet,
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(tcfg.seed);
    let mut adam = Adam::new(tcfg.beta1, tcfg.beta2);
    let mut steps = Vec::new();
    let mut epoch_mean_total = Vec::with_capacity(tcfg.epochs);
    let mut epoch_mean_photo = Vec::with_capacity(tcfg.epochs);
    let mut checkpoints = Vec::new();
    let mut csv = vec![LOSS_CSV_HEADER.to_string()];
    let mut truncation_warned = false;

    let (min_depth, max_depth) = (depth.config.min_depth, depth.config.max_depth);
    for epoch in 0..tcfg.epochs {
        let lr = lr_schedule(epoch, tcfg.lr_initial, tcfg.lr_after, tcfg.lr_drop_epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        if order.len() % tcfg.batch_size != 0 && !truncation_warned {
            eprintln!(
                "warning: dataset size {} not divisible by batch size {}; \
                 truncating each epoch to {} samples",
                order.len(),
                tcfg.batch_size,
                order.len() - order.len() % tcfg.batch_size
            );
            truncation_warned = true;
        }

        let mut epoch_total = 0.0;
        let mut epoch_photo = 0.0;
        let mut n_steps = 0usize;
        for (step, batch) in order.chunks_exact(tcfg.batch_size).enumerate() {
            Adam::zero_grads(&mut Joint(&mut *depth, &mut *pose));
            let mut batch_total = 0.0;
            let mut batch_photo = 0.0;
            let mut batch_smooth = 0.0;
            let mut batch_mask = 0.0;
            for &idx in batch {
                let sample = &dataset[idx];
                let draw = AugmentDraw::sample(&mut rng);
                let aug = augment(&sample.frames, &sample.cam, &draw);

                let tape = Tape::new();
                let guard = tape.activate();
                let outputs = depth.forward(&aug.net_frames[1]);
                // The pose net always sees frames in chronological order and
                // predicts the forward motion; warping the earlier source
                // needs the inverse. Under steady motion both pairs then pull
                // the shared prediction in the same direction.
                let pose_prev = pose.forward(&aug.net_frames[0], &aug.net_frames[1]).inverse();
                let pose_next = pose.forward(&aug.net_frames[1], &aug.net_frames[2]);
                let loss = total_loss(
                    &aug.loss_frames[1],
                    &[aug.loss_frames[0].clone(), aug.loss_frames[2].clone()],
                    &outputs.disparities,
                    &[pose_prev, pose_next],
                    &aug.cam,
                    lcfg,
                    min_depth,
                    max_depth,
                );
                tape.backward(&loss.total);
                drop(guard);
                batch_total += loss.total.item();
                batch_photo += loss.photo;
                batch_smooth += loss.smooth;
                batch_mask += loss.mask_coverage;
            }
            let scale = 1.0 / tcfg.batch_size as f64;
            adam.step(&mut Joint(&mut *depth, &mut *pose), lr, scale)?;

            let rec = StepRecord {
                epoch,
                step,
                loss_total: batch_total * scale,
                loss_photo: batch_photo * scale,
                loss_smooth: batch_smooth * scale,
                mask_coverage: batch_mask * scale,
            };
            csv.push(csv_row(&rec));
            epoch_total += rec.loss_total;
            epoch_photo += rec.loss_photo;
            n_steps += 1;
            steps.push(rec);
        }
        let denom = n_steps.max(1) as f64;
        epoch_mean_total.push(epoch_total / denom);
        epoch_mean_photo.push(epoch_photo / denom);

        if let Some(dir) = out_dir {
            let path = dir.join(format!("checkpoint_epoch_{epoch:03}.ckpt"));
            save_model(&path, depth, pose)?;
            checkpoints.push(path);
        }
    }

    if let Some(dir) = out_dir {
        let final_path = dir.join("final.ckpt");
        save_model(&final_path, depth, pose)?;
        checkpoints.push(final_path);
        std::fs::write(dir.join("loss.csv"), csv.join("\n") + "\n")?;
    }
    Ok(TrainResult {
        steps,
        epoch_mean_total,
        epoch_mean_photo,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset::triplets_from_scene;
    use crate::net::NetConfig;
    use crate::synthetic::{SceneKind, SyntheticScene};

    fn tiny_dataset() -> Vec<FrameTriplet> {
        let scene = SyntheticScene::generate(SceneKind::Training, 64, 64, 5, 21);
        triplets_from_scene(&scene)
    }

    #[test]
    fn zero_epoch_run_checkpoints_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut depth = DepthNet::new(NetConfig::desk(), 3);
        let mut pose = PoseNet::new(4);
        let mut before = Vec::new();
        depth.for_each_param(&mut |_, t| before.push(t.to_vec()));

        let tcfg = TrainConfig { epochs: 0, ..Default::default() };
        let res = train(
            &tiny_dataset(),
            &mut depth,
            &mut pose,
            &tcfg,
            &LossConfig::default(),
            Some(dir.path()),
        )
        .unwrap();
        assert_eq!(res.checkpoints.len(), 1);

        let (mut loaded, _) = crate::io::checkpoint::load_model(&res.checkpoints[0]).unwrap();
        let mut after = Vec::new();
        loaded.for_each_param(&mut |_, t| after.push(t.to_vec()));
        assert_eq!(before, after);
    }

    #[test]
    fn one_step_updates_both_networks() {
        let mut depth = DepthNet::new(NetConfig::desk(), 5);
        let mut pose = PoseNet::new(6);
        let mut depth_before = Vec::new();
        depth.for_each_param(&mut |_, t| depth_before.push(t.to_vec()));
        let mut pose_before = Vec::new();
        pose.for_each_param(&mut |_, t| pose_before.push(t.to_vec()));

        let tcfg = TrainConfig { epochs: 1, batch_size: 2, ..Default::default() };
        train(
            &tiny_dataset()[..2],
            &mut depth,
            &mut pose,
            &tcfg,
            &LossConfig::default(),
            None,
        )
        .unwrap();

        let mut depth_after = Vec::new();
        depth.for_each_param(&mut |_, t| depth_after.push(t.to_vec()));
        let mut pose_after = Vec::new();
        pose.for_each_param(&mut |_, t| pose_after.push(t.to_vec()));
        let depth_delta: f64 = depth_before
            .iter()
            .flatten()
            .zip(depth_after.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let pose_delta: f64 = pose_before
            .iter()
            .flatten()
            .zip(pose_after.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(depth_delta > 0.0, "depth network did not move");
        assert!(pose_delta > 0.0, "pose network did not move");
    }

    #[test]
    fn same_seed_gives_bit_identical_curves() {
        let run = || {
            let mut depth = DepthNet::new(NetConfig::desk(), 7);
            let mut pose = PoseNet::new(8);
            let tcfg = TrainConfig { epochs: 2, ..Default::default() };
            train(
                &tiny_dataset(),
                &mut depth,
                &mut pose,
                &tcfg,
                &LossConfig::default(),
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.steps.len(), b.steps.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.loss_total.to_bits(), y.loss_total.to_bits());
            assert_eq!(x.loss_photo.to_bits(), y.loss_photo.to_bits());
        }
    }

    #[test]
    fn partial_batches_are_truncated() {
        // 3 triplets with batch size 2: one step per epoch, remainder dropped.
        let mut depth = DepthNet::new(NetConfig::desk(), 11);
        let mut pose = PoseNet::new(12);
        let tcfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let res = train(
            &tiny_dataset()[..3],
            &mut depth,
            &mut pose,
            &tcfg,
            &LossConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(res.steps.len(), 2);
        assert!(res.steps.iter().all(|s| s.step == 0));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut depth = DepthNet::new(NetConfig::desk(), 9);
        let mut pose = PoseNet::new(10);
        assert!(matches!(
            train(
                &[],
                &mut depth,
                &mut pose,
                &TrainConfig::default(),
                &LossConfig::default(),
                None
            ),
            Err(TrainError::EmptyDataset)
        ));
    }
}
