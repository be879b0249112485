#![allow(dead_code)]

use std::path::{Path, PathBuf};

use oneshot_motion::motion::{to_feature_tensor, write_bvh, MotionTensor};
use oneshot_motion::network::save_checkpoint_file;
use oneshot_motion::synthetic;
use oneshot_motion::training::{train_all, TrainConfig};

pub fn walk() -> oneshot_motion::motion::SkeletonMotion {
    synthetic::walk_cycle(&synthetic::GaitParams::default(), 96)
}

pub fn clip() -> MotionTensor {
    to_feature_tensor(&walk()).unwrap()
}

/// A few iterations per level: enough to mark every stage trained.
pub fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::preset("abl9-smoke").unwrap();
    cfg.batch_size = 2;
    cfg.level_iterations = vec![2; 4];
    cfg.iteration_multiplier = 1.0;
    cfg
}

/// Directory holding `walk.ckpt` (a tiny model) and `walk.bvh`.
pub fn model_dir() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train_all(&clip(), &tiny_config()).unwrap();
    let ckpt = dir.path().join("walk.ckpt");
    save_checkpoint_file(&model, &ckpt).unwrap();
    let bvh = dir.path().join("walk.bvh");
    std::fs::write(&bvh, write_bvh(&walk())).unwrap();
    (dir, ckpt, bvh)
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}
