//! File formats shared by the CLI and the service.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use oneshot_motion::motion::{from_feature_tensor, parse_bvh, to_feature_tensor, write_bvh, MotionJson, MotionTensor};
use oneshot_motion::training::TrainConfig;
use sha2::{Digest, Sha256};

/// Whether a path should be read or written as MotionJSON rather than BVH.
fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn load_motion(path: &Path) -> Result<MotionTensor> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let motion = if is_json(path) {
        MotionJson::from_str(&text)?.to_motion()?
    } else {
        parse_bvh(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(to_feature_tensor(&motion)?)
}

pub fn motion_json(t: &MotionTensor) -> Result<MotionJson> {
    Ok(MotionJson::from(&from_feature_tensor(t)?))
}

pub fn motion_from_json(j: &MotionJson) -> oneshot_motion::Result<MotionTensor> {
    to_feature_tensor(&j.to_motion()?)
}

/// Serialized form of `t` for `path`'s format.
pub fn encode_motion(t: &MotionTensor, path: &Path) -> Result<String> {
    if is_json(path) {
        Ok(serde_json::to_string_pretty(&motion_json(t)?)?)
    } else {
        Ok(write_bvh(&from_feature_tensor(t)?))
    }
}

pub fn write_motion(t: &MotionTensor, path: &Path) -> Result<()> {
    let text = encode_motion(t, path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Content address of a MotionJSON payload.
pub fn motion_id(j: &MotionJson) -> String {
    let bytes = serde_json::to_vec(j).expect("motion serializes");
    hex::encode(&Sha256::digest(&bytes)[..12])
}

/// Training configuration from a TOML or JSON file.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if is_json(path) {
        Ok(TrainConfig::from_json(&text)?)
    } else {
        Ok(TrainConfig::from_toml(&text)?)
    }
}

/// Exclusive right to train into one directory, held as a lock file that is
/// removed on drop.
#[derive(Debug)]
pub struct TrainingLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".training.lock";

impl TrainingLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(TrainingLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("another training job holds {}", path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for TrainingLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}
