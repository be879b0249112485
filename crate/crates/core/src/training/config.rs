use serde::{Deserialize, Serialize};

use super::losses::ContactLossConfig;
use crate::error::{Error, Result};
use crate::motion::PyramidConfig;
use crate::network::NetworkConfig;

/// Weights of the loss terms for one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lambda_con: f64,
    pub lambda_gp: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_rec", self.lambda_rec),
            ("lambda_con", self.lambda_con),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Argument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealingMode {
    /// Constant weights within a level.
    PerLevel,
    /// Linear interpolation from this level's weights toward the next
    /// level's over the level's iterations.
    LinearWithinLevel,
}

/// Per-level adversarial and reconstruction weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealingSchedule {
    pub lambda_adv: Vec<f64>,
    pub lambda_rec: Vec<f64>,
    pub lambda_con: f64,
    pub lambda_gp: f64,
    pub mode: AnnealingMode,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        AnnealingSchedule {
            lambda_adv: vec![5.0, 5.0, 2.5, 1.0],
            lambda_rec: vec![50.0, 75.0, 100.0, 100.0],
            lambda_con: 1.0,
            lambda_gp: 10.0,
            mode: AnnealingMode::PerLevel,
        }
    }
}

impl AnnealingSchedule {
    /// Same weights at every level.
    pub fn constant(levels: usize, lambda_adv: f64, lambda_rec: f64) -> Self {
        AnnealingSchedule {
            lambda_adv: vec![lambda_adv; levels],
            lambda_rec: vec![lambda_rec; levels],
            ..Default::default()
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.lambda_adv.len() != levels || self.lambda_rec.len() != levels {
            return Err(Error::Argument(format!(
                "annealing lists have {} / {} entries for {levels} levels",
                self.lambda_adv.len(),
                self.lambda_rec.len()
            )));
        }
        for l in 0..levels {
            self.at(l).validate()?;
        }
        Ok(())
    }

    fn at(&self, level: usize) -> LossWeights {
        LossWeights {
            lambda_adv: self.lambda_adv[level],
            lambda_rec: self.lambda_rec[level],
            lambda_con: self.lambda_con,
            lambda_gp: self.lambda_gp,
        }
    }

    /// Weights for a zero-based level at `iteration` of `total` iterations.
    pub fn weights(&self, level: usize, iteration: usize, total: usize) -> LossWeights {
        let here = self.at(level);
        match self.mode {
            AnnealingMode::PerLevel => here,
            AnnealingMode::LinearWithinLevel => {
                if level + 1 >= self.lambda_adv.len() || total <= 1 {
                    return here;
                }
                let next = self.at(level + 1);
                let f = iteration as f64 / (total - 1) as f64;
                LossWeights {
                    lambda_adv: here.lambda_adv + f * (next.lambda_adv - here.lambda_adv),
                    lambda_rec: here.lambda_rec + f * (next.lambda_rec - here.lambda_rec),
                    ..here
                }
            }
        }
    }
}

/// Weights of a one-based level under `schedule` (constant within the level).
pub fn annealed_weights(level: usize, schedule: &AnnealingSchedule) -> Result<LossWeights> {
    if level == 0 || level > schedule.lambda_adv.len() {
        return Err(Error::Argument(format!("level {level} outside 1..={}", schedule.lambda_adv.len())));
    }
    Ok(schedule.at(level - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Pyramid shape; stage lengths follow from the clip length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidSettings {
    pub num_stages: usize,
    pub level_grouping: Vec<usize>,
    pub length_ratio: f64,
    pub coarsest_fraction: f64,
}

impl Default for PyramidSettings {
    fn default() -> Self {
        PyramidSettings {
            num_stages: 7,
            level_grouping: vec![2, 2, 2, 1],
            length_ratio: 4.0 / 3.0,
            coarsest_fraction: 0.25,
        }
    }
}

impl PyramidSettings {
    pub fn build(&self, total_frames: usize) -> Result<PyramidConfig> {
        PyramidConfig::new(total_frames, self.num_stages, self.level_grouping.clone(), self.length_ratio, self.coarsest_fraction)
    }
}

/// Everything that shapes a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: String,
    pub batch_size: usize,
    /// Per-level iteration budget in abstract units.
    pub level_iterations: Vec<usize>,
    /// Steps per unit of `level_iterations`.
    pub iteration_multiplier: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub transfer_learning: bool,
    pub annealing: AnnealingSchedule,
    pub network: NetworkConfig,
    pub pyramid: PyramidSettings,
    pub contact: ContactLossConfig,
    /// Lower bound on per-feature standard deviations used for normalization.
    pub feature_std_floor: f64,
    /// Abort when the critic loss magnitude exceeds this.
    pub divergence_threshold: f64,
    /// Abort after this many consecutive iterations with non-finite losses.
    pub max_nonfinite_iterations: usize,
    /// Leave a level early once its last stage's reconstruction loss reaches
    /// this value.
    pub early_stop_rec: Option<f64>,
    /// Generated samples for the metrics report after training (0 skips it).
    pub evaluation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "abl9".into(),
            batch_size: 16,
            level_iterations: vec![210, 210, 105, 70],
            iteration_multiplier: 100.0,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            transfer_learning: true,
            annealing: AnnealingSchedule::default(),
            network: NetworkConfig::default(),
            pyramid: PyramidSettings::default(),
            contact: ContactLossConfig::default(),
            feature_std_floor: 0.1,
            divergence_threshold: 1e4,
            max_nonfinite_iterations: 100,
            early_stop_rec: None,
            evaluation_samples: 0,
        }
    }
}

pub const PRESETS: &[&str] = &["abl9", "baseline", "abl9-smoke", "baseline-smoke", "smoke-baseline-weights"];

impl TrainConfig {
    /// Named configurations.
    ///
    /// * `abl9`: batch 16, level budgets `[210, 210, 105, 70]`, annealed
    ///   weights, transfer on.
    /// * `baseline`: batch 1, `lambda_adv = 1`, `lambda_rec = 10` everywhere,
    ///   15k steps per stage, transfer off.
    /// * `abl9-smoke`: `abl9` scaled to a desk-sized network and 2975 steps.
    /// * `baseline-smoke`: `abl9-smoke` with batch 1 and no transfer.
    /// * `smoke-baseline-weights`: `abl9-smoke` with the baseline weights.
    pub fn preset(name: &str) -> Result<Self> {
        let abl9 = TrainConfig::default();
        let smoke = TrainConfig {
            preset: "abl9-smoke".into(),
            iteration_multiplier: 5.0,
            lr_generator: 1e-3,
            lr_discriminator: 1e-3,
            network: NetworkConfig {
                hidden_per_joint: Some(4),
                ..NetworkConfig::default()
            },
            ..abl9.clone()
        };
        let baseline_weights = AnnealingSchedule::constant(4, 1.0, 10.0);
        match name {
            "abl9" => Ok(abl9),
            "baseline" => Ok(TrainConfig {
                preset: name.into(),
                batch_size: 1,
                level_iterations: vec![300, 300, 300, 150],
                transfer_learning: false,
                annealing: baseline_weights,
                ..abl9
            }),
            "abl9-smoke" => Ok(smoke),
            "baseline-smoke" => Ok(TrainConfig {
                preset: name.into(),
                batch_size: 1,
                transfer_learning: false,
                annealing: baseline_weights,
                ..smoke
            }),
            "smoke-baseline-weights" => Ok(TrainConfig {
                preset: name.into(),
                annealing: baseline_weights,
                ..smoke
            }),
            other => Err(Error::Argument(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
        }
    }

    /// Iterations for a zero-based level.
    pub fn iterations_for_level(&self, level: usize) -> usize {
        (self.level_iterations[level] as f64 * self.iteration_multiplier).round() as usize
    }

    pub fn total_iterations(&self) -> usize {
        (0..self.level_iterations.len()).map(|l| self.iterations_for_level(l)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        let levels = self.pyramid.level_grouping.len();
        if self.level_iterations.len() != levels {
            return Err(Error::Argument(format!(
                "{} level budgets for {levels} levels",
                self.level_iterations.len()
            )));
        }
        if !(self.iteration_multiplier >= 0.0) {
            return Err(Error::Argument("iteration multiplier must be non-negative".into()));
        }
        for lr in [self.lr_generator, self.lr_discriminator] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Argument(format!("learning rate {lr} must be positive")));
            }
        }
        self.annealing.validate(levels)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Argument(format!("invalid TOML config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
