use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest sequence any stage may run at (reflect padding needs a few frames).
pub const MIN_STAGE_FRAMES: usize = 4;

/// Temporal pyramid: how many stages, how they group into levels, and the
/// frame count each stage generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub num_stages: usize,
    pub level_grouping: Vec<usize>,
    pub stage_lengths: Vec<usize>,
    pub length_ratio: f64,
    pub coarsest_fraction: f64,
}

impl PyramidConfig {
    /// Seven stages grouped 2-2-2-1, coarsest stage at a quarter of the clip,
    /// each stage 4/3 longer than the previous.
    pub fn standard(total_frames: usize) -> Result<Self> {
        Self::new(total_frames, 7, vec![2, 2, 2, 1], 4.0 / 3.0, 0.25)
    }

    /// Stage lengths: `round(T * coarsest * ratio^i)`, capped at `T`, last
    /// stage forced to `T`, then walked backwards so every stage is strictly
    /// shorter than the next.
    pub fn new(total_frames: usize, num_stages: usize, level_grouping: Vec<usize>, length_ratio: f64, coarsest_fraction: f64) -> Result<Self> {
        if num_stages == 0 {
            return Err(Error::Argument("pyramid needs at least one stage".into()));
        }
        if !(length_ratio > 1.0) || !(coarsest_fraction > 0.0 && coarsest_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "invalid pyramid ratio {length_ratio} / coarsest fraction {coarsest_fraction}"
            )));
        }
        let t = total_frames as f64;
        let mut lengths: Vec<usize> = (0..num_stages)
            .map(|i| {
                let l = (t * coarsest_fraction * length_ratio.powi(i as i32)).round() as usize;
                l.min(total_frames)
            })
            .collect();
        lengths[num_stages - 1] = total_frames;
        for i in (0..num_stages - 1).rev() {
            lengths[i] = lengths[i].min(lengths[i + 1].saturating_sub(1));
        }
        let cfg = PyramidConfig {
            num_stages,
            level_grouping,
            stage_lengths: lengths,
            length_ratio,
            coarsest_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_grouping.iter().sum::<usize>() != self.num_stages || self.level_grouping.contains(&0) {
            return Err(Error::Structural(format!(
                "level grouping {:?} does not partition {} stages",
                self.level_grouping, self.num_stages
            )));
        }
        if self.stage_lengths.len() != self.num_stages {
            return Err(Error::Structural("one length per stage required".into()));
        }
        if self.stage_lengths[0] < MIN_STAGE_FRAMES {
            return Err(Error::Argument(format!(
                "coarsest stage has {} frames, need at least {MIN_STAGE_FRAMES}",
                self.stage_lengths[0]
            )));
        }
        if self.stage_lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Structural(format!(
                "stage lengths must strictly increase: {:?}",
                self.stage_lengths
            )));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        *self.stage_lengths.last().expect("validated pyramid")
    }

    pub fn num_levels(&self) -> usize {
        self.level_grouping.len()
    }

    /// Zero-based level of a zero-based stage.
    pub fn level_of(&self, stage: usize) -> usize {
        let mut acc = 0;
        for (l, &n) in self.level_grouping.iter().enumerate() {
            acc += n;
            if stage < acc {
                return l;
            }
        }
        panic!("stage {stage} outside pyramid of {} stages", self.num_stages)
    }

    /// Zero-based stage indices belonging to a zero-based level.
    pub fn stages_in_level(&self, level: usize) -> std::ops::Range<usize> {
        let start: usize = self.level_grouping[..level].iter().sum();
        start..start + self.level_grouping[level]
    }

    /// Stage lengths rescaled proportionally for a different output length.
    pub fn scaled_lengths(&self, total: usize) -> Result<Vec<usize>> {
        let base = self.total_frames();
        if total == base {
            return Ok(self.stage_lengths.clone());
        }
        if total < MIN_STAGE_FRAMES {
            return Err(Error::Argument(format!("requested {total} frames, need at least {MIN_STAGE_FRAMES}")));
        }
        let mut out: Vec<usize> = self
            .stage_lengths
            .iter()
            .map(|&l| ((l as f64 * total as f64 / base as f64).round() as usize).max(MIN_STAGE_FRAMES))
            .collect();
        *out.last_mut().expect("non-empty") = total;
        Ok(out)
    }
}
