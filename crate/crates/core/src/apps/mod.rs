//! Composition applications that run a trained model once, without retraining.

pub mod masks;

use ndarray::{concatenate, s, Array2, Axis};

use crate::error::{Error, Result};
use crate::motion::resample::resample_rows;
use crate::motion::MotionTensor;
use crate::network::{derive_seed, Noise, PyramidModel};

pub use masks::{FrameMask, JointMask, MaskSpec};

/// Default level (one-based) at which body-part masks are applied.
pub const DEFAULT_COMPOSE_LEVEL: usize = 2;

fn check_trained(model: &PyramidModel) -> Result<()> {
    if !model.is_trained() {
        return Err(Error::State("model is not fully trained".into()));
    }
    Ok(())
}

/// The reference in model space, resampled to `len` frames.
fn reference_at(model: &PyramidModel, reference: &MotionTensor, len: usize) -> Result<Array2<f64>> {
    model.check_topology(&reference.topology)?;
    let x = model.normalize(reference)?;
    Ok(if x.nrows() == len { x } else { resample_rows(x.view(), len) })
}

/// Last stage (zero-based) of zero-based `level`.
fn level_end(model: &PyramidModel, level: usize) -> Result<usize> {
    if level >= model.pyramid.num_levels() {
        return Err(Error::Argument(format!("model has only {} levels", model.pyramid.num_levels())));
    }
    Ok(model.pyramid.stages_in_level(level).end - 1)
}

/// Generate with the reference overwriting the masked features of the
/// upsampled input to the first stage of one-based `level`.
pub fn body_part_compose(model: &PyramidModel, reference: &MotionTensor, mask: &JointMask, level: usize, seed: u64) -> Result<MotionTensor> {
    check_trained(model)?;
    if level < 2 || level > model.pyramid.num_levels() {
        return Err(Error::Argument(format!(
            "composition level must lie in 2..={}, got {level}",
            model.pyramid.num_levels()
        )));
    }
    let feature_mask = mask.feature_mask(&reference.topology)?;
    if feature_mask.len() != model.feature_dim() {
        return Err(Error::Structural(format!(
            "mask covers {} features, model has {}",
            feature_mask.len(),
            model.feature_dim()
        )));
    }
    let lengths = model.lengths_for(Some(reference.frames()))?;
    let inject = model.pyramid.stages_in_level(level - 1).start;
    let noise = Noise::Seed(seed);
    let below = model.run_stages(0..inject, None, &lengths, &noise)?;
    let mut up = resample_rows(below.view(), lengths[inject]);
    let refx = reference_at(model, reference, lengths[inject])?;
    for (c, keep) in feature_mask.iter().enumerate() {
        if *keep {
            up.column_mut(c).assign(&refx.column(c));
        }
    }
    let z = noise.code(model, inject, lengths[inject])?;
    let mut cur = model.apply_stage(inject, Some(&up), &z)?;
    if inject + 1 < model.num_stages() {
        cur = model.run_stages(inject + 1..model.num_stages(), Some(cur), &lengths, &noise)?;
    }
    model.denormalize(&cur)
}

/// Overwrite the masked frames of `generated` with `reference` rows.
pub fn splice_frames(generated: &Array2<f64>, reference: &Array2<f64>, regenerate: &[bool]) -> Array2<f64> {
    let mut out = reference.clone();
    for (t, r) in regenerate.iter().enumerate() {
        if *r {
            out.row_mut(t).assign(&generated.row(t));
        }
    }
    out
}

/// Regenerate the masked frames of `reference` from noise while keeping the
/// rest. Splicing happens at the output resolution of the first level.
pub fn inpaint(model: &PyramidModel, reference: &MotionTensor, frames: &FrameMask, seed: u64) -> Result<MotionTensor> {
    check_trained(model)?;
    frames.validate()?;
    let lengths = model.lengths_for(Some(reference.frames()))?;
    let splice = level_end(model, 0)?;
    let len = lengths[splice];
    let regenerate = frames.at_resolution(len);
    if regenerate.iter().all(|&r| r) {
        return Err(Error::Degenerate("frame mask regenerates every frame; nothing of the reference is kept".into()));
    }
    if !regenerate.iter().any(|&r| r) {
        return Err(Error::Degenerate("frame mask keeps every frame; nothing to inpaint".into()));
    }
    let noise = Noise::Seed(seed);
    let generated = model.run_stages(0..splice + 1, None, &lengths, &noise)?;
    let spliced = splice_frames(&generated, &reference_at(model, reference, len)?, &regenerate);
    let out = model.run_stages(splice + 1..model.num_stages(), Some(spliced), &lengths, &noise)?;
    model.denormalize(&out)
}

/// A region of interest of a source clip, inserted at `target_start` on the
/// timeline of the first level's output.
#[derive(Debug, Clone)]
pub struct RoiPlacement {
    pub source: MotionTensor,
    /// Half-open frame range of `source`.
    pub roi: (usize, usize),
    pub target_start: usize,
}

/// Frames occupied by `p` at a resolution where the whole output spans
/// `len` of `total_frames` full-resolution frames.
fn placed_span(p: &RoiPlacement, len: usize, total_frames: usize) -> (usize, usize) {
    let roi_len = p.roi.1 - p.roi.0;
    let scaled = ((roi_len as f64 * len as f64 / total_frames as f64).round() as usize).max(1);
    (p.target_start, p.target_start + scaled)
}

/// Generate `total_frames` frames with ROIs of other clips pinned at chosen
/// places; everything else comes from noise.
pub fn place_rois(model: &PyramidModel, placements: &[RoiPlacement], total_frames: usize, seed: u64) -> Result<MotionTensor> {
    check_trained(model)?;
    let lengths = model.lengths_for(Some(total_frames))?;
    let noise = Noise::Seed(seed);
    if placements.is_empty() {
        return model.generate_full(&noise, Some(total_frames));
    }
    let splice = level_end(model, 0)?;
    let len = lengths[splice];
    let mut spans: Vec<(usize, usize, usize)> = Vec::with_capacity(placements.len());
    for (i, p) in placements.iter().enumerate() {
        if p.roi.0 >= p.roi.1 || p.roi.1 > p.source.frames() {
            return Err(Error::Argument(format!(
                "placement {i}: ROI [{}, {}) is empty or exceeds the {}-frame source",
                p.roi.0,
                p.roi.1,
                p.source.frames()
            )));
        }
        let (a, b) = placed_span(p, len, total_frames);
        if b > len {
            return Err(Error::Argument(format!("placement {i} ends at frame {b}, past the {len}-frame timeline")));
        }
        spans.push((a, b, i));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Argument(format!("placements {} and {} overlap", w[0].2, w[1].2)));
        }
    }
    let covered: usize = spans.iter().map(|(a, b, _)| b - a).sum();
    if covered == len {
        return Err(Error::Degenerate("placements cover the whole timeline; nothing is generated".into()));
    }
    let mut base = model.run_stages(0..splice + 1, None, &lengths, &noise)?;
    for &(a, b, i) in &spans {
        let p = &placements[i];
        let roi = p.source.slice_frames(p.roi.0, p.roi.1)?;
        let content = reference_at(model, &roi, b - a)?;
        base.slice_mut(s![a..b, ..]).assign(&content);
    }
    let out = model.run_stages(splice + 1..model.num_stages(), Some(base), &lengths, &noise)?;
    model.denormalize(&out)
}

/// `n` independent samples with seeds derived from `seed`.
pub fn crowd(model: &PyramidModel, n: usize, seed: u64, frames: Option<usize>) -> Result<Vec<MotionTensor>> {
    check_trained(model)?;
    if n == 0 {
        return Err(Error::Argument("crowd size must be at least 1".into()));
    }
    (0..n as u64)
        .map(|i| model.generate_full(&Noise::Seed(derive_seed(seed, i)), frames))
        .collect()
}

/// Extend `reference` by `extra_frames`: the reference's second-level output
/// is continued with generated features, then refined by the upper stages.
pub fn expand(model: &PyramidModel, reference: &MotionTensor, extra_frames: usize, seed: u64) -> Result<MotionTensor> {
    check_trained(model)?;
    if extra_frames == 0 {
        return Err(Error::Argument("expansion needs at least one extra frame".into()));
    }
    let join = level_end(model, 1.min(model.pyramid.num_levels() - 1))?;
    if join + 1 >= model.num_stages() {
        return Err(Error::Argument("model is too shallow to expand".into()));
    }
    let total = reference.frames() + extra_frames;
    let lengths = model.lengths_for(Some(total))?;
    let own = model.lengths_for(Some(reference.frames()))?;
    let noise = Noise::Seed(seed);
    let generated = model.run_stages(0..join + 1, None, &lengths, &noise)?;
    let keep = own[join].min(lengths[join] - 1);
    let head = reference_at(model, reference, keep)?;
    let tail = generated.slice(s![keep.., ..]);
    let joined = concatenate(Axis(0), &[head.view(), tail]).map_err(|e| Error::Structural(e.to_string()))?;
    let out = model.run_stages(join + 1..model.num_stages(), Some(joined), &lengths, &noise)?;
    model.denormalize(&out)
}

/// Impose the style model's fine detail on `content`: the content's coarse
/// version replaces the first stage's output.
pub fn restyle(style_model: &PyramidModel, content: &MotionTensor, noise: &Noise) -> Result<MotionTensor> {
    check_trained(style_model)?;
    style_model.check_topology(&content.topology)?;
    if style_model.num_stages() < 2 {
        return Err(Error::Argument("restyling needs at least two stages".into()));
    }
    let lengths = style_model.lengths_for(Some(content.frames()))?;
    let coarse = reference_at(style_model, content, lengths[0])?;
    let out = style_model.run_stages(1..style_model.num_stages(), Some(coarse), &lengths, noise)?;
    style_model.denormalize(&out)
}
