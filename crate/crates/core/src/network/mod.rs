//! Skeleton-aware generators and discriminators arranged in a temporal
//! pyramid, hierarchical generation and checkpoints.

pub mod checkpoint;
pub mod conv;

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::resample::{resample_rows, Resampler};
use crate::motion::{build_pyramid_targets, MotionTensor, PyramidConfig, SkeletonTopology};

pub use checkpoint::{load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, CHECKPOINT_VERSION};
pub use conv::{feature_nodes, Conv1d, ConvGrads, ConvStack, SeqBatch, SkeletonConvSpec, StackCache, StackGrads};

/// Capacity and shape knobs shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Skeleton graph distance defining a joint's convolution neighborhood.
    pub neighbor_radius: usize,
    pub generator_kernel: usize,
    pub discriminator_kernel: usize,
    /// Hidden channels per joint; `None` picks the smallest multiple of 8
    /// per joint whose total reaches twice the feature width.
    pub hidden_per_joint: Option<usize>,
    pub layers: usize,
    pub negative_slope: f64,
    /// Scale applied to the freshly initialized last generator layer.
    pub output_init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            neighbor_radius: 2,
            generator_kernel: 5,
            discriminator_kernel: 3,
            hidden_per_joint: None,
            layers: 4,
            negative_slope: 0.2,
            output_init_scale: 0.1,
        }
    }
}

impl NetworkConfig {
    pub fn hidden_per_joint(&self, topo: &SkeletonTopology) -> usize {
        match self.hidden_per_joint {
            Some(h) => h.max(1),
            None => {
                let j = topo.joint_count();
                let f = topo.feature_dim();
                8 * (2 * f).div_ceil(8 * j)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Argument("networks need at least two layers".into()));
        }
        for k in [self.generator_kernel, self.discriminator_kernel] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Argument(format!("temporal kernel {k} must be odd")));
            }
        }
        Ok(())
    }

    /// Temporal receptive field of the patch discriminator, in frames.
    pub fn discriminator_receptive_field(&self) -> usize {
        self.layers * (self.discriminator_kernel - 1) + 1
    }
}

fn layer_specs(topo: &SkeletonTopology, cfg: &NetworkConfig, kernel: usize, output_nodes: Vec<Option<usize>>) -> Vec<SkeletonConvSpec> {
    let neighbors = SkeletonConvSpec::neighborhoods(topo, cfg.neighbor_radius);
    let h = cfg.hidden_per_joint(topo);
    let hidden: Vec<usize> = (0..topo.joint_count() * h).map(|c| c / h).collect();
    let features = feature_nodes(topo);
    (0..cfg.layers)
        .map(|l| {
            let in_nodes = if l == 0 { features.clone() } else { hidden.clone() };
            let out_nodes = if l + 1 == cfg.layers {
                output_nodes.clone()
            } else {
                hidden.iter().map(|&n| Some(n)).collect()
            };
            SkeletonConvSpec {
                neighbor_lists: neighbors.clone(),
                temporal_kernel: kernel,
                in_nodes,
                out_nodes,
            }
        })
        .collect()
}

/// Generator: features in, features out.
pub fn build_generator(topo: &SkeletonTopology, cfg: &NetworkConfig, rng: &mut impl Rng) -> ConvStack {
    let out = feature_nodes(topo).into_iter().map(Some).collect();
    let mut layers: Vec<Conv1d> = layer_specs(topo, cfg, cfg.generator_kernel, out)
        .iter()
        .map(|s| Conv1d::new(s, rng))
        .collect();
    let last = layers.last_mut().expect("at least two layers");
    last.weight *= cfg.output_init_scale;
    last.bias *= cfg.output_init_scale;
    ConvStack {
        layers,
        negative_slope: cfg.negative_slope,
    }
}

/// Patch discriminator: features in, one score per frame out. The last
/// layer reads every joint.
pub fn build_discriminator(topo: &SkeletonTopology, cfg: &NetworkConfig, rng: &mut impl Rng) -> ConvStack {
    ConvStack {
        layers: layer_specs(topo, cfg, cfg.discriminator_kernel, vec![None])
            .iter()
            .map(|s| Conv1d::new(s, rng))
            .collect(),
        negative_slope: cfg.negative_slope,
    }
}

/// Per-feature z-score normalization fitted on the training clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl FeatureNormalizer {
    pub fn identity(width: usize) -> Self {
        FeatureNormalizer {
            mean: Array1::zeros(width),
            std: Array1::ones(width),
        }
    }

    /// Column statistics, with standard deviations raised to at least `floor`
    /// so near-constant channels are not blown up.
    pub fn fit(x: &Array2<f64>, floor: f64) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty clip");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(floor));
        FeatureNormalizer { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std + &self.mean
    }
}

/// One pyramid stage: a generator/discriminator pair at a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct StageNetwork {
    pub index: usize,
    pub level: usize,
    pub generator: ConvStack,
    pub discriminator: ConvStack,
    pub noise_amplitude: f64,
    pub trained: bool,
}

/// Where the per-stage noise codes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Codes drawn from a master seed, one independent stream per stage.
    Seed(u64),
    /// Explicit codes, one `len x F` matrix per stage.
    Codes(Vec<Array2<f64>>),
    /// The stored reconstruction code at stage 1, zeros after.
    Reconstruction,
    /// Zeros everywhere.
    Zero,
}

/// I.i.d. standard normal code for `stage` under `seed`.
pub fn stage_noise(seed: u64, stage: usize, len: usize, width: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64 + 1);
    Array2::from_shape_simple_fn((len, width), || rng.sample(StandardNormal))
}

/// Reproducible child seed `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Noise {
    pub fn code(&self, model: &PyramidModel, stage: usize, len: usize) -> Result<Array2<f64>> {
        let width = model.feature_dim();
        match self {
            Noise::Seed(seed) => Ok(stage_noise(*seed, stage, len, width)),
            Noise::Codes(codes) => {
                let c = codes
                    .get(stage)
                    .ok_or_else(|| Error::Argument(format!("no noise code for stage {}", stage + 1)))?;
                if c.dim() != (len, width) {
                    return Err(Error::Structural(format!(
                        "stage {} noise code is {:?}, expected {:?}",
                        stage + 1,
                        c.dim(),
                        (len, width)
                    )));
                }
                Ok(c.clone())
            }
            Noise::Reconstruction if stage == 0 => {
                let z = &model.reconstruction_code;
                Ok(if z.nrows() == len { z.clone() } else { resample_rows(z.view(), len) })
            }
            Noise::Reconstruction | Noise::Zero => Ok(Array2::zeros((len, width))),
        }
    }
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub preset: String,
    pub iterations_per_level: Vec<usize>,
    /// Training configuration as JSON, if the model was trained.
    pub config: Option<serde_json::Value>,
}

/// The full stage hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel {
    pub topology: Arc<SkeletonTopology>,
    pub pyramid: PyramidConfig,
    pub network: NetworkConfig,
    pub normalizer: FeatureNormalizer,
    pub stages: Vec<StageNetwork>,
    /// Fixed stage-1 code whose chain reconstructs the training clip.
    pub reconstruction_code: Array2<f64>,
    pub frame_rate: f64,
    pub metadata: TrainingMetadata,
}

impl PyramidModel {
    /// Freshly initialized, untrained model.
    pub fn new(
        topology: Arc<SkeletonTopology>,
        pyramid: PyramidConfig,
        network: NetworkConfig,
        normalizer: FeatureNormalizer,
        frame_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        pyramid.validate()?;
        network.validate()?;
        topology.validate()?;
        let f = topology.feature_dim();
        if normalizer.width() != f {
            return Err(Error::Structural(format!("normalizer width {} != feature width {f}", normalizer.width())));
        }
        let stages = (0..pyramid.num_stages)
            .map(|i| StageNetwork {
                index: i,
                level: pyramid.level_of(i),
                generator: build_generator(&topology, &network, rng),
                discriminator: build_discriminator(&topology, &network, rng),
                noise_amplitude: if i == 0 { 1.0 } else { 0.0 },
                trained: false,
            })
            .collect();
        let t1 = pyramid.stage_lengths[0];
        let reconstruction_code = Array2::from_shape_simple_fn((t1, f), || rng.sample(StandardNormal));
        Ok(PyramidModel {
            topology,
            pyramid,
            network,
            normalizer,
            stages,
            reconstruction_code,
            frame_rate,
            metadata: TrainingMetadata::default(),
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.topology.feature_dim()
    }

    pub fn trained_mask(&self) -> Vec<bool> {
        self.stages.iter().map(|s| s.trained).collect()
    }

    pub fn noise_amplitudes(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.noise_amplitude).collect()
    }

    pub fn is_trained(&self) -> bool {
        self.stages.iter().all(|s| s.trained)
    }

    fn require_trained(&self, stages: Range<usize>) -> Result<()> {
        for s in stages {
            if !self.stages[s].trained {
                return Err(Error::State(format!("stage {} is not trained", s + 1)));
            }
        }
        Ok(())
    }

    /// Normalized features of a clip on this model's skeleton.
    pub fn normalize(&self, t: &MotionTensor) -> Result<Array2<f64>> {
        self.check_topology(&t.topology)?;
        Ok(self.normalizer.normalize(&t.features))
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Result<MotionTensor> {
        MotionTensor::new(self.normalizer.denormalize(x), self.topology.clone(), self.frame_rate)
    }

    pub fn check_topology(&self, other: &SkeletonTopology) -> Result<()> {
        let a = &self.topology;
        if a.parents != other.parents || a.contact_joints != other.contact_joints {
            return Err(Error::Structural(format!(
                "skeleton with {} joints / contacts {:?} does not match the model ({} joints / contacts {:?})",
                other.joint_count(),
                other.contact_joints,
                a.joint_count(),
                a.contact_joints
            )));
        }
        Ok(())
    }

    /// Stage lengths for an output of `total` frames (`None`: training length).
    pub fn lengths_for(&self, total: Option<usize>) -> Result<Vec<usize>> {
        match total {
            None => Ok(self.pyramid.stage_lengths.clone()),
            Some(t) => self.pyramid.scaled_lengths(t),
        }
    }

    /// One residual stage on an input already at the stage's length.
    /// Stage 1 ignores `x` and maps noise alone.
    pub fn apply_stage(&self, stage: usize, x: Option<&Array2<f64>>, z: &Array2<f64>) -> Result<Array2<f64>> {
        let s = &self.stages[stage];
        match (stage, x) {
            (0, _) => {
                let input = z * s.noise_amplitude;
                Ok(s.generator.forward(&SeqBatch::single(input))?.0.data)
            }
            (_, None) => Err(Error::Structural(format!("stage {} needs an input sequence", stage + 1))),
            (_, Some(x)) => {
                if x.dim() != z.dim() {
                    return Err(Error::Structural(format!(
                        "stage {} input {:?} and noise {:?} differ in shape",
                        stage + 1,
                        x.dim(),
                        z.dim()
                    )));
                }
                let mut input = x.clone();
                input.scaled_add(s.noise_amplitude, z);
                let branch = s.generator.forward(&SeqBatch::single(input))?.0.data;
                Ok(x + &branch)
            }
        }
    }

    /// One stage of the hierarchy at training lengths: `prev` is the previous
    /// stage's output (none for stage 1).
    pub fn generate_stage(&self, stage: usize, prev: Option<&Array2<f64>>, z: &Array2<f64>) -> Result<Array2<f64>> {
        let len = self.pyramid.stage_lengths[stage];
        if z.nrows() != len {
            return Err(Error::Structural(format!("stage {} noise has {} frames, expected {len}", stage + 1, z.nrows())));
        }
        match (stage, prev) {
            (0, Some(_)) => Err(Error::Structural("stage 1 takes no previous sequence".into())),
            (0, None) => self.apply_stage(0, None, z),
            (_, None) => Err(Error::Structural(format!("stage {} needs the previous stage output", stage + 1))),
            (_, Some(p)) => {
                let expected = self.pyramid.stage_lengths[stage - 1];
                if p.nrows() != expected {
                    return Err(Error::Structural(format!(
                        "stage {} expects a {expected}-frame input, got {}",
                        stage + 1,
                        p.nrows()
                    )));
                }
                let up = resample_rows(p.view(), len);
                self.apply_stage(stage, Some(&up), z)
            }
        }
    }

    /// Run `stages` in order. `input` is the output of the stage before the
    /// range (ignored when the range starts at stage 1); `lengths` holds one
    /// length per stage of the whole pyramid.
    pub fn run_stages(&self, stages: Range<usize>, input: Option<Array2<f64>>, lengths: &[usize], noise: &Noise) -> Result<Array2<f64>> {
        let mut cur = input;
        for s in stages {
            let len = lengths[s];
            let z = noise.code(self, s, len)?;
            let up = match (s, cur.as_ref()) {
                (0, _) => None,
                (_, Some(p)) => Some(resample_rows(p.view(), len)),
                (_, None) => return Err(Error::Structural(format!("stage {} needs an input sequence", s + 1))),
            };
            cur = Some(self.apply_stage(s, up.as_ref(), &z)?);
        }
        cur.ok_or_else(|| Error::Argument("empty stage range".into()))
    }

    /// Every stage output (normalized) of one full pass.
    pub fn generate_all_stages(&self, noise: &Noise, length_override: Option<usize>) -> Result<Vec<Array2<f64>>> {
        let lengths = self.lengths_for(length_override)?;
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.num_stages());
        for s in 0..self.num_stages() {
            let prev = outs.last().cloned();
            outs.push(self.run_stages(s..s + 1, prev, &lengths, noise)?);
        }
        Ok(outs)
    }

    /// Normalized final output.
    pub fn generate_normalized(&self, noise: &Noise, length_override: Option<usize>) -> Result<Array2<f64>> {
        self.require_trained(0..self.num_stages())?;
        let lengths = self.lengths_for(length_override)?;
        self.run_stages(0..self.num_stages(), None, &lengths, noise)
    }

    /// Full-resolution motion features.
    pub fn generate_full(&self, noise: &Noise, length_override: Option<usize>) -> Result<MotionTensor> {
        let x = self.generate_normalized(noise, length_override)?;
        self.denormalize(&x)
    }

    /// SHA-256 over every generator and discriminator parameter of `stages`.
    pub fn weights_hash(&self, stages: Range<usize>) -> String {
        let mut h = Sha256::new();
        for s in &self.stages[stages] {
            for net in [&s.generator, &s.discriminator] {
                for l in &net.layers {
                    for v in l.weight.iter().chain(l.bias.iter()) {
                        h.update(v.to_le_bytes());
                    }
                }
            }
            h.update(s.noise_amplitude.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn parameter_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.generator.parameter_count() + s.discriminator.parameter_count())
            .sum()
    }

    /// Whether every stage is at least twice as long as the discriminator's
    /// receptive field.
    pub fn receptive_field_ok(&self) -> bool {
        let rf = self.network.discriminator_receptive_field();
        self.pyramid.stage_lengths.iter().all(|&t| 2 * rf < t)
    }
}

/// `sigma_1 = 1`; later stages use the RMSE between the upsampled previous
/// target and the current one, clipped so amplitudes never increase.
pub fn compute_noise_amplitudes(targets: &[Array2<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        if i == 0 {
            out.push(1.0);
            continue;
        }
        let up = Resampler::new(targets[i - 1].nrows(), t.nrows()).apply(targets[i - 1].view());
        let rmse = ((&up - t).mapv(|v| v * v).sum() / t.len() as f64).sqrt();
        out.push(rmse.min(out[i - 1]));
    }
    out
}

/// Normalized pyramid targets of a clip.
pub fn normalized_targets(clip: &MotionTensor, pyramid: &PyramidConfig, normalizer: &FeatureNormalizer) -> Result<Vec<Array2<f64>>> {
    Ok(build_pyramid_targets(clip, pyramid)?
        .iter()
        .map(|t| normalizer.normalize(&t.features))
        .collect())
}

/// Resample every sample of a batch.
pub fn resample_batch(x: &SeqBatch, len: usize) -> SeqBatch {
    if x.len == len {
        return x.clone();
    }
    let r = Resampler::new(x.len, len);
    let parts: Vec<Array2<f64>> = (0..x.batch()).map(|b| r.apply(x.sample(b))).collect();
    SeqBatch::from_samples(&parts)
}

/// Adjoint of [`resample_batch`] from `x.len` back to `len` frames.
pub fn resample_batch_transpose(g: &SeqBatch, len: usize) -> SeqBatch {
    if g.len == len {
        return g.clone();
    }
    let r = Resampler::new(len, g.len);
    let parts: Vec<Array2<f64>> = (0..g.batch()).map(|b| r.apply_transpose(g.sample(b))).collect();
    SeqBatch::from_samples(&parts)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::motion::to_feature_tensor;
    use crate::synthetic;

    pub(crate) fn small_model(seed: u64) -> (PyramidModel, MotionTensor) {
        let walk = synthetic::walk_cycle(&synthetic::GaitParams::default(), 48);
        let clip = to_feature_tensor(&walk).unwrap();
        let pyramid = PyramidConfig::standard(48).unwrap();
        let cfg = NetworkConfig {
            hidden_per_joint: Some(2),
            ..NetworkConfig::default()
        };
        let norm = FeatureNormalizer::fit(&clip.features, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = PyramidModel::new(clip.topology.clone(), pyramid, cfg, norm, clip.frame_rate, &mut rng).unwrap();
        for s in &mut model.stages {
            s.trained = true;
            s.noise_amplitude = if s.index == 0 { 1.0 } else { 0.3 };
        }
        (model, clip)
    }

    #[test]
    fn default_hidden_width_rule() {
        let topo = synthetic::biped_topology();
        // F = 53, J = 8: 2F = 106, smallest multiple of 64 above is 128.
        assert_eq!(NetworkConfig::default().hidden_per_joint(&topo) * 8, 128);
    }

    #[test]
    fn neighbor_lists_are_reflexive_and_symmetric() {
        let topo = synthetic::biped_topology();
        let n = SkeletonConvSpec::neighborhoods(&topo, 2);
        for (j, list) in n.iter().enumerate() {
            assert!(list.contains(&j));
            for &k in list {
                assert!(n[k].contains(&j));
            }
        }
        // LeftFoot is three edges from the spine.
        assert!(!n[4].contains(&1));
        assert!(n[4].contains(&2));
    }

    #[test]
    fn zero_branch_is_the_upsampler() {
        let (mut model, _) = small_model(1);
        for s in &mut model.stages {
            let last = s.generator.layers.last_mut().unwrap();
            last.weight.fill(0.0);
            last.bias.fill(0.0);
            s.noise_amplitude = 0.0;
        }
        let prev = Array2::from_shape_fn((model.pyramid.stage_lengths[2], model.feature_dim()), |(t, c)| ((t * 7 + c) % 11) as f64 * 0.1);
        let z = stage_noise(4, 3, model.pyramid.stage_lengths[3], model.feature_dim());
        let out = model.generate_stage(3, Some(&prev), &z).unwrap();
        let up = resample_rows(prev.view(), model.pyramid.stage_lengths[3]);
        assert_eq!(out, up);
    }

    #[test]
    fn generation_is_deterministic() {
        let (model, _) = small_model(2);
        let a = model.generate_full(&Noise::Seed(9), None).unwrap();
        let b = model.generate_full(&Noise::Seed(9), None).unwrap();
        assert_eq!(a, b);
        let c = model.generate_full(&Noise::Seed(9), Some(48)).unwrap();
        assert_eq!(a, c);
        let d = model.generate_full(&Noise::Seed(10), None).unwrap();
        assert_ne!(a, d);
        let z = stage_noise(3, 0, model.pyramid.stage_lengths[0], model.feature_dim());
        assert_eq!(model.generate_stage(0, None, &z).unwrap(), model.generate_stage(0, None, &z).unwrap());
    }

    #[test]
    fn length_override_scales_output() {
        let (model, _) = small_model(3);
        let out = model.generate_full(&Noise::Seed(1), Some(72)).unwrap();
        assert_eq!(out.frames(), 72);
    }

    #[test]
    fn wrong_previous_length_is_structural() {
        let (model, _) = small_model(4);
        let prev = Array2::zeros((5, model.feature_dim()));
        let z = Array2::zeros((model.pyramid.stage_lengths[2], model.feature_dim()));
        assert!(matches!(model.generate_stage(2, Some(&prev), &z), Err(Error::Structural(_))));
    }

    #[test]
    fn untrained_model_refuses_to_generate() {
        let (mut model, _) = small_model(5);
        model.stages[6].trained = false;
        assert!(matches!(model.generate_full(&Noise::Seed(0), None), Err(Error::State(_))));
    }

    #[test]
    fn noise_amplitudes_of_constant_clip_vanish() {
        let targets: Vec<Array2<f64>> = [6, 8, 11].iter().map(|&n| Array2::from_elem((n, 3), 0.7)).collect();
        assert_eq!(compute_noise_amplitudes(&targets), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn noise_amplitudes_match_direct_rmse() {
        let lens = [10usize, 14, 19];
        let targets: Vec<Array2<f64>> = lens
            .iter()
            .map(|&n| Array2::from_shape_fn((n, 2), |(t, c)| (6.0 * t as f64 / (n - 1) as f64 + c as f64).sin()))
            .collect();
        let sig = compute_noise_amplitudes(&targets);
        // Hand-rolled interpolation and RMSE.
        let mut expected = vec![1.0];
        for i in 1..3 {
            let (src, dst) = (lens[i - 1], lens[i]);
            let mut se = 0.0;
            for k in 0..dst {
                let pos = k as f64 * (src - 1) as f64 / (dst - 1) as f64;
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let w = pos - i0 as f64;
                for c in 0..2 {
                    let v = (1.0 - w) * targets[i - 1][[i0, c]] + w * targets[i - 1][[i1, c]];
                    se += (v - targets[i][[k, c]]).powi(2);
                }
            }
            let r: f64 = (se / (dst * 2) as f64).sqrt();
            expected.push(r.min(expected[i - 1]));
        }
        for (a, b) in sig.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(sig.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn batch_resampling_adjoint() {
        let x = SeqBatch::new(5, Array2::from_shape_fn((10, 2), |(i, j)| (i + j) as f64 * 0.3 - 1.0));
        let g = SeqBatch::new(8, Array2::from_shape_fn((16, 2), |(i, j)| ((i * j) % 3) as f64));
        let lhs = (&resample_batch(&x, 8).data * &g.data).sum();
        let rhs = (&x.data * &resample_batch_transpose(&g, 5).data).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn standard_pyramid_satisfies_receptive_field_bound() {
        let (model, _) = small_model(6);
        let p96 = PyramidConfig::standard(96).unwrap();
        let rf = model.network.discriminator_receptive_field();
        assert_eq!(rf, 9);
        assert!(p96.stage_lengths.iter().all(|&t| 2 * rf < t));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 100);
    }
}
