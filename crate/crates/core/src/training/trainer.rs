use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{AdamConfig, LossWeights, TrainConfig};
use super::losses::{adversarial_losses, contact_loss_with_grad, generator_adversarial, reconstruction_grad, reconstruction_loss};
use crate::error::{Error, Result};
use crate::evaluation::{self, MetricsConfig, MetricsReport};
use crate::motion::MotionTensor;
use crate::network::{
    compute_noise_amplitudes, normalized_targets, resample_batch, resample_batch_transpose, ConvStack, FeatureNormalizer, Noise, PyramidModel, SeqBatch,
    StackCache, StackGrads, TrainingMetadata,
};

/// First and second moment estimates for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    m: StackGrads,
    v: StackGrads,
    t: i32,
    cfg: AdamConfig,
}

impl Adam {
    pub fn new(net: &ConvStack, cfg: AdamConfig) -> Self {
        Adam {
            m: net.zero_grads(),
            v: net.zero_grads(),
            t: 0,
            cfg,
        }
    }

    pub fn step(&mut self, net: &mut ConvStack, grads: &StackGrads, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut layer.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|w, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                });
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub l_rec: f64,
    pub l_con: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    /// One-based level.
    pub level: usize,
    /// One-based stages trained jointly.
    pub stages: Vec<usize>,
    pub iterations: usize,
    pub wall_ms: f64,
    /// First iteration (one-based count) at which the level's last stage
    /// reached the early-stop reconstruction threshold.
    pub reached_threshold_at: Option<usize>,
    pub final_rec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub preset: String,
    pub seed: u64,
    pub noise_amplitudes: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    pub total_iterations: usize,
    pub total_wall_ms: f64,
    pub final_rec: f64,
    pub metrics: Option<MetricsReport>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl TrainReport {
    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,stage,d_loss,g_adv,l_rec,l_con,wall_ms")?;
        for r in &self.trace {
            writeln!(w, "{},{},{},{},{},{},{:.3}", r.iteration, r.stage, r.d_loss, r.g_adv, r.l_rec, r.l_con, r.wall_ms)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Copy early generator layers from the stage one level up and the
/// discriminator from the preceding stage.
///
/// Generator layers 1 and 2 of `stage` come from `stage - 2`; layers 3 and 4
/// are re-initialized; the discriminator is a copy of `stage - 1`'s.
pub fn transfer_init(model: &mut PyramidModel, stage: usize, rng: &mut impl Rng) -> Result<()> {
    if stage < 2 {
        return Err(Error::Argument(format!("stage {} has no donor one level up", stage + 1)));
    }
    let donor = model.stages[stage - 2].generator.clone();
    let fresh = crate::network::build_generator(&model.topology, &model.network, rng);
    let target = &mut model.stages[stage].generator;
    if donor.layers.len() != target.layers.len() {
        return Err(Error::Structural("generators differ in depth".into()));
    }
    for l in 0..target.layers.len() {
        let src = if l < 2 { &donor.layers[l] } else { &fresh.layers[l] };
        if src.weight.dim() != target.layers[l].weight.dim() {
            return Err(Error::Structural(format!(
                "layer {} shape {:?} cannot receive {:?}",
                l + 1,
                target.layers[l].weight.dim(),
                src.weight.dim()
            )));
        }
        target.layers[l] = src.clone();
    }
    let prev_d = model.stages[stage - 1].discriminator.clone();
    if prev_d.layers.iter().zip(&model.stages[stage].discriminator.layers).any(|(a, b)| a.weight.dim() != b.weight.dim()) {
        return Err(Error::Structural("discriminators differ in shape".into()));
    }
    model.stages[stage].discriminator = prev_d;
    Ok(())
}

/// Forward record of one live stage.
struct LiveStep {
    len: usize,
    cache: StackCache,
    out: SeqBatch,
}

fn noise_batch(rng: &mut ChaCha8Rng, batch: usize, len: usize, width: usize) -> SeqBatch {
    SeqBatch::new(len, Array2::from_shape_simple_fn((batch * len, width), || rng.sample(StandardNormal)))
}

fn stage_input(model: &PyramidModel, stage: usize, prev: Option<&SeqBatch>, z: &SeqBatch) -> (Option<SeqBatch>, SeqBatch) {
    let sigma = model.stages[stage].noise_amplitude;
    match prev {
        Some(p) if stage > 0 => {
            let up = resample_batch(p, z.len);
            let mut x = up.data.clone();
            x.scaled_add(sigma, &z.data);
            (Some(up), SeqBatch::new(z.len, x))
        }
        _ => (None, SeqBatch::new(z.len, &z.data * sigma)),
    }
}

fn run_frozen(model: &PyramidModel, stages: Range<usize>, zs: &[SeqBatch]) -> Result<Option<SeqBatch>> {
    let mut cur: Option<SeqBatch> = None;
    for (k, s) in stages.enumerate() {
        let (up, x) = stage_input(model, s, cur.as_ref(), &zs[k]);
        let branch = model.stages[s].generator.forward(&x)?.0;
        cur = Some(match up {
            Some(u) => SeqBatch::new(u.len, u.data + branch.data),
            None => branch,
        });
    }
    Ok(cur)
}

fn forward_live(model: &PyramidModel, live: Range<usize>, input: Option<SeqBatch>, zs: &[SeqBatch]) -> Result<Vec<LiveStep>> {
    let mut steps: Vec<LiveStep> = Vec::new();
    let mut cur = input;
    for (k, s) in live.enumerate() {
        let (up, x) = stage_input(model, s, cur.as_ref(), &zs[k]);
        let (branch, cache) = model.stages[s].generator.forward(&x)?;
        let out = match up {
            Some(u) => SeqBatch::new(u.len, u.data + branch.data),
            None => branch,
        };
        cur = Some(out.clone());
        steps.push(LiveStep { len: zs[k].len, cache, out });
    }
    Ok(steps)
}

fn backward_live(model: &PyramidModel, live: Range<usize>, steps: &[LiveStep], d_out: Vec<SeqBatch>, grads: &mut [StackGrads]) {
    let mut carry: Option<SeqBatch> = None;
    let stages: Vec<usize> = live.collect();
    for k in (0..steps.len()).rev() {
        let s = stages[k];
        let mut g = d_out[k].clone();
        if let Some(c) = carry.take() {
            g.data += &c.data;
        }
        let need_input = k > 0;
        let d_in = model.stages[s].generator.backward(&steps[k].cache, &g, Some(&mut grads[k]), need_input);
        if let Some(d_in) = d_in {
            // out = up + G(up + sigma z): the upsampled input receives both paths.
            let d_up = SeqBatch::new(g.len, g.data + d_in.data);
            carry = Some(resample_batch_transpose(&d_up, steps[k - 1].len));
        }
    }
}

/// Contact loss averaged over a normalized batch, and its normalized-space gradient.
fn batch_contact(model: &PyramidModel, x: &SeqBatch, cfg: &super::losses::ContactLossConfig) -> (f64, SeqBatch) {
    let b = x.batch();
    let mut total = 0.0;
    let mut grad = Array2::zeros(x.data.dim());
    for k in 0..b {
        let raw = model.normalizer.denormalize(&x.sample(k).to_owned());
        let (l, g) = contact_loss_with_grad(raw.view(), &model.topology, cfg, true);
        total += l / b as f64;
        let g = g.expect("gradient requested") * &model.normalizer.std / b as f64;
        grad.slice_mut(ndarray::s![k * x.len..(k + 1) * x.len, ..]).assign(&g);
    }
    (total, SeqBatch::new(x.len, grad))
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

/// Train every stage of one zero-based level jointly; lower levels stay frozen.
pub fn train_level(model: &mut PyramidModel, level: usize, targets: &[Array2<f64>], cfg: &TrainConfig, rng: &mut ChaCha8Rng, trace: &mut Vec<TraceRow>, iteration_offset: usize) -> Result<LevelSummary> {
    let live = model.pyramid.stages_in_level(level);
    for s in 0..live.start {
        if !model.stages[s].trained {
            return Err(Error::State(format!("stage {} must be trained before level {}", s + 1, level + 1)));
        }
    }
    let iterations = cfg.iterations_for_level(level);
    let b = cfg.batch_size;
    let width = model.feature_dim();
    let lengths = model.pyramid.stage_lengths.clone();
    let live_stages: Vec<usize> = live.clone().collect();
    let start = Instant::now();

    // The frozen part of the reconstruction chain never changes in this level.
    let rec_prefix = if live.start > 0 {
        let zs: Vec<SeqBatch> = (0..live.start)
            .map(|s| Noise::Reconstruction.code(model, s, lengths[s]).map(SeqBatch::single))
            .collect::<Result<_>>()?;
        run_frozen(model, 0..live.start, &zs)?
    } else {
        None
    };
    let rec_codes: Vec<SeqBatch> = live_stages
        .iter()
        .map(|&s| Noise::Reconstruction.code(model, s, lengths[s]).map(SeqBatch::single))
        .collect::<Result<_>>()?;

    let mut g_opt: Vec<Adam> = live_stages.iter().map(|&s| Adam::new(&model.stages[s].generator, cfg.adam)).collect();
    let mut d_opt: Vec<Adam> = live_stages.iter().map(|&s| Adam::new(&model.stages[s].discriminator, cfg.adam)).collect();
    let mut nonfinite_run = 0usize;
    let mut reached = None;
    let mut final_rec = f64::NAN;
    let mut done = 0usize;

    for it in 0..iterations {
        let t0 = Instant::now();
        let w: LossWeights = cfg.annealing.weights(level, it, iterations);

        // Fakes: fresh noise through frozen and live stages.
        let frozen_z: Vec<SeqBatch> = (0..live.start).map(|s| noise_batch(rng, b, lengths[s], width)).collect();
        let live_z: Vec<SeqBatch> = live_stages.iter().map(|&s| noise_batch(rng, b, lengths[s], width)).collect();
        let prefix = run_frozen(model, 0..live.start, &frozen_z)?;
        let fake = forward_live(model, live.clone(), prefix, &live_z)?;

        // Critic step.
        let mut d_losses = Vec::with_capacity(live_stages.len());
        let mut d_grads = Vec::with_capacity(live_stages.len());
        for (k, &s) in live_stages.iter().enumerate() {
            let alphas: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
            let d = &model.stages[s].discriminator;
            let mut grads = d.zero_grads();
            let l = adversarial_losses(d, targets[s].view(), &fake[k].out, w.lambda_gp, &alphas, Some(&mut grads))?;
            d_losses.push(l.d_loss);
            d_grads.push(grads);
        }

        // Generator objective on the same fakes, plus the reconstruction chain.
        let rec = forward_live(model, live.clone(), rec_prefix.clone(), &rec_codes)?;
        let mut g_adv = Vec::new();
        let mut l_rec = Vec::new();
        let mut l_con = Vec::new();
        let mut d_fake_out = Vec::new();
        let mut d_rec_out = Vec::new();
        let finite_d = all_finite(&d_losses);
        if finite_d {
            if let Some(bad) = d_losses.iter().find(|v| v.abs() > cfg.divergence_threshold) {
                return Err(Error::Diverged(format!(
                    "critic loss {bad:.3e} at level {} iteration {} exceeds {:.1e}",
                    level + 1,
                    it + 1,
                    cfg.divergence_threshold
                )));
            }
            for (k, &s) in live_stages.iter().enumerate() {
                d_opt[k].step(&mut model.stages[s].discriminator, &d_grads[k], cfg.lr_discriminator);
            }
        }
        for (k, &s) in live_stages.iter().enumerate() {
            let (adv, mut d_fake) = generator_adversarial(&model.stages[s].discriminator, &fake[k].out)?;
            d_fake.data *= w.lambda_adv;
            let (con, d_con) = batch_contact(model, &fake[k].out, &cfg.contact);
            d_fake.data.scaled_add(w.lambda_con, &d_con.data);
            let out = rec[k].out.sample(0).to_owned();
            let r = reconstruction_loss(&out, &targets[s]);
            let dr = reconstruction_grad(&out, &targets[s]) * w.lambda_rec;
            g_adv.push(adv);
            l_con.push(con);
            l_rec.push(r);
            d_fake_out.push(d_fake);
            d_rec_out.push(SeqBatch::single(dr));
        }
        let finite = finite_d && all_finite(&g_adv) && all_finite(&l_rec) && all_finite(&l_con);
        if finite {
            nonfinite_run = 0;
            let mut g_grads: Vec<StackGrads> = live_stages.iter().map(|&s| model.stages[s].generator.zero_grads()).collect();
            backward_live(model, live.clone(), &fake, d_fake_out, &mut g_grads);
            backward_live(model, live.clone(), &rec, d_rec_out, &mut g_grads);
            for (k, &s) in live_stages.iter().enumerate() {
                g_opt[k].step(&mut model.stages[s].generator, &g_grads[k], cfg.lr_generator);
            }
        } else {
            nonfinite_run += 1;
            if nonfinite_run >= cfg.max_nonfinite_iterations {
                return Err(Error::Diverged(format!(
                    "{nonfinite_run} consecutive non-finite iterations at level {}",
                    level + 1
                )));
            }
        }

        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        for (k, &s) in live_stages.iter().enumerate() {
            trace.push(TraceRow {
                iteration: iteration_offset + it + 1,
                stage: s + 1,
                d_loss: d_losses[k],
                g_adv: g_adv[k],
                l_rec: l_rec[k],
                l_con: l_con[k],
                wall_ms,
            });
        }
        final_rec = *l_rec.last().expect("non-empty level");
        done = it + 1;
        if let Some(th) = cfg.early_stop_rec {
            if final_rec <= th {
                reached = Some(done);
                break;
            }
        }
    }

    if iterations > 0 {
        // Loss of the trained weights, not the pre-update value of the last step.
        let rec = forward_live(model, live.clone(), rec_prefix, &rec_codes)?;
        let k = live_stages.len() - 1;
        final_rec = reconstruction_loss(&rec[k].out.sample(0).to_owned(), &targets[live_stages[k]]);
    }
    for &s in &live_stages {
        model.stages[s].trained = true;
    }
    Ok(LevelSummary {
        level: level + 1,
        stages: live_stages.iter().map(|s| s + 1).collect(),
        iterations: done,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        reached_threshold_at: reached,
        final_rec,
    })
}

/// Train the level containing zero-based `stage` (its stages train jointly).
pub fn train_stage(model: &mut PyramidModel, stage: usize, targets: &[Array2<f64>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(LevelSummary, Vec<TraceRow>)> {
    if stage >= model.num_stages() {
        return Err(Error::Argument(format!("stage {} outside the pyramid", stage + 1)));
    }
    let mut trace = Vec::new();
    let level = model.pyramid.level_of(stage);
    let summary = train_level(model, level, targets, cfg, rng, &mut trace, 0)?;
    Ok((summary, trace))
}

/// Fresh model for `input` under `cfg`: pyramid, normalizer, noise amplitudes
/// and the reconstruction code, plus its normalized targets.
pub fn prepare_model(input: &MotionTensor, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(PyramidModel, Vec<Array2<f64>>)> {
    cfg.validate()?;
    let pyramid = cfg.pyramid.build(input.frames())?;
    let normalizer = FeatureNormalizer::fit(&input.features, cfg.feature_std_floor);
    let mut model = PyramidModel::new(input.topology.clone(), pyramid, cfg.network.clone(), normalizer, input.frame_rate, rng)?;
    let targets = normalized_targets(input, &model.pyramid, &model.normalizer)?;
    for (s, sigma) in compute_noise_amplitudes(&targets).into_iter().enumerate() {
        model.stages[s].noise_amplitude = sigma;
    }
    Ok((model, targets))
}

/// Train a model on one clip, level by level.
pub fn train_all(input: &MotionTensor, cfg: &TrainConfig) -> Result<(PyramidModel, TrainReport)> {
    train_all_with_progress(input, cfg, |_, _| {})
}

/// [`train_all`] with a callback receiving `(completed iterations, total)`
/// after each level.
pub fn train_all_with_progress(input: &MotionTensor, cfg: &TrainConfig, mut progress: impl FnMut(usize, usize)) -> Result<(PyramidModel, TrainReport)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, targets) = prepare_model(input, cfg, &mut rng)?;
    let mut trace = Vec::new();
    let mut levels = Vec::new();
    let mut offset = 0;
    let total = cfg.total_iterations();
    for level in 0..model.pyramid.num_levels() {
        if cfg.transfer_learning && level > 0 {
            for s in model.pyramid.stages_in_level(level) {
                transfer_init(&mut model, s, &mut rng)?;
            }
        }
        let summary = train_level(&mut model, level, &targets, cfg, &mut rng, &mut trace, offset)?;
        offset += summary.iterations;
        progress(offset, total);
        levels.push(summary);
    }
    model.metadata = TrainingMetadata {
        seed: cfg.seed,
        preset: cfg.preset.clone(),
        iterations_per_level: levels.iter().map(|l| l.iterations).collect(),
        config: Some(serde_json::to_value(cfg)?),
    };
    let metrics = if cfg.evaluation_samples > 0 {
        let samples: Vec<MotionTensor> = (0..cfg.evaluation_samples as u64)
            .map(|i| model.generate_full(&Noise::Seed(crate::network::derive_seed(cfg.seed, i)), None))
            .collect::<Result<_>>()?;
        Some(evaluation::evaluate(input, &samples, &MetricsConfig::default())?)
    } else {
        None
    };
    let final_rec = levels.last().map(|l| l.final_rec).unwrap_or(f64::NAN);
    let report = TrainReport {
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        noise_amplitudes: model.noise_amplitudes(),
        total_iterations: offset,
        total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
        final_rec,
        levels,
        metrics,
        trace,
    };
    Ok((model, report))
}

/// Final-stage reconstruction error of a trained model against its clip.
pub fn final_reconstruction_error(model: &PyramidModel, input: &MotionTensor) -> Result<f64> {
    let out = model.generate_normalized(&Noise::Reconstruction, None)?;
    Ok(reconstruction_loss(&out, &model.normalize(input)?))
}

/// Wall-clock milliseconds of `steps` full training iterations of the last
/// level at batch size `batch`, on a model prepared from `input`.
pub fn time_training_steps(input: &MotionTensor, cfg: &TrainConfig, batch: usize, steps: usize) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.batch_size = batch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, targets) = prepare_model(input, &cfg, &mut rng)?;
    let last = model.pyramid.num_levels() - 1;
    for s in 0..model.pyramid.stages_in_level(last).start {
        model.stages[s].trained = true;
    }
    cfg.level_iterations[last] = steps;
    cfg.iteration_multiplier = 1.0;
    cfg.early_stop_rec = None;
    let start = Instant::now();
    train_level(&mut model, last, &targets, &cfg, &mut rng, &mut Vec::new(), 0)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

