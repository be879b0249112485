//! Layer activations and linear CKA similarity across generator stages.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::resample::resample_rows;
use crate::network::{derive_seed, Noise, PyramidModel, SeqBatch};

/// Master seed of the default probe set.
pub const PROBE_MASTER_SEED: u64 = 0x5eed_c0de;
pub const DEFAULT_PROBE_COUNT: usize = 64;

pub fn default_probe_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(PROBE_MASTER_SEED, i)).collect()
}

/// Activations of one generator layer, time positions of every probe stacked
/// as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    /// One-based stage.
    pub stage: usize,
    /// One-based layer.
    pub layer: usize,
    pub probes: usize,
    /// Time positions per probe.
    pub length: usize,
    pub values: Array2<f64>,
}

/// Raw per-probe activations: `[stage][layer][probe]`, each `len_s x channels`.
pub struct ActivationCache {
    pub stages: Vec<Vec<Vec<Array2<f64>>>>,
    pub probe_seeds: Vec<u64>,
}

fn generator_layers(model: &PyramidModel, seed: u64, upto: usize) -> Result<Vec<Vec<Array2<f64>>>> {
    let lengths = model.lengths_for(None)?;
    let noise = Noise::Seed(seed);
    let mut out = Vec::with_capacity(upto + 1);
    let mut prev: Option<Array2<f64>> = None;
    for s in 0..=upto {
        let st = &model.stages[s];
        let z = noise.code(model, s, lengths[s])?;
        let up = prev.as_ref().map(|p| resample_rows(p.view(), lengths[s]));
        let mut input = match &up {
            Some(u) => u.clone(),
            None => Array2::zeros(z.dim()),
        };
        input.scaled_add(st.noise_amplitude, &z);
        let layers = st.generator.layer_outputs(&SeqBatch::single(input))?;
        let branch = layers.last().expect("generator has layers").data.clone();
        prev = Some(match up {
            Some(u) => u + &branch,
            None => branch,
        });
        out.push(layers.into_iter().map(|l| l.data).collect());
    }
    Ok(out)
}

fn require_trained(model: &PyramidModel, stage: usize) -> Result<()> {
    if stage >= model.num_stages() {
        return Err(Error::Argument(format!("stage {} out of range 1..={}", stage + 1, model.num_stages())));
    }
    if let Some(s) = (0..=stage).find(|&s| !model.stages[s].trained) {
        return Err(Error::State(format!("stage {} is not trained", s + 1)));
    }
    Ok(())
}

/// Run every probe once through all stages and keep every generator layer's output.
pub fn capture_all(model: &PyramidModel, probe_seeds: &[u64]) -> Result<ActivationCache> {
    require_trained(model, model.num_stages() - 1)?;
    let n = model.num_stages();
    let layers = model.network.layers;
    let mut stages: Vec<Vec<Vec<Array2<f64>>>> = (0..n).map(|_| (0..layers).map(|_| Vec::new()).collect()).collect();
    for &seed in probe_seeds {
        for (s, per_layer) in generator_layers(model, seed, n - 1)?.into_iter().enumerate() {
            for (l, a) in per_layer.into_iter().enumerate() {
                stages[s][l].push(a);
            }
        }
    }
    Ok(ActivationCache {
        stages,
        probe_seeds: probe_seeds.to_vec(),
    })
}

impl ActivationCache {
    /// Activation matrix of zero-based `(stage, layer)`, resampled in time to
    /// `length` when given.
    pub fn matrix(&self, stage: usize, layer: usize, length: Option<usize>) -> Result<ActivationMatrix> {
        let probes = self
            .stages
            .get(stage)
            .and_then(|s| s.get(layer))
            .ok_or_else(|| Error::Argument(format!("no activations for stage {} layer {}", stage + 1, layer + 1)))?;
        if probes.is_empty() {
            return Err(Error::Argument("no probes captured".into()));
        }
        let native = probes[0].nrows();
        let len = length.unwrap_or(native);
        let parts: Vec<Array2<f64>> = probes
            .iter()
            .map(|a| if len == native { a.clone() } else { resample_rows(a.view(), len) })
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Structural(e.to_string()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite activation at stage {} layer {}", stage + 1, layer + 1)));
        }
        Ok(ActivationMatrix {
            stage: stage + 1,
            layer: layer + 1,
            probes: probes.len(),
            length: len,
            values,
        })
    }

    pub fn stage_length(&self, stage: usize) -> usize {
        self.stages[stage][0][0].nrows()
    }
}

/// Activations of one-based `layer` of zero-based `stage` for the probes,
/// optionally resampled in time to `length`.
pub fn capture_activations(
    model: &PyramidModel,
    stage: usize,
    layer: usize,
    probe_seeds: &[u64],
    length: Option<usize>,
) -> Result<ActivationMatrix> {
    require_trained(model, stage)?;
    if layer == 0 || layer > model.network.layers {
        return Err(Error::Argument(format!("layer {layer} out of range 1..={}", model.network.layers)));
    }
    let mut probes = Vec::with_capacity(probe_seeds.len());
    for &seed in probe_seeds {
        let mut all = generator_layers(model, seed, stage)?;
        probes.push(all.swap_remove(stage).swap_remove(layer - 1));
    }
    let mut stages: Vec<Vec<Vec<Array2<f64>>>> = vec![Vec::new(); stage + 1];
    stages[stage] = vec![Vec::new(); layer];
    stages[stage][layer - 1] = probes;
    ActivationCache {
        stages,
        probe_seeds: probe_seeds.to_vec(),
    }
    .matrix(stage, layer - 1, length)
}

fn centered(x: &Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    x - &mean
}

fn frobenius_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Linear CKA between two activation matrices with the same rows.
pub fn linear_cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Argument(format!("CKA needs equal sample counts, got {} and {}", x.nrows(), y.nrows())));
    }
    if x.nrows() < 2 {
        return Err(Error::Argument("CKA needs at least two samples".into()));
    }
    let xc = centered(x);
    let yc = centered(y);
    let xx = frobenius_sq(&xc.t().dot(&xc)).sqrt();
    let yy = frobenius_sq(&yc.t().dot(&yc)).sqrt();
    let scale = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if xx <= 1e-12 * scale(x).powi(2) || yy <= 1e-12 * scale(y).powi(2) {
        return Err(Error::UndefinedSimilarity("an input has zero variance".into()));
    }
    let xy = frobenius_sq(&yc.t().dot(&xc));
    Ok((xy / (xx * yy)).clamp(0.0, 1.0))
}

/// One `(stage, layer)` pair's score, stages and layers one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEntry {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub stages: usize,
    pub layers: usize,
    pub probe_seeds: Vec<u64>,
    /// Upper triangle including the diagonal.
    pub pairs: Vec<SimilarityEntry>,
}

/// CKA of every pair of generator `(stage, layer)` activations. Pairs of
/// different lengths are compared after resampling both to the shorter one.
pub fn stage_similarity_matrix(model: &PyramidModel, probe_seeds: &[u64]) -> Result<SimilarityReport> {
    let cache = capture_all(model, probe_seeds)?;
    let stages = model.num_stages();
    let layers = model.network.layers;
    let keys: Vec<(usize, usize)> = (0..stages).flat_map(|s| (0..layers).map(move |l| (s, l))).collect();
    let mut pairs = Vec::new();
    for (i, &(sa, la)) in keys.iter().enumerate() {
        for &(sb, lb) in &keys[i..] {
            let len = cache.stage_length(sa).min(cache.stage_length(sb));
            let x = cache.matrix(sa, la, Some(len))?;
            let y = cache.matrix(sb, lb, Some(len))?;
            pairs.push(SimilarityEntry {
                a: (sa + 1, la + 1),
                b: (sb + 1, lb + 1),
                score: linear_cka(&x.values, &y.values)?,
            });
        }
    }
    Ok(SimilarityReport {
        stages,
        layers,
        probe_seeds: probe_seeds.to_vec(),
        pairs,
    })
}

impl SimilarityReport {
    /// Score for one-based `(stage, layer)` keys in either order.
    pub fn score(&self, a: (usize, usize), b: (usize, usize)) -> Option<f64> {
        self.pairs
            .iter()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
            .map(|e| e.score)
    }

    fn label(k: (usize, usize)) -> String {
        format!("G{}.L{}", k.0, k.1)
    }

    fn keys(&self) -> Vec<(usize, usize)> {
        (1..=self.stages).flat_map(|s| (1..=self.layers).map(move |l| (s, l))).collect()
    }

    /// Full symmetric matrix with labeled rows and columns.
    pub fn to_csv(&self) -> String {
        let keys = self.keys();
        let mut out = String::from("key");
        for k in &keys {
            out.push(',');
            out.push_str(&Self::label(*k));
        }
        out.push('\n');
        for a in &keys {
            out.push_str(&Self::label(*a));
            for b in &keys {
                let _ = write!(out, ",{:.6}", self.score(*a, *b).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    /// Layer-by-layer scores for stage pairs `(j, j + gap)`: `gap = 1` gives
    /// consecutive stages, `gap = 2` corresponding stages of adjacent levels.
    pub fn offset_view(&self, gap: usize) -> Vec<(usize, usize, Vec<f64>)> {
        (1..=self.stages.saturating_sub(gap))
            .map(|j| {
                let per_layer = (1..=self.layers).map(|l| self.score((j, l), (j + gap, l)).unwrap_or(f64::NAN)).collect();
                (j, j + gap, per_layer)
            })
            .collect()
    }

    pub fn offset_view_csv(&self, gap: usize) -> String {
        let mut out = String::from("stage_a,stage_b");
        for l in 1..=self.layers {
            let _ = write!(out, ",layer{l}");
        }
        out.push('\n');
        for (a, b, scores) in self.offset_view(gap) {
            let _ = write!(out, "{a},{b}");
            for s in scores {
                let _ = write!(out, ",{s:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Mean score over layers `layers` (one-based) of `(j, j + gap)` pairs.
    pub fn mean_offset_score(&self, gap: usize, layers: std::ops::RangeInclusive<usize>) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (_, _, scores) in self.offset_view(gap) {
            for l in layers.clone() {
                if let Some(v) = scores.get(l - 1) {
                    acc += v;
                    n += 1;
                }
            }
        }
        acc / n.max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Heatmap of the full matrix; darker cells are more similar.
    pub fn to_svg(&self) -> String {
        let keys = self.keys();
        let cell = 14;
        let margin = 60;
        let size = margin + cell * keys.len() + 10;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"monospace\" font-size=\"8\">\n"
        );
        for (i, a) in keys.iter().enumerate() {
            let y = margin + i * cell;
            let _ = writeln!(svg, "<text x=\"2\" y=\"{}\">{}</text>", y + cell - 4, Self::label(*a));
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" transform=\"rotate(-90 {} {})\">{}</text>",
                y + cell - 4,
                margin - 4,
                y + cell - 4,
                margin - 4,
                Self::label(*a)
            );
            for (j, b) in keys.iter().enumerate() {
                let s = self.score(*a, *b).unwrap_or(0.0);
                let shade = (255.0 * (1.0 - s)).round().clamp(0.0, 255.0) as u8;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\"><title>{} / {}: {s:.3}</title></rect>",
                    margin + j * cell,
                    Self::label(*a),
                    Self::label(*b)
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::small_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng))
    }

    /// Kernel formulation: HSIC(K, L) = tr(K H L H) / (n - 1)^2 with linear kernels.
    fn hsic_cka(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let n = x.nrows();
        let h = Array2::<f64>::eye(n) - Array2::<f64>::from_elem((n, n), 1.0 / n as f64);
        let hsic = |a: &Array2<f64>, b: &Array2<f64>| {
            let k = a.dot(&a.t());
            let l = b.dot(&b.t());
            let m = k.dot(&h).dot(&l).dot(&h);
            m.diag().sum() / ((n - 1) * (n - 1)) as f64
        };
        hsic(x, y) / (hsic(x, x) * hsic(y, y)).sqrt()
    }

    #[test]
    fn matches_hsic_formulation() {
        for seed in 0..5 {
            let x = gaussian(12, 4, seed);
            let y = &gaussian(12, 3, seed + 100) + &x.slice(ndarray::s![.., 0..3]);
            let got = linear_cka(&x, &y).unwrap();
            assert!((got - hsic_cka(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn invariances() {
        let x = gaussian(50, 6, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let q = {
            let a = nalgebra::DMatrix::from_fn(6, 6, |i, j| gaussian(6, 6, 9)[[i, j]]);
            a.qr().q()
        };
        let r = Array2::from_shape_fn((6, 6), |(i, j)| q[(i, j)]);
        assert!((linear_cka(&x, &x.dot(&r)).unwrap() - 1.0).abs() < 1e-6);
        assert!((linear_cka(&x, &(&x * -3.5)).unwrap() - 1.0).abs() < 1e-6);
        let y = gaussian(50, 4, 2);
        assert!((linear_cka(&x, &y).unwrap() - linear_cka(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn independent_gaussians_score_low() {
        for seed in 0..10 {
            let s = linear_cka(&gaussian(1000, 50, seed), &gaussian(1000, 50, seed + 1000)).unwrap();
            assert!(s < 0.15, "seed {seed}: {s}");
        }
    }

    #[test]
    fn zero_variance_is_undefined() {
        let x = Array2::from_elem((10, 3), 2.0);
        let y = gaussian(10, 3, 0);
        assert!(matches!(linear_cka(&x, &y), Err(Error::UndefinedSimilarity(_))));
        assert!(linear_cka(&y, &gaussian(9, 3, 1)).is_err());
    }

    #[test]
    fn captures_are_deterministic_and_sized() {
        let (model, _) = small_model(3);
        let seeds = default_probe_seeds(4);
        let a = capture_activations(&model, 2, 2, &seeds, None).unwrap();
        let b = capture_activations(&model, 2, 2, &seeds, None).unwrap();
        assert_eq!(a, b);
        let len = model.pyramid.stage_lengths[2];
        assert_eq!(a.values.nrows(), 4 * len);
        let short = capture_activations(&model, 2, 2, &seeds, Some(10)).unwrap();
        assert_eq!(short.values.nrows(), 40);
        assert!(a.values.var_axis(Axis(0), 0.0).sum() > 0.0);
        assert!(capture_activations(&model, 2, 5, &seeds, None).is_err());
    }

    #[test]
    fn capture_matches_the_generation_pass() {
        let (model, _) = small_model(4);
        let seeds = [17u64];
        let last = model.num_stages() - 1;
        let m = capture_activations(&model, last, model.network.layers, &seeds, None).unwrap();
        let stages = model.generate_all_stages(&Noise::Seed(17), None).unwrap();
        let up = resample_rows(stages[last - 1].view(), stages[last].nrows());
        let branch = &stages[last] - &up;
        for (a, b) in m.values.iter().zip(branch.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn untrained_stage_is_a_state_error() {
        let (mut model, _) = small_model(5);
        model.stages[1].trained = false;
        assert!(matches!(capture_activations(&model, 3, 1, &[1], None), Err(Error::State(_))));
    }

    #[test]
    fn similarity_report_shape() {
        let (model, _) = small_model(6);
        let r = stage_similarity_matrix(&model, &default_probe_seeds(3)).unwrap();
        let keys = r.stages * r.layers;
        assert_eq!(r.pairs.len(), keys * (keys + 1) / 2);
        for s in 1..=r.stages {
            for l in 1..=r.layers {
                assert!((r.score((s, l), (s, l)).unwrap() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(r.score((1, 2), (3, 4)), r.score((3, 4), (1, 2)));
        assert!(r.pairs.iter().all(|e| (0.0..=1.0).contains(&e.score)));
        assert_eq!(r.to_csv().lines().count(), keys + 1);
        assert_eq!(r.offset_view(2).len(), r.stages - 2);
        assert!(r.to_svg().starts_with("<svg"));
    }
}
