//! Fixed random temporal-convolution encoder and embedding statistics.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motion::MotionTensor;

/// Architecture of the untrained window encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub seed: u64,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub kernel: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            seed: 2024,
            hidden: 32,
            embedding_dim: 16,
            kernel: 5,
        }
    }
}

/// Two valid (unpadded) temporal convolutions with tanh, averaged over each
/// window. Weights are drawn once from the seed and never trained.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    pub spec: EncoderSpec,
    input_dim: usize,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl FeatureEncoder {
    pub fn new(spec: EncoderSpec, input_dim: usize) -> Result<Self> {
        if spec.kernel == 0 || spec.hidden == 0 || spec.embedding_dim == 0 || input_dim == 0 {
            return Err(Error::Argument("encoder dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
        };
        let w1 = draw(spec.hidden, spec.kernel * input_dim);
        let w2 = draw(spec.embedding_dim, spec.kernel * spec.hidden);
        let b1 = draw(1, spec.hidden).row(0).to_owned();
        let b2 = draw(1, spec.embedding_dim).row(0).to_owned();
        Ok(FeatureEncoder {
            spec,
            input_dim,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn for_motion(spec: EncoderSpec, m: &MotionTensor) -> Result<Self> {
        Self::new(spec, m.features.ncols())
    }

    pub fn receptive_field(&self) -> usize {
        2 * (self.spec.kernel - 1) + 1
    }

    /// Identifies architecture and seed; equal hashes mean comparable numbers.
    pub fn architecture_hash(&self) -> String {
        let desc = format!(
            "conv1d-valid-tanh x2|in={}|hidden={}|emb={}|k={}|seed={}|window-mean",
            self.input_dim, self.spec.hidden, self.spec.embedding_dim, self.spec.kernel, self.spec.seed
        );
        hex::encode(&Sha256::digest(desc.as_bytes())[..8])
    }

    fn conv(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>, k: usize) -> Array2<f64> {
        let out_len = x.nrows() + 1 - k;
        let c = x.ncols();
        let mut col = Array2::zeros((out_len, k * c));
        for t in 0..out_len {
            for dk in 0..k {
                col.row_mut(t).slice_mut(ndarray::s![dk * c..(dk + 1) * c]).assign(&x.row(t + dk));
            }
        }
        let mut y = col.dot(&w.t());
        y += b;
        y.mapv_inplace(f64::tanh);
        y
    }

    /// Per-position activations of the last layer (`frames - rf + 1` rows).
    pub fn activations(&self, m: &MotionTensor) -> Result<Array2<f64>> {
        if m.features.ncols() != self.input_dim {
            return Err(Error::Argument(format!(
                "encoder expects {} features, motion has {}",
                self.input_dim,
                m.features.ncols()
            )));
        }
        if m.frames() < self.receptive_field() {
            return Err(Error::Argument(format!(
                "sequence of {} frames is shorter than the encoder receptive field {}",
                m.frames(),
                self.receptive_field()
            )));
        }
        let k = self.spec.kernel;
        let h = Self::conv(&m.features, &self.w1, &self.b1, k);
        Ok(Self::conv(&h, &self.w2, &self.b2, k))
    }
}

/// One embedding per stride-1 window of `window` frames: the mean of the
/// encoder activations lying entirely inside the window.
pub fn encode_windows(m: &MotionTensor, enc: &FeatureEncoder, window: usize) -> Result<Array2<f64>> {
    let rf = enc.receptive_field();
    if window < rf {
        return Err(Error::Argument(format!("window {window} is shorter than the encoder receptive field {rf}")));
    }
    if m.frames() < window {
        return Err(Error::Argument(format!("sequence of {} frames is shorter than the window {window}", m.frames())));
    }
    let act = enc.activations(m)?;
    let per = window - rf + 1;
    let n = m.frames() - window + 1;
    let d = act.ncols();
    let mut prefix = Array2::<f64>::zeros((act.nrows() + 1, d));
    for t in 0..act.nrows() {
        let next = &prefix.row(t) + &act.row(t);
        prefix.row_mut(t + 1).assign(&next);
    }
    let mut out = Array2::zeros((n, d));
    for s in 0..n {
        let v = (&prefix.row(s + per) - &prefix.row(s)) / per as f64;
        out.row_mut(s).assign(&v);
    }
    Ok(out)
}

/// Mean and unbiased covariance of embedding rows.
pub fn moments(e: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = e.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 embeddings for a covariance, got {n}")));
    }
    let mu = e.mean_axis(Axis(0)).expect("non-empty");
    let c = e - &mu;
    let cov = c.t().dot(&c) / (n - 1) as f64;
    Ok((mu, cov))
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig.eigenvalues.iter().find(|v| **v < -1e-6 * scale) {
        return Err(Error::Numerical(format!("{what} is not positive semidefinite (eigenvalue {v})")));
    }
    Ok(eig)
}

fn sqrt_psd(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians given by their moments.
pub fn frechet_distance(mu1: &Array1<f64>, cov1: &Array2<f64>, mu2: &Array1<f64>, cov2: &Array2<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || cov1.dim() != cov2.dim() || cov1.nrows() != mu1.len() {
        return Err(Error::Argument("Fréchet distance needs matching dimensions".into()));
    }
    let diff = mu1 - mu2;
    let s1 = to_dmatrix(cov1);
    let s2 = to_dmatrix(cov2);
    // Tr((S1 S2)^(1/2)) = Tr((R S2 R)^(1/2)) with R = S1^(1/2), which keeps
    // the argument symmetric.
    let r = sqrt_psd(s1.clone(), "first covariance")?;
    let inner = &r * &s2 * &r;
    let cross: f64 = psd_eigen(inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

pub fn frechet_from_embeddings(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let (m1, c1) = moments(a)?;
    let (m2, c2) = moments(b)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

fn pooled_embeddings(seqs: &[MotionTensor], enc: &FeatureEncoder, window: usize) -> Result<Array2<f64>> {
    let parts: Vec<Array2<f64>> = seqs.iter().map(|s| encode_windows(s, enc, window)).collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Structural(e.to_string()))
}

/// Single-sample Fréchet distance between the input's window embeddings and
/// the pooled window embeddings of the generated set.
pub fn sifid(input: &MotionTensor, generated: &[MotionTensor], enc: &FeatureEncoder, window: usize) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Argument("SiFID needs at least one generated sequence".into()));
    }
    let a = encode_windows(input, enc, window)?;
    let b = pooled_embeddings(generated, enc, window)?;
    frechet_from_embeddings(&a, &b)
}

/// Mean pairwise distance between the mean window embeddings of distinct sequences.
pub fn inter_diversity(generated: &[MotionTensor], enc: &FeatureEncoder, window: usize) -> Result<f64> {
    if generated.len() < 2 {
        return Err(Error::Argument("inter-diversity needs at least two sequences".into()));
    }
    let means: Vec<Array1<f64>> = generated
        .iter()
        .map(|g| Ok(encode_windows(g, enc, window)?.mean_axis(Axis(0)).expect("non-empty")))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            total += super::windows::sq_dist(means[i].view(), means[j].view()).sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean pairwise distance among the window embeddings of each sequence,
/// averaged over the set.
pub fn intra_diversity(generated: &[MotionTensor], enc: &FeatureEncoder, window: usize) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Argument("intra-diversity needs at least one sequence".into()));
    }
    let mut acc = 0.0;
    for g in generated {
        let e = encode_windows(g, enc, window)?;
        let d = super::windows::pairwise_distances(&e);
        if !d.is_empty() {
            acc += d.iter().sum::<f64>() / d.len() as f64;
        }
    }
    Ok(acc / generated.len() as f64)
}
