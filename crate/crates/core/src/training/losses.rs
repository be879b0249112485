//! Adversarial (WGAN-GP), reconstruction and foot-contact losses together
//! with their gradients.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, MotionTensor, SkeletonTopology};
use crate::network::{ConvStack, SeqBatch, StackCache, StackGrads};

/// Per-sample critic scores: the patch outputs averaged over time.
pub fn critic_scores(d: &ConvStack, x: &SeqBatch) -> Result<(Vec<f64>, StackCache)> {
    let (out, cache) = d.forward(x)?;
    let scores = (0..x.batch()).map(|b| out.sample(b).mean().expect("non-empty sample")).collect();
    Ok((scores, cache))
}

/// Gradient of each sample's score with respect to its input.
pub fn critic_input_gradients(d: &ConvStack, x: &SeqBatch) -> Result<(SeqBatch, StackCache)> {
    let (_, cache) = d.forward(x)?;
    let dy = SeqBatch::new(x.len, Array2::from_elem((x.data.nrows(), 1), 1.0 / x.len as f64));
    let g = d.backward(&cache, &dy, None, true).expect("input gradient requested");
    Ok((g, cache))
}

/// Interpolate every fake with the real sample: `a * fake + (1 - a) * real`.
pub fn interpolate(real: ArrayView2<'_, f64>, fake: &SeqBatch, alphas: &[f64]) -> SeqBatch {
    let mut out = fake.data.clone();
    for (b, &a) in alphas.iter().enumerate() {
        let mut rows = out.slice_mut(ndarray::s![b * fake.len..(b + 1) * fake.len, ..]);
        rows *= a;
        rows.scaled_add(1.0 - a, &real);
    }
    SeqBatch::new(fake.len, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    pub gradient_penalty: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

/// Critic and generator objectives for one real clip and a batch of fakes.
///
/// `alphas` holds one interpolation weight per batch element. When `grads`
/// is given, the critic parameter gradient of `d_loss` is accumulated into it.
pub fn adversarial_losses(
    d: &ConvStack,
    real: ArrayView2<'_, f64>,
    fake: &SeqBatch,
    lambda_gp: f64,
    alphas: &[f64],
    grads: Option<&mut StackGrads>,
) -> Result<AdversarialLosses> {
    let b = fake.batch();
    let len = fake.len;
    if real.nrows() != len || alphas.len() != b {
        return Err(Error::Structural(format!(
            "real clip has {} frames, fakes {len}; {} alphas for {b} fakes",
            real.nrows(),
            alphas.len()
        )));
    }
    let mut both = fake.data.clone();
    both.append(ndarray::Axis(0), real).expect("same width");
    let both = SeqBatch::new(len, both);
    let (scores, cache) = critic_scores(d, &both)?;
    let d_fake = scores[..b].iter().sum::<f64>() / b as f64;
    let d_real = scores[b];

    let mixed = interpolate(real, fake, alphas);
    let (g, mixed_cache) = critic_input_gradients(d, &mixed)?;
    let norms: Vec<f64> = (0..b).map(|k| g.sample(k).mapv(|v| v * v).sum().sqrt()).collect();
    let gp = norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / b as f64;
    let losses = AdversarialLosses {
        d_loss: d_fake - d_real + lambda_gp * gp,
        g_loss: -d_fake,
        gradient_penalty: gp,
        d_real,
        d_fake,
    };

    if let Some(grads) = grads {
        let mut dy = Array2::from_elem((both.data.nrows(), 1), 1.0 / (b * len) as f64);
        dy.slice_mut(ndarray::s![b * len.., ..]).fill(-1.0 / len as f64);
        d.backward(&cache, &SeqBatch::new(len, dy), Some(grads), false);

        // The critic is piecewise linear, so with activation slopes frozen
        // at the interpolates, `h . grad_x D(x)` equals the linearized
        // critic applied to `h`. Backpropagating that linear pass gives the
        // parameter gradient of the penalty.
        let mut h = g.data.clone();
        for (k, &n) in norms.iter().enumerate() {
            let coef = if n > 1e-12 { lambda_gp * 2.0 * (n - 1.0) / (b as f64 * n) } else { 0.0 };
            h.slice_mut(ndarray::s![k * len..(k + 1) * len, ..]).mapv_inplace(|v| v * coef);
        }
        let (_, lin_cache) = d.forward_linearized(&SeqBatch::new(len, h), &mixed_cache)?;
        let ones = SeqBatch::new(len, Array2::from_elem((b * len, 1), 1.0 / len as f64));
        d.backward(&lin_cache, &ones, Some(grads), false);
    }
    Ok(losses)
}

/// Generator adversarial loss `-mean D(fake)` and its gradient on the fakes.
pub fn generator_adversarial(d: &ConvStack, fake: &SeqBatch) -> Result<(f64, SeqBatch)> {
    let (scores, cache) = critic_scores(d, fake)?;
    let b = fake.batch();
    let loss = -scores.iter().sum::<f64>() / b as f64;
    let dy = SeqBatch::new(fake.len, Array2::from_elem((fake.data.nrows(), 1), -1.0 / (b * fake.len) as f64));
    let dx = d.backward(&cache, &dy, None, true).expect("input gradient requested");
    Ok((loss, dx))
}

/// Mean absolute error.
pub fn reconstruction_loss(output: &Array2<f64>, target: &Array2<f64>) -> f64 {
    (output - target).mapv(f64::abs).sum() / output.len() as f64
}

pub fn reconstruction_grad(output: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let n = output.len() as f64;
    (output - target).mapv(|d| if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 })
}

/// Skewed sigmoid `S(x) = 1 / (1 + exp(-steepness (x - midpoint)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactLossConfig {
    pub steepness: f64,
    pub midpoint: f64,
}

impl Default for ContactLossConfig {
    fn default() -> Self {
        ContactLossConfig {
            steepness: 12.0,
            midpoint: 0.5,
        }
    }
}

impl ContactLossConfig {
    pub fn gate(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.steepness * (x - self.midpoint)).exp())
    }
}

/// Gram-Schmidt intermediates of one joint's 6D block.
struct Frame6d {
    r: Matrix3<f64>,
    b: Vector3<f64>,
    a_norm: f64,
    u_norm: f64,
}

fn gram_schmidt(v: &[f64]) -> Frame6d {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let a_norm = a.norm().max(1e-9);
    let b1 = a / a_norm;
    let u = b - b1 * b1.dot(&b);
    let u_norm = u.norm().max(1e-9);
    let b2 = u / u_norm;
    let b3 = b1.cross(&b2);
    Frame6d {
        r: Matrix3::from_columns(&[b1, b2, b3]),
        b,
        a_norm,
        u_norm,
    }
}

/// Gradient of the 6D inputs given the gradient of the orthonormalized matrix.
fn gram_schmidt_backward(f: &Frame6d, dr: &Matrix3<f64>) -> [f64; 6] {
    let b1 = f.r.column(0).into_owned();
    let b2 = f.r.column(1).into_owned();
    let g3 = dr.column(2).into_owned();
    let mut g1 = dr.column(0).into_owned() + b2.cross(&g3);
    let g2 = dr.column(1).into_owned() + g3.cross(&b1);
    let gu = (g2 - b2 * b2.dot(&g2)) / f.u_norm;
    let gb = gu - b1 * b1.dot(&gu);
    g1 -= gu * b1.dot(&f.b) + f.b * b1.dot(&gu);
    let ga = (g1 - b1 * b1.dot(&g1)) / f.a_norm;
    [ga.x, ga.y, ga.z, gb.x, gb.y, gb.z]
}

struct FrameKinematics {
    frames6d: Vec<Frame6d>,
    global: Vec<Matrix3<f64>>,
    /// Joint positions relative to the root position.
    pos: Vec<Vector3<f64>>,
}

fn frame_kinematics(topo: &SkeletonTopology, order: &[usize], layout: &FeatureLayout, row: ArrayView2<'_, f64>, t: usize) -> FrameKinematics {
    let j = topo.joint_count();
    let frames6d: Vec<Frame6d> = (0..j)
        .map(|k| {
            let r = layout.rotation(k);
            let v: Vec<f64> = r.map(|c| row[[t, c]]).collect();
            gram_schmidt(&v)
        })
        .collect();
    let mut global = vec![Matrix3::identity(); j];
    let mut pos = vec![Vector3::zeros(); j];
    for &k in order {
        match topo.parents[k] {
            None => global[k] = frames6d[k].r,
            Some(p) => {
                pos[k] = pos[p] + global[p] * Vector3::from(topo.offsets[k]);
                global[k] = global[p] * frames6d[k].r;
            }
        }
    }
    FrameKinematics { frames6d, global, pos }
}

/// Heading cosine and sine from the root's forward axis, with the forward
/// axis' gradient map.
fn heading(f: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let n = (f.x * f.x + f.z * f.z).sqrt();
    if n < 1e-9 {
        None
    } else {
        Some((f.z / n, f.x / n, n))
    }
}

/// `(1/(T|C|)) sum_t sum_c |V^{t,c}|^2 S(contact^{t,c})` on unnormalized
/// features, with `V^{t,c}` the world-space frame-to-frame displacement of
/// contact joint `c` (zero at the first frame). Returns the loss and its
/// gradient with respect to `features`.
pub fn contact_loss_with_grad(features: ArrayView2<'_, f64>, topo: &SkeletonTopology, cfg: &ContactLossConfig, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let layout = FeatureLayout::of(topo);
    let t_len = features.nrows();
    let contacts = &topo.contact_joints;
    let norm = 1.0 / (t_len * contacts.len()) as f64;
    let order = topo.topological_order();
    let root = topo.root();
    let kin: Vec<FrameKinematics> = (0..t_len).map(|t| frame_kinematics(topo, &order, &layout, features, t)).collect();

    let mut loss = 0.0;
    let mut grad = want_grad.then(|| Array2::zeros(features.dim()));
    // Per-frame gradients of relative positions and of the root forward axis.
    let mut d_pos = vec![vec![Vector3::zeros(); topo.joint_count()]; t_len];
    let mut d_fwd = vec![Vector3::zeros(); t_len];

    for t in 1..t_len {
        let vx = features[[t, layout.root_vx()]];
        let vz = features[[t, layout.root_vz()]];
        let fwd = kin[t].global[root].column(2).into_owned();
        let (c, s, n) = heading(&fwd).unwrap_or((1.0, 0.0, 0.0));
        let delta = Vector3::new(
            c * vx + s * vz,
            features[[t, layout.root_y()]] - features[[t - 1, layout.root_y()]],
            -s * vx + c * vz,
        );
        for (ci, &j) in contacts.iter().enumerate() {
            let v = delta + kin[t].pos[j] - kin[t - 1].pos[j];
            let col = layout.contact(ci);
            let gate = cfg.gate(features[[t, col]]);
            let sq = v.norm_squared();
            loss += norm * sq * gate;
            if let Some(g) = grad.as_mut() {
                g[[t, col]] += norm * sq * cfg.steepness * gate * (1.0 - gate);
                let dv = v * (2.0 * norm * gate);
                d_pos[t][j] += dv;
                d_pos[t - 1][j] -= dv;
                g[[t, layout.root_y()]] += dv.y;
                g[[t - 1, layout.root_y()]] -= dv.y;
                g[[t, layout.root_vx()]] += dv.x * c - dv.z * s;
                g[[t, layout.root_vz()]] += dv.x * s + dv.z * c;
                if n > 0.0 {
                    let dc = dv.x * vx + dv.z * vz;
                    let ds = dv.x * vz - dv.z * vx;
                    let n3 = n * n * n;
                    d_fwd[t].x += dc * (-fwd.z * fwd.x / n3) + ds * (fwd.z * fwd.z / n3);
                    d_fwd[t].z += dc * (fwd.x * fwd.x / n3) + ds * (-fwd.x * fwd.z / n3);
                }
            }
        }
    }

    if let Some(g) = grad.as_mut() {
        for t in 0..t_len {
            let k = &kin[t];
            let j = topo.joint_count();
            let mut dp = d_pos[t].clone();
            let mut dg = vec![Matrix3::zeros(); j];
            let col = dg[root].column(2) + d_fwd[t];
            dg[root].set_column(2, &col);
            for &m in order.iter().rev() {
                match topo.parents[m] {
                    None => {
                        let d6 = gram_schmidt_backward(&k.frames6d[m], &dg[m]);
                        for (i, c) in layout.rotation(m).enumerate() {
                            g[[t, c]] += d6[i];
                        }
                    }
                    Some(p) => {
                        let off = Vector3::from(topo.offsets[m]);
                        let dpm = dp[m];
                        dp[p] += dpm;
                        let add = dpm * off.transpose() + dg[m] * k.frames6d[m].r.transpose();
                        dg[p] += add;
                        let dr = k.global[p].transpose() * dg[m];
                        let d6 = gram_schmidt_backward(&k.frames6d[m], &dr);
                        for (i, c) in layout.rotation(m).enumerate() {
                            g[[t, c]] += d6[i];
                        }
                    }
                }
            }
        }
    }
    (loss, grad)
}

/// Foot-contact consistency loss of a feature tensor.
pub fn contact_loss(fake: &MotionTensor, cfg: &ContactLossConfig) -> f64 {
    contact_loss_with_grad(fake.features.view(), &fake.topology, cfg, false).0
}
