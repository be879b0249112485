//! Skeleton-aware temporal convolutions with hand-written backward passes.
//!
//! A skeleton convolution is a dense 1D convolution whose weight matrix is
//! masked so that output channels of joint `j` only read input channels of
//! joints in `N(j)`. Time length is preserved with reflect padding.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{FeatureLayout, SkeletonTopology};

/// A batch of equal-length sequences stacked along rows: sample `b` occupies
/// rows `b*len .. (b+1)*len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub len: usize,
    pub data: Array2<f64>,
}

impl SeqBatch {
    pub fn new(len: usize, data: Array2<f64>) -> Self {
        assert!(len > 0 && data.nrows() % len == 0, "rows must be a multiple of the sequence length");
        SeqBatch { len, data }
    }

    pub fn single(x: Array2<f64>) -> Self {
        let len = x.nrows();
        SeqBatch::new(len, x)
    }

    pub fn from_samples(samples: &[Array2<f64>]) -> Self {
        let len = samples[0].nrows();
        let views: Vec<ArrayView2<'_, f64>> = samples.iter().map(|s| s.view()).collect();
        SeqBatch::new(len, ndarray::concatenate(Axis(0), &views).expect("equal sample shapes"))
    }

    pub fn batch(&self) -> usize {
        self.data.nrows() / self.len
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![b * self.len..(b + 1) * self.len, ..])
    }

    pub fn samples(&self) -> Vec<Array2<f64>> {
        (0..self.batch()).map(|b| self.sample(b).to_owned()).collect()
    }
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Owning node (joint) of every channel of a feature row.
pub fn feature_nodes(topo: &SkeletonTopology) -> Vec<usize> {
    let layout = FeatureLayout::of(topo);
    let mut nodes = vec![0; layout.dim()];
    for j in 0..layout.joints {
        for c in layout.rotation(j) {
            nodes[c] = j;
        }
    }
    for (ci, &j) in topo.contact_joints.iter().enumerate() {
        nodes[layout.contact(ci)] = j;
    }
    let root = topo.root();
    for c in layout.root_range() {
        nodes[c] = root;
    }
    nodes
}

/// Channel connectivity of a skeleton convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonConvSpec {
    /// `neighbor_lists[j]`: joints within the neighborhood radius of `j`.
    pub neighbor_lists: Vec<Vec<usize>>,
    pub temporal_kernel: usize,
    /// Node of each input channel.
    pub in_nodes: Vec<usize>,
    /// Node of each output channel; `None` for channels that read every node.
    pub out_nodes: Vec<Option<usize>>,
}

impl SkeletonConvSpec {
    /// Neighborhoods of graph radius `radius` on the skeleton tree.
    pub fn neighborhoods(topo: &SkeletonTopology, radius: usize) -> Vec<Vec<usize>> {
        topo.joint_distances()
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &d)| d <= radius).map(|(k, _)| k).collect())
            .collect()
    }

    pub fn in_channels(&self) -> usize {
        self.in_nodes.len()
    }

    pub fn out_channels(&self) -> usize {
        self.out_nodes.len()
    }

    /// 0/1 matrix `out x in`.
    pub fn connectivity(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.out_channels(), self.in_channels()));
        for (o, on) in self.out_nodes.iter().enumerate() {
            for (i, &inn) in self.in_nodes.iter().enumerate() {
                let connected = match on {
                    None => true,
                    Some(j) => self.neighbor_lists[*j].contains(&inn),
                };
                if connected {
                    m[[o, i]] = 1.0;
                }
            }
        }
        m
    }
}

/// Masked 1D convolution, stride 1, reflect padding.
///
/// `weight` is `out x (kernel * in)` with column `tap * in + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub mask: Array2<f64>,
    pub kernel: usize,
    pub in_channels: usize,
}

impl Conv1d {
    pub fn new(spec: &SkeletonConvSpec, rng: &mut impl Rng) -> Self {
        let k = spec.temporal_kernel;
        assert!(k % 2 == 1, "temporal kernel must be odd");
        let conn = spec.connectivity();
        let (out_c, in_c) = conn.dim();
        let mut mask = Array2::zeros((out_c, k * in_c));
        for o in 0..out_c {
            for tap in 0..k {
                for c in 0..in_c {
                    mask[[o, tap * in_c + c]] = conn[[o, c]];
                }
            }
        }
        let mut conv = Conv1d {
            weight: Array2::zeros((out_c, k * in_c)),
            bias: Array1::zeros(out_c),
            mask,
            kernel: k,
            in_channels: in_c,
        };
        conv.reset_parameters(rng);
        conv
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    /// Uniform fan-in initialization over the connected inputs of each output.
    pub fn reset_parameters(&mut self, rng: &mut impl Rng) {
        for o in 0..self.out_channels() {
            let fan_in = self.mask.row(o).sum().max(1.0);
            let bound = 1.0 / fan_in.sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for (w, m) in self.weight.row_mut(o).iter_mut().zip(self.mask.row(o)) {
                *w = if *m != 0.0 { dist.sample(rng) } else { 0.0 };
            }
            self.bias[o] = dist.sample(rng);
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Unfold `x` into `rows x (kernel * in)` patches.
    pub fn im2col(&self, x: &SeqBatch) -> Result<Array2<f64>> {
        if x.channels() != self.in_channels {
            return Err(Error::Structural(format!(
                "convolution expects {} channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let (len, in_c, k, pad) = (x.len, self.in_channels, self.kernel, self.pad());
        if len <= pad {
            return Err(Error::Argument(format!("sequence of {len} frames too short for kernel {k}")));
        }
        let rows = x.data.nrows();
        let src = x.data.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut dst = Vec::with_capacity(rows * k * in_c);
        // Row-major fill: every entry is written exactly once, in order.
        for b in 0..x.batch() {
            for t in 0..len {
                for tap in 0..k {
                    let s = reflect(t as isize + tap as isize - pad as isize, len);
                    let from = (b * len + s) * in_c;
                    dst.extend_from_slice(&src[from..from + in_c]);
                }
            }
        }
        Ok(Array2::from_shape_vec((rows, k * in_c), dst).expect("filled every entry"))
    }

    fn col2im(&self, dcol: &Array2<f64>, len: usize) -> Array2<f64> {
        let (in_c, k, pad) = (self.in_channels, self.kernel, self.pad());
        let rows = dcol.nrows();
        let mut dx = Array2::zeros((rows, in_c));
        let src = dcol.as_slice().expect("standard layout");
        let dst = dx.as_slice_mut().expect("fresh array");
        for b in 0..rows / len {
            for t in 0..len {
                let r = b * len + t;
                for tap in 0..k {
                    let s = reflect(t as isize + tap as isize - pad as isize, len);
                    let to = (b * len + s) * in_c;
                    let from = r * k * in_c + tap * in_c;
                    for c in 0..in_c {
                        dst[to + c] += src[from + c];
                    }
                }
            }
        }
        dx
    }

    /// `col * W^T (+ bias)`.
    pub fn apply_col(&self, col: &Array2<f64>, with_bias: bool) -> Array2<f64> {
        let mut out = col.dot(&self.weight.t());
        if with_bias {
            out += &self.bias;
        }
        out
    }

    pub fn forward(&self, x: &SeqBatch) -> Result<SeqBatch> {
        let col = self.im2col(x)?;
        Ok(SeqBatch::new(x.len, self.apply_col(&col, true)))
    }

    /// Accumulate parameter gradients and optionally return the input gradient.
    fn backward(&self, col: &Array2<f64>, dy: &Array2<f64>, len: usize, grads: Option<&mut ConvGrads>, with_bias: bool, want_input: bool) -> Option<Array2<f64>> {
        if let Some(g) = grads {
            general_mat_mul(1.0, &dy.t(), col, 1.0, &mut g.weight);
            g.weight *= &self.mask;
            if with_bias {
                g.bias += &dy.sum_axis(Axis(0));
            }
        }
        if want_input {
            Some(self.col2im(&dy.dot(&self.weight), len))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Four skeleton convolutions with leaky ReLU after all but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<Conv1d>,
    pub negative_slope: f64,
}

/// Intermediate values of a forward pass needed for backward passes.
#[derive(Debug, Clone)]
pub struct StackCache {
    len: usize,
    cols: Vec<Array2<f64>>,
    /// Leaky-ReLU derivative (1 or slope) after each hidden layer.
    slopes: Vec<Array2<f64>>,
    with_bias: bool,
}

impl StackCache {
    pub fn len(&self) -> usize {
        self.len
    }
}

pub type StackGrads = Vec<ConvGrads>;

impl ConvStack {
    pub fn zero_grads(&self) -> StackGrads {
        self.layers
            .iter()
            .map(|l| ConvGrads {
                weight: Array2::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect()
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().expect("non-empty stack").out_channels()
    }

    /// Temporal receptive field in frames.
    pub fn receptive_field(&self) -> usize {
        self.layers.iter().map(|l| l.kernel - 1).sum::<usize>() + 1
    }

    pub fn forward(&self, x: &SeqBatch) -> Result<(SeqBatch, StackCache)> {
        self.run(x, None)
    }

    /// The network with activation slopes frozen to those of `base` and all
    /// biases removed: the map `h -> J(x) h` where `J` is the Jacobian of the
    /// network at the input that produced `base`.
    pub fn forward_linearized(&self, h: &SeqBatch, base: &StackCache) -> Result<(SeqBatch, StackCache)> {
        self.run(h, Some(base))
    }

    fn run(&self, x: &SeqBatch, base: Option<&StackCache>) -> Result<(SeqBatch, StackCache)> {
        let with_bias = base.is_none();
        let n = self.layers.len();
        let mut cols = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n.saturating_sub(1));
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let col = layer.im2col(&cur)?;
            let mut y = layer.apply_col(&col, with_bias);
            cols.push(col);
            if i + 1 < n {
                let s = match base {
                    Some(b) => b.slopes[i].clone(),
                    None => y.mapv(|v| if v > 0.0 { 1.0 } else { self.negative_slope }),
                };
                y *= &s;
                slopes.push(s);
            }
            cur = SeqBatch::new(x.len, y);
        }
        Ok((
            cur,
            StackCache {
                len: x.len,
                cols,
                slopes,
                with_bias,
            },
        ))
    }

    /// Outputs of every layer (after activation where present).
    pub fn layer_outputs(&self, x: &SeqBatch) -> Result<Vec<SeqBatch>> {
        let n = self.layers.len();
        let mut outs = Vec::with_capacity(n);
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur)?;
            if i + 1 < n {
                let s = self.negative_slope;
                y.data.mapv_inplace(|v| if v > 0.0 { v } else { s * v });
            }
            outs.push(y.clone());
            cur = y;
        }
        Ok(outs)
    }

    /// Backpropagate `dy` through the cached pass.
    pub fn backward(&self, cache: &StackCache, dy: &SeqBatch, mut grads: Option<&mut StackGrads>, want_input: bool) -> Option<SeqBatch> {
        let n = self.layers.len();
        let mut g = dy.data.clone();
        for i in (0..n).rev() {
            let need_input = want_input || i > 0;
            let layer_grads = grads.as_deref_mut().map(|gs| &mut gs[i]);
            let dx = self.layers[i].backward(&cache.cols[i], &g, cache.len, layer_grads, cache.with_bias, need_input);
            match dx {
                Some(mut dx) => {
                    if i > 0 {
                        dx *= &cache.slopes[i - 1];
                    }
                    g = dx;
                }
                None => return None,
            }
        }
        Some(SeqBatch::new(cache.len, g))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.mask.sum() as usize + l.bias.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_spec(in_c: usize, out_c: usize, k: usize) -> SkeletonConvSpec {
        SkeletonConvSpec {
            neighbor_lists: vec![vec![0]],
            temporal_kernel: k,
            in_nodes: vec![0; in_c],
            out_nodes: vec![Some(0); out_c],
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, len: usize, c: usize) -> SeqBatch {
        let dist = Uniform::new(-1.0, 1.0).unwrap();
        SeqBatch::new(len, Array2::from_shape_fn((b * len, c), |_| dist.sample(rng)))
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv1d::new(&dense_spec(3, 2, 5), &mut rng);
        conv.weight.fill(0.0);
        conv.bias = Array1::from(vec![0.0, 1.5]);
        let x = random_batch(&mut rng, 2, 9, 3);
        let y = conv.forward(&x).unwrap();
        for r in y.data.rows() {
            assert_eq!(r[0], 0.0);
            assert_eq!(r[1], 1.5);
        }
    }

    #[test]
    fn kernel_one_per_joint_equals_matmul() {
        // Two joints, block-diagonal neighbors: the conv is x * W^T per frame.
        let spec = SkeletonConvSpec {
            neighbor_lists: vec![vec![0], vec![1]],
            temporal_kernel: 1,
            in_nodes: vec![0, 0, 1, 1],
            out_nodes: vec![Some(0), Some(0), Some(0), Some(1), Some(1)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::new(&spec, &mut rng);
        let x = random_batch(&mut rng, 1, 6, 4);
        let y = conv.forward(&x).unwrap();
        let w = &conv.weight;
        for t in 0..6 {
            for o in 0..5 {
                let mut acc = conv.bias[o];
                for c in 0..4 {
                    let same = (o < 3) == (c < 2);
                    if same {
                        acc += w[[o, c]] * x.data[[t, c]];
                    } else {
                        assert_eq!(w[[o, c]], 0.0);
                    }
                }
                assert!((y.data[[t, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_neighborhood_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::new(&dense_spec(3, 4, 3), &mut rng);
        let x = random_batch(&mut rng, 1, 7, 3);
        let y = conv.forward(&x).unwrap();
        for t in 0..7isize {
            for o in 0..4 {
                let mut acc = conv.bias[o];
                for tap in 0..3isize {
                    let s = reflect(t + tap - 1, 7);
                    for c in 0..3 {
                        acc += conv.weight[[o, tap as usize * 3 + c]] * x.data[[s, c]];
                    }
                }
                assert!((y.data[[t as usize, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv1d::new(&dense_spec(2, 3, 5), &mut rng);
        let x = SeqBatch::new(10, Array2::from_shape_fn((10, 2), |(_, c)| c as f64 + 0.5));
        let y = conv.forward(&x).unwrap();
        for r in y.data.rows() {
            for o in 0..3 {
                assert!((r[o] - y.data[[0, o]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv1d::new(&dense_spec(3, 2, 3), &mut rng);
        let x = random_batch(&mut rng, 1, 6, 4);
        assert!(matches!(conv.forward(&x), Err(Error::Structural(_))));
    }

    fn stack(rng: &mut ChaCha8Rng) -> ConvStack {
        ConvStack {
            layers: vec![
                Conv1d::new(&dense_spec(3, 4, 3), rng),
                Conv1d::new(&dense_spec(4, 4, 3), rng),
                Conv1d::new(&dense_spec(4, 2, 3), rng),
            ],
            negative_slope: 0.2,
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = stack(&mut rng);
        let x = random_batch(&mut rng, 2, 6, 3);
        let dy = random_batch(&mut rng, 2, 6, 2);
        let objective = |net: &ConvStack, x: &SeqBatch| (&net.forward(x).unwrap().0.data * &dy.data).sum();
        let (_, cache) = net.forward(&x).unwrap();
        let mut grads = net.zero_grads();
        let dx = net.backward(&cache, &dy, Some(&mut grads), true).unwrap();
        let eps = 1e-6;
        for idx in [(0usize, 0usize), (3, 1), (7, 2), (11, 0)] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let fd = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * eps);
            assert!((fd - dx.data[idx]).abs() < 1e-6, "input {idx:?}: {fd} vs {}", dx.data[idx]);
        }
        for (l, w) in [(0usize, (1usize, 2usize)), (1, (3, 5)), (2, (1, 7))] {
            let mut np = net.clone();
            np.layers[l].weight[w] += eps;
            let mut nm = net.clone();
            nm.layers[l].weight[w] -= eps;
            let fd = (objective(&np, &x) - objective(&nm, &x)) / (2.0 * eps);
            assert!((fd - grads[l].weight[w]).abs() < 1e-6);
        }
        let mut np = net.clone();
        np.layers[1].bias[2] += eps;
        let mut nm = net.clone();
        nm.layers[1].bias[2] -= eps;
        let fd = (objective(&np, &x) - objective(&nm, &x)) / (2.0 * eps);
        assert!((fd - grads[1].bias[2]).abs() < 1e-6);
    }

    #[test]
    fn linearized_pass_is_the_jacobian_vector_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = stack(&mut rng);
        let x = random_batch(&mut rng, 1, 8, 3);
        let h = random_batch(&mut rng, 1, 8, 3);
        let (_, cache) = net.forward(&x).unwrap();
        let (jvp, _) = net.forward_linearized(&h, &cache).unwrap();
        let eps = 1e-7;
        let mut xp = x.clone();
        xp.data.scaled_add(eps, &h.data);
        let mut xm = x.clone();
        xm.data.scaled_add(-eps, &h.data);
        let fd = (net.forward(&xp).unwrap().0.data - net.forward(&xm).unwrap().0.data) / (2.0 * eps);
        for (a, b) in fd.iter().zip(jvp.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
