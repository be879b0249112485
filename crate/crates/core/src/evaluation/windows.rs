//! Window extraction, coverage and nearest-neighbor diversity.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::motion::rotation::sixd_to_quaternion;
use crate::motion::{FeatureLayout, MotionTensor};

/// Flattened sliding windows (stride 1) of `x`'s rows.
pub fn windows(x: ArrayView2<'_, f64>, len: usize) -> Result<Array2<f64>> {
    if len == 0 || x.nrows() < len {
        return Err(Error::Argument(format!("cannot take {len}-frame windows of a {}-frame sequence", x.nrows())));
    }
    let n = x.nrows() - len + 1;
    let w = x.ncols() * len;
    let mut out = Array2::zeros((n, w));
    for s in 0..n {
        let win = x.slice(ndarray::s![s..s + len, ..]);
        for (dst, src) in out.row_mut(s).iter_mut().zip(win.iter()) {
            *dst = *src;
        }
    }
    Ok(out)
}

pub(crate) fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance from each row of `queries` to its nearest row of `pool`.
pub fn nearest_distances(queries: &Array2<f64>, pool: &Array2<f64>) -> Vec<f64> {
    // |q - p|^2 = |q|^2 + |p|^2 - 2 q.p, with the cross term as one product.
    let qn: Vec<f64> = queries.rows().into_iter().map(|r| r.dot(&r)).collect();
    let pn: Vec<f64> = pool.rows().into_iter().map(|r| r.dot(&r)).collect();
    let cross = queries.dot(&pool.t());
    (0..queries.nrows())
        .map(|i| {
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for j in 0..pool.nrows() {
                let d = qn[i] + pn[j] - 2.0 * cross[[i, j]];
                if d < best {
                    best = d;
                    best_j = j;
                }
            }
            // Recompute the winner exactly; the expansion loses precision
            // near zero.
            sq_dist(queries.row(i), pool.row(best_j)).sqrt()
        })
        .collect()
}

/// All pairwise distances between distinct rows.
pub fn pairwise_distances(x: &Array2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    out
}

/// Linear-interpolated percentile (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Standard deviations below this are raised to it, so near-constant
/// channels do not dominate distances. Matches the training normalizer.
pub const STD_FLOOR: f64 = 0.1;

/// Per-feature standardization with the input clip's statistics.
pub(crate) struct Standardizer {
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl Standardizer {
    pub(crate) fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        Standardizer { mean, std }
    }

    pub(crate) fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }
}

/// Coverage threshold: a percentile of the distances between the input's own windows.
pub fn calibrate_epsilon(input: &MotionTensor, window: usize, percentile_value: f64) -> Result<f64> {
    let std = Standardizer::fit(input.features.view());
    let w = windows(std.apply(input.features.view()).view(), window)?;
    let d = pairwise_distances(&w);
    if d.is_empty() {
        return Err(Error::Argument("need at least two input windows to calibrate epsilon".into()));
    }
    Ok(percentile(&d, percentile_value).max(1e-9))
}

/// Fraction of input windows whose nearest generated window lies closer than
/// `epsilon`, on features standardized by the input's statistics.
pub fn coverage(input: &MotionTensor, generated: &[MotionTensor], window: usize, epsilon: f64) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Argument("coverage needs at least one generated sequence".into()));
    }
    let std = Standardizer::fit(input.features.view());
    let q = windows(std.apply(input.features.view()).view(), window)?;
    let pool = stack_windows(generated.iter().map(|g| std.apply(g.features.view())), window)?;
    let nn = nearest_distances(&q, &pool);
    Ok(nn.iter().filter(|&&d| d < epsilon).count() as f64 / nn.len() as f64)
}

fn stack_windows(seqs: impl Iterator<Item = Array2<f64>>, window: usize) -> Result<Array2<f64>> {
    let parts: Vec<Array2<f64>> = seqs.map(|s| windows(s.view(), window)).collect::<Result<_>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Structural(e.to_string()))
}

/// Per-frame joint rotations as axis-angle vectors (`frames x 3J`).
pub fn rotation_angle_features(m: &MotionTensor) -> Array2<f64> {
    let layout = FeatureLayout::of(&m.topology);
    let mut out = Array2::zeros((m.frames(), 3 * layout.joints));
    for (t, row) in m.features.rows().into_iter().enumerate() {
        for j in 0..layout.joints {
            let v: Vec<f64> = layout.rotation(j).map(|c| row[c]).collect();
            let a = sixd_to_quaternion(&v).scaled_axis();
            for k in 0..3 {
                out[[t, 3 * j + k]] = a[k];
            }
        }
    }
    out
}

/// Mean nearest-input distance of generated rotation-angle windows, divided
/// by the mean distance between the input's own windows.
pub fn nn_diversity(input: &MotionTensor, generated: &[MotionTensor], window: usize) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::Argument("diversity needs at least one generated sequence".into()));
    }
    let iw = windows(rotation_angle_features(input).view(), window)?;
    let scale = {
        let d = pairwise_distances(&iw);
        if d.is_empty() {
            1.0
        } else {
            (d.iter().sum::<f64>() / d.len() as f64).max(1e-12)
        }
    };
    let pool = stack_windows(generated.iter().map(rotation_angle_features), window)?;
    let nn = nearest_distances(&pool, &iw);
    Ok(nn.iter().sum::<f64>() / nn.len() as f64 / scale)
}

/// Nearest-input distance of every window of one generated sequence, for
/// locating where it departs from the input.
pub fn diversity_profile(input: &MotionTensor, generated: &MotionTensor, window: usize) -> Result<Vec<f64>> {
    let iw = windows(rotation_angle_features(input).view(), window)?;
    let gw = windows(rotation_angle_features(generated).view(), window)?;
    Ok(nearest_distances(&gw, &iw))
}
