//! Piecewise-linear temporal resampling on a uniform, endpoint-aligned grid.

use ndarray::{Array2, ArrayView2, Axis};

/// Precomputed linear interpolation from `src` frames to `dst` frames.
///
/// Output frame `k` samples the source at `k * (src - 1) / (dst - 1)`.
#[derive(Debug, Clone)]
pub struct Resampler {
    src: usize,
    dst: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl Resampler {
    pub fn new(src: usize, dst: usize) -> Self {
        assert!(src >= 1 && dst >= 1, "resampling needs non-empty sequences");
        let taps = (0..dst)
            .map(|k| {
                if src == 1 {
                    return (0, 0, 0.0);
                }
                if src == dst {
                    return (k, k, 0.0);
                }
                let pos = if dst == 1 { 0.0 } else { k as f64 * (src - 1) as f64 / (dst - 1) as f64 };
                let i0 = (pos.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect();
        Resampler { src, dst, taps }
    }

    pub fn src_len(&self) -> usize {
        self.src
    }

    pub fn dst_len(&self) -> usize {
        self.dst
    }

    /// Resample each column of `x` (rows are frames).
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.src, "resampler source length mismatch");
        if self.src == self.dst {
            return x.to_owned();
        }
        let mut out = Array2::zeros((self.dst, x.ncols()));
        for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (i0, i1, w) = self.taps[k];
            let a = x.row(i0);
            let b = x.row(i1);
            if w == 0.0 {
                row.assign(&a);
            } else {
                ndarray::Zip::from(&mut row)
                    .and(&a)
                    .and(&b)
                    .for_each(|o, &a, &b| *o = (1.0 - w) * a + w * b);
            }
        }
        out
    }

    /// Adjoint of [`apply`](Self::apply): maps gradients on the output grid
    /// back to the source grid.
    pub fn apply_transpose(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(g.nrows(), self.dst, "resampler target length mismatch");
        if self.src == self.dst {
            return g.to_owned();
        }
        let mut out = Array2::zeros((self.src, g.ncols()));
        for (k, row) in g.axis_iter(Axis(0)).enumerate() {
            let (i0, i1, w) = self.taps[k];
            out.row_mut(i0).scaled_add(1.0 - w, &row);
            if w != 0.0 {
                out.row_mut(i1).scaled_add(w, &row);
            }
        }
        out
    }
}

/// Resample the rows of `x` to `target` frames.
pub fn resample_rows(x: ArrayView2<'_, f64>, target: usize) -> Array2<f64> {
    Resampler::new(x.nrows(), target).apply(x)
}
