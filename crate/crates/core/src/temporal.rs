//! Temporal finite-difference operators on the data matrix.
//!
//! Columns are grouped in `c` blocks of `t` consecutive frames. Within each
//! block the forward difference is `d_0 = 0`, `d_l = x_l - x_{l-1}`; the
//! Gram operator is the path-graph Laplacian (second difference with free
//! ends), applied blockwise. Nothing here materializes a `ct × ct` matrix.

use nalgebra::DMatrix;

use crate::tensor::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalOperator {
    pub channels: usize,
    pub frames: usize,
}

impl TemporalOperator {
    pub fn new(channels: usize, frames: usize) -> Self {
        Self { channels, frames }
    }

    pub fn width(&self) -> usize {
        self.channels * self.frames
    }

    fn check_cols(&self, x: &DMatrix<f64>) {
        assert_eq!(
            x.ncols(),
            self.width(),
            "matrix has {} columns, operator expects {}",
            x.ncols(),
            self.width()
        );
    }

    /// Forward differences along time; the first column of every channel
    /// block is zero.
    pub fn diff(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_cols(x);
        let t = self.frames;
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for k in 0..self.channels {
            for l in 1..t {
                let v = k * t + l;
                let mut col = out.column_mut(v);
                col.copy_from(&x.column(v));
                col -= x.column(v - 1);
            }
        }
        out
    }

    /// `‖diff(x)‖_F²` without allocating.
    pub fn diff_norm_sq(&self, x: &DMatrix<f64>) -> f64 {
        self.check_cols(x);
        let t = self.frames;
        let rows = x.nrows();
        let data = x.as_slice();
        let mut total = 0.0;
        for k in 0..self.channels {
            for l in 1..t {
                let v = k * t + l;
                let cur = &data[v * rows..(v + 1) * rows];
                let prev = &data[(v - 1) * rows..v * rows];
                total += cur
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
        total
    }

    /// `x · L` where `L` is the blockwise path Laplacian; this is the
    /// gradient of `½‖diff(x)‖_F²`.
    pub fn laplacian(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_cols(x);
        let t = self.frames;
        let rows = x.nrows();
        let mut out = DMatrix::zeros(rows, x.ncols());
        if t < 2 {
            return out;
        }
        let src = x.as_slice();
        let dst = out.as_mut_slice();
        for k in 0..self.channels {
            for l in 0..t {
                let v = k * t + l;
                let cur = &src[v * rows..(v + 1) * rows];
                let o = &mut dst[v * rows..(v + 1) * rows];
                if l > 0 {
                    let prev = &src[(v - 1) * rows..v * rows];
                    for ((o, c), p) in o.iter_mut().zip(cur).zip(prev) {
                        *o += c - p;
                    }
                }
                if l + 1 < t {
                    let next = &src[(v + 1) * rows..(v + 2) * rows];
                    for ((o, c), n) in o.iter_mut().zip(cur).zip(next) {
                        *o += c - n;
                    }
                }
            }
        }
        out
    }

    /// `L · v` for a matrix whose *rows* are indexed by (channel, time).
    pub fn laplacian_left(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(v.nrows(), self.width());
        let t = self.frames;
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        if t < 2 {
            return out;
        }
        let height = v.nrows();
        for (src, dst) in v
            .as_slice()
            .chunks_exact(height)
            .zip(out.as_mut_slice().chunks_exact_mut(height))
        {
            for k in 0..self.channels {
                let block = &src[k * t..(k + 1) * t];
                let o = &mut dst[k * t..(k + 1) * t];
                for l in 0..t {
                    let mut acc = 0.0;
                    if l > 0 {
                        acc += block[l] - block[l - 1];
                    }
                    if l + 1 < t {
                        acc += block[l] - block[l + 1];
                    }
                    o[l] = acc;
                }
            }
        }
        out
    }
}

pub fn temporal_diff(x: &DataMatrix) -> DMatrix<f64> {
    TemporalOperator::new(x.dims.c, x.dims.t).diff(&x.values)
}

pub fn temporal_laplacian(x: &DataMatrix) -> DataMatrix {
    let op = TemporalOperator::new(x.dims.c, x.dims.t);
    x.with_values(op.laplacian(&x.values))
}
