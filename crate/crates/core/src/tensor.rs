//! Image sequences, their matrix unfolding, and observation masks.
//!
//! A sequence is a 4th-order tensor indexed `(i, j, k, l)` = (row, column,
//! channel, time). Storage is flat with `i` fastest, then `j`, `k`, `l`.
//!
//! The matrix unfolding has one row per pixel and one column per
//! (channel, time) pair:
//!
//! ```text
//! u = i + j * m
//! v = l + k * t
//! ```
//!
//! so every channel occupies a contiguous block of `t` columns in time order.
//! The temporal operators in [`crate::temporal`] rely on that layout.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Extent of a sequence: `m × n` pixels, `c` channels, `t` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub c: usize,
    pub t: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize, c: usize, t: usize) -> Result<Self> {
        if m == 0 || n == 0 || c == 0 || t == 0 {
            return Err(Error::Shape(format!(
                "all dimensions must be positive, got {m}x{n}x{c}x{t}"
            )));
        }
        Ok(Self { m, n, c, t })
    }

    pub fn pixels(&self) -> usize {
        self.m * self.n
    }

    pub fn columns(&self) -> usize {
        self.c * self.t
    }

    pub fn len(&self) -> usize {
        self.m * self.n * self.c * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        i + self.m * (j + self.n * (k + self.c * l))
    }

    #[inline]
    pub fn row(&self, i: usize, j: usize) -> usize {
        i + j * self.m
    }

    #[inline]
    pub fn column(&self, k: usize, l: usize) -> usize {
        l + k * self.t
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.m, self.n, self.c, self.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    dims: Dims,
    data: Vec<f64>,
}

impl ImageSequence {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    /// Wraps a flat buffer (`i` fastest, `l` slowest).
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape(format!(
                "{} values for a {dims} sequence",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for l in 0..dims.t {
            for k in 0..dims.c {
                for j in 0..dims.n {
                    for i in 0..dims.m {
                        data.push(f(i, j, k, l));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.dims.index(i, j, k, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        let idx = self.dims.index(i, j, k, l);
        self.data[idx] = value;
    }

    /// Checks that every value is finite and inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sequence entry {pos}")));
        }
        if let Some(pos) = self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "sequence entry {pos} = {} outside [0, 1]",
                self.data[pos]
            )));
        }
        Ok(())
    }

    /// Unfolds into the `(m·n) × (c·t)` data matrix.
    pub fn to_matrix(&self) -> DataMatrix {
        let d = self.dims;
        let rows = d.pixels();
        let mut values = DMatrix::zeros(rows, d.columns());
        // Each (k, l) slab of the tensor is one contiguous matrix column.
        for l in 0..d.t {
            for k in 0..d.c {
                let src = &self.data[rows * (k + d.c * l)..rows * (k + d.c * l + 1)];
                values.column_mut(d.column(k, l)).copy_from_slice(src);
            }
        }
        DataMatrix { values, dims: d }
    }

    /// Frame `l` of channel `k` as a flat `m·n` slice (column-major pixels).
    pub fn plane(&self, k: usize, l: usize) -> &[f64] {
        let p = self.dims.pixels();
        let start = p * (k + self.dims.c * l);
        &self.data[start..start + p]
    }
}

/// The unfolded `(m·n) × (c·t)` matrix together with the tensor extent it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub values: DMatrix<f64>,
    pub dims: Dims,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, dims: Dims) -> Result<Self> {
        if values.nrows() != dims.pixels() || values.ncols() != dims.columns() {
            return Err(Error::Shape(format!(
                "{}x{} matrix cannot hold a {dims} sequence",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { values, dims })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            values: DMatrix::zeros(dims.pixels(), dims.columns()),
            dims,
        }
    }

    /// Folds back into a sequence; exact inverse of [`ImageSequence::to_matrix`].
    pub fn to_sequence(&self) -> Result<ImageSequence> {
        let d = self.dims;
        let rows = d.pixels();
        if self.values.nrows() != rows || self.values.ncols() != d.columns() {
            return Err(Error::Shape(format!(
                "{}x{} matrix cannot hold a {d} sequence",
                self.values.nrows(),
                self.values.ncols()
            )));
        }
        let mut data = vec![0.0; d.len()];
        for l in 0..d.t {
            for k in 0..d.c {
                data[rows * (k + d.c * l)..rows * (k + d.c * l + 1)]
                    .copy_from_slice(self.values.column(d.column(k, l)).as_slice());
            }
        }
        Ok(ImageSequence { dims: d, data })
    }

    pub fn with_values(&self, values: DMatrix<f64>) -> Self {
        debug_assert_eq!(values.shape(), self.values.shape());
        Self {
            values,
            dims: self.dims,
        }
    }
}

/// A scalar per `(i, j, l)`: pixel position and frame. Layout `i + m·(j + n·l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    pub m: usize,
    pub n: usize,
    pub t: usize,
    pub values: Vec<f64>,
}

impl FrameField {
    pub fn zeros(m: usize, n: usize, t: usize) -> Self {
        Self {
            m,
            n,
            t,
            values: vec![0.0; m * n * t],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[i + self.m * (j + self.n * l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, value: f64) {
        self.values[i + self.m * (j + self.n * l)] = value;
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        let p = self.m * self.n;
        &self.values[p * l..p * (l + 1)]
    }
}

/// Non-cloudy set Ω over `(i, j, l)`; applies to every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    m: usize,
    n: usize,
    t: usize,
    observed: Vec<bool>,
}

impl ObservationMask {
    pub fn new(m: usize, n: usize, t: usize, fill: bool) -> Self {
        Self {
            m,
            n,
            t,
            observed: vec![fill; m * n * t],
        }
    }

    pub fn for_dims(dims: Dims, fill: bool) -> Self {
        Self::new(dims.m, dims.n, dims.t, fill)
    }

    /// Flat layout: `i + m·(j + n·l)`.
    pub fn from_vec(m: usize, n: usize, t: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != m * n * t {
            return Err(Error::Shape(format!(
                "{} mask entries for {m}x{n}x{t}",
                observed.len()
            )));
        }
        Ok(Self { m, n, t, observed })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.t)
    }

    pub fn matches(&self, dims: Dims) -> bool {
        self.m == dims.m && self.n == dims.n && self.t == dims.t
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, l: usize) -> usize {
        i + self.m * (j + self.n * l)
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize, l: usize) -> bool {
        self.observed[self.idx(i, j, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, value: bool) {
        let idx = self.idx(i, j, l);
        self.observed[idx] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    /// Frame `l` as a flat column-major `m·n` slice.
    pub fn frame(&self, l: usize) -> &[bool] {
        let p = self.m * self.n;
        &self.observed[p * l..p * (l + 1)]
    }

    pub fn count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.shape() == other.shape()
            && self
                .observed
                .iter()
                .zip(&other.observed)
                .all(|(&a, &b)| !a || b)
    }

    /// Broadcasts across `c` channels into an entrywise mask over the data
    /// matrix.
    pub fn to_entries(&self, c: usize) -> EntryMask {
        let rows = self.m * self.n;
        let cols = c * self.t;
        let mut observed = vec![false; rows * cols];
        for k in 0..c {
            for l in 0..self.t {
                let v = l + k * self.t;
                observed[v * rows..(v + 1) * rows].copy_from_slice(self.frame(l));
            }
        }
        EntryMask {
            rows,
            cols,
            observed,
        }
    }
}

/// Entrywise observation pattern over a data matrix (column-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
}

impl EntryMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut observed = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                observed.push(f(r, c));
            }
        }
        Self {
            rows,
            cols,
            observed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.observed[r + c * self.rows]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.observed[r + c * self.rows] = value;
    }

    /// Column-major flags, aligned with `DMatrix::as_slice`.
    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn check_shape(&self, mat: &DMatrix<f64>) -> Result<()> {
        if mat.shape() != (self.rows, self.cols) {
            return Err(Error::Shape(format!(
                "mask is {}x{}, matrix is {}x{}",
                self.rows,
                self.cols,
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(())
    }

    /// `P_Ω(x)`: zero outside the mask.
    pub fn project(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = mat.clone();
        for (v, &obs) in out.as_mut_slice().iter_mut().zip(&self.observed) {
            if !obs {
                *v = 0.0;
            }
        }
        out
    }
}
