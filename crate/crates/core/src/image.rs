//! Grayscale rasters and the periodic forward-difference operator.
//!
//! Pixels are stored row-major: pixel `(row, col)` lives at index
//! `row * cols + col`. A [`GradField`] stores the horizontal differences of
//! every pixel in its first `n` entries and the vertical differences in the
//! next `n`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidImage(format!("empty grid {rows}x{cols}")));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidImage("dimension overflow".into()))?;
        if data.len() != n {
            return Err(Error::InvalidImage(format!(
                "{rows}x{cols} grid needs {n} samples, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite sample".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty grid");
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty grid");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps a buffer produced by an internal kernel; the caller guarantees the length.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { expected: self.shape(), actual: other.shape() });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self - other`, element-wise. Panics on shape mismatch.
    pub fn sub(&self, other: &Image) -> Image {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Image::from_raw(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Image) -> Image {
        assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Image::from_raw(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Central crop to at most `rows x cols`.
    pub fn center_crop(&self, rows: usize, cols: usize) -> Image {
        let rows = rows.min(self.rows);
        let cols = cols.min(self.cols);
        let r0 = (self.rows - rows) / 2;
        let c0 = (self.cols - cols) / 2;
        Image::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradField {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * rows * cols {
            return Err(Error::InvalidParameter(format!(
                "gradient field on {rows}x{cols} needs {} entries, got {}",
                2 * rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; 2 * rows * cols] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn horizontal(&self) -> &[f64] {
        &self.data[..self.pixels()]
    }

    pub fn vertical(&self) -> &[f64] {
        &self.data[self.pixels()..]
    }

    /// The 2-vector `(g_h, g_v)` at pixel `i`.
    pub fn at(&self, i: usize) -> [f64; 2] {
        [self.data[i], self.data[i + self.pixels()]]
    }

    pub fn dot(&self, other: &GradField) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }
}

/// Periodic forward differences: `(x[r, c+1] - x[r, c], x[r+1, c] - x[r, c])`.
pub fn grad_apply(x: &Image) -> GradField {
    let mut g = GradField::zeros(x.rows, x.cols);
    grad_into(x.rows, x.cols, &x.data, &mut g.data);
    g
}

/// Adjoint of [`grad_apply`].
pub fn grad_adjoint(g: &GradField) -> Image {
    let mut out = vec![0.0; g.pixels()];
    grad_adjoint_into(g.rows, g.cols, &g.data, &mut out);
    Image::from_raw(g.rows, g.cols, out)
}

pub(crate) fn grad_into(rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    let n = rows * cols;
    let (gh, gv) = out.split_at_mut(n);
    for r in 0..rows {
        let row = r * cols;
        let below = if r + 1 == rows { 0 } else { row + cols };
        for c in 0..cols {
            let i = row + c;
            let right = if c + 1 == cols { row } else { i + 1 };
            gh[i] = x[right] - x[i];
            gv[i] = x[below + c] - x[i];
        }
    }
}

pub(crate) fn grad_adjoint_into(rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    let n = rows * cols;
    let (gh, gv) = g.split_at(n);
    for r in 0..rows {
        let row = r * cols;
        let above = if r == 0 { (rows - 1) * cols } else { row - cols };
        for c in 0..cols {
            let i = row + c;
            let left = if c == 0 { row + cols - 1 } else { i - 1 };
            out[i] = gh[left] - gh[i] + gv[above + c] - gv[i];
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
