//! Dense tensors, matrices and the unfolding / Kronecker / Khatri-Rao kernels.
//!
//! Every array in the crate uses the same linearization: the multi-index
//! `(i_1, ..., i_N)` (0-based here) lives at offset `sum_n i_n * prod_{m<n} I_m`,
//! i.e. the first mode varies fastest. A [`Matrix`] is a 2-mode tensor under the
//! same rule, so it is stored column-major.
//!
//! The mode-`k` unfolding puts `i_k` on the rows and the remaining modes on the
//! columns in ascending order, smallest remaining mode fastest. All the
//! Kronecker and Khatri-Rao orderings used by the cherry network are written
//! against this convention.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Number of entries of a tensor with the given shape.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Column-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &d in shape {
        out.push(acc);
        acc *= d;
    }
    out
}

/// Advances `idx` to the next multi-index of `shape`, first mode fastest.
/// Returns `false` after wrapping past the last index.
pub fn next_index(idx: &mut [usize], shape: &[usize]) -> bool {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return true;
        }
        *i = 0;
    }
    false
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("tensor must have at least one mode".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::InvalidShape(format!(
            "mode {} has zero length in {shape:?}",
            pos + 1
        )));
    }
    Ok(())
}

/// An N-dimensional array of `f64`, first mode fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let expected = numel(&shape);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        check_shape(shape)?;
        Ok(DenseTensor {
            shape: shape.to_vec(),
            values: vec![value; numel(shape)],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index (0-based).
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let mut values = Vec::with_capacity(numel(shape));
        let mut idx = vec![0; shape.len()];
        loop {
            values.push(f(&idx));
            if !next_index(&mut idx, shape) {
                break;
            }
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear offset of a 0-based multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, d)| i >= d) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in index.iter().zip(&self.shape) {
            off += i * stride;
            stride *= d;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.values[off] = value;
        Ok(())
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        DenseTensor::new(shape, self.values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `||self - other||_F`.
    pub fn distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    /// Reinterprets a 2-mode tensor as a matrix.
    pub fn into_matrix(self) -> Result<Matrix> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected a 2-mode tensor, got shape {:?}",
                self.shape
            )));
        }
        Matrix::new(self.shape[0], self.shape[1], self.values)
    }
}

/// A dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!("matrix {rows}x{cols}")));
        }
        if rows * cols != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix {rows}x{cols}");
        Matrix {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row slices (convenient for literals in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let mut values = vec![0.0; r * c];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[i + r * j] = v;
            }
        }
        Matrix::new(r, c, values)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m.values[i + rows * j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.rows..(j + 1) * self.rows]
    }

    /// The `j`-th column as an `rows x 1` matrix.
    pub fn column_matrix(&self, j: usize) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: 1,
            values: self.column(j).to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for l in 0..self.cols {
                let b = other[(l, j)];
                if b == 0.0 {
                    continue;
                }
                let a = self.column(l);
                let dst = out.column_mut(j);
                for (d, &x) in dst.iter_mut().zip(a) {
                    *d += x * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.cols, other.cols, |i, j| {
            self.column(i)
                .iter()
                .zip(other.column(j))
                .map(|(a, b)| a * b)
                .sum()
        }))
    }

    /// Left-multiplies by `diag(d)`.
    pub fn scale_rows(&self, d: &[f64]) -> Result<Matrix> {
        if d.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "diagonal of length {} for {} rows",
                d.len(),
                self.rows
            )));
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| d[i] * self[(i, j)]))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub fn into_tensor(self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.rows, self.cols],
            values: self.values,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i + self.rows * j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i + self.rows * j]
    }
}

fn check_mode(k: usize, order: usize) -> Result<()> {
    if k >= order {
        return Err(Error::ModeOutOfRange { mode: k, order });
    }
    Ok(())
}

/// Mode-`k` unfolding (`k` is 0-based): an `I_k x prod_{m != k} I_m` matrix.
pub fn unfold(t: &DenseTensor, k: usize) -> Result<Matrix> {
    check_mode(k, t.order())?;
    let shape = t.shape();
    let rows = shape[k];
    let cols = t.len() / rows;
    let mut out = vec![0.0; t.len()];
    let mut idx = vec![0; shape.len()];
    for &v in t.values() {
        let mut col = 0;
        let mut stride = 1;
        for (m, (&i, &d)) in idx.iter().zip(shape).enumerate() {
            if m != k {
                col += i * stride;
                stride *= d;
            }
        }
        out[idx[k] + rows * col] = v;
        next_index(&mut idx, shape);
    }
    Matrix::new(rows, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, k: usize, shape: &[usize]) -> Result<DenseTensor> {
    check_shape(shape)?;
    check_mode(k, shape.len())?;
    let cols = numel(shape) / shape[k];
    if m.rows() != shape[k] || m.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix cannot fold into mode {} of {shape:?} (expected {}x{cols})",
            m.rows(),
            m.cols(),
            k + 1,
            shape[k]
        )));
    }
    let rows = shape[k];
    DenseTensor::from_fn(shape, |idx| {
        let mut col = 0;
        let mut stride = 1;
        for (mode, (&i, &d)) in idx.iter().zip(shape).enumerate() {
            if mode != k {
                col += i * stride;
                stride *= d;
            }
        }
        m.values()[idx[k] + rows * col]
    })
}

/// Standard Kronecker product `a ⊗ b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (br, bc) = (b.rows(), b.cols());
    Matrix::from_fn(a.rows() * br, a.cols() * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Kronecker product of a sequence, left to right. `None` for an empty list.
pub fn kronecker_all<'a>(ms: impl IntoIterator<Item = &'a Matrix>) -> Option<Matrix> {
    ms.into_iter().fold(None, |acc, m| match acc {
        None => Some(m.clone()),
        Some(a) => Some(kronecker(&a, m)),
    })
}

/// Column-wise Kronecker product: row `i * b.rows + j` of column `l` is
/// `a[i, l] * b[j, l]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let br = b.rows();
    Ok(Matrix::from_fn(a.rows() * br, a.cols(), |r, l| {
        a[(r / br, l)] * b[(r % br, l)]
    }))
}

/// Khatri-Rao product of a sequence, left to right.
pub fn khatri_rao_all<'a>(ms: impl IntoIterator<Item = &'a Matrix>) -> Result<Option<Matrix>> {
    let mut acc: Option<Matrix> = None;
    for m in ms {
        acc = Some(match acc {
            None => m.clone(),
            Some(a) => khatri_rao(&a, m)?,
        });
    }
    Ok(acc)
}

/// Elementwise product with singleton broadcasting along any mode.
pub fn broadcast_hadamard(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.order() != b.order() {
        return Err(Error::ShapeMismatch(format!(
            "cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut shape = Vec::with_capacity(a.order());
    for (&x, &y) in a.shape().iter().zip(b.shape()) {
        if x == y || y == 1 {
            shape.push(x);
        } else if x == 1 {
            shape.push(y);
        } else {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} with {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    // Singleton modes get stride 0 so the same entry is reused.
    let bstride = |t: &DenseTensor| -> Vec<usize> {
        strides(t.shape())
            .into_iter()
            .zip(t.shape())
            .map(|(s, &d)| if d == 1 { 0 } else { s })
            .collect()
    };
    let (sa, sb) = (bstride(a), bstride(b));
    DenseTensor::from_fn(&shape, |idx| {
        let (mut oa, mut ob) = (0, 0);
        for (n, &i) in idx.iter().enumerate() {
            oa += i * sa[n];
            ob += i * sb[n];
        }
        a.values()[oa] * b.values()[ob]
    })
}
