use std::borrow::Cow;

use super::bf16::{bf16_round, bf16_to_f32};
use super::precision::Precision;
use crate::error::{Error, Result};

/// A flat scalar buffer held in its storage precision.
///
/// Writes round to the buffer's precision (round-to-nearest-even for BF16);
/// reads promote exactly to `f64`.
#[derive(Clone, Debug)]
pub enum StorageBuffer {
    F64(Vec<f64>),
    F32(Vec<f32>),
    Bf16(Vec<u16>),
}

impl StorageBuffer {
    pub fn zeros(len: usize, precision: Precision) -> Self {
        match precision {
            Precision::Fp64 => StorageBuffer::F64(vec![0.0; len]),
            Precision::Fp32 => StorageBuffer::F32(vec![0.0; len]),
            Precision::Bf16 => StorageBuffer::Bf16(vec![0; len]),
        }
    }

    pub fn from_f64(values: &[f64], precision: Precision) -> Self {
        match precision {
            Precision::Fp64 => StorageBuffer::F64(values.to_vec()),
            Precision::Fp32 => StorageBuffer::F32(values.iter().map(|&x| x as f32).collect()),
            Precision::Bf16 => {
                StorageBuffer::Bf16(values.iter().map(|&x| bf16_round(x as f32)).collect())
            }
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            StorageBuffer::F64(_) => Precision::Fp64,
            StorageBuffer::F32(_) => Precision::Fp32,
            StorageBuffer::Bf16(_) => Precision::Bf16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            StorageBuffer::F64(v) => v.len(),
            StorageBuffer::F32(v) => v.len(),
            StorageBuffer::Bf16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            StorageBuffer::F64(v) => v[i],
            StorageBuffer::F32(v) => v[i] as f64,
            StorageBuffer::Bf16(v) => bf16_to_f32(v[i]) as f64,
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, x: f64) {
        match self {
            StorageBuffer::F64(v) => v[i] = x,
            StorageBuffer::F32(v) => v[i] = x as f32,
            StorageBuffer::Bf16(v) => v[i] = bf16_round(x as f32),
        }
    }

    /// All values promoted to `f64`; borrows when the buffer already is `f64`.
    pub fn values(&self) -> Cow<'_, [f64]> {
        match self {
            StorageBuffer::F64(v) => Cow::Borrowed(v),
            StorageBuffer::F32(v) => Cow::Owned(v.iter().map(|&x| x as f64).collect()),
            StorageBuffer::Bf16(v) => {
                Cow::Owned(v.iter().map(|&b| bf16_to_f32(b) as f64).collect())
            }
        }
    }

    pub fn to_precision(&self, precision: Precision) -> StorageBuffer {
        if precision == self.precision() {
            return self.clone();
        }
        StorageBuffer::from_f64(&self.values(), precision)
    }

    /// Raw little-endian bytes of the stored representation.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            StorageBuffer::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            StorageBuffer::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            StorageBuffer::Bf16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(bytes: &[u8], precision: Precision) -> Result<StorageBuffer> {
        let width = precision.bytes_per_element();
        if !bytes.len().is_multiple_of(width) {
            return Err(Error::Format(format!(
                "{} byte payload is not a whole number of {precision} elements",
                bytes.len()
            )));
        }
        let chunks = bytes.chunks_exact(width);
        Ok(match precision {
            Precision::Fp64 => StorageBuffer::F64(
                chunks.map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            Precision::Fp32 => StorageBuffer::F32(
                chunks.map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            Precision::Bf16 => StorageBuffer::Bf16(
                chunks.map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
        })
    }

    /// Equality of the stored bit patterns (distinguishes `-0.0`, compares NaNs).
    pub fn bitwise_eq(&self, other: &StorageBuffer) -> bool {
        match (self, other) {
            (StorageBuffer::F64(a), StorageBuffer::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (StorageBuffer::F32(a), StorageBuffer::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (StorageBuffer::Bf16(a), StorageBuffer::Bf16(b)) => a == b,
            _ => false,
        }
    }
}

/// Dense row-major matrix with an explicit storage precision.
#[derive(Clone, Debug)]
pub struct StorageMatrix {
    rows: usize,
    cols: usize,
    data: StorageBuffer,
}

impl StorageMatrix {
    pub fn zeros(rows: usize, cols: usize, precision: Precision) -> Self {
        StorageMatrix {
            rows,
            cols,
            data: StorageBuffer::zeros(rows * cols, precision),
        }
    }

    pub fn identity(n: usize, precision: Precision) -> Self {
        let mut m = StorageMatrix::zeros(n, n, precision);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row-major `f64` values, rounding to `precision`.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>, precision: Precision) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "from_vec",
                format!("{} values for a {rows}x{cols} matrix", values.len()),
            ));
        }
        let data = match precision {
            Precision::Fp64 => StorageBuffer::F64(values),
            p => StorageBuffer::from_f64(&values, p),
        };
        Ok(StorageMatrix { rows, cols, data })
    }

    pub fn from_buffer(rows: usize, cols: usize, data: StorageBuffer) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "from_buffer",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(StorageMatrix { rows, cols, data })
    }

    /// Convenience constructor for small literal matrices.
    ///
    /// # Panics
    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[&[f64]], precision: Precision) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        StorageMatrix::from_vec(rows.len(), cols, values, precision).unwrap()
    }

    pub fn diag(values: &[f64], precision: Precision) -> Self {
        let mut m = StorageMatrix::zeros(values.len(), values.len(), precision);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn precision(&self) -> Precision {
        self.data.precision()
    }

    pub fn buffer(&self) -> &StorageBuffer {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data.get(i * self.cols + j)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data.set(i * self.cols + j, x)
    }

    /// Row-major values promoted to `f64`.
    pub fn values(&self) -> Cow<'_, [f64]> {
        self.data.values()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.values().into_owned()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    /// Converts (rounding if narrower) to another storage precision.
    pub fn to_precision(&self, precision: Precision) -> StorageMatrix {
        StorageMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.to_precision(precision),
        }
    }

    /// Copy promoted to the working precision of its storage.
    pub fn to_working(&self) -> StorageMatrix {
        self.to_precision(self.precision().working())
    }

    /// Applies `f` to every entry, keeping the precision.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> StorageMatrix {
        let values: Vec<f64> = self.values().iter().map(|&x| f(x)).collect();
        StorageMatrix::from_vec(self.rows, self.cols, values, self.precision()).unwrap()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.values().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Max-norm of the entrywise difference.
    ///
    /// # Panics
    /// Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &StorageMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.values()
            .iter()
            .zip(other.values().iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }

    pub fn bitwise_eq(&self, other: &StorageMatrix) -> bool {
        self.shape() == other.shape() && self.data.bitwise_eq(&other.data)
    }

    /// Copies out the sub-block `self[rows, cols]`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> StorageMatrix {
        let mut out = StorageMatrix::zeros(rows.len(), cols.len(), self.precision());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    /// `self[:, cols]`.
    pub fn gather_cols(&self, cols: &[usize]) -> StorageMatrix {
        let all: Vec<usize> = (0..self.rows).collect();
        self.submatrix(&all, cols)
    }

    /// `self[rows, :]`.
    pub fn gather_rows(&self, rows: &[usize]) -> StorageMatrix {
        let all: Vec<usize> = (0..self.cols).collect();
        self.submatrix(rows, &all)
    }

    /// `self[:, cols] = block`.
    pub fn scatter_cols(&mut self, cols: &[usize], block: &StorageMatrix) -> Result<()> {
        if block.rows != self.rows || block.cols != cols.len() {
            return Err(Error::shape(
                "scatter_cols",
                format!("block {:?} into {} columns of {:?}", block.shape(), cols.len(), self.shape()),
            ));
        }
        for i in 0..self.rows {
            for (b, &j) in cols.iter().enumerate() {
                self.set(i, j, block.get(i, b));
            }
        }
        Ok(())
    }

    /// `self[rows, :] = block`.
    pub fn scatter_rows(&mut self, rows: &[usize], block: &StorageMatrix) -> Result<()> {
        if block.cols != self.cols || block.rows != rows.len() {
            return Err(Error::shape(
                "scatter_rows",
                format!("block {:?} into {} rows of {:?}", block.shape(), rows.len(), self.shape()),
            ));
        }
        for (a, &i) in rows.iter().enumerate() {
            for j in 0..self.cols {
                self.set(i, j, block.get(a, j));
            }
        }
        Ok(())
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    ///
    /// # Panics
    /// Panics if the matrix is not square.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize needs a square matrix");
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }

    /// Symmetrizes only the entries in rows or columns listed in `idx`.
    pub fn symmetrize_strips(&mut self, idx: &[usize]) {
        assert!(self.is_square(), "symmetrize_strips needs a square matrix");
        let mut touched = vec![false; self.rows];
        for &i in idx {
            touched[i] = true;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if touched[i] || touched[j] {
                    let v = 0.5 * (self.get(i, j) + self.get(j, i));
                    self.set(i, j, v);
                    self.set(j, i, v);
                }
            }
        }
    }
}
