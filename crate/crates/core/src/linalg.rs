//! Dense matrices over a prime field.
//!
//! Everything is exact. Elimination takes the first nonzero entry in a
//! column as the pivot; any nonzero pivot is valid over a field, so results
//! are deterministic. Singularity is returned as an error carrying the rank
//! that was attained, since invertibility probes are routine here.

use std::fmt;
use std::ops::Index;

use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::gf::{Fe, FieldSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimensionMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("singular {size}x{size} matrix (rank {rank})")]
    Singular { size: usize, rank: usize },
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("ragged rows: row {row} has {len} entries, expected {expected}")]
    RaggedRows { row: usize, len: usize, expected: usize },
    #[error("empty block list")]
    EmptyBlockList,
}

/// Row-major dense matrix; every entry lies in `field`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mat {
    rows: usize,
    cols: usize,
    field: FieldSpec,
    data: Vec<Fe>,
}

impl Mat {
    pub fn zeros(field: FieldSpec, rows: usize, cols: usize) -> Self {
        Self { rows, cols, field, data: vec![field.zero(); rows * cols] }
    }

    pub fn identity(field: FieldSpec, n: usize) -> Self {
        let mut m = Self::zeros(field, n, n);
        for i in 0..n {
            m.set(i, i, field.one());
        }
        m
    }

    /// Builds from integer rows, reducing every entry mod `q`.
    pub fn from_u64_rows(field: FieldSpec, rows: &[Vec<u64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(LinalgError::RaggedRows { row: i, len: row.len(), expected: c });
            }
            data.extend(row.iter().map(|&v| field.elem(v)));
        }
        Ok(Self { rows: r, cols: c, field, data })
    }

    pub fn from_fe(field: FieldSpec, rows: usize, cols: usize, data: Vec<Fe>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                op: "from_fe",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(bad) = data.iter().find(|e| e.modulus() != field.modulus()) {
            return Err(LinalgError::ModulusMismatch(field.modulus(), bad.modulus()));
        }
        Ok(Self { rows, cols, field, data })
    }

    /// A single column vector.
    pub fn column(field: FieldSpec, entries: &[Fe]) -> Result<Self, LinalgError> {
        Self::from_fe(field, entries.len(), 1, entries.to_vec())
    }

    /// Square matrix with `v` on the diagonal.
    pub fn diag(field: FieldSpec, v: &[Fe]) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(field, v.len(), v.len());
        for (i, &x) in v.iter().enumerate() {
            if x.modulus() != field.modulus() {
                return Err(LinalgError::ModulusMismatch(field.modulus(), x.modulus()));
            }
            m.set(i, i, x);
        }
        Ok(m)
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

    pub fn field(&self) -> FieldSpec {
        self.field
    }

    pub fn get(&self, i: usize, j: usize) -> Fe {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Fe) {
        assert_eq!(v.modulus(), self.field.modulus(), "modulus mismatch");
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Fe] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<Fe> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|e| e.is_zero())
    }

    pub fn to_u64_rows(&self) -> Vec<Vec<u64>> {
        (0..self.rows).map(|i| self.row(i).iter().map(|e| e.value()).collect()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.field, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    fn check_field(&self, other: &Mat) -> Result<(), LinalgError> {
        if self.field == other.field {
            Ok(())
        } else {
            Err(LinalgError::ModulusMismatch(self.field.modulus(), other.field.modulus()))
        }
    }

    pub fn matmul(&self, b: &Mat) -> Result<Mat, LinalgError> {
        self.check_field(b)?;
        if self.cols != b.rows {
            return Err(LinalgError::DimensionMismatch { op: "matmul", left: self.shape(), right: b.shape() });
        }
        let mut out = Mat::zeros(self.field, self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..b.cols {
                    let idx = i * b.cols + j;
                    out.data[idx] += a * b.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Fe]) -> Result<Vec<Fe>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch { op: "mul_vec", left: self.shape(), right: (x.len(), 1) });
        }
        if let Some(bad) = x.iter().find(|e| e.modulus() != self.field.modulus()) {
            return Err(LinalgError::ModulusMismatch(self.field.modulus(), bad.modulus()));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).fold(self.field.zero(), |acc, (&a, &b)| acc + a * b))
            .collect())
    }

    pub fn add(&self, b: &Mat) -> Result<Mat, LinalgError> {
        self.zip_with(b, "add", |x, y| x + y)
    }

    pub fn sub(&self, b: &Mat) -> Result<Mat, LinalgError> {
        self.zip_with(b, "sub", |x, y| x - y)
    }

    fn zip_with(&self, b: &Mat, op: &'static str, f: impl Fn(Fe, Fe) -> Fe) -> Result<Mat, LinalgError> {
        self.check_field(b)?;
        if self.shape() != b.shape() {
            return Err(LinalgError::DimensionMismatch { op, left: self.shape(), right: b.shape() });
        }
        let data = self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Mat { data, ..*self })
    }

    pub fn neg(&self) -> Mat {
        Mat { data: self.data.iter().map(|&x| -x).collect(), ..*self }
    }

    pub fn scale(&self, s: Fe) -> Mat {
        Mat { data: self.data.iter().map(|&x| x * s).collect(), ..*self }
    }

    /// `Diag(beta) * self`.
    pub fn scale_rows(&self, beta: &[Fe]) -> Result<Mat, LinalgError> {
        if beta.len() != self.rows {
            return Err(LinalgError::DimensionMismatch { op: "scale_rows", left: self.shape(), right: (beta.len(), 1) });
        }
        let mut out = self.clone();
        for (i, &b) in beta.iter().enumerate() {
            for j in 0..self.cols {
                out.data[i * self.cols + j] = self.get(i, j) * b;
            }
        }
        Ok(out)
    }

    /// Selected rows and columns, in the order given.
    pub fn submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> Result<Mat, LinalgError> {
        for &i in row_idx {
            if i >= self.rows {
                return Err(LinalgError::IndexOutOfRange { index: i, bound: self.rows });
            }
        }
        for &j in col_idx {
            if j >= self.cols {
                return Err(LinalgError::IndexOutOfRange { index: j, bound: self.cols });
            }
        }
        let data = row_idx.iter().flat_map(|&i| col_idx.iter().map(move |&j| self.get(i, j))).collect();
        Ok(Mat { rows: row_idx.len(), cols: col_idx.len(), field: self.field, data })
    }

    pub fn select_rows(&self, row_idx: &[usize]) -> Result<Mat, LinalgError> {
        let all: Vec<usize> = (0..self.cols).collect();
        self.submatrix(row_idx, &all)
    }

    pub fn select_cols(&self, col_idx: &[usize]) -> Result<Mat, LinalgError> {
        let all: Vec<usize> = (0..self.rows).collect();
        self.submatrix(&all, col_idx)
    }

    /// Columns `start..end`.
    pub fn col_range(&self, start: usize, end: usize) -> Result<Mat, LinalgError> {
        let idx: Vec<usize> = (start..end).collect();
        self.select_cols(&idx)
    }

    pub fn hstack(parts: &[&Mat]) -> Result<Mat, LinalgError> {
        let first = parts.first().ok_or(LinalgError::EmptyBlockList)?;
        let rows = first.rows;
        for p in parts {
            first.check_field(p)?;
            if p.rows != rows {
                return Err(LinalgError::DimensionMismatch { op: "hstack", left: first.shape(), right: p.shape() });
            }
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Mat { rows, cols, field: first.field, data })
    }

    pub fn vstack(parts: &[&Mat]) -> Result<Mat, LinalgError> {
        let first = parts.first().ok_or(LinalgError::EmptyBlockList)?;
        let cols = first.cols;
        for p in parts {
            first.check_field(p)?;
            if p.cols != cols {
                return Err(LinalgError::DimensionMismatch { op: "vstack", left: first.shape(), right: p.shape() });
            }
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Mat { rows, cols, field: first.field, data })
    }

    pub fn block_diag(parts: &[&Mat]) -> Result<Mat, LinalgError> {
        let first = parts.first().ok_or(LinalgError::EmptyBlockList)?;
        for p in parts {
            first.check_field(p)?;
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(first.field, rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            for i in 0..p.rows {
                for j in 0..p.cols {
                    out.set(r0 + i, c0 + j, p.get(i, j));
                }
            }
            r0 += p.rows;
            c0 += p.cols;
        }
        Ok(out)
    }

    /// Reduced row echelon form in place; returns the pivot columns.
    fn rref_in_place(&mut self, col_limit: usize) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..col_limit {
            if r == self.rows {
                break;
            }
            let Some(p) = (r..self.rows).find(|&i| !self.get(i, c).is_zero()) else {
                continue;
            };
            if p != r {
                for j in 0..self.cols {
                    self.data.swap(p * self.cols + j, r * self.cols + j);
                }
            }
            let inv = self.get(r, c).inv().expect("pivot is nonzero");
            for j in 0..self.cols {
                let v = self.get(r, j) * inv;
                self.data[r * self.cols + j] = v;
            }
            for i in 0..self.rows {
                if i == r {
                    continue;
                }
                let factor = self.get(i, c);
                if factor.is_zero() {
                    continue;
                }
                for j in 0..self.cols {
                    let v = self.get(i, j) - factor * self.get(r, j);
                    self.data[i * self.cols + j] = v;
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let cols = m.cols;
        m.rref_in_place(cols).len()
    }

    pub fn is_invertible(&self) -> bool {
        self.rows == self.cols && self.rank() == self.rows
    }

    pub fn inverse(&self) -> Result<Mat, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare(self.rows, self.cols));
        }
        let n = self.rows;
        self.solve(&Mat::identity(self.field, n))
    }

    /// Solves `self * x = b` for square invertible `self`.
    pub fn solve(&self, b: &Mat) -> Result<Mat, LinalgError> {
        self.check_field(b)?;
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare(self.rows, self.cols));
        }
        if b.rows != self.rows {
            return Err(LinalgError::DimensionMismatch { op: "solve", left: self.shape(), right: b.shape() });
        }
        let n = self.rows;
        let mut aug = Mat::hstack(&[self, b])?;
        let pivots = aug.rref_in_place(n);
        if pivots.len() < n {
            return Err(LinalgError::Singular { size: n, rank: pivots.len() });
        }
        aug.col_range(n, n + b.cols)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = Fe;
    fn index(&self, (i, j): (usize, usize)) -> &Fe {
        assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} over F_{}", self.rows, self.cols, self.field.modulus())?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|e| e.value().to_string()).collect();
            writeln!(f, "  [{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// Row-major nested arrays of decimal integers.
impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}
