//! Minimal row-major dense matrix used by the oracle, the sample assembly
//! and the self-contained eigensolvers. Desk-scale only.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Guard: refuse to materialize anything above 2^24 entries.
pub const DENSE_ENTRY_GUARD: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T: Scalar> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Result<Self> {
        let entries = n_rows
            .checked_mul(n_cols)
            .ok_or(Error::TooLargeForDense(usize::MAX))?;
        if entries > DENSE_ENTRY_GUARD {
            return Err(Error::TooLargeForDense(entries));
        }
        Ok(Self {
            n_rows,
            n_cols,
            data: vec![T::zero(); entries],
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n_rows, n_cols)?;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::InvalidParameter("ragged rows".into()));
            }
            m.data[r * n_cols..(r + 1) * n_cols].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn from_columns(cols: &[Vec<T>]) -> Result<Self> {
        let n_cols = cols.len();
        let n_rows = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n_rows, n_cols)?;
        for (c, col) in cols.iter().enumerate() {
            if col.len() != n_rows {
                return Err(Error::InvalidParameter("ragged columns".into()));
            }
            for (r, &v) in col.iter().enumerate() {
                m.data[r * n_cols + c] = v;
            }
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.n_cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.n_rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            data: vec![T::zero(); self.data.len()],
        };
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                out.data[c * self.n_rows + r] = self.data[r * self.n_cols + c];
            }
        }
        out
    }

    pub fn frob_norm_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b)
    }

    /// Plain CSV: one row per line, comma-separated entries.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map(T::from_f64_lossy).map_err(|e| {
                        Error::StreamParse {
                            line: no + 1,
                            msg: format!("bad matrix entry: {e}"),
                        }
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::StreamParse {
                        line: no + 1,
                        msg: "ragged matrix rows".into(),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidParameter("empty matrix file".into()));
        }
        Self::from_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n_rows {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// `self^T * self`, accumulated row by row for cache friendliness.
    pub fn gram(&self) -> Self {
        let d = self.n_cols;
        let mut out = Self {
            n_rows: d,
            n_cols: d,
            data: vec![T::zero(); d * d],
        };
        for r in 0..self.n_rows {
            let row = self.row(r);
            for i in 0..d {
                let ri = row[i];
                if ri == T::zero() {
                    continue;
                }
                let dst = &mut out.data[i * d..(i + 1) * d];
                for (j, &rj) in row.iter().enumerate() {
                    dst[j] = dst[j] + ri * rj;
                }
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::InvalidParameter("matmul shape mismatch".into()));
        }
        let mut out = Self::zeros(self.n_rows, other.n_cols)?;
        for r in 0..self.n_rows {
            let lhs = self.row(r);
            for (k, &l) in lhs.iter().enumerate() {
                if l == T::zero() {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(r);
                for (c, &s) in src.iter().enumerate() {
                    dst[c] = dst[c] + l * s;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect()
    }

    /// `self^T * v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.n_rows);
        let mut out = vec![T::zero(); self.n_cols];
        for r in 0..self.n_rows {
            let row = self.row(r);
            let s = v[r];
            if s == T::zero() {
                continue;
            }
            for (c, &a) in row.iter().enumerate() {
                out[c] = out[c] + s * a;
            }
        }
        out
    }
}
