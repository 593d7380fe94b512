use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64. Vectors are `1 × n` matrices; batches are
/// `rows × features`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Contract(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            let src = self.row(r);
            for (j, &c) in cols.iter().enumerate() {
                out.data[r * cols.len() + j] = src[c];
            }
        }
        out
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `x · wᵀ + b` for `x: n×in`, `w: out×in`, `b: 1×out`.
///
/// Each output row depends only on its own input row, so results are
/// independent of how rows are batched.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols != w.cols || b.rows != 1 || b.cols != w.rows {
        return Err(Error::Contract(format!(
            "affine shape mismatch: x {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let wt = w.transpose();
    let out = w.rows;
    let mut y = Matrix::zeros(x.rows, out);
    for r in 0..x.rows {
        let yr = &mut y.data[r * out..(r + 1) * out];
        yr.copy_from_slice(&b.data);
        for (k, &xk) in x.row(r).iter().enumerate() {
            if xk != 0.0 {
                axpy(yr, xk, &wt.data[k * out..(k + 1) * out]);
            }
        }
    }
    Ok(y)
}

/// Accumulates the affine gradients: `dw += dyᵀ·x`, `db += Σ_rows dy`, and
/// returns `dx = dy·w` when requested.
pub fn affine_backward(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: Option<&mut Matrix>,
    db: Option<&mut Matrix>,
    want_dx: bool,
) -> Option<Matrix> {
    if let Some(dw) = dw {
        for r in 0..x.rows {
            let xr = x.row(r);
            for (o, &g) in dy.row(r).iter().enumerate() {
                if g != 0.0 {
                    axpy(dw.row_mut(o), g, xr);
                }
            }
        }
    }
    if let Some(db) = db {
        for r in 0..dy.rows {
            axpy(&mut db.data, 1.0, dy.row(r));
        }
    }
    if want_dx {
        let mut dx = Matrix::zeros(x.rows, x.cols);
        for r in 0..dy.rows {
            let dxr = &mut dx.data[r * x.cols..(r + 1) * x.cols];
            for (o, &g) in dy.row(r).iter().enumerate() {
                if g != 0.0 {
                    axpy(dxr, g, w.row(o));
                }
            }
        }
        Some(dx)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_hand_example() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::zeros(1, 2);
        let x = Matrix::row_vector(vec![1.0, 1.0]);
        assert_eq!(affine_forward(&x, &w, &b).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_identity_and_zero_weight() {
        let x = Matrix::row_vector(vec![0.3, -1.5, 2.0]);
        let y = affine_forward(&x, &Matrix::identity(3), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(y, x);
        let b = Matrix::row_vector(vec![4.0, -2.0]);
        let y = affine_forward(&x, &Matrix::zeros(2, 3), &b).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn affine_shape_mismatch() {
        let x = Matrix::zeros(1, 3);
        assert!(matches!(
            affine_forward(&x, &Matrix::zeros(2, 2), &Matrix::zeros(1, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn batching_does_not_change_rows() {
        let w = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b = Matrix::row_vector(vec![0.1, -0.2, 0.3]);
        let x = Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let full = affine_forward(&x, &w, &b).unwrap();
        for r in 0..5 {
            let single = affine_forward(&Matrix::row_vector(x.row(r).to_vec()), &w, &b).unwrap();
            assert_eq!(single.as_slice(), full.row(r));
        }
    }
}
