//! Dense row-major matrices and the handful of vector kernels the
//! embedding and loss code needs.

use crate::error::{Result, TaenError};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TaenError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(TaenError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-column matrix would panic.
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
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

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Rows in reverse order.
    pub fn reversed_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(self.row(self.rows - 1 - i));
        }
        out
    }

    /// `out = self * x` for `self` of shape out×in.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.iter_rows()) {
            *o = dot(row, x);
        }
    }

    /// `out += selfᵀ * y`.
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (yi, row) in y.iter().zip(self.iter_rows()) {
            if *yi != 0.0 {
                axpy(*yi, row, out);
            }
        }
    }

    /// `self += alpha * y xᵀ`.
    pub fn add_outer(&mut self, alpha: f64, y: &[f64], x: &[f64]) {
        for (i, yi) in y.iter().enumerate() {
            let s = alpha * yi;
            if s != 0.0 {
                axpy(s, x, self.row_mut(i));
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Floor for the norm in [`normalize`]: ‖x‖ is evaluated as √(‖x‖² + ε²).
pub const NORM_EPS: f64 = 1e-12;

#[inline]
pub fn guarded_norm(x: &[f64]) -> f64 {
    (dot(x, x) + NORM_EPS * NORM_EPS).sqrt()
}

/// `x / √(‖x‖² + ε²)` written into `out`; returns the guarded norm.
pub fn normalize_into(x: &[f64], out: &mut [f64]) -> f64 {
    let n = guarded_norm(x);
    for (o, v) in out.iter_mut().zip(x) {
        *o = v / n;
    }
    n
}

pub fn normalized(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    normalize_into(x, &mut out);
    out
}

/// Backpropagate `upstream` (gradient w.r.t. `x/n`) through the guarded
/// normalization, given the raw input `x` and its guarded norm `n`.
/// Adds the result into `out`.
pub fn normalize_backward_add(x: &[f64], n: f64, upstream: &[f64], out: &mut [f64]) {
    let proj = dot(x, upstream) / (n * n * n);
    for ((o, xi), g) in out.iter_mut().zip(x).zip(upstream) {
        *o += g / n - xi * proj;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_exact_on_pythagorean_row() {
        assert_eq!(normalized(&[3.0, 0.0, 0.0, 4.0]), vec![0.6, 0.0, 0.0, 0.8]);
        let unit = [0.6, 0.8];
        assert_eq!(normalized(&unit), unit.to_vec());
    }

    #[test]
    fn normalize_backward_is_projection_at_unit_norm() {
        let x = normalized(&[0.3, -1.2, 0.5, 2.0]);
        let g = [0.7, 0.1, -0.4, 1.5];
        let mut out = vec![0.0; 4];
        normalize_backward_add(&x, guarded_norm(&x), &g, &mut out);
        assert!(dot(&x, &out).abs() < 1e-10);
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, vec![-2.0, -2.0]);
        let mut xt = vec![0.0; 3];
        m.matvec_t_add(&[1.0, 1.0], &mut xt);
        assert_eq!(xt, vec![5.0, 7.0, 9.0]);
    }
}
