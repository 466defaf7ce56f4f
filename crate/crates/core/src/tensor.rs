//! Dense row-major f64 tensors.
//!
//! Everything at desk scale is rank 1 or rank 2, so this is a thin wrapper
//! over `Vec<f64>` with the handful of kernels bound propagation needs:
//! matrix-vector products (plain and absolute-value), their transposes,
//! and outer-product accumulation for gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dimension(
                "Tensor::new",
                format!("{shape:?} = {n} elements"),
                data.len(),
            ));
        }
        Ok(Tensor { data, shape })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            data: vec![x],
            shape: vec![1],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            data,
            shape: vec![n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(data, vec![rows, cols])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Scalar accessor; errors are programming bugs so this panics.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, x: f64) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// y = W x for W of shape [m, n] and x of length n.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let (m, n) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), n);
        let mut y = vec![0.0; m];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            y[i] = dot(row, x);
        }
        y
    }

    /// y = |W| x, computed without materializing |W|.
    pub fn matvec_abs(&self, x: &[f64]) -> Vec<f64> {
        let (m, n) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), n);
        let mut y = vec![0.0; m];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            y[i] = row.iter().zip(x).map(|(w, v)| w.abs() * v).sum();
        }
        y
    }

    /// out += Wᵀ g for g of length m; out has length n.
    pub fn matvec_t_accum(&self, g: &[f64], out: &mut [f64]) {
        let (m, n) = (self.rows(), self.cols());
        debug_assert_eq!(g.len(), m);
        debug_assert_eq!(out.len(), n);
        for i in 0..m {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let row = &self.data[i * n..(i + 1) * n];
            for (o, w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
    }

    /// out += |W|ᵀ g.
    pub fn matvec_abs_t_accum(&self, g: &[f64], out: &mut [f64]) {
        let (m, n) = (self.rows(), self.cols());
        debug_assert_eq!(g.len(), m);
        debug_assert_eq!(out.len(), n);
        for i in 0..m {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let row = &self.data[i * n..(i + 1) * n];
            for (o, w) in out.iter_mut().zip(row) {
                *o += gi * w.abs();
            }
        }
    }

    /// dW += g xᵀ (outer product accumulation into a [m, n] gradient).
    pub fn outer_accum(grad: &mut Tensor, g: &[f64], x: &[f64]) {
        let (m, n) = (grad.rows(), grad.cols());
        debug_assert_eq!(g.len(), m);
        debug_assert_eq!(x.len(), n);
        for i in 0..m {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let row = &mut grad.data[i * n..(i + 1) * n];
            for (r, v) in row.iter_mut().zip(x) {
                *r += gi * v;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_by_hand() {
        let w = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let y = w.matvec(&[1.0, 1.0, 2.0]);
        assert_eq!(y, vec![9.0, 7.0]);
        let ya = w.matvec_abs(&[1.0, 1.0, 2.0]);
        assert_eq!(ya, vec![9.0, 9.0]);
    }

    #[test]
    fn transpose_accum() {
        let w = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let mut out = vec![0.0; 2];
        w.matvec_t_accum(&[1.0, 1.0], &mut out);
        assert_eq!(out, vec![4.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::new(vec![1.0, 2.0], vec![3]).is_err());
    }
}
