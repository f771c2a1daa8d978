//! Row-major 2-D tensors over f64 with cheap clones.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// A row-major matrix. Clones share storage; mutation copies on write.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: Arc::new(vec![0.0; rows * cols]),
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: Arc::new(vec![value; rows * cols]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(1, 1, vec![value]).expect("scalar shape")
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: format!("{rows}x{cols}"),
                rhs: format!("len {}", data.len()),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data: Arc::new(data),
        })
    }

    /// Entries drawn uniformly from `[lo, hi)`, in row-major order.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            rows,
            cols,
            data: Arc::new(data),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn fill(&mut self, value: f64) {
        self.data_mut().fill(value);
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.rows * self.cols != 1 {
            return Err(Error::ShapeMismatch {
                op: "item",
                lhs: self.shape_string(),
                rhs: "1x1".into(),
            });
        }
        Ok(self.data[0])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// `self · other` using a blocked GEMM kernel. Deterministic.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        // Row-major strides: rs = cols, cs = 1.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Tensor::from_vec(m, n, out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "t_matmul",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = vec![0.0; m * n];
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                1,
                self.cols as isize,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Tensor::from_vec(m, n, out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                1,
                other.cols as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Tensor::from_vec(m, n, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 5.0, -6.0]).unwrap();
        let b = Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.25).collect()).unwrap();
        // aᵀ·b via explicit transpose
        let mut at = vec![0.0; 6];
        for r in 0..2 {
            for c in 0..3 {
                at[c * 2 + r] = a.get(r, c);
            }
        }
        let at = Tensor::from_vec(3, 2, at).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), at.matmul(&b).unwrap());

        let d = Tensor::from_vec(5, 3, (0..15).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut dt = vec![0.0; 15];
        for r in 0..5 {
            for c in 0..3 {
                dt[c * 5 + r] = d.get(r, c);
            }
        }
        let dt = Tensor::from_vec(3, 5, dt).unwrap();
        assert_eq!(a.matmul_t(&d).unwrap(), a.matmul(&dt).unwrap());
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn clones_share_until_mutated() {
        let a = Tensor::zeros(2, 2);
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(b.get(0, 0), 1.0);
    }
}
