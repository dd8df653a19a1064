//! Dense row-major tensors.
//!
//! Most of the crate works with rank-2 tensors laid out as `rows × cols`
//! (nodes × features, pixels × fields). Higher ranks exist only for
//! checkpointing.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("contract error in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("index {index} out of range for extent {extent} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
}

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Rank-2 tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    /// Column vector `n × 1`.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err("Tensor::from_rows", "ragged rows"));
        }
        Ok(Self {
            shape: vec![r, c],
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(dim_err("dims2", format!("expected rank 2, got {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(dim_err("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(dim_err(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(dim_err(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Result<Self, TensorError> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(dim_err(
                "matmul",
                format!("inner extents {k} and {k2} differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            false,
            false,
            m,
            k,
            n,
            &self.data,
            &other.data,
            0.0,
            &mut out,
        );
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }
}

/// `c = beta·c + op(a)·op(b)` where `op` optionally transposes. `op(a)` is
/// `m × k`, `op(b)` is `k × n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // Strides for the untransposed row-major layout; transposition swaps them.
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slices are sized by the callers for the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
        let r = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(r.matmul(&c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&a), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn gemm_transposes() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0]]).unwrap();
        // aᵀ·b : (3×2)(2×2)
        let mut out = vec![0.0; 6];
        gemm(true, false, 3, 2, 2, a.data(), b.data(), 0.0, &mut out);
        let expect = a.transpose().unwrap().matmul(&b).unwrap();
        assert_eq!(out, expect.data());
        // a·aᵀ
        let mut out = vec![0.0; 4];
        gemm(false, true, 2, 3, 2, a.data(), a.data(), 0.0, &mut out);
        assert_eq!(out, vec![14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
