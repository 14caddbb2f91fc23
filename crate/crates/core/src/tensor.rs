//! Dense row-major `f64` tensors.
//!
//! Tensors are plain values: every operation returns a new tensor and leaves
//! its inputs untouched. The last axis is contiguous in memory.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("invalid shape {0}: every extent must be at least 1")]
    InvalidShape(Shape),
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength { shape: Shape, len: usize, expected: usize },
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op} expects a rank-{expected} tensor, got shape {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Shape,
    },
    #[error("{0} of an empty tensor")]
    Empty(&'static str),
}

/// Ordered list of positive extents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = Shape(dims.into());
        if shape.0.is_empty() || shape.0.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        Ok(shape)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape.numel();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Result<Self, TensorError> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        Self::full(dims, 1.0)
    }

    /// Rank-1 tensor over `data`. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        let shape = Shape::new(vec![data.len()]).expect("vector must be non-empty");
        Tensor { shape, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Result<Self, TensorError> {
        let mut t = Self::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: shapes have at least one element.
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same data, new shape.
    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Tensor, TensorError> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Flatten to rank 1.
    pub fn flatten(&self) -> Tensor {
        Tensor::vector(self.data.clone())
    }

    /// Standard matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = rhs.matrix_dims("matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", rhs));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn ewise_mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with("ewise_mul", rhs, |a, b| a * b)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_with("add", rhs, |a, b| a + b)
    }

    /// In-place `self += alpha * rhs`.
    pub fn axpy(&mut self, alpha: f64, rhs: &Tensor) -> Result<(), TensorError> {
        if self.shape != rhs.shape {
            return Err(self.mismatch("axpy", rhs));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Sequential left-to-right sum.
    pub fn reduce_sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    /// Index of the maximum of a rank-1 tensor; ties go to the lowest index.
    pub fn argmax(&self) -> Result<usize, TensorError> {
        if self.rank() != 1 {
            return Err(TensorError::Rank {
                op: "argmax",
                expected: 1,
                got: self.shape.clone(),
            });
        }
        argmax_slice(&self.data).ok_or(TensorError::Empty("argmax"))
    }

    fn zip_with(&self, op: &'static str, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        if self.shape != rhs.shape {
            return Err(self.mismatch(op, rhs));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.dims() {
            &[m, n] => Ok((m, n)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                got: self.shape.clone(),
            }),
        }
    }

    pub(crate) fn mismatch(&self, op: &'static str, rhs: &Tensor) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape.clone(),
            right: rhs.shape.clone(),
        }
    }
}

/// Lowest index of the maximum, `None` for an empty slice.
pub fn argmax_slice(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(vec![2, 0]).is_err());
        assert!(Shape::new(Vec::new()).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity_and_annihilation() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::eye(2).unwrap().matmul(&m).unwrap(), m);
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        assert_eq!(a.matmul(&b).unwrap().data(), naive_matmul(&a, &b).as_slice());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]).unwrap();
        let b = Tensor::zeros(vec![2, 3]).unwrap();
        let msg = alloc::format!("{}", a.matmul(&b).unwrap_err());
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn ewise_mul_examples() {
        let t = |v: &[f64]| Tensor::vector(v.to_vec());
        assert_eq!(t(&[1., 2., 3.]).ewise_mul(&t(&[1., 1., 1.])).unwrap(), t(&[1., 2., 3.]));
        assert_eq!(t(&[1., 2.]).ewise_mul(&t(&[0., 0.])).unwrap(), t(&[0., 0.]));
        assert_eq!(t(&[0.5, -2.]).ewise_mul(&t(&[4., 0.25])).unwrap(), t(&[2., -0.5]));
        assert!(t(&[1.]).ewise_mul(&t(&[1., 2.])).is_err());
    }

    #[test]
    fn reshape_examples() {
        let a = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let back = a.reshape(vec![6]).unwrap().reshape(vec![2, 3]).unwrap();
        assert_eq!(back, a);
        let b = Tensor::new(vec![1, 1, 4], vec![4., 3., 2., 1.]).unwrap();
        assert_eq!(b.reshape(vec![4]).unwrap().data(), &[4., 3., 2., 1.]);
        let c = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(c.reshape(vec![4]).unwrap().data(), &[1., 2., 3., 4.]);
        assert!(c.reshape(vec![5]).is_err());
    }

    #[test]
    fn reduce_sum_examples() {
        assert_eq!(Tensor::zeros(vec![3, 3]).unwrap().reduce_sum(), 0.0);
        assert_eq!(Tensor::ones(vec![2, 5]).unwrap().reduce_sum(), 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random(&[7], &mut rng);
        let mut s = 0.0;
        for v in t.data() {
            s += v;
        }
        assert_eq!(t.reduce_sum(), s);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(Tensor::vector(vec![0.1, 0.9]).argmax().unwrap(), 1);
        assert_eq!(Tensor::vector(vec![0.5, 0.5]).argmax().unwrap(), 0);
        assert_eq!(Tensor::vector(vec![3., 1., 4., 1., 5.]).argmax().unwrap(), 4);
        assert!(Tensor::zeros(vec![2, 2]).unwrap().argmax().is_err());
        assert_eq!(argmax_slice(&[]), None);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 1..32)
    }

    proptest! {
        #[test]
        fn matmul_equals_triple_loop(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&[m, k], &mut rng);
            let b = random(&[k, n], &mut rng);
            let got = a.matmul(&b).unwrap();
            let want = naive_matmul(&a, &b);
            prop_assert_eq!(got.data(), want.as_slice());
        }

        #[test]
        fn reshape_preserves_sum(v in vec_strategy()) {
            let t = Tensor::vector(v.clone());
            let r = t.reshape(vec![1, v.len()]).unwrap();
            prop_assert_eq!(r.reduce_sum().to_bits(), t.reduce_sum().to_bits());
        }

        #[test]
        fn ewise_mul_commutes_with_ones_identity(v in vec_strategy(), w_seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(w_seed);
            let a = Tensor::vector(v.clone());
            let b = random(&[v.len()], &mut rng);
            prop_assert_eq!(a.ewise_mul(&b).unwrap(), b.ewise_mul(&a).unwrap());
            prop_assert_eq!(a.ewise_mul(&Tensor::ones(vec![v.len()]).unwrap()).unwrap(), a);
        }

        #[test]
        fn argmax_invariant_under_shift_and_scale(v in vec_strategy(), c in -50.0f64..50.0, s in 0.01f64..50.0) {
            let t = Tensor::vector(v);
            let i = t.argmax().unwrap();
            // the tie structure must survive the transform for the invariant to be meaningful
            let shifted = t.map(|x| x + c);
            let scaled = t.map(|x| x * s);
            let max = t.data()[i];
            let ties_kept = |u: &Tensor| t.data().iter().zip(u.data()).all(|(&a, &b)| (a == max) == (b == u.data()[i]));
            if ties_kept(&shifted) {
                prop_assert_eq!(shifted.argmax().unwrap(), i);
            }
            if ties_kept(&scaled) {
                prop_assert_eq!(scaled.argmax().unwrap(), i);
            }
        }
    }
}
