//! Dense row-major matrices over a generic float scalar.
//!
//! This is the only tensor type in the crate: everything downstream
//! (attention, adapters, the reverse-mode tape) is built from the handful
//! of primitives here. Shapes are checked at runtime and reported through
//! [`Error::DimMismatch`] with both operand shapes named, because almost
//! every bug in this kind of code is a transposed operand.
//!
//! Construction from external data rejects non-finite entries; internal
//! arithmetic does not re-scan (divergence is caught at loss-logging
//! boundaries instead, where it can be attributed to a training step).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};

/// Dense `rows x cols` matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    /// All-zeros matrix. Panics on a zero dimension (shapes are static facts
    /// in this crate, never data-dependent).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    /// Build from row-major data; rejects wrong length and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::BadShape {
                op: "from_vec",
                rows,
                cols,
                expected: format!("positive dims and {} entries, got {}", rows * cols, data.len()),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: format!("entry {i} of {rows}x{cols} input") });
        }
        Ok(Self { rows, cols, data })
    }

    /// Build entry-wise from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { S::one() } else { S::zero() })
    }

    /// 1x1 matrix holding one scalar.
    pub fn scalar_mat(x: S) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// (rows, cols).
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: S) {
        self.data[r * self.cols + c] = x;
    }

    /// Row-major backing slice.
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    /// Mutable row-major backing slice (used by the optimizer's in-place updates).
    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// The single entry of a 1x1 matrix.
    pub fn scalar(&self) -> Result<S> {
        if self.rows == 1 && self.cols == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar { rows: self.rows, cols: self.cols })
        }
    }

    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(self.dim_err("matmul", rhs));
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![S::zero(); m * n];
        // i-k-j order: streams over rhs rows, keeps the inner loop contiguous.
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == S::zero() {
                    continue;
                }
                let rrow = &rhs.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + a * rrow[j];
                }
            }
        }
        Ok(Self { rows: m, cols: n, data: out })
    }

    /// Elementwise sum.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip("add", rhs, |a, b| a + b)
    }

    /// Elementwise difference.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip("sub", rhs, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, rhs: &Self) -> Result<Self> {
        self.zip("hadamard", rhs, |a, b| a * b)
    }

    /// Elementwise quotient.
    pub fn div_elem(&self, rhs: &Self) -> Result<Self> {
        self.zip("div_elem", rhs, |a, b| a / b)
    }

    /// Every entry scaled by `k`.
    pub fn scale(&self, k: S) -> Self {
        self.map(|x| x * k)
    }

    /// Elementwise `x * mul + add`.
    pub fn affine(&self, mul: S, add: S) -> Self {
        self.map(|x| x * mul + add)
    }

    /// Elementwise map (shape-preserving).
    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Transpose.
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Column-wise softmax, stabilized by subtracting each column's max so
    /// large logits cannot overflow.
    pub fn softmax_columns(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.cols {
            let mut hi = self.get(0, c);
            for r in 1..self.rows {
                if self.get(r, c) > hi {
                    hi = self.get(r, c);
                }
            }
            let mut sum = S::zero();
            for r in 0..self.rows {
                let e = (self.get(r, c) - hi).exp();
                out.set(r, c, e);
                sum = sum + e;
            }
            for r in 0..self.rows {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        out
    }

    /// Frobenius inner product `<self, rhs>` = sum of elementwise products.
    pub fn frobenius_inner(&self, rhs: &Self) -> Result<S> {
        if self.shape() != rhs.shape() {
            return Err(self.dim_err("frobenius_inner", rhs));
        }
        let mut acc = S::zero();
        for (a, b) in self.data.iter().zip(&rhs.data) {
            acc = acc + *a * *b;
        }
        Ok(acc)
    }

    /// Frobenius norm (sqrt of the sum of squared entries).
    pub fn frobenius_norm(&self) -> S {
        let mut acc = S::zero();
        for x in &self.data {
            acc = acc + *x * *x;
        }
        acc.sqrt()
    }

    /// Mean squared error between two same-shape matrices.
    pub fn mse(&self, rhs: &Self) -> Result<S> {
        if self.shape() != rhs.shape() {
            return Err(self.dim_err("mse", rhs));
        }
        let mut acc = S::zero();
        for (a, b) in self.data.iter().zip(&rhs.data) {
            let d = *a - *b;
            acc = acc + d * d;
        }
        Ok(acc / S::from_f64(self.data.len() as f64))
    }

    /// Largest absolute entry-wise difference; the workhorse of numeric tests.
    pub fn max_abs_diff(&self, rhs: &Self) -> Result<S> {
        if self.shape() != rhs.shape() {
            return Err(self.dim_err("max_abs_diff", rhs));
        }
        let mut hi = S::zero();
        for (a, b) in self.data.iter().zip(&rhs.data) {
            let d = (*a - *b).abs();
            if d > hi {
                hi = d;
            }
        }
        Ok(hi)
    }

    /// I.i.d. Gaussian entries with mean 0 and the given standard deviation.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: S, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            S::from_f64(z) * std
        })
    }

    /// Random orthogonal matrix: modified Gram-Schmidt on a Gaussian square
    /// matrix. Resamples a column on (practically impossible) rank collapse.
    pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut cols: Vec<Vec<S>> = Vec::with_capacity(n);
        while cols.len() < n {
            let mut v: Vec<S> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    S::from_f64(z)
                })
                .collect();
            for q in &cols {
                let mut dot = S::zero();
                for i in 0..n {
                    dot = dot + q[i] * v[i];
                }
                for i in 0..n {
                    v[i] = v[i] - dot * q[i];
                }
            }
            let norm = v.iter().fold(S::zero(), |a, &x| a + x * x).sqrt();
            if norm.to_f64() < 1e-8 {
                continue; // degenerate draw; try again
            }
            for x in &mut v {
                *x = *x / norm;
            }
            cols.push(v);
        }
        Self::from_fn(n, n, |r, c| cols[c][r])
    }

    fn zip(&self, op: &'static str, rhs: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(self.dim_err(op, rhs));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    fn dim_err(&self, op: &'static str, rhs: &Self) -> Error {
        Error::DimMismatch {
            op,
            lhs_rows: self.rows,
            lhs_cols: self.cols,
            rhs_rows: rhs.rows,
            rhs_cols: rhs.cols,
        }
    }
}

impl Matrix<f64> {
    /// Serialize as two little-endian `u64` dims followed by row-major
    /// little-endian `f64` entries.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_binary`](Self::write_binary); validates dimensions
    /// and entry finiteness.
    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let cols = u64::from_le_bytes(b8) as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 32) {
            return Err(Error::BadArtifact {
                what: "matrix",
                reason: format!("implausible dimensions {rows}x{cols}"),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Self::from_vec(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    type M = Matrix<f64>;

    #[test]
    fn from_vec_validates_shape_and_entries() {
        assert!(M::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(M::from_vec(0, 2, vec![]).is_err());
        assert!(M::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(M::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(M::from_vec(1, 2, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn matmul_row_times_column() {
        let a = M::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = M::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[11.0]);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = M::gaussian(4, 6, 1.0, &mut rng);
        assert_eq!(M::identity(4).matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&M::identity(6)).unwrap(), a);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = M::gaussian(5, 7, 1.0, &mut rng);
        let b = M::gaussian(7, 3, 1.0, &mut rng);
        let fast = a.matmul(&b).unwrap();
        let naive = M::from_fn(5, 3, |i, j| (0..7).map(|p| a.get(i, p) * b.get(p, j)).sum());
        assert!(fast.max_abs_diff(&naive).unwrap() <= 1e-12);
    }

    #[test]
    fn dim_mismatch_names_both_shapes() {
        let a = M::zeros(2, 3);
        let b = M::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "got: {msg}");
    }

    #[test]
    fn softmax_uniform_and_overflow_safe() {
        let a = M::from_vec(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(a.softmax_columns().as_slice(), &[0.5, 0.5]);
        let big = M::from_vec(2, 1, vec![1000.0, 1000.0]).unwrap();
        let s = big.softmax_columns();
        assert!(s.all_finite());
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_columns_are_independent_and_normalized() {
        let a = M::from_vec(3, 2, vec![1.0, -5.0, 0.5, 2.0, 9.0, 2.0]).unwrap();
        let s = a.softmax_columns();
        for c in 0..2 {
            let sum: f64 = (0..3).map(|r| s.get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // column 0 unchanged when column 1 changes
        let mut a2 = a.clone();
        a2.set(0, 1, -3.0);
        let s2 = a2.softmax_columns();
        for r in 0..3 {
            assert_eq!(s.get(r, 0), s2.get(r, 0));
        }
    }

    #[test]
    fn frobenius_inner_and_norm() {
        let a = M::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.frobenius_inner(&a).unwrap(), 30.0);
        let v = M::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(v.frobenius_norm(), 5.0);
    }

    #[test]
    fn elementwise_ops() {
        let a = M::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let b = M::from_vec(1, 3, vec![4.0, 10.0, -3.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().as_slice(), &[5.0, 12.0, 0.0]);
        assert_eq!(b.sub(&a).unwrap().as_slice(), &[3.0, 8.0, -6.0]);
        assert_eq!(a.hadamard(&b).unwrap().as_slice(), &[4.0, 20.0, -9.0]);
        assert_eq!(b.div_elem(&a).unwrap().as_slice(), &[4.0, 5.0, -1.0]);
        assert_eq!(a.scale(2.0).as_slice(), &[2.0, 4.0, 6.0]);
        assert_eq!(a.affine(2.0, 1.0).as_slice(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = M::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.transpose().get(2, 1), 6.0);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn mse_values() {
        let a = M::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = M::from_vec(1, 2, vec![1.0, 4.0]).unwrap();
        assert_eq!(a.mse(&a).unwrap(), 0.0);
        assert_eq!(a.mse(&b).unwrap(), 2.0);
    }

    #[test]
    fn scalar_accessor() {
        assert_eq!(M::scalar_mat(3.5).scalar().unwrap(), 3.5);
        assert!(M::zeros(2, 1).scalar().is_err());
    }

    #[test]
    fn random_orthogonal_has_orthonormal_columns() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let q = M::random_orthogonal(16, &mut rng);
        let gram = q.transpose().matmul(&q).unwrap();
        assert!(gram.max_abs_diff(&M::identity(16)).unwrap() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = M::gaussian(4, 7, 2.0, &mut rng);
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 7 * 8);
        let b = M::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binary_rejects_garbage() {
        let mut buf = Vec::new();
        M::scalar_mat(1.0).write_binary(&mut buf).unwrap();
        buf.truncate(12); // header cut short
        assert!(M::read_binary(&mut buf.as_slice()).is_err());
        let mut huge = Vec::new();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&1u64.to_le_bytes());
        assert!(M::read_binary(&mut huge.as_slice()).is_err());
    }

    #[test]
    fn works_at_f32() {
        let a = Matrix::<f32>::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::<f32>::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[11.0f32]);
        let s = Matrix::<f32>::from_vec(2, 1, vec![500.0, 500.0]).unwrap().softmax_columns();
        assert!(s.all_finite());
        assert!((s.get(0, 0) - 0.5).abs() < 1e-6);
    }
}
