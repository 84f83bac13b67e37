//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Forward evaluation is eager: every recorded operation immediately computes
//! its value with the *same* [`Matrix`] primitives the untaped code paths
//! use, so a taped forward pass is bit-identical to its untaped twin — a
//! property the sampler/training split relies on and tests assert.
//!
//! Scalars are 1x1 matrices throughout; a gradient target must be 1x1.
//! Backward walks the tape once in reverse, accumulating vector-Jacobian
//! products per node. Leaves created with [`Tape::constant`] take gradients
//! like any other node; callers choose which leaves to differentiate by
//! passing them to [`Tape::gradient`], and untouched leaves yield zeros.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Div(Var, Var),
    // forward already folded the additive part in; backward only needs mul
    Affine { x: Var, mul: S },
    Transpose(Var),
    SoftmaxCols(Var),
    FroInner(Var, Var),
    FroNorm(Var),
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<S: Scalar> {
    op: Op<S>,
    value: Matrix<S>,
}

/// Append-only expression tape with cached forward values.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf holding `value`.
    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Cached forward value of `v`.
    pub fn value(&self, v: Var) -> Result<&Matrix<S>> {
        self.check(v)?;
        Ok(&self.nodes[v.0].value)
    }

    /// Matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a)?.matmul(self.val(b)?)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a)?.add(self.val(b)?)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Elementwise difference.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a)?.sub(self.val(b)?)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a)?.hadamard(self.val(b)?)?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a)?.div_elem(self.val(b)?)?;
        Ok(self.push(Op::Div(a, b), value))
    }

    /// Elementwise `x * mul + add`.
    pub fn affine(&mut self, x: Var, mul: S, add: S) -> Result<Var> {
        let value = self.val(x)?.affine(mul, add);
        Ok(self.push(Op::Affine { x, mul }, value))
    }

    /// Every entry scaled by `k`.
    pub fn scale(&mut self, x: Var, k: S) -> Result<Var> {
        self.affine(x, k, S::zero())
    }

    /// Transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x)?.transpose();
        Ok(self.push(Op::Transpose(x), value))
    }

    /// Column-wise softmax.
    pub fn softmax_columns(&mut self, x: Var) -> Result<Var> {
        let value = self.val(x)?.softmax_columns();
        Ok(self.push(Op::SoftmaxCols(x), value))
    }

    /// Frobenius inner product as a 1x1 node.
    pub fn frobenius_inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Matrix::scalar_mat(self.val(a)?.frobenius_inner(self.val(b)?)?);
        Ok(self.push(Op::FroInner(a, b), value))
    }

    /// Frobenius norm as a 1x1 node. Subgradient 0 at the origin.
    pub fn frobenius_norm(&mut self, x: Var) -> Result<Var> {
        let value = Matrix::scalar_mat(self.val(x)?.frobenius_norm());
        Ok(self.push(Op::FroNorm(x), value))
    }

    /// Mean squared error as a 1x1 node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Matrix::scalar_mat(self.val(a)?.mse(self.val(b)?)?);
        Ok(self.push(Op::Mse(a, b), value))
    }

    /// Gradients of the 1x1 node `loss` with respect to each var in `wrt`.
    /// Vars the loss never touched get zero matrices of their own shape.
    pub fn gradient(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Matrix<S>>> {
        self.check(loss)?;
        let lv = &self.nodes[loss.0].value;
        if lv.shape() != (1, 1) {
            return Err(Error::NotScalar { rows: lv.rows(), cols: lv.cols() });
        }
        for v in wrt {
            self.check(*v)?;
        }

        let mut grads: Vec<Option<Matrix<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar_mat(S::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|v| match grads.get(v.0).and_then(|g| g.clone()) {
                Some(g) => g,
                None => {
                    let s = self.nodes[v.0].value.shape();
                    Matrix::zeros(s.0, s.1)
                }
            })
            .collect())
    }

    /// One node's vector-Jacobian product, accumulated into its operands.
    fn backprop(&self, id: usize, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) -> Result<()> {
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(a)?, self.val(b)?);
                accumulate(grads, a, g.matmul(&bv.transpose())?)?;
                accumulate(grads, b, av.transpose().matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, a, g.clone())?;
                accumulate(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, g.clone())?;
                accumulate(grads, b, g.scale(-S::one()))?;
            }
            Op::Hadamard(a, b) => {
                accumulate(grads, a, g.hadamard(self.val(b)?)?)?;
                accumulate(grads, b, g.hadamard(self.val(a)?)?)?;
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.val(a)?, self.val(b)?);
                accumulate(grads, a, g.div_elem(bv)?)?;
                let b2 = bv.hadamard(bv)?;
                accumulate(grads, b, g.hadamard(av)?.div_elem(&b2)?.scale(-S::one()))?;
            }
            Op::Affine { x, mul } => {
                accumulate(grads, x, g.scale(mul))?;
            }
            Op::Transpose(x) => {
                accumulate(grads, x, g.transpose())?;
            }
            Op::SoftmaxCols(x) => {
                // per column: dx = y .* (g - <g, y>)
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for c in 0..y.cols() {
                    let mut dot = S::zero();
                    for r in 0..y.rows() {
                        dot = dot + g.get(r, c) * y.get(r, c);
                    }
                    for r in 0..y.rows() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                accumulate(grads, x, dx)?;
            }
            Op::FroInner(a, b) => {
                let gs = g.scalar()?;
                accumulate(grads, a, self.val(b)?.scale(gs))?;
                accumulate(grads, b, self.val(a)?.scale(gs))?;
            }
            Op::FroNorm(x) => {
                let gs = g.scalar()?;
                let norm = node.value.scalar()?;
                let dx = if norm == S::zero() {
                    let s = self.val(x)?.shape();
                    Matrix::zeros(s.0, s.1)
                } else {
                    self.val(x)?.scale(gs / norm)
                };
                accumulate(grads, x, dx)?;
            }
            Op::Mse(a, b) => {
                let gs = g.scalar()?;
                let (av, bv) = (self.val(a)?, self.val(b)?);
                let n = S::from_f64((av.rows() * av.cols()) as f64);
                let diff = av.sub(bv)?;
                let two = S::one() + S::one();
                accumulate(grads, a, diff.scale(gs * two / n))?;
                accumulate(grads, b, diff.scale(-gs * two / n))?;
            }
        }
        Ok(())
    }

    fn push(&mut self, op: Op<S>, value: Matrix<S>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Result<&Matrix<S>> {
        self.check(v)?;
        Ok(&self.nodes[v.0].value)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::BadVar { id: v.0, len: self.nodes.len() });
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Matrix<S>>], v: Var, g: Matrix<S>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => {
            *acc = acc.add(&g)?;
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_gradient, max_rel_err};
    use crate::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn forward_matches_untaped_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = Mat::gaussian(3, 4, 1.0, &mut rng);
        let b = Mat::gaussian(4, 2, 1.0, &mut rng);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let vc = t.matmul(va, vb).unwrap();
        let vs = t.softmax_columns(vc).unwrap();
        assert_eq!(t.value(vs).unwrap(), &a.matmul(&b).unwrap().softmax_columns());
    }

    #[test]
    fn frobenius_inner_gradient_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let a = Mat::gaussian(3, 3, 1.0, &mut rng);
        let b = Mat::gaussian(3, 3, 1.0, &mut rng);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let loss = t.frobenius_inner(va, vb).unwrap();
        let g = t.gradient(loss, &[va, vb]).unwrap();
        assert_eq!(g[0], b);
        assert_eq!(g[1], a);
    }

    #[test]
    fn frobenius_norm_gradient_is_unit_direction() {
        let a = Mat::from_vec(2, 1, vec![3.0, 4.0]).unwrap();
        let mut t = Tape::new();
        let va = t.constant(a);
        let loss = t.frobenius_norm(va).unwrap();
        let g = t.gradient(loss, &[va]).unwrap();
        let want = Mat::from_vec(2, 1, vec![0.6, 0.8]).unwrap();
        assert!(g[0].max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn frobenius_norm_gradient_zero_at_origin() {
        let mut t = Tape::new();
        let va = t.constant(Mat::zeros(2, 2));
        let loss = t.frobenius_norm(va).unwrap();
        let g = t.gradient(loss, &[va]).unwrap();
        assert_eq!(g[0], Mat::zeros(2, 2));
    }

    #[test]
    fn mse_gradient_hand_value() {
        let a = Mat::from_vec(1, 2, vec![1.0, 5.0]).unwrap();
        let b = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let loss = t.mse(va, vb).unwrap();
        assert_eq!(t.value(loss).unwrap().scalar().unwrap(), 4.5);
        let g = t.gradient(loss, &[va, vb]).unwrap();
        assert_eq!(g[0].as_slice(), &[0.0, 3.0]); // 2/n * (a-b), n=2
        assert_eq!(g[1].as_slice(), &[0.0, -3.0]);
    }

    #[test]
    fn untouched_leaf_gets_zeros() {
        let mut t = Tape::new();
        let used = t.constant(Mat::scalar_mat(2.0));
        let unused = t.constant(Mat::zeros(3, 2));
        let loss = t.hadamard(used, used).unwrap();
        let g = t.gradient(loss, &[used, unused]).unwrap();
        assert_eq!(g[0].scalar().unwrap(), 4.0);
        assert_eq!(g[1], Mat::zeros(3, 2));
    }

    #[test]
    fn gradient_target_must_be_scalar() {
        let mut t = Tape::<f64>::new();
        let v = t.constant(Mat::zeros(2, 2));
        assert!(matches!(t.gradient(v, &[v]), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut t1 = Tape::<f64>::new();
        let v = t1.constant(Mat::scalar_mat(1.0));
        let _ = v;
        let t2 = Tape::<f64>::new();
        assert!(matches!(t2.value(Var(0)), Err(Error::BadVar { .. })));
    }

    /// Attention-shaped composite: softmax, matmul chain, transposes, then a
    /// scalar head mixing inner products, norms, division and mse.
    fn composite_loss(params: &[Mat]) -> f64 {
        let mut t = Tape::new();
        let w = t.constant(params[0].clone());
        let x = t.constant(params[1].clone());
        let target = t.constant(Mat::from_fn(3, 2, |r, c| (r + c) as f64 * 0.1));
        let wx = t.matmul(w, x).unwrap();
        let sm = t.softmax_columns(wx).unwrap();
        let y = t.matmul(w, sm).unwrap();
        let num = t.frobenius_inner(y, target).unwrap();
        let den = t.frobenius_norm(y).unwrap();
        let den1 = t.affine(den, 1.0, 0.5).unwrap();
        let ratio = t.div(num, den1).unwrap();
        let fit = t.mse(y, target).unwrap();
        let yt = t.transpose(y).unwrap();
        let gram = t.matmul(yt, y).unwrap();
        let reg = t.frobenius_norm(gram).unwrap();
        let a = t.add(ratio, fit).unwrap();
        let b = t.sub(a, reg).unwrap();
        let loss = t.affine(b, 2.0, 0.25).unwrap();
        t.value(loss).unwrap().scalar().unwrap()
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let w = Mat::gaussian(3, 3, 0.7, &mut rng);
        let x = Mat::gaussian(3, 2, 0.7, &mut rng);

        // analytic, by replaying the same expression on a fresh tape
        let mut t = Tape::new();
        let vw = t.constant(w.clone());
        let vx = t.constant(x.clone());
        let target = t.constant(Mat::from_fn(3, 2, |r, c| (r + c) as f64 * 0.1));
        let wx = t.matmul(vw, vx).unwrap();
        let sm = t.softmax_columns(wx).unwrap();
        let y = t.matmul(vw, sm).unwrap();
        let num = t.frobenius_inner(y, target).unwrap();
        let den = t.frobenius_norm(y).unwrap();
        let den1 = t.affine(den, 1.0, 0.5).unwrap();
        let ratio = t.div(num, den1).unwrap();
        let fit = t.mse(y, target).unwrap();
        let yt = t.transpose(y).unwrap();
        let gram = t.matmul(yt, y).unwrap();
        let reg = t.frobenius_norm(gram).unwrap();
        let a = t.add(ratio, fit).unwrap();
        let b = t.sub(a, reg).unwrap();
        let loss = t.affine(b, 2.0, 0.25).unwrap();
        let analytic = t.gradient(loss, &[vw, vx]).unwrap();

        let params = vec![w, x];
        let fd = fd_gradient(&|p| composite_loss(p), &params, 1e-5);
        for (a, f) in analytic.iter().zip(&fd) {
            assert!(max_rel_err(a, f) <= 1e-6, "rel err {}", max_rel_err(a, f));
        }
    }

    #[test]
    fn replay_is_bit_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let w = Mat::gaussian(4, 4, 1.0, &mut rng);
        let x = Mat::gaussian(4, 3, 1.0, &mut rng);
        let run = |w: &Mat, x: &Mat| {
            let mut t = Tape::new();
            let (vw, vx) = (t.constant(w.clone()), t.constant(x.clone()));
            let y = t.matmul(vw, vx).unwrap();
            let s = t.softmax_columns(y).unwrap();
            let n = t.frobenius_norm(s).unwrap();
            let g = t.gradient(n, &[vw]).unwrap();
            (t.value(n).unwrap().scalar().unwrap(), g)
        };
        assert_eq!(run(&w, &x), run(&w, &x));
    }

    #[test]
    fn works_at_f32() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Matrix::<f32>::from_vec(1, 2, vec![3.0, 4.0]).unwrap());
        let n = t.frobenius_norm(a).unwrap();
        let g = t.gradient(n, &[a]).unwrap();
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-6);
    }
}
