//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! The op set is exactly what the perturbation generator, the toy editor and
//! the training objectives need: dense matmuls, row/column broadcasts,
//! pointwise nonlinearities, softmax, layer norm, permutations and mean/MSE
//! reductions. Evaluation order is fixed, so forward values and gradients are
//! bit-reproducible.
//!
//! Shape misuse inside the tape is a programming error and panics; the public
//! module APIs validate their inputs and return [`crate::CoreError`] before
//! any tape is built.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Var,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// a * x + b, scalars applied elementwise.
    Affine(usize, T, T),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    /// y[r,c] = range[c] * tanh(x[r,c] / range[c]); large ranges approach identity.
    ScaledTanhCols(usize, Rc<Vec<T>>),
    /// Clamp to [0,1]; gradient passes through strictly inside the interval.
    Clamp01(usize),
    MatmulNN(usize, usize),
    MatmulNT(usize, usize),
    MatmulTN(usize, usize),
    /// (R,C) + (C), broadcast over rows.
    AddRowBias(usize, usize),
    /// (R,C) * (C), broadcast over rows.
    MulRowBias(usize, usize),
    SoftmaxRows(usize),
    LayerNormRows {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: T,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<usize>),
    /// out[i] = in[fwd[i]], with fwd a bijection.
    Permute {
        x: usize,
        fwd: Rc<Vec<usize>>,
    },
    Reshape(usize),
    MeanAll(usize),
    /// Mean squared difference of two same-shape tensors, as a scalar.
    Mse(usize, usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`]. Constant leaves have no entry,
/// which is how callers verify that detached values receive zero gradient.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a tape value; `None` for constants and unused branches.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

/// Wengert list; build the forward pass, then call [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Var, true)
    }

    /// Non-differentiable leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "expected scalar node");
        t.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let ng = self.nodes[x.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor<T>, op: Op<T>) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x + y)
            .expect("add: shape mismatch");
        self.binary(a, b, v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x - y)
            .expect("sub: shape mismatch");
        self.binary(a, b, v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x * y)
            .expect("mul: shape mismatch");
        self.binary(a, b, v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, a: T) -> Var {
        self.affine(x, a, T::zero())
    }

    pub fn affine(&mut self, x: Var, a: T, b: T) -> Var {
        let v = self.nodes[x.0].value.map(|u| a * u + b);
        self.unary(x, v, Op::Affine(x.0, a, b))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.map(|u| u.tanh());
        self.unary(x, v, Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.map(sigmoid);
        self.unary(x, v, Op::Sigmoid(x.0))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.map(gelu);
        self.unary(x, v, Op::Gelu(x.0))
    }

    pub fn scaled_tanh_cols(&mut self, x: Var, ranges: Rc<Vec<T>>) -> Var {
        let xs = &self.nodes[x.0].value;
        let (r, c) = mat_dims(xs);
        assert_eq!(ranges.len(), c, "scaled_tanh_cols: range per column");
        let mut out = xs.clone();
        for i in 0..r {
            for j in 0..c {
                let k = ranges[j];
                let v = out.data()[i * c + j];
                out.data_mut()[i * c + j] = k * (v / k).tanh();
            }
        }
        self.unary(x, out, Op::ScaledTanhCols(x.0, ranges))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0]
            .value
            .map(|u| u.max(T::zero()).min(T::one()));
        self.unary(x, v, Op::Clamp01(x.0))
    }

    pub fn matmul_nn(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = mat_dims(&self.nodes[a.0].value);
        let (k2, n) = mat_dims(&self.nodes[b.0].value);
        assert_eq!(k, k2, "matmul_nn: inner dims");
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_nn(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        self.binary(a, b, out, Op::MatmulNN(a.0, b.0))
    }

    /// a * b^T with a:(m,k), b:(n,k).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = mat_dims(&self.nodes[a.0].value);
        let (n, k2) = mat_dims(&self.nodes[b.0].value);
        assert_eq!(k, k2, "matmul_nt: inner dims");
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_nt(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        self.binary(a, b, out, Op::MatmulNT(a.0, b.0))
    }

    /// a^T * b with a:(k,m), b:(k,n).
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let (k, m) = mat_dims(&self.nodes[a.0].value);
        let (k2, n) = mat_dims(&self.nodes[b.0].value);
        assert_eq!(k, k2, "matmul_tn: inner dims");
        let mut out = Tensor::zeros(&[m, n]);
        kernels::matmul_tn(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
            out.data_mut(),
        );
        self.binary(a, b, out, Op::MatmulTN(a.0, b.0))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let (r, c) = mat_dims(&self.nodes[x.0].value);
        assert_eq!(self.nodes[bias.0].value.numel(), c, "add_row_bias: width");
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                let b = self.nodes[bias.0].value.data()[j];
                out.data_mut()[i * c + j] = out.data()[i * c + j] + b;
            }
        }
        self.binary(x, bias, out, Op::AddRowBias(x.0, bias.0))
    }

    pub fn mul_row_bias(&mut self, x: Var, gains: Var) -> Var {
        let (r, c) = mat_dims(&self.nodes[x.0].value);
        assert_eq!(self.nodes[gains.0].value.numel(), c, "mul_row_bias: width");
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..r {
            for j in 0..c {
                let g = self.nodes[gains.0].value.data()[j];
                out.data_mut()[i * c + j] = out.data()[i * c + j] * g;
            }
        }
        self.binary(x, gains, out, Op::MulRowBias(x.0, gains.0))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = mat_dims(&self.nodes[x.0].value);
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..r {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        self.unary(x, out, Op::SoftmaxRows(x.0))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (r, c) = mat_dims(&self.nodes[x.0].value);
        assert_eq!(self.nodes[gamma.0].value.numel(), c, "layer_norm: gamma");
        assert_eq!(self.nodes[beta.0].value.numel(), c, "layer_norm: beta");
        let mut out = Tensor::zeros(&[r, c]);
        let xs = self.nodes[x.0].value.data();
        let g = self.nodes[gamma.0].value.data();
        let b = self.nodes[beta.0].value.data();
        let cn = T::c(c as f64);
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / cn;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / cn;
            let inv = (var + eps).sqrt().recip();
            for j in 0..c {
                out.data_mut()[i * c + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let ng = self.nodes[x.0].needs_grad
            || self.nodes[gamma.0].needs_grad
            || self.nodes[beta.0].needs_grad;
        self.push(
            out,
            Op::LayerNormRows {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = mat_dims(&self.nodes[x.0].value);
        assert!(start + len <= c, "slice_cols: out of range");
        let mut out = Tensor::zeros(&[r, len]);
        let xs = self.nodes[x.0].value.data();
        for i in 0..r {
            for j in 0..len {
                out.data_mut()[i * len + j] = xs[i * c + start + j];
            }
        }
        self.unary(x, out, Op::SliceCols { x: x.0, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let r = mat_dims(&self.nodes[parts[0].0].value).0;
        let total: usize = parts
            .iter()
            .map(|p| {
                let (pr, pc) = mat_dims(&self.nodes[p.0].value);
                assert_eq!(pr, r, "concat_cols: row mismatch");
                pc
            })
            .sum();
        let mut out = Tensor::zeros(&[r, total]);
        let mut offset = 0;
        for p in parts {
            let (_, pc) = mat_dims(&self.nodes[p.0].value);
            let src = self.nodes[p.0].value.data();
            for i in 0..r {
                for j in 0..pc {
                    out.data_mut()[i * total + offset + j] = src[i * pc + j];
                }
            }
            offset += pc;
        }
        let ng = parts.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng)
    }

    /// Bijective element permutation with explicit output dims.
    pub fn permute(&mut self, x: Var, fwd: Rc<Vec<usize>>, out_dims: &[usize]) -> Var {
        let xs = self.nodes[x.0].value.data();
        assert_eq!(fwd.len(), xs.len(), "permute: index count");
        assert_eq!(
            out_dims.iter().product::<usize>(),
            xs.len(),
            "permute: dims"
        );
        let data: Vec<T> = fwd.iter().map(|&i| xs[i]).collect();
        let out = Tensor::from_vec(out_dims, data).expect("permute: dims");
        self.unary(x, out, Op::Permute { x: x.0, fwd })
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Var {
        let v = self.nodes[x.0].value.reshaped(dims).expect("reshape: dims");
        self.unary(x, v, Op::Reshape(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let n = T::c(t.numel() as f64);
        let sum = t.data().iter().fold(T::zero(), |a, &v| a + v);
        self.unary(x, Tensor::scalar(sum / n), Op::MeanAll(x.0))
    }

    /// Mean squared difference, reduced over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        assert_eq!(ta.dims(), tb.dims(), "mse: shape mismatch");
        let n = T::c(ta.numel() as f64);
        let mut acc = T::zero();
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let d = x - y;
            acc = acc + d * d;
        }
        self.binary(a, b, Tensor::scalar(acc / n), Op::Mse(a.0, b.0))
    }

    /// Reverse pass from a scalar node. Gradients are accumulated in a fixed
    /// order, so repeated runs are bit-identical.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.nodes[loss.0].value.numel(), 1, "backward: scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = grads[idx].take().unwrap();
            self.step_backward(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: usize, delta: Tensor<T>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(g) => {
                let sum = g.zip_map(&delta, |a, b| a + b).expect("grad shape");
                *g = sum;
            }
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn step_backward(&self, idx: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[idx].op {
            Op::Var | Op::Const => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let da = dy
                    .zip_map(&self.nodes[*b].value, |g, v| g * v)
                    .expect("mul grad");
                let db = dy
                    .zip_map(&self.nodes[*a].value, |g, v| g * v)
                    .expect("mul grad");
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Affine(x, a, _) => {
                let aa = *a;
                self.accumulate(grads, *x, dy.map(|g| g * aa));
            }
            Op::Tanh(x) => {
                let y = &self.nodes[idx].value;
                let dx = dy
                    .zip_map(y, |g, t| g * (T::one() - t * t))
                    .expect("tanh grad");
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[idx].value;
                let dx = dy
                    .zip_map(y, |g, s| g * s * (T::one() - s))
                    .expect("sigmoid grad");
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xs = &self.nodes[*x].value;
                let dx = dy.zip_map(xs, |g, v| g * gelu_grad(v)).expect("gelu grad");
                self.accumulate(grads, *x, dx);
            }
            Op::ScaledTanhCols(x, ranges) => {
                let y = &self.nodes[idx].value;
                let (r, c) = mat_dims(y);
                let mut dx = dy.clone();
                for i in 0..r {
                    for j in 0..c {
                        let k = ranges[j];
                        let u = y.data()[i * c + j] / k;
                        dx.data_mut()[i * c + j] =
                            dy.data()[i * c + j] * (T::one() - u * u);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Clamp01(x) => {
                let xs = &self.nodes[*x].value;
                let dx = dy
                    .zip_map(xs, |g, v| {
                        if v > T::zero() && v < T::one() {
                            g
                        } else {
                            T::zero()
                        }
                    })
                    .expect("clamp grad");
                self.accumulate(grads, *x, dx);
            }
            Op::MatmulNN(a, b) => {
                let (m, k) = mat_dims(&self.nodes[*a].value);
                let n = mat_dims(&self.nodes[*b].value).1;
                let mut da = Tensor::zeros(&[m, k]);
                kernels::matmul_nt(
                    dy.data(),
                    self.nodes[*b].value.data(),
                    m,
                    n,
                    k,
                    da.data_mut(),
                );
                let mut db = Tensor::zeros(&[k, n]);
                kernels::matmul_tn(
                    self.nodes[*a].value.data(),
                    dy.data(),
                    k,
                    m,
                    n,
                    db.data_mut(),
                );
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MatmulNT(a, b) => {
                // c = a * b^T, a:(m,k), b:(n,k), dy:(m,n)
                let (m, k) = mat_dims(&self.nodes[*a].value);
                let n = mat_dims(&self.nodes[*b].value).0;
                let mut da = Tensor::zeros(&[m, k]);
                kernels::matmul_nn(
                    dy.data(),
                    self.nodes[*b].value.data(),
                    m,
                    n,
                    k,
                    da.data_mut(),
                );
                let mut db = Tensor::zeros(&[n, k]);
                kernels::matmul_tn(
                    dy.data(),
                    self.nodes[*a].value.data(),
                    n,
                    m,
                    k,
                    db.data_mut(),
                );
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::MatmulTN(a, b) => {
                // c = a^T * b, a:(k,m), b:(k,n), dy:(m,n)
                let (k, m) = mat_dims(&self.nodes[*a].value);
                let n = mat_dims(&self.nodes[*b].value).1;
                let mut da = Tensor::zeros(&[k, m]);
                kernels::matmul_nt(
                    self.nodes[*b].value.data(),
                    dy.data(),
                    k,
                    n,
                    m,
                    da.data_mut(),
                );
                let mut db = Tensor::zeros(&[k, n]);
                kernels::matmul_nn(
                    self.nodes[*a].value.data(),
                    dy.data(),
                    k,
                    m,
                    n,
                    db.data_mut(),
                );
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::AddRowBias(x, bias) => {
                let (r, c) = mat_dims(dy);
                let mut db = Tensor::zeros(&[c]);
                for i in 0..r {
                    for j in 0..c {
                        db.data_mut()[j] = db.data()[j] + dy.data()[i * c + j];
                    }
                }
                self.accumulate(grads, *x, dy.clone());
                self.accumulate(grads, *bias, db);
            }
            Op::MulRowBias(x, gains) => {
                let (r, c) = mat_dims(dy);
                let xs = &self.nodes[*x].value;
                let g = &self.nodes[*gains].value;
                let mut dx = dy.clone();
                let mut dg = Tensor::zeros(&[c]);
                for i in 0..r {
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = dy.data()[i * c + j] * g.data()[j];
                        dg.data_mut()[j] =
                            dg.data()[j] + dy.data()[i * c + j] * xs.data()[i * c + j];
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gains, dg);
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[idx].value;
                let (r, c) = mat_dims(y);
                let mut dx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &dy.data()[i * c..(i + 1) * c];
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |a, (&yv, &gv)| a + yv * gv);
                    for j in 0..c {
                        dx.data_mut()[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let xs = &self.nodes[*x].value;
                let g = &self.nodes[*gamma].value;
                let (r, c) = mat_dims(xs);
                let cn = T::c(c as f64);
                let mut dx = Tensor::zeros(&[r, c]);
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                for i in 0..r {
                    let row = &xs.data()[i * c..(i + 1) * c];
                    let gr = &dy.data()[i * c..(i + 1) * c];
                    let mean = row.iter().fold(T::zero(), |a, &v| a + v) / cn;
                    let var = row
                        .iter()
                        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                        / cn;
                    let inv = (var + *eps).sqrt().recip();
                    // xhat and the two reduced terms of the standard formula
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_xhat = T::zero();
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * g.data()[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        dgamma.data_mut()[j] = dgamma.data()[j] + gr[j] * xhat;
                        dbeta.data_mut()[j] = dbeta.data()[j] + gr[j];
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = gr[j] * g.data()[j];
                        dx.data_mut()[i * c + j] =
                            inv * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::SliceCols { x, start, len } => {
                let (r, c) = mat_dims(&self.nodes[*x].value);
                let mut dx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..*len {
                        dx.data_mut()[i * c + start + j] = dy.data()[i * len + j];
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = mat_dims(dy).1;
                let r = mat_dims(dy).0;
                let mut offset = 0;
                for p in parts {
                    let (_, pc) = mat_dims(&self.nodes[*p].value);
                    let mut dp = Tensor::zeros(&[r, pc]);
                    for i in 0..r {
                        for j in 0..pc {
                            dp.data_mut()[i * pc + j] = dy.data()[i * total + offset + j];
                        }
                    }
                    self.accumulate(grads, *p, dp);
                    offset += pc;
                }
            }
            Op::Permute { x, fwd } => {
                let mut dx = Tensor::zeros(self.nodes[*x].value.dims());
                for (i, &src) in fwd.iter().enumerate() {
                    dx.data_mut()[src] = dy.data()[i];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let dx = dy
                    .reshaped(self.nodes[*x].value.dims())
                    .expect("reshape grad");
                self.accumulate(grads, *x, dx);
            }
            Op::MeanAll(x) => {
                let n = T::c(self.nodes[*x].value.numel() as f64);
                let g = dy.data()[0] / n;
                let dx = Tensor::full(self.nodes[*x].value.dims(), g);
                self.accumulate(grads, *x, dx);
            }
            Op::Mse(a, b) => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let n = T::c(ta.numel() as f64);
                let g = dy.data()[0] * T::c(2.0) / n;
                let da = ta.zip_map(tb, |x, y| g * (x - y)).expect("mse grad");
                let db = da.map(|v| -v);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::c(0.7978845608028654); // sqrt(2/pi)
    let k = T::c(0.044715);
    let u = c * (x + k * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::c(0.7978845608028654);
    let k = T::c(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::c(3.0) * k * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * du
}

fn mat_dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    match t.dims() {
        [r, c] => (*r, *c),
        [n] => (1, *n),
        other => panic!("expected matrix, got rank-{} tensor", other.len()),
    }
}

pub(crate) mod kernels {
    //! Plain triple-loop matmuls ordered for sequential access; enough
    //! throughput for the small models here.

    use crate::scalar::Scalar;

    pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * brow[j];
                }
            }
        }
    }

    pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for p in 0..k {
                    acc = acc + arow[p] * brow[p];
                }
                out[i * n + j] = out[i * n + j] + acc;
            }
        }
    }

    pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
        // a:(k,m), b:(k,n)
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            let brow = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let av = arow[i];
                if av == T::zero() {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * brow[j];
                }
            }
        }
    }
}
