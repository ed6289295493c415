//! Reverse-mode tape over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamRegistry`] for the duration of one forward
//! pass; [`Graph::backward`] returns [`Gradients`] that the caller folds back
//! into the registry once the borrow ends.

use super::params::{ParamId, ParamRegistry};
use super::tensor::Tensor;
use crate::scalar::{gemm, MatView, Scalar};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T> {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Silu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        qkv: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Reshape(NodeId),
    ConcatTokens {
        a: NodeId,
        b: NodeId,
        batch: usize,
    },
    SliceTokens {
        x: NodeId,
        batch: usize,
        start: usize,
        end: usize,
    },
    RepeatTokens {
        x: NodeId,
        reps: usize,
    },
    ConcatCols(NodeId, NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    WeightedMse {
        pred: NodeId,
        target: Vec<T>,
        col_weights: Vec<T>,
    },
    HalfSqErr {
        pred: NodeId,
        target: Vec<T>,
    },
    DotConst {
        x: NodeId,
        r: Vec<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'r, T: Scalar> {
    reg: &'r ParamRegistry<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    /// One slot per registry parameter (`None` if unused by the graph).
    pub params: Vec<Option<Tensor<T>>>,
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].as_ref()
    }

    /// Gradient with respect to an input node.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].as_ref()
    }
}

fn mat(t: &Tensor<impl Scalar>) -> MatView {
    MatView::dense(t.rows(), t.cols())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'r, T: Scalar> Graph<'r, T> {
    pub fn new(reg: &'r ParamRegistry<T>) -> Self {
        Self {
            reg,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn registry(&self) -> &'r ParamRegistry<T> {
        self.reg
    }

    fn push(&mut self, op: Op<T>, value: Option<Tensor<T>>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.reg.value_at(*p),
            (_, Some(v)) => v,
            _ => unreachable!("non-param node without value"),
        }
    }

    /// Constant input (no gradient tracked unless requested with [`Graph::input_grad`]).
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, Some(t), false)
    }

    /// Input whose gradient is reported in [`Gradients::node`].
    pub fn input_grad(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, Some(t), true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id.0), None, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul inner dims {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let (m, n) = (av.rows(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            av.data(),
            mat(av),
            bv.data(),
            mat(bv),
            T::zero(),
            &mut out,
            MatView::dense(m, n),
        );
        let ng = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), Some(Tensor::from_vec(m, n, out)), ng)
    }

    /// `x + b` with `b` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.cols();
        assert_eq!(bv.len(), n, "bias width");
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += *bb;
            }
        }
        let ng = self.needs(&[x, b]);
        self.push(Op::AddBias(x, b), Some(out), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        assert_eq!(out.len(), self.value(b).len(), "add shapes");
        out.add_assign(self.value(b));
        let ng = self.needs(&[a, b]);
        self.push(Op::Add(a, b), Some(out), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bv = self.value(b).data().to_vec();
        assert_eq!(self.value(a).len(), bv.len(), "mul shapes");
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().zip(&bv).for_each(|(o, v)| *o *= *v);
        let ng = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), Some(out), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let c = T::lit(c);
        let out = self.value(a).map(|v| v * c);
        let ng = self.needs(&[a]);
        self.push(Op::Scale(a, c), Some(out), ng)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let ng = self.needs(&[x]);
        self.push(Op::Silu(x), Some(out), ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(&[x]);
        self.push(Op::Sigmoid(x), Some(out), ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(T::tanh);
        let ng = self.needs(&[x]);
        self.push(Op::Tanh(x), Some(out), ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let ng = self.needs(&[x]);
        self.push(Op::Relu(x), Some(out), ng)
    }

    /// Normalizes each row over the last dimension, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.cols();
        let (gv, bv) = (self.value(gain).data(), self.value(bias).data());
        assert!(gv.len() == n && bv.len() == n, "layer norm affine width");
        let eps = T::lit(LN_EPS);
        let nt = T::lit(n as f64);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let xh = (*v - mean) * r;
                xhat.push(xh);
                out.push(xh * gv[j] + bv[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let ng = self.needs(&[x, gain, bias]);
        let out = Tensor::new(shape, out).expect("layer norm shape");
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            Some(out),
            ng,
        )
    }

    /// Scaled dot-product self-attention. `qkv` is `[batch*seq, 3*dim]` with
    /// query, key and value blocks side by side; the result is `[batch*seq, dim]`.
    pub fn attention(&mut self, qkv: NodeId, batch: usize, seq: usize, heads: usize) -> NodeId {
        let qv = self.value(qkv);
        assert_eq!(qv.rows(), batch * seq, "attention rows");
        assert_eq!(qv.cols() % 3, 0, "attention expects fused qkv");
        let dim = qv.cols() / 3;
        assert_eq!(dim % heads, 0, "token dim {dim} not divisible by {heads} heads");
        let dh = dim / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let src = qv.data();
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); batch * seq * dim];
        let in_view = MatView {
            offset: 0,
            rows: seq,
            cols: dh,
            rs: 3 * dim,
            cs: 1,
        };
        let out_view = MatView {
            offset: 0,
            rows: seq,
            cols: dh,
            rs: dim,
            cs: 1,
        };
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * 3 * dim + h * dh;
                let p_off = (b * heads + h) * seq * seq;
                let p = &mut probs[p_off..p_off + seq * seq];
                gemm(
                    scale,
                    src,
                    in_view.at(base),
                    src,
                    in_view.at(base + dim).t(),
                    T::zero(),
                    p,
                    MatView::dense(seq, seq),
                );
                for row in p.chunks_mut(seq) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
                let p = &probs[p_off..p_off + seq * seq];
                gemm(
                    T::one(),
                    p,
                    MatView::dense(seq, seq),
                    src,
                    in_view.at(base + 2 * dim),
                    T::zero(),
                    &mut out,
                    out_view.at(b * seq * dim + h * dh),
                );
            }
        }
        let ng = self.needs(&[qkv]);
        self.push(
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            Some(Tensor::from_vec(batch * seq, dim, out)),
            ng,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let out = self.value(x).clone().reshape(shape).expect("reshape");
        let ng = self.needs(&[x]);
        self.push(Op::Reshape(x), Some(out), ng)
    }

    /// Per batch element, rows of `a` followed by rows of `b`.
    pub fn concat_tokens(&mut self, a: NodeId, b: NodeId, batch: usize) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let d = av.cols();
        assert_eq!(bv.cols(), d, "concat_tokens width");
        let (la, lb) = (av.rows() / batch, bv.rows() / batch);
        let mut out = Vec::with_capacity((la + lb) * batch * d);
        for i in 0..batch {
            out.extend_from_slice(&av.data()[i * la * d..(i + 1) * la * d]);
            out.extend_from_slice(&bv.data()[i * lb * d..(i + 1) * lb * d]);
        }
        let ng = self.needs(&[a, b]);
        self.push(
            Op::ConcatTokens { a, b, batch },
            Some(Tensor::from_vec(batch * (la + lb), d, out)),
            ng,
        )
    }

    /// Per batch element, token rows `start..end`.
    pub fn slice_tokens(&mut self, x: NodeId, batch: usize, start: usize, end: usize) -> NodeId {
        let xv = self.value(x);
        let d = xv.cols();
        let l = xv.rows() / batch;
        assert!(start < end && end <= l, "slice_tokens range");
        let mut out = Vec::with_capacity(batch * (end - start) * d);
        for i in 0..batch {
            out.extend_from_slice(&xv.data()[(i * l + start) * d..(i * l + end) * d]);
        }
        let ng = self.needs(&[x]);
        self.push(
            Op::SliceTokens { x, batch, start, end },
            Some(Tensor::from_vec(batch * (end - start), d, out)),
            ng,
        )
    }

    /// `[batch, d] -> [batch*reps, d]`, each row repeated `reps` times.
    pub fn repeat_tokens(&mut self, x: NodeId, reps: usize) -> NodeId {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Vec::with_capacity(xv.len() * reps);
        for row in xv.data().chunks(d) {
            for _ in 0..reps {
                out.extend_from_slice(row);
            }
        }
        let rows = xv.rows() * reps;
        let ng = self.needs(&[x]);
        self.push(Op::RepeatTokens { x, reps }, Some(Tensor::from_vec(rows, d, out)), ng)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols rows");
        let (p, q) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let rows = av.rows();
        let ng = self.needs(&[a, b]);
        self.push(Op::ConcatCols(a, b), Some(Tensor::from_vec(rows, p + q, out)), ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let xv = self.value(x);
        assert!(start < end && end <= xv.cols(), "slice_cols range");
        let mut out = Vec::with_capacity(xv.rows() * (end - start));
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        let rows = xv.rows();
        let ng = self.needs(&[x]);
        self.push(
            Op::SliceCols { x, start, end },
            Some(Tensor::from_vec(rows, end - start, out)),
            ng,
        )
    }

    /// `mean_{r,c} w_c (pred − target)²`, accumulated in f64.
    pub fn weighted_mse(&mut self, pred: NodeId, target: &Tensor<T>, col_weights: &[T]) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "mse shapes");
        let n = pv.cols();
        assert_eq!(col_weights.len(), n, "mse column weights");
        let mut acc = 0.0f64;
        for (i, (p, t)) in pv.data().iter().zip(target.data()).enumerate() {
            let d = (*p - *t).f64();
            acc += col_weights[i % n].f64() * d * d;
        }
        let loss = T::lit(acc / pv.len() as f64);
        let ng = self.needs(&[pred]);
        let op = Op::WeightedMse {
            pred,
            target: target.data().to_vec(),
            col_weights: col_weights.to_vec(),
        };
        self.push(op, Some(Tensor::scalar(loss)), ng)
    }

    /// `mean ½(pred − target)²` with `target` held constant.
    pub fn half_sq_err(&mut self, pred: NodeId, target: &[T]) -> NodeId {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "half_sq_err shapes");
        let acc: f64 = pv
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| 0.5 * (*p - *t).f64().powi(2))
            .sum();
        let loss = T::lit(acc / pv.len() as f64);
        let ng = self.needs(&[pred]);
        self.push(
            Op::HalfSqErr {
                pred,
                target: target.to_vec(),
            },
            Some(Tensor::scalar(loss)),
            ng,
        )
    }

    /// `Σ x ∘ r` for a constant `r`; a generic scalar probe for gradient checks.
    pub fn dot_const(&mut self, x: NodeId, r: &[T]) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.len(), r.len(), "dot_const shapes");
        let acc: f64 = xv.data().iter().zip(r).map(|(a, b)| (*a * *b).f64()).sum();
        let ng = self.needs(&[x]);
        self.push(Op::DotConst { x, r: r.to_vec() }, Some(Tensor::scalar(T::lit(acc))), ng)
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor<T>>> = (0..self.reg.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => grads[i] = Some(g),
                Op::Param(p) => acc(&mut params, *p, g),
                op => self.backprop(op, i, &g, &mut grads),
            }
        }
        Gradients { params, nodes: grads }
    }

    fn acc_node(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
        if self.nodes[id.0].needs_grad {
            acc(grads, id.0, g);
        }
    }

    fn backprop(&self, op: &Op<T>, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = self.nodes[i].value.as_ref().expect("op value");
        match op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![T::zero(); av.len()];
                    gemm(
                        T::one(),
                        g.data(),
                        mat(g),
                        bv.data(),
                        mat(bv).t(),
                        T::zero(),
                        &mut da,
                        mat(av),
                    );
                    self.acc_node(grads, *a, Tensor::new(av.shape().to_vec(), da).expect("shape"));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![T::zero(); bv.len()];
                    gemm(
                        T::one(),
                        av.data(),
                        mat(av).t(),
                        g.data(),
                        mat(g),
                        T::zero(),
                        &mut db,
                        mat(bv),
                    );
                    self.acc_node(grads, *b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
                }
            }
            Op::AddBias(x, b) => {
                self.acc_node(grads, *x, g.clone());
                if self.nodes[b.0].needs_grad {
                    let bv = self.value(*b);
                    let n = bv.len();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += *v);
                    }
                    self.acc_node(grads, *b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                let sa = self.value(*a).shape().to_vec();
                let sb = self.value(*b).shape().to_vec();
                self.acc_node(grads, *a, g.clone().reshape(&sa).expect("shape"));
                self.acc_node(grads, *b, g.clone().reshape(&sb).expect("shape"));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone().reshape(av.shape()).expect("shape");
                da.data_mut().iter_mut().zip(bv.data()).for_each(|(d, v)| *d *= *v);
                let mut db = g.clone().reshape(bv.shape()).expect("shape");
                db.data_mut().iter_mut().zip(av.data()).for_each(|(d, v)| *d *= *v);
                self.acc_node(grads, *a, da);
                self.acc_node(grads, *b, db);
            }
            Op::Scale(a, c) => self.acc_node(grads, *a, g.map(|v| v * *c)),
            Op::Silu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    let s = sigmoid(*v);
                    *d *= s * (T::one() + *v * (T::one() - s));
                }
                self.acc_node(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = g.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(out.data())
                    .for_each(|(d, y)| *d *= *y * (T::one() - *y));
                self.acc_node(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let mut dx = g.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(out.data())
                    .for_each(|(d, y)| *d *= T::one() - *y * *y);
                self.acc_node(grads, *x, dx);
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                dx.data_mut().iter_mut().zip(self.value(*x).data()).for_each(|(d, v)| {
                    if *v <= T::zero() {
                        *d = T::zero();
                    }
                });
                self.acc_node(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = out.cols();
                let gv = self.value(*gain).data();
                let nt = T::lit(n as f64);
                let mut dgain = vec![T::zero(); n];
                let mut dbias = vec![T::zero(); n];
                let mut dx = vec![T::zero(); g.len()];
                let mut dxh = vec![T::zero(); n];
                for (r, (grow, xrow)) in g.data().chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        dgain[j] += grow[j] * xrow[j];
                        dbias[j] += grow[j];
                        dxh[j] = grow[j] * gv[j];
                        m1 += dxh[j];
                        m2 += dxh[j] * xrow[j];
                    }
                    m1 /= nt;
                    m2 /= nt;
                    for j in 0..n {
                        dx[r * n + j] = rstd[r] * (dxh[j] - m1 - xrow[j] * m2);
                    }
                }
                let xs = self.value(*x).shape().to_vec();
                self.acc_node(grads, *x, Tensor::new(xs, dx).expect("shape"));
                let gs = self.value(*gain).shape().to_vec();
                self.acc_node(grads, *gain, Tensor::new(gs, dgain).expect("shape"));
                let bs = self.value(*bias).shape().to_vec();
                self.acc_node(grads, *bias, Tensor::new(bs, dbias).expect("shape"));
            }
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let src = self.value(*qkv).data();
                let dim = out.cols();
                let dh = dim / heads;
                let scale = T::lit(1.0 / (dh as f64).sqrt());
                let mut dqkv = vec![T::zero(); src.len()];
                let mut dp = vec![T::zero(); seq * seq];
                let in_view = MatView {
                    offset: 0,
                    rows: seq,
                    cols: dh,
                    rs: 3 * dim,
                    cs: 1,
                };
                let out_view = MatView {
                    offset: 0,
                    rows: seq,
                    cols: dh,
                    rs: dim,
                    cs: 1,
                };
                let sq = MatView::dense(seq, seq);
                for b in 0..batch {
                    for h in 0..heads {
                        let base = b * seq * 3 * dim + h * dh;
                        let o_off = b * seq * dim + h * dh;
                        let p_off = (b * heads + h) * seq * seq;
                        let p = &probs[p_off..p_off + seq * seq];
                        // dV = Pᵀ dO
                        gemm(
                            T::one(),
                            p,
                            sq.t(),
                            g.data(),
                            out_view.at(o_off),
                            T::zero(),
                            &mut dqkv,
                            in_view.at(base + 2 * dim),
                        );
                        // dP = dO Vᵀ
                        gemm(
                            T::one(),
                            g.data(),
                            out_view.at(o_off),
                            src,
                            in_view.at(base + 2 * dim).t(),
                            T::zero(),
                            &mut dp,
                            sq,
                        );
                        // dS = P ∘ (dP − rowsum(dP ∘ P))
                        for r in 0..seq {
                            let pr = &p[r * seq..(r + 1) * seq];
                            let dr = &mut dp[r * seq..(r + 1) * seq];
                            let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                            dr.iter_mut().zip(pr).for_each(|(d, pv)| *d = *pv * (*d - dot));
                        }
                        // dQ = scale dS K ; dK = scale dSᵀ Q
                        gemm(
                            scale,
                            &dp,
                            sq,
                            src,
                            in_view.at(base + dim),
                            T::zero(),
                            &mut dqkv,
                            in_view.at(base),
                        );
                        gemm(
                            scale,
                            &dp,
                            sq.t(),
                            src,
                            in_view.at(base),
                            T::zero(),
                            &mut dqkv,
                            in_view.at(base + dim),
                        );
                    }
                }
                let s = self.value(*qkv).shape().to_vec();
                self.acc_node(grads, *qkv, Tensor::new(s, dqkv).expect("shape"));
            }
            Op::Reshape(x) => {
                let s = self.value(*x).shape().to_vec();
                self.acc_node(grads, *x, g.clone().reshape(&s).expect("shape"));
            }
            Op::ConcatTokens { a, b, batch } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = av.cols();
                let (la, lb) = (av.rows() / batch, bv.rows() / batch);
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for chunk in g.data().chunks((la + lb) * d) {
                    da.extend_from_slice(&chunk[..la * d]);
                    db.extend_from_slice(&chunk[la * d..]);
                }
                self.acc_node(grads, *a, Tensor::new(av.shape().to_vec(), da).expect("shape"));
                self.acc_node(grads, *b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
            }
            Op::SliceTokens { x, batch, start, end } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let l = xv.rows() / batch;
                let w = end - start;
                let mut dx = vec![T::zero(); xv.len()];
                for i in 0..*batch {
                    dx[(i * l + start) * d..(i * l + end) * d].copy_from_slice(&g.data()[i * w * d..(i + 1) * w * d]);
                }
                self.acc_node(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::RepeatTokens { x, reps } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![T::zero(); xv.len()];
                for (r, row) in g.data().chunks(d).enumerate() {
                    let dst = &mut dx[(r / reps) * d..(r / reps + 1) * d];
                    dst.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                }
                self.acc_node(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let p = av.cols();
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for row in g.data().chunks(g.cols()) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                self.acc_node(grads, *a, Tensor::new(av.shape().to_vec(), da).expect("shape"));
                self.acc_node(grads, *b, Tensor::new(bv.shape().to_vec(), db).expect("shape"));
            }
            Op::SliceCols { x, start, end } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![T::zero(); xv.len()];
                for (r, row) in g.data().chunks(end - start).enumerate() {
                    dx[r * c + start..r * c + end].copy_from_slice(row);
                }
                self.acc_node(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
            Op::WeightedMse {
                pred,
                target,
                col_weights,
            } => {
                let pv = self.value(*pred);
                let n = pv.cols();
                let c = g.data()[0] * T::lit(2.0 / pv.len() as f64);
                let dx = pv
                    .data()
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(i, (p, t))| c * col_weights[i % n] * (*p - *t))
                    .collect();
                self.acc_node(grads, *pred, Tensor::new(pv.shape().to_vec(), dx).expect("shape"));
            }
            Op::HalfSqErr { pred, target } => {
                let pv = self.value(*pred);
                let c = g.data()[0] / T::lit(pv.len() as f64);
                let dx = pv.data().iter().zip(target).map(|(p, t)| c * (*p - *t)).collect();
                self.acc_node(grads, *pred, Tensor::new(pv.shape().to_vec(), dx).expect("shape"));
            }
            Op::DotConst { x, r } => {
                let xv = self.value(*x);
                let c = g.data()[0];
                let dx = r.iter().map(|v| *v * c).collect();
                self.acc_node(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
            }
        }
    }
}

fn acc<T: Scalar>(slots: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
    match &mut slots[i] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
