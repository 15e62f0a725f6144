//! Append-only computation graph with reverse-mode differentiation.
//!
//! [`Graph::grad`] records the backward pass as ordinary graph nodes, so the
//! gradients it returns can themselves be differentiated. This is what the
//! gradient-matching loss needs: a distance between parameter gradients,
//! differentiated with respect to the synthetic inputs that produced them.
//!
//! Every op's backward rule is written in terms of ops from the same closed
//! set, which keeps double-backward well defined:
//!
//! | op                        | adjoint partner              |
//! |---------------------------|------------------------------|
//! | `sum_all`                 | `broadcast_scalar`           |
//! | `sum_rows` / `sum_cols`   | `broadcast_rows` / `_cols`   |
//! | `sum_channels`            | `broadcast_channels`         |
//! | `avg_pool`                | `avg_unpool`                 |
//! | `conv2d`                  | `conv_input_grad`, `conv_weight_grad` |
//! | `matmul`                  | `matmul` with transpose flags |
//!
//! ReLU contributes no second-order term: its backward multiplies by a
//! constant 0/1 mask.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    SumAll(NodeId),
    BroadcastScalar(NodeId),
    Recip(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    SumRows(NodeId),
    BroadcastRows(NodeId),
    SumCols(NodeId),
    BroadcastCols(NodeId),
    LogSoftmaxRows(NodeId),
    Reshape(NodeId),
    Conv2d { x: NodeId, w: NodeId, pad: usize },
    ConvInputGrad { gy: NodeId, w: NodeId, pad: usize },
    ConvWeightGrad { x: NodeId, gy: NodeId, pad: usize },
    AvgPool(NodeId, usize),
    AvgUnpool(NodeId, usize),
    SumChannels(NodeId),
    BroadcastChannels(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A computation graph. Nodes are only ever appended, so node order is a
/// topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(ctx: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape(), "{ctx}: operand shapes differ");
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: NodeId, op: Op, value: Tensor) -> NodeId {
        let rg = self.requires_grad(a);
        self.push(op, value, rg)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, value: Tensor) -> NodeId {
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        same_shape("add", self.value(a), self.value(b));
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.binary(a, b, Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        same_shape("sub", self.value(a), self.value(b));
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.binary(a, b, Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        same_shape("mul", self.value(a), self.value(b));
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.binary(a, b, Op::Mul(a, b), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| -x);
        self.unary(a, Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x * c);
        self.unary(a, Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x + c);
        self.unary(a, Op::AddScalar(a), v)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.unary(a, Op::SumAll(a), v)
    }

    /// Repeats a single-element node into `shape`.
    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = Tensor::full(shape, self.value(a).item());
        self.unary(a, Op::BroadcastScalar(a), v)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| 1.0 / x);
        self.unary(a, Op::Recip(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), f64::sqrt);
        self.unary(a, Op::Sqrt(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), f64::exp);
        self.unary(a, Op::Exp(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| x.max(0.0));
        self.unary(a, Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), f64::tanh);
        self.unary(a, Op::Tanh(a), v)
    }

    /// `op(a) · op(b)` for 2-D operands, `op` transposing when the flag is set.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = kernels::matmul(self.value(a), self.value(b), ta, tb);
        self.binary(a, b, Op::MatMul { a, b, ta, tb }, v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    /// [n, m] -> [m]
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        let (n, m) = (s[0], s[1]);
        let mut out = vec![0.0; m];
        for row in self.value(a).data().chunks(m.max(1)).take(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.unary(a, Op::SumRows(a), Tensor::from_parts(vec![m], out))
    }

    /// [m] -> [n, m]
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let row = self.value(a).data();
        let m = row.len();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(row);
        }
        self.unary(a, Op::BroadcastRows(a), Tensor::from_parts(vec![n, m], out))
    }

    /// [n, m] -> [n]
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        let (n, m) = (s[0], s[1]);
        let out: Vec<f64> = if m == 0 {
            vec![0.0; n]
        } else {
            self.value(a).data().chunks(m).map(|r| r.iter().sum()).collect()
        };
        self.unary(a, Op::SumCols(a), Tensor::from_parts(vec![n], out))
    }

    /// [n] -> [n, m]
    pub fn broadcast_cols(&mut self, a: NodeId, m: usize) -> NodeId {
        let col = self.value(a).data();
        let n = col.len();
        let mut out = Vec::with_capacity(n * m);
        for &v in col {
            out.extend(std::iter::repeat_n(v, m));
        }
        self.unary(a, Op::BroadcastCols(a), Tensor::from_parts(vec![n, m], out))
    }

    /// Adds a row vector `b` ([m]) to every row of `x` ([n, m]).
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let n = self.shape(x)[0];
        let bb = self.broadcast_rows(b, n);
        self.add(x, bb)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        assert_eq!(self.shape(a).len(), 2, "log_softmax_rows needs [n, m]");
        let v = kernels::log_softmax_rows(self.value(a));
        self.unary(a, Op::LogSoftmaxRows(a), v)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self
            .value(a)
            .clone()
            .reshape(shape)
            .expect("reshape must preserve element count");
        self.unary(a, Op::Reshape(a), v)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, pad: usize) -> NodeId {
        let v = kernels::conv2d(self.value(x), self.value(w), pad);
        self.binary(x, w, Op::Conv2d { x, w, pad }, v)
    }

    fn conv_input_grad(&mut self, gy: NodeId, w: NodeId, pad: usize, h: usize, wd: usize) -> NodeId {
        let v = kernels::conv_input_grad(self.value(gy), self.value(w), pad, h, wd);
        self.binary(gy, w, Op::ConvInputGrad { gy, w, pad }, v)
    }

    fn conv_weight_grad(&mut self, x: NodeId, gy: NodeId, pad: usize, kh: usize, kw: usize) -> NodeId {
        let v = kernels::conv_weight_grad(self.value(x), self.value(gy), pad, kh, kw);
        self.binary(x, gy, Op::ConvWeightGrad { x, gy, pad }, v)
    }

    pub fn avg_pool(&mut self, a: NodeId, k: usize) -> NodeId {
        let v = kernels::avg_pool(self.value(a), k);
        self.unary(a, Op::AvgPool(a, k), v)
    }

    fn avg_unpool(&mut self, a: NodeId, k: usize) -> NodeId {
        let v = kernels::avg_unpool(self.value(a), k);
        self.unary(a, Op::AvgUnpool(a, k), v)
    }

    /// Adds a per-channel bias `b` ([c]) to an NCHW tensor.
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let bb = self.broadcast_channels(b, &shape);
        self.add(x, bb)
    }

    fn sum_channels(&mut self, a: NodeId) -> NodeId {
        let v = kernels::sum_channels(self.value(a));
        self.unary(a, Op::SumChannels(a), v)
    }

    fn broadcast_channels(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = kernels::broadcast_channels(self.value(a), shape);
        self.unary(a, Op::BroadcastChannels(a), v)
    }

    /// Inner product of two same-shaped nodes, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    /// Gradients of the scalar `output` with respect to `wrt`.
    ///
    /// The backward pass is appended to this graph, so the returned nodes are
    /// differentiable again. Inputs that `output` does not depend on get a
    /// zero constant.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if self.value(output).len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "grad of non-scalar output".into(),
                expected: vec![],
                got: self.shape(output).to_vec(),
            });
        }
        let end = output.0 + 1;
        let mut grads: Vec<Option<NodeId>> = vec![None; end];
        let seed_shape = self.shape(output).to_vec();
        grads[output.0] = Some(self.constant(Tensor::full(&seed_shape, 1.0)));

        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, pg) in self.backward_rule(NodeId(i), &op, g) {
                grads[parent.0] = Some(match grads[parent.0] {
                    None => pg,
                    Some(prev) => self.add(prev, pg),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect())
    }

    fn backward_rule(&mut self, out: NodeId, op: &Op, g: NodeId) -> Vec<(NodeId, NodeId)> {
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires_grad(a) {
                    res.push((a, g));
                }
                if self.requires_grad(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(a) {
                    res.push((a, g));
                }
                if self.requires_grad(b) {
                    let ng = self.neg(g);
                    res.push((b, ng));
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let ga = self.mul(g, b);
                    res.push((a, ga));
                }
                if self.requires_grad(b) {
                    let gb = self.mul(g, a);
                    res.push((b, gb));
                }
            }
            Op::Neg(a) => {
                let ga = self.neg(g);
                res.push((a, ga));
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, c);
                res.push((a, ga));
            }
            Op::AddScalar(a) => res.push((a, g)),
            Op::SumAll(a) => {
                let shape = self.shape(a).to_vec();
                let ga = self.broadcast_scalar(g, &shape);
                res.push((a, ga));
            }
            Op::BroadcastScalar(a) => {
                let s = self.sum_all(g);
                let shape = self.shape(a).to_vec();
                let ga = self.reshape(s, &shape);
                res.push((a, ga));
            }
            Op::Recip(a) => {
                // d(1/x) = -y² dx
                let y2 = self.mul(out, out);
                let ny2 = self.neg(y2);
                let ga = self.mul(g, ny2);
                res.push((a, ga));
            }
            Op::Sqrt(a) => {
                let inv = self.recip(out);
                let half = self.scale(inv, 0.5);
                let ga = self.mul(g, half);
                res.push((a, ga));
            }
            Op::Exp(a) => {
                let ga = self.mul(g, out);
                res.push((a, ga));
            }
            Op::Relu(a) => {
                let mask = map(self.value(out), |y| if y > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                let ga = self.mul(g, m);
                res.push((a, ga));
            }
            Op::Tanh(a) => {
                let y2 = self.mul(out, out);
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, 1.0);
                let ga = self.mul(g, d);
                res.push((a, ga));
            }
            Op::MatMul { a, b, ta, tb } => {
                if self.requires_grad(a) {
                    let ga = match (ta, tb) {
                        (false, false) => self.matmul_t(g, b, false, true),
                        (false, true) => self.matmul_t(g, b, false, false),
                        (true, false) => self.matmul_t(b, g, false, true),
                        (true, true) => self.matmul_t(b, g, true, true),
                    };
                    res.push((a, ga));
                }
                if self.requires_grad(b) {
                    let gb = match (ta, tb) {
                        (false, false) => self.matmul_t(a, g, true, false),
                        (false, true) => self.matmul_t(g, a, true, false),
                        (true, false) => self.matmul_t(a, g, false, false),
                        (true, true) => self.matmul_t(g, a, true, true),
                    };
                    res.push((b, gb));
                }
            }
            Op::SumRows(a) => {
                let n = self.shape(a)[0];
                let ga = self.broadcast_rows(g, n);
                res.push((a, ga));
            }
            Op::BroadcastRows(a) => {
                let ga = self.sum_rows(g);
                res.push((a, ga));
            }
            Op::SumCols(a) => {
                let m = self.shape(a)[1];
                let ga = self.broadcast_cols(g, m);
                res.push((a, ga));
            }
            Op::BroadcastCols(a) => {
                let ga = self.sum_cols(g);
                res.push((a, ga));
            }
            Op::LogSoftmaxRows(a) => {
                // dz = g - softmax(z) * rowsum(g), softmax(z) = exp(y)
                let m = self.shape(a)[1];
                let sm = self.exp(out);
                let rs = self.sum_cols(g);
                let rsb = self.broadcast_cols(rs, m);
                let p = self.mul(sm, rsb);
                let ga = self.sub(g, p);
                res.push((a, ga));
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                let ga = self.reshape(g, &shape);
                res.push((a, ga));
            }
            Op::Conv2d { x, w, pad } => {
                if self.requires_grad(x) {
                    let (h, wd) = (self.shape(x)[2], self.shape(x)[3]);
                    let gx = self.conv_input_grad(g, w, pad, h, wd);
                    res.push((x, gx));
                }
                if self.requires_grad(w) {
                    let (kh, kw) = (self.shape(w)[2], self.shape(w)[3]);
                    let gw = self.conv_weight_grad(x, g, pad, kh, kw);
                    res.push((w, gw));
                }
            }
            Op::ConvInputGrad { gy, w, pad } => {
                if self.requires_grad(gy) {
                    let ggy = self.conv2d(g, w, pad);
                    res.push((gy, ggy));
                }
                if self.requires_grad(w) {
                    let (kh, kw) = (self.shape(w)[2], self.shape(w)[3]);
                    let gw = self.conv_weight_grad(g, gy, pad, kh, kw);
                    res.push((w, gw));
                }
            }
            Op::ConvWeightGrad { x, gy, pad } => {
                if self.requires_grad(x) {
                    let (h, wd) = (self.shape(x)[2], self.shape(x)[3]);
                    let gx = self.conv_input_grad(gy, g, pad, h, wd);
                    res.push((x, gx));
                }
                if self.requires_grad(gy) {
                    let ggy = self.conv2d(x, g, pad);
                    res.push((gy, ggy));
                }
            }
            Op::AvgPool(a, k) => {
                let ga = self.avg_unpool(g, k);
                res.push((a, ga));
            }
            Op::AvgUnpool(a, k) => {
                let ga = self.avg_pool(g, k);
                res.push((a, ga));
            }
            Op::SumChannels(a) => {
                let shape = self.shape(a).to_vec();
                let ga = self.broadcast_channels(g, &shape);
                res.push((a, ga));
            }
            Op::BroadcastChannels(a) => {
                let ga = self.sum_channels(g);
                res.push((a, ga));
            }
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den.max(1e-12)
    }

    /// Checks first-order gradients of `build` (input node -> scalar node) against finite differences.
    fn check_first_order(shape: &[usize], seed: u64, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let x0 = lcg(seed, shape.iter().product());
        let mut g = Graph::new();
        let x = g.param(t(shape, &x0));
        let y = build(&mut g, x);
        let gx = g.grad(y, &[x]).unwrap()[0];
        let analytic = g.value(gx).data().to_vec();
        let numeric = finite_diff(
            |v: &[f64]| {
                let mut g = Graph::new();
                let x = g.param(t(shape, v));
                let y = build(&mut g, x);
                g.value(y).item()
            },
            &x0,
            1e-6,
        );
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-5, "first-order rel err {e}");
    }

    /// Checks the gradient of `sum(grad(build)(x) * v)` with respect to x.
    fn check_second_order(shape: &[usize], seed: u64, build: impl Fn(&mut Graph, NodeId) -> NodeId) {
        let n: usize = shape.iter().product();
        let x0 = lcg(seed, n);
        let probe = lcg(seed + 99, n);
        let hvp = |g: &mut Graph, x: NodeId| {
            let y = build(g, x);
            let gx = g.grad(y, &[x]).unwrap()[0];
            let v = g.constant(t(shape, &probe));
            g.dot(gx, v)
        };
        let mut g = Graph::new();
        let x = g.param(t(shape, &x0));
        let s = hvp(&mut g, x);
        let gx = g.grad(s, &[x]).unwrap()[0];
        let analytic = g.value(gx).data().to_vec();
        let numeric = finite_diff(
            |v: &[f64]| {
                let mut g = Graph::new();
                let x = g.param(t(shape, v));
                let s = hvp(&mut g, x);
                g.value(s).item()
            },
            &x0,
            1e-5,
        );
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "second-order rel err {e}");
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let gx = g.grad(y, &[x]).unwrap()[0];
        assert_eq!(g.value(gx).item(), 6.0);
        let ggx = g.grad(gx, &[x]).unwrap()[0];
        assert_eq!(g.value(ggx).item(), 2.0);
    }

    #[test]
    fn unrelated_input_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let z = g.param(Tensor::vector(vec![5.0]));
        let y = g.sum_all(x);
        let gz = g.grad(y, &[z]).unwrap()[0];
        assert_eq!(g.value(gz).data(), &[0.0]);
    }

    #[test]
    fn grad_of_non_scalar_is_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.grad(x, &[x]).is_err());
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        check_first_order(&[6], 1, |g, x| {
            let e = g.exp(x);
            let th = g.tanh(x);
            let m = g.mul(e, th);
            let sq = g.mul(x, x);
            let s1 = g.add_scalar(sq, 1.0);
            let r = g.sqrt(s1);
            let inv = g.recip(r);
            let p = g.sub(m, inv);
            let q = g.scale(p, 0.7);
            let n = g.neg(q);
            g.sum_all(n)
        });
        check_second_order(&[6], 2, |g, x| {
            let e = g.exp(x);
            let th = g.tanh(x);
            let m = g.mul(e, th);
            let sq = g.mul(x, x);
            let s1 = g.add_scalar(sq, 1.0);
            let r = g.sqrt(s1);
            let inv = g.recip(r);
            let p = g.add(m, inv);
            g.sum_all(p)
        });
    }

    #[test]
    fn matmul_variants_match_finite_differences() {
        for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
            let bshape = if tb { [4, 3] } else { [3, 4] };
            let b = t(&bshape, &lcg(7, 12));
            let build = move |g: &mut Graph, x: NodeId| {
                let bn = g.param(b.clone());
                let p = g.matmul_t(x, bn, ta, tb);
                let th = g.tanh(p);
                let sq = g.mul(th, p);
                g.sum_all(sq)
            };
            let xshape = if ta { [3, 2] } else { [2, 3] };
            check_first_order(&xshape, 3, build.clone());
            check_second_order(&xshape, 4, build);
        }
    }

    #[test]
    fn row_and_column_reductions_match_finite_differences() {
        let build = |g: &mut Graph, x: NodeId| {
            let ls = g.log_softmax_rows(x);
            let sr = g.sum_rows(ls);
            let br = g.broadcast_rows(sr, 3);
            let sc = g.sum_cols(x);
            let bc = g.broadcast_cols(sc, 4);
            let p = g.mul(br, bc);
            let th = g.tanh(p);
            let s = g.sum_all(th);
            let bs = g.broadcast_scalar(s, &[2]);
            let v = g.mul(bs, bs);
            g.sum_all(v)
        };
        check_first_order(&[3, 4], 5, build);
        check_second_order(&[3, 4], 6, build);
    }

    #[test]
    fn conv_and_pool_match_finite_differences() {
        let w = t(&[2, 2, 3, 3], &lcg(11, 36));
        let bias = t(&[2], &[0.1, -0.2]);
        let build = move |g: &mut Graph, x: NodeId| {
            let wn = g.param(w.clone());
            let bn = g.param(bias.clone());
            let c = g.conv2d(x, wn, 1);
            let cb = g.add_channel_bias(c, bn);
            let a = g.tanh(cb);
            let p = g.avg_pool(a, 2);
            let q = g.mul(p, p);
            g.sum_all(q)
        };
        check_first_order(&[2, 2, 4, 4], 12, build.clone());
        check_second_order(&[2, 2, 4, 4], 13, build);
    }

    #[test]
    fn conv_second_order_through_weight_gradient() {
        // The matching loss differentiates a weight gradient w.r.t. the input image.
        let w0 = lcg(21, 2 * 1 * 3 * 3);
        let probe = lcg(22, 18);
        let x0 = lcg(23, 36);
        let f = |xv: &[f64]| {
            let mut g = Graph::new();
            let x = g.param(t(&[1, 1, 6, 6], xv));
            let w = g.param(t(&[2, 1, 3, 3], &w0));
            let c = g.conv2d(x, w, 0);
            let a = g.tanh(c);
            let p = g.avg_pool(a, 2);
            let s = g.mul(p, p);
            let l = g.sum_all(s);
            let gw = g.grad(l, &[w]).unwrap()[0];
            let v = g.constant(t(&[2, 1, 3, 3], &probe));
            let d = g.dot(gw, v);
            (g, x, d)
        };
        let (mut g, x, d) = f(&x0);
        let gx = g.grad(d, &[x]).unwrap()[0];
        let analytic = g.value(gx).data().to_vec();
        let numeric = finite_diff(
            |v: &[f64]| {
                let (g, _, d) = f(v);
                g.value(d).item()
            },
            &x0,
            1e-5,
        );
        assert!(rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn relu_has_no_second_order_term() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 2.0, 3.0]));
        let r = g.relu(x);
        let s = g.sum_all(r);
        let gx = g.grad(s, &[x]).unwrap()[0];
        assert_eq!(g.value(gx).data(), &[0.0, 1.0, 1.0]);
        let t2 = g.sum_all(gx);
        let ggx = g.grad(t2, &[x]).unwrap()[0];
        assert_eq!(g.value(ggx).data(), &[0.0, 0.0, 0.0]);
    }
}
