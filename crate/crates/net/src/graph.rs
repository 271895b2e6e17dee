//! Reverse-mode automatic differentiation over small dense f64 tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the backward pass is a reverse sweep. Nodes that do
//! not depend on any gradient-carrying leaf are skipped.

use crate::kernels::{self, ConvGeom};
use crate::loss;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-d tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(
            self.shape.len(),
            2,
            "expected 2-d tensor, got {:?}",
            self.shape
        );
        (self.shape[0], self.shape[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    /// `a[n,d] * v[1,d]` broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    ClampMin(Var, f64),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    /// `x[n,in] * w[in,out] + b[out]`
    Linear(Var, Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanRows(Var),
    /// `a[1,k] / s[1,1]`
    DivScalar(Var, Var),
    MaxElem(Var, usize),
    Sum(Var),
    /// Fused loss whose gradient w.r.t. its single input was computed in
    /// the forward pass.
    Fused(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.data.iter().all(|x| !x.is_nan()),
            "NaN produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (e.g. an image to perturb).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable leaf tagged with its parameter index.
    pub fn param(&mut self, t: Tensor, index: usize, trainable: bool) -> Var {
        let v = self.push(t, Op::Leaf, trainable);
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape.clone(), data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (n, d) = self.value(a).dims2();
        assert_eq!(self.value(row).len(), d, "mul_row width mismatch");
        let x = &self.value(a).data;
        let r = &self.value(row).data;
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(x[i * d..(i + 1) * d].iter().zip(r).map(|(p, q)| p * q));
        }
        let rg = self.rg(&[a, row]);
        self.push(Tensor::new(vec![n, d], data), Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v * s).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v + c).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::AddConst(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.max(0.0)).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape.clone(),
            x.data.iter().map(|&v| sigmoid(v)).collect(),
        );
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(
            x.shape.clone(),
            x.data.iter().map(|v| v.max(floor)).collect(),
        );
        let rg = self.rg(&[a]);
        self.push(t, Op::ClampMin(a, floor), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; n * m];
        kernels::gemm_nn(&self.value(a).data, &self.value(b).data, &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![n, m], out), Op::MatMul(a, b), rg)
    }

    /// `a[n,k] * b[m,k]^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = self.value(a).dims2();
        let (m, k2) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul_nt inner dims");
        let mut out = vec![0.0; n * m];
        kernels::gemm_nt(&self.value(a).data, &self.value(b).data, &mut out, n, k, m);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![n, m], out), Op::MatMulNT(a, b), rg)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, k) = self.value(x).dims2();
        let (k2, m) = self.value(w).dims2();
        assert_eq!(k, k2, "linear input width");
        assert_eq!(self.value(b).len(), m, "linear bias width");
        let bias = &self.value(b).data;
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        kernels::gemm_nn(&self.value(x).data, &self.value(w).data, &mut out, n, k, m);
        let rg = self.rg(&[x, w, b]);
        self.push(Tensor::new(vec![n, m], out), Op::Linear(x, w, b), rg)
    }

    /// `x[c,h,w]`, `w[o, c*k*k]`, `b[o]` -> `[o, oh, ow]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, k: usize, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be [c,h,w]");
        let geom = ConvGeom {
            c_in: xs[0],
            h: xs[1],
            w: xs[2],
            k,
            stride,
            pad,
        };
        let (o, ck) = self.value(w).dims2();
        assert_eq!(ck, geom.col_rows(), "conv2d weight shape");
        let (oh, ow) = geom.out_hw();
        let cols = kernels::im2col(&self.value(x).data, &geom);
        let bias = &self.value(b).data;
        let mut out = Vec::with_capacity(o * oh * ow);
        for &bv in bias.iter().take(o) {
            out.extend(std::iter::repeat_n(bv, oh * ow));
        }
        kernels::gemm_nn(&self.value(w).data, &cols, &mut out, o, ck, oh * ow);
        let rg = self.rg(&[x, w, b]);
        // Columns are only needed to form the weight gradient.
        let keep = if self.requires_grad(w) {
            cols
        } else {
            Vec::new()
        };
        self.push(
            Tensor::new(vec![o, oh, ow], out),
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols: keep,
            },
            rg,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let x = &self.value(a).data;
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = x[i * m + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![m, n], data), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = Tensor::new(shape, self.value(a).data.clone());
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let d = self.value(parts[0]).dims2().1;
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            assert_eq!(c, d, "concat_rows width mismatch");
            data.extend_from_slice(&self.value(p).data);
            n += r;
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::new(vec![n, d], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (n, d) = self.value(a).dims2();
        assert!(start < end && end <= n, "slice_rows {start}..{end} of {n}");
        let data = self.value(a).data[start * d..end * d].to_vec();
        let rg = self.rg(&[a]);
        self.push(
            Tensor::new(vec![end - start, d], data),
            Op::SliceRows(a, start),
            rg,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let x = &self.value(a).data;
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            softmax_into(&x[i * m..(i + 1) * m], &mut data[i * m..(i + 1) * m]);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![n, m], data), Op::SoftmaxRows(a), rg)
    }

    /// Normalizes each row to zero mean / unit variance, then applies
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (n, d) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + EPS).sqrt();
            rstd[i] = r;
            for j in 0..d {
                let xh = (row[j] - mean) * r;
                xhat[i * d + j] = xh;
                out[i * d + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            Tensor::new(vec![n, d], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Column means of `[n,d]` -> `[1,d]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, d) = self.value(a).dims2();
        let x = &self.value(a).data;
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::new(vec![1, d], out), Op::MeanRows(a), rg)
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "divisor must be a scalar");
        let sv = self.value(s).data[0];
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v / sv).collect());
        let rg = self.rg(&[a, s]);
        self.push(t, Op::DivScalar(a, s), rg)
    }

    /// Largest element as a `[1,1]` scalar; the gradient flows to the first
    /// maximal element.
    pub fn max_elem(&mut self, a: Var) -> Var {
        let x = &self.value(a).data;
        let mut best = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[best] {
                best = i;
            }
        }
        let t = Tensor::scalar(x[best]);
        let rg = self.rg(&[a]);
        self.push(t, Op::MaxElem(a, best), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Softmax cross-entropy of a `[1,k]` logit row against `class`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Var {
        let (value, grad) = loss::cross_entropy(&self.value(logits).data, class);
        let rg = self.rg(&[logits]);
        self.push(Tensor::scalar(value), Op::Fused(logits, grad), rg)
    }

    /// Binary cross-entropy on a `[1,1]` logit.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Var {
        let (value, grad) = loss::bce_with_logits(self.value(logit).data[0], label);
        let rg = self.rg(&[logit]);
        self.push(Tensor::scalar(value), Op::Fused(logit, vec![grad]), rg)
    }

    /// `w_giou * (1 - giou) + w_l1 * mean|pred - gt|` for corner boxes.
    pub fn box_loss(&mut self, pred_xyxy: Var, gt_xyxy: [f64; 4], w_giou: f64, w_l1: f64) -> Var {
        let p = &self.value(pred_xyxy).data;
        assert_eq!(p.len(), 4, "box_loss expects 4 coordinates");
        let p = [p[0], p[1], p[2], p[3]];
        let (value, grad) = loss::box_loss(p, gt_xyxy, w_giou, w_l1);
        let rg = self.rg(&[pred_xyxy]);
        self.push(
            Tensor::scalar(value),
            Op::Fused(pred_xyxy, grad.to_vec()),
            rg,
        )
    }

    /// Gradient of `root` w.r.t. `v` after [`Graph::backward`], if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients as `(param index, gradient)` pairs.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            let p = n.param?;
            self.grads.get(i)?.as_deref().map(|g| (p, g))
        })
    }

    /// Backpropagates from the scalar `root`.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return;
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout);
            self.grads[i] = Some(gout);
        }
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn backprop_node(&mut self, i: usize, gout: &[f64]) {
        // Temporarily take the op so we can borrow other nodes mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(*a, |g| add_into(g, gout));
                self.acc(*b, |g| add_into(g, gout));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (
                    self.nodes[a.0].value.data.clone(),
                    self.nodes[b.0].value.data.clone(),
                );
                self.acc(*a, |g| {
                    for ((gi, go), y) in g.iter_mut().zip(gout).zip(&bv) {
                        *gi += go * y;
                    }
                });
                self.acc(*b, |g| {
                    for ((gi, go), x) in g.iter_mut().zip(gout).zip(&av) {
                        *gi += go * x;
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (n, d) = self.nodes[a.0].value.dims2();
                let av = self.nodes[a.0].value.data.clone();
                let rv = self.nodes[r.0].value.data.clone();
                self.acc(*a, |g| {
                    for row in 0..n {
                        for j in 0..d {
                            g[row * d + j] += gout[row * d + j] * rv[j];
                        }
                    }
                });
                self.acc(*r, |g| {
                    for row in 0..n {
                        for j in 0..d {
                            g[j] += gout[row * d + j] * av[row * d + j];
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(*a, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += s * go;
                    }
                });
            }
            Op::AddConst(a) | Op::Reshape(a) => self.acc(*a, |g| add_into(g, gout)),
            Op::Relu(a) => {
                let y = &self.nodes[i].value.data;
                let mask: Vec<f64> = y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                self.acc(*a, |g| {
                    for ((gi, go), m) in g.iter_mut().zip(gout).zip(&mask) {
                        *gi += go * m;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data.clone();
                self.acc(*a, |g| {
                    for ((gi, go), s) in g.iter_mut().zip(gout).zip(&y) {
                        *gi += go * s * (1.0 - s);
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let x = self.nodes[a.0].value.data.clone();
                let floor = *floor;
                self.acc(*a, |g| {
                    for ((gi, go), xv) in g.iter_mut().zip(gout).zip(&x) {
                        if *xv > floor {
                            *gi += go;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.nodes[a.0].value.dims2();
                let m = self.nodes[b.0].value.dims2().1;
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].value.data.clone();
                    self.acc(*a, |g| kernels::gemm_nt(gout, &bv, g, n, m, k));
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].value.data.clone();
                    self.acc(*b, |g| kernels::gemm_tn(&av, gout, g, n, k, m));
                }
            }
            Op::MatMulNT(a, b) => {
                // out[n,m] = a[n,k] b[m,k]^T
                let (n, k) = self.nodes[a.0].value.dims2();
                let m = self.nodes[b.0].value.dims2().0;
                if self.nodes[a.0].requires_grad {
                    let bv = self.nodes[b.0].value.data.clone();
                    self.acc(*a, |g| kernels::gemm_nn(gout, &bv, g, n, m, k));
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.nodes[a.0].value.data.clone();
                    self.acc(*b, |g| kernels::gemm_tn(gout, &av, g, n, m, k));
                }
            }
            Op::Linear(x, w, b) => {
                let (n, k) = self.nodes[x.0].value.dims2();
                let m = self.nodes[w.0].value.dims2().1;
                if self.nodes[x.0].requires_grad {
                    let wv = self.nodes[w.0].value.data.clone();
                    self.acc(*x, |g| kernels::gemm_nt(gout, &wv, g, n, m, k));
                }
                if self.nodes[w.0].requires_grad {
                    let xv = self.nodes[x.0].value.data.clone();
                    self.acc(*w, |g| kernels::gemm_tn(&xv, gout, g, n, k, m));
                }
                self.acc(*b, |g| {
                    for row in 0..n {
                        add_into(g, &gout[row * m..(row + 1) * m]);
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (o, ck) = self.nodes[w.0].value.dims2();
                let (oh, ow) = geom.out_hw();
                let hw = oh * ow;
                if self.nodes[w.0].requires_grad {
                    self.acc(*w, |g| kernels::gemm_nt(gout, cols, g, o, hw, ck));
                }
                self.acc(*b, |g| {
                    for (c, gi) in g.iter_mut().enumerate().take(o) {
                        *gi += gout[c * hw..(c + 1) * hw].iter().sum::<f64>();
                    }
                });
                if self.nodes[x.0].requires_grad {
                    let wv = self.nodes[w.0].value.data.clone();
                    let mut dcols = vec![0.0; ck * hw];
                    kernels::gemm_tn(&wv, gout, &mut dcols, o, ck, hw);
                    let geom = *geom;
                    self.acc(*x, |g| kernels::col2im(&dcols, &geom, g));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = self.nodes[a.0].value.dims2();
                self.acc(*a, |g| {
                    for r in 0..n {
                        for c in 0..m {
                            g[r * m + c] += gout[c * n + r];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = &gout[off..off + len];
                    self.acc(*p, |g| add_into(g, slice));
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let d = self.nodes[a.0].value.dims2().1;
                let off = start * d;
                self.acc(*a, |g| add_into(&mut g[off..off + gout.len()], gout));
            }
            Op::SoftmaxRows(a) => {
                let (n, m) = self.nodes[i].value.dims2();
                let y = self.nodes[i].value.data.clone();
                self.acc(*a, |g| {
                    for r in 0..n {
                        let yr = &y[r * m..(r + 1) * m];
                        let gr = &gout[r * m..(r + 1) * m];
                        let dotv = kernels::dot(yr, gr);
                        for j in 0..m {
                            g[r * m + j] += yr[j] * (gr[j] - dotv);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, d) = self.nodes[x.0].value.dims2();
                let gv = self.nodes[gamma.0].value.data.clone();
                self.acc(*gamma, |g| {
                    for r in 0..n {
                        for j in 0..d {
                            g[j] += gout[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.acc(*beta, |g| {
                    for r in 0..n {
                        add_into(g, &gout[r * d..(r + 1) * d]);
                    }
                });
                self.acc(*x, |g| {
                    for r in 0..n {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = (0..d).map(|j| gout[r * d + j] * gv[j]).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dxh_xh = kernels::dot(&dxh, xh) / d as f64;
                        for j in 0..d {
                            g[r * d + j] += rstd[r] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let (n, d) = self.nodes[a.0].value.dims2();
                let inv = 1.0 / n as f64;
                self.acc(*a, |g| {
                    for r in 0..n {
                        for j in 0..d {
                            g[r * d + j] += gout[j] * inv;
                        }
                    }
                });
            }
            Op::DivScalar(a, s) => {
                let sv = self.nodes[s.0].value.data[0];
                let av = self.nodes[a.0].value.data.clone();
                self.acc(*a, |g| {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += go / sv;
                    }
                });
                let ds: f64 = av.iter().zip(gout).map(|(x, go)| -go * x / (sv * sv)).sum();
                self.acc(*s, |g| g[0] += ds);
            }
            Op::MaxElem(a, idx) => {
                let idx = *idx;
                self.acc(*a, |g| g[idx] += gout[0]);
            }
            Op::Sum(a) => {
                let go = gout[0];
                self.acc(*a, |g| g.iter_mut().for_each(|v| *v += go));
            }
            Op::Fused(a, local) => {
                let go = gout[0];
                self.acc(*a, |g| {
                    for (gi, l) in g.iter_mut().zip(local) {
                        *gi += go * l;
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(g: &mut [f64], src: &[f64]) {
    for (a, b) in g.iter_mut().zip(src) {
        *a += b;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}
