//! Reverse-mode differentiable compute graph.
//!
//! A [`Graph`] records every value produced by a fixed set of primitives:
//! matmul, add (with row broadcast), scale, row-softmax, log, exp, row
//! L2-normalisation, transpose, concat, 2D convolution, pointwise
//! nonlinearities, mean and cross-entropy with index targets. Everything else
//! in the crate is composed from these, so [`crate::gradcheck`] can cover the
//! whole model by checking each primitive.
//!
//! ```
//! use stexp_core::{Graph, ParamSet, Tensor};
//!
//! let mut params = ParamSet::<f64>::new();
//! params.insert("x", Tensor::new(&[1, 1], vec![3.0]).unwrap()).unwrap();
//! let (value, grads) = stexp_core::graph::evaluate_with_gradients(&params, |g, p| {
//!     let x = g.param(p, "x")?;
//!     let xt = g.transpose(x)?;
//!     g.matmul(x, xt)
//! })
//! .unwrap();
//! assert_eq!(value.data(), &[9.0]);
//! assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamSet;
use crate::tensor::{matmul_at_into, matmul_bt_into, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Tanh,
    Square,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    RowSoftmax(Var),
    Log(Var),
    Exp(Var),
    L2NormRows(Var, T),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Act(Var, Activation),
    Mean(Var, usize),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never differentiated.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Binds parameter `name` from `params`. Frozen parameters behave as
    /// constants.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let p = params
            .param(name)
            .ok_or_else(|| Error::UnknownParam(name.into()))?;
        Ok(self.push(p.value.clone(), Op::Param(name.into()), !p.frozen))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b)).map_err(|_| {
            Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            )
        })?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum. `b` may also be a row vector (`[n]` or `[1×n]`)
    /// broadcast over the rows of a `[m×n]` matrix `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(va.shape(), data)?
        } else if is_row_broadcast(va.shape(), vb.shape()) {
            let n = vb.numel();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + vb.data()[i % n])
                .collect();
            Tensor::new(va.shape(), data)?
        } else {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// Multiplies every entry of `a` by the single entry of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape(
                "scale_by",
                format!("scalar factor expected, got {:?}", self.shape(s)),
            ));
        }
        let c = self.value(s).data()[0];
        let value = self.value(a).map(|x| x * c);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(value, Op::ScaleBy(a, s), ng))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self
            .value(a)
            .dims2()
            .map_err(|_| Error::shape("row_softmax", format!("{:?}", self.shape(a))))?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            softmax_row(&src[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[r, c], out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::RowSoftmax(a), ng))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.ln());
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.exp());
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    /// Divides every row by `‖row‖₂ + eps`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va
            .dims2()
            .map_err(|_| Error::shape("l2_normalize_rows", format!("{:?}", va.shape())))?;
        let norms = va.row_norms()?;
        let mut out = va.data().to_vec();
        for i in 0..r {
            let d = norms[i] + eps;
            for x in &mut out[i * c..(i + 1) * c] {
                *x = *x / d;
            }
        }
        let value = Tensor::new(&[r, c], out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::L2NormRows(a, eps), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self
            .value(a)
            .transpose2()
            .map_err(|_| Error::shape("transpose", format!("{:?}", self.shape(a))))?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// 2D cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, KH, KW]`,
    /// zero padding `pad` and stride `stride`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), stride, pad)?;
        let mut out = vec![T::zero(); geo.out_len()];
        conv_forward(&geo, self.value(x).data(), self.value(w).data(), &mut out);
        let value = Tensor::new(&[geo.b, geo.co, geo.ho, geo.wo], out)?;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::Conv2d { x, w, stride, pad }, ng))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let value = self.value(a).map(|x| activate(act, x));
        let ng = self.ng(a);
        self.push(value, Op::Act(a, act), ng)
    }

    /// Smallest `|x|` fed into any ReLU node; `None` when there is none.
    /// Finite differences are only meaningful when this exceeds the step.
    pub fn relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Act(a, Activation::Relu) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|x| x.abs()))
            .reduce(|m, x| if x < m { x } else { m })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    /// Mean over all axes from `keep` onwards. `keep = 0` reduces to a
    /// `[1]` scalar; e.g. `keep = 2` on `[B, C, H, W]` is a global average
    /// pool to `[B, C]`.
    pub fn mean_from(&mut self, a: Var, keep: usize) -> Result<Var> {
        let s = self.shape(a);
        if keep >= s.len() {
            return Err(Error::shape("mean", format!("keep {keep} for {s:?}")));
        }
        let outer: usize = s[..keep].iter().product();
        let inner: usize = s[keep..].iter().product();
        let inv = T::one() / T::from_f64(inner as f64);
        let src = self.value(a).data();
        let out: Vec<T> = (0..outer)
            .map(|o| {
                src[o * inner..(o + 1) * inner]
                    .iter()
                    .fold(T::zero(), |acc, &x| acc + x)
                    * inv
            })
            .collect();
        let shape = if keep == 0 {
            vec![1]
        } else {
            s[..keep].to_vec()
        };
        let value = Tensor::new(&shape, out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Mean(a, keep), ng))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.mean_from(a, 0)
    }

    /// Mean over rows of `−log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self
            .value(logits)
            .dims2()
            .map_err(|_| Error::shape("cross_entropy", format!("{:?}", self.shape(logits))))?;
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {r}x{c} logits", targets.len()),
            ));
        }
        let src = self.value(logits).data();
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            total = total + log_sum_exp(row) - row[t];
        }
        let value = Tensor::scalar(total / T::from_f64(r as f64));
        let ng = self.ng(logits);
        Ok(self.push(value, Op::CrossEntropy(logits, targets.to_vec()), ng))
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("checked in forward");
                let n = self.value(*b).shape()[1];
                if self.ng(*a) {
                    let ga = slot(grads, *a, m * k);
                    matmul_bt_into(g, self.value(*b).data(), ga, m, n, k);
                }
                if self.ng(*b) {
                    let gb = slot(grads, *b, k * n);
                    matmul_at_into(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(slot(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let n = self.value(*b).numel();
                    let gb = slot(grads, *b, n);
                    for (i, &x) in g.iter().enumerate() {
                        gb[i % n] = gb[i % n] + x;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                for (d, &x) in ga.iter_mut().zip(g) {
                    *d = *d + x * *c;
                }
            }
            Op::ScaleBy(a, s) => {
                let c = self.value(*s).data()[0];
                if self.ng(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (d, &x) in ga.iter_mut().zip(g) {
                        *d = *d + x * c;
                    }
                }
                if self.ng(*s) {
                    let dot = g
                        .iter()
                        .zip(self.value(*a).data())
                        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                    let gs = slot(grads, *s, 1);
                    gs[0] = gs[0] + dot;
                }
            }
            Op::RowSoftmax(a) => {
                let c = node.value.shape()[1];
                let ga = slot(grads, *a, g.len());
                for (yr, (gr, dr)) in out.chunks(c).zip(g.chunks(c).zip(ga.chunks_mut(c))) {
                    let dot = yr
                        .iter()
                        .zip(gr)
                        .fold(T::zero(), |acc, (&y, &x)| acc + y * x);
                    for ((d, &y), &x) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = *d + y * (x - dot);
                    }
                }
            }
            Op::Log(a) => {
                let src = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &gi) in ga.iter_mut().zip(src).zip(g) {
                    *d = *d + gi / x;
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &y), &gi) in ga.iter_mut().zip(out).zip(g) {
                    *d = *d + gi * y;
                }
            }
            Op::L2NormRows(a, eps) => {
                let va = self.value(*a);
                let c = va.shape()[1];
                let norms = va.row_norms().expect("checked in forward");
                let ga = slot(grads, *a, g.len());
                for (i, n) in norms.into_iter().enumerate() {
                    let x = &va.data()[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let d = n + *eps;
                    let gx = gr
                        .iter()
                        .zip(x)
                        .fold(T::zero(), |acc, (&u, &v)| acc + u * v);
                    let coef = if n > T::zero() {
                        gx / (d * d * n)
                    } else {
                        T::zero()
                    };
                    for ((o, &u), &v) in ga[i * c..(i + 1) * c].iter_mut().zip(gr).zip(x) {
                        *o = *o + u / d - v * coef;
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2().expect("rank 2");
                let ga = slot(grads, *a, g.len());
                // out is [r × c], input is [c × r]
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = ga[j * r + i] + g[i * c + j];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    if self.ng(p) {
                        let gp = slot(grads, p, outer * chunk);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            accumulate(&mut gp[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Conv2d { x, w, stride, pad } => {
                let geo = ConvGeometry::new(self.shape(*x), self.shape(*w), *stride, *pad)
                    .expect("checked in forward");
                if self.ng(*x) {
                    let n = self.value(*x).numel();
                    let gx = slot(grads, *x, n);
                    conv_backward_input(&geo, g, self.value(*w).data(), gx);
                }
                if self.ng(*w) {
                    let n = self.value(*w).numel();
                    let gw = slot(grads, *w, n);
                    conv_backward_weight(&geo, g, self.value(*x).data(), gw);
                }
            }
            Op::Act(a, act) => {
                let src = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((d, &x), &gi) in ga.iter_mut().zip(src).zip(g) {
                    *d = *d + gi * activate_grad(*act, x);
                }
            }
            Op::Mean(a, keep) => {
                let s = self.shape(*a);
                let inner: usize = s[*keep..].iter().product();
                let inv = T::one() / T::from_f64(inner as f64);
                let n = self.value(*a).numel();
                let ga = slot(grads, *a, n);
                for (o, &gi) in g.iter().enumerate() {
                    for d in &mut ga[o * inner..(o + 1) * inner] {
                        *d = *d + gi * inv;
                    }
                }
            }
            Op::CrossEntropy(logits, targets) => {
                let (r, c) = self.value(*logits).dims2().expect("rank 2");
                let src = self.value(*logits).data();
                let scale = g[0] / T::from_f64(r as f64);
                let gl = slot(grads, *logits, r * c);
                let mut probs = vec![T::zero(); c];
                for (i, &t) in targets.iter().enumerate() {
                    softmax_row(&src[i * c..(i + 1) * c], &mut probs);
                    probs[t] = probs[t] - T::one();
                    for (d, &p) in gl[i * c..(i + 1) * c].iter_mut().zip(&probs) {
                        *d = *d + p * scale;
                    }
                }
            }
        }
    }

    /// Gradients of every bound, non-frozen parameter. Parameters of `params`
    /// that the graph never touched get zero gradients.
    pub fn param_grads(&self, grads: &Gradients<T>, params: &ParamSet<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (name, p) in params.iter() {
            if p.frozen {
                continue;
            }
            out.insert(name, Tensor::zeros(p.value.shape()))
                .expect("names are unique");
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let (Some(g), Ok(t)) = (grads.raw(idx), out.get_mut(name)) {
                    accumulate(t.data_mut(), g);
                }
            }
        }
        out
    }
}

/// Per-node gradient buffers produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    fn raw(&self, idx: usize) -> Option<&[T]> {
        self.grads.get(idx).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to node `v`, if it lies on a path to the loss.
    pub fn get(&self, graph: &Graph<T>, v: Var) -> Option<Tensor<T>> {
        self.raw(v.0)
            .map(|g| Tensor::new(graph.shape(v), g.to_vec()).expect("gradient matches node shape"))
    }
}

/// Builds a graph with `build`, evaluates it and returns its value together
/// with the gradient of that (scalar) value with respect to every
/// non-frozen parameter in `params`.
pub fn evaluate_with_gradients<T: Real, F>(
    params: &ParamSet<T>,
    build: F,
) -> Result<(Tensor<T>, ParamSet<T>)>
where
    F: FnOnce(&mut Graph<T>, &ParamSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    let grads = g.backward(out)?;
    Ok((g.value(out).clone(), g.param_grads(&grads, params)))
}

/// Forward evaluation only.
pub fn evaluate<T: Real, F>(params: &ParamSet<T>, build: F) -> Result<Tensor<T>>
where
    F: FnOnce(&mut Graph<T>, &ParamSet<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    Ok(g.value(out).clone())
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    match (a, b) {
        ([_, n], [m]) => n == m,
        ([_, n], [1, m]) => n == m,
        _ => false,
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let sum = row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

pub(crate) fn softmax_row<T: Real>(src: &[T], dst: &mut [T]) {
    let max = src.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = (x - max).exp();
        sum = sum + *d;
    }
    for d in dst.iter_mut() {
        *d = *d / sum;
    }
}

pub(crate) fn activate<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Relu => x.max(T::zero()),
        Activation::Gelu => {
            let half = T::from_f64(0.5);
            let inner = T::from_f64(SQRT_2_OVER_PI) * (x + T::from_f64(GELU_C) * x * x * x);
            half * x * (T::one() + inner.tanh())
        }
        Activation::Tanh => x.tanh(),
        Activation::Square => x * x,
    }
}

fn activate_grad<T: Real>(act: Activation, x: T) -> T {
    match act {
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Gelu => {
            let half = T::from_f64(0.5);
            let k = T::from_f64(SQRT_2_OVER_PI);
            let c = T::from_f64(GELU_C);
            let t = (k * (x + c * x * x * x)).tanh();
            let dinner = k * (T::one() + T::from_f64(3.0) * c * x * x);
            half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
        }
        Activation::Tanh => {
            let t = x.tanh();
            T::one() - t * t
        }
        Activation::Square => x + x,
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let ([b, ci, h, wd], [co, ci2, kh, kw]) = (x, w) else {
            return Err(Error::shape("conv2d", format!("input {x:?}, weight {w:?}")));
        };
        if ci != ci2 || stride == 0 || h + 2 * pad < *kh || wd + 2 * pad < *kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {x:?}, weight {w:?}, stride {stride}, pad {pad}"),
            ));
        }
        Ok(Self {
            b: *b,
            ci: *ci,
            h: *h,
            w: *wd,
            co: *co,
            kh: *kh,
            kw: *kw,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    fn out_len(&self) -> usize {
        self.b * self.co * self.ho * self.wo
    }

    /// Input coordinate for output position `o` and kernel offset `k`, if it
    /// falls inside the unpadded input.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = o * self.stride + k;
        (p >= self.pad && p - self.pad < extent).then(|| p - self.pad)
    }
}

fn conv_forward<T: Real>(g: &ConvGeometry, x: &[T], w: &[T], out: &mut [T]) {
    for b in 0..g.b {
        for co in 0..g.co {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = T::zero();
                    for ci in 0..g.ci {
                        let xbase = ((b * g.ci + ci) * g.h) * g.w;
                        let wbase = ((co * g.ci + ci) * g.kh) * g.kw;
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.src(ox, kx, g.w) else {
                                    continue;
                                };
                                acc = acc + x[xbase + iy * g.w + ix] * w[wbase + ky * g.kw + kx];
                            }
                        }
                    }
                    out[((b * g.co + co) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
}

fn conv_backward_input<T: Real>(g: &ConvGeometry, gout: &[T], w: &[T], gx: &mut [T]) {
    for b in 0..g.b {
        for co in 0..g.co {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = gout[((b * g.co + co) * g.ho + oy) * g.wo + ox];
                    if go == T::zero() {
                        continue;
                    }
                    for ci in 0..g.ci {
                        let xbase = ((b * g.ci + ci) * g.h) * g.w;
                        let wbase = ((co * g.ci + ci) * g.kh) * g.kw;
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.src(ox, kx, g.w) else {
                                    continue;
                                };
                                let d = &mut gx[xbase + iy * g.w + ix];
                                *d = *d + go * w[wbase + ky * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_weight<T: Real>(g: &ConvGeometry, gout: &[T], x: &[T], gw: &mut [T]) {
    for b in 0..g.b {
        for co in 0..g.co {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = gout[((b * g.co + co) * g.ho + oy) * g.wo + ox];
                    if go == T::zero() {
                        continue;
                    }
                    for ci in 0..g.ci {
                        let xbase = ((b * g.ci + ci) * g.h) * g.w;
                        let wbase = ((co * g.ci + ci) * g.kh) * g.kw;
                        for ky in 0..g.kh {
                            let Some(iy) = g.src(oy, ky, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.src(ox, kx, g.w) else {
                                    continue;
                                };
                                let d = &mut gw[wbase + ky * g.kw + kx];
                                *d = *d + go * x[xbase + iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn constant_graph_has_zero_grads() {
        let mut p = ParamSet::new();
        p.insert("w", t(&[2], &[1.0, 2.0])).unwrap();
        let (v, grads) = evaluate_with_gradients(&p, |g, _| {
            let c = g.input(t(&[1], &[5.0]));
            Ok(g.scale(c, 2.0))
        })
        .unwrap();
        assert_eq!(v.data(), &[10.0]);
        assert_eq!(grads.get("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let err = evaluate_with_gradients(&p, |g, p| g.param(p, "w")).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 3], &[0.0; 6]));
        let b = g.input(t(&[2, 3], &[0.0; 6]));
        match g.matmul(a, b).unwrap_err() {
            Error::Shape { op, .. } => assert_eq!(op, "matmul"),
            e => panic!("unexpected {e:?}"),
        }
        let c = g.input(t(&[3], &[0.0; 3]));
        assert!(g.add(a, c).is_ok());
        let d = g.input(t(&[2], &[0.0; 2]));
        match g.add(a, d).unwrap_err() {
            Error::Shape { op, .. } => assert_eq!(op, "add"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[2, 3], &[1.0, -200.0, 3.5, 700.0, 699.0, -1.0]));
        let s = g.row_softmax(a).unwrap();
        for row in g.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_along_channels() {
        let mut g = Graph::<f64>::new();
        let a = g.input(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let b = g.input(t(&[1, 2, 1, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 3, 1, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.input(t(&[1, 1, 1, 1], &[2.0]));
        let y = g.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
        let y2 = g.conv2d(x, w, 2, 0).unwrap();
        assert_eq!(g.value(y2).data(), &[2.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_n() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[4, 4]));
        let ce = g.cross_entropy(l, &[0, 1, 2, 3]).unwrap();
        assert!((g.value(ce).data()[0] - 4f64.ln()).abs() < 1e-15);
    }
}
