use super::kernels::{col2im, gemm, im2col, Mat, Window};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Stride, zero padding and dilation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            dilation,
        }
    }

    /// Stride one with the padding that preserves spatial size for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec::new(1, dilation * (kernel - 1) / 2, dilation)
    }
}

const L2_EPS: f64 = 1e-12;
const SQRT_EPS: f64 = 1e-8;

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
        batch: usize,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        win: Window,
        batch: usize,
        in_ch: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Mul(Var, Var),
    Add(Var, Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    MatMul(Var, Var),
    OuterProductPool(Var),
    L2Normalize {
        x: Var,
        norms: Vec<T>,
    },
    SignedSqrt(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Tile {
        x: Var,
        axis: usize,
        n: usize,
    },
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    AddAxis {
        x: Var,
        b: Var,
        axis: usize,
    },
    MulAxis {
        x: Var,
        s: Var,
        axis: usize,
    },
    Sum(Var),
    Scale(Var, T),
    ExternalLoss {
        x: Var,
        grad: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order; the order is a topological
/// order, so backward is a single reverse sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, len, inner)` sizes around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// backward writes a gradient into it.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_leaf(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    // ---------------------------------------------------------------- ops

    /// 2D convolution. `x` is `N x C x H x W`, `w` is `O x C x kh x kw`,
    /// optional bias `b` has `O` entries.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::shape(format!("conv2d input {xs:?} with kernel {ws:?}")));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::shape("conv2d stride and dilation must be positive"));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let span_h = spec.dilation * (kh - 1) + 1;
        let span_w = spec.dilation * (kw - 1) + 1;
        if h + 2 * spec.padding < span_h || wd + 2 * spec.padding < span_w {
            return Err(Error::shape(format!(
                "conv2d kernel {ws:?} larger than padded input {xs:?}"
            )));
        }
        self.check_bias(b, o)?;
        let win = Window {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride: spec.stride,
            padding: spec.padding,
            dilation: spec.dilation,
            out_h: (h + 2 * spec.padding - span_h) / spec.stride + 1,
            out_w: (wd + 2 * spec.padding - span_w) / spec.stride + 1,
        };
        let (rows, p) = (win.rows(), win.positions());
        let mut cols = vec![T::zero(); n * rows * p];
        let mut out = vec![T::zero(); n * o * p];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let cols_s = &mut cols[s * rows * p..(s + 1) * rows * p];
                im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], &win, cols_s);
                gemm(
                    Mat::new(wv, o, rows),
                    Mat::new(cols_s, rows, p),
                    &mut out[s * o * p..(s + 1) * o * p],
                    false,
                );
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, o, p);
            }
        }
        let value = Tensor::new(&[n, o, win.out_h, win.out_w], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                win,
                batch: n,
                cols,
            },
            &inputs,
        ))
    }

    /// Transposed 2D convolution (dilation 1). `x` is `N x C x H x W`, `w` is
    /// `C x O x kh x kw`; the output side is `(H - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || stride == 0 {
            return Err(Error::shape(format!(
                "conv_transpose2d input {xs:?} with kernel {ws:?}"
            )));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[1], ws[2], ws[3]);
        let full_h = (h - 1) * stride + kh;
        let full_w = (wd - 1) * stride + kw;
        if full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(Error::shape("conv_transpose2d padding removes the whole output"));
        }
        self.check_bias(b, o)?;
        let win = Window {
            channels: o,
            height: full_h - 2 * padding,
            width: full_w - 2 * padding,
            kh,
            kw,
            stride,
            padding,
            dilation: 1,
            out_h: h,
            out_w: wd,
        };
        let (rows, p) = (win.rows(), win.positions());
        let plane = win.height * win.width;
        let mut out = vec![T::zero(); n * o * plane];
        let mut cols = vec![T::zero(); rows * p];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                gemm(
                    Mat::new(wv, c, rows).t(),
                    Mat::new(&xv[s * c * p..(s + 1) * c * p], c, p),
                    &mut cols,
                    false,
                );
                col2im(&cols, &win, &mut out[s * o * plane..(s + 1) * o * plane]);
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, o, plane);
            }
        }
        let value = Tensor::new(&[n, o, win.height, win.width], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                win,
                batch: n,
                in_ch: c,
            },
            &inputs,
        ))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).numel() != channels {
                return Err(Error::shape(format!(
                    "bias {:?} for {channels} output channels",
                    self.shape(b)
                )));
            }
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape(), src.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn signed_sqrt(&mut self, x: Var) -> Var {
        self.map(x, |v| v.signum() * v.abs().sqrt(), Op::SignedSqrt(x))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        let (outer, len, inner) = split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut m = T::neg_infinity();
                for j in 0..len {
                    m = m.max(src[at(j)]);
                }
                let mut z = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - m).exp();
                    out[at(j)] = e;
                    z = z + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / z;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{name} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add(a, b), &[a, b]))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        check_axis(&base, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!("concat of {base:?} and {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `[m, k] x [k, n]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let mut out = vec![T::zero(); sa[0] * sb[1]];
        gemm(
            Mat::new(self.value(a).data(), sa[0], sa[1]),
            Mat::new(self.value(b).data(), sb[0], sb[1]),
            &mut out,
            false,
        );
        Ok(self.push(Tensor::new(&[sa[0], sb[1]], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Bilinear pooling. For each sample, with `V` the `C x P` matrix of
    /// channels over positions, computes `B = V V^T` and returns the mean of
    /// `B` over its second axis. Input `N x C x ...`, output `N x C`.
    pub fn outer_product_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape(format!("outer_product_pool of {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let p: usize = shape[2..].iter().product();
        let src = self.value(x).data();
        let inv_c = T::one() / T::of(c as f64);
        let mut out = vec![T::zero(); n * c];
        let mut col_sum = vec![T::zero(); p];
        for s in 0..n {
            let v = &src[s * c * p..(s + 1) * c * p];
            channel_sums(v, c, p, &mut col_sum);
            for ch in 0..c {
                let row = &v[ch * p..(ch + 1) * p];
                let dot: T = row.iter().zip(&col_sum).map(|(&a, &b)| a * b).sum();
                out[s * c + ch] = dot * inv_c;
            }
        }
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::OuterProductPool(x), &[x]))
    }

    /// Scales every slice along the last axis to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("l2_normalize of a 0-d tensor"))?;
        let src = self.value(x).data();
        let eps = T::of(L2_EPS);
        let mut out = vec![T::zero(); src.len()];
        let mut norms = Vec::with_capacity(src.len() / d.max(1));
        for (row, dst) in src.chunks(d.max(1)).zip(out.chunks_mut(d.max(1))) {
            let norm = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = v / norm;
            }
            norms.push(norm);
        }
        Ok(self.push(Tensor::new(&shape, out)?, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Mean along `axis`, keeping it with size one.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        let (outer, len, inner) = split(&shape, axis);
        let src = self.value(x).data();
        let inv = T::one() / T::of(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let seg = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(seg) {
                    *acc = *acc + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        shape[axis] = 1;
        Ok(self.push(Tensor::new(&shape, out)?, Op::MeanAxis { x, axis }, &[x]))
    }

    /// Repeats the tensor `n` times along `axis`.
    pub fn tile(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        if n == 0 {
            return Err(Error::shape("tile count must be positive"));
        }
        let (outer, len, inner) = split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * n);
        for o in 0..outer {
            let block = &src[o * len * inner..(o + 1) * len * inner];
            for _ in 0..n {
                out.extend_from_slice(block);
            }
        }
        shape[axis] *= n;
        Ok(self.push(Tensor::new(&shape, out)?, Op::Tile { x, axis, n }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        check_axis(&shape, axis)?;
        if start + len > shape[axis] || len == 0 {
            return Err(Error::shape(format!(
                "slice {start}..{} of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        shape[axis] = len;
        Ok(self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start }, &[x]))
    }

    fn axis_vector(&self, x: Var, v: Var, axis: usize, name: &str) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        check_axis(shape, axis)?;
        if self.value(v).numel() != shape[axis] {
            return Err(Error::shape(format!(
                "{name}: vector {:?} along axis {axis} of {shape:?}",
                self.shape(v)
            )));
        }
        Ok(split(shape, axis))
    }

    /// Adds vector `b` along `axis`, broadcasting over all other axes.
    pub fn add_axis(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_vector(x, b, axis, "add_axis")?;
        let mut out = self.value(x).data().to_vec();
        let bv = self.value(b).data();
        for o in 0..outer {
            for j in 0..len {
                for v in &mut out[(o * len + j) * inner..(o * len + j + 1) * inner] {
                    *v = *v + bv[j];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddAxis { x, b, axis }, &[x, b]))
    }

    /// Multiplies by vector `s` along `axis`, broadcasting over all other axes.
    pub fn mul_axis(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = self.axis_vector(x, s, axis, "mul_axis")?;
        let mut out = self.value(x).data().to_vec();
        let sv = self.value(s).data();
        for o in 0..outer {
            for j in 0..len {
                for v in &mut out[(o * len + j) * inner..(o * len + j + 1) * inner] {
                    *v = *v * sv[j];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(&shape, out)?, Op::MulAxis { x, s, axis }, &[x, s]))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// A scalar computed outside the graph from the value of `x`, together
    /// with its gradient with respect to `x`.
    pub fn external_loss(&mut self, x: Var, value: T, grad: Vec<T>) -> Result<Var> {
        if grad.len() != self.value(x).numel() {
            return Err(Error::shape(format!(
                "external gradient of length {} for {:?}",
                grad.len(),
                self.shape(x)
            )));
        }
        Ok(self.push(Tensor::scalar(value), Op::ExternalLoss { x, grad }, &[x]))
    }

    // ----------------------------------------------------------- backward

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let numel = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); numel]))
    }

    /// Reverse sweep from a one-element `loss`. Gradients are added into
    /// the gradient slot of every leaf that requires them, so calling this
    /// twice without zeroing doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                leaf_grads.push((i, g));
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Conv2d {
                x,
                w,
                b,
                win,
                batch,
                cols,
            } => {
                let (rows, p) = (win.rows(), win.positions());
                let o = self.shape(*w)[0];
                let img = win.channels * win.height * win.width;
                if let Some(gw) = self.slot(grads, *w) {
                    for s in 0..*batch {
                        gemm(
                            Mat::new(&g[s * o * p..(s + 1) * o * p], o, p),
                            Mat::new(&cols[s * rows * p..(s + 1) * rows * p], rows, p).t(),
                            gw,
                            true,
                        );
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        accumulate_channel_sums(g, gb, *batch, o, p);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let wv = self.value(*w).data();
                    let mut gcols = vec![T::zero(); rows * p];
                    for s in 0..*batch {
                        gemm(
                            Mat::new(wv, o, rows).t(),
                            Mat::new(&g[s * o * p..(s + 1) * o * p], o, p),
                            &mut gcols,
                            false,
                        );
                        col2im(&gcols, win, &mut gx[s * img..(s + 1) * img]);
                    }
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                win,
                batch,
                in_ch,
            } => {
                let (rows, p) = (win.rows(), win.positions());
                let plane = win.height * win.width;
                let o = win.channels;
                let c = *in_ch;
                let mut gcols = vec![T::zero(); rows * p];
                let need_w = self.nodes[w.0].requires_grad;
                let need_x = self.nodes[x.0].requires_grad;
                for s in 0..*batch {
                    if !(need_w || need_x) {
                        break;
                    }
                    im2col(&g[s * o * plane..(s + 1) * o * plane], win, &mut gcols);
                    if let Some(gw) = self.slot(grads, *w) {
                        let xv = self.value(*x).data();
                        gemm(
                            Mat::new(&xv[s * c * p..(s + 1) * c * p], c, p),
                            Mat::new(&gcols, rows, p).t(),
                            gw,
                            true,
                        );
                    }
                    if let Some(gx) = self.slot(grads, *x) {
                        let wv = self.value(*w).data();
                        gemm(
                            Mat::new(wv, c, rows),
                            Mat::new(&gcols, rows, p),
                            &mut gx[s * c * p..(s + 1) * c * p],
                            true,
                        );
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(grads, *b) {
                        accumulate_channel_sums(g, gb, *batch, o, plane);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((acc, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        if yi > T::zero() {
                            *acc = *acc + gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((acc, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                        *acc = *acc + gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::SignedSqrt(x) => {
                let eps = T::of(SQRT_EPS);
                let half = T::of(0.5);
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for ((acc, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *acc = *acc + gi * half / xi.abs().max(eps).sqrt();
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (acc, &gi) in gx.iter_mut().zip(g) {
                        *acc = *acc + gi * *c;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split(node.value.shape(), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] = gx[at(j)] + y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((acc, &gi), &q) in ga.iter_mut().zip(g).zip(bv) {
                        *acc = *acc + gi * q;
                    }
                }
                let av = self.value(*a).data();
                if let Some(gb) = self.slot(grads, *b) {
                    for ((acc, &gi), &p) in gb.iter_mut().zip(g).zip(av) {
                        *acc = *acc + gi * p;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(grads, *v) {
                        for (acc, &gi) in gv.iter_mut().zip(g) {
                            *acc = *acc + gi;
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if let Some(gv) = self.slot(grads, *v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (acc, &gi) in gv[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *acc = *acc + gi;
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(Mat::new(g, m, n), Mat::new(self.value(*b).data(), k, n).t(), ga, true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(Mat::new(self.value(*a).data(), m, k).t(), Mat::new(g, m, n), gb, true);
                }
            }
            Op::OuterProductPool(x) => {
                let shape = self.shape(*x);
                let (n, c) = (shape[0], shape[1]);
                let p: usize = shape[2..].iter().product();
                let inv_c = T::one() / T::of(c as f64);
                let xv = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    let mut col_sum = vec![T::zero(); p];
                    let mut weighted = vec![T::zero(); p];
                    for s in 0..n {
                        let v = &xv[s * c * p..(s + 1) * c * p];
                        let gs = &g[s * c..(s + 1) * c];
                        channel_sums(v, c, p, &mut col_sum);
                        weighted.iter_mut().for_each(|w| *w = T::zero());
                        for ch in 0..c {
                            for (wq, &vq) in weighted.iter_mut().zip(&v[ch * p..(ch + 1) * p]) {
                                *wq = *wq + gs[ch] * vq;
                            }
                        }
                        for ch in 0..c {
                            let dst = &mut gx[(s * c + ch) * p..(s * c + ch + 1) * p];
                            for q in 0..p {
                                dst[q] = dst[q] + inv_c * (gs[ch] * col_sum[q] + weighted[q]);
                            }
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let d = *node.value.shape().last().unwrap();
                if let Some(gx) = self.slot(grads, *x) {
                    for (r, &norm) in norms.iter().enumerate() {
                        let ys = &y[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + (gs[j] - ys[j] * dot) / norm;
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = split(self.shape(*x), *axis);
                let inv = T::one() / T::of(len as f64);
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for j in 0..len {
                            let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (acc, &gi) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *acc = *acc + gi * inv;
                            }
                        }
                    }
                }
            }
            Op::Tile { x, axis, n } => {
                let (outer, len, inner) = split(self.shape(*x), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    let block = len * inner;
                    for o in 0..outer {
                        for r in 0..*n {
                            let src = &g[(o * n + r) * block..(o * n + r + 1) * block];
                            for (acc, &gi) in gx[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *acc = *acc + gi;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (acc, &gi) in gx.iter_mut().zip(g) {
                        *acc = *acc + gi;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let dst = &mut gx[(o * full + start) * inner..(o * full + start + len) * inner];
                        for (acc, &gi) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *acc = *acc + gi;
                        }
                    }
                }
            }
            Op::AddAxis { x, b, axis } => {
                let (outer, len, inner) = split(node.value.shape(), *axis);
                if let Some(gx) = self.slot(grads, *x) {
                    for (acc, &gi) in gx.iter_mut().zip(g) {
                        *acc = *acc + gi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for o in 0..outer {
                        for j in 0..len {
                            let s: T = g[(o * len + j) * inner..(o * len + j + 1) * inner].iter().copied().sum();
                            gb[j] = gb[j] + s;
                        }
                    }
                }
            }
            Op::MulAxis { x, s, axis } => {
                let (outer, len, inner) = split(node.value.shape(), *axis);
                let sv = self.value(*s).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for j in 0..len {
                            let r = (o * len + j) * inner..(o * len + j + 1) * inner;
                            for (acc, &gi) in gx[r.clone()].iter_mut().zip(&g[r]) {
                                *acc = *acc + gi * sv[j];
                            }
                        }
                    }
                }
                let xv = self.value(*x).data();
                if let Some(gs) = self.slot(grads, *s) {
                    for o in 0..outer {
                        for j in 0..len {
                            let r = (o * len + j) * inner..(o * len + j + 1) * inner;
                            let d: T = g[r.clone()].iter().zip(&xv[r]).map(|(&a, &b)| a * b).sum();
                            gs[j] = gs[j] + d;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|acc| *acc = *acc + g[0]);
                }
            }
            Op::ExternalLoss { x, grad } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (acc, &d) in gx.iter_mut().zip(grad) {
                        *acc = *acc + g[0] * d;
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, c: usize, plane: usize) {
    for s in 0..n {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            for v in &mut out[(s * c + ch) * plane..(s * c + ch + 1) * plane] {
                *v = *v + bv;
            }
        }
    }
}

fn accumulate_channel_sums<T: Scalar>(g: &[T], gb: &mut [T], n: usize, c: usize, plane: usize) {
    for s in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate().take(c) {
            let total: T = g[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().copied().sum();
            *acc = *acc + total;
        }
    }
}

/// `out[q] = sum_c v[c, q]` for a `c x p` block.
fn channel_sums<T: Scalar>(v: &[T], c: usize, p: usize, out: &mut [T]) {
    out.iter_mut().for_each(|x| *x = T::zero());
    for ch in 0..c {
        for (acc, &x) in out.iter_mut().zip(&v[ch * p..(ch + 1) * p]) {
            *acc = *acc + x;
        }
    }
}
