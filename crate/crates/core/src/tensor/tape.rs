//! Wengert-style gradient tape.
//!
//! Each operation evaluates eagerly, appends its output to the tape and keeps
//! whatever it needs for its backward rule. `backward` replays the rules in
//! reverse recording order. Only leaves retain gradients; adjoints of
//! intermediate nodes live for the duration of one `backward` call.

use rand::Rng;

use super::dense::{Real, Tensor};
use super::kernels::{self, Conv3dGeom};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding policy for [`Tape::conv3d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves every spatial extent.
    Same,
    /// No padding.
    Valid,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    MatMul {
        a: Var,
        b: Var,
        rows: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: Conv3dGeom,
    },
    Conv1dTokens {
        x: Var,
        w: Var,
        b: Var,
        dims: [usize; 4],
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    SliceLast {
        x: Var,
        start: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is single-threaded; independent tapes can live on separate threads.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let th = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * a * x * x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Returns `x` with axes reordered so that output axis `i` is input axis `perm[i]`.
fn permute_data<T: Real>(shape: &[usize], perm: &[usize], data: &[T]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Handles from before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Resets every leaf gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Overwrites a leaf value in place, keeping its handle. Nodes recorded
    /// after the leaf are not recomputed.
    pub fn set_leaf_value(&mut self, v: Var, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract("set_leaf_value on a non-leaf".into()));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::dim("set_leaf_value", node.value.shape(), value.shape()));
        }
        node.value = value;
        Ok(())
    }

    /// Multiply-accumulate count of every contraction recorded so far
    /// (matmul, batched matmul, both convolutions). Convolutions count the
    /// full kernel at every output position, border taps included.
    pub fn contraction_macs(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| match &node.op {
                Op::MatMul { rows, k, n, .. } => (rows * k * n) as u64,
                Op::Bmm { batch, m, k, n, .. } => (batch * m * k * n) as u64,
                Op::Conv3d { geom, .. } => {
                    let outputs = geom.batch * geom.output.iter().product::<usize>();
                    let taps: usize = geom.kernel.iter().product();
                    (outputs * taps * geom.cin * geom.cout) as u64
                }
                Op::Conv1dTokens { dims: [n, t, e, k], .. } => (n * t * e * k) as u64,
                _ => 0,
            })
            .sum()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        self.push(out, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `x[..., D] + bias[D]`, broadcasting over every leading axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if bs.len() != 1 || xs.is_empty() || last_dim(xs) != bs[0] {
            return Err(Error::dim("add_bias", xs, bs));
        }
        let bv = self.value(bias).data();
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(bv.len()) {
            for (o, &b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    /// Elementwise product with a fixed, non-differentiable mask.
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::dim("mul_const", xv.shape(), &[mask.len()]));
        }
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(x, mask), &[x]))
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// rescales survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    /// `a[..., M, K] · b[K, N] -> [..., M, N]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || last_dim(&sa) != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let rows = self.value(a).numel() / k;
        let mut data = vec![T::zero(); rows * n];
        kernels::gemm_nn(rows, k, n, self.value(a).data(), self.value(b).data(), &mut data);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::MatMul { a, b, rows, k, n }, &[a, b]))
    }

    /// Batched product of `a[B, M, K]` with `b[B, K, N]`, or with `b[B, N, K]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::dim("bmm", &sa, &sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut data = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            let ai = &av[i * m * k..(i + 1) * m * k];
            let bi = &bv[i * k * n..(i + 1) * k * n];
            let oi = &mut data[i * m * n..(i + 1) * m * n];
            if transpose_b {
                kernels::gemm_nt(m, k, n, ai, bi, oi);
            } else {
                kernels::gemm_nn(m, k, n, ai, bi, oi);
            }
        }
        let out = Tensor::new(vec![batch, m, n], data)?;
        Ok(self.push(
            out,
            Op::Bmm {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            },
            &[a, b],
        ))
    }

    /// Channels-last 3D cross-correlation (no kernel flip).
    ///
    /// `x[N, D1, D2, D3, Cin]`, `w[k1, k2, k3, Cin, Cout]`, `b[Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sx.len() != 5 || sw.len() != 5 || sw[3] != sx[4] {
            return Err(Error::dim("conv3d", &sx, &sw));
        }
        if sb != [sw[4]] {
            return Err(Error::dim("conv3d bias", &sw, &sb));
        }
        let input = [sx[1], sx[2], sx[3]];
        let kernel = [sw[0], sw[1], sw[2]];
        let mut pad = [0; 3];
        let mut output = [0; 3];
        for i in 0..3 {
            let (lo, hi) = match padding {
                Padding::Same => ((kernel[i] - 1) / 2, kernel[i] - 1 - (kernel[i] - 1) / 2),
                Padding::Valid => (0, 0),
            };
            let padded = input[i] + lo + hi;
            if kernel[i] > padded {
                return Err(Error::dim("conv3d kernel exceeds padded input", &sx, &sw));
            }
            pad[i] = lo;
            output[i] = padded - kernel[i] + 1;
        }
        let geom = Conv3dGeom {
            batch: sx[0],
            input,
            kernel,
            pad,
            output,
            cin: sx[4],
            cout: sw[4],
        };
        let mut data = vec![T::zero(); geom.batch * output.iter().product::<usize>() * geom.cout];
        kernels::conv3d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut data,
        );
        let out = Tensor::new(vec![sx[0], output[0], output[1], output[2], sw[4]], data)?;
        Ok(self.push(out, Op::Conv3d { x, w, b, geom }, &[x, w, b]))
    }

    /// Depthwise convolution along the token axis with zero "same" padding.
    ///
    /// `x[N, T, E]`, `w[k, E]` with odd `k`, `b[E]`.
    pub fn conv1d_tokens(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let sb = self.shape(b).to_vec();
        if sw.len() != 2 {
            return Err(Error::dim("conv1d_tokens", &sx, &sw));
        }
        if sw[0].is_multiple_of(2) {
            return Err(Error::Config(format!(
                "token convolution kernel must be odd, got {}",
                sw[0]
            )));
        }
        if sx.len() != 3 || sx[2] != sw[1] || sb != [sw[1]] {
            return Err(Error::dim("conv1d_tokens", &sx, &sw));
        }
        let dims = [sx[0], sx[1], sx[2], sw[0]];
        let mut data = vec![T::zero(); self.value(x).numel()];
        kernels::conv1d_tokens_forward(
            dims[0],
            dims[1],
            dims[2],
            dims[3],
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut data,
        );
        let out = Tensor::new(sx, data)?;
        Ok(self.push(out, Op::Conv1dTokens { x, w, b, dims }, &[x, w, b]))
    }

    /// Standardises the last axis then applies `gamma * x̂ + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = last_dim(&sx);
        if sx.is_empty() || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layernorm", &sx, self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(xv.len());
        let inv_d = T::one() / T::from_usize(d);
        let eps = T::from_f64(eps);
        for row in xv.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for ((&v, &g), &b) in row.iter().zip(gv).zip(bv) {
                let h = (v - mean) * r;
                xhat.push(h);
                data.push(g * h + b);
            }
        }
        let out = Tensor::new(sx, data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = last_dim(xv.shape());
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks_exact(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            let mut z = T::zero();
            for &v in row {
                let e = (v - m).exp();
                z += e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e = *e / z;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len()
            || perm
                .iter()
                .any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim("permute", &sx, perm));
        }
        let (shape, data) = permute_data(&sx, perm, self.value(x).data());
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::dim("concat_last", self.shape(*first), s));
            }
            widths.push(last_dim(s));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
            parts,
        ))
    }

    /// `x[..., start .. start + len]`
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = last_dim(&sx);
        if sx.is_empty() || len == 0 || start + len > d {
            return Err(Error::dim("slice_last", &sx, &[start, len]));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = sx;
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::SliceLast { x, start }, &[x]))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::dim("mean_axis", &sx, &[axis]));
        }
        let outer: usize = sx[..axis].iter().product();
        let len = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(len);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        let mut shape = sx;
        shape.remove(axis);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::MeanAxis { x, axis }, &[x]))
    }

    /// Sum of all elements as a scalar, reduced in 64-bit.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), &[x])
    }

    /// Mean cross-entropy of `logits[N, K]` against class ids in `1..=K`.
    ///
    /// Log-sum-exp is evaluated with max subtraction and 64-bit reductions.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u16]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::dim("cross_entropy", &sl, &[labels.len()]));
        }
        let k = sl[1];
        let mut targets = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            if l == 0 || l as usize > k {
                return Err(Error::Data {
                    index: i,
                    reason: format!("label {l} outside 1..={k}"),
                });
            }
            targets.push(l as usize - 1);
        }
        let lv = self.value(logits).data();
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0f64;
        for (row, &t) in lv.chunks_exact(k).zip(&targets) {
            let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v.as_f64() - m).exp()).sum();
            let lz = z.ln();
            total += lz - (row[t].as_f64() - m);
            probs.extend(row.iter().map(|v| T::from_f64((v.as_f64() - m).exp() / z)));
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::CrossEntropy { logits, targets, probs },
            &[logits],
        ))
    }

    /// Populates the gradient of every `requires_grad` leaf reachable from
    /// `loss`. Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_grads.push((i, g));
                continue;
            }
            self.backward_node(i, &g, &mut adj);
        }
        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += *v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        // Adjoint buffer for `v` taken out of `adj`, or `None` when `v` does
        // not need gradients. A second take of the same var yields a fresh
        // zero buffer; `put` merges it back.
        let take = |adj: &mut [Option<Vec<T>>], v: Var| -> Option<Vec<T>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(adj[v.0].take().unwrap_or_else(|| vec![T::zero(); n]))
        };
        let put = |adj: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>| {
            if let Some(buf) = buf {
                match &mut adj[v.0] {
                    Some(acc) => add_into(acc, &buf),
                    slot @ None => *slot = Some(buf),
                }
            }
        };
        macro_rules! with_slot {
            ($v:expr, |$buf:ident| $body:expr) => {
                if let Some(mut owned) = take(adj, $v) {
                    {
                        let $buf: &mut [T] = &mut owned;
                        $body;
                    }
                    put(adj, $v, Some(owned));
                }
            };
        }
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                with_slot!(*a, |d| add_into(d, g));
                with_slot!(*b, |d| add_into(d, g));
            }
            Op::AddBias(x, b) => {
                with_slot!(*x, |d| add_into(d, g));
                with_slot!(*b, |d| {
                    let w = d.len();
                    for row in g.chunks_exact(w) {
                        add_into(d, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                with_slot!(*a, |d| for ((o, &gv), &bb) in d.iter_mut().zip(g).zip(bv) {
                    *o += gv * bb;
                });
                with_slot!(*b, |d| for ((o, &gv), &aa) in d.iter_mut().zip(g).zip(av) {
                    *o += gv * aa;
                });
            }
            Op::Scale(x, c) => {
                with_slot!(*x, |d| for (o, &gv) in d.iter_mut().zip(g) {
                    *o += gv * *c;
                });
            }
            Op::MulConst(x, mask) => {
                with_slot!(*x, |d| for ((o, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                    *o += gv * m;
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                with_slot!(*x, |d| for ((o, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                    if v > T::zero() {
                        *o += gv;
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                with_slot!(*x, |d| for ((o, &gv), &v) in d.iter_mut().zip(g).zip(xv) {
                    *o += gv * gelu_grad(v);
                });
            }
            Op::Sigmoid(x) => {
                with_slot!(*x, |d| for ((o, &gv), &y) in d.iter_mut().zip(g).zip(out) {
                    *o += gv * y * (T::one() - y);
                });
            }
            Op::MatMul { a, b, rows, k, n } => {
                let (av, bv) = (val(*a), val(*b));
                with_slot!(*a, |d| kernels::gemm_nt(*rows, *n, *k, g, bv, d));
                with_slot!(*b, |d| kernels::gemm_tn(*k, *rows, *n, av, g, d));
            }
            Op::Bmm {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (av, bv) = (val(*a), val(*b));
                with_slot!(*a, |d| for i in 0..*batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bi = &bv[i * k * n..(i + 1) * k * n];
                    let di = &mut d[i * m * k..(i + 1) * m * k];
                    if *transpose_b {
                        kernels::gemm_nn(m, n, k, gi, bi, di);
                    } else {
                        kernels::gemm_nt(m, n, k, gi, bi, di);
                    }
                });
                with_slot!(*b, |d| for i in 0..*batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av[i * m * k..(i + 1) * m * k];
                    let di = &mut d[i * k * n..(i + 1) * k * n];
                    if *transpose_b {
                        kernels::gemm_tn(n, m, k, gi, ai, di);
                    } else {
                        kernels::gemm_tn(k, m, n, ai, gi, di);
                    }
                });
            }
            Op::Conv3d { x, w, b, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                let mut dx = take(adj, *x);
                let mut dw = take(adj, *w);
                let mut db = take(adj, *b);
                kernels::conv3d_backward(geom, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                put(adj, *x, dx);
                put(adj, *w, dw);
                put(adj, *b, db);
            }
            Op::Conv1dTokens { x, w, b, dims } => {
                let (xv, wv) = (val(*x), val(*w));
                let mut dx = take(adj, *x);
                let mut dw = take(adj, *w);
                let mut db = take(adj, *b);
                kernels::conv1d_tokens_backward(
                    dims[0],
                    dims[1],
                    dims[2],
                    dims[3],
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put(adj, *x, dx);
                put(adj, *w, dw);
                put(adj, *b, db);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = val(*gamma);
                let d = gv.len();
                with_slot!(
                    *gamma,
                    |dg| for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for ((o, &gg), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *o += gg * h;
                        }
                    }
                );
                with_slot!(*beta, |db| for grow in g.chunks_exact(d) {
                    add_into(db, grow);
                });
                with_slot!(*x, |dx| {
                    let inv_d = T::one() / T::from_usize(d);
                    let mut dh = vec![T::zero(); d];
                    for (r, ((grow, hrow), dxrow)) in g
                        .chunks_exact(d)
                        .zip(xhat.chunks_exact(d))
                        .zip(dx.chunks_exact_mut(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            dh[j] = grow[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * hrow[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            dxrow[j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let d = last_dim(nodes[i].value.shape());
                with_slot!(*x, |dx| for ((grow, yrow), dxrow) in
                    g.chunks_exact(d).zip(out.chunks_exact(d)).zip(dx.chunks_exact_mut(d))
                {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((o, &gg), &y) in dxrow.iter_mut().zip(grow).zip(yrow) {
                        *o += y * (gg - dot);
                    }
                });
            }
            Op::Reshape(x) => {
                with_slot!(*x, |d| add_into(d, g));
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (_, back) = permute_data(nodes[i].value.shape(), &inv, g);
                with_slot!(*x, |d| add_into(d, &back));
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    with_slot!(p, |d| for r in 0..rows {
                        add_into(
                            &mut d[r * w..(r + 1) * w],
                            &g[r * total + offset..r * total + offset + w],
                        );
                    });
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let len = last_dim(nodes[i].value.shape());
                let d = last_dim(nodes[x.0].value.shape());
                with_slot!(
                    *x,
                    |dx| for (grow, dxrow) in g.chunks_exact(len).zip(dx.chunks_exact_mut(d)) {
                        add_into(&mut dxrow[*start..*start + len], grow);
                    }
                );
            }
            Op::MeanAxis { x, axis } => {
                let sx = nodes[x.0].value.shape();
                let outer: usize = sx[..*axis].iter().product();
                let len = sx[*axis];
                let inner: usize = sx[*axis + 1..].iter().product();
                let inv = T::one() / T::from_usize(len);
                with_slot!(*x, |dx| for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut dx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s * inv;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                with_slot!(*x, |d| for o in d.iter_mut() {
                    *o += g[0];
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = probs.len() / targets.len();
                let scale = g[0] / T::from_usize(targets.len());
                with_slot!(*logits, |d| for (r, &t) in targets.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        d[r * k + j] += scale * (probs[r * k + j] - onehot);
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
