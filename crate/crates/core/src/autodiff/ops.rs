//! Differentiable operations: forward evaluation plus the reverse-mode
//! vector-Jacobian products recorded on the graph.
//!
//! Conventions fixed here and relied on by tests elsewhere:
//! - elementwise binaries accept equal shapes, or a single-element operand
//!   broadcast against the other side;
//! - `maximum`/`minimum` route the gradient to the first operand on ties;
//! - `clamp` passes gradient through at the boundaries (closed interval);
//! - `abs` uses subgradient 0 at the origin;
//! - `reduce_max` routes gradient to the first maximal element.

use crate::autodiff::special;
use crate::autodiff::tensor::Tensor;
use crate::error::{CoreError, Result};

/// Elementwise unary operations sharing one recording path.
#[derive(Clone, Copy, Debug)]
pub(crate) enum UnaryKind {
    Exp,
    Tanh,
    Sigmoid,
    Gelu,
    Abs,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Clamp { lo: f64, hi: f64 },
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Exp => "exp",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Abs => "abs",
            UnaryKind::Neg => "neg",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::Clamp { .. } => "clamp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Exp => x.exp(),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => special::sigmoid(x),
            UnaryKind::Gelu => special::gelu(x),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Neg => -x,
            UnaryKind::Scale(c) => c * x,
            UnaryKind::AddScalar(c) => x + c,
            UnaryKind::Clamp { lo, hi } => x.clamp(lo, hi),
        }
    }

    /// dy/dx given the forward input x and output y.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Exp => y,
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Gelu => special::gelu_derivative(x),
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Neg => -1.0,
            UnaryKind::Scale(c) => c,
            UnaryKind::AddScalar(_) => 1.0,
            UnaryKind::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Elementwise binary operations sharing one recording path.
#[derive(Clone, Copy, Debug)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Max => "maximum",
            BinaryKind::Min => "minimum",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
            BinaryKind::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
            BinaryKind::Min => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// (dy/da, dy/db) at the forward inputs.
    fn derivatives(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (1.0 / b, -a / (b * b)),
            BinaryKind::Max => {
                if a >= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            BinaryKind::Min => {
                if a <= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
        }
    }
}

/// Backward edge recorded on a non-leaf tensor. Holds the parent tensors
/// alive for the lifetime of the graph.
pub(crate) enum GradFn {
    Unary { parent: Tensor, kind: UnaryKind },
    Binary { lhs: Tensor, rhs: Tensor, kind: BinaryKind },
    Matmul { lhs: Tensor, rhs: Tensor },
    Outer { lhs: Tensor, rhs: Tensor },
    Sum { parent: Tensor },
    Mean { parent: Tensor },
    ReduceMax { parent: Tensor, argmax: usize },
    Concat { parents: Vec<Tensor> },
    LayerNorm { input: Tensor, gain: Tensor, bias: Tensor, eps: f64 },
}

impl GradFn {
    pub(crate) fn op_name(&self) -> &'static str {
        match self {
            GradFn::Unary { kind, .. } => kind.name(),
            GradFn::Binary { kind, .. } => kind.name(),
            GradFn::Matmul { .. } => "matmul",
            GradFn::Outer { .. } => "outer",
            GradFn::Sum { .. } => "sum",
            GradFn::Mean { .. } => "mean",
            GradFn::ReduceMax { .. } => "reduce_max",
            GradFn::Concat { .. } => "concat",
            GradFn::LayerNorm { .. } => "layer_norm",
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            GradFn::Unary { parent, .. }
            | GradFn::Sum { parent }
            | GradFn::Mean { parent }
            | GradFn::ReduceMax { parent, .. } => vec![parent],
            GradFn::Binary { lhs, rhs, .. }
            | GradFn::Matmul { lhs, rhs }
            | GradFn::Outer { lhs, rhs } => vec![lhs, rhs],
            GradFn::Concat { parents } => parents.iter().collect(),
            GradFn::LayerNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
        }
    }

    /// Consumes the edge, yielding the parents by value. Used by the
    /// iterative graph teardown in `TensorInner::drop`.
    pub(crate) fn take_parents(self) -> Vec<Tensor> {
        match self {
            GradFn::Unary { parent, .. }
            | GradFn::Sum { parent }
            | GradFn::Mean { parent }
            | GradFn::ReduceMax { parent, .. } => vec![parent],
            GradFn::Binary { lhs, rhs, .. }
            | GradFn::Matmul { lhs, rhs }
            | GradFn::Outer { lhs, rhs } => vec![lhs, rhs],
            GradFn::Concat { parents } => parents,
            GradFn::LayerNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
        }
    }

    /// Distributes `upstream` (dL/d node) onto the parents.
    pub(crate) fn backward(&self, node: &Tensor, upstream: &[f64]) {
        match self {
            GradFn::Unary { parent, kind } => {
                if !parent.inner.requires_grad {
                    return;
                }
                let x = parent.inner.values.borrow();
                let y = node.inner.values.borrow();
                let contrib: Vec<f64> = upstream
                    .iter()
                    .enumerate()
                    .map(|(i, &u)| u * kind.derivative(x[i], y[i]))
                    .collect();
                drop(x);
                drop(y);
                parent.accumulate_grad(&contrib);
            }
            GradFn::Binary { lhs, rhs, kind } => {
                let a = lhs.inner.values.borrow();
                let b = rhs.inner.values.borrow();
                let (la, lb) = (a.len(), b.len());
                let mut ga = vec![0.0; la];
                let mut gb = vec![0.0; lb];
                for (i, &u) in upstream.iter().enumerate() {
                    let ia = if la == 1 { 0 } else { i };
                    let ib = if lb == 1 { 0 } else { i };
                    let (da, db) = kind.derivatives(a[ia], b[ib]);
                    ga[ia] += u * da;
                    gb[ib] += u * db;
                }
                drop(a);
                drop(b);
                if lhs.inner.requires_grad {
                    lhs.accumulate_grad(&ga);
                }
                if rhs.inner.requires_grad {
                    rhs.accumulate_grad(&gb);
                }
            }
            GradFn::Matmul { lhs, rhs } => {
                let a = lhs.inner.values.borrow();
                let b = rhs.inner.values.borrow();
                let (m, k) = (lhs.inner.shape[0], lhs.inner.shape[1]);
                if rhs.inner.shape.len() == 2 {
                    let n = rhs.inner.shape[1];
                    if lhs.inner.requires_grad {
                        // dA = G B^T
                        let mut ga = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += upstream[i * n + j] * b[p * n + j];
                                }
                                ga[i * k + p] = s;
                            }
                        }
                        lhs.accumulate_grad(&ga);
                    }
                    if rhs.inner.requires_grad {
                        // dB = A^T G
                        let mut gb = vec![0.0; k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let aip = a[i * k + p];
                                for j in 0..n {
                                    gb[p * n + j] += aip * upstream[i * n + j];
                                }
                            }
                        }
                        rhs.accumulate_grad(&gb);
                    }
                } else {
                    // y = A x with x one-dimensional.
                    if lhs.inner.requires_grad {
                        let mut ga = vec![0.0; m * k];
                        for i in 0..m {
                            let u = upstream[i];
                            for p in 0..k {
                                ga[i * k + p] = u * b[p];
                            }
                        }
                        lhs.accumulate_grad(&ga);
                    }
                    if rhs.inner.requires_grad {
                        let mut gx = vec![0.0; k];
                        for i in 0..m {
                            let u = upstream[i];
                            for p in 0..k {
                                gx[p] += a[i * k + p] * u;
                            }
                        }
                        rhs.accumulate_grad(&gx);
                    }
                }
            }
            GradFn::Outer { lhs, rhs } => {
                let a = lhs.inner.values.borrow();
                let b = rhs.inner.values.borrow();
                let (m, n) = (a.len(), b.len());
                if lhs.inner.requires_grad {
                    let mut ga = vec![0.0; m];
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += upstream[i * n + j] * b[j];
                        }
                        ga[i] = s;
                    }
                    lhs.accumulate_grad(&ga);
                }
                if rhs.inner.requires_grad {
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        let ai = a[i];
                        for j in 0..n {
                            gb[j] += upstream[i * n + j] * ai;
                        }
                    }
                    rhs.accumulate_grad(&gb);
                }
            }
            GradFn::Sum { parent } => {
                if parent.inner.requires_grad {
                    parent.accumulate_grad(&vec![upstream[0]; parent.len()]);
                }
            }
            GradFn::Mean { parent } => {
                if parent.inner.requires_grad {
                    let n = parent.len() as f64;
                    parent.accumulate_grad(&vec![upstream[0] / n; parent.len()]);
                }
            }
            GradFn::ReduceMax { parent, argmax } => {
                if parent.inner.requires_grad {
                    let mut g = vec![0.0; parent.len()];
                    g[*argmax] = upstream[0];
                    parent.accumulate_grad(&g);
                }
            }
            GradFn::Concat { parents } => {
                let mut offset = 0;
                for parent in parents {
                    let n = parent.len();
                    if parent.inner.requires_grad {
                        parent.accumulate_grad(&upstream[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            GradFn::LayerNorm {
                input,
                gain,
                bias,
                eps,
            } => {
                let x = input.inner.values.borrow();
                let g = gain.inner.values.borrow();
                let n = x.len();
                let nf = n as f64;
                let mu = x.iter().sum::<f64>() / nf;
                let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / nf;
                let inv_std = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f64> = x.iter().map(|&v| (v - mu) * inv_std).collect();
                // d/d normalized input, before the affine transform.
                let dxhat: Vec<f64> = upstream.iter().zip(&*g).map(|(&u, &gi)| u * gi).collect();
                drop(x);
                drop(g);
                if bias.inner.requires_grad {
                    bias.accumulate_grad(upstream);
                }
                if gain.inner.requires_grad {
                    let dg: Vec<f64> = upstream.iter().zip(&xhat).map(|(&u, &xh)| u * xh).collect();
                    gain.accumulate_grad(&dg);
                }
                if input.inner.requires_grad {
                    let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(&d, &xh)| d * xh).sum::<f64>() / nf;
                    let dx: Vec<f64> = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(&d, &xh)| inv_std * (d - mean_dxhat - xh * mean_dxhat_xhat))
                        .collect();
                    input.accumulate_grad(&dx);
                }
            }
        }
    }
}

impl Tensor {
    fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let values = self.with_values(|x| x.iter().map(|&v| kind.apply(v)).collect());
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            GradFn::Unary {
                parent: self.clone(),
                kind,
            },
        )
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn gelu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Gelu)
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(UnaryKind::AddScalar(c))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(CoreError::domain(
                "clamp",
                format!("empty interval [{lo}, {hi}]"),
            ));
        }
        self.unary(UnaryKind::Clamp { lo, hi })
    }

    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let (la, lb) = (self.len(), other.len());
        let shape = if self.shape() == other.shape() {
            self.shape().to_vec()
        } else if la == 1 {
            other.shape().to_vec()
        } else if lb == 1 {
            self.shape().to_vec()
        } else {
            return Err(CoreError::dim(
                kind.name(),
                format!(
                    "shapes {:?} and {:?} are neither equal nor scalar-broadcastable",
                    self.shape(),
                    other.shape()
                ),
            ));
        };
        let n: usize = shape.iter().product();
        let values = self.with_values(|a| {
            other.with_values(|b| {
                (0..n)
                    .map(|i| {
                        kind.apply(a[if la == 1 { 0 } else { i }], b[if lb == 1 { 0 } else { i }])
                    })
                    .collect()
            })
        });
        Tensor::from_op(
            shape,
            values,
            GradFn::Binary {
                lhs: self.clone(),
                rhs: other.clone(),
                kind,
            },
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Max)
    }

    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Min)
    }

    /// Matrix product: `[m,k] @ [k,n] -> [m,n]` or `[m,k] @ [k] -> [m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let values = self.with_values(|a| {
                    other.with_values(|b| {
                        let mut out = vec![0.0; m * n];
                        for i in 0..m {
                            for p in 0..k {
                                let aip = a[i * k + p];
                                for j in 0..n {
                                    out[i * n + j] += aip * b[p * n + j];
                                }
                            }
                        }
                        out
                    })
                });
                Tensor::from_op(
                    vec![m, n],
                    values,
                    GradFn::Matmul {
                        lhs: self.clone(),
                        rhs: other.clone(),
                    },
                )
            }
            (&[m, k], &[k2]) if k == k2 => {
                let values = self.with_values(|a| {
                    other.with_values(|x| {
                        (0..m)
                            .map(|i| {
                                let mut s = 0.0;
                                for p in 0..k {
                                    s += a[i * k + p] * x[p];
                                }
                                s
                            })
                            .collect()
                    })
                });
                Tensor::from_op(
                    vec![m],
                    values,
                    GradFn::Matmul {
                        lhs: self.clone(),
                        rhs: other.clone(),
                    },
                )
            }
            _ => Err(CoreError::dim(
                "matmul",
                format!(
                    "incompatible shapes {:?} and {:?}",
                    self.shape(),
                    other.shape()
                ),
            )),
        }
    }

    /// Outer product of two vectors: `[m] x [n] -> [m,n]`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 1 || other.shape().len() != 1 {
            return Err(CoreError::dim(
                "outer",
                format!(
                    "expects two vectors, got {:?} and {:?}",
                    self.shape(),
                    other.shape()
                ),
            ));
        }
        let (m, n) = (self.len(), other.len());
        let values = self.with_values(|a| {
            other.with_values(|b| {
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = a[i] * b[j];
                    }
                }
                out
            })
        });
        Tensor::from_op(
            vec![m, n],
            values,
            GradFn::Outer {
                lhs: self.clone(),
                rhs: other.clone(),
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let total = self.with_values(|x| x.iter().sum());
        Tensor::from_op(
            vec![],
            vec![total],
            GradFn::Sum {
                parent: self.clone(),
            },
        )
    }

    /// Arithmetic mean of all elements, as a scalar.
    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(CoreError::domain("mean", "empty tensor".to_string()));
        }
        let total: f64 = self.with_values(|x| x.iter().sum());
        let n = self.len() as f64;
        Tensor::from_op(
            vec![],
            vec![total / n],
            GradFn::Mean {
                parent: self.clone(),
            },
        )
    }

    /// Maximum over all elements, as a scalar. Gradient flows to the first
    /// maximal element only.
    pub fn reduce_max(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(CoreError::domain("reduce_max", "empty tensor".to_string()));
        }
        let (argmax, max) = self.with_values(|x| {
            let mut arg = 0;
            let mut best = x[0];
            for (i, &v) in x.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            (arg, best)
        });
        Tensor::from_op(
            vec![],
            vec![max],
            GradFn::ReduceMax {
                parent: self.clone(),
                argmax,
            },
        )
    }

    /// Inner product of two equal-length vectors, as a scalar.
    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(other)?.sum()
    }

    /// Normalizes a vector to zero mean and unit variance (population
    /// variance, stabilized by `eps`), then applies the elementwise affine
    /// transform `gain * xhat + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        if self.shape().len() != 1 {
            return Err(CoreError::dim(
                "layer_norm",
                format!("expects a vector, got shape {:?}", self.shape()),
            ));
        }
        if self.is_empty() {
            return Err(CoreError::domain(
                "layer_norm",
                "zero-length input".to_string(),
            ));
        }
        if gain.shape() != self.shape() || bias.shape() != self.shape() {
            return Err(CoreError::dim(
                "layer_norm",
                format!(
                    "input {:?}, gain {:?}, bias {:?} must agree",
                    self.shape(),
                    gain.shape(),
                    bias.shape()
                ),
            ));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(CoreError::domain(
                "layer_norm",
                format!("eps must be positive, got {eps}"),
            ));
        }
        let n = self.len() as f64;
        let values = self.with_values(|x| {
            gain.with_values(|g| {
                bias.with_values(|b| {
                    let mu = x.iter().sum::<f64>() / n;
                    let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| (v - mu) * inv_std * g[i] + b[i])
                        .collect()
                })
            })
        });
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            GradFn::LayerNorm {
                input: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                eps,
            },
        )
    }
}

/// Concatenates tensors (flattened, in order) into one vector.
pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(CoreError::dim("concat", "no tensors given".to_string()));
    }
    let total: usize = parts.iter().map(Tensor::len).sum();
    let mut values = Vec::with_capacity(total);
    for part in parts {
        part.with_values(|x| values.extend_from_slice(x));
    }
    Tensor::from_op(
        vec![total],
        values,
        GradFn::Concat {
            parents: parts.to_vec(),
        },
    )
}
