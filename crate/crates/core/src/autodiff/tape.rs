use std::borrow::Cow;

use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};
use crate::geometry::PlanarPose;

/// Below this `|(sin, cos)|` a rotation parameter pair is rejected.
pub const MIN_ROTATION_NORM: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    RowNorm(Var),
    MaxOverRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    RepeatRows(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Chamfer {
        x: Var,
        y: Var,
        grad_x: Vec<f64>,
        grad_y: Vec<f64>,
    },
    PoseLoss {
        params: Var,
        grad: [f64; 4],
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::RowNorm(..) => "row_norm",
            Op::MaxOverRows(..) => "max_over_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Chamfer { .. } => "chamfer",
            Op::PoseLoss { .. } => "pose_loss",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order for a single reverse sweep.
///
/// Leaves may borrow their tensors (`'a`), so registering model weights costs
/// nothing. A tape is single-threaded; use one tape per concurrent evaluation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Leaf gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf that requires it. Leaves that do not reach the loss
    /// carry an explicit zero tensor.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let (r, c) = t.dims2().expect("engine tensors are rank <= 2");
    Tensor::from_parts(r, c, t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = a.dims2().expect("engine tensors are rank <= 2");
    Tensor::from_parts(r, c, a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} produced a non-finite value at tape node {}",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Result<Var> {
        value.dims2()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("leaf {} is not finite", self.nodes.len())));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf borrowing its storage.
    pub fn param(&mut self, t: &'a Tensor) -> Result<Var> {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Trainable leaf owning its storage.
    pub fn param_owned(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(Cow::Owned(t), true)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Result<Var> {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    /// Detached copy of a value: same numbers, no gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2().expect("recorded values are rank <= 2")
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::ShapeMismatch(format!("{op}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul: {m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            MatRef::normal(self.value(a).data(), k),
            MatRef::normal(self.value(b).data(), n),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(m, n, out), Op::MatMul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Adds a `1 x d` bias to every row of an `n x d` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let ((n, d), bd) = (self.dims(x), self.dims(bias));
        if bd != (1, d) {
            return Err(Error::ShapeMismatch(format!("add_bias: {n}x{d} + {bd:?}")));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(d.max(1)) {
            row.iter_mut().zip(b).for_each(|(o, &bb)| *o += bb);
        }
        let rg = self.rg(&[x, bias]);
        self.push(Tensor::from_parts(n, d, out), Op::AddBias(x, bias), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Elementwise `scale * x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        let out = map(self.value(x), |v| scale * v + offset);
        let rg = self.rg(&[x]);
        self.push(out, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::exp);
        let rg = self.rg(&[x]);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::ln);
        let rg = self.rg(&[x]);
        self.push(out, Op::Log(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| v * v);
        let rg = self.rg(&[x]);
        self.push(out, Op::Square(x), rg)
    }

    /// Euclidean norm of every row: `n x d -> n x 1`.
    pub fn sqrt_norm(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let out = self
            .value(x)
            .data()
            .chunks_exact(d.max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        let out = if d == 0 { vec![0.0; n] } else { out };
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(n, 1, out), Op::RowNorm(x), rg)
    }

    /// Per-column maximum over rows: `n x d -> 1 x d`. The first maximal row wins.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        if n == 0 {
            return Err(Error::DegenerateInput("max over zero rows".into()));
        }
        let data = self.value(x).data();
        let mut best = data[..d].to_vec();
        let mut arg = vec![0usize; d];
        for (i, row) in data.chunks_exact(d.max(1)).enumerate().skip(1) {
            for j in 0..d {
                if row[j] > best[j] {
                    best[j] = row[j];
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(1, d, best), Op::MaxOverRows(x, arg), rg)
    }

    /// `[a | b]` for `n x p` and `n x q`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((n, p), (n2, q)) = (self.dims(a), self.dims(b));
        if n != n2 {
            return Err(Error::ShapeMismatch(format!("concat: {n}x{p} | {n2}x{q}")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&da[i * p..(i + 1) * p]);
            out.extend_from_slice(&db[i * q..(i + 1) * q]);
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::from_parts(n, p + q, out), Op::ConcatCols(a, b), rg)
    }

    /// Tiles a `1 x d` row into `n x d`.
    pub fn repeat_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let (r, d) = self.dims(v);
        if r != 1 {
            return Err(Error::ShapeMismatch(format!("repeat_rows expects one row, got {r}")));
        }
        let row = self.value(v).data();
        let out = (0..n).flat_map(|_| row.iter().copied()).collect();
        let rg = self.rg(&[v]);
        self.push(Tensor::from_parts(n, d, out), Op::RepeatRows(v), rg)
    }

    pub fn reshape(&mut self, v: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(v).reshaped(vec![rows, cols])?;
        let rg = self.rg(&[v]);
        self.push(t, Op::Reshape(v), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(1, 1, vec![s]), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::DegenerateInput("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::from_parts(1, 1, vec![m]), Op::Mean(x), rg)
    }

    /// Symmetric Chamfer distance between `x (n x 3)` and `y (m x 3)` with
    /// unsquared Euclidean terms. Nearest neighbors are frozen at forward time;
    /// ties go to the lowest index and coincident pairs get zero gradient.
    pub fn chamfer(&mut self, x: Var, y: Var) -> Result<Var> {
        let ((n, dx), (m, dy)) = (self.dims(x), self.dims(y));
        if dx != 3 || dy != 3 {
            return Err(Error::ShapeMismatch(format!("chamfer expects n x 3 inputs, got {n}x{dx} and {m}x{dy}")));
        }
        if n == 0 || m == 0 {
            return Err(Error::DegenerateInput("chamfer on an empty cloud".into()));
        }
        let (xs, ys) = (self.value(x).data(), self.value(y).data());
        let mut best_x = vec![(usize::MAX, f64::INFINITY); n];
        let mut best_y = vec![(usize::MAX, f64::INFINITY); m];
        for i in 0..n {
            let p = &xs[i * 3..i * 3 + 3];
            for (j, by) in best_y.iter_mut().enumerate() {
                let q = &ys[j * 3..j * 3 + 3];
                let (a, b, c) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                let d2 = a * a + b * b + c * c;
                if d2 < best_x[i].1 {
                    best_x[i] = (j, d2);
                }
                if d2 < by.1 {
                    *by = (i, d2);
                }
            }
        }
        let dist_x: Vec<f64> = best_x.iter().map(|b| b.1.sqrt()).collect();
        let dist_y: Vec<f64> = best_y.iter().map(|b| b.1.sqrt()).collect();
        let value = dist_x.iter().sum::<f64>() / n as f64 + dist_y.iter().sum::<f64>() / m as f64;

        let mut grad_x = vec![0.0; n * 3];
        let mut grad_y = vec![0.0; m * 3];
        let pair_grad = |i: usize, j: usize, d: f64, w: f64, gx: &mut [f64], gy: &mut [f64]| {
            if d > 0.0 {
                for k in 0..3 {
                    let g = w * (xs[i * 3 + k] - ys[j * 3 + k]) / d;
                    gx[i * 3 + k] += g;
                    gy[j * 3 + k] -= g;
                }
            }
        };
        for i in 0..n {
            pair_grad(i, best_x[i].0, dist_x[i], 1.0 / n as f64, &mut grad_x, &mut grad_y);
        }
        for j in 0..m {
            pair_grad(best_y[j].0, j, dist_y[j], 1.0 / m as f64, &mut grad_x, &mut grad_y);
        }
        let rg = self.rg(&[x, y]);
        self.push(
            Tensor::from_parts(1, 1, vec![value]),
            Op::Chamfer { x, y, grad_x, grad_y },
            rg,
        )
    }

    /// Pose loss for a pose parameterized as `(tx, ty, s, c)` with `(s, c)` an
    /// unnormalized sine/cosine pair, against `t_gt` over the rows of
    /// `x_gt (m x 3)`. Only the planar part is estimated: the estimate shares
    /// the reference's vertical offset, so the vertical term vanishes.
    pub fn pose_loss(&mut self, params: Var, t_gt: &PlanarPose, x_gt: &Tensor) -> Result<Var> {
        if self.value(params).numel() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "pose parameters must have 4 entries, got {:?}",
                self.value(params).shape()
            )));
        }
        let (m, d) = x_gt.dims2()?;
        if d != 3 {
            return Err(Error::ShapeMismatch(format!("pose loss points must be m x 3, got {m}x{d}")));
        }
        if m == 0 {
            return Err(Error::DegenerateInput("pose loss over an empty cloud".into()));
        }
        let p = self.value(params).data();
        let (tx, ty, s, c) = (p[0], p[1], p[2], p[3]);
        let norm = (s * s + c * c).sqrt();
        if norm < MIN_ROTATION_NORM {
            return Err(Error::DegenerateRotation { norm });
        }
        let (sn, cn) = (s / norm, c / norm);
        let (sg, cg) = t_gt.theta.sin_cos();
        let mut loss = 0.0;
        let mut g_t = [0.0f64; 2];
        let mut g_sc = [0.0f64; 2];
        for pt in x_gt.data().chunks_exact(3) {
            let (dx, dy) = (pt[0] - tx, pt[1] - ty);
            let a = [cn * dx + sn * dy, -sn * dx + cn * dy];
            let (gx, gy) = (pt[0] - t_gt.t[0], pt[1] - t_gt.t[1]);
            let b = [cg * gx + sg * gy, -sg * gx + cg * gy];
            let e = [a[0] - b[0], a[1] - b[1]];
            loss += e[0] * e[0] + e[1] * e[1];
            g_t[0] += e[0] * -cn + e[1] * sn;
            g_t[1] += e[0] * -sn + e[1] * -cn;
            g_sc[0] += e[0] * dy - e[1] * dx;
            g_sc[1] += e[0] * dx + e[1] * dy;
        }
        let k = 2.0 / m as f64;
        let n3 = norm * norm * norm;
        let grad = [
            k * g_t[0],
            k * g_t[1],
            k * (g_sc[0] * c * c / n3 - g_sc[1] * s * c / n3),
            k * (-g_sc[0] * s * c / n3 + g_sc[1] * s * s / n3),
        ];
        let rg = self.rg(&[params]);
        self.push(
            Tensor::from_parts(1, 1, vec![loss / m as f64]),
            Op::PoseLoss { params, grad },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::from_parts(1, 1, vec![1.0]));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[i].is_none() {
                    let (r, c) = node.value.dims2()?;
                    grads[i] = Some(Tensor::from_parts(r, c, vec![0.0; r * c]));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(t),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (val(*a).dims2()?, val(*b).dims2()?);
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, MatRef::normal(g.data(), n), MatRef::transposed(val(*b).data(), n), 0.0, &mut da);
                    send(*a, Tensor::from_parts(m, k, da), grads);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, MatRef::transposed(val(*a).data(), k), MatRef::normal(g.data(), n), 0.0, &mut db);
                    send(*b, Tensor::from_parts(k, n, db), grads);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, map(g, |v| -v), grads);
            }
            Op::AddBias(x, b) => {
                let (_, d) = g.dims2()?;
                let mut db = vec![0.0; d];
                for row in g.data().chunks_exact(d.max(1)) {
                    db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                send(*x, g.clone(), grads);
                send(*b, Tensor::from_parts(1, d, db), grads);
            }
            Op::Mul(a, b) => {
                send(*a, zip(g, val(*b), |x, y| x * y), grads);
                send(*b, zip(g, val(*a), |x, y| x * y), grads);
            }
            Op::Affine(x, s) => send(*x, map(g, |v| v * s), grads),
            Op::Sigmoid(x) => send(*x, zip(g, out, |gv, y| gv * y * (1.0 - y)), grads),
            Op::Tanh(x) => send(*x, zip(g, out, |gv, y| gv * (1.0 - y * y)), grads),
            Op::Relu(x) => send(*x, zip(g, out, |gv, y| if y > 0.0 { gv } else { 0.0 }), grads),
            Op::Exp(x) => send(*x, zip(g, out, |gv, y| gv * y), grads),
            Op::Log(x) => send(*x, zip(g, val(*x), |gv, v| gv / v), grads),
            Op::Square(x) => send(*x, zip(g, val(*x), |gv, v| 2.0 * gv * v), grads),
            Op::RowNorm(x) => {
                let xv = val(*x);
                let (n, d) = xv.dims2()?;
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let norm = out.data()[i];
                    if norm > 0.0 {
                        for k in 0..d {
                            dx[i * d + k] = g.data()[i] * xv.data()[i * d + k] / norm;
                        }
                    }
                }
                send(*x, Tensor::from_parts(n, d, dx), grads);
            }
            Op::MaxOverRows(x, arg) => {
                let (n, d) = val(*x).dims2()?;
                let mut dx = vec![0.0; n * d];
                for (j, &i) in arg.iter().enumerate() {
                    dx[i * d + j] += g.data()[j];
                }
                send(*x, Tensor::from_parts(n, d, dx), grads);
            }
            Op::ConcatCols(a, b) => {
                let ((n, p), (_, q)) = (val(*a).dims2()?, val(*b).dims2()?);
                let mut da = Vec::with_capacity(n * p);
                let mut db = Vec::with_capacity(n * q);
                for row in g.data().chunks_exact((p + q).max(1)) {
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                send(*a, Tensor::from_parts(n, p, da), grads);
                send(*b, Tensor::from_parts(n, q, db), grads);
            }
            Op::RepeatRows(v) => {
                let (_, d) = val(*v).dims2()?;
                let mut dv = vec![0.0; d];
                for row in g.data().chunks_exact(d.max(1)) {
                    dv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                send(*v, Tensor::from_parts(1, d, dv), grads);
            }
            Op::Reshape(v) => send(*v, g.reshaped(val(*v).shape().to_vec())?, grads),
            Op::Sum(x) => {
                let (r, c) = val(*x).dims2()?;
                send(*x, Tensor::from_parts(r, c, vec![g.data()[0]; r * c]), grads);
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).dims2()?;
                let v = g.data()[0] / (r * c) as f64;
                send(*x, Tensor::from_parts(r, c, vec![v; r * c]), grads);
            }
            Op::Chamfer { x, y, grad_x, grad_y } => {
                let s = g.data()[0];
                let (n, m) = (grad_x.len() / 3, grad_y.len() / 3);
                send(*x, Tensor::from_parts(n, 3, grad_x.iter().map(|v| v * s).collect()), grads);
                send(*y, Tensor::from_parts(m, 3, grad_y.iter().map(|v| v * s).collect()), grads);
            }
            Op::PoseLoss { params, grad } => {
                let s = g.data()[0];
                let shape = val(*params).shape().to_vec();
                send(*params, Tensor::new(shape, grad.iter().map(|v| v * s).collect())?, grads);
            }
        }
        Ok(())
    }
}
