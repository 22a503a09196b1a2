use crate::{DiffError, ParamId, ParamStore, Real, Result, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MulConst(Var, Tensor<T>),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    SegmentMean(Var, Vec<Vec<usize>>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    RowDot(Var, Var),
    Reshape(Var),
    LogSigmoid(Var),
    Ln(Var),
    LogSumExpRows(Var),
    L2NormalizeRows(Var, Vec<f64>),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of a forward computation.
///
/// Nodes are appended in evaluation order, so the reverse of insertion order
/// is a valid topological order for backpropagation.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
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

    /// Gradient of the last `backward` call with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A leaf whose gradient is tracked (readable through [`Graph::grad`]).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Copies the current value of a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(DiffError::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::ZERO; n * m];
        let mut acc = vec![0f64; m];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..n {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..k {
                let x = ad[i * k + p].to_f64();
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (a, &w) in acc.iter_mut().zip(brow) {
                    *a += x * w.to_f64();
                }
            }
            for (o, &a) in out[i * m..(i + 1) * m].iter_mut().zip(&acc) {
                *o = T::from_f64(a);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), needs))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.cols();
        if bv.numel() != c {
            return Err(DiffError::shape(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        let bd = bv.data();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bd) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), needs))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < T::ZERO {
                *v = T::ZERO
            }
        });
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    /// Normalizes each column by the batch mean and biased batch variance.
    ///
    /// Returns the output together with the batch mean and unbiased batch
    /// variance, for running-statistics updates by the caller.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if n < 2 {
            return Err(DiffError::BatchTooSmall(n));
        }
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(DiffError::shape("batchnorm", "gamma/beta size"));
        }
        let mut mean = vec![0f64; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v.to_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0f64; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                let d = v.to_f64() - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|s| 1.0 / (s / n as f64 + eps).sqrt())
            .collect();
        let unbiased: Vec<f64> = var.iter().map(|s| s / (n - 1) as f64).collect();
        let g = self.value(gamma).to_f64_vec();
        let b = self.value(beta).to_f64_vec();
        let mut xhat = vec![0f64; n * c];
        let mut out = vec![T::ZERO; n * c];
        for r in 0..n {
            for j in 0..c {
                let h = (xv.row(r)[j].to_f64() - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = T::from_f64(g[j] * h + b[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let y = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        );
        Ok((y, mean, unbiased))
    }

    /// Normalizes with fixed statistics (inference mode).
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if mean.len() != c || var.len() != c || self.value(gamma).numel() != c {
            return Err(DiffError::shape("batchnorm", "statistics size"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).to_f64_vec();
        let b = self.value(beta).to_f64_vec();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = T::from_f64(g[j] * (o.to_f64() - mean[j]) * inv_std[j] + b[j]);
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            needs,
        ))
    }

    /// Elementwise product with a constant tensor of the same shape (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != c.numel() {
            return Err(DiffError::shape("mul_const", "size"));
        }
        let mut out = xv.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= m;
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::MulConst(x, c), needs))
    }

    /// Selects rows by index (rows may repeat). Embedding lookup is a gather on a table.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(DiffError::shape(
                "gather",
                format!("index {bad} out of {rows} rows"),
            ));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(xv.row(i));
        }
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather(x, idx), needs))
    }

    pub fn embedding_lookup(
        &mut self,
        store: &ParamStore<T>,
        table: ParamId,
        idx: Vec<usize>,
    ) -> Result<Var> {
        let t = self.param(store, table);
        self.gather(t, idx)
    }

    /// Stacks tensors along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::shape("concat_rows", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != tail.len() + 1 || v.shape()[1..] != tail[..] {
                return Err(DiffError::shape(
                    "concat_rows",
                    format!("{:?} vs trailing {:?}", v.shape(), tail),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), needs))
    }

    /// Row `r` of the output is the mean of the input rows listed in `segments[r]`.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut out = vec![T::ZERO; segments.len() * c];
        let mut acc = vec![0f64; c];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(DiffError::shape("segment_mean", "empty segment"));
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &r in seg {
                if r >= rows {
                    return Err(DiffError::shape("segment_mean", "row index"));
                }
                for (a, v) in acc.iter_mut().zip(xv.row(r)) {
                    *a += v.to_f64();
                }
            }
            let k = seg.len() as f64;
            for (o, a) in out[s * c..(s + 1) * c].iter_mut().zip(&acc) {
                *o = T::from_f64(a / k);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![segments.len(), c], out)?,
            Op::SegmentMean(x, segments),
            needs,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(DiffError::shape(
                op,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a) || self.needs(b);
        self.push(t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::from_f64(scale * v.to_f64() + shift));
        let needs = self.needs(x);
        self.push(out, Op::Affine(x, scale), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    /// Per-row dot products of two `[n, d]` tensors, giving `[n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.rows();
        let out: Vec<T> = (0..n)
            .map(|r| {
                let s: f64 = av
                    .row(r)
                    .iter()
                    .zip(bv.row(r))
                    .map(|(x, y)| x.to_f64() * y.to_f64())
                    .sum();
                T::from_f64(s)
            })
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::vector(out), Op::RowDot(a, b), needs))
    }

    /// Full inner product of two same-shaped tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// `ln σ(x)`, computed without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::from_f64(log_sigmoid(v.to_f64())));
        let needs = self.needs(x);
        self.push(out, Op::LogSigmoid(x), needs)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::from_f64(v.to_f64().ln()));
        let needs = self.needs(x);
        self.push(out, Op::Ln(x), needs)
    }

    /// Row-wise log-sum-exp of an `[n, m]` tensor with max subtraction, giving `[n]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<T> = (0..xv.rows())
            .map(|r| {
                let row = xv.row(r);
                let mx = row
                    .iter()
                    .map(|v| v.to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|v| (v.to_f64() - mx).exp()).sum();
                T::from_f64(mx + s.ln())
            })
            .collect();
        let needs = self.needs(x);
        self.push(Tensor::vector(out), Op::LogSumExpRows(x), needs)
    }

    /// Divides each row by its Euclidean norm (floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row
                .iter()
                .map(|v| v.to_f64() * v.to_f64())
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            row.iter_mut().for_each(|v| *v = T::from_f64(v.to_f64() / n));
            norms.push(n);
        }
        let needs = self.needs(x);
        self.push(out, Op::L2NormalizeRows(x, norms), needs)
    }

    /// `max(x, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if v.to_f64() < lo {
                *v = T::from_f64(lo)
            }
        });
        let needs = self.needs(x);
        self.push(out, Op::ClampMin(x, lo), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|v| v.to_f64()).sum::<f64>() / v.numel().max(1) as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), needs)
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagates from a scalar node, adding parameter gradients into `store`.
    ///
    /// Gradients accumulate across calls until [`ParamStore::zero_grad`] or an
    /// optimizer step clears them.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(DiffError::NoTape("an empty graph"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(DiffError::NoTape("a variable from another graph"));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(DiffError::shape("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::full(&shape, T::ONE));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            let needs = |v: Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Constant | Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.grad.numel() != gy.numel() {
                        return Err(DiffError::shape("backward", "parameter changed shape"));
                    }
                    p.grad.add_assign(&gy);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let (ad, bd, gd) = (av.data(), bv.data(), gy.data());
                    if needs(*a) {
                        let mut da = vec![T::ZERO; n * k];
                        for r in 0..n {
                            let grow = &gd[r * m..(r + 1) * m];
                            for p in 0..k {
                                let brow = &bd[p * m..(p + 1) * m];
                                let s: f64 = grow
                                    .iter()
                                    .zip(brow)
                                    .map(|(g, w)| g.to_f64() * w.to_f64())
                                    .sum();
                                da[r * k + p] = T::from_f64(s);
                            }
                        }
                        Self::accumulate(&mut grads, *a, Tensor::new(vec![n, k], da)?);
                    }
                    if needs(*b) {
                        let mut db = vec![0f64; k * m];
                        for r in 0..n {
                            let grow = &gd[r * m..(r + 1) * m];
                            for p in 0..k {
                                let x = ad[r * k + p].to_f64();
                                if x == 0.0 {
                                    continue;
                                }
                                for (d, g) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                    *d += x * g.to_f64();
                                }
                            }
                        }
                        let db = db.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *b, Tensor::new(vec![k, m], db)?);
                    }
                }
                Op::AddBias(x, b) => {
                    if needs(*b) {
                        let c = gy.cols();
                        let mut db = vec![0f64; c];
                        for r in 0..gy.rows() {
                            for (d, g) in db.iter_mut().zip(gy.row(r)) {
                                *d += g.to_f64();
                            }
                        }
                        let shape = val(*b).shape().to_vec();
                        let db = db.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *b, Tensor::new(shape, db)?);
                    }
                    if needs(*x) {
                        Self::accumulate(&mut grads, *x, gy);
                    }
                }
                Op::Relu(x) => {
                    let mut g = gy;
                    for (gv, &yv) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if yv <= T::ZERO {
                            *gv = T::ZERO;
                        }
                    }
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, c) = (gy.rows(), gy.cols());
                    let gam = val(*gamma).to_f64_vec();
                    let mut dgamma = vec![0f64; c];
                    let mut dbeta = vec![0f64; c];
                    let mut sum_dxhat = vec![0f64; c];
                    let mut sum_dxhat_xhat = vec![0f64; c];
                    for r in 0..n {
                        for j in 0..c {
                            let g = gy.row(r)[j].to_f64();
                            let h = xhat[r * c + j];
                            dgamma[j] += g * h;
                            dbeta[j] += g;
                            let dh = g * gam[j];
                            sum_dxhat[j] += dh;
                            sum_dxhat_xhat[j] += dh * h;
                        }
                    }
                    if needs(*x) {
                        let nf = n as f64;
                        let mut dx = vec![T::ZERO; n * c];
                        for r in 0..n {
                            for j in 0..c {
                                let dh = gy.row(r)[j].to_f64() * gam[j];
                                let h = xhat[r * c + j];
                                dx[r * c + j] = T::from_f64(
                                    inv_std[j] / nf
                                        * (nf * dh - sum_dxhat[j] - h * sum_dxhat_xhat[j]),
                                );
                            }
                        }
                        let shape = val(*x).shape().to_vec();
                        Self::accumulate(&mut grads, *x, Tensor::new(shape, dx)?);
                    }
                    if needs(*gamma) {
                        let shape = val(*gamma).shape().to_vec();
                        let d = dgamma.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *gamma, Tensor::new(shape, d)?);
                    }
                    if needs(*beta) {
                        let shape = val(*beta).shape().to_vec();
                        let d = dbeta.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *beta, Tensor::new(shape, d)?);
                    }
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let (n, c) = (gy.rows(), gy.cols());
                    let gam = val(*gamma).to_f64_vec();
                    let xv = val(*x);
                    let mut dgamma = vec![0f64; c];
                    let mut dbeta = vec![0f64; c];
                    let mut dx = vec![T::ZERO; n * c];
                    for r in 0..n {
                        for j in 0..c {
                            let g = gy.row(r)[j].to_f64();
                            dgamma[j] += g * (xv.row(r)[j].to_f64() - mean[j]) * inv_std[j];
                            dbeta[j] += g;
                            dx[r * c + j] = T::from_f64(g * gam[j] * inv_std[j]);
                        }
                    }
                    if needs(*x) {
                        let shape = xv.shape().to_vec();
                        Self::accumulate(&mut grads, *x, Tensor::new(shape, dx)?);
                    }
                    if needs(*gamma) {
                        let shape = val(*gamma).shape().to_vec();
                        let d = dgamma.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *gamma, Tensor::new(shape, d)?);
                    }
                    if needs(*beta) {
                        let shape = val(*beta).shape().to_vec();
                        let d = dbeta.into_iter().map(T::from_f64).collect();
                        Self::accumulate(&mut grads, *beta, Tensor::new(shape, d)?);
                    }
                }
                Op::MulConst(x, c) => {
                    let mut g = gy;
                    for (gv, &m) in g.data_mut().iter_mut().zip(c.data()) {
                        *gv *= m;
                    }
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::Gather(x, idx) => {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut dx = vec![0f64; xv.numel()];
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, g) in dx[src * c..(src + 1) * c].iter_mut().zip(gy.row(r)) {
                            *d += g.to_f64();
                        }
                    }
                    let dx = dx.into_iter().map(T::from_f64).collect();
                    Self::accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        let n = pv.numel();
                        if needs(p) {
                            let slice = gy.data()[offset..offset + n].to_vec();
                            Self::accumulate(&mut grads, p, Tensor::new(pv.shape().to_vec(), slice)?);
                        }
                        offset += n;
                    }
                }
                Op::SegmentMean(x, segments) => {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut dx = vec![0f64; xv.numel()];
                    for (s, seg) in segments.iter().enumerate() {
                        let k = seg.len() as f64;
                        for &r in seg {
                            for (d, g) in dx[r * c..(r + 1) * c].iter_mut().zip(gy.row(s)) {
                                *d += g.to_f64() / k;
                            }
                        }
                    }
                    let dx = dx.into_iter().map(T::from_f64).collect();
                    Self::accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, gy.clone());
                    }
                    if needs(*b) {
                        Self::accumulate(&mut grads, *b, gy);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        Self::accumulate(&mut grads, *a, gy.clone());
                    }
                    if needs(*b) {
                        let mut g = gy;
                        g.data_mut().iter_mut().for_each(|v| *v = -*v);
                        Self::accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let mut g = gy.clone();
                        for (gv, &bv) in g.data_mut().iter_mut().zip(val(*b).data()) {
                            *gv *= bv;
                        }
                        Self::accumulate(&mut grads, *a, g);
                    }
                    if needs(*b) {
                        let mut g = gy;
                        for (gv, &av) in g.data_mut().iter_mut().zip(val(*a).data()) {
                            *gv *= av;
                        }
                        Self::accumulate(&mut grads, *b, g);
                    }
                }
                Op::Affine(x, scale) => {
                    let mut g = gy;
                    g.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = T::from_f64(v.to_f64() * scale));
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if needs(*a) {
                        let mut da = bv.clone();
                        for r in 0..da.rows() {
                            let g = gy.data()[r];
                            da.row_mut(r).iter_mut().for_each(|v| *v *= g);
                        }
                        Self::accumulate(&mut grads, *a, da);
                    }
                    if needs(*b) {
                        let mut db = av.clone();
                        for r in 0..db.rows() {
                            let g = gy.data()[r];
                            db.row_mut(r).iter_mut().for_each(|v| *v *= g);
                        }
                        Self::accumulate(&mut grads, *b, db);
                    }
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    Self::accumulate(&mut grads, *x, gy.reshape(shape)?);
                }
                Op::LogSigmoid(x) => {
                    let mut g = gy;
                    for (gv, xv) in g.data_mut().iter_mut().zip(val(*x).data()) {
                        *gv = T::from_f64(gv.to_f64() * sigmoid(-xv.to_f64()));
                    }
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::Ln(x) => {
                    let mut g = gy;
                    for (gv, xv) in g.data_mut().iter_mut().zip(val(*x).data()) {
                        *gv = T::from_f64(gv.to_f64() / xv.to_f64());
                    }
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::LogSumExpRows(x) => {
                    let xv = val(*x);
                    let mut dx = xv.clone();
                    for r in 0..xv.rows() {
                        let lse = node.value.data()[r].to_f64();
                        let g = gy.data()[r].to_f64();
                        dx.row_mut(r)
                            .iter_mut()
                            .for_each(|v| *v = T::from_f64(g * (v.to_f64() - lse).exp()));
                    }
                    Self::accumulate(&mut grads, *x, dx);
                }
                Op::L2NormalizeRows(x, norms) => {
                    let y = &node.value;
                    let mut dx = gy.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = gy.row(r);
                        let proj: f64 = yr
                            .iter()
                            .zip(gr)
                            .map(|(a, b)| a.to_f64() * b.to_f64())
                            .sum();
                        for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = T::from_f64((gv.to_f64() - yv.to_f64() * proj) / norms[r]);
                        }
                    }
                    Self::accumulate(&mut grads, *x, dx);
                }
                Op::ClampMin(x, lo) => {
                    let mut g = gy;
                    for (gv, xv) in g.data_mut().iter_mut().zip(val(*x).data()) {
                        if xv.to_f64() <= *lo {
                            *gv = T::ZERO;
                        }
                    }
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::Sum(x) => {
                    let shape = val(*x).shape().to_vec();
                    Self::accumulate(&mut grads, *x, Tensor::full(&shape, gy.data()[0]));
                }
                Op::Mean(x) => {
                    let xv = val(*x);
                    let g = T::from_f64(gy.data()[0].to_f64() / xv.numel().max(1) as f64);
                    Self::accumulate(&mut grads, *x, Tensor::full(xv.shape(), g));
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
