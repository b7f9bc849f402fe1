use super::{gemm, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(String),
    Dense { x: Var, w: Var, b: Var },
    Conv1d { x: Var, k: Var, b: Option<Var>, stride: usize },
    LeakyRelu { x: Var, alpha: T },
    Sigmoid { x: Var },
    Upsample2 { x: Var },
    Reshape { x: Var },
    Crop { x: Var, start: usize },
    GradReverse { x: Var, beta: T },
    WeightedBce { p: Var, labels: Vec<T>, weights: Vec<T> },
    WeightedMse { pred: Var, target: Vec<T>, weights: Vec<T> },
    VarianceSum { x: Var },
    AbsDev { x: Var, target: T },
    Scale { x: Var, c: T },
    Add { a: Var, b: Var },
    SumSquares { x: Var },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Dense { .. } => "dense",
            Op::Conv1d { .. } => "conv1d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Upsample2 { .. } => "upsample2",
            Op::Reshape { .. } => "reshape",
            Op::Crop { .. } => "crop",
            Op::GradReverse { .. } => "grad_reverse",
            Op::WeightedBce { .. } => "weighted_bce",
            Op::WeightedMse { .. } => "weighted_mse",
            Op::VarianceSum { .. } => "variance_sum",
            Op::AbsDev { .. } => "abs_dev",
            Op::Scale { .. } => "scale",
            Op::Add { .. } => "add",
            Op::SumSquares { .. } => "sum_squares",
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Probability clamp used by the cross-entropy loss.
const BCE_EPS: f64 = 1e-7;

/// Define-by-run computation tape.
///
/// Every op checks its output for NaN or infinity and fails with
/// [`Error::NonFinite`] instead of propagating it.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().into(),
            });
        }
        let requires_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match *op {
            Op::Input | Op::Param(_) => vec![],
            Op::Dense { x, w, b } => vec![x, w, b],
            Op::Conv1d { x, k, b, .. } => {
                let mut v = vec![x, k];
                v.extend(b);
                v
            }
            Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Upsample2 { x }
            | Op::Reshape { x }
            | Op::Crop { x, .. }
            | Op::GradReverse { x, .. }
            | Op::VarianceSum { x }
            | Op::AbsDev { x, .. }
            | Op::Scale { x, .. }
            | Op::SumSquares { x } => vec![x],
            Op::WeightedBce { p, .. } => vec![p],
            Op::WeightedMse { pred, .. } => vec![pred],
            Op::Add { a, b } => vec![a, b],
        }
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Input)
    }

    /// A trainable leaf copied from `store`.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?
            .clone();
        self.push(t, Op::Param(name.to_string()))
    }

    /// `x[n x d_in] W[d_in x d_out] + b[d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || ws[0] != xs[1] || bs != [ws[1]] {
            return Err(shape_err(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            n,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            (din, 1),
            self.value(w).data(),
            (dout, 1),
            T::one(),
            &mut out,
            (dout, 1),
        );
        self.push(Tensor::new(vec![n, dout], out)?, Op::Dense { x, w, b })
    }

    /// Cross-correlation of `x[n x C_in x L]` with `k[C_out x C_in x K]`
    /// (odd `K`), zero padding `K/2` on both sides, output length
    /// `ceil(L / stride)`, plus an optional per-channel bias.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 3 || ks.len() != 3 || ks[1] != xs[1] || ks[2] % 2 == 0 || stride == 0 {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?}, kernel {ks:?}, stride {stride}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [ks[0]] {
                return Err(shape_err("conv1d", format!("bias {:?}", self.shape(b))));
            }
        }
        let geo = ConvGeometry::new(&xs, &ks, stride);
        let mut out = vec![T::zero(); geo.n * geo.cout * geo.lout];
        let mut cols = vec![T::zero(); geo.rows() * geo.lout];
        let kd = self.value(k).data();
        let xd = self.value(x).data();
        for s in 0..geo.n {
            geo.im2col(&xd[s * geo.cin * geo.lin..(s + 1) * geo.cin * geo.lin], &mut cols);
            let o = &mut out[s * geo.cout * geo.lout..(s + 1) * geo.cout * geo.lout];
            gemm(
                geo.cout,
                geo.rows(),
                geo.lout,
                T::one(),
                kd,
                (geo.rows(), 1),
                &cols,
                (geo.lout, 1),
                T::zero(),
                o,
                (geo.lout, 1),
            );
            if let Some(b) = b {
                let bd = self.value(b).data();
                for (co, row) in o.chunks_mut(geo.lout).enumerate() {
                    row.iter_mut().for_each(|v| *v = *v + bd[co]);
                }
            }
        }
        self.push(
            Tensor::new(vec![geo.n, geo.cout, geo.lout], out)?,
            Op::Conv1d { x, k, b, stride },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let a = T::c(alpha);
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&u| if u >= T::zero() { u } else { a * u })
            .collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::LeakyRelu { x, alpha: a })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&u| stable_sigmoid(u)).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::Sigmoid { x })
    }

    /// Nearest-neighbour upsampling by two along the last axis of `[n x C x L]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err("upsample2", format!("input {s:?}")));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .flat_map(|&u| [u, u])
            .collect();
        let t = Tensor::new(vec![s[0], s[1], 2 * s[2]], data)?;
        self.push(t, Op::Upsample2 { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape { x })
    }

    /// Keeps `len` positions of the last axis starting at `start`.
    pub fn crop(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let last = *s.last().unwrap_or(&0);
        if s.is_empty() || start + len > last {
            return Err(shape_err(
                "crop",
                format!("window {start}+{len} on shape {s:?}"),
            ));
        }
        let data = self
            .value(x)
            .data()
            .chunks(last)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s.clone();
        *shape.last_mut().expect("non-empty") = len;
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::Crop { x, start })
    }

    /// Identity forward; multiplies the incoming gradient by `-beta`.
    pub fn grad_reverse(&mut self, x: Var, beta: f64) -> Result<Var> {
        let t = self.value(x).clone();
        self.push(t, Op::GradReverse { x, beta: T::c(beta) })
    }

    /// `-mean_i w_i [y_i ln p_i + (1 - y_i) ln(1 - p_i)]` with `p` clamped to
    /// `[1e-7, 1 - 1e-7]`.
    pub fn weighted_bce(&mut self, p: Var, labels: &[f64], weights: &[f64]) -> Result<Var> {
        let n = self.value(p).len();
        if labels.len() != n || weights.len() != n || n == 0 {
            return Err(shape_err(
                "weighted_bce",
                format!("{n} predictions, {} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        let (lo, hi) = (T::c(BCE_EPS), T::c(1.0 - BCE_EPS));
        let labels: Vec<T> = labels.iter().map(|&v| T::c(v)).collect();
        let weights: Vec<T> = weights.iter().map(|&v| T::c(v)).collect();
        let mut acc = T::zero();
        for ((&pi, &y), &w) in self.value(p).data().iter().zip(&labels).zip(&weights) {
            let q = pi.max(lo).min(hi);
            acc = acc + w * (y * q.ln() + (T::one() - y) * (T::one() - q).ln());
        }
        let loss = -acc / T::c(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::WeightedBce { p, labels, weights },
        )
    }

    /// `mean_i w_i mean_j (pred_ij - target_ij)^2` over rows of `[n x ...]`.
    pub fn weighted_mse(&mut self, pred: Var, target: &Tensor<T>, weights: &[f64]) -> Result<Var> {
        let ps = self.shape(pred).to_vec();
        if ps != target.shape() || ps.is_empty() || weights.len() != ps[0] || ps[0] == 0 {
            return Err(shape_err(
                "weighted_mse",
                format!("pred {ps:?}, target {:?}, {} weights", target.shape(), weights.len()),
            ));
        }
        let n = ps[0];
        let m = target.len() / n;
        let weights: Vec<T> = weights.iter().map(|&v| T::c(v)).collect();
        let pd = self.value(pred).data();
        let mut acc = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            for j in i * m..(i + 1) * m {
                let d = pd[j] - target.data()[j];
                row = row + d * d;
            }
            acc = acc + weights[i] * row / T::c(m as f64);
        }
        let loss = acc / T::c(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::WeightedMse {
                pred,
                target: target.data().to_vec(),
                weights,
            },
        )
    }

    /// Sum over columns of the population variance across rows of `[n x d]`.
    pub fn variance_sum(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(shape_err("variance_sum", format!("input {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let xd = self.value(x).data();
        let means = column_means(xd, n, d);
        let mut total = T::zero();
        for (j, &mu) in means.iter().enumerate() {
            let mut v = T::zero();
            for i in 0..n {
                let e = xd[i * d + j] - mu;
                v = v + e * e;
            }
            total = total + v / T::c(n as f64);
        }
        self.push(Tensor::scalar(total), Op::VarianceSum { x })
    }

    /// `|x - target|` for a scalar `x`; the subgradient at the kink is 0.
    pub fn abs_dev(&mut self, x: Var, target: f64) -> Result<Var> {
        let t = T::c(target);
        let v = self.scalar_of(x, "abs_dev")?;
        self.push(Tensor::scalar((v - t).abs()), Op::AbsDev { x, target: t })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::c(c);
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&u| u * c).collect())?;
        self.push(t, Op::Scale { x, c })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&u, &v)| u + v)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add { a, b })
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum_squares();
        self.push(Tensor::scalar(s), Op::SumSquares { x })
    }

    /// `coefficient * sum ||W||^2` over `params`.
    pub fn l2_penalty(&mut self, params: &[Var], coefficient: f64) -> Result<Var> {
        let mut total: Option<Var> = None;
        for &p in params {
            let s = self.sum_squares(p)?;
            total = Some(match total {
                Some(t) => self.add(t, s)?,
                None => s,
            });
        }
        match total {
            Some(t) => self.scale(t, coefficient),
            None => self.input(Tensor::scalar(T::zero())),
        }
    }

    fn scalar_of(&self, x: Var, op: &str) -> Result<T> {
        let v = self.value(x);
        if v.len() != 1 {
            return Err(shape_err(op, format!("expected a scalar, got {:?}", v.shape())));
        }
        Ok(v.data()[0])
    }

    /// Reverse sweep from the scalar `target`. Gradients for every node that
    /// depends on a parameter become available through [`grad`](Self::grad).
    pub fn backward(&mut self, target: Var) -> Result<()> {
        self.scalar_of(target, "backward")?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[target.0] = Some(Tensor::new(
            self.value(target).shape().to_vec(),
            vec![T::one()],
        )?);
        for i in (0..=target.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("{} (backward)", self.nodes[i].op.name()),
                    });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of all parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(name), Some(g)) = (&node.op, g) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, t: Tensor<T>| {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.shape(x);
                let (n, din, dout) = (xs[0], xs[1], self.shape(w)[1]);
                if self.wants(x) {
                    let mut dx = vec![T::zero(); n * din];
                    gemm(n, dout, din, T::one(), gd, (dout, 1), self.value(w).data(), (1, dout), T::zero(), &mut dx, (din, 1));
                    send(x, Tensor::new(vec![n, din], dx)?);
                }
                if self.wants(w) {
                    let mut dw = vec![T::zero(); din * dout];
                    gemm(din, n, dout, T::one(), self.value(x).data(), (1, din), gd, (dout, 1), T::zero(), &mut dw, (dout, 1));
                    send(w, Tensor::new(vec![din, dout], dw)?);
                }
                if self.wants(b) {
                    let db = column_sums(gd, n, dout);
                    send(b, Tensor::new(vec![dout], db)?);
                }
            }
            Op::Conv1d { x, k, b, stride } => {
                let (x, k, b) = (*x, *k, *b);
                let geo = ConvGeometry::new(self.shape(x), self.shape(k), *stride);
                let xd = self.value(x).data();
                let kd = self.value(k).data();
                let rows = geo.rows();
                let mut dk = vec![T::zero(); geo.cout * rows];
                let mut dx = if self.wants(x) {
                    vec![T::zero(); xd.len()]
                } else {
                    vec![]
                };
                let mut cols = vec![T::zero(); rows * geo.lout];
                let mut dcols = vec![T::zero(); rows * geo.lout];
                for s in 0..geo.n {
                    let go = &gd[s * geo.cout * geo.lout..(s + 1) * geo.cout * geo.lout];
                    if self.wants(k) {
                        geo.im2col(&xd[s * geo.cin * geo.lin..(s + 1) * geo.cin * geo.lin], &mut cols);
                        gemm(geo.cout, geo.lout, rows, T::one(), go, (geo.lout, 1), &cols, (1, geo.lout), T::one(), &mut dk, (rows, 1));
                    }
                    if self.wants(x) {
                        gemm(rows, geo.cout, geo.lout, T::one(), kd, (1, rows), go, (geo.lout, 1), T::zero(), &mut dcols, (geo.lout, 1));
                        geo.col2im(&dcols, &mut dx[s * geo.cin * geo.lin..(s + 1) * geo.cin * geo.lin]);
                    }
                }
                if self.wants(k) {
                    send(k, Tensor::new(vec![geo.cout, geo.cin, geo.kw], dk)?);
                }
                if self.wants(x) {
                    send(x, Tensor::new(vec![geo.n, geo.cin, geo.lin], dx)?);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut db = vec![T::zero(); geo.cout];
                    for (r, row) in gd.chunks(geo.lout).enumerate() {
                        let co = r % geo.cout;
                        db[co] = row.iter().fold(db[co], |a, &v| a + v);
                    }
                    send(b, Tensor::new(vec![geo.cout], db)?);
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let xd = self.value(*x).data();
                let d = xd
                    .iter()
                    .zip(gd)
                    .map(|(&u, &gv)| if u >= T::zero() { gv } else { *alpha * gv })
                    .collect();
                send(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid { x } => {
                let yd = self.nodes[i].value.data();
                let d = yd
                    .iter()
                    .zip(gd)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                send(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Upsample2 { x } => {
                let d = gd.chunks(2).map(|p| p[0] + p[1]).collect();
                send(*x, Tensor::new(self.shape(*x).to_vec(), d)?);
            }
            Op::Reshape { x } => {
                send(*x, g.clone().reshape(self.shape(*x).to_vec())?);
            }
            Op::Crop { x, start } => {
                let xs = self.shape(*x).to_vec();
                let last = *xs.last().expect("non-empty");
                let len = *g.shape().last().expect("non-empty");
                let mut d = vec![T::zero(); xs.iter().product()];
                for (row, src) in d.chunks_mut(last).zip(gd.chunks(len)) {
                    row[*start..*start + len].copy_from_slice(src);
                }
                send(*x, Tensor::new(xs, d)?);
            }
            Op::GradReverse { x, beta } => {
                let d = gd.iter().map(|&v| -*beta * v).collect();
                send(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::WeightedBce { p, labels, weights } => {
                let (lo, hi) = (T::c(BCE_EPS), T::c(1.0 - BCE_EPS));
                let n = T::c(labels.len() as f64);
                let pd = self.value(*p).data();
                let d = pd
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&pi, &y), &w)| {
                        if pi < lo || pi > hi {
                            T::zero()
                        } else {
                            -gd[0] * w * (y / pi - (T::one() - y) / (T::one() - pi)) / n
                        }
                    })
                    .collect();
                send(*p, Tensor::new(self.shape(*p).to_vec(), d)?);
            }
            Op::WeightedMse { pred, target, weights } => {
                let ps = self.shape(*pred).to_vec();
                let n = ps[0];
                let m = target.len() / n;
                let scale = gd[0] * T::c(2.0) / T::c((n * m) as f64);
                let pd = self.value(*pred).data();
                let d = pd
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(j, (&u, &t))| scale * weights[j / m] * (u - t))
                    .collect();
                send(*pred, Tensor::new(ps, d)?);
            }
            Op::VarianceSum { x } => {
                let s = self.shape(*x).to_vec();
                let (n, dim) = (s[0], s[1]);
                let xd = self.value(*x).data();
                let means = column_means(xd, n, dim);
                let c = gd[0] * T::c(2.0) / T::c(n as f64);
                let d = xd
                    .iter()
                    .enumerate()
                    .map(|(j, &u)| c * (u - means[j % dim]))
                    .collect();
                send(*x, Tensor::new(s, d)?);
            }
            Op::AbsDev { x, target } => {
                let u = self.value(*x).data()[0] - *target;
                let sign = if u > T::zero() {
                    T::one()
                } else if u < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                send(*x, Tensor::new(self.shape(*x).to_vec(), vec![sign * gd[0]])?);
            }
            Op::Scale { x, c } => {
                let d = gd.iter().map(|&v| *c * v).collect();
                send(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    send(*a, g.clone());
                }
                if self.wants(*b) {
                    send(*b, g.clone());
                }
            }
            Op::SumSquares { x } => {
                let xd = self.value(*x).data();
                let two = T::c(2.0) * gd[0];
                let d = xd.iter().map(|&u| two * u).collect();
                send(*x, Tensor::new(self.shape(*x).to_vec(), d)?);
            }
        }
        Ok(())
    }
}

/// Logistic function in the branch form that never overflows.
pub(crate) fn stable_sigmoid<T: Real>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

fn column_means<T: Real>(x: &[T], n: usize, d: usize) -> Vec<T> {
    column_sums(x, n, d)
        .into_iter()
        .map(|s| s / T::c(n as f64))
        .collect()
}

fn column_sums<T: Real>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut s = vec![T::zero(); d];
    for row in x.chunks(d).take(n) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    s
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    n: usize,
    cin: usize,
    lin: usize,
    cout: usize,
    kw: usize,
    stride: usize,
    lout: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ks: &[usize], stride: usize) -> Self {
        Self {
            n: xs[0],
            cin: xs[1],
            lin: xs[2],
            cout: ks[0],
            kw: ks[2],
            stride,
            lout: xs[2].div_ceil(stride),
            pad: ks[2] / 2,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.kw
    }

    /// `cols[(ci, t), j] = x[ci, j * stride - pad + t]`, zero outside.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        for ci in 0..self.cin {
            let xrow = &x[ci * self.lin..(ci + 1) * self.lin];
            for t in 0..self.kw {
                let row = &mut cols[(ci * self.kw + t) * self.lout..(ci * self.kw + t + 1) * self.lout];
                for (j, c) in row.iter_mut().enumerate() {
                    let p = (j * self.stride + t) as isize - self.pad as isize;
                    *c = if p >= 0 && (p as usize) < self.lin {
                        xrow[p as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        for ci in 0..self.cin {
            let xrow = &mut x[ci * self.lin..(ci + 1) * self.lin];
            for t in 0..self.kw {
                let row = &cols[(ci * self.kw + t) * self.lout..(ci * self.kw + t + 1) * self.lout];
                for (j, &c) in row.iter().enumerate() {
                    let p = (j * self.stride + t) as isize - self.pad as isize;
                    if p >= 0 && (p as usize) < self.lin {
                        xrow[p as usize] = xrow[p as usize] + c;
                    }
                }
            }
        }
    }
}
