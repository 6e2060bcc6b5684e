//! Reverse-mode differentiation over a fixed set of vector primitives.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] records one forward pass
//! (values plus whatever each primitive needs for its backward rule) and
//! [`Tape::backward`] walks it in reverse, accumulating into the store's
//! gradient buffers. Tapes are single-threaded and cheap to rebuild per batch.

use rand::Rng as _;
use rand_distr::{Distribution, Gumbel};

use crate::error::{check_dim, invalid, DpmmError, Result};
use crate::rng::Rng;

/// Lower/upper clamp applied to probabilities before taking logs in the BCE loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Offset inside the norms of the cosine primitive.
const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Trainable tensor: row-major values and a same-shape gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        check_dim(n, values.len())?;
        Ok(Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: ParamTensor) -> ParamId {
        self.params.push(tensor);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Every parameter value, concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(|p| p.len()).sum();
        check_dim(total, flat.len())?;
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.len();
            p.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var, rows: usize, cols: usize },
    Tanh(Var),
    Sigmoid(Var),
    BceLogit { logit: Var, label: f64, prob: f64 },
    GaussLogPdf { z: Var, mu: Var, log_var: Var },
    Reparam { mu: Var, log_var: Var, eps: Vec<f64> },
    GumbelSoftmax { logits: Var, soft: Vec<f64>, tau: f64 },
    LogSumExp(Var),
    LogSoftmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Log(Var),
    Sum(Var),
    SumMany(Vec<Var>),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    WeightedSum { weights: Var, items: Vec<Var> },
    Cosine(Var, Var),
    KlDiag { q_mu: Var, q_lv: Var, p_mu: Var, p_lv: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Ordered record of primitive applications.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a probability against a {0, 1} label.
pub fn bce_loss(y_hat: f64, label: f64) -> Result<f64> {
    if label != 0.0 && label != 1.0 {
        return Err(invalid(format!("label must be 0 or 1, got {label}")));
    }
    let p = y_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-(label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; earlier handles stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).values.clone(), Op::Param(id))
    }

    /// `W x + b` where `w` is a `[rows, cols]` row-major matrix node.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let cols = self.dim(x);
        let rows = self.dim(b);
        check_dim(rows * cols, self.dim(w))?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut y = bv.to_vec();
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &wv[i * cols..(i + 1) * cols];
            *yi += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(y, Op::Dense { x, w, b, rows, cols }))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(y, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| sigmoid(*v)).collect();
        self.push(y, Op::Sigmoid(x))
    }

    /// BCE of `sigmoid(logit)` against `label`, differentiated with respect to the logit.
    pub fn bce_with_logit(&mut self, logit: Var, label: f64) -> Result<Var> {
        check_dim(1, self.dim(logit))?;
        let prob = sigmoid(self.scalar(logit));
        let loss = bce_loss(prob, label)?;
        Ok(self.push(vec![loss], Op::BceLogit { logit, label, prob }))
    }

    pub fn gauss_log_pdf(&mut self, z: Var, mu: Var, log_var: Var) -> Result<Var> {
        check_dim(self.dim(mu), self.dim(z))?;
        check_dim(self.dim(mu), self.dim(log_var))?;
        let v = crate::math::diag_log_pdf_unchecked(self.value(z), self.value(mu), self.value(log_var));
        Ok(self.push(vec![v], Op::GaussLogPdf { z, mu, log_var }))
    }

    pub fn reparam(&mut self, mu: Var, log_var: Var, eps: Vec<f64>) -> Result<Var> {
        check_dim(self.dim(mu), self.dim(log_var))?;
        check_dim(self.dim(mu), eps.len())?;
        let y = self
            .value(mu)
            .iter()
            .zip(self.value(log_var))
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        Ok(self.push(y, Op::Reparam { mu, log_var, eps }))
    }

    /// Gumbel-softmax with caller-supplied Gumbel noise. The forward value is
    /// the one-hot argmax when `hard`, otherwise the relaxed sample; the
    /// backward rule always uses the relaxed sample.
    pub fn gumbel_softmax(&mut self, logits: Var, noise: &[f64], tau: f64, hard: bool) -> Result<Var> {
        let draw = gumbel_softmax_with_noise(self.value(logits), noise, tau, hard)?;
        Ok(self.push(draw.output, Op::GumbelSoftmax { logits, soft: draw.soft, tau }))
    }

    /// NaN entries propagate to the output so callers can report divergence.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let v = lse_propagating_nan(self.value(x))?;
        Ok(self.push(vec![v], Op::LogSumExp(x)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let lse = lse_propagating_nan(self.value(x))?;
        let y = self.value(x).iter().map(|v| v - lse).collect();
        Ok(self.push(y, Op::LogSoftmax(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_dim(self.dim(a), self.dim(b))?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_dim(self.dim(a), self.dim(b))?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_dim(self.dim(a), self.dim(b))?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a).iter().map(|x| x * c).collect();
        self.push(y, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        check_dim(self.dim(a), c.len())?;
        let y = self.value(a).iter().zip(&c).map(|(x, y)| x + y).collect();
        Ok(self.push(y, Op::AddConst(a)))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let y = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(y, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum_many(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items.first().ok_or_else(|| invalid("sum of no terms"))?;
        let mut acc = vec![0.0; self.dim(first)];
        for &v in items {
            check_dim(acc.len(), self.dim(v))?;
            acc.iter_mut().zip(self.value(v)).for_each(|(a, x)| *a += x);
        }
        Ok(self.push(acc, Op::SumMany(items.to_vec())))
    }

    pub fn concat(&mut self, items: &[Var]) -> Var {
        let y = items.iter().flat_map(|v| self.value(*v).iter().copied()).collect();
        self.push(y, Op::Concat(items.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dim(x) {
            return Err(invalid(format!("slice {start}..{} of length {}", start + len, self.dim(x))));
        }
        let y = self.value(x)[start..start + len].to_vec();
        Ok(self.push(y, Op::Slice { x, start }))
    }

    /// `Σ_k weights[k] · items[k]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        check_dim(items.len(), self.dim(weights))?;
        let first = *items.first().ok_or_else(|| invalid("weighted sum of no terms"))?;
        let mut acc = vec![0.0; self.dim(first)];
        for (k, &v) in items.iter().enumerate() {
            check_dim(acc.len(), self.dim(v))?;
            let w = self.value(weights)[k];
            acc.iter_mut().zip(self.value(v)).for_each(|(a, x)| *a += w * x);
        }
        Ok(self.push(acc, Op::WeightedSum { weights, items: items.to_vec() }))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        check_dim(self.dim(a), self.dim(b))?;
        let c = cosine_value(self.value(a), self.value(b));
        Ok(self.push(vec![c], Op::Cosine(a, b)))
    }

    /// `KL(N(q_mu, e^{q_lv}) ‖ N(p_mu, e^{p_lv}))` for diagonal Gaussians.
    pub fn kl_diag(&mut self, q_mu: Var, q_lv: Var, p_mu: Var, p_lv: Var) -> Result<Var> {
        let d = self.dim(q_mu);
        for v in [q_lv, p_mu, p_lv] {
            check_dim(d, self.dim(v))?;
        }
        let q = crate::math::DiagGaussian {
            mu: self.value(q_mu).to_vec(),
            log_var: self.value(q_lv).to_vec(),
        };
        let p = crate::math::DiagGaussian {
            mu: self.value(p_mu).to_vec(),
            log_var: self.value(p_lv).to_vec(),
        };
        let kl = crate::math::kl_gauss_diag(&q, &p)?;
        Ok(self.push(vec![kl], Op::KlDiag { q_mu, q_lv, p_mu, p_lv }))
    }

    /// Reverse sweep from the scalar `loss`; parameter gradients are added into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        check_dim(1, self.dim(loss))?;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    p.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Dense { x, w, b, rows, cols } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut gx = vec![0.0; *cols];
                    let mut gw = vec![0.0; rows * cols];
                    for i in 0..*rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &wv[i * cols..(i + 1) * cols];
                        let grow = &mut gw[i * cols..(i + 1) * cols];
                        for j in 0..*cols {
                            grow[j] = gi * xv[j];
                            gx[j] += row[j] * gi;
                        }
                    }
                    accumulate(&mut adj, *x, &gx);
                    accumulate(&mut adj, *w, &gw);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::BceLogit { logit, label, prob } => {
                    accumulate(&mut adj, *logit, &[g[0] * (prob - label)]);
                }
                Op::GaussLogPdf { z, mu, log_var } => {
                    let (zv, mv, lv) = (self.value(*z), self.value(*mu), self.value(*log_var));
                    let mut gz = Vec::with_capacity(zv.len());
                    let mut glv = Vec::with_capacity(zv.len());
                    for j in 0..zv.len() {
                        let prec = (-lv[j]).exp();
                        let diff = zv[j] - mv[j];
                        gz.push(-g[0] * diff * prec);
                        glv.push(g[0] * 0.5 * (diff * diff * prec - 1.0));
                    }
                    let gmu: Vec<f64> = gz.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *z, &gz);
                    accumulate(&mut adj, *mu, &gmu);
                    accumulate(&mut adj, *log_var, &glv);
                }
                Op::Reparam { mu, log_var, eps } => {
                    let lv = self.value(*log_var);
                    let glv: Vec<f64> = (0..g.len()).map(|j| g[j] * 0.5 * (0.5 * lv[j]).exp() * eps[j]).collect();
                    accumulate(&mut adj, *mu, &g);
                    accumulate(&mut adj, *log_var, &glv);
                }
                Op::GumbelSoftmax { logits, soft, tau } => {
                    let dot: f64 = g.iter().zip(soft).map(|(a, b)| a * b).sum();
                    let gl: Vec<f64> = soft.iter().zip(&g).map(|(s, gi)| s * (gi - dot) / tau).collect();
                    accumulate(&mut adj, *logits, &gl);
                }
                Op::LogSumExp(x) => {
                    let gx: Vec<f64> = softmax(self.value(*x)).into_iter().map(|s| s * g[0]).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let gx: Vec<f64> = y.iter().zip(&g).map(|(ly, gi)| gi - ly.exp() * total).collect();
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::AddConst(a) => accumulate(&mut adj, *a, &g),
                Op::Log(a) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g / x).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.dim(*a)];
                    accumulate(&mut adj, *a, &ga);
                }
                Op::SumMany(items) => {
                    for v in items {
                        accumulate(&mut adj, *v, &g);
                    }
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for v in items {
                        let n = self.dim(*v);
                        accumulate(&mut adj, *v, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let mut gx = vec![0.0; self.dim(*x)];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut adj, *x, &gx);
                }
                Op::WeightedSum { weights, items } => {
                    let wv = self.value(*weights);
                    let mut gw = Vec::with_capacity(items.len());
                    for (k, v) in items.iter().enumerate() {
                        gw.push(g.iter().zip(self.value(*v)).map(|(a, b)| a * b).sum::<f64>());
                        let gi: Vec<f64> = g.iter().map(|a| a * wv[k]).collect();
                        accumulate(&mut adj, *v, &gi);
                    }
                    accumulate(&mut adj, *weights, &gw);
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let na = (dot(av, av) + COSINE_EPS).sqrt();
                    let nb = (dot(bv, bv) + COSINE_EPS).sqrt();
                    let c = y[0];
                    let ga: Vec<f64> = av.iter().zip(bv).map(|(x, z)| g[0] * (z / (na * nb) - c * x / (na * na))).collect();
                    let gb: Vec<f64> = av.iter().zip(bv).map(|(x, z)| g[0] * (x / (na * nb) - c * z / (nb * nb))).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::KlDiag { q_mu, q_lv, p_mu, p_lv } => {
                    let (qm, ql, pm, pl) = (self.value(*q_mu), self.value(*q_lv), self.value(*p_mu), self.value(*p_lv));
                    let d = qm.len();
                    let (mut gqm, mut gql, mut gpm, mut gpl) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                    for j in 0..d {
                        let diff = pm[j] - qm[j];
                        let inv_p = (-pl[j]).exp();
                        let ratio = (ql[j] - pl[j]).exp();
                        gqm[j] = -g[0] * diff * inv_p;
                        gpm[j] = g[0] * diff * inv_p;
                        gql[j] = g[0] * 0.5 * (ratio - 1.0);
                        gpl[j] = g[0] * 0.5 * (1.0 - ratio - diff * diff * inv_p);
                    }
                    accumulate(&mut adj, *q_mu, &gqm);
                    accumulate(&mut adj, *q_lv, &gql);
                    accumulate(&mut adj, *p_mu, &gpm);
                    accumulate(&mut adj, *p_lv, &gpl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / ((dot(a, a) + COSINE_EPS).sqrt() * (dot(b, b) + COSINE_EPS).sqrt())
}

/// Output of one Gumbel-softmax draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelDraw {
    /// One-hot when drawn hard, otherwise equal to `soft`.
    pub output: Vec<f64>,
    pub soft: Vec<f64>,
    pub noise: Vec<f64>,
    pub argmax: usize,
}

pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64, hard: bool) -> Result<GumbelDraw> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    check_dim(logits.len(), noise.len())?;
    if logits.is_empty() {
        return Err(invalid("gumbel-softmax over no categories"));
    }
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let soft = softmax(&perturbed);
    let argmax = perturbed
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
        .0;
    let output = if hard {
        let mut one_hot = vec![0.0; soft.len()];
        one_hot[argmax] = 1.0;
        one_hot
    } else {
        soft.clone()
    };
    Ok(GumbelDraw {
        output,
        soft,
        noise: noise.to_vec(),
        argmax,
    })
}

pub fn gumbel_noise(len: usize, rng: &mut Rng) -> Vec<f64> {
    let dist = Gumbel::new(0.0, 1.0).expect("standard gumbel");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// Relaxed categorical draw `softmax((logits + g)/τ)` with i.i.d. Gumbel(0, 1) noise.
pub fn gumbel_softmax(logits: &[f64], tau: f64, rng: &mut Rng, hard: bool) -> Result<GumbelDraw> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    let noise = gumbel_noise(logits.len(), rng);
    gumbel_softmax_with_noise(logits, &noise, tau, hard)
}

pub fn standard_normal(len: usize, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Set when some perturbed evaluation was not finite; `max_rel_error` is then infinite.
    pub non_finite: bool,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.non_finite && self.max_rel_error < tol
    }
}

/// Central-difference check of `analytic` against `f` at `params`.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> f64,
{
    check_dim(params.len(), analytic.len())?;
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let mut point = params.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: None,
        non_finite: false,
    };
    for i in 0..params.len() {
        point[i] = params[i] + h;
        let up = f(&point);
        point[i] = params[i] - h;
        let down = f(&point);
        point[i] = params[i];
        if !up.is_finite() || !down.is_finite() || !analytic[i].is_finite() {
            report.non_finite = true;
            report.max_rel_error = f64::INFINITY;
            report.worst_index = Some(i);
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let err = (analytic[i] - numeric).abs() / denom;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Runs `build` on a fresh tape, backpropagates, and returns `(loss, flat gradient)`.
pub fn value_and_grad<F>(store: &mut ParamStore, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    store.zero_grad();
    tape.backward(loss, store)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(DpmmError::DegenerateInput("non-finite loss".into()));
    }
    Ok((value, store.flat_grads()))
}

fn lse_propagating_nan(v: &[f64]) -> Result<f64> {
    if v.iter().any(|x| x.is_nan()) {
        return Ok(f64::NAN);
    }
    crate::math::log_sum_exp(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, s, v)| store.add(ParamTensor::new(*n, s.clone(), v.clone()).unwrap()))
            .collect();
        (store, ids)
    }

    #[test]
    fn dense_identity_and_bias_gradient() {
        let (mut store, ids) = store_with(&[
            ("w", vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]),
            ("b", vec![2], vec![0.0, 0.0]),
        ]);
        let mut tape = Tape::new();
        let x = tape.input(vec![0.3, -2.0]);
        let w = tape.param(&store, ids[0]);
        let b = tape.param(&store, ids[1]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), &[0.3, -2.0]);
        let s = tape.sum(y);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(ids[1]).grad, vec![1.0, 1.0]);
        assert_eq!(store.get(ids[0]).grad, vec![0.3, -2.0, 0.3, -2.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0; 3]);
        let w = tape.input(vec![1.0; 4]);
        let b = tape.input(vec![0.0; 2]);
        assert!(tape.dense(x, w, b).is_err());
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.input(vec![0.0, 1.3, -1.3]);
        let t = tape.tanh(x);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(t)[0], 0.0);
        assert_eq!(tape.value(s)[0], 0.5);
        assert!((tape.value(s)[1] + tape.value(s)[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bce_values_and_logit_gradient() {
        assert!((bce_loss(0.5, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(1.0, 1.0).unwrap() <= 1e-6);
        assert!(bce_loss(0.0, 0.0).unwrap() <= 1e-6);
        assert!(bce_loss(0.0, 1.0).unwrap().is_finite());
        assert!(bce_loss(0.5, 2.0).is_err());

        let (mut store, ids) = store_with(&[("logit", vec![1], vec![0.0])]);
        let mut tape = Tape::new();
        let l = tape.param(&store, ids[0]);
        let loss = tape.bce_with_logit(l, 1.0).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert!((store.get(ids[0]).grad[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gumbel_basic_contracts() {
        let mut r = rng::stream(3, Stream::Gumbel);
        let single = gumbel_softmax(&[0.7], 0.5, &mut r, false).unwrap();
        assert_eq!(single.output, vec![1.0]);
        for hard in [true, false] {
            let d = gumbel_softmax(&[0.1, -2.0, 1.5, 0.0], 0.3, &mut r, hard).unwrap();
            let sum: f64 = d.output.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            if hard {
                assert_eq!(d.output.iter().filter(|v| **v == 1.0).count(), 1);
                assert_eq!(d.output.iter().filter(|v| **v == 0.0).count(), 3);
            }
        }
        assert!(gumbel_softmax(&[0.0, 0.0], 0.0, &mut r, true).is_err());
        assert!(gumbel_softmax(&[0.0, 0.0], -1.0, &mut r, true).is_err());
    }

    #[test]
    fn high_temperature_flattens() {
        let logits = [1.0, -1.0, 0.5, 0.0];
        let mut r = rng::stream(11, Stream::Gumbel);
        for _ in 0..200 {
            let d = gumbel_softmax(&logits, 100.0, &mut r, false).unwrap();
            // Gumbel tails are unbounded; a generous band still shows the limit
            assert!(d.soft.iter().all(|s| (s - 0.25).abs() < 0.1));
        }
        let frozen = gumbel_softmax_with_noise(&logits, &[0.0; 4], 100.0, false).unwrap();
        assert!(frozen.soft.iter().all(|s| (s - 0.25).abs() < 0.01));
    }

    #[test]
    fn fd_check_on_quadratic() {
        let p = vec![0.4, -1.2, 3.0];
        let analytic: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(|x| x.iter().map(|v| v * v).sum(), &p, &analytic, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        let corrupted: Vec<f64> = analytic.iter().map(|v| v * 1.01).collect();
        let r = finite_diff_check(|x| x.iter().map(|v| v * v).sum(), &p, &corrupted, 1e-5).unwrap();
        assert!(r.max_rel_error > 5e-3);
        let r = finite_diff_check(|x| if x[0] > 0.4 { f64::NAN } else { 0.0 }, &p, &analytic, 1e-5).unwrap();
        assert!(r.non_finite && !r.passes(1.0));
    }

    #[test]
    fn replayed_tape_gives_identical_gradients() {
        let (mut store, ids) = store_with(&[
            ("w", vec![1, 3], vec![0.2, -0.4, 0.9]),
            ("b", vec![1], vec![0.1]),
        ]);
        let build = |tape: &mut Tape, s: &ParamStore| {
            let x = tape.input(vec![1.0, 2.0, -0.5]);
            let w = tape.param(s, ids[0]);
            let b = tape.param(s, ids[1]);
            let y = tape.dense(x, w, b)?;
            tape.bce_with_logit(y, 1.0)
        };
        let (_, g1) = value_and_grad(&mut store, build).unwrap();
        let (_, g2) = value_and_grad(&mut store, build).unwrap();
        assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
