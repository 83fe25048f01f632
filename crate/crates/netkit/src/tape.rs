//! Reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its value and whatever it needs
//! for the reverse pass. [`Tape::backward`] walks the nodes in exact reverse
//! order and accumulates gradients additively.

use std::collections::{BTreeMap, HashMap};

use gsd_core::{Error, Result};

use crate::params::ParamStore;
use crate::scalar::{gemm, Scalar, View};
use crate::tensor::{pixel_shuffle, pixel_unshuffle, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Layout of a multi-head attention call.
///
/// Query rows are split into `groups` equal contiguous blocks that attend
/// independently. Key/value rows are split the same way, or shared by every
/// group when `shared_kv` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    pub heads: usize,
    pub groups: usize,
    pub shared_kv: bool,
}

impl AttnLayout {
    pub fn global(heads: usize) -> Self {
        Self {
            heads,
            groups: 1,
            shared_kv: true,
        }
    }
}

pub const LAYERNORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddGroupRows(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttnLayout,
        probs: Vec<T>,
    },
    PixelShuffle {
        x: Var,
        views: usize,
        h: usize,
        w: usize,
        r: usize,
    },
    ConcatCols(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    /// `(store id, parameter name)` for parameter leaves.
    param: Option<(String, String)>,
}

/// Recorded computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_cache: HashMap<(String, String), Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every node that required one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of the trainable parameters of `store` used on `tape`.
    /// Trainable parameters that did not influence the seeds get zeros.
    pub fn for_store(&self, tape: &Tape<T>, store: &ParamStore<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (name, p) in store.iter() {
            if !p.trainable {
                continue;
            }
            let g = tape
                .param_cache
                .get(&(store.id.clone(), name.clone()))
                .and_then(|v| self.grads[v.0].clone())
                .unwrap_or_else(|| Tensor::zeros(p.value.rows, p.value.cols));
            out.insert(name.clone(), g);
        }
        out
    }
}

fn shape_err(what: &str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Error {
    Error::Shape(format!(
        "{what}: {}x{} with {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x);
    (y, dy)
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let key = (store.id.clone(), name.to_string());
        if let Some(&v) = self.param_cache.get(&key) {
            return Ok(v);
        }
        let p = store.get(name)?;
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(key.clone());
        self.param_cache.insert(key, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(what, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Add a `1×cols` row to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (t, b) = (self.value(x), self.value(bias));
        if b.rows != 1 || b.cols != t.cols {
            return Err(shape_err("add_row", t, b));
        }
        let mut out = t.clone();
        for r in 0..out.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Rows of `x` form `e.rows` equal contiguous groups; row `g` of `e` is
    /// added to every row of group `g`.
    pub fn add_group_rows(&mut self, x: Var, e: Var) -> Result<Var> {
        let (t, b) = (self.value(x), self.value(e));
        if b.cols != t.cols || b.rows == 0 || t.rows % b.rows != 0 {
            return Err(shape_err("add_group_rows", t, b));
        }
        let per = t.rows / b.rows;
        let mut out = t.clone();
        for r in 0..out.rows {
            let g = r / per;
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(g)) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, e]);
        Ok(self.push(out, Op::AddGroupRows(x, e), rg))
    }

    /// Row `r` of `x` gets row `r mod p.rows` of `p` added.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Result<Var> {
        let (t, b) = (self.value(x), self.value(p));
        if b.cols != t.cols || b.rows == 0 || t.rows % b.rows != 0 {
            return Err(shape_err("add_tiled", t, b));
        }
        let mut out = t.clone();
        for r in 0..out.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(r % b.rows)) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, p]);
        Ok(self.push(out, Op::AddTiled(x, p), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).scaled(s);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu(v).0);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Per-row layer normalization with affine `gamma`, `beta` (`1×cols`).
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, t.cols) || b.shape() != (1, t.cols) {
            return Err(shape_err("layernorm", t, g));
        }
        let n = T::from_usize_lossy(t.cols);
        let eps = T::lit(LAYERNORM_EPS);
        let mut xhat = vec![T::zero(); t.len()];
        let mut rstd = vec![T::zero(); t.rows];
        let mut out = Tensor::zeros(t.rows, t.cols);
        for r in 0..t.rows {
            let row = t.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..t.cols {
                let xh = (row[c] - mean) * rs;
                xhat[r * t.cols + c] = xh;
                out.data[r * t.cols + c] = xh * g.data[c] + b.data[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Scaled dot-product multi-head attention, softmax over keys.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Result<Var> {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols;
        if kt.cols != d || vt.cols != d || kt.rows != vt.rows {
            return Err(shape_err("attention", qt, kt));
        }
        let AttnLayout {
            heads,
            groups,
            shared_kv,
        } = layout;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("width {d} not divisible by {heads} heads")));
        }
        if groups == 0 || qt.rows % groups != 0 || (!shared_kv && kt.rows % groups != 0) {
            return Err(Error::Shape(format!(
                "{} query and {} key rows do not split into {groups} groups",
                qt.rows, kt.rows
            )));
        }
        let dh = d / heads;
        let mq = qt.rows / groups;
        let mk = if shared_kv { kt.rows } else { kt.rows / groups };
        if mk == 0 {
            return Err(Error::Empty("attention over zero keys".into()));
        }
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut probs = vec![T::zero(); groups * heads * mq * mk];
        let mut out = Tensor::zeros(qt.rows, d);
        for g in 0..groups {
            let kg = if shared_kv { 0 } else { g };
            for h in 0..heads {
                let p = &mut probs[(g * heads + h) * mq * mk..(g * heads + h + 1) * mq * mk];
                gemm(
                    mq,
                    dh,
                    mk,
                    scale,
                    &qt.data,
                    View::row_major(g * mq * d + h * dh, d),
                    &kt.data,
                    View::transposed(kg * mk * d + h * dh, d),
                    T::zero(),
                    p,
                    View::row_major(0, mk),
                );
                for row in p.chunks_exact_mut(mk) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for x in row.iter_mut() {
                        *x = (*x - m).exp();
                        s += *x;
                    }
                    let inv = T::one() / s;
                    row.iter_mut().for_each(|x| *x *= inv);
                }
                gemm(
                    mq,
                    mk,
                    dh,
                    T::one(),
                    p,
                    View::row_major(0, mk),
                    &vt.data,
                    View::row_major(kg * mk * d + h * dh, d),
                    T::zero(),
                    &mut out.data,
                    View::row_major(g * mq * d + h * dh, d),
                );
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            rg,
        ))
    }

    /// See [`pixel_shuffle`].
    pub fn pixel_shuffle(&mut self, x: Var, views: usize, h: usize, w: usize, r: usize) -> Result<Var> {
        let out = pixel_shuffle(self.value(x), views, h, w, r)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::PixelShuffle { x, views, h, w, r }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows != y.rows {
            return Err(shape_err("concat_cols", x, y));
        }
        let mut out = Tensor::zeros(x.rows, x.cols + y.cols);
        for r in 0..x.rows {
            out.row_mut(r)[..x.cols].copy_from_slice(x.row(r));
            out.row_mut(r)[x.cols..].copy_from_slice(y.row(r));
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Back-propagate the given output gradients.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let val = self.value(*v);
            if g.shape() != val.shape() {
                return Err(shape_err("backward seed", val, g));
            }
            add_into(&mut grads[v.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], gy.matmul_nt(self.value(*b)).expect("shape"));
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], self.value(*a).matmul_tn(gy).expect("shape"));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], gy.matmul(self.value(*b)).expect("shape"));
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], gy.matmul_tn(self.value(*a)).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        add_into(&mut grads[v.0], gy.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gy.data.iter().zip(&y.data).map(|(&g, &q)| g * q).collect();
                    add_into(&mut grads[a.0], Tensor::from_vec(x.rows, x.cols, d).unwrap());
                }
                if self.wants(*b) {
                    let d = gy.data.iter().zip(&x.data).map(|(&g, &p)| g * p).collect();
                    add_into(&mut grads[b.0], Tensor::from_vec(x.rows, x.cols, d).unwrap());
                }
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], gy.clone());
                }
                if self.wants(*bias) {
                    let mut db = Tensor::zeros(1, gy.cols);
                    for r in 0..gy.rows {
                        for (d, &g) in db.data.iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                    add_into(&mut grads[bias.0], db);
                }
            }
            Op::AddGroupRows(x, e) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], gy.clone());
                }
                if self.wants(*e) {
                    let groups = self.value(*e).rows;
                    let per = gy.rows / groups;
                    let mut de = Tensor::zeros(groups, gy.cols);
                    for r in 0..gy.rows {
                        for (d, &g) in de.row_mut(r / per).iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                    add_into(&mut grads[e.0], de);
                }
            }
            Op::AddTiled(x, p) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], gy.clone());
                }
                if self.wants(*p) {
                    let m = self.value(*p).rows;
                    let mut dp = Tensor::zeros(m, gy.cols);
                    for r in 0..gy.rows {
                        for (d, &g) in dp.row_mut(r % m).iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                    add_into(&mut grads[p.0], dp);
                }
            }
            Op::Scale(x, s) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], gy.scaled(*s));
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x);
                    let d = gy.data.iter().zip(&xv.data).map(|(&g, &v)| g * gelu(v).1).collect();
                    add_into(&mut grads[x.0], Tensor::from_vec(xv.rows, xv.cols, d).unwrap());
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = gy.cols;
                let gam = self.value(*gamma);
                if self.wants(*gamma) {
                    let mut dg = Tensor::zeros(1, cols);
                    for (j, (&g, &xh)) in gy.data.iter().zip(xhat).enumerate() {
                        dg.data[j % cols] += g * xh;
                    }
                    add_into(&mut grads[gamma.0], dg);
                }
                if self.wants(*beta) {
                    let mut db = Tensor::zeros(1, cols);
                    for (j, &g) in gy.data.iter().enumerate() {
                        db.data[j % cols] += g;
                    }
                    add_into(&mut grads[beta.0], db);
                }
                if self.wants(*x) {
                    let n = T::from_usize_lossy(cols);
                    let mut dx = Tensor::zeros(gy.rows, cols);
                    for r in 0..gy.rows {
                        let off = r * cols;
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            let dxh = gy.data[off + c] * gam.data[c];
                            m1 += dxh;
                            m2 += dxh * xhat[off + c];
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            let dxh = gy.data[off + c] * gam.data[c];
                            dx.data[off + c] = rstd[r] * (dxh - m1 - xhat[off + c] * m2);
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => self.attention_backward(*q, *k, *v, *layout, probs, gy, grads),
            Op::PixelShuffle { x, views, h, w, r } => {
                if self.wants(*x) {
                    let g = pixel_unshuffle(gy, *views, h * r, w * r, *r).expect("shape");
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols;
                for (v, lo, hi) in [(a, 0, ca), (b, ca, gy.cols)] {
                    if self.wants(*v) {
                        let mut g = Tensor::zeros(gy.rows, hi - lo);
                        for r in 0..gy.rows {
                            g.row_mut(r).copy_from_slice(&gy.row(r)[lo..hi]);
                        }
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: AttnLayout,
        probs: &[T],
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols;
        let AttnLayout {
            heads,
            groups,
            shared_kv,
        } = layout;
        let dh = d / heads;
        let mq = qt.rows / groups;
        let mk = if shared_kv { kt.rows } else { kt.rows / groups };
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut dq = Tensor::zeros(qt.rows, d);
        let mut dk = Tensor::zeros(kt.rows, d);
        let mut dv = Tensor::zeros(vt.rows, d);
        let mut ds = vec![T::zero(); mq * mk];
        for g in 0..groups {
            let kg = if shared_kv { 0 } else { g };
            for h in 0..heads {
                let p = &probs[(g * heads + h) * mq * mk..(g * heads + h + 1) * mq * mk];
                let qo = g * mq * d + h * dh;
                let ko = kg * mk * d + h * dh;
                // dV += Pᵀ · dO
                gemm(
                    mk,
                    mq,
                    dh,
                    T::one(),
                    p,
                    View::transposed(0, mk),
                    &gy.data,
                    View::row_major(qo, d),
                    T::one(),
                    &mut dv.data,
                    View::row_major(ko, d),
                );
                // dP = dO · Vᵀ
                gemm(
                    mq,
                    dh,
                    mk,
                    T::one(),
                    &gy.data,
                    View::row_major(qo, d),
                    &vt.data,
                    View::transposed(ko, d),
                    T::zero(),
                    &mut ds,
                    View::row_major(0, mk),
                );
                for (drow, prow) in ds.chunks_exact_mut(mk).zip(p.chunks_exact(mk)) {
                    let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
                    for (x, &pv) in drow.iter_mut().zip(prow) {
                        *x = pv * (*x - dot);
                    }
                }
                // dQ = scale · dS · K ; dK += scale · dSᵀ · Q
                gemm(
                    mq,
                    mk,
                    dh,
                    scale,
                    &ds,
                    View::row_major(0, mk),
                    &kt.data,
                    View::row_major(ko, d),
                    T::zero(),
                    &mut dq.data,
                    View::row_major(qo, d),
                );
                gemm(
                    mk,
                    mq,
                    dh,
                    scale,
                    &ds,
                    View::transposed(0, mk),
                    &qt.data,
                    View::row_major(qo, d),
                    T::one(),
                    &mut dk.data,
                    View::row_major(ko, d),
                );
            }
        }
        for (var, g) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                add_into(&mut grads[var.0], g);
            }
        }
    }
}
