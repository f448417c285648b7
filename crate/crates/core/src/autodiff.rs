//! Minimal reverse-mode differentiation over row-major matrices.
//!
//! Every value is an `Array2`; scalars are `1 × 1`. Operations record their
//! inputs on a [`Tape`], and [`Tape::backward`] returns the gradient of a
//! scalar output with respect to every recorded value.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the vector returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
            Activation::Sigmoid => F::one() / (F::one() + (-x).exp()),
        }
    }

    /// Derivative expressed through the output `y = apply(x)`.
    fn derivative_at_output<F: Scalar>(self, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Identity => F::one(),
            Activation::Relu => {
                if y > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => y * (F::one() - y),
        }
    }

    pub fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::Identity => F::one(),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (F::one() - s)
            }
        }
    }
}

/// How a node combines a predecessor's features with its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combine {
    /// `φ(x_v ⊙ x_u)`
    #[default]
    Elementwise,
    /// `φ(⟨x_v, x_u⟩) · x_u`
    ScalarGated,
}

/// Predecessor lists over the rows of a feature matrix.
pub type Preds = Arc<Vec<Vec<usize>>>;

enum Op<F: Scalar> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    GatherRows { x: Var, idx: Arc<Vec<usize>> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    AddTiled { x: Var, p: Var },
    /// `phi` holds every activation output of the forward pass, in visit order.
    MessagePass { x: Var, preds: Preds, act: Activation, combine: Combine, phi: Vec<F> },
    Attention { q: Var, k: Var, v: Var, heads: usize, window: usize, probs: Vec<Array2<F>> },
    LayerNorm { x: Var, g: Var, b: Var, xhat: Array2<F>, inv_std: Vec<F> },
    SegmentMean { x: Var, size: usize },
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Arc<Vec<usize>>, probs: Array2<F> },
    PairSqDist { x: Var, pairs: Arc<Vec<(usize, usize)>> },
}

struct Node<F: Scalar> {
    value: Array2<F>,
    op: Op<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

fn linear_fwd<F: Scalar>(x: ArrayView2<'_, F>, w: ArrayView2<'_, F>, b: Option<ArrayView2<'_, F>>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    if let Some(b) = b {
        y += &b;
    }
    y
}

/// Row-wise softmax.
pub fn softmax_rows<F: Scalar>(x: ArrayView2<'_, F>) -> Array2<F> {
    let mut y = x.to_owned();
    for mut row in y.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

/// Row-wise layer normalization without affine parameters; returns the
/// normalized rows and each row's inverse standard deviation.
pub fn normalize_rows<F: Scalar>(x: ArrayView2<'_, F>) -> (Array2<F>, Vec<F>) {
    let d = F::of_usize(x.ncols());
    let eps = F::of(LAYER_NORM_EPS);
    let mut xhat = x.to_owned();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mu = row.sum() / d;
        let var = row.fold(F::zero(), |a, &v| a + (v - mu) * (v - mu)) / d;
        let is = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mu) * is);
        inv.push(is);
    }
    (xhat, inv)
}

/// Multi-head scaled dot-product attention on consecutive windows of rows.
/// Returns the output and the per-(window, head) attention matrices.
pub fn attention_fwd<F: Scalar>(
    q: ArrayView2<'_, F>,
    k: ArrayView2<'_, F>,
    v: ArrayView2<'_, F>,
    heads: usize,
    window: usize,
) -> (Array2<F>, Vec<Array2<F>>) {
    let (rows, d) = q.dim();
    assert!(d % heads == 0, "model width {d} not divisible by {heads} heads");
    assert!(rows % window == 0, "{rows} rows do not split into windows of {window}");
    let dk = d / heads;
    let scale = F::one() / F::of_usize(dk).sqrt();
    let mut out = Array2::zeros((rows, d));
    let mut probs = Vec::with_capacity(rows / window * heads);
    for w in 0..rows / window {
        let r = w * window..(w + 1) * window;
        for h in 0..heads {
            let c = h * dk..(h + 1) * dk;
            let qh = q.slice(s![r.clone(), c.clone()]);
            let kh = k.slice(s![r.clone(), c.clone()]);
            let vh = v.slice(s![r.clone(), c.clone()]);
            let scores = qh.dot(&kh.t()) * scale;
            let p = softmax_rows(scores.view());
            out.slice_mut(s![r.clone(), c]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (out, probs)
}

/// Feature update of one synchronous message-passing round.
pub fn message_pass_fwd<F: Scalar>(x: ArrayView2<'_, F>, preds: &[Vec<usize>], act: Activation, combine: Combine) -> Array2<F> {
    message_pass_impl(x, preds, act, combine, None)
}

fn message_pass_impl<F: Scalar>(
    x: ArrayView2<'_, F>,
    preds: &[Vec<usize>],
    act: Activation,
    combine: Combine,
    mut phi: Option<&mut Vec<F>>,
) -> Array2<F> {
    let x = x.as_standard_layout();
    let d = x.ncols();
    let xs = x.as_slice().expect("standard layout");
    let mut y = x.to_owned();
    let ys = y.as_slice_mut().expect("standard layout");
    for (v, ps) in preds.iter().enumerate() {
        if ps.is_empty() {
            continue;
        }
        let inv = F::one() / F::of_usize(ps.len());
        let xv = &xs[v * d..(v + 1) * d];
        let out = &mut ys[v * d..(v + 1) * d];
        out.fill(F::zero());
        for &u in ps {
            let xu = &xs[u * d..(u + 1) * d];
            match combine {
                Combine::Elementwise => {
                    for ((o, &p), &q) in out.iter_mut().zip(xv).zip(xu) {
                        let h = act.apply(p * q);
                        if let Some(c) = phi.as_deref_mut() {
                            c.push(h);
                        }
                        *o += h;
                    }
                }
                Combine::ScalarGated => {
                    let g = act.apply(xv.iter().zip(xu).fold(F::zero(), |a, (&p, &q)| a + p * q));
                    if let Some(c) = phi.as_deref_mut() {
                        c.push(g);
                    }
                    for (o, &q) in out.iter_mut().zip(xu) {
                        *o += g * q;
                    }
                }
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
    y
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `x · wᵀ + b` with `w` shaped `out × in` and `b` shaped `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = linear_fwd(self.value(x).view(), self.value(w).view(), b.map(|b| self.value(b).view()));
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|v| v.max(F::zero()));
        self.push(y, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|v| v.tanh());
        self.push(y, Op::Tanh(a))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let y = self.value(x).select(Axis(0), &idx);
        self.push(y, Op::GatherRows { x, idx })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        self.push(y, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("equal heights");
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    /// Adds row `r mod p.nrows()` of `p` to row `r` of `x`.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Var {
        let mut y = self.value(x).clone();
        let pv = self.value(p);
        let a = pv.nrows();
        assert_eq!(y.nrows() % a, 0, "rows not a multiple of the tile height");
        for (r, mut row) in y.rows_mut().into_iter().enumerate() {
            row += &pv.row(r % a);
        }
        self.push(y, Op::AddTiled { x, p })
    }

    pub fn message_pass(&mut self, x: Var, preds: Preds, act: Activation, combine: Combine) -> Var {
        assert_eq!(preds.len(), self.value(x).nrows(), "predecessor list per row");
        let mut phi = Vec::new();
        let y = message_pass_impl(self.value(x).view(), &preds, act, combine, Some(&mut phi));
        self.push(y, Op::MessagePass { x, preds, act, combine, phi })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, window: usize) -> Var {
        let (y, probs) = attention_fwd(self.value(q).view(), self.value(k).view(), self.value(v).view(), heads, window);
        self.push(
            y,
            Op::Attention {
                q,
                k,
                v,
                heads,
                window,
                probs,
            },
        )
    }

    /// Row-wise layer norm with gain `g` and shift `b`, both `1 × d`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (xhat, inv_std) = normalize_rows(self.value(x).view());
        let y = &xhat * self.value(g) + self.value(b);
        self.push(y, Op::LayerNorm { x, g, b, xhat, inv_std })
    }

    /// Mean of each consecutive block of `size` rows.
    pub fn segment_mean(&mut self, x: Var, size: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows() % size, 0);
        let n = xv.nrows() / size;
        let mut y = Array2::zeros((n, xv.ncols()));
        let inv = F::one() / F::of_usize(size);
        for i in 0..n {
            let block = xv.slice(s![i * size..(i + 1) * size, ..]);
            y.row_mut(i).assign(&(block.sum_axis(Axis(0)) * inv));
        }
        self.push(y, Op::SegmentMean { x, size })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x).view());
        self.push(y, Op::Softmax(x))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Arc<Vec<usize>>) -> Var {
        let probs = softmax_rows(self.value(logits).view());
        assert_eq!(probs.nrows(), targets.len());
        let n = F::of_usize(targets.len().max(1));
        let tiny = F::min_positive_value();
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -(probs[[i, t]].max(tiny)).ln())
            .fold(F::zero(), |a, b| a + b)
            / n;
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxCrossEntropy { logits, targets, probs },
        )
    }

    /// Mean over `pairs` of the squared distance between the paired rows.
    pub fn pair_sq_dist(&mut self, x: Var, pairs: Arc<Vec<(usize, usize)>>) -> Var {
        let xv = self.value(x);
        let mut total = F::zero();
        for &(a, b) in pairs.iter() {
            let d = &xv.row(a) - &xv.row(b);
            total += d.dot(&d);
        }
        let loss = if pairs.is_empty() {
            F::zero()
        } else {
            total / F::of_usize(pairs.len())
        };
        self.push(Array2::from_elem((1, 1), loss), Op::PairSqDist { x, pairs })
    }

    /// Gradients of the scalar `out` with respect to every node; `None`
    /// where the output does not depend on the node.
    pub fn backward(&self, out: Var) -> Vec<Option<Array2<F>>> {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::from_elem((1, 1), F::one()));

        fn acc<F: Scalar>(grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    acc(&mut grads, *x, dy.dot(wv));
                    acc(&mut grads, *w, dy.t().dot(xv));
                    if let Some(b) = b {
                        acc(&mut grads, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &dy * *c),
                Op::Relu(a) => {
                    let mut g = dy.clone();
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| {
                        if x <= F::zero() {
                            *g = F::zero();
                        }
                    });
                    acc(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let mut g = dy.clone();
                    Zip::from(&mut g).and(&node.value).for_each(|g, &y| *g *= F::one() - y * y);
                    acc(&mut grads, *a, g);
                }
                Op::GatherRows { x, idx } => {
                    let mut g = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = g.row_mut(src);
                        row += &dy.row(r);
                    }
                    acc(&mut grads, *x, g);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        acc(&mut grads, *p, dy.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        acc(&mut grads, *p, dy.slice(s![.., start..start + n]).to_owned());
                        start += n;
                    }
                }
                Op::AddTiled { x, p } => {
                    let a = self.value(*p).nrows();
                    let mut gp = Array2::zeros(self.value(*p).dim());
                    for (r, row) in dy.rows().into_iter().enumerate() {
                        let mut t = gp.row_mut(r % a);
                        t += &row;
                    }
                    acc(&mut grads, *x, dy.clone());
                    acc(&mut grads, *p, gp);
                }
                Op::MessagePass { x, preds, act, combine, phi } => {
                    let mut next = phi.iter();
                    let xv = self.value(*x).as_standard_layout();
                    let d = xv.ncols();
                    let xs = xv.as_slice().expect("standard layout");
                    let dy = dy.as_standard_layout();
                    let dys = dy.as_slice().expect("standard layout");
                    let mut g = Array2::zeros(xv.dim());
                    let gs = g.as_slice_mut().expect("standard layout");
                    for (v, ps) in preds.iter().enumerate() {
                        let dyv = &dys[v * d..(v + 1) * d];
                        if ps.is_empty() {
                            for (o, &t) in gs[v * d..(v + 1) * d].iter_mut().zip(dyv) {
                                *o += t;
                            }
                            continue;
                        }
                        let inv = F::one() / F::of_usize(ps.len());
                        let a = &xs[v * d..(v + 1) * d];
                        for &u in ps.iter() {
                            let b = &xs[u * d..(u + 1) * d];
                            match combine {
                                Combine::Elementwise => {
                                    for c in 0..d {
                                        let h = *next.next().expect("cached activation");
                                        let dh = dyv[c] * act.derivative_at_output(h) * inv;
                                        gs[v * d + c] += dh * b[c];
                                        gs[u * d + c] += dh * a[c];
                                    }
                                }
                                Combine::ScalarGated => {
                                    let phi = *next.next().expect("cached activation");
                                    let dot = dyv.iter().zip(b).fold(F::zero(), |acc, (&p, &q)| acc + p * q);
                                    let gsc = act.derivative_at_output(phi) * dot * inv;
                                    for c in 0..d {
                                        gs[u * d + c] += phi * dyv[c] * inv + gsc * a[c];
                                        gs[v * d + c] += gsc * b[c];
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    window,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, d) = qv.dim();
                    let dk = d / heads;
                    let scale = F::one() / F::of_usize(dk).sqrt();
                    let mut gq = Array2::zeros((rows, d));
                    let mut gk = Array2::zeros((rows, d));
                    let mut gv = Array2::zeros((rows, d));
                    for w in 0..rows / window {
                        let r = w * window..(w + 1) * window;
                        for h in 0..*heads {
                            let c = h * dk..(h + 1) * dk;
                            let p = &probs[w * heads + h];
                            let dout = dy.slice(s![r.clone(), c.clone()]);
                            let qh = qv.slice(s![r.clone(), c.clone()]);
                            let kh = kv.slice(s![r.clone(), c.clone()]);
                            let vh = vv.slice(s![r.clone(), c.clone()]);
                            gv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&dout));
                            let dp = dout.dot(&vh.t());
                            let mut ds = &dp * p;
                            let rs = ds.sum_axis(Axis(1));
                            for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                                for (j, val) in row.iter_mut().enumerate() {
                                    *val -= p[[i, j]] * rs[i];
                                }
                            }
                            ds *= scale;
                            gq.slice_mut(s![r.clone(), c.clone()]).assign(&ds.dot(&kh));
                            gk.slice_mut(s![r.clone(), c]).assign(&ds.t().dot(&qh));
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::LayerNorm { x, g, b, xhat, inv_std } => {
                    let gv = self.value(*g);
                    let d = F::of_usize(xhat.ncols());
                    acc(&mut grads, *g, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *b, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * gv;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let s1 = dh.sum();
                        let s2 = dh.dot(&xh);
                        let k = inv_std[r] / d;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = k * (d * dh[c] - s1 - xh[c] * s2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SegmentMean { x, size } => {
                    let inv = F::one() / F::of_usize(*size);
                    let mut g = Array2::zeros(self.value(*x).dim());
                    for (r, mut row) in g.rows_mut().into_iter().enumerate() {
                        row.assign(&(&dy.row(r / size) * inv));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut g = &dy * y;
                    let rs = g.sum_axis(Axis(1));
                    for (r, mut row) in g.rows_mut().into_iter().enumerate() {
                        row.scaled_add(-rs[r], &y.row(r));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let n = F::of_usize(targets.len().max(1));
                    let mut g = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        g[[i, t]] -= F::one();
                    }
                    g *= dy[[0, 0]] / n;
                    acc(&mut grads, *logits, g);
                }
                Op::PairSqDist { x, pairs } => {
                    let xv = self.value(*x);
                    let mut g = Array2::zeros(xv.dim());
                    if !pairs.is_empty() {
                        let c = F::of(2.0) * dy[[0, 0]] / F::of_usize(pairs.len());
                        for &(a, b) in pairs.iter() {
                            let d = (&xv.row(a) - &xv.row(b)) * c;
                            let mut ra = g.row_mut(a);
                            ra += &d;
                            let mut rb = g.row_mut(b);
                            rb -= &d;
                        }
                    }
                    acc(&mut grads, *x, g);
                }
            }
            grads[i] = Some(dy);
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Compares backward() against central differences for every leaf entry.
    fn check(leaves: Vec<Array2<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let eval = |vals: &[Array2<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let out = build(&mut t, &vars);
            (t.scalar(out), t, vars, out)
        };
        let (_, tape, vars, out) = eval(&leaves);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads[vars[li].0].clone().unwrap_or_else(|| Array2::zeros(leaf.dim()));
            for idx in ndarray::indices(leaf.dim()) {
                let mut plus = leaves.clone();
                plus[li][idx] += h;
                let mut minus = leaves.clone();
                minus[li][idx] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g[idx];
                assert!((an - fd).abs() <= 1e-6 * (1.0 + an.abs()), "leaf {li} {idx:?}: {an} vs {fd}");
            }
        }
    }

    /// Reduces any matrix to a scalar with fixed random weights.
    fn probe(t: &mut Tape<f64>, x: Var, seed: u64) -> Var {
        let (r, c) = t.value(x).dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.leaf(rand_mat(&mut rng, 1, c));
        let y = t.linear(x, w, None);
        t.segment_mean(y, r)
    }

    #[test]
    fn linear_add_scale_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(
            vec![rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 2, 4), rand_mat(&mut rng, 1, 2)],
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]));
                let a = t.tanh(y);
                let b = t.relu(y);
                let s = t.add(a, b);
                let s = t.scale(s, 0.7);
                probe(t, s, 3)
            },
        );
    }

    #[test]
    fn gather_concat_tile_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(
            vec![rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 2, 3)],
            |t, v| {
                let r = t.concat_rows(&[v[0], v[1]]);
                let g = t.gather_rows(r, Arc::new(vec![4, 0, 0, 2, 3, 1]));
                let tiled = t.add_tiled(g, v[1]);
                let c = t.concat_cols(&[tiled, tiled]);
                let m = t.segment_mean(c, 3);
                probe(t, m, 4)
            },
        );
    }

    #[test]
    fn message_pass_both_combines() {
        let preds: Preds = Arc::new(vec![vec![], vec![0], vec![0, 1], vec![1, 2, 0]]);
        for combine in [Combine::Elementwise, Combine::ScalarGated] {
            for act in [Activation::Tanh, Activation::Identity, Activation::Sigmoid] {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let p = preds.clone();
                check(vec![rand_mat(&mut rng, 4, 3)], move |t, v| {
                    let y = t.message_pass(v[0], p.clone(), act, combine);
                    probe(t, y, 6)
                });
            }
        }
    }

    #[test]
    fn attention_layer_norm_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        check(
            vec![
                rand_mat(&mut rng, 6, 4),
                rand_mat(&mut rng, 6, 4),
                rand_mat(&mut rng, 6, 4),
                rand_mat(&mut rng, 1, 4),
                rand_mat(&mut rng, 1, 4),
            ],
            |t, v| {
                let a = t.attention(v[0], v[1], v[2], 2, 3);
                let n = t.layer_norm(a, v[3], v[4]);
                let s = t.softmax(n);
                probe(t, s, 8)
            },
        );
    }

    #[test]
    fn cross_entropy_and_pair_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        check(vec![rand_mat(&mut rng, 4, 3)], |t, v| {
            let ce = t.softmax_cross_entropy(v[0], Arc::new(vec![0, 2, 1, 2]));
            let p = t.softmax(v[0]);
            let sm = t.pair_sq_dist(p, Arc::new(vec![(0, 1), (1, 2), (2, 3)]));
            let sm = t.scale(sm, 0.1);
            t.add(ce, sm)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_mat(&mut rng, 5, 7) * 30.0;
        let p = softmax_rows(x.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
