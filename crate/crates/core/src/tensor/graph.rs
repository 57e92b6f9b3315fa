use std::cell::{Ref, RefCell};

use super::kernels;
use super::{Float, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// Records every op applied to its variables so that [`Graph::backward`]
/// can replay them in reverse.
///
/// Nodes are appended in creation order, which is already a topological
/// order: an op can only consume nodes that exist. Gradients of leaves
/// created with `requires_grad` accumulate across backward calls until
/// [`Graph::zero_grad`].
///
/// A graph is single-threaded; build one per training step or per
/// evaluated sample.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: T },
    AddBias { a: usize, bias: usize },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Concat { parts: Vec<(usize, usize)>, outer: usize },
    SumAxis { a: usize, outer: usize, axis_len: usize, inner: usize, mean: bool },
    Softmax(usize),
    Reshape(usize),
    Slice { a: usize, outer: usize, width: usize, start: usize, len: usize },
    Row { a: usize, index: usize, cols: usize },
    Gather { table: usize, ids: Vec<usize>, cols: usize },
    Stack(Vec<usize>),
    Cosine(CosineSaved<T>),
    Hinge { neg: usize, pos: usize, active: bool },
    Max { inputs: Vec<usize>, arg: usize },
    CrossEntropy { logits: usize, target: usize, probs: Vec<T> },
}

struct CosineSaved<T> {
    u: usize,
    v: usize,
    value: T,
    nu: T,
    nv: T,
    u_clamped: bool,
    v_clamped: bool,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

fn is_single(t: &Tensor<impl Float>) -> bool {
    t.len() == 1 && t.shape().len() <= 1
}

pub(crate) fn cosine_parts<T: Float>(u: &[T], v: &[T]) -> Result<(T, T, T, bool, bool)> {
    let mut dot = T::zero();
    let mut uu = T::zero();
    let mut vv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    let eps = T::of(COSINE_EPS);
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu <= eps && nv <= eps {
        return Err(Error::Degenerate("cosine similarity of two near-zero vectors".into()));
    }
    let (nu, u_clamped) = if nu > eps { (nu, false) } else { (eps, true) };
    let (nv, v_clamped) = if nv > eps { (nv, false) } else { (eps, true) };
    Ok((dot / (nu * nv), nu, nv, u_clamped, v_clamped))
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    /// Trainable leaf holding a copy of `value`.
    pub fn param(&self, value: &Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, v: f64) -> Result<Var<'_, T>> {
        self.constant(Tensor::scalar(T::of(v)))
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &str) -> Result<Var<'_, T>> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by `{name}` (node #{id}, shape {:?})",
                value.shape()
            )));
        }
        nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var { graph: self, id })
    }

    fn check_owner(&self, v: Var<'_, T>) {
        debug_assert!(std::ptr::eq(self, v.graph), "variable belongs to another graph");
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn value(&self, v: Var<'_, T>) -> Ref<'_, Tensor<T>> {
        self.check_owner(v);
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    // ---- n-ary constructors -------------------------------------------

    /// Concatenates along the last axis. Leading dimensions must agree.
    pub fn concat(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let (value, spec) = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts[0].id].value.shape();
            let lead = first[..first.len().saturating_sub(1)].to_vec();
            let outer: usize = lead.iter().product();
            let mut spec = Vec::with_capacity(parts.len());
            for p in parts {
                let s = nodes[p.id].value.shape();
                if s.is_empty() || s[..s.len() - 1] != lead[..] {
                    return Err(Error::Dimension(format!(
                        "concat: shape {s:?} incompatible with {first:?}"
                    )));
                }
                spec.push((p.id, s[s.len() - 1]));
            }
            let width: usize = spec.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(outer * width);
            for o in 0..outer {
                for &(id, w) in &spec {
                    data.extend_from_slice(&nodes[id].value.data()[o * w..(o + 1) * w]);
                }
            }
            let mut shape = lead;
            shape.push(width);
            (Tensor::new(shape, data)?, (spec, outer))
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        self.push(value, Op::Concat { parts: spec.0, outer: spec.1 }, rg, "concat")
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&self, items: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        if items.is_empty() {
            return Err(Error::Dimension("stack of zero tensors".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let s0 = nodes[items[0].id].value.shape().to_vec();
            let mut data = Vec::new();
            for it in items {
                let t = &nodes[it.id].value;
                if t.shape() != &s0[..] {
                    return Err(Error::Dimension(format!(
                        "stack: shape {:?} differs from {s0:?}",
                        t.shape()
                    )));
                }
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![items.len()];
            shape.extend(s0);
            Tensor::new(shape, data)?
        };
        let ids: Vec<usize> = items.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        self.push(value, Op::Stack(ids), rg, "stack")
    }

    /// Largest of several scalars. Ties resolve to the first index, which is
    /// the only input that receives gradient.
    pub fn max(&self, items: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        if items.is_empty() {
            return Err(Error::Dimension("max over zero scalars".into()));
        }
        let (best, arg) = {
            let nodes = self.nodes.borrow();
            let mut arg = 0;
            let mut best = T::neg_infinity();
            for (i, it) in items.iter().enumerate() {
                let t = &nodes[it.id].value;
                if !is_single(t) {
                    return Err(Error::Dimension(format!("max expects scalars, got {:?}", t.shape())));
                }
                if t.item() > best {
                    best = t.item();
                    arg = i;
                }
            }
            (best, arg)
        };
        let ids: Vec<usize> = items.iter().map(|p| p.id).collect();
        let rg = self.rg(&ids);
        self.push(Tensor::scalar(best), Op::Max { inputs: ids, arg }, rg, "max")
    }

    /// `max(0, alpha + neg - pos)`. At the kink the inactive branch is taken,
    /// so the subgradient there is zero.
    pub fn hinge(&self, neg: Var<'_, T>, pos: Var<'_, T>, alpha: f64) -> Result<Var<'_, T>> {
        if !(alpha >= 0.0) {
            return Err(Error::Config(format!("hinge margin must be >= 0, got {alpha}")));
        }
        let (n, p) = {
            let nodes = self.nodes.borrow();
            let (n, p) = (&nodes[neg.id].value, &nodes[pos.id].value);
            if !is_single(n) || !is_single(p) {
                return Err(Error::Dimension(format!(
                    "hinge expects scalars, got {:?} and {:?}",
                    n.shape(),
                    p.shape()
                )));
            }
            (n.item(), p.item())
        };
        let raw = T::of(alpha) + n - p;
        let active = raw > T::zero();
        let out = if active { raw } else { T::zero() };
        let rg = self.rg(&[neg.id, pos.id]);
        self.push(Tensor::scalar(out), Op::Hinge { neg: neg.id, pos: pos.id, active }, rg, "hinge")
    }

    // ---- backward -----------------------------------------------------

    /// Propagates d(loss)/d(node) back to every reachable leaf that requires
    /// gradient, adding into its accumulated gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        self.check_owner(loss);
        let mut leaf_updates: Vec<(usize, Vec<T>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if !is_single(&root.value) {
                return Err(Error::Dimension(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.value.shape()
                )));
            }
            let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
            grads[loss.id] = Some(vec![T::one()]);
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                backprop_node(&nodes, &mut grads, id, g, &mut leaf_updates);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_updates {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn slot<'a, T: Float>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    id: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); n]))
}

/// Adds `g` (or its sum when the input was a broadcast scalar) times `sign`.
fn add_broadcast<T: Float>(dst: &mut [T], g: &[T], sign: T) {
    if dst.len() == g.len() {
        for (d, &x) in dst.iter_mut().zip(g) {
            *d += sign * x;
        }
    } else {
        let s: T = g.iter().copied().sum();
        dst[0] += sign * s;
    }
}

fn backprop_node<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    g: Vec<T>,
    leaf_updates: &mut Vec<(usize, Vec<T>)>,
) {
    let node = &nodes[id];
    let val = |i: usize| nodes[i].value.data();
    match &node.op {
        Op::Leaf => leaf_updates.push((id, g)),
        Op::MatMul { a, b, m, k, n } => {
            let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
            if let Some(ga) = slot(nodes, grads, a) {
                kernels::matmul_grad_lhs(&g, val(b), ga, m, k, n);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                kernels::matmul_grad_rhs(val(a), &g, gb, m, k, n);
            }
        }
        Op::Add { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                add_broadcast(ga, &g, T::one());
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                add_broadcast(gb, &g, T::one());
            }
        }
        Op::Sub { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                add_broadcast(ga, &g, T::one());
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                add_broadcast(gb, &g, -T::one());
            }
        }
        Op::Mul { a, b } => {
            for (me, other) in [(*a, *b), (*b, *a)] {
                let ov = val(other);
                let prod: Vec<T> = if ov.len() == g.len() {
                    g.iter().zip(ov).map(|(&x, &y)| x * y).collect()
                } else {
                    g.iter().map(|&x| x * ov[0]).collect()
                };
                if let Some(gm) = slot(nodes, grads, me) {
                    add_broadcast(gm, &prod, T::one());
                }
            }
        }
        Op::Scale { a, c } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::axpy(*c, &g, ga);
            }
        }
        Op::AddBias { a, bias } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::axpy(T::one(), &g, ga);
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                let c = gb.len();
                for row in g.chunks(c) {
                    kernels::axpy(T::one(), row, gb);
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            }
        }
        Op::Relu(a) => {
            let x = val(*a);
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    if x[i] > T::zero() {
                        ga[i] += g[i];
                    }
                }
            }
        }
        Op::Concat { parts, outer } => {
            let width: usize = parts.iter().map(|p| p.1).sum();
            let mut offset = 0;
            for &(pid, w) in parts {
                if let Some(gp) = slot(nodes, grads, pid) {
                    for o in 0..*outer {
                        let src = &g[o * width + offset..o * width + offset + w];
                        kernels::axpy(T::one(), src, &mut gp[o * w..(o + 1) * w]);
                    }
                }
                offset += w;
            }
        }
        Op::SumAxis { a, outer, axis_len, inner, mean } => {
            let scale = if *mean { T::one() / T::of(*axis_len as f64) } else { T::one() };
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..*outer {
                    for j in 0..*axis_len {
                        for i in 0..*inner {
                            ga[(o * axis_len + j) * inner + i] += scale * g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let gy = kernels::dot(&g, y);
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    ga[i] += y[i] * (g[i] - gy);
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::axpy(T::one(), &g, ga);
            }
        }
        Op::Slice { a, outer, width, start, len } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..*outer {
                    let dst = &mut ga[o * width + start..o * width + start + len];
                    kernels::axpy(T::one(), &g[o * len..(o + 1) * len], dst);
                }
            }
        }
        Op::Row { a, index, cols } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                kernels::axpy(T::one(), &g, &mut ga[index * cols..(index + 1) * cols]);
            }
        }
        Op::Gather { table, ids, cols } => {
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, &tok) in ids.iter().enumerate() {
                    kernels::axpy(T::one(), &g[r * cols..(r + 1) * cols], &mut gt[tok * cols..(tok + 1) * cols]);
                }
            }
        }
        Op::Stack(items) => {
            let each = g.len() / items.len();
            for (r, &it) in items.iter().enumerate() {
                if let Some(gi) = slot(nodes, grads, it) {
                    kernels::axpy(T::one(), &g[r * each..(r + 1) * each], gi);
                }
            }
        }
        Op::Cosine(s) => {
            let (u, v) = (val(s.u), val(s.v));
            let inv = T::one() / (s.nu * s.nv);
            let gs = g[0];
            if let Some(gu) = slot(nodes, grads, s.u) {
                let self_term = if s.u_clamped { T::zero() } else { s.value / (s.nu * s.nu) };
                for i in 0..u.len() {
                    gu[i] += gs * (v[i] * inv - self_term * u[i]);
                }
            }
            if let Some(gv) = slot(nodes, grads, s.v) {
                let self_term = if s.v_clamped { T::zero() } else { s.value / (s.nv * s.nv) };
                for i in 0..v.len() {
                    gv[i] += gs * (u[i] * inv - self_term * v[i]);
                }
            }
        }
        Op::Hinge { neg, pos, active } => {
            let gv = if *active { g[0] } else { T::zero() };
            if let Some(gn) = slot(nodes, grads, *neg) {
                gn[0] += gv;
            }
            if let Some(gp) = slot(nodes, grads, *pos) {
                gp[0] -= gv;
            }
        }
        Op::Max { inputs, arg } => {
            for (i, &inp) in inputs.iter().enumerate() {
                if let Some(gi) = slot(nodes, grads, inp) {
                    if i == *arg {
                        gi[0] += g[0];
                    }
                }
            }
        }
        Op::CrossEntropy { logits, target, probs } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                for i in 0..probs.len() {
                    let hot = if i == *target { T::one() } else { T::zero() };
                    gl[i] += g[0] * (probs[i] - hot);
                }
            }
        }
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor<T>> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.graph.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.value())
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize], name: &str) -> Result<Var<'g, T>> {
        let rg = self.graph.rg(inputs);
        self.graph.push(value, op, rg, name)
    }

    /// Matrix product. Either operand may be a vector, treated as a
    /// row (left) or column (right).
    pub fn matmul(&self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let (value, m, k, n) = {
            let a = self.value();
            let b = rhs.value();
            let (sa, sb) = (a.shape(), b.shape());
            let (m, k, out_rows) = match sa.len() {
                1 => (1, sa[0], false),
                2 => (sa[0], sa[1], true),
                _ => return Err(Error::Dimension(format!("matmul lhs must be 1-D or 2-D, got {sa:?}"))),
            };
            let (k2, n, out_cols) = match sb.len() {
                1 => (sb[0], 1, false),
                2 => (sb[0], sb[1], true),
                _ => return Err(Error::Dimension(format!("matmul rhs must be 1-D or 2-D, got {sb:?}"))),
            };
            if k != k2 {
                return Err(Error::Dimension(format!("matmul inner dimensions differ: {sa:?} x {sb:?}")));
            }
            let data = kernels::matmul(a.data(), b.data(), m, k, n);
            let shape = match (out_rows, out_cols) {
                (true, true) => vec![m, n],
                (true, false) => vec![m],
                (false, true) => vec![n],
                (false, false) => vec![],
            };
            (Tensor::new(shape, data)?, m, k, n)
        };
        self.push(value, Op::MatMul { a: self.id, b: rhs.id, m, k, n }, &[self.id, rhs.id], "matmul")
    }

    fn binary(&self, rhs: Var<'g, T>, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let a = self.value();
        let b = rhs.value();
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)
        } else if is_single(&b) {
            let y = b.item();
            Ok(a.map(|x| f(x, y)))
        } else if is_single(&a) {
            let x = a.item();
            Ok(b.map(|y| f(x, y)))
        } else {
            Err(Error::Dimension(format!("{name}: shapes {:?} and {:?} differ", a.shape(), b.shape())))
        }
    }

    pub fn add(&self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.binary(rhs, "add", |x, y| x + y)?;
        self.push(v, Op::Add { a: self.id, b: rhs.id }, &[self.id, rhs.id], "add")
    }

    pub fn sub(&self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.binary(rhs, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub { a: self.id, b: rhs.id }, &[self.id, rhs.id], "sub")
    }

    pub fn mul(&self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = self.binary(rhs, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul { a: self.id, b: rhs.id }, &[self.id, rhs.id], "mul")
    }

    pub fn scale(&self, c: f64) -> Result<Var<'g, T>> {
        let c = T::of(c);
        let v = self.with(|t| t.map(|x| x * c));
        self.push(v, Op::Scale { a: self.id, c }, &[self.id], "scale")
    }

    /// Adds a vector to every row of a matrix (or to a vector of equal length).
    pub fn add_bias(&self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        let v = {
            let a = self.value();
            let b = bias.value();
            if b.shape().len() != 1 || a.cols() != b.len() || a.shape().is_empty() {
                return Err(Error::Dimension(format!(
                    "add_bias: bias {:?} does not match rows of {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(b.len()) {
                kernels::axpy(T::one(), b.data(), row);
            }
            out
        };
        self.push(v, Op::AddBias { a: self.id, bias: bias.id }, &[self.id, bias.id], "add_bias")
    }

    pub fn sigmoid(&self) -> Result<Var<'g, T>> {
        let v = self.with(|t| t.map(|x| T::one() / (T::one() + (-x).exp())));
        self.push(v, Op::Sigmoid(self.id), &[self.id], "sigmoid")
    }

    pub fn tanh(&self) -> Result<Var<'g, T>> {
        let v = self.with(|t| t.map(|x| x.tanh()));
        self.push(v, Op::Tanh(self.id), &[self.id], "tanh")
    }

    pub fn relu(&self) -> Result<Var<'g, T>> {
        let v = self.with(|t| t.map(|x| if x > T::zero() { x } else { T::zero() }));
        self.push(v, Op::Relu(self.id), &[self.id], "relu")
    }

    fn reduce(&self, axis: Option<usize>, mean: bool) -> Result<Var<'g, T>> {
        let (value, outer, axis_len, inner) = {
            let t = self.value();
            let shape = t.shape();
            let (outer, axis_len, inner, out_shape) = match axis {
                None => (1, t.len(), 1, vec![]),
                Some(ax) if ax < shape.len() => {
                    let mut out_shape = shape.to_vec();
                    out_shape.remove(ax);
                    (shape[..ax].iter().product(), shape[ax], shape[ax + 1..].iter().product(), out_shape)
                }
                Some(ax) => {
                    return Err(Error::Dimension(format!("axis {ax} out of range for {shape:?}")));
                }
            };
            let d = t.data();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for j in 0..axis_len {
                    for i in 0..inner {
                        out[o * inner + i] += d[(o * axis_len + j) * inner + i];
                    }
                }
            }
            if mean {
                let n = T::of(axis_len as f64);
                out.iter_mut().for_each(|x| *x = *x / n);
            }
            (Tensor::new(out_shape, out)?, outer, axis_len, inner)
        };
        let name = if mean { "mean" } else { "sum" };
        self.push(value, Op::SumAxis { a: self.id, outer, axis_len, inner, mean }, &[self.id], name)
    }

    pub fn sum(&self) -> Result<Var<'g, T>> {
        self.reduce(None, false)
    }

    pub fn mean(&self) -> Result<Var<'g, T>> {
        self.reduce(None, true)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'g, T>> {
        self.reduce(Some(axis), false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'g, T>> {
        self.reduce(Some(axis), true)
    }

    /// Softmax of a vector, computed after subtracting the maximum.
    pub fn softmax(&self) -> Result<Var<'g, T>> {
        let v = {
            let t = self.value();
            if t.shape().len() != 1 {
                return Err(Error::Dimension(format!("softmax expects a vector, got {:?}", t.shape())));
            }
            let m = t.data().iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = t.data().iter().map(|&x| (x - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            Tensor::vector(e.into_iter().map(|x| x / s).collect())
        };
        self.push(v, Op::Softmax(self.id), &[self.id], "softmax")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.to_tensor().reshaped(shape.to_vec())?;
        self.push(v, Op::Reshape(self.id), &[self.id], "reshape")
    }

    /// `len` entries of the last axis starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'g, T>> {
        let (v, outer, width) = {
            let t = self.value();
            let width = t.cols();
            if t.shape().is_empty() || start + len > width || len == 0 {
                return Err(Error::Dimension(format!(
                    "slice [{start}, {}) out of range for {:?}",
                    start + len,
                    t.shape()
                )));
            }
            let outer = t.len() / width;
            let mut data = Vec::with_capacity(outer * len);
            for o in 0..outer {
                data.extend_from_slice(&t.data()[o * width + start..o * width + start + len]);
            }
            let mut shape = t.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            (Tensor::new(shape, data)?, outer, width)
        };
        self.push(v, Op::Slice { a: self.id, outer, width, start, len }, &[self.id], "slice")
    }

    /// Row `index` of a matrix.
    pub fn row(&self, index: usize) -> Result<Var<'g, T>> {
        let (v, cols) = {
            let t = self.value();
            if t.shape().len() != 2 || index >= t.rows() {
                return Err(Error::Dimension(format!("row {index} of {:?}", t.shape())));
            }
            (Tensor::vector(t.row(index).to_vec()), t.cols())
        };
        self.push(v, Op::Row { a: self.id, index, cols }, &[self.id], "row")
    }

    /// Selects rows of a table (embedding lookup).
    pub fn gather(&self, ids: &[usize]) -> Result<Var<'g, T>> {
        let (v, cols) = {
            let t = self.value();
            if t.shape().len() != 2 {
                return Err(Error::Dimension(format!("gather needs a matrix, got {:?}", t.shape())));
            }
            if ids.is_empty() {
                return Err(Error::EmptySequence("gather with no ids".into()));
            }
            let mut data = Vec::with_capacity(ids.len() * t.cols());
            for &i in ids {
                if i >= t.rows() {
                    return Err(Error::Data(format!("id {i} outside table of {} rows", t.rows())));
                }
                data.extend_from_slice(t.row(i));
            }
            (Tensor::new(vec![ids.len(), t.cols()], data)?, t.cols())
        };
        self.push(v, Op::Gather { table: self.id, ids: ids.to_vec(), cols }, &[self.id], "gather")
    }

    /// Cosine similarity of two vectors; see [`crate::tensor::cosine`].
    pub fn cosine(&self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let saved = {
            let (u, v) = (self.value(), other.value());
            if u.shape().len() != 1 || u.shape() != v.shape() {
                return Err(Error::Dimension(format!(
                    "cosine of shapes {:?} and {:?}",
                    u.shape(),
                    v.shape()
                )));
            }
            let (value, nu, nv, u_clamped, v_clamped) = cosine_parts(u.data(), v.data())?;
            CosineSaved { u: self.id, v: other.id, value, nu, nv, u_clamped, v_clamped }
        };
        let out = Tensor::scalar(saved.value);
        self.push(out, Op::Cosine(saved), &[self.id, other.id], "cosine")
    }

    /// Softmax cross-entropy of a logit vector against a target class.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'g, T>> {
        let (loss, probs) = {
            let t = self.value();
            if t.shape().len() != 1 {
                return Err(Error::Dimension(format!("cross_entropy expects a vector, got {:?}", t.shape())));
            }
            if target >= t.len() {
                return Err(Error::Data(format!("target {target} out of range for {} classes", t.len())));
            }
            let l = t.data();
            let m = l.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = l.iter().map(|&x| (x - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            let loss = (m - l[target]) + s.ln();
            (loss, e.into_iter().map(|x| x / s).collect::<Vec<_>>())
        };
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: self.id, target, probs },
            &[self.id],
            "cross_entropy",
        )
    }
}
