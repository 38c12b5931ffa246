use std::collections::HashMap;

use super::{ParamId, ParamSet, Tensor, PROB_EPS};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `scalar * vector`, the scalar being a one-element node.
    ScalarMul(Var, Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Lookup(ParamId, usize),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Bce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A single-threaded tape. Nodes are appended in evaluation order, which is
/// a topological order, and [`Graph::backward`] walks it in reverse.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_nodes: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::Shape {
        op,
        shapes: shapes.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" x "),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn bce_term(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
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

    /// Shorthand for the single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// A free leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// The node holding a parameter's current value; created once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), self.params.value(id).clone(), true);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let out = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => {
                let (r, k, c) = (sa[0], sa[1], sb[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &tb.data()[p * c..(p + 1) * c];
                        let orow = &mut out[i * c..(i + 1) * c];
                        for (o, bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
                Tensor::new(vec![r, c], out)?
            }
            (2, 1) if sa[1] == sb[0] => {
                let (r, k) = (sa[0], sa[1]);
                let x = tb.data();
                let out = (0..r)
                    .map(|i| ta.data()[i * k..(i + 1) * k].iter().zip(x).map(|(w, x)| w * x).sum())
                    .collect();
                Tensor::vector(out)
            }
            (1, 2) if sa[0] == sb[0] => {
                let (k, c) = (sb[0], sb[1]);
                let mut out = vec![0.0; c];
                for p in 0..k {
                    let av = ta.data()[p];
                    for (o, bv) in out.iter_mut().zip(&tb.data()[p * c..(p + 1) * c]) {
                        *o += av * bv;
                    }
                }
                Tensor::vector(out)
            }
            _ => return Err(shape_err("matmul", &[sa, sb])),
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, &[ta.shape(), tb.shape()]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| f(*x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(op, out, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(shape_err("scalar_mul", &[ts.shape(), self.value(a).shape()]));
        }
        let k = ts.data()[0];
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|x| k * x).collect(),
        };
        let rg = self.rg(&[s, a]);
        Ok(self.push(Op::ScalarMul(s, a), out, rg))
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_vector() {
                return Err(shape_err("concat", &[t.shape()]));
            }
            data.extend_from_slice(t.data());
        }
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), rg))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if !t.is_vector() || start + len > t.len() {
            return Err(Error::Shape {
                op: "slice",
                shapes: format!("{:?} [{start}..{}]", t.shape(), start + len),
            });
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Slice(a, start), out, rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Contract("stack of zero rows".into()));
        };
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if !t.is_vector() || t.len() != width {
                return Err(shape_err("stack", &[self.value(first).shape(), t.shape()]));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows.len(), width], data)?;
        let rg = self.rg(rows);
        Ok(self.push(Op::Stack(rows.to_vec()), out, rg))
    }

    /// Row `row` of a matrix parameter, read without copying the table.
    pub fn lookup(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.params.value(table);
        if !t.is_matrix() {
            return Err(shape_err("lookup", &[t.shape()]));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        if row >= rows {
            return Err(Error::Index {
                op: "lookup",
                index: row,
                len: rows,
            });
        }
        let out = Tensor::vector(t.data()[row * cols..(row + 1) * cols].to_vec());
        Ok(self.push(Op::Lookup(table, row), out, true))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_vector() || t.is_empty() {
            return Err(shape_err("softmax", &[t.shape()]));
        }
        let out = Tensor::vector(softmax(t.data()));
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Softmax(a), out, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", &[t.shape()]));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Mean(a), Tensor::scalar(m), rg))
    }

    /// Summed binary cross-entropy of probabilities `pred` against 0/1
    /// targets, with probabilities clamped into `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        if t.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce",
                shapes: format!("{:?} vs {} targets", t.shape(), targets.len()),
            });
        }
        let loss = t.data().iter().zip(targets).map(|(p, y)| bce_term(*p, *y)).sum();
        let rg = self.rg(&[pred]);
        Ok(self.push(Op::Bce(pred, targets.to_vec()), Tensor::scalar(loss), rg))
    }

    /// Reverse pass from a one-element node. Node gradients stay available
    /// through [`Graph::grad`]; the return value holds the gradient for each
    /// parameter (indexed by [`ParamId`]) that the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => add_into(&mut param_grads[id.0], &g),
                Op::Lookup(id, row) => {
                    let t = self.params.value(*id);
                    let cols = t.shape()[1];
                    let slot = param_grads[id.0].get_or_insert_with(|| vec![0.0; t.len()]);
                    for (s, gv) in slot[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *s += gv;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (sa, sb) = (ta.shape(), tb.shape());
                    let (mut ga, mut gb) = (vec![0.0; ta.len()], vec![0.0; tb.len()]);
                    match (sa.len(), sb.len()) {
                        (2, 2) => {
                            let (r, k, c) = (sa[0], sa[1], sb[1]);
                            for i in 0..r {
                                for p in 0..k {
                                    let mut acc = 0.0;
                                    for j in 0..c {
                                        let gij = g[i * c + j];
                                        acc += gij * tb.data()[p * c + j];
                                        gb[p * c + j] += ta.data()[i * k + p] * gij;
                                    }
                                    ga[i * k + p] += acc;
                                }
                            }
                        }
                        (2, 1) => {
                            let (r, k) = (sa[0], sa[1]);
                            for i in 0..r {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    ga[i * k + p] += gi * tb.data()[p];
                                    gb[p] += ta.data()[i * k + p] * gi;
                                }
                            }
                        }
                        _ => {
                            let (k, c) = (sb[0], sb[1]);
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..c {
                                    acc += tb.data()[p * c + j] * g[j];
                                    gb[p * c + j] += ta.data()[p] * g[j];
                                }
                                ga[p] += acc;
                            }
                        }
                    }
                    let (a, b) = (*a, *b);
                    self.send(&mut grads, a, ga);
                    self.send(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.send(&mut grads, a, g.clone());
                    self.send(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    let neg = g.iter().map(|x| -x).collect();
                    self.send(&mut grads, a, g.clone());
                    self.send(&mut grads, b, neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = zip_mul(&g, self.nodes[b.0].value.data());
                    let gb = zip_mul(&g, self.nodes[a.0].value.data());
                    self.send(&mut grads, a, ga);
                    self.send(&mut grads, b, gb);
                }
                Op::Scale(a, k) => {
                    let a = *a;
                    let ga = g.iter().map(|x| k * x).collect();
                    self.send(&mut grads, a, ga);
                }
                Op::ScalarMul(s, a) => {
                    let (s, a) = (*s, *a);
                    let k = self.nodes[s.0].value.data()[0];
                    let gs: f64 = g.iter().zip(self.nodes[a.0].value.data()).map(|(g, x)| g * x).sum();
                    let ga = g.iter().map(|x| k * x).collect();
                    self.send(&mut grads, s, vec![gs]);
                    self.send(&mut grads, a, ga);
                }
                Op::OneMinus(a) => {
                    let a = *a;
                    let ga = g.iter().map(|x| -x).collect();
                    self.send(&mut grads, a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.len();
                        self.send(&mut grads, p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let (a, start) = (*a, *start);
                    let mut ga = vec![0.0; self.nodes[a.0].value.len()];
                    ga[start..start + g.len()].copy_from_slice(&g);
                    self.send(&mut grads, a, ga);
                }
                Op::Stack(rows) => {
                    let width = node.value.shape()[1];
                    for (i, &r) in rows.iter().enumerate() {
                        self.send(&mut grads, r, g[i * width..(i + 1) * width].to_vec());
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ga = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.send(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let ga = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.send(&mut grads, a, ga);
                }
                Op::Softmax(a) => {
                    let a = *a;
                    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    let ga = g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                    self.send(&mut grads, a, ga);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.len();
                    self.send(&mut grads, a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = self.nodes[a.0].value.len();
                    self.send(&mut grads, a, vec![g[0] / n as f64; n]);
                }
                Op::Bce(p, targets) => {
                    let p = *p;
                    let ga = self.nodes[p.0]
                        .value
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&p, &t)| {
                            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                                0.0
                            } else {
                                g[0] * (-t / p + (1.0 - t) / (1.0 - p))
                            }
                        })
                        .collect();
                    self.send(&mut grads, p, ga);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(param_grads)
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, g: Vec<f64>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(&g) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn zip_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::zeros(&[4]));
        let y = g.sigmoid(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::vector(vec![2.5; 3]));
        let y = g.softmax(x).unwrap();
        for v in g.value(y).data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::vector(vec![1000.0, 999.0, -1000.0]));
        let y = g.softmax(x).unwrap();
        let s: f64 = g.value(y).data().iter().sum();
        assert!(close(s, 1.0, 1e-12));
        assert!(g.value(y).all_finite());
    }

    #[test]
    fn matmul_identity() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let (i, xv) = (g.constant(eye), g.constant(x.clone()));
        let y = g.matmul(i, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn matmul_shape_mismatch_names_primitive() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert!(shapes.contains("[2, 3]"));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn lookup_out_of_range() {
        let mut p = ParamSet::new();
        let id = p.add("emb", Tensor::zeros(&[3, 2])).unwrap();
        let mut g = Graph::new(&p);
        assert!(matches!(g.lookup(id, 3), Err(Error::Index { index: 3, len: 3, .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut p = ParamSet::new();
        let id = p.add("w", Tensor::vector(vec![0.3, -1.0, 2.0])).unwrap();
        let mut g = Graph::new(&p);
        let w = g.param(id);
        let l = g.sum(w);
        let pg = g.backward(l).unwrap();
        assert_eq!(pg[id.index()].as_deref(), Some(&[1.0, 1.0, 1.0][..]));
    }

    #[test]
    fn grad_of_sigmoid_at_zero_is_quarter() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let w = g.variable(Tensor::scalar(0.0));
        let l = g.sigmoid(w);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w), Some(&[0.25][..]));
    }

    #[test]
    fn fan_out_accumulates() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.variable(Tensor::scalar(1.7));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), Some(&[2.0][..]));
    }

    #[test]
    fn backward_requires_scalar() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn lookup_gradient_lands_on_row() {
        let mut p = ParamSet::new();
        let id = p
            .add("emb", Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap())
            .unwrap();
        let mut g = Graph::new(&p);
        let a = g.lookup(id, 1).unwrap();
        let b = g.lookup(id, 1).unwrap();
        let s = g.add(a, b).unwrap();
        let l = g.sum(s);
        let pg = g.backward(l).unwrap();
        assert_eq!(pg[0].as_deref(), Some(&[0., 0., 2., 2., 0., 0.][..]));
    }

    #[test]
    fn bce_values() {
        let p = ParamSet::new();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::vector(vec![0.9, 0.2]));
        let l = g.bce(x, &[1.0, 0.0]).unwrap();
        assert!(close(g.scalar(l), -(0.9f64.ln()) - 0.8f64.ln(), 1e-12));
        let half = g.constant(Tensor::vector(vec![0.5; 4]));
        let l = g.bce(half, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(close(g.scalar(l), 4.0 * 2f64.ln(), 1e-12));
        let exact = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = g.bce(exact, &[1.0, 0.0]).unwrap();
        assert!(g.scalar(l) <= 2e-6);
    }
}
