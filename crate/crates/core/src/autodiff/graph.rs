use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::resample::ResamplePlan;
use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Clone)]
enum Op {
    Constant,
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddConst(usize),
    /// Tensor times a shape-`[1]` node.
    MulScalar(usize, usize),
    /// Tensor plus a shape-`[1]` node.
    AddScalar(usize, usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    SumAxis(usize),
    Broadcast(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    RecipGuarded(usize),
    Powf(usize, f64),
    Relu(usize),
    Elu(usize),
    Softshrink(usize, f64),
    Clamp(usize, f64, f64),
    Gather { a: usize, index: Rc<[usize]> },
    ScatterAdd { a: usize, index: Rc<[usize]> },
    Slice { a: usize, start: usize },
    Pad { a: usize, start: usize },
    Concat(Vec<usize>),
    Resample { a: usize, plan: Rc<ResamplePlan>, adjoint: bool },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Constant | Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MulScalar(a, b) | AddScalar(a, b) => {
                vec![*a, *b]
            }
            MatMul { a, b, .. } => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddConst(a) | Transpose(a) | Reshape(a) | Sum(a)
            | Broadcast(a) | Exp(a) | Ln(a) | Sqrt(a) | RecipGuarded(a) | Powf(a, _) | Relu(a)
            | Elu(a) | Softshrink(a, _) | Clamp(a, _, _) => vec![*a],
            SumAxis(a)
            | Gather { a, .. }
            | ScatterAdd { a, .. }
            | Slice { a, .. }
            | Pad { a, .. }
            | Resample { a, .. } => vec![*a],
            Concat(parts) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Constant => "constant",
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(..) => "neg",
            Scale(..) => "scale",
            AddConst(..) => "add_const",
            MulScalar(..) => "mul_scalar",
            AddScalar(..) => "add_scalar",
            MatMul { .. } => "matmul",
            Transpose(..) => "transpose",
            Reshape(..) => "reshape",
            Sum(..) => "sum",
            SumAxis(..) => "sum_axis",
            Broadcast(..) => "broadcast",
            Exp(..) => "exp",
            Ln(..) => "ln",
            Sqrt(..) => "sqrt",
            RecipGuarded(..) => "recip",
            Powf(..) => "powf",
            Relu(..) => "relu",
            Elu(..) => "elu",
            Softshrink(..) => "softshrink",
            Clamp(..) => "clamp",
            Gather { .. } => "gather",
            ScatterAdd { .. } => "scatter_add",
            Slice { .. } => "slice",
            Pad { .. } => "pad",
            Concat(..) => "concat",
            Resample { .. } => "resample",
        }
    }
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// Nodes are pushed in evaluation order, so node ids are a topological order.
/// Gradients computed with `create_graph` are themselves nodes on the same
/// tape and can be differentiated again.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    no_grad: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            no_grad: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let requires = !self.no_grad.get();
        self.push_raw(if requires { Op::Leaf } else { Op::Constant }, value, requires)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(Op::Constant, value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Runs `f` with gradient tracking disabled: every node created inside is
    /// a constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.no_grad.replace(true);
        let out = f();
        self.no_grad.set(prev);
        out
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g>]) -> Var<'g> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let tail: Vec<usize> = values[0].shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::with_capacity(values.iter().map(|v| v.len()).sum());
        for v in &values {
            assert_eq!(&v.shape()[1..], &tail[..], "concat trailing shape mismatch");
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        self.push(
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            Tensor::new(&shape, data),
        )
    }

    fn push_raw(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Var { graph: self, id }
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let requires = !self.no_grad.get() && {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        if requires {
            self.push_raw(op, value, true)
        } else {
            self.push_raw(Op::Constant, value, false)
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradient of a scalar `objective` with respect to each node in `wrt`.
    ///
    /// Nodes in `wrt` may be intermediate values; the derivative then treats
    /// them as independent inputs and only paths through them contribute.
    /// Without `create_graph` the results are constants.
    pub fn grad<'g>(
        &'g self,
        objective: Var<'g>,
        wrt: &[Var<'g>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g>>, AutodiffError> {
        let obj_value = objective.value();
        if obj_value.shape() != [1] {
            return Err(AutodiffError::NonScalarObjective {
                shape: obj_value.shape().to_vec(),
            });
        }
        if !obj_value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "objective" });
        }
        let prev = self.no_grad.replace(!create_graph);
        let result = self.backward(objective, wrt);
        self.no_grad.set(prev);
        result
    }

    /// [`Graph::grad`] returning plain tensors.
    pub fn grad_tensors<'g>(
        &'g self,
        objective: Var<'g>,
        wrt: &[Var<'g>],
    ) -> Result<Vec<Tensor>, AutodiffError> {
        Ok(self
            .grad(objective, wrt, false)?
            .into_iter()
            .map(|g| (*g.value()).clone())
            .collect())
    }

    fn backward<'g>(
        &'g self,
        objective: Var<'g>,
        wrt: &[Var<'g>],
    ) -> Result<Vec<Var<'g>>, AutodiffError> {
        let top = objective.id;
        let Some(lo) = wrt.iter().map(|w| w.id).filter(|&id| id <= top).min() else {
            return Ok(wrt.iter().map(|w| self.zeros_like(*w)).collect());
        };
        let span = top - lo + 1;

        // Nodes on a path from some wrt node to the objective.
        let mut is_target = vec![false; span];
        for w in wrt {
            if w.id >= lo && w.id <= top {
                is_target[w.id - lo] = true;
            }
        }
        let mut relevant = vec![false; span];
        {
            let nodes = self.nodes.borrow();
            for id in lo..=top {
                let node = &nodes[id];
                relevant[id - lo] = is_target[id - lo]
                    || (node.requires_grad
                        && node
                            .op
                            .parents()
                            .iter()
                            .any(|&p| p >= lo && relevant[p - lo]));
            }
        }

        let mut grads: Vec<Option<Var<'g>>> = vec![None; span];
        if relevant[top - lo] {
            grads[top - lo] = Some(self.constant(Tensor::ones(&[1])));
        }
        for id in (lo..=top).rev() {
            if is_target[id - lo] {
                continue;
            }
            let Some(g) = grads[id - lo] else { continue };
            if !relevant[id - lo] {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            for (parent, contrib) in self.vjp(id, &op, g) {
                if parent < lo || !relevant[parent - lo] {
                    continue;
                }
                if !contrib.value().is_finite() {
                    return Err(AutodiffError::NonFinite { op: op.name() });
                }
                let slot = &mut grads[parent - lo];
                *slot = Some(match *slot {
                    Some(acc) => acc + contrib,
                    None => contrib,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                if w.id >= lo && w.id <= top {
                    grads[w.id - lo].unwrap_or_else(|| self.zeros_like(*w))
                } else {
                    self.zeros_like(*w)
                }
            })
            .collect())
    }

    fn zeros_like<'g>(&'g self, v: Var<'g>) -> Var<'g> {
        self.constant(Tensor::zeros(v.value().shape()))
    }

    /// Vector-Jacobian products for node `id`, expressed as graph operations
    /// so that they can be differentiated again.
    fn vjp<'g>(&'g self, id: usize, op: &Op, g: Var<'g>) -> Vec<(usize, Var<'g>)> {
        let out = self.var(id);
        let v = |i: usize| self.var(i);
        let shape_of = |i: usize| self.value_of(i).shape().to_vec();
        match op {
            Op::Constant | Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g), (*b, g)],
            Op::Sub(a, b) => vec![(*a, g), (*b, -g)],
            Op::Mul(a, b) => vec![(*a, g * v(*b)), (*b, g * v(*a))],
            Op::Div(a, b) => {
                let ga = g / v(*b);
                let gb = -(ga * out);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Neg(a) => vec![(*a, -g)],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddConst(a) => vec![(*a, g)],
            Op::MulScalar(a, s) => vec![
                (*a, g.mul_scalar(v(*s))),
                (*s, (g * v(*a)).sum()),
            ],
            Op::AddScalar(a, s) => vec![(*a, g), (*s, g.sum())],
            Op::MatMul { a, b, ta, tb } => {
                let (a, b) = (v(*a), v(*b));
                let (ga, gb) = match (ta, tb) {
                    (false, false) => (g.matmul_t(b, false, true), a.matmul_t(g, true, false)),
                    (false, true) => (g.matmul(b), g.matmul_t(a, true, false)),
                    (true, false) => (b.matmul_t(g, false, true), a.matmul(g)),
                    (true, true) => (b.matmul_t(g, true, true), g.matmul_t(a, true, true)),
                };
                vec![(a.id, ga), (b.id, gb)]
            }
            Op::Transpose(a) => vec![(*a, g.t())],
            Op::Reshape(a) => vec![(*a, g.reshape(&shape_of(*a)))],
            Op::Sum(a) => vec![(*a, g.broadcast_to(&shape_of(*a)))],
            Op::SumAxis(a) => vec![(*a, g.broadcast_to(&shape_of(*a)))],
            Op::Broadcast(a) => vec![(*a, g.reduce_to(&shape_of(*a)))],
            Op::Exp(a) => vec![(*a, g * out)],
            Op::Ln(a) => vec![(*a, g / v(*a))],
            Op::Sqrt(a) => vec![(*a, (g * out.recip_guarded()).scale(0.5))],
            Op::RecipGuarded(a) => vec![(*a, -(g * out * out))],
            Op::Powf(a, p) => vec![(*a, (g * v(*a).powf(p - 1.0)).scale(*p))],
            Op::Relu(a) => {
                let mask = self.value_of(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(*a, g * self.constant(mask))]
            }
            Op::Elu(a) => {
                let x = self.value_of(*a);
                let pos = self.constant(x.map(|x| if x >= 0.0 { 1.0 } else { 0.0 }));
                let neg = self.constant(x.map(|x| if x >= 0.0 { 0.0 } else { 1.0 }));
                let slope = v(*a).exp() * neg + pos;
                vec![(*a, g * slope)]
            }
            Op::Softshrink(a, lambda) => {
                let lambda = *lambda;
                let mask = self
                    .value_of(*a)
                    .map(|x| if x.abs() > lambda { 1.0 } else { 0.0 });
                vec![(*a, g * self.constant(mask))]
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mask = self
                    .value_of(*a)
                    .map(|x| if x > lo && x <= hi { 1.0 } else { 0.0 });
                vec![(*a, g * self.constant(mask))]
            }
            Op::Gather { a, index } => {
                vec![(*a, g.scatter_add(Rc::clone(index), &shape_of(*a)))]
            }
            Op::ScatterAdd { a, index } => {
                vec![(*a, g.gather(Rc::clone(index), &shape_of(*a)))]
            }
            Op::Slice { a, start } => vec![(*a, g.pad(*start, &shape_of(*a)))],
            Op::Pad { a, start } => vec![(*a, g.slice(*start, &shape_of(*a)))],
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let shape = shape_of(p);
                        let len: usize = shape.iter().product();
                        let piece = g.slice(offset, &shape);
                        offset += len;
                        (p, piece)
                    })
                    .collect()
            }
            Op::Resample { a, plan, adjoint } => {
                vec![(*a, g.resample_with(Rc::clone(plan), !adjoint))]
            }
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.value().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Constant copy of this value, cut from the graph.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let value = self.value().map(f);
        self.graph.push(op, value)
    }

    fn binary(&self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64, what: &str) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, what);
        self.graph.push(op, a.zip_map(&b, f))
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_const(&self, c: f64) -> Var<'g> {
        self.unary(Op::AddConst(self.id), |x| x + c)
    }

    /// Multiply every element by a scalar node (shape `[1]`).
    pub fn mul_scalar(&self, s: Var<'g>) -> Var<'g> {
        let k = s.value().item();
        self.unary(Op::MulScalar(self.id, s.id), |x| k * x)
    }

    /// Add a scalar node (shape `[1]`) to every element.
    pub fn add_scalar(&self, s: Var<'g>) -> Var<'g> {
        let k = s.value().item();
        self.unary(Op::AddScalar(self.id, s.id), |x| x + k)
    }

    pub fn matmul(&self, other: Var<'g>) -> Var<'g> {
        self.matmul_t(other, false, false)
    }

    pub fn matmul_t(&self, other: Var<'g>, ta: bool, tb: bool) -> Var<'g> {
        let value = Tensor::matmul_t(&self.value(), &other.value(), ta, tb);
        self.graph.push(
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            value,
        )
    }

    pub fn t(&self) -> Var<'g> {
        let value = self.value().transpose();
        self.graph.push(Op::Transpose(self.id), value)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let value = (*self.value()).clone().reshape(shape);
        self.graph.push(Op::Reshape(self.id), value)
    }

    pub fn flatten(&self) -> Var<'g> {
        let n = self.len();
        self.reshape(&[n])
    }

    pub fn sum(&self) -> Var<'g> {
        let value = Tensor::scalar(self.value().sum());
        self.graph.push(Op::Sum(self.id), value)
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum of a matrix along `axis`, keeping the reduced axis with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Var<'g> {
        let x = self.value();
        let (r, c) = x.dims2();
        let d = x.data();
        let value = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for row in d.chunks_exact(c) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::new(&[1, c], out)
            }
            1 => Tensor::new(&[r, 1], d.chunks_exact(c).map(|row| row.iter().sum()).collect()),
            _ => panic!("sum_axis: axis {axis} out of range for a matrix"),
        };
        self.graph.push(Op::SumAxis(self.id), value)
    }

    /// Broadcast a `[1]`, `[m]`, `[1, m]` or `[n, 1]` value to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        if x.shape() == shape {
            return *self;
        }
        let n: usize = shape.iter().product();
        let value = if x.len() == 1 {
            Tensor::full(shape, x.item())
        } else {
            assert_eq!(shape.len(), 2, "broadcast_to {shape:?} from {:?}", x.shape());
            let (r, c) = (shape[0], shape[1]);
            let mut out = Vec::with_capacity(n);
            match x.shape() {
                [m] | [1, m] if *m == c => {
                    for _ in 0..r {
                        out.extend_from_slice(x.data());
                    }
                }
                [m, 1] if *m == r => {
                    for &v in x.data() {
                        out.extend(std::iter::repeat_n(v, c));
                    }
                }
                other => panic!("cannot broadcast {other:?} to {shape:?}"),
            }
            Tensor::new(shape, out)
        };
        self.graph.push(Op::Broadcast(self.id), value)
    }

    /// Sum a broadcast value back to `shape` (the adjoint of `broadcast_to`).
    fn reduce_to(&self, shape: &[usize]) -> Var<'g> {
        let own = self.shape();
        if own == shape {
            return *self;
        }
        let n: usize = shape.iter().product();
        if n == 1 {
            return self.sum().reshape(shape);
        }
        match (own.as_slice(), shape) {
            ([_, c], [m]) | ([_, c], [1, m]) if c == m => self.sum_axis(0).reshape(shape),
            ([r, _], [m, 1]) if r == m => self.sum_axis(1),
            _ => panic!("cannot reduce {own:?} to {shape:?}"),
        }
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    /// Square root whose derivative at zero is taken as zero.
    pub fn sqrt(&self) -> Var<'g> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    /// `1/x`, with `0` mapped to `0`.
    pub fn recip_guarded(&self) -> Var<'g> {
        self.unary(Op::RecipGuarded(self.id), |x| if x == 0.0 { 0.0 } else { 1.0 / x })
    }

    pub fn powf(&self, p: f64) -> Var<'g> {
        self.unary(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn square(&self) -> Var<'g> {
        *self * *self
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// ELU with α = 1.
    pub fn elu(&self) -> Var<'g> {
        self.unary(Op::Elu(self.id), elu)
    }

    pub fn softshrink(&self, lambda: f64) -> Var<'g> {
        assert!(lambda >= 0.0, "softshrink threshold must be non-negative");
        self.unary(Op::Softshrink(self.id, lambda), move |x| softshrink(x, lambda))
    }

    /// Clamp into `[lo, hi]`; slope 1 on `(lo, hi]`, 0 elsewhere.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Op::Clamp(self.id, lo, hi), move |x| x.clamp(lo, hi))
    }

    /// `out[i] = self.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let d = x.data();
        let value = Tensor::new(shape, index.iter().map(|&i| d[i]).collect());
        self.graph.push(Op::Gather { a: self.id, index }, value)
    }

    /// `out.flat[index[i]] += self.flat[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, index: Rc<[usize]>, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        assert_eq!(index.len(), x.len(), "scatter_add index length");
        let mut out = Tensor::zeros(shape);
        let o = out.data_mut();
        for (&i, &v) in index.iter().zip(x.data()) {
            o[i] += v;
        }
        self.graph.push(Op::ScatterAdd { a: self.id, index }, out)
    }

    /// Contiguous flat range starting at `start`, reshaped to `shape`.
    pub fn slice(&self, start: usize, shape: &[usize]) -> Var<'g> {
        let len: usize = shape.iter().product();
        let x = self.value();
        let value = Tensor::new(shape, x.data()[start..start + len].to_vec());
        self.graph.push(Op::Slice { a: self.id, start }, value)
    }

    /// Embed this value at flat offset `start` in a zero tensor of `shape`.
    pub fn pad(&self, start: usize, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let mut out = Tensor::zeros(shape);
        out.data_mut()[start..start + x.len()].copy_from_slice(x.data());
        self.graph.push(Op::Pad { a: self.id, start }, out)
    }

    /// Rows `start..start + count` of a matrix.
    pub fn rows(&self, start: usize, count: usize) -> Var<'g> {
        let (_, c) = self.value().dims2();
        self.slice(start * c, &[count, c])
    }

    /// Piecewise-linear resampling of the flattened value to `len` samples.
    pub fn resample(&self, len: usize) -> Var<'g> {
        let n = self.len();
        if n == len {
            return self.flatten();
        }
        self.resample_with(Rc::new(ResamplePlan::new(n, len)), false)
    }

    fn resample_with(&self, plan: Rc<ResamplePlan>, adjoint: bool) -> Var<'g> {
        let x = self.value();
        let value = if adjoint {
            plan.apply_adjoint(x.data())
        } else {
            plan.apply(x.data())
        };
        self.graph.push(
            Op::Resample {
                a: self.id,
                plan,
                adjoint,
            },
            Tensor::from_vec(value),
        )
    }

    /// Softmax along `axis` of a matrix.
    pub fn softmax(&self, axis: usize) -> Var<'g> {
        let shape = self.shape();
        let shift = self.graph.constant(axis_max(&self.value(), axis).broadcast(&shape));
        let e = (*self - shift).exp();
        e / e.sum_axis(axis).broadcast_to(&shape)
    }

    /// Log-softmax along `axis` of a matrix, stabilised by the axis maximum.
    pub fn log_softmax(&self, axis: usize) -> Var<'g> {
        let shape = self.shape();
        let shift = self.graph.constant(axis_max(&self.value(), axis).broadcast(&shape));
        let shifted = *self - shift;
        shifted - shifted.exp().sum_axis(axis).ln().broadcast_to(&shape)
    }
}

struct AxisMax {
    values: Vec<f64>,
    axis: usize,
}

impl AxisMax {
    fn broadcast(&self, shape: &[usize]) -> Tensor {
        let (r, c) = (shape[0], shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(if self.axis == 0 { self.values[j] } else { self.values[i] });
            }
        }
        Tensor::new(shape, out)
    }
}

fn axis_max(x: &Tensor, axis: usize) -> AxisMax {
    let (r, c) = x.dims2();
    let values = match axis {
        0 => (0..c)
            .map(|j| (0..r).map(|i| x.at(i, j)).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        1 => (0..r)
            .map(|i| (0..c).map(|j| x.at(i, j)).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        _ => panic!("axis {axis} out of range for a matrix"),
    };
    AxisMax { values, axis }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn softshrink(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'g> std::ops::$trait for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                self.binary(rhs, Op::$variant(self.id, rhs.id), $f, stringify!($method))
            }
        }
    };
}

binary_op!(Add, add, Add, |a, b| a + b);
binary_op!(Sub, sub, Sub, |a, b| a - b);
binary_op!(Mul, mul, Mul, |a, b| a * b);
binary_op!(Div, div, Div, |a, b| a / b);

impl<'g> std::ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.unary(Op::Neg(self.id), |x| -x)
    }
}

impl<'g> std::ops::Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Var<'g> {
        self.scale(rhs)
    }
}
