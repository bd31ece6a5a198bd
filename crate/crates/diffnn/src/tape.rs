//! Reverse-mode gradient tape over 2-D `f64` arrays.
//!
//! Every value is a matrix; a row is one batch element. Ops append a node and
//! return a [`Var`] handle. Constants (including detached copies) never
//! receive gradients, and nodes whose inputs are all constant are skipped
//! during the backward pass.

use ndarray::{s, Array2, Axis, Zip};

use crate::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    MaxConst(Var, f64),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    NormalizeRows(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Min(..) => "min",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Silu(..) => "silu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::MaxConst(..) => "max_const",
            Op::Clamp(..) => "clamp",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::SumCols(..) => "sum_cols",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::NormalizeRows(..) => "normalize_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    nonfinite: Option<(usize, &'static str)>,
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        if self.nonfinite.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.nonfinite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Array2<f64>, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Array2<f64>, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Stop-gradient: a constant copy of `a`.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.clone();
        self.constant(v)
    }

    /// First op whose output contained a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), DiffError> {
        match self.nonfinite {
            Some((node, op)) => Err(DiffError::NonFiniteValue { op, node }),
            None => Ok(()),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    /// `a + b` with the single-row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(b).0, 1, "add_row: bias must have one row");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "min");
        let mut v = self.value(a).clone();
        Zip::from(&mut v)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        self.binary(a, b, v, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.unary(a, v, Op::Silu(a))
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.unary(a, v, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    /// `max(a, c)` elementwise; gradient passes only where `a > c`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(c));
        self.unary(a, v, Op::MaxConst(a, c))
    }

    /// Hard clamp; gradient passes only strictly inside `(lo, hi)`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.unary(a, v, Op::Clamp(a, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.unary(a, v, Op::SliceCols(a, start, end))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(a, v, Op::SumCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.unary(a, v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.unary(a, v, Op::MeanAll(a))
    }

    /// Each row divided by `sqrt(|row|^2 + eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = (row.dot(&row) + eps).sqrt();
            row /= n;
        }
        self.unary(a, v, Op::NormalizeRows(a, eps))
    }

    /// Reverse pass from a `1 x 1` loss. Fails on a non-finite forward value
    /// or on the first non-finite gradient, naming the op responsible.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        self.check_finite()?;
        if self.shape(loss) != (1, 1) {
            return Err(DiffError::NotScalar {
                shape: self.shape(loss),
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let name = node.op.name();
            let mut contribs: Vec<(Var, Array2<f64>)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs_grad(*a) {
                        contribs.push((*a, g.dot(&self.value(*b).t())));
                    }
                    if self.needs_grad(*b) {
                        contribs.push((*b, self.value(*a).t().dot(&g)));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.needs_grad(*b) {
                        contribs.push((*b, g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                    }
                    if self.needs_grad(*a) {
                        contribs.push((*a, g.clone()));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs_grad(*b) {
                        contribs.push((*b, g.clone()));
                    }
                    if self.needs_grad(*a) {
                        contribs.push((*a, g.clone()));
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs_grad(*b) {
                        contribs.push((*b, -&g));
                    }
                    if self.needs_grad(*a) {
                        contribs.push((*a, g.clone()));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs_grad(*a) {
                        contribs.push((*a, &g * self.value(*b)));
                    }
                    if self.needs_grad(*b) {
                        contribs.push((*b, &g * self.value(*a)));
                    }
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs_grad(*a) {
                        let mut ga = g.clone();
                        Zip::from(&mut ga).and(va).and(vb).for_each(|x, &p, &q| {
                            if p > q {
                                *x = 0.0
                            }
                        });
                        contribs.push((*a, ga));
                    }
                    if self.needs_grad(*b) {
                        let mut gb = g.clone();
                        Zip::from(&mut gb).and(va).and(vb).for_each(|x, &p, &q| {
                            if p <= q {
                                *x = 0.0
                            }
                        });
                        contribs.push((*b, gb));
                    }
                }
                Op::Scale(a, c) => contribs.push((*a, &g * *c)),
                Op::AddScalar(a) => contribs.push((*a, g)),
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|x, &y| *x *= y * (1.0 - y));
                    contribs.push((*a, ga));
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|x, &y| *x *= 1.0 - y * y);
                    contribs.push((*a, ga));
                }
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|x, &v| {
                        let s = sigmoid(v);
                        *x *= s * (1.0 + v * (1.0 - s));
                    });
                    contribs.push((*a, ga));
                }
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|x, &v| *x *= sigmoid(v));
                    contribs.push((*a, ga));
                }
                Op::Exp(a) => contribs.push((*a, g * &node.value)),
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|x, &v| *x *= 2.0 * v);
                    contribs.push((*a, ga));
                }
                Op::MaxConst(a, c) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|x, &v| {
                        if v <= *c {
                            *x = 0.0
                        }
                    });
                    contribs.push((*a, ga));
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|x, &v| {
                        if v <= *lo || v >= *hi {
                            *x = 0.0
                        }
                    });
                    contribs.push((*a, ga));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.needs_grad(*p) {
                            contribs.push((*p, g.slice(s![.., start..start + w]).to_owned()));
                        }
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    contribs.push((*a, ga));
                }
                Op::SumCols(a) => {
                    let shape = self.shape(*a);
                    let ga = g
                        .broadcast(shape)
                        .expect("sum_cols: broadcast")
                        .to_owned();
                    contribs.push((*a, ga));
                }
                Op::SumAll(a) => contribs.push((*a, Array2::from_elem(self.shape(*a), g[[0, 0]]))),
                Op::MeanAll(a) => {
                    let shape = self.shape(*a);
                    let n = (shape.0 * shape.1) as f64;
                    contribs.push((*a, Array2::from_elem(shape, g[[0, 0]] / n)));
                }
                Op::NormalizeRows(a, eps) => {
                    // d(x/n) = g/n - x (x.g) / n^3
                    let x = self.value(*a);
                    let mut ga = g;
                    for (mut gr, xr) in ga.rows_mut().into_iter().zip(x.rows()) {
                        let n = (xr.dot(&xr) + eps).sqrt();
                        let xg = xr.dot(&gr);
                        gr.zip_mut_with(&xr, |gi, &xi| *gi = *gi / n - xi * xg / (n * n * n));
                    }
                    contribs.push((*a, ga));
                }
            }
            for (v, c) in contribs {
                if !c.iter().all(|x| x.is_finite()) {
                    return Err(DiffError::NonFiniteGradient { op: name, node: i });
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &c,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }
}
