//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every call to [`Graph::apply`]
//! evaluates the op eagerly and pushes the result; [`Graph::backward`] then
//! walks the nodes in reverse append order, which is a valid reverse
//! topological order because inputs always precede their consumers.
//!
//! The op vocabulary is deliberately small and has no broadcasting: binary
//! elementwise ops require identical shapes.

use crate::error::{Error, Result};

/// Norms below this are rejected by `l2_normalize`.
pub const MIN_NORM: f64 = 1e-12;

/// Dense row-major f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient-tracking leaf.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }
}

/// The fixed op vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    L2Normalize,
    SquaredEuclidean,
    Max0,
    Mean,
    /// Concatenates scalars into a vector.
    Stack,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::L2Normalize,
        OpKind::SquaredEuclidean,
        OpKind::Max0,
        OpKind::Mean,
        OpKind::Stack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise_mul",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::L2Normalize => "l2_normalize",
            OpKind::SquaredEuclidean => "squared_euclidean",
            OpKind::Max0 => "scalar_max0",
            OpKind::Mean => "mean",
            OpKind::Stack => "stack",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Evaluates the op without recording anything.
    pub fn forward(self, inputs: &[&Tensor]) -> Result<Tensor> {
        let mismatch = || Error::ShapeMismatch {
            op: self.name(),
            shapes: inputs.iter().map(|t| t.shape.clone()).collect(),
        };
        let unary = || -> Result<&Tensor> {
            match inputs {
                [x] => Ok(*x),
                _ => Err(mismatch()),
            }
        };
        let binary_same = || -> Result<(&Tensor, &Tensor)> {
            match inputs {
                [a, b] if a.shape == b.shape => Ok((*a, *b)),
                _ => Err(mismatch()),
            }
        };
        match self {
            OpKind::MatMul => {
                let [a, b] = inputs else {
                    return Err(mismatch());
                };
                match (a.shape.as_slice(), b.shape.as_slice()) {
                    (&[rows, inner], &[n]) if inner == n => Ok(Tensor::vector(matvec(&a.data, rows, inner, &b.data))),
                    (&[rows, inner], &[n, cols]) if inner == n => {
                        Tensor::matrix(rows, cols, matmat(&a.data, rows, inner, &b.data, cols))
                    }
                    _ => Err(mismatch()),
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = binary_same()?;
                let data = a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(&x, &y)| match self {
                        OpKind::Add => x + y,
                        OpKind::Sub => x - y,
                        _ => x * y,
                    })
                    .collect();
                Tensor::new(a.shape.clone(), data)
            }
            OpKind::Relu => {
                let x = unary()?;
                Tensor::new(
                    x.shape.clone(),
                    x.data.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
                )
            }
            OpKind::Tanh => {
                let x = unary()?;
                Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.tanh()).collect())
            }
            OpKind::L2Normalize => {
                let x = unary()?;
                if x.shape.len() != 1 {
                    return Err(mismatch());
                }
                Ok(Tensor::vector(l2_normalized(&x.data)?))
            }
            OpKind::SquaredEuclidean => {
                let (a, b) = binary_same()?;
                Ok(Tensor::scalar(squared_distance(&a.data, &b.data)))
            }
            OpKind::Max0 => {
                let x = unary()?;
                if x.data.len() != 1 {
                    return Err(mismatch());
                }
                Tensor::new(x.shape.clone(), vec![if x.data[0] < 0.0 { 0.0 } else { x.data[0] }])
            }
            OpKind::Mean => {
                let x = unary()?;
                if x.data.is_empty() {
                    return Err(mismatch());
                }
                Ok(Tensor::scalar(x.data.iter().sum::<f64>() / x.data.len() as f64))
            }
            OpKind::Stack => {
                if inputs.is_empty() || inputs.iter().any(|t| t.data.len() != 1) {
                    return Err(mismatch());
                }
                Ok(Tensor::vector(inputs.iter().map(|t| t.data[0]).collect()))
            }
        }
    }
}

/// `w` is `rows x cols` row-major. Summation runs over ascending column index.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn matmat(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[i * inner + k];
            let brow = &b[k * cols..(k + 1) * cols];
            for (o, &bkj) in out[i * cols..(i + 1) * cols].iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / ||v||`, rejecting near-zero vectors.
pub fn l2_normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= MIN_NORM) {
        return Err(Error::DegenerateNormalization { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    op: Option<OpKind>,
    inputs: Vec<Var>,
    value: Tensor,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Test hook: the backward rule for `op` is scaled by 1.5, which any
    /// gradient check must catch.
    #[doc(hidden)]
    pub fn with_corrupted_backward(op: OpKind) -> Self {
        Graph {
            nodes: Vec::new(),
            fault: Some(op),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: None,
            inputs: Vec::new(),
            value: t,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.requiring_grad())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let mut out = op.forward(&values)?;
        out.requires_grad = values.iter().any(|t| t.requires_grad);
        self.nodes.push(Node {
            op: Some(op),
            inputs: inputs.to_vec(),
            value: out,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::L2Normalize, &[a])
    }
    pub fn squared_euclidean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::SquaredEuclidean, &[a, b])
    }
    pub fn max0(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Max0, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        self.apply(OpKind::Stack, items)
    }

    /// Accumulates `d loss / d t` into every gradient-tracking tensor that
    /// `loss` depends on. Repeated calls add to existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if lt.data.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        if !lt.requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(op) = node.op {
                let mut contributions = self.local_backward(op, &node.inputs, &node.value, &g);
                if self.fault == Some(op) {
                    for c in contributions.iter_mut().flatten() {
                        c.iter_mut().for_each(|x| *x *= 1.5);
                    }
                }
                for (input, contrib) in node.inputs.iter().zip(contributions) {
                    let Some(contrib) = contrib else { continue };
                    match &mut pending[input.0] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            self.nodes[idx].value.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Vector-Jacobian products for each input; `None` for inputs that do not
    /// track gradients.
    fn local_backward(&self, op: OpKind, inputs: &[Var], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let wants = |i: usize| val(i).requires_grad;
        let mut res: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
        match op {
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (rows, inner) = (a.shape[0], a.shape[1]);
                let cols = if b.shape.len() == 1 { 1 } else { b.shape[1] };
                if wants(0) {
                    // dA = G B^T
                    let mut da = vec![0.0; rows * inner];
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        for k in 0..inner {
                            let brow = &b.data[k * cols..(k + 1) * cols];
                            da[i * inner + k] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    res[0] = Some(da);
                }
                if wants(1) {
                    // dB = A^T G
                    let mut db = vec![0.0; inner * cols];
                    for i in 0..rows {
                        let grow = &g[i * cols..(i + 1) * cols];
                        for k in 0..inner {
                            let aik = a.data[i * inner + k];
                            for (d, gv) in db[k * cols..(k + 1) * cols].iter_mut().zip(grow) {
                                *d += aik * gv;
                            }
                        }
                    }
                    res[1] = Some(db);
                }
            }
            OpKind::Add => {
                for (i, slot) in res.iter_mut().enumerate() {
                    if wants(i) {
                        *slot = Some(g.to_vec());
                    }
                }
            }
            OpKind::Sub => {
                if wants(0) {
                    res[0] = Some(g.to_vec());
                }
                if wants(1) {
                    res[1] = Some(g.iter().map(|x| -x).collect());
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                if wants(0) {
                    res[0] = Some(g.iter().zip(&b.data).map(|(x, y)| x * y).collect());
                }
                if wants(1) {
                    res[1] = Some(g.iter().zip(&a.data).map(|(x, y)| x * y).collect());
                }
            }
            OpKind::Relu | OpKind::Max0 => {
                if wants(0) {
                    res[0] = Some(
                        g.iter()
                            .zip(&val(0).data)
                            .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    );
                }
            }
            OpKind::Tanh => {
                if wants(0) {
                    res[0] = Some(g.iter().zip(&out.data).map(|(gv, y)| gv * (1.0 - y * y)).collect());
                }
            }
            OpKind::L2Normalize => {
                if wants(0) {
                    // (I - z z^T) g / ||v||
                    let n = norm(&val(0).data);
                    let z = &out.data;
                    let zg: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
                    res[0] = Some(g.iter().zip(z).map(|(gv, zv)| (gv - zv * zg) / n).collect());
                }
            }
            OpKind::SquaredEuclidean => {
                let (a, b) = (val(0), val(1));
                let s = g[0];
                if wants(0) {
                    res[0] = Some(a.data.iter().zip(&b.data).map(|(x, y)| 2.0 * (x - y) * s).collect());
                }
                if wants(1) {
                    res[1] = Some(a.data.iter().zip(&b.data).map(|(x, y)| -2.0 * (x - y) * s).collect());
                }
            }
            OpKind::Mean => {
                if wants(0) {
                    let n = val(0).data.len();
                    res[0] = Some(vec![g[0] / n as f64; n]);
                }
            }
            OpKind::Stack => {
                for (i, slot) in res.iter_mut().enumerate() {
                    if wants(i) {
                        *slot = Some(vec![g[i]]);
                    }
                }
            }
        }
        res
    }
}
