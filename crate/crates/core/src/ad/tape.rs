use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{NodeRef, Tensor};
use super::AdError;
use crate::numeric;

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnKind {
    Softplus,
    Exp,
    Log,
    Square,
    Negate,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    SqNorm,
}

/// A captured operand: the value at forward time plus, when the operand was
/// tracked, the index of its tape node.
struct Input {
    node: Option<usize>,
    shape: Vec<usize>,
    data: Vec<f64>,
}

enum Op {
    Leaf,
    Bin { kind: BinKind, a: Input, b: Input },
    Un { kind: UnKind, x: Input },
    Matmul { a: Input, b: Input },
    ScaleRows { v: Input, m: Input },
    Concat { a: Input, b: Input },
    Row { x: Input, row: usize },
    Element { x: Input, index: usize },
    Reshape { x: Input },
    Reduce { kind: ReduceKind, x: Input },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Define-by-run computation tape.
///
/// Operations record a node only when at least one operand is tracked, so the
/// same code path serves plain evaluation (nothing recorded) and training.
/// Recording order equals forward evaluation order; [`Tape::backward`] walks
/// the nodes once in reverse.
///
/// A tape is single-threaded. Tensors are values and may cross threads; the
/// tape itself must not.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf whose gradient should be accumulated during backward.
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        let index = self.nodes.len();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
            op: Op::Leaf,
        });
        Tensor::raw(
            t.shape().to_vec(),
            t.data().to_vec(),
            Some(NodeRef {
                tape: self.id,
                index,
            }),
        )
    }

    fn capture(&self, t: &Tensor) -> Result<Input, AdError> {
        let node = match t.node() {
            Some(n) if n.tape != self.id => return Err(AdError::TapeMismatch),
            Some(n) => Some(n.index),
            None => None,
        };
        Ok(Input {
            node,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
    }

    fn finish(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        make: impl FnOnce(Vec<Input>) -> Op,
    ) -> Result<Tensor, AdError> {
        if inputs.iter().all(|t| t.node().is_none()) {
            return Ok(Tensor::raw(shape, data, None));
        }
        let captured = inputs
            .iter()
            .map(|t| self.capture(t))
            .collect::<Result<Vec<_>, _>>()?;
        let index = self.nodes.len();
        self.nodes.push(Node {
            shape: shape.clone(),
            data: data.clone(),
            op: make(captured),
        });
        Ok(Tensor::raw(
            shape,
            data,
            Some(NodeRef {
                tape: self.id,
                index,
            }),
        ))
    }

    // ---- elementwise binary ----------------------------------------------

    fn binary(&mut self, kind: BinKind, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let (shape, data) = if a.shape() == b.shape() {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (a.shape().to_vec(), data)
        } else if b.numel() == 1 {
            let y = b.data()[0];
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
        } else if a.numel() == 1 {
            let x = a.data()[0];
            (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(AdError::ShapeMismatch {
                op: binop_name(kind),
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        self.finish(shape, data, &[a, b], |mut ins| {
            let b = ins.pop().expect("two inputs");
            let a = ins.pop().expect("two inputs");
            Op::Bin { kind, a, b }
        })
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinKind::Mul, a, b)
    }

    // ---- elementwise unary -----------------------------------------------

    fn unary(&mut self, kind: UnKind, x: &Tensor) -> Result<Tensor, AdError> {
        let f = |v: f64| match kind {
            UnKind::Softplus => numeric::softplus(v),
            UnKind::Exp => v.exp(),
            UnKind::Log => v.ln(),
            UnKind::Square => v * v,
            UnKind::Negate => -v,
            UnKind::Tanh => v.tanh(),
            UnKind::Sigmoid => numeric::sigmoid(v),
        };
        let data = x.data().iter().map(|&v| f(v)).collect();
        self.finish(x.shape().to_vec(), data, &[x], |mut ins| Op::Un {
            kind,
            x: ins.pop().expect("one input"),
        })
    }

    pub fn softplus(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Softplus, x)
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Exp, x)
    }

    pub fn log(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Log, x)
    }

    pub fn square(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Square, x)
    }

    pub fn negate(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Negate, x)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnKind::Sigmoid, x)
    }

    // ---- matrix ops --------------------------------------------------------

    /// `[m,k]·[k,n] -> [m,n]` or `[m,k]·[k] -> [m]`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        let mismatch = || AdError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (m, k) = match a.shape() {
            [m, k] => (*m, *k),
            _ => return Err(mismatch()),
        };
        let (shape, data) = match b.shape() {
            [k2, n] if *k2 == k => {
                let n = *n;
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for t in 0..k {
                        let av = a.data()[i * k + t];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &b.data()[t * n..(t + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
                (vec![m, n], out)
            }
            [k2] if *k2 == k => {
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let arow = &a.data()[i * k..(i + 1) * k];
                    out[i] = arow.iter().zip(b.data()).map(|(&x, &y)| x * y).sum();
                }
                (vec![m], out)
            }
            _ => return Err(mismatch()),
        };
        self.finish(shape, data, &[a, b], |mut ins| {
            let b = ins.pop().expect("two inputs");
            let a = ins.pop().expect("two inputs");
            Op::Matmul { a, b }
        })
    }

    /// Scale row `i` of `[m,n]` matrix `mat` by `v[i]`.
    pub fn scale_rows(&mut self, v: &Tensor, mat: &Tensor) -> Result<Tensor, AdError> {
        let mismatch = || AdError::ShapeMismatch {
            op: "scale_rows",
            lhs: v.shape().to_vec(),
            rhs: mat.shape().to_vec(),
        };
        let (m, n) = match mat.shape() {
            [m, n] => (*m, *n),
            _ => return Err(mismatch()),
        };
        if v.shape() != [m] {
            return Err(mismatch());
        }
        let mut data = mat.data().to_vec();
        for i in 0..m {
            let s = v.data()[i];
            for x in &mut data[i * n..(i + 1) * n] {
                *x *= s;
            }
        }
        self.finish(vec![m, n], data, &[v, mat], |mut ins| {
            let m = ins.pop().expect("two inputs");
            let v = ins.pop().expect("two inputs");
            Op::ScaleRows { v, m }
        })
    }

    /// Concatenate two 1-D tensors.
    pub fn concat(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        if a.shape().len() != 1 || b.shape().len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "concat",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let n = data.len();
        self.finish(vec![n], data, &[a, b], |mut ins| {
            let b = ins.pop().expect("two inputs");
            let a = ins.pop().expect("two inputs");
            Op::Concat { a, b }
        })
    }

    /// Extract row `row` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, x: &Tensor, row: usize) -> Result<Tensor, AdError> {
        let (r, c) = match x.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(AdError::ShapeMismatch {
                    op: "row",
                    lhs: x.shape().to_vec(),
                    rhs: vec![row],
                })
            }
        };
        if row >= r {
            return Err(AdError::IndexOutOfRange {
                op: "row",
                index: row,
                extent: r,
            });
        }
        let data = x.data()[row * c..(row + 1) * c].to_vec();
        self.finish(vec![c], data, &[x], |mut ins| Op::Row {
            x: ins.pop().expect("one input"),
            row,
        })
    }

    /// Extract element `index` of a 1-D tensor as a scalar.
    pub fn element(&mut self, x: &Tensor, index: usize) -> Result<Tensor, AdError> {
        let n = match x.shape() {
            [n] => *n,
            _ => {
                return Err(AdError::ShapeMismatch {
                    op: "element",
                    lhs: x.shape().to_vec(),
                    rhs: vec![index],
                })
            }
        };
        if index >= n {
            return Err(AdError::IndexOutOfRange {
                op: "element",
                index,
                extent: n,
            });
        }
        let data = vec![x.data()[index]];
        self.finish(vec![], data, &[x], |mut ins| Op::Element {
            x: ins.pop().expect("one input"),
            index,
        })
    }

    /// View the same row-major data under a new shape.
    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, AdError> {
        if shape.iter().product::<usize>() != x.numel() {
            return Err(AdError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape,
            });
        }
        self.finish(shape, x.data().to_vec(), &[x], |mut ins| Op::Reshape {
            x: ins.pop().expect("one input"),
        })
    }

    // ---- reductions --------------------------------------------------------

    fn reduce(&mut self, kind: ReduceKind, x: &Tensor) -> Result<Tensor, AdError> {
        let value = match kind {
            ReduceKind::Sum => x.data().iter().sum(),
            ReduceKind::Mean => {
                if x.numel() == 0 {
                    return Err(AdError::EmptyReduce { op: "mean" });
                }
                x.data().iter().sum::<f64>() / x.numel() as f64
            }
            ReduceKind::SqNorm => x.data().iter().map(|v| v * v).sum(),
        };
        self.finish(vec![], vec![value], &[x], |mut ins| Op::Reduce {
            kind,
            x: ins.pop().expect("one input"),
        })
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.reduce(ReduceKind::Sum, x)
    }

    /// Mean of all elements; errors on an empty tensor.
    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.reduce(ReduceKind::Mean, x)
    }

    /// Squared Euclidean norm of all elements.
    pub fn sq_norm(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.reduce(ReduceKind::SqNorm, x)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar loss. Visits each recorded node exactly
    /// once; the tape is not consumed, so repeated passes yield identical
    /// gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, AdError> {
        let node = loss.node().ok_or(AdError::UntrackedLoss)?;
        if node.tape != self.id {
            return Err(AdError::TapeMismatch);
        }
        if loss.numel() != 1 {
            return Err(AdError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[node.index] = Some(vec![1.0]);
        for i in (0..=node.index).rev() {
            let g = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(&self.nodes[i], &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
            grads,
        })
    }

    fn accumulate(&self, node: &Node, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        match &node.op {
            Op::Leaf => {}
            Op::Bin { kind, a, b } => {
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    BinKind::Add => (
                        reduce_to(g, a.data.len()),
                        reduce_to(g, b.data.len()),
                    ),
                    BinKind::Sub => (
                        reduce_to(g, a.data.len()),
                        reduce_to(&g.iter().map(|v| -v).collect::<Vec<_>>(), b.data.len()),
                    ),
                    BinKind::Mul => {
                        let prod_b: Vec<f64> = mul_broadcast(g, &b.data);
                        let prod_a: Vec<f64> = mul_broadcast(g, &a.data);
                        (
                            reduce_to(&prod_b, a.data.len()),
                            reduce_to(&prod_a, b.data.len()),
                        )
                    }
                };
                acc(grads, a.node, &ga);
                acc(grads, b.node, &gb);
            }
            Op::Un { kind, x } => {
                let gx: Vec<f64> = match kind {
                    UnKind::Softplus => x
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&v, &gi)| numeric::sigmoid(v) * gi)
                        .collect(),
                    UnKind::Exp => node.data.iter().zip(g).map(|(&o, &gi)| o * gi).collect(),
                    UnKind::Log => x.data.iter().zip(g).map(|(&v, &gi)| gi / v).collect(),
                    UnKind::Square => x
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&v, &gi)| 2.0 * v * gi)
                        .collect(),
                    UnKind::Negate => g.iter().map(|&gi| -gi).collect(),
                    UnKind::Tanh => node
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&o, &gi)| (1.0 - o * o) * gi)
                        .collect(),
                    UnKind::Sigmoid => node
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&o, &gi)| o * (1.0 - o) * gi)
                        .collect(),
                };
                acc(grads, x.node, &gx);
            }
            Op::Matmul { a, b } => {
                let (m, k) = (a.shape[0], a.shape[1]);
                if b.shape.len() == 2 {
                    let n = b.shape[1];
                    if a.node.is_some() {
                        // dA = G · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for j in 0..k {
                                let mut s = 0.0;
                                for t in 0..n {
                                    s += g[i * n + t] * b.data[j * n + t];
                                }
                                da[i * k + j] = s;
                            }
                        }
                        acc(grads, a.node, &da);
                    }
                    if b.node.is_some() {
                        // dB = Aᵀ · G
                        let mut db = vec![0.0; k * n];
                        for j in 0..k {
                            for t in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += a.data[i * k + j] * g[i * n + t];
                                }
                                db[j * n + t] = s;
                            }
                        }
                        acc(grads, b.node, &db);
                    }
                } else {
                    // matrix-vector: out[m], g[m]
                    if a.node.is_some() {
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for j in 0..k {
                                da[i * k + j] = g[i] * b.data[j];
                            }
                        }
                        acc(grads, a.node, &da);
                    }
                    if b.node.is_some() {
                        let mut db = vec![0.0; k];
                        for j in 0..k {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += a.data[i * k + j] * g[i];
                            }
                            db[j] = s;
                        }
                        acc(grads, b.node, &db);
                    }
                }
            }
            Op::ScaleRows { v, m: mat } => {
                let (m, n) = (mat.shape[0], mat.shape[1]);
                if v.node.is_some() {
                    let mut dv = vec![0.0; m];
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * mat.data[i * n + j];
                        }
                        dv[i] = s;
                    }
                    acc(grads, v.node, &dv);
                }
                if mat.node.is_some() {
                    let mut dm = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dm[i * n + j] = v.data[i] * g[i * n + j];
                        }
                    }
                    acc(grads, mat.node, &dm);
                }
            }
            Op::Concat { a, b } => {
                let p = a.data.len();
                acc(grads, a.node, &g[..p]);
                acc(grads, b.node, &g[p..]);
            }
            Op::Row { x, row } => {
                let c = node.data.len();
                let mut dx = vec![0.0; x.data.len()];
                dx[row * c..(row + 1) * c].copy_from_slice(g);
                acc(grads, x.node, &dx);
            }
            Op::Element { x, index } => {
                let mut dx = vec![0.0; x.data.len()];
                dx[*index] = g[0];
                acc(grads, x.node, &dx);
            }
            Op::Reshape { x } => {
                acc(grads, x.node, g);
            }
            Op::Reduce { kind, x } => {
                let g0 = g[0];
                let dx: Vec<f64> = match kind {
                    ReduceKind::Sum => vec![g0; x.data.len()],
                    ReduceKind::Mean => vec![g0 / x.data.len() as f64; x.data.len()],
                    ReduceKind::SqNorm => x.data.iter().map(|&v| 2.0 * v * g0).collect(),
                };
                acc(grads, x.node, &dx);
            }
        }
    }
}

/// Elementwise product allowing one side to be a single value.
fn mul_broadcast(g: &[f64], other: &[f64]) -> Vec<f64> {
    if other.len() == g.len() {
        g.iter().zip(other).map(|(&x, &y)| x * y).collect()
    } else if other.len() == 1 {
        g.iter().map(|&x| x * other[0]).collect()
    } else {
        // g comes from a broadcast output, so it is the long side
        debug_assert_eq!(g.len(), 1);
        other.iter().map(|&y| g[0] * y).collect()
    }
}

/// Sum a gradient down to the operand length when the operand was broadcast.
fn reduce_to(g: &[f64], len: usize) -> Vec<f64> {
    if g.len() == len {
        g.to_vec()
    } else {
        debug_assert_eq!(len, 1);
        vec![g.iter().sum()]
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], node: Option<usize>, contribution: &[f64]) {
    let Some(idx) = node else { return };
    match &mut grads[idx] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot => *slot = Some(contribution.to_vec()),
    }
}

fn binop_name(kind: BinKind) -> &'static str {
    match kind {
        BinKind::Add => "add",
        BinKind::Sub => "sub",
        BinKind::Mul => "mul",
    }
}

/// Result of a backward pass: a gradient for every tracked node reached from
/// the loss, and zeros for tracked nodes the loss does not depend on.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor, AdError> {
        let node = t.node().ok_or(AdError::NotTracked)?;
        if node.tape != self.tape {
            return Err(AdError::TapeMismatch);
        }
        let shape = self.shapes[node.index].clone();
        match &self.grads[node.index] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }
}
