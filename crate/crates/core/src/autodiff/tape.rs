use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Position of a parameter block in the slice handed to [`Tape::forward`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    /// φ(x) = x; used by the closed-form scalar configurations.
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`; relu uses subgradient 0 at the kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Constant,
    Param,
    MatMul,
    Add,
    Sub,
    Scale,
    Activation,
    Readout,
    ReduceSum,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug)]
enum Factor {
    Const(f64),
    Node(NodeId),
}

#[derive(Clone, Debug)]
enum Op {
    Input {
        slot: usize,
    },
    Constant(Vector),
    Param {
        id: ParamId,
    },
    ParamEntry {
        id: ParamId,
        index: usize,
    },
    MatVec {
        matrix: ParamId,
        input: NodeId,
        transpose: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale {
        input: NodeId,
        factor: Factor,
    },
    Activation {
        kind: Activation,
        input: NodeId,
    },
    Readout {
        weight: ParamId,
        bias: ParamId,
        input: NodeId,
    },
    ReduceSum(NodeId),
    CrossEntropy {
        logits: NodeId,
        label: usize,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input { .. } => OpKind::Input,
            Op::Constant(_) => OpKind::Constant,
            Op::Param { .. } | Op::ParamEntry { .. } => OpKind::Param,
            Op::MatVec { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Scale { .. } => OpKind::Scale,
            Op::Activation { .. } => OpKind::Activation,
            Op::Readout { .. } => OpKind::Readout,
            Op::ReduceSum(_) => OpKind::ReduceSum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

/// Borrowed view of one parameter block (matrices row-major, vectors as n×1).
#[derive(Clone, Copy, Debug)]
pub struct ParamRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> From<&'a Matrix> for ParamRef<'a> {
    fn from(m: &'a Matrix) -> Self {
        ParamRef {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice(),
        }
    }
}

impl<'a> From<&'a Vector> for ParamRef<'a> {
    fn from(v: &'a Vector) -> Self {
        ParamRef {
            rows: v.dim(),
            cols: 1,
            data: v.as_slice(),
        }
    }
}

#[derive(Clone, Debug)]
struct OwnedParam {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Accumulated adjoints from one backward pass.
#[derive(Clone, Debug)]
pub struct GradientSet {
    params: Vec<Vec<f64>>,
    inputs: Vec<Vector>,
    adjoints: Vec<Vector>,
}

impl GradientSet {
    /// Gradient of a parameter block, flattened like the block itself.
    pub fn param(&self, id: ParamId) -> &[f64] {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Vec<f64>> {
        self.params
    }

    pub fn input(&self, slot: usize) -> &Vector {
        &self.inputs[slot]
    }

    /// Adjoint of any node: the derivative of the seeded output with respect
    /// to that node's value.
    pub fn node(&self, id: NodeId) -> &Vector {
        &self.adjoints[id.0]
    }
}

/// Append-only record of a computation graph. Parameters and inputs are
/// bound at [`Tape::forward`]; every node value is retained for backward.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    input_dims: Vec<usize>,
    states: BTreeMap<usize, NodeId>,
    values: Vec<Vector>,
    params: Vec<OwnedParam>,
    inputs: Vec<Vector>,
    evaluated: bool,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn is_evaluated(&self) -> bool {
        self.evaluated
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.evaluated = false;
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    fn check(&self, id: NodeId) {
        assert!(
            id.0 < self.ops.len(),
            "node {} does not exist on this tape",
            id.0
        );
    }

    /// Declares the next input slot.
    pub fn input(&mut self, dim: usize) -> NodeId {
        let slot = self.input_dims.len();
        self.input_dims.push(dim);
        self.push(Op::Input { slot })
    }

    pub fn constant(&mut self, value: Vector) -> NodeId {
        self.push(Op::Constant(value))
    }

    /// Whole parameter block as a flat vector value.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param { id })
    }

    /// A single entry of a parameter block, as a 1-vector.
    pub fn param_entry(&mut self, id: ParamId, index: usize) -> NodeId {
        self.push(Op::ParamEntry { id, index })
    }

    pub fn matvec(&mut self, matrix: ParamId, input: NodeId) -> NodeId {
        self.check(input);
        self.push(Op::MatVec {
            matrix,
            input,
            transpose: false,
        })
    }

    pub fn matvec_transposed(&mut self, matrix: ParamId, input: NodeId) -> NodeId {
        self.check(input);
        self.push(Op::MatVec {
            matrix,
            input,
            transpose: true,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check(a);
        self.check(b);
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check(a);
        self.check(b);
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        self.check(input);
        self.push(Op::Scale {
            input,
            factor: Factor::Const(factor),
        })
    }

    /// `input · s` where `s` is a 1-vector node.
    pub fn scale_by(&mut self, input: NodeId, scalar: NodeId) -> NodeId {
        self.check(input);
        self.check(scalar);
        self.push(Op::Scale {
            input,
            factor: Factor::Node(scalar),
        })
    }

    pub fn activation(&mut self, kind: Activation, input: NodeId) -> NodeId {
        self.check(input);
        self.push(Op::Activation { kind, input })
    }

    pub fn readout(&mut self, weight: ParamId, bias: ParamId, input: NodeId) -> NodeId {
        self.check(input);
        self.push(Op::Readout {
            weight,
            bias,
            input,
        })
    }

    pub fn reduce_sum(&mut self, input: NodeId) -> NodeId {
        self.check(input);
        self.push(Op::ReduceSum(input))
    }

    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        self.check(logits);
        self.push(Op::CrossEntropy { logits, label })
    }

    /// Registers `node` as the hidden state after time step `step`.
    pub fn mark_state(&mut self, step: usize, node: NodeId) {
        self.check(node);
        self.states.insert(step, node);
    }

    pub fn state(&self, step: usize) -> Option<NodeId> {
        self.states.get(&step).copied()
    }

    pub fn output(&self) -> Option<NodeId> {
        self.ops.len().checked_sub(1).map(NodeId)
    }

    /// Scales the backward contribution of every node of `kind` by 1.1.
    /// Negative-control fixture for the gradient checker.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn value(&self, id: NodeId) -> Result<&Vector> {
        if !self.evaluated {
            return Err(Error::State("tape has not been evaluated".into()));
        }
        self.values
            .get(id.0)
            .ok_or_else(|| Error::invalid(format!("unknown node {}", id.0)))
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    /// Evaluates every node in order and returns the value of the last one.
    pub fn forward(&mut self, params: &[ParamRef<'_>], inputs: &[Vector]) -> Result<&Vector> {
        if inputs.len() != self.input_dims.len() {
            return Err(Error::invalid(format!(
                "tape expects {} inputs, got {}",
                self.input_dims.len(),
                inputs.len()
            )));
        }
        for (slot, (x, &dim)) in inputs.iter().zip(&self.input_dims).enumerate() {
            if x.dim() != dim {
                return Err(Error::invalid(format!(
                    "input slot {slot} expects dimension {dim}, got {}",
                    x.dim()
                )));
            }
        }
        for (i, p) in params.iter().enumerate() {
            if p.data.len() != p.rows * p.cols {
                return Err(Error::invalid(format!(
                    "parameter {i} has {} entries for shape {}x{}",
                    p.data.len(),
                    p.rows,
                    p.cols
                )));
            }
        }
        self.evaluated = false;
        self.params.clear();
        self.params.extend(params.iter().map(|p| OwnedParam {
            rows: p.rows,
            cols: p.cols,
            data: p.data.to_vec(),
        }));
        self.inputs.clear();
        self.inputs.extend(inputs.iter().cloned());
        self.values.clear();
        self.values.reserve(self.ops.len());
        for i in 0..self.ops.len() {
            let v = self.eval_node(i)?;
            if !v.is_finite() {
                return Err(Error::overflow(format!(
                    "node {i} ({:?})",
                    self.ops[i].kind()
                )));
            }
            self.values.push(v);
        }
        self.evaluated = true;
        self.values
            .last()
            .ok_or_else(|| Error::invalid("empty tape"))
    }

    fn param_block(&self, id: ParamId) -> Result<&OwnedParam> {
        self.params
            .get(id.0)
            .ok_or_else(|| Error::invalid(format!("parameter {} not bound", id.0)))
    }

    fn eval_node(&self, i: usize) -> Result<Vector> {
        let val = |id: NodeId| &self.values[id.0];
        let out = match &self.ops[i] {
            Op::Input { slot } => self.inputs[*slot].clone(),
            Op::Constant(v) => v.clone(),
            Op::Param { id } => Vector::from_vec_unchecked(self.param_block(*id)?.data.clone()),
            Op::ParamEntry { id, index } => {
                let p = self.param_block(*id)?;
                let v = *p.data.get(*index).ok_or_else(|| {
                    Error::invalid(format!("entry {index} out of range for parameter {}", id.0))
                })?;
                Vector::from_vec_unchecked(vec![v])
            }
            Op::MatVec {
                matrix,
                input,
                transpose,
            } => {
                let m = self.param_block(*matrix)?;
                let x = val(*input).as_slice();
                if !transpose {
                    if x.len() != m.cols {
                        return Err(Error::invalid(format!(
                            "node {i}: {}x{} matrix times {}-vector",
                            m.rows,
                            m.cols,
                            x.len()
                        )));
                    }
                    Vector::from_vec_unchecked(
                        (0..m.rows)
                            .map(|r| dot(&m.data[r * m.cols..(r + 1) * m.cols], x))
                            .collect(),
                    )
                } else {
                    if x.len() != m.rows {
                        return Err(Error::invalid(format!(
                            "node {i}: ({}x{})ᵀ matrix times {}-vector",
                            m.rows,
                            m.cols,
                            x.len()
                        )));
                    }
                    let mut out = vec![0.0; m.cols];
                    for (r, &xr) in x.iter().enumerate() {
                        for (o, a) in out.iter_mut().zip(&m.data[r * m.cols..(r + 1) * m.cols]) {
                            *o += a * xr;
                        }
                    }
                    Vector::from_vec_unchecked(out)
                }
            }
            Op::Add(a, b) => val(*a)
                .add(val(*b))
                .map_err(|e| Error::invalid(format!("node {i}: {e}")))?,
            Op::Sub(a, b) => val(*a)
                .sub(val(*b))
                .map_err(|e| Error::invalid(format!("node {i}: {e}")))?,
            Op::Scale { input, factor } => {
                let s = match factor {
                    Factor::Const(c) => *c,
                    Factor::Node(n) => scalar_of(val(*n), i)?,
                };
                val(*input).scale(s)
            }
            Op::Activation { kind, input } => val(*input).map(|x| kind.apply(x)),
            Op::Readout {
                weight,
                bias,
                input,
            } => {
                let w = self.param_block(*weight)?;
                let b = self.param_block(*bias)?;
                let x = val(*input).as_slice();
                if x.len() != w.cols || b.data.len() != w.rows {
                    return Err(Error::invalid(format!(
                        "node {i}: readout {}x{} with bias {} on {}-vector",
                        w.rows,
                        w.cols,
                        b.data.len(),
                        x.len()
                    )));
                }
                Vector::from_vec_unchecked(
                    (0..w.rows)
                        .map(|r| dot(&w.data[r * w.cols..(r + 1) * w.cols], x) + b.data[r])
                        .collect(),
                )
            }
            Op::ReduceSum(x) => Vector::from_vec_unchecked(vec![val(*x).as_slice().iter().sum()]),
            Op::CrossEntropy { logits, label } => {
                let z = val(*logits).as_slice();
                if *label >= z.len() {
                    return Err(Error::invalid(format!(
                        "node {i}: label {label} out of range for {} classes",
                        z.len()
                    )));
                }
                Vector::from_vec_unchecked(vec![cross_entropy_value(z, *label)])
            }
        };
        Ok(out)
    }

    /// Reverse accumulation from the last node.
    pub fn backward(&self, seed: &Vector) -> Result<GradientSet> {
        let out = self.output().ok_or_else(|| Error::invalid("empty tape"))?;
        self.backward_from(out, seed)
    }

    /// Reverse accumulation seeded at `output`, in exact reverse topological order.
    pub fn backward_from(&self, output: NodeId, seed: &Vector) -> Result<GradientSet> {
        if !self.evaluated {
            return Err(Error::State("backward called before forward".into()));
        }
        if output.0 >= self.ops.len() {
            return Err(Error::invalid(format!("unknown node {}", output.0)));
        }
        if seed.dim() != self.values[output.0].dim() {
            return Err(Error::invalid(format!(
                "seed dimension {} does not match node dimension {}",
                seed.dim(),
                self.values[output.0].dim()
            )));
        }
        let mut adj: Vec<Vec<f64>> = self.values.iter().map(|v| vec![0.0; v.dim()]).collect();
        let mut touched = vec![false; self.ops.len()];
        let mut params: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        let mut inputs: Vec<Vec<f64>> = self.input_dims.iter().map(|&d| vec![0.0; d]).collect();
        adj[output.0].copy_from_slice(seed.as_slice());
        touched[output.0] = true;

        for i in (0..=output.0).rev() {
            if !touched[i] {
                continue;
            }
            let op = &self.ops[i];
            let (lower, upper) = adj.split_at_mut(i);
            let mut g: &[f64] = &upper[0];
            let faulty;
            if self.fault == Some(op.kind()) {
                faulty = g.iter().map(|v| v * 1.1).collect::<Vec<_>>();
                g = &faulty;
            }
            let mut touch = |n: NodeId| touched[n.0] = true;
            match op {
                Op::Input { slot } => axpy(&mut inputs[*slot], 1.0, g),
                Op::Constant(_) => {}
                Op::Param { id } => axpy(&mut params[id.0], 1.0, g),
                Op::ParamEntry { id, index } => params[id.0][*index] += g[0],
                Op::MatVec {
                    matrix,
                    input,
                    transpose,
                } => {
                    let m = &self.params[matrix.0];
                    let x = self.values[input.0].as_slice();
                    let gx = &mut lower[input.0];
                    let gm = &mut params[matrix.0];
                    if !transpose {
                        for r in 0..m.rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &m.data[r * m.cols..(r + 1) * m.cols];
                            axpy(gx, gr, row);
                            axpy(&mut gm[r * m.cols..(r + 1) * m.cols], gr, x);
                        }
                    } else {
                        for r in 0..m.rows {
                            let row = &m.data[r * m.cols..(r + 1) * m.cols];
                            gx[r] += dot(row, g);
                            axpy(&mut gm[r * m.cols..(r + 1) * m.cols], x[r], g);
                        }
                    }
                    touch(*input);
                }
                Op::Add(a, b) => {
                    axpy(&mut lower[a.0], 1.0, g);
                    axpy(&mut lower[b.0], 1.0, g);
                    touch(*a);
                    touch(*b);
                }
                Op::Sub(a, b) => {
                    axpy(&mut lower[a.0], 1.0, g);
                    axpy(&mut lower[b.0], -1.0, g);
                    touch(*a);
                    touch(*b);
                }
                Op::Scale { input, factor } => {
                    match factor {
                        Factor::Const(c) => axpy(&mut lower[input.0], *c, g),
                        Factor::Node(s) => {
                            let sv = self.values[s.0][0];
                            axpy(&mut lower[input.0], sv, g);
                            lower[s.0][0] += dot(g, self.values[input.0].as_slice());
                            touch(*s);
                        }
                    }
                    touch(*input);
                }
                Op::Activation { kind, input } => {
                    let x = self.values[input.0].as_slice();
                    for ((gx, &xv), &gv) in lower[input.0].iter_mut().zip(x).zip(g) {
                        *gx += gv * kind.derivative(xv);
                    }
                    touch(*input);
                }
                Op::Readout {
                    weight,
                    bias,
                    input,
                } => {
                    let w = &self.params[weight.0];
                    let x = self.values[input.0].as_slice();
                    for r in 0..w.rows {
                        let gr = g[r];
                        let row = &w.data[r * w.cols..(r + 1) * w.cols];
                        axpy(&mut lower[input.0], gr, row);
                        axpy(&mut params[weight.0][r * w.cols..(r + 1) * w.cols], gr, x);
                    }
                    axpy(&mut params[bias.0], 1.0, g);
                    touch(*input);
                }
                Op::ReduceSum(input) => {
                    for v in lower[input.0].iter_mut() {
                        *v += g[0];
                    }
                    touch(*input);
                }
                Op::CrossEntropy { logits, label } => {
                    let probs = softmax(self.values[logits.0].as_slice());
                    for (k, (gl, p)) in lower[logits.0].iter_mut().zip(probs).enumerate() {
                        let target = if k == *label { 1.0 } else { 0.0 };
                        *gl += g[0] * (p - target);
                    }
                    touch(*logits);
                }
            }
        }

        for (k, p) in params.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::overflow(format!("gradient of parameter {k}")));
            }
        }
        Ok(GradientSet {
            params,
            inputs: inputs.into_iter().map(Vector::from_vec_unchecked).collect(),
            adjoints: adj.into_iter().map(Vector::from_vec_unchecked).collect(),
        })
    }

    /// `∂h_to/∂h_from` between two marked states, one backward pass per row.
    pub fn state_jacobian(&self, from: usize, to: usize) -> Result<Matrix> {
        if to <= from {
            return Err(Error::invalid(format!(
                "state jacobian needs to > from, got from={from}, to={to}"
            )));
        }
        let src = self
            .state(from)
            .ok_or_else(|| Error::invalid(format!("no state marked for step {from}")))?;
        let dst = self
            .state(to)
            .ok_or_else(|| Error::invalid(format!("no state marked for step {to}")))?;
        let rows = self.value(dst)?.dim();
        let cols = self.value(src)?.dim();
        let mut jac = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let g = self.backward_from(dst, &Vector::basis(rows, i))?;
            for (j, v) in g.node(src).as_slice().iter().enumerate() {
                jac.set(i, j, *v);
            }
        }
        Ok(jac)
    }

    /// `∂h_to/∂h_n` for every marked step `n < to`, sharing the backward passes.
    pub fn state_jacobians_into(&self, to: usize) -> Result<Vec<(usize, Matrix)>> {
        let dst = self
            .state(to)
            .ok_or_else(|| Error::invalid(format!("no state marked for step {to}")))?;
        let rows = self.value(dst)?.dim();
        let sources: Vec<(usize, NodeId)> =
            self.states.range(..to).map(|(&s, &n)| (s, n)).collect();
        let mut jacs: Vec<(usize, Matrix)> = sources
            .iter()
            .map(|&(s, n)| Ok((s, Matrix::zeros(rows, self.value(n)?.dim()))))
            .collect::<Result<_>>()?;
        for i in 0..rows {
            let g = self.backward_from(dst, &Vector::basis(rows, i))?;
            for ((_, node), (_, jac)) in sources.iter().zip(jacs.iter_mut()) {
                for (j, v) in g.node(*node).as_slice().iter().enumerate() {
                    jac.set(i, j, *v);
                }
            }
        }
        Ok(jacs)
    }

    /// Activity of every relu entry (`input > 0`), in node order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        if !self.evaluated {
            return Vec::new();
        }
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Activation {
                    kind: Activation::Relu,
                    input,
                } => Some(self.values[input.0].as_slice().iter().map(|&x| x > 0.0)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Number of relu entries whose pre-activation is exactly zero.
    pub fn relu_kinks(&self) -> usize {
        if !self.evaluated {
            return 0;
        }
        self.ops
            .iter()
            .map(|op| match op {
                Op::Activation {
                    kind: Activation::Relu,
                    input,
                } => self.values[input.0]
                    .as_slice()
                    .iter()
                    .filter(|&&x| x == 0.0)
                    .count(),
                _ => 0,
            })
            .sum()
    }
}

fn scalar_of(v: &Vector, node: usize) -> Result<f64> {
    if v.dim() != 1 {
        return Err(Error::invalid(format!(
            "node {node}: scale factor must be a 1-vector, got dimension {}",
            v.dim()
        )));
    }
    Ok(v[0])
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(z)[label]` with max subtraction.
pub(crate) fn cross_entropy_value(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}
