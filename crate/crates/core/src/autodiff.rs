//! Reverse-mode differentiation over dense `batch × dim` matrices.
//!
//! A [`Tape`] records nodes in creation order, so parents always precede
//! children and the reverse pass is a single sweep from the seed down to the
//! leaves. The op set is the one needed by multilayer perceptrons and the
//! Stein losses; there is no general broadcasting.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementary operations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// Leaf holding a value. Variables receive gradients, constants do not.
    Input { constant: bool },
    /// `x Wᵀ (+ b)` with `x: n×in`, `W: out×in`, `b: 1×out` broadcast over rows.
    Affine,
    Tanh,
    Relu,
    Square,
    /// Elementwise (Hadamard) product.
    Mul,
    /// Sum of all entries, producing a `1×1` node.
    Sum,
    Scale(f64),
    Add,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Affine => "affine",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Square => "square",
            Op::Mul => "mul",
            Op::Sum => "sum",
            Op::Scale(_) => "scale",
            Op::Add => "add",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Array2<f64>,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of a reverse pass: `∂seed/∂node` for every ancestor that carries a gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when the node is not an ancestor.
    pub fn get_or_zeros(&self, id: NodeId, like: &Array2<f64>) -> Array2<f64> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(like.raw_dim()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn shape_str(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
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

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn variable(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Input { constant: false }, Vec::new(), value, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Input { constant: true }, Vec::new(), value, false)
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Array2<f64>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            op,
            parents,
            value,
            needs_grad,
        });
        id
    }

    /// Evaluates `op` on `parents` and appends the result.
    pub fn apply(&mut self, op: Op, parents: &[NodeId]) -> Result<NodeId> {
        for p in parents {
            if p.0 >= self.nodes.len() {
                return Err(Error::shape(op.name(), format!("unknown parent node {}", p.0)));
            }
        }
        let arity_ok = match op {
            Op::Input { .. } => false,
            Op::Affine => parents.len() == 2 || parents.len() == 3,
            Op::Mul | Op::Add => parents.len() == 2,
            _ => parents.len() == 1,
        };
        if !arity_ok {
            return Err(Error::shape(
                op.name(),
                format!("wrong number of parents: {}", parents.len()),
            ));
        }
        let v = |i: usize| &self.nodes[parents[i].0].value;
        let value = match op {
            Op::Input { .. } => unreachable!(),
            Op::Affine => {
                let (x, w) = (v(0), v(1));
                if x.ncols() != w.ncols() {
                    return Err(Error::shape(
                        "affine",
                        format!("input {} incompatible with weight {}", shape_str(x), shape_str(w)),
                    ));
                }
                let mut out = x.dot(&w.t());
                if parents.len() == 3 {
                    let b = v(2);
                    if b.nrows() != 1 || b.ncols() != w.nrows() {
                        return Err(Error::shape(
                            "affine",
                            format!("bias {} incompatible with weight {}", shape_str(b), shape_str(w)),
                        ));
                    }
                    out += b;
                }
                out
            }
            Op::Tanh => v(0).mapv(f64::tanh),
            Op::Relu => v(0).mapv(|a| a.max(0.0)),
            Op::Square => v(0).mapv(|a| a * a),
            Op::Mul | Op::Add => {
                let (a, b) = (v(0), v(1));
                if a.dim() != b.dim() {
                    return Err(Error::shape(
                        op.name(),
                        format!("operands {} and {}", shape_str(a), shape_str(b)),
                    ));
                }
                if op == Op::Mul {
                    a * b
                } else {
                    a + b
                }
            }
            Op::Sum => Array2::from_elem((1, 1), v(0).sum()),
            Op::Scale(c) => v(0).mapv(|a| c * a),
        };
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push(op, parents.to_vec(), value, needs_grad))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        match b {
            Some(b) => self.apply(Op::Affine, &[x, w, b]),
            None => self.apply(Op::Affine, &[x, w]),
        }
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[x])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[x])
    }

    /// Reverse sweep from `seed` with upstream gradient `seed_value`.
    pub fn backward(&self, seed: NodeId, seed_value: &Array2<f64>) -> Result<Gradients> {
        let seed_node = self
            .nodes
            .get(seed.0)
            .ok_or_else(|| Error::shape("backward", format!("unknown seed node {}", seed.0)))?;
        if seed_node.value.dim() != seed_value.dim() {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed value {} does not match node {}",
                    shape_str(seed_value),
                    shape_str(&seed_node.value)
                ),
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(seed_value.clone());

        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Convenience: backward from a scalar node with unit seed.
    pub fn backward_scalar(&self, seed: NodeId) -> Result<Gradients> {
        self.backward(seed, &Array2::ones((1, 1)))
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let parent = |k: usize| &self.nodes[node.parents[k].0];
        let mut accumulate = |id: NodeId, delta: Array2<f64>| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match node.op {
            Op::Input { .. } => {}
            Op::Affine => {
                let (x, w) = (parent(0), parent(1));
                if x.needs_grad {
                    accumulate(x.id, g.dot(&w.value));
                }
                if w.needs_grad {
                    accumulate(w.id, g.t().dot(&x.value));
                }
                if node.parents.len() == 3 && parent(2).needs_grad {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(node.parents[2], gb);
                }
            }
            Op::Tanh => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(node.parents[0], d);
            }
            Op::Relu => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&parent(0).value)
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                accumulate(node.parents[0], d);
            }
            Op::Square => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&parent(0).value)
                    .for_each(|d, &x| *d *= 2.0 * x);
                accumulate(node.parents[0], d);
            }
            Op::Mul => {
                let (a, b) = (parent(0), parent(1));
                if a.needs_grad {
                    accumulate(a.id, g * &b.value);
                }
                if b.needs_grad {
                    accumulate(b.id, g * &a.value);
                }
            }
            Op::Sum => {
                let p = parent(0);
                accumulate(p.id, Array2::from_elem(p.value.raw_dim(), g[[0, 0]]));
            }
            Op::Scale(c) => accumulate(node.parents[0], g.mapv(|v| c * v)),
            Op::Add => {
                accumulate(node.parents[0], g.clone());
                accumulate(node.parents[1], g.clone());
            }
        }
    }
}

/// Max relative error between central finite differences of `f` at `x` and
/// the analytic gradient `grad`: `|(f(x+he_i) − f(x−he_i))/2h − g_i| / max(|g_i|, 1)`.
/// Entries with magnitude below one are compared absolutely.
pub fn finite_difference_check<F>(mut f: F, x: &[f64], step: f64, grad: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    if grad.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: grad.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value near coordinate {i} is not finite"
            )));
        }
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    Ok(worst)
}
