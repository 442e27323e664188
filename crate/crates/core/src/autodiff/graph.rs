//! Dynamic reverse-mode differentiation graph.
//!
//! A [`Graph`] is an append-only list of entries. Leaves hold inputs and
//! parameters; every other entry is the output of a [`Primitive`] applied to
//! earlier entries, so the list is always in topological order. Calling
//! [`Graph::backward`] walks it in reverse and accumulates vector-Jacobian
//! products into the trainable leaves.

use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to an entry of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(index: usize) -> Self {
        Var(index)
    }
}

/// An operation with a forward rule and a vector-Jacobian backward rule.
pub trait Primitive: fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Primitives without a backward rule can only be used while not recording.
    fn has_backward(&self) -> bool {
        true
    }

    /// Returns one gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>>;

    /// For piecewise-smooth primitives, an encoding of which smooth piece
    /// each output lies on (ReLU sign, pooling winner). Two evaluations with
    /// equal signatures are on the same piece.
    fn branch_signature(&self, _inputs: &[&Tensor]) -> Vec<u8> {
        Vec::new()
    }
}

enum NodeKind {
    Leaf { trainable: bool },
    Op { op: Box<dyn Primitive>, inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    kind: NodeKind,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records operations for a later [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A graph that only evaluates; [`Graph::backward`] sees no trainable leaves.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Leaf { trainable: false }, false)
    }

    /// Trainable leaf: receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let trainable = self.recording;
        self.push(value, NodeKind::Leaf { trainable }, trainable)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Name of the primitive that produced `var`, or `"leaf"`.
    pub fn entry_name(&self, var: Var) -> &'static str {
        match &self.nodes[var.0].kind {
            NodeKind::Leaf { .. } => "leaf",
            NodeKind::Op { op, .. } => op.name(),
        }
    }

    pub fn apply<P: Primitive + 'static>(&mut self, op: P, inputs: &[Var]) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Invalid(format!(
                "operand #{} of `{}` does not belong to this graph",
                bad.0,
                op.name()
            )));
        }
        if self.recording && !op.has_backward() {
            return Err(Error::Unsupported(op.name().to_string()));
        }
        let value = {
            let operands: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&operands)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let kind = NodeKind::Op {
            op: Box::new(op),
            inputs: inputs.to_vec(),
        };
        Ok(self.push(value, kind, requires_grad))
    }

    fn push(&mut self, value: Tensor, kind: NodeKind, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Concatenated [`Primitive::branch_signature`] of every entry.
    pub fn branch_signature(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let NodeKind::Op { op, inputs } = &node.kind {
                let operands: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                out.extend(op.branch_signature(&operands));
            }
        }
        out
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `output`) back to every trainable leaf.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if seed.shape() != out.value.shape() {
            return Err(Error::shape(
                format!("backward seed for entry #{} (`{}`)", output.0, self.entry_name(output)),
                out.value.shape(),
                seed.shape(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let NodeKind::Op { op, inputs } = &node.kind else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let operands: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&operands, &node.value, &grad)?;
            if input_grads.len() != inputs.len() {
                return Err(Error::Invalid(format!(
                    "backward of entry #{idx} (`{}`) returned {} gradients for {} operands",
                    op.name(),
                    input_grads.len(),
                    inputs.len()
                )));
            }
            for (pos, (var, g)) in inputs.iter().zip(input_grads).enumerate() {
                let target = &self.nodes[var.0];
                if !target.requires_grad {
                    continue;
                }
                if g.shape() != target.value.shape() {
                    return Err(Error::shape(
                        format!("backward of entry #{idx} (`{}`), operand {pos}", op.name()),
                        target.value.shape(),
                        g.shape(),
                    ));
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }

        // Trainable leaves that the output does not depend on get zeros.
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.kind {
                NodeKind::Leaf { trainable: true } => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of the trainable leaves after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Runs `f` on a fresh recording graph and returns its result with the graph.
pub fn record<T>(f: impl FnOnce(&mut Graph) -> Result<T>) -> Result<(T, Graph)> {
    let mut graph = Graph::new();
    let out = f(&mut graph)?;
    Ok((out, graph))
}
