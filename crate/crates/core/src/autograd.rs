//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its forward value and, when any input
//! needs a gradient, a [`GradFn`] that maps the output gradient back onto
//! its inputs. Nodes are topologically ordered by construction, so the
//! backward pass is a single reverse sweep.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded op.
pub trait GradFn {
    fn inputs(&self) -> Vec<Var>;

    /// Gradients for each entry of [`GradFn::inputs`], in order. An entry may
    /// be `None` when `needs[i]` is false.
    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    grad_fn: Option<Box<dyn GradFn>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad_fn: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad_fn: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an op output. The backward rule is dropped when no input is
    /// differentiable.
    pub fn push<G: GradFn + 'static>(&mut self, value: Tensor, grad_fn: G) -> Var {
        let requires_grad = grad_fn.inputs().iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node {
            value,
            grad_fn: if requires_grad { Some(Box::new(grad_fn)) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// requires one.
    ///
    /// # Panics
    /// If `root` does not hold exactly one value.
    pub fn backward(&self, root: Var) -> Gradients {
        let root_value = &self.nodes[root.0].value;
        assert_eq!(root_value.len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(grad_fn) = node.grad_fn.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs = grad_fn.inputs();
            let needs: Vec<bool> = inputs.iter().map(|&v| self.requires_grad(v)).collect();
            let input_grads = grad_fn.backward(self, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for ((v, g), need) in inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Intermediate gradients are consumed; keep the root's for callers.
            if i == root.0 {
                grads[i] = Some(grad);
            }
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`]; only leaves and the root keep their
/// gradients.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
