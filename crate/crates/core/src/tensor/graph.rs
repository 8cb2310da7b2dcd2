use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Result, Tensor, TensorError};

/// Everything a node's backward rule may look at.
pub(crate) struct BackwardArgs<'a> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a Tensor,
    /// Forward values of the node's parents, in recording order.
    pub inputs: &'a [Rc<Tensor>],
    /// Forward value of the node itself.
    pub output: &'a Tensor,
    /// Which parents actually need a gradient.
    pub needs: &'a [bool],
}

/// Returns one gradient per parent; `None` where `needs` is false.
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// A dynamic autodiff tape. Node ids are assigned in creation order, so a
/// reverse sweep over ids is a valid reverse topological order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records an op output. The backward rule is dropped when no parent
    /// requires a gradient.
    pub(crate) fn record<'g>(
        &'g self,
        value: Tensor,
        parents: &[Var<'g>],
        backward: BackwardFn,
    ) -> Var<'g> {
        let nodes = self.nodes.borrow();
        let requires_grad = parents.iter().any(|p| {
            assert!(std::ptr::eq(p.graph, self), "Var from a different graph");
            nodes[p.id].requires_grad
        });
        drop(nodes);
        self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across fan-out and stay readable through [`Var::grad`] afterwards.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(loss.graph, self), "Var from a different graph");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor>> =
                node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = rule(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(grad);
        }
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }
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
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient from the last [`Graph::backward`]; `None` for nodes that do
    /// not require one or were unreachable from the loss.
    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grads.borrow().get(self.id).cloned().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn sum_gives_ones() {
        let g = Graph::new();
        let x = g.param(Tensor::new([3], vec![1.0, -2.0, 5.0]).unwrap());
        let loss = ops::sum(x);
        g.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gives_twice_x() {
        let g = Graph::new();
        let x = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let loss = ops::sum(ops::mul(x, x).unwrap());
        g.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn fan_out_accumulates_both_branches() {
        // y = relu(x) + 3x, used twice; dy/dx = 1[x>0] + 3
        let g = Graph::new();
        let x = g.param(Tensor::new([3], vec![-1.0, 0.5, 2.0]).unwrap());
        let a = ops::relu(x);
        let b = ops::scale(x, 3.0);
        let loss = ops::sum(ops::add(a, b).unwrap());
        g.backward(loss).unwrap();
        let manual = [3.0, 4.0, 4.0];
        assert_eq!(x.grad().unwrap().data(), &manual);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let x = g.param(Tensor::ones([2]));
        let c = g.constant(Tensor::ones([2]));
        let loss = ops::sum(ops::mul(x, c).unwrap());
        g.backward(loss).unwrap();
        assert!(c.grad().is_none());
        assert!(x.grad().is_some());
    }
}
