//! Dynamic reverse-mode graph.
//!
//! A [`Var`] is a reference-counted node holding its forward value and, when
//! any input requires a gradient, a closure mapping the output gradient to
//! input gradients. Nodes that do not depend on a trainable leaf carry no
//! closure and no parent links, so inference builds no graph at all and
//! intermediates are freed as soon as they go out of scope.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Result, TensorError};
use crate::scalar::Float;
use crate::tensor::Tensor;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

pub type BackwardFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Float> {
    id: usize,
    value: Tensor<F>,
    requires_grad: bool,
    parents: Vec<Var<F>>,
    backward: Option<BackwardFn<F>>,
}

pub struct Var<F: Float>(Rc<Node<F>>);

impl<F: Float> Clone for Var<F> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<F: Float> fmt::Debug for Var<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

impl<F: Float> Var<F> {
    /// Value that never receives a gradient.
    pub fn constant(value: Tensor<F>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    /// Trainable leaf.
    pub fn leaf(value: Tensor<F>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    fn make(
        value: Tensor<F>,
        requires_grad: bool,
        parents: Vec<Var<F>>,
        backward: Option<BackwardFn<F>>,
    ) -> Self {
        let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        Var(Rc::new(Node { id, value, requires_grad, parents, backward }))
    }

    /// Builds an op output. `backward` is only evaluated (and the parents are
    /// only retained) when some parent requires a gradient.
    pub fn from_op(
        value: Tensor<F>,
        parents: &[&Var<F>],
        backward: impl FnOnce() -> BackwardFn<F>,
    ) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            let parents = parents.iter().map(|&p| p.clone()).collect();
            Self::make(value, true, parents, Some(backward()))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<F> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        self.0.value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> F {
        self.0.value.data()[0]
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self) -> Result<Gradients<F>> {
        if self.0.value.len() != 1 {
            return Err(TensorError::Gradient(format!(
                "backward needs a scalar output, got {:?}",
                self.shape()
            )));
        }
        let seed = Tensor::ones(self.shape());
        self.backward_with(seed)
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, seed: Tensor<F>) -> Result<Gradients<F>> {
        if seed.shape() != self.shape() {
            return Err(TensorError::Gradient("seed gradient shape mismatch".into()));
        }
        let mut grads: HashMap<usize, Tensor<F>> = HashMap::new();
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads: leaves });
        }
        let order = topo_order(self);
        grads.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad) = grads.remove(&node.0.id) else { continue };
            match &node.0.backward {
                None => {
                    leaves.insert(node.0.id, grad);
                }
                Some(f) => {
                    let inputs = f(&grad);
                    debug_assert_eq!(inputs.len(), node.0.parents.len());
                    for (parent, g) in node.0.parents.iter().zip(inputs) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        if g.shape() != parent.shape() {
                            return Err(TensorError::Gradient(format!(
                                "gradient shape {:?} does not match input {:?}",
                                g.shape(),
                                parent.shape()
                            )));
                        }
                        match grads.get_mut(&parent.0.id) {
                            Some(acc) => acc.add_assign(&g)?,
                            None => {
                                grads.insert(parent.0.id, g);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Post-order (inputs before outputs) over the nodes that require grad.
fn topo_order<F: Float>(root: &Var<F>) -> Vec<Var<F>> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Var<F>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, next)) = stack.pop() {
        if next < node.0.parents.len() {
            let parent = node.0.parents[next].clone();
            stack.push((node, next + 1));
            if parent.requires_grad() && visited.insert(parent.id()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Gradients of trainable leaves, keyed by variable.
pub struct Gradients<F: Float> {
    grads: HashMap<usize, Tensor<F>>,
}

impl<F: Float> Gradients<F> {
    pub fn get(&self, var: &Var<F>) -> Option<&Tensor<F>> {
        self.grads.get(&var.id())
    }

    pub fn take(&mut self, var: &Var<F>) -> Option<Tensor<F>> {
        self.grads.remove(&var.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<F: Float> Drop for Node<F> {
    fn drop(&mut self) {
        // Unlink long parent chains iteratively so deep graphs do not
        // overflow the stack on drop.
        let mut pending: Vec<Var<F>> = std::mem::take(&mut self.parents);
        while let Some(var) = pending.pop() {
            if let Ok(mut node) = Rc::try_unwrap(var.0) {
                pending.append(&mut node.parents);
            }
        }
    }
}
