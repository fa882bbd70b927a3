use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Backward rule: receives the upstream gradient of the node's output and
/// accumulates into the gradients of its parents.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut GradSink<'_, T>)>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
    leaf: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    bound: HashMap<(u64, ParamId), usize>,
}

/// Append-only record of tensor operations in creation (= topological)
/// order. A tape supports exactly one backward pass.
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .field("grad_enabled", &self.grad_enabled)
            .finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
                bound: HashMap::new(),
            }),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward rules (inference).
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(value),
            requires_grad: false,
            backward: None,
            param: None,
            leaf: true,
        })
    }

    /// Differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Arc::new(value),
            requires_grad: self.grad_enabled,
            backward: None,
            param: None,
            leaf: true,
        })
    }

    /// Bind a stored parameter. Repeated binds of the same parameter on one
    /// tape return the same variable. Frozen parameters are recorded as
    /// constants, so no gradient is ever computed for them.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let key = (store.uid(), id);
        if let Some(&existing) = self.inner.borrow().bound.get(&key) {
            return Var {
                tape: self,
                id: existing,
            };
        }
        let p = store.get(id);
        let var = self.push(Node {
            value: Arc::clone(&p.value),
            requires_grad: self.grad_enabled && p.trainable,
            backward: None,
            param: Some(id),
            leaf: true,
        });
        self.inner.borrow_mut().bound.insert(key, var.id);
        var
    }

    /// Record the output of an operation. `backward` is dropped (and the
    /// output treated as a constant) when no parent requires a gradient.
    pub fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        self.push(Node {
            value: Arc::new(value),
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            param: None,
            leaf: false,
        })
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape: a second
    /// call returns [`TensorError::TapeConsumed`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(TensorError::TapeConsumed);
            }
            inner.consumed = true;
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };
        if !nodes[loss.id].requires_grad {
            return Ok(out);
        }
        grads[loss.id] = Some(Tensor::ones(loss_shape));
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.leaf {
                match node.param {
                    Some(pid) => {
                        out.params.insert(pid, g);
                    }
                    None => {
                        out.leaves.insert(i, g);
                    }
                }
                continue;
            }
            if let Some(bw) = &node.backward {
                let mut sink = GradSink {
                    nodes,
                    grads: &mut grads,
                };
                bw(&g, &mut sink);
            }
        }
        Ok(out)
    }

    /// Read-only access to a node value.
    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }
}

/// Accumulator handed to backward rules.
pub struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Real> GradSink<'_, T> {
    pub fn wants(&self, var: usize) -> bool {
        self.nodes[var].requires_grad
    }

    /// Mutable gradient buffer of `var`, zero-initialised on first use.
    /// `None` when the variable does not require a gradient.
    pub fn slot(&mut self, var: usize) -> Option<&mut [T]> {
        if !self.nodes[var].requires_grad {
            return None;
        }
        let shape = self.nodes[var].value.shape();
        Some(
            self.grads[var]
                .get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
                .data_mut(),
        )
    }

    /// Add `g` elementwise into the gradient of `var`.
    pub fn add(&mut self, var: usize, g: &[T]) {
        if let Some(slot) = self.slot(var) {
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of a non-parameter leaf created with [`Tape::leaf`].
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params
            .values()
            .map(|g| g.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
