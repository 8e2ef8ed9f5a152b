//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its value, its parents and a closure that maps the output
//! gradient onto parent gradients. Nodes are appended in evaluation order,
//! so the node list is already topologically sorted and [`Graph::backward`]
//! is a single reverse sweep that visits each node once.
//!
//! Parameters live in a [`ParamStore`]. A graph snapshots the store's
//! values when created (the tensors are reference counted, so this is
//! cheap) and writes gradients back into the store on `backward`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Inputs handed to a backward rule.
pub struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
    /// Which inputs need a gradient; rules may return `None` for the rest.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Named learnable tensors with matching gradient slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
    grads: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(name, "parameter registered twice"));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.grads.push(vec![T::zero(); value.len()]);
        self.values.push(Arc::new(value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    /// Mutable access; clones the tensor if a live graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }

    /// Split borrow used by optimizers.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &mut [T]) {
        (
            Arc::make_mut(&mut self.values[id.0]),
            &mut self.grads[id.0],
        )
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            grads: self.grads.iter().map(|g| vec![U::zero(); g.len()]).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradients of leaf nodes produced by one backward sweep.
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf (input or parameter) node; `None` if it was unreachable.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v.0).map(|g| g.as_slice())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Arc<Tensor<T>>>,
    param_vars: Vec<Option<Var>>,
    track_params: bool,
}

impl<T: Real> Graph<T> {
    /// Graph whose parameter leaves require gradients.
    pub fn new(store: &ParamStore<T>) -> Self {
        Graph {
            nodes: Vec::new(),
            params: store.values.clone(),
            param_vars: vec![None; store.values.len()],
            track_params: true,
        }
    }

    /// Graph for forward-only evaluation: nothing requires a gradient, so
    /// no backward closures are retained.
    pub fn inference(store: &ParamStore<T>) -> Self {
        Graph {
            track_params: false,
            ..Graph::new(store)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// A leaf holding data that may or may not need its gradient.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value: Arc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            param: None,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Node {
            value: Arc::clone(&self.params[id.0]),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.track_params,
            param: Some(id),
        });
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Appends an operation node. The backward rule is dropped when no
    /// parent requires a gradient.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl Fn(&BackwardCtx<T>) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Node {
            value: Arc::new(value),
            parents: parents.to_vec(),
            backward,
            requires_grad,
            param: None,
        })
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// `store` (repeated calls accumulate); all leaf gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.sweep(loss)?;
        for (&idx, g) in &grads.leaves {
            if let Some(id) = self.nodes[idx].param {
                for (acc, &v) in store.grads[id.0].iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Ok(grads)
    }

    /// Reverse sweep without touching any parameter store.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        self.sweep(loss)
    }

    fn sweep(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_len = self.nodes[loss.0].value.len();
        if loss_len != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {loss_len} elements"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(rule) = &node.backward else {
                leaves.insert(idx, g);
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|p| &*self.nodes[p.0].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let parent_grads = rule(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), self.nodes[p.0].value.len());
                match &mut grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}
