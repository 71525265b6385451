use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::ops::Op;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Value,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// A single-use computation graph. Nodes are appended in topological order
/// by construction, so the backward sweep is a reverse scan.
pub struct Graph<'p> {
    store: &'p ParamStore,
    pub(crate) nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
    param_log: Vec<ParamId>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            param_log: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked and can be read back from [`Backprop::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf view of a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.param_log.push(id);
        if let Some(v) = self.param_leaves.get(&id) {
            return *v;
        }
        let shape = self.store.get(id).value.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    /// Position in the parameter access log, for use with [`Graph::params_used_since`].
    pub fn param_mark(&self) -> usize {
        self.param_log.len()
    }

    /// Parameters accessed after `mark`, sorted and deduplicated.
    pub fn params_used_since(&self, mark: usize) -> Vec<ParamId> {
        let mut ids = self.param_log[mark..].to_vec();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.get(*id).value.data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("node shape matches its data")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scans every node for NaN/Inf and names the first offending operation.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !self.value(Var(i)).iter().all(|x| x.is_finite()) {
                return Err(NumericsError::NonFinite(format!(
                    "node {i} ({})",
                    node.op.name()
                )));
            }
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backprop> {
        if self.nodes[loss.0].shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::invalid(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss.0].shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            crate::ops::backward_node(self, Var(i), &gout, &mut grads);
            grads[i] = Some(gout);
        }
        let mut params = Gradients::new(self.store.len());
        for (id, v) in &self.param_leaves {
            if let Some(g) = grads[v.0].take() {
                params.set(*id, g);
            }
        }
        Ok(Backprop { grads, params })
    }

    /// Gradient slot of `v`, zero-allocated on first touch. `None` when `v`
    /// does not require gradient.
    pub(crate) fn slot<'g>(
        &self,
        grads: &'g mut [Option<Vec<f64>>],
        v: Var,
    ) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }
}

/// Result of [`Graph::backward`].
pub struct Backprop {
    grads: Vec<Option<Vec<f64>>>,
    params: Gradients,
}

impl Backprop {
    /// Gradient of the loss with respect to a non-parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn into_params(self) -> Gradients {
        self.params
    }
}
