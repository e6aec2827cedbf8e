//! Reverse-mode automatic differentiation over a Wengert list.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::error::{shape_err, NnError, Result};
use crate::float::Float;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Maps the output gradient to one gradient per parent. The flag slice says
/// which parents actually need a gradient; entries for the others may be
/// `None`.
pub type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &[bool]) -> Result<Vec<Option<Tensor<F>>>>>;

struct Node<F: Float> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<F>>,
}

/// Records operations on [`Var`]s so gradients can be pulled back from a
/// scalar loss. A tape created with [`Tape::inference`] records nothing and
/// keeps no intermediates alive.
pub struct Tape<F: Float> {
    nodes: RefCell<Vec<Node<F>>>,
    params: RefCell<HashMap<ParamId, (Arc<Tensor<F>>, Option<usize>)>>,
    frozen: RefCell<HashSet<ParamId>>,
    enabled: bool,
}

/// A tensor value living on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, F: Float> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) value: Arc<Tensor<F>>,
    pub(crate) node: Option<usize>,
}

impl<F: Float> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(node={:?}, {:?})", self.node, self.value)
    }
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            frozen: RefCell::new(HashSet::new()),
            enabled: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parents: Vec<Option<usize>>, backward: Option<BackwardFn<F>>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, backward });
        nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        Var {
            tape: self,
            value: Arc::new(value),
            node: None,
        }
    }

    /// A differentiable input whose gradient can be read with [`Grads::wrt`].
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf_arc(Arc::new(value))
    }

    fn leaf_arc(&self, value: Arc<Tensor<F>>) -> Var<'_, F> {
        let node = self.enabled.then(|| self.push(Vec::new(), None));
        Var {
            tape: self,
            value,
            node,
        }
    }

    /// Makes later [`Tape::param`] calls bind `ids` as constants, so they
    /// receive no gradient on this tape. Already-bound parameters keep their
    /// binding.
    pub fn freeze_params(&self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.borrow_mut().extend(ids);
    }

    /// Binds a stored parameter. Repeated calls return the same node, so
    /// shared weights accumulate a single gradient.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        if let Some((value, node)) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                value: value.clone(),
                node: *node,
            };
        }
        let p = store.param(id);
        let var = if p.trainable && !self.frozen.borrow().contains(&id) {
            self.leaf_arc(p.value.clone())
        } else {
            Var {
                tape: self,
                value: p.value.clone(),
                node: None,
            }
        };
        self.params
            .borrow_mut()
            .insert(id, (var.value.clone(), var.node));
        var
    }

    /// Adds an operation node. `backward` is only kept when at least one
    /// parent is tracked.
    pub fn record(
        &self,
        value: Tensor<F>,
        parents: &[&Var<'_, F>],
        backward: impl Fn(&Tensor<F>, &[bool]) -> Result<Vec<Option<Tensor<F>>>> + 'static,
    ) -> Var<'_, F> {
        let links: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        let node = if self.enabled && links.iter().any(Option::is_some) {
            Some(self.push(links, Some(Box::new(backward))))
        } else {
            None
        };
        Var {
            tape: self,
            value: Arc::new(value),
            node,
        }
    }

    /// Gradients of the scalar `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: &Var<'_, F>) -> Result<Grads<F>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(NnError::ForeignVar);
        }
        if loss.value.len() != 1 {
            return shape_err("backward", format!("loss must be scalar, got {:?}", loss.value.shape()));
        }
        let mut leaf = HashMap::new();
        let Some(root) = loss.node else {
            return Ok(Grads {
                leaf,
                params: HashMap::new(),
            });
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<F>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::ones(loss.value.shape()));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.backward {
                None => {
                    leaf.insert(i, g);
                }
                Some(f) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let pg = f(&g, &needs)?;
                    for (p, gp) in node.parents.iter().zip(pg) {
                        if let (Some(p), Some(gp)) = (p, gp) {
                            match &mut grads[*p] {
                                Some(acc) => acc.add_assign(&gp)?,
                                slot @ None => *slot = Some(gp),
                            }
                        }
                    }
                }
            }
        }
        let params = self
            .params
            .borrow()
            .iter()
            .filter_map(|(id, (_, node))| node.and_then(|n| leaf.get(&n).map(|g| (*id, g.clone()))))
            .collect();
        Ok(Grads { leaf, params })
    }
}

/// Result of [`Tape::backward`].
pub struct Grads<F: Float> {
    leaf: HashMap<usize, Tensor<F>>,
    params: HashMap<ParamId, Tensor<F>>,
}

impl<F: Float> Grads<F> {
    /// Gradient for a leaf variable; `None` if the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_, F>) -> Option<&Tensor<F>> {
        var.node.and_then(|n| self.leaf.get(&n))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn param_norm(&self) -> F {
        let mut ids: Vec<_> = self.params.keys().copied().collect();
        ids.sort();
        ids.iter()
            .map(|id| self.params[id].sum_sq())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }
}

impl<'t, F: Float> Var<'t, F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t, F> {
        Var {
            tape: self.tape,
            value: self.value.clone(),
            node: None,
        }
    }

    pub fn into_tensor(self) -> Tensor<F> {
        Arc::try_unwrap(self.value).unwrap_or_else(|a| (*a).clone())
    }
}
