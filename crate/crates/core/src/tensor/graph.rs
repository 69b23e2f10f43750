use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::ops::{backward_op, Op};
use super::params::{Gradients, ParamId, ParamStore};
use super::{Float, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Node<F> {
    pub value: Tensor<F>,
    pub op: Op<F>,
    pub requires_grad: bool,
}

/// An eagerly built computation tape.
///
/// A graph is single-threaded; independent graphs can run concurrently
/// against a shared [`ParamStore`].
pub struct Graph<F: Float> {
    pub(crate) nodes: RefCell<Vec<Node<F>>>,
    grads: RefCell<HashMap<usize, Vec<F>>>,
    params: RefCell<HashMap<usize, usize>>,
    track_params: bool,
}

impl<F: Float> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Graph<F> {
    /// A graph whose parameters receive gradients.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(HashMap::new()),
            params: RefCell::new(HashMap::new()),
            track_params: true,
        }
    }

    /// A graph that records no backward information for parameters.
    pub fn inference() -> Self {
        Graph {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor<F>, op: Op<F>) -> Var<'_, F> {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => self.track_params,
            op => {
                let nodes = self.nodes.borrow();
                op.parents().iter().any(|&p| nodes[p].requires_grad)
            }
        };
        let op = if requires_grad || matches!(op, Op::Param) { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            g: self,
        }
    }

    pub(crate) fn requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, Op::Leaf)
    }

    /// A leaf that receives gradient.
    pub fn input(&self, t: Tensor<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            id: nodes.len() - 1,
            g: self,
        }
    }

    pub fn scalar(&self, v: F) -> Var<'_, F> {
        self.constant(Tensor::scalar(v))
    }

    /// The parameter as a leaf of this graph; repeated calls share one node.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        if let Some(&node) = self.params.borrow().get(&id.0) {
            return Var { id: node, g: self };
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.borrow_mut().insert(id.0, v.id);
        v
    }

    pub(crate) fn value(&self, id: usize) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse pass from a scalar `loss`. Gradients of leaves and
    /// parameters accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&self, loss: Var<'_, F>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);
        let mut persistent = self.grads.borrow_mut();
        for id in (0..=loss.id).rev() {
            let Some(gout) = grads[id].take() else { continue };
            let node = &nodes[id];
            match node.op {
                Op::Leaf | Op::Param => {
                    let slot = persistent.entry(id).or_insert_with(|| vec![F::zero(); gout.len()]);
                    for (s, g) in slot.iter_mut().zip(&gout) {
                        *s += *g;
                    }
                }
                _ => backward_op(&node.op, &node.value, &gout, &nodes, &mut grads),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Accumulated gradient of a leaf or parameter.
    pub fn grad(&self, v: Var<'_, F>) -> Option<Tensor<F>> {
        let shape = self.value(v.id).shape().to_vec();
        self.grads
            .borrow()
            .get(&v.id)
            .map(|g| Tensor::new(&shape, g.clone()).expect("grad shape"))
    }

    /// Adds this graph's parameter gradients into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Gradients<F>) {
        let grads = self.grads.borrow();
        for (&pid, node) in self.params.borrow().iter() {
            if let Some(g) = grads.get(node) {
                out.add(ParamId(pid), g);
            }
        }
    }
}

/// A handle to one node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Float> {
    pub(crate) id: usize,
    pub(crate) g: &'g Graph<F>,
}

impl<'g, F: Float> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.g
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.value(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.g.value(self.id).numel()
    }

    pub fn value(&self) -> Tensor<F> {
        self.g.value(self.id).clone()
    }

    /// Borrow the value without copying.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<F>) -> R) -> R {
        f(&self.g.value(self.id))
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> F {
        self.g.value(self.id).data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.g.requires_grad(&[self.id])
    }
}

impl<F: Float> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}
