use std::cell::RefCell;
use std::sync::Arc;

use indexmap::IndexMap;

use super::{Scalar, Tensor};
use crate::error::{contract_err, Result};

/// Primitive operations that can appear on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Neg,
    AddChannelBias,
    Sum,
    Mean,
    MatMul,
    Reshape,
    ToTokens,
    FromTokens,
    Conv2d,
    DepthwiseConv2d,
    MaxPool2,
    Bilinear,
    BatchNorm,
    LayerNorm,
    Relu,
    Gelu,
    Sigmoid,
    Shift,
    Linear,
    BceDice,
}

type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

/// One recorded operation: its kind, the nodes it read, and the closure
/// that maps the output gradient to input gradients. The closure owns
/// whatever forward context it needs (argmax indices, normalization
/// statistics, input values).
pub struct TapeNode<T> {
    pub op: OpKind,
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    param: Option<String>,
    shape: Vec<usize>,
}

/// A value produced during a forward pass, optionally linked to a tape node.
#[derive(Clone)]
pub struct Var<T: Scalar = f32> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Scalar> Var<T> {
    /// An untracked value; no gradient flows into it.
    pub fn constant(value: Tensor<T>) -> Self {
        Self { value: Arc::new(value), node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }

    pub(crate) fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }
}

/// Gradients keyed by leaf name, in the order leaves were registered.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f32> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn into_map(self) -> IndexMap<String, Tensor<T>> {
        self.map
    }
}

/// Eagerly built reverse-mode tape. One per forward pass; consumed by
/// [`Tape::backward`].
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<TapeNode<T>>>,
    enabled: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), enabled: true, check_finite: cfg!(debug_assertions) }
    }

    /// A tape that records nothing. Forward code runs unchanged on it,
    /// which is how eval-mode inference avoids building a graph.
    pub fn disabled() -> Self {
        Self { nodes: RefCell::new(Vec::new()), enabled: false, check_finite: false }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ops(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Registers a named leaf whose gradient is reported by `backward`.
    pub fn param(&self, name: impl Into<String>, value: Arc<Tensor<T>>) -> Var<T> {
        if !self.enabled {
            return Var { value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(TapeNode {
            op: OpKind::Leaf,
            parents: Vec::new(),
            backward: None,
            param: Some(name.into()),
            shape: value.shape().to_vec(),
        });
        Var { value, node: Some(nodes.len() - 1) }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var::constant(value)
    }

    /// Wraps an op result. A node is only pushed when the tape is enabled
    /// and at least one input is tracked.
    pub(crate) fn record<F>(&self, op: OpKind, value: Tensor<T>, inputs: &[&Var<T>], backward: F) -> Var<T>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if self.check_finite && inputs.iter().all(|v| v.value.all_finite()) {
            debug_assert!(value.all_finite(), "{op:?} produced a non-finite value from finite inputs");
        }
        let tracked = self.enabled && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(TapeNode {
            op,
            parents: inputs.iter().map(|v| v.node).collect(),
            backward: Some(Box::new(backward)),
            param: None,
            shape: value.shape().to_vec(),
        });
        Var { value: Arc::new(value), node: Some(nodes.len() - 1) }
    }

    /// Reverse sweep from a scalar loss. Returns one accumulated gradient per
    /// reachable leaf, shaped like the leaf.
    pub fn backward(self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return contract_err(format!("backward needs a scalar loss, got shape {:?}", loss.shape()));
        }
        if !self.enabled {
            return contract_err("backward on a grad-disabled graph");
        }
        let Some(root) = loss.node else {
            return contract_err("loss does not depend on any gradient-tracked value");
        };

        let mut nodes = self.nodes.into_inner();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::from_parts(loss.shape().to_vec(), vec![T::one()]));
        let mut map: IndexMap<String, Tensor<T>> = IndexMap::new();

        for i in (0..=root).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &mut nodes[i];
            debug_assert_eq!(grad.shape(), node.shape.as_slice(), "{:?} gradient shape", node.op);
            if let Some(name) = node.param.take() {
                match map.get_mut(&name) {
                    Some(acc) => acc.add_assign(&grad),
                    None => {
                        map.insert(name, grad);
                    }
                }
                continue;
            }
            let Some(backward) = node.backward.take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parents = std::mem::take(&mut node.parents);
            let input_grads = backward(&grad, &needs);
            debug_assert_eq!(input_grads.len(), parents.len());
            for (parent, g) in parents.into_iter().zip(input_grads) {
                let (Some(p), Some(g)) = (parent, g) else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { map })
    }
}
