//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tensor`] is a reference-counted handle. Operations on tensors that
//! require gradients record a node holding the parents and a backward
//! closure; [`Tensor::backward`] walks the recorded graph in reverse creation
//! order and accumulates gradients into leaves (and into any intermediate
//! marked with [`Tensor::retain_grad`]).
//!
//! Graphs are single-threaded (`Rc`); the numeric kernels inside individual
//! ops fan out over samples with rayon, with reductions performed in a fixed
//! order so results never depend on the worker count.

mod conv;
mod element;
mod gemm;
mod norm;
mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use conv::{conv_output_size, conv_transpose_output_size};
pub use element::{DType, Element};
pub use norm::{Mode, RunningStats, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

fn next_id() -> usize {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward closure: upstream gradient in, one optional gradient per parent out.
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Element> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    retain_grad: Cell<bool>,
    node: Option<Node<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Element = f32>(Rc<Inner<T>>);

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            retain_grad: Cell::new(false),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(&data, shape)?;
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf: gradients accumulate into it on `backward`.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(&data, shape)?;
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], vec![1], false, None)
    }

    /// Records a custom differentiable operation.
    ///
    /// `backward` receives the upstream gradient (same length as `data`) and
    /// must return one entry per parent; `None` means no contribution. When no
    /// parent requires a gradient the result is a plain constant.
    pub fn from_op(
        data: Vec<T>,
        shape: &[usize],
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        check_shape(&data, shape)?;
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node {
            op,
            parents,
            backward,
        });
        Ok(Self::build(data, shape.to_vec(), requires_grad, node))
    }

    /// Same values, cut from the graph. The result keeps its parent for
    /// introspection but never passes a gradient back to it.
    pub fn stop_gradient(&self) -> Self {
        let node = Node {
            op: "stop_gradient",
            parents: vec![self.clone()],
            backward: Box::new(|_| vec![None]),
        };
        Self::build(self.to_vec(), self.0.shape.clone(), false, Some(node))
    }

    /// Detached copy with no parents at all.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.0.shape.clone(), false, None)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn parents(&self) -> Vec<Tensor<T>> {
        self.0
            .node
            .as_ref()
            .map(|n| n.parents.clone())
            .unwrap_or_default()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        debug_assert_eq!(d.len(), 1);
        d[0]
    }

    /// Overwrites the values in place (parameter updates, checkpoint loads).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dim("set_data", &self.0.shape, &[data.len()]));
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Keep the gradient of an intermediate result after `backward`.
    pub fn retain_grad(&self) {
        self.0.retain_grad.set(true);
    }

    /// Back-propagates from a one-element tensor.
    ///
    /// Nodes are visited in decreasing id order; ids grow with creation, so
    /// every node is processed after all of its consumers. Gradients of
    /// leaves add onto whatever they already hold.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut nodes: HashMap<usize, Tensor<T>> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !nodes.contains_key(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            nodes.insert(t.id(), t);
        }
        let mut order: Vec<usize> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for id in order {
            let t = &nodes[&id];
            let Some(g) = grads.remove(&id) else {
                continue;
            };
            match &t.0.node {
                None => accumulate_into(&t.0.grad, &g),
                Some(node) => {
                    if t.0.retain_grad.get() {
                        accumulate_into(&t.0.grad, &g);
                    }
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "gradient size from {}", node.op);
                        match grads.get_mut(&p.id()) {
                            Some(acc) => add_assign(acc, &pg),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shape<T>(data: &[T], shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::param(format!("invalid tensor shape {shape:?}")));
    }
    if numel(shape) != data.len() {
        return Err(Error::dim("tensor", shape, &[data.len()]));
    }
    Ok(())
}

fn accumulate_into<T: Element>(slot: &RefCell<Option<Vec<T>>>, g: &[T]) {
    let mut slot = slot.borrow_mut();
    match slot.as_mut() {
        Some(acc) => add_assign(acc, g),
        None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn add_assign<T: Element>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}
