//! Value-semantic tensors with a recorded operation graph.
//!
//! Every operation that has at least one input requiring a gradient records
//! a backward rule. Backward rules are written in terms of tensor operations
//! themselves, so running [`grad`] with `create_graph = true` records the
//! backward pass and allows differentiating a gradient again (needed for the
//! gradient penalty of the critic).

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::float::Float;
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording switched to `enabled`, restoring the
/// previous mode afterwards.
pub fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

/// Backward rule of one recorded operation.
pub(crate) trait Backward<T: Float> {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian products for each input, given the upstream gradient
    /// `grad` of `output`. Entries may be `None` for inputs that do not need one.
    fn backward(
        &self,
        inputs: &[Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

struct GradFn<T: Float> {
    inputs: Vec<Tensor<T>>,
    op: Box<dyn Backward<T>>,
}

struct Node<T: Float> {
    id: u64,
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major array. Image batches use the `[B, C, H, W]` layout.
pub struct Tensor<T: Float = f32> {
    node: Rc<Node<T>>,
}

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.op.name());
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &op)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                data,
                shape,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// A tensor that never requires a gradient.
    pub fn constant(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), false, None)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn leaf(data: Vec<T>, shape: &[usize]) -> Self {
        Self::build(data, shape.to_vec(), true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(vec![T::zero(); numel(shape)], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::constant(vec![value; numel(shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(vec![value], &[])
    }

    /// Result of a recorded operation. The node only keeps its backward rule
    /// when recording is enabled and some input requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        if grad_enabled() && inputs.iter().any(|t| t.requires_grad()) {
            Self::build(
                data,
                shape,
                true,
                Some(GradFn {
                    inputs,
                    op: Box::new(op),
                }),
            )
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.node.data.clone(), &self.node.shape)
    }

    /// Same values as a fresh leaf requiring a gradient.
    pub fn detach_leaf(&self) -> Self {
        Self::leaf(self.node.data.clone(), &self.node.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        let data = self.node.data.iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::constant(data, &self.node.shape)
    }
}

/// Post-order of every node reachable from `root` through recorded edges.
fn topo_order<T: Float>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((t, next_child)) = stack.pop() {
        let inputs = t.node.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[]);
        if next_child < inputs.len() {
            let child = inputs[next_child].clone();
            stack.push((t, next_child + 1));
            if child.requires_grad() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// Tensors that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are themselves recorded and can be
/// differentiated again.
pub fn grad<T: Float>(output: &Tensor<T>, wrt: &[Tensor<T>], create_graph: bool) -> Result<Vec<Tensor<T>>> {
    if output.numel() != 1 {
        return Err(Error::NotScalar(output.numel()));
    }
    if !output.requires_grad() {
        return Err(Error::GraphDetached);
    }
    let wanted: HashSet<u64> = wrt.iter().map(Tensor::id).collect();
    let mut found: HashMap<u64, Tensor<T>> = HashMap::new();
    let order = topo_order(output);

    with_grad_mode(create_graph, || {
        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(output.id(), Tensor::full(output.shape(), T::one()));
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if wanted.contains(&node.id()) {
                found.insert(node.id(), g.clone());
            }
            let Some(grad_fn) = node.node.grad_fn.as_ref() else {
                continue;
            };
            let input_grads = grad_fn.op.backward(&grad_fn.inputs, node, &g);
            debug_assert_eq!(input_grads.len(), grad_fn.inputs.len(), "{}", grad_fn.op.name());
            for (input, gi) in grad_fn.inputs.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(gi.shape(), input.shape(), "{} produced a misshaped gradient", grad_fn.op.name());
                let merged = match pending.remove(&input.id()) {
                    Some(acc) => acc.add(&gi),
                    None => gi,
                };
                pending.insert(input.id(), merged);
            }
        }
    });

    Ok(wrt
        .iter()
        .map(|t| found.get(&t.id()).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}
