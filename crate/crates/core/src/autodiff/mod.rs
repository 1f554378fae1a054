//! Differentiable numeric substrate: dense row-major tensors, a fixed
//! primitive set with reverse-mode gradients, and a finite-difference
//! verification oracle.
//!
//! Graphs are built dynamically: every primitive records its parents and a
//! backward closure unless taping is disabled via [`no_grad`] or no input is
//! connected to a gradient-requiring leaf. Gradients accumulate (`+=`) into
//! leaf tensors, so repeated [`backward`] calls without [`zero_grads`] sum.

mod checkpoint;
mod ops;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointEntry, CheckpointError, TensorPayload,
};
pub use ops::{
    concat_cols, concat_rows, cosine_sim, cross_entropy_rows, gather_rows, l2_norm, layer_norm,
    linear_scan, matmul, rms_norm, ste_one,
};

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::LinalgScalar;
use num_traits::Float;
use thiserror::Error;

/// Element type tag used by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    U64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
            DType::U64 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::U64 => 8,
        }
    }
}

/// Floating-point element type of a tensor. Implemented for `f32` and `f64`;
/// `f64` is the default precision and the one gradient checks run in.
pub trait Scalar: Float + LinalgScalar + Display + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Errors raised by tensor primitives and the backward engine.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("non-finite result in {op}")]
    Numerics { op: &'static str },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<V> = std::result::Result<V, TensorError>;

fn shape_err<V>(op: &'static str, msg: impl Into<String>) -> Result<V> {
    Err(TensorError::Shape {
        op,
        msg: msg.into(),
    })
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with graph recording disabled on this thread. Tensors created
/// inside carry values only, so inference over long corpora stays O(1) in
/// graph memory.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn taping_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

/// Backward closure: given the gradient at this node, return the gradient
/// contribution for each parent (same order and shape as `parents`).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct TensorInner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    value: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense row-major tensor. Cloning is shallow (shares storage and graph
/// position). Values are mutable only through [`Tensor::set_data`] /
/// [`Tensor::map_data`], which exist for parameter updates and perturbation;
/// graph intermediates are never mutated.
pub struct Tensor<T: Scalar> {
    inner: Rc<TensorInner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(
        shape: Vec<usize>,
        value: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                value: RefCell::new(value),
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Constant (non-differentiable) tensor.
    pub fn constant(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return shape_err(
                "constant",
                format!("shape {:?} does not hold {} values", shape, data.len()),
            );
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, vec![], None))
    }

    /// Leaf tensor that participates in gradient accumulation.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return shape_err(
                "leaf",
                format!("shape {:?} does not hold {} values", shape, data.len()),
            );
        }
        Ok(Self::new_inner(shape.to_vec(), data, true, vec![], None))
    }

    pub fn scalar(v: T) -> Self {
        Self::new_inner(vec![], vec![v], false, vec![], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![T::zero(); n], false, vec![], None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_inner(shape.to_vec(), vec![T::one(); n], false, vec![], None)
    }

    /// Result of a primitive. Records the op only when taping is on and some
    /// parent is connected to a gradient-requiring leaf; pruned subgraphs
    /// collapse to constants.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(TensorError::Numerics { op });
        }
        let tracked = taping_enabled() && parents.iter().any(|p| p.tracked());
        if tracked {
            Ok(Self::new_inner(shape, value, false, parents, Some(backward)))
        } else {
            Ok(Self::new_inner(shape, value, false, vec![], None))
        }
    }

    fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.backward.is_some()
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Extent along axis 0/1 of a 2-D tensor (rows, cols).
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.inner.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => shape_err("dims2", format!("expected rank 2, got {s:?}")),
        }
    }

    pub fn data(&self) -> Vec<T> {
        self.inner.value.borrow().clone()
    }

    pub fn item(&self) -> T {
        let v = self.inner.value.borrow();
        debug_assert_eq!(v.len(), 1, "item() on non-scalar tensor");
        v[0]
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.value.borrow())
    }

    /// Overwrites stored values in place (parameter updates, perturbation).
    pub fn set_data(&self, data: &[T]) {
        let mut v = self.inner.value.borrow_mut();
        assert_eq!(v.len(), data.len(), "set_data length mismatch");
        v.copy_from_slice(data);
    }

    /// Mutates stored values in place.
    pub fn map_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.value.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutates the gradient accumulator in place when one exists
    /// (gradient clipping, optimizer-side scaling).
    pub fn map_grad(&self, f: impl FnOnce(&mut [T])) {
        if let Some(g) = self.inner.grad.borrow_mut().as_mut() {
            f(g);
        }
    }

    fn accumulate_grad(&self, delta: &[T]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a = *a + *b;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }
}

/// Propagates gradients from a scalar loss to every reachable leaf,
/// accumulating into leaf `grad` buffers.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(TensorError::Graph(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.tracked() {
        return Err(TensorError::Graph(
            "loss is not connected to any gradient-requiring leaf".into(),
        ));
    }

    // Topological order via iterative DFS.
    let mut order: Vec<Tensor<T>> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id(), ());
    while let Some((node, child)) = stack.pop() {
        let parents = &node.inner.parents;
        if child < parents.len() {
            stack.push((node.clone(), child + 1));
            let p = parents[child].clone();
            if p.tracked() && !visited.contains_key(&p.id()) {
                visited.insert(p.id(), ());
                stack.push((p, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(loss.id(), vec![T::one()]);

    for node in order.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if node.inner.requires_grad {
            node.accumulate_grad(&g);
        }
        if let Some(back) = &node.inner.backward {
            let contributions = back(&g);
            debug_assert_eq!(contributions.len(), node.inner.parents.len());
            for (parent, contrib) in node.inner.parents.iter().zip(contributions) {
                if !parent.tracked() {
                    continue;
                }
                grads
                    .entry(parent.id())
                    .and_modify(|buf| {
                        for (a, b) in buf.iter_mut().zip(&contrib) {
                            *a = *a + *b;
                        }
                    })
                    .or_insert(contrib);
            }
        }
    }
    Ok(())
}

/// A named trainable tensor. `lr_multiplier` scales the schedule rate for the
/// hierarchy level the parameter lives at; `weight_decay` marks whether
/// decoupled decay applies (normalization scales and the embedding table opt
/// out).
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub lr_multiplier: f64,
    pub weight_decay: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        assert!(tensor.requires_grad(), "parameters must be gradient leaves");
        Parameter {
            name: name.into(),
            tensor,
            lr_multiplier: 1.0,
            weight_decay: true,
        }
    }

    pub fn with_lr_multiplier(mut self, m: f64) -> Self {
        assert!(m > 0.0, "lr multiplier must be positive");
        self.lr_multiplier = m;
        self
    }

    pub fn without_weight_decay(mut self) -> Self {
        self.weight_decay = false;
        self
    }
}

/// Clears gradient accumulators of all given parameters.
pub fn zero_grads<T: Scalar>(params: &[Parameter<T>]) {
    for p in params {
        p.tensor.zero_grad();
    }
}

/// Names of parameters the loss does not reach (no gradient after backward).
pub fn unreached_params<T: Scalar>(params: &[Parameter<T>]) -> Vec<String> {
    params
        .iter()
        .filter(|p| p.tensor.grad().is_none())
        .map(|p| p.name.clone())
        .collect()
}

/// Central-difference gradient verification.
///
/// Runs `f` once, backpropagates, then compares the analytic gradient of up
/// to `max_coords` sampled coordinates per parameter against
/// `(f(x+eps) - f(x-eps)) / 2eps`. Returns the max of
/// `|analytic - fd| / max(1, |fd|)`. Meaningful in 64-bit mode.
pub fn finite_diff_check<T: Scalar, F>(
    f: F,
    params: &[Parameter<T>],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn() -> Result<Tensor<T>>,
{
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    zero_grads(params);
    let loss = f()?;
    backward(&loss)?;
    let analytic: Vec<Option<Vec<T>>> = params.iter().map(|p| p.tensor.grad()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = T::from_f64(eps);
    let mut max_rel = 0.0f64;

    for (p, grad) in params.iter().zip(&analytic) {
        let n = p.tensor.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords);
        }
        for &i in &coords {
            let orig = p.tensor.with_data(|d| d[i]);
            p.tensor.map_data(|d| d[i] = orig + step);
            let plus = no_grad(&f)?.item().as_f64();
            p.tensor.map_data(|d| d[i] = orig - step);
            let minus = no_grad(&f)?.item().as_f64();
            p.tensor.map_data(|d| d[i] = orig);

            let fd = (plus - minus) / (2.0 * eps);
            let g = grad.as_ref().map_or(0.0, |g| g[i].as_f64());
            let rel = (g - fd).abs() / fd.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
