//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Var`] is an immutable node holding a value and, when it participates in
//! a differentiable computation, a closure mapping the upstream gradient to
//! gradients of its parents. Graphs are reference counted and released when
//! the last `Var` referring to them is dropped.
//!
//! Trainable weights live in [`Param`]s, which are plain data (`Send + Sync`).
//! Each forward pass turns them into leaf vars keyed by the parameter id, so a
//! parameter used several times in one graph accumulates a single gradient.

mod conv;
mod ops;
mod pool;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayD, IxDyn};

use crate::float::Float;

pub use conv::{col2im_add, conv_out_size, im2col};
pub use ops::{
    pixel_shuffle_array as pixel_shuffle, pixel_unshuffle_array as pixel_unshuffle, sum_to_shape,
};
pub use pool::{area_matrix, bilinear_matrix, resize_matrix};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static PARAMS_FROZEN: Cell<bool> = const { Cell::new(false) };
}

struct FlagGuard {
    key: &'static std::thread::LocalKey<Cell<bool>>,
    prev: bool,
}

impl Drop for FlagGuard {
    fn drop(&mut self) {
        self.key.with(|c| c.set(self.prev));
    }
}

fn with_flag<R>(
    key: &'static std::thread::LocalKey<Cell<bool>>,
    value: bool,
    f: impl FnOnce() -> R,
) -> R {
    let prev = key.with(|c| c.replace(value));
    let _guard = FlagGuard { key, prev };
    f()
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_flag(&GRAD_ENABLED, false, f)
}

/// Runs `f` with every [`Param`] materialized as a constant. Gradients still
/// flow through the computation to other inputs.
pub fn frozen_params<R>(f: impl FnOnce() -> R) -> R {
    with_flag(&PARAMS_FROZEN, true, f)
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

fn params_frozen() -> bool {
    PARAMS_FROZEN.with(|c| c.get())
}

type BackwardFn<T> = Box<dyn Fn(&ArrayD<T>) -> Vec<Option<ArrayD<T>>>>;

struct Node<T: Float> {
    id: u64,
    value: ArrayD<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A node of the computation graph.
pub struct Var<T: Float>(Rc<Node<T>>);

impl<T: Float> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Float> Var<T> {
    fn new_leaf(value: ArrayD<T>, requires_grad: bool, id: u64) -> Self {
        Var(Rc::new(Node {
            id,
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: ArrayD<T>) -> Self {
        Self::new_leaf(value, false, next_id())
    }

    /// A differentiable input. Its gradient is retained by [`Var::backward`].
    pub fn input(value: ArrayD<T>) -> Self {
        let rg = is_grad_enabled();
        Self::new_leaf(value, rg, next_id())
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Builds the node for an operation. When no parent requires a gradient
    /// (or recording is disabled) the result is a constant and `backward` is
    /// dropped unused.
    pub(crate) fn from_op<F>(value: ArrayD<T>, parents: Vec<Var<T>>, backward: F) -> Self
    where
        F: Fn(&ArrayD<T>) -> Vec<Option<ArrayD<T>>> + 'static,
    {
        let requires_grad = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents,
            backward: Some(Box::new(backward)),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &ArrayD<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on var of shape {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Dims of a 4-D (N, C, H, W) var.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        let s = self.shape();
        assert_eq!(s.len(), 4, "expected a 4-D tensor, got shape {s:?}");
        (s[0], s[1], s[2], s[3])
    }

    /// Reverse-mode sweep from a single-element var.
    pub fn backward(&self) -> Grads<T> {
        assert_eq!(
            self.len(),
            1,
            "backward() requires a scalar, got shape {:?}",
            self.shape()
        );
        let mut grads: HashMap<u64, ArrayD<T>> = HashMap::new();
        if !self.requires_grad() {
            return Grads { map: grads };
        }

        // Iterative post-order DFS; `order` lists every node after its parents.
        let mut order: Vec<Var<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(v.id()) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in &v.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        grads.insert(self.id(), ArrayD::from_elem(self.0.value.raw_dim(), T::one()));
        for v in order.iter().rev() {
            let Some(bw) = &v.0.backward else { continue };
            let Some(g) = grads.remove(&v.id()) else {
                continue;
            };
            let parent_grads = bw(&g);
            debug_assert_eq!(parent_grads.len(), v.0.parents.len());
            for (p, pg) in v.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.shape(), p.shape(), "gradient shape mismatch");
                match grads.get_mut(&p.id()) {
                    Some(acc) => *acc += &pg,
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Grads { map: grads }
    }
}

/// Gradients of leaf vars and parameters produced by [`Var::backward`].
#[derive(Debug, Default)]
pub struct Grads<T: Float> {
    map: HashMap<u64, ArrayD<T>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&ArrayD<T>> {
        self.map.get(&v.id())
    }

    pub fn param(&self, p: &Param<T>) -> Option<&ArrayD<T>> {
        self.map.get(&p.id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// A named tensor owned by a network.
#[derive(Debug)]
pub struct Param<T: Float> {
    id: u64,
    name: String,
    value: ArrayD<T>,
    trainable: bool,
}

impl<T: Float> Clone for Param<T> {
    /// Clones get a fresh id so copies never alias in one graph.
    fn clone(&self) -> Self {
        Param {
            id: next_id(),
            name: self.name.clone(),
            value: self.value.clone(),
            trainable: self.trainable,
        }
    }
}

impl<T: Float> Param<T> {
    pub fn new(name: impl Into<String>, value: ArrayD<T>) -> Self {
        Param {
            id: next_id(),
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: ArrayD<T>) -> Self {
        Param {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &ArrayD<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut ArrayD<T> {
        &mut self.value
    }

    pub fn set_value(&mut self, value: ArrayD<T>) {
        assert_eq!(value.shape(), self.value.shape(), "param {} shape", self.name);
        self.value = value;
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Leaf var for this forward pass.
    pub fn var(&self) -> Var<T> {
        let rg = self.trainable && is_grad_enabled() && !params_frozen();
        Var::new_leaf(self.value.clone(), rg, self.id)
    }
}

/// Anything that owns parameters.
pub trait Module<T: Float> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn shared_param_accumulates_gradient() {
        let p = Param::new("w", arr1(&[2.0f64]).into_dyn());
        let x = Var::constant(arr1(&[3.0f64]).into_dyn());
        // y = w*x + w*x
        let y = p.var().mul(&x).add(&p.var().mul(&x)).sum_all();
        let g = y.backward();
        assert_eq!(g.param(&p).unwrap()[[0]], 6.0);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Var::input(arr1(&[1.0f64, 2.0]).into_dyn());
        let y = no_grad(|| x.mul(&x).sum_all());
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn frozen_params_pass_gradient_to_inputs_only() {
        let p = Param::new("w", arr1(&[2.0f64]).into_dyn());
        let x = Var::input(arr1(&[3.0f64]).into_dyn());
        let y = frozen_params(|| p.var().mul(&x).sum_all());
        let g = y.backward();
        assert!(g.param(&p).is_none());
        assert_eq!(g.get(&x).unwrap()[[0]], 2.0);
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        let x = Var::input(arr1(&[1.5f64]).into_dyn());
        let a = x.mul_scalar(2.0);
        let b = x.sqr();
        let y = a.mul(&b).sum_all(); // 2x^3
        let g = y.backward();
        assert!((g.get(&x).unwrap()[[0]] - 6.0 * 1.5 * 1.5).abs() < 1e-12);
    }
}
