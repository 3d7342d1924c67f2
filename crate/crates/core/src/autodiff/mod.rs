//! Minimal dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation performed through [`Var`] handles.
//! Parameters live in a [`ParamStore`]; binding one onto a tape copies its
//! current value into a leaf node, and [`Tape::backward`] accumulates
//! gradients back into the store.

mod gradcheck;
mod ops;

use std::cell::RefCell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{mse_loss, stack_rows};

/// Dense row-major `f32` tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| dist.sample(rng)).collect()
        } else {
            vec![0.0; n]
        };
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f32>,
    /// Excluded from L2 weight decay.
    pub no_decay: bool,
    /// Multiplier on the optimizer learning rate.
    pub lr_scale: f32,
}

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn next_store_id() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

/// Parameters of one model. Each store (and each clone) has a distinct
/// identity so that one tape can feed gradients to several stores.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    params: Vec<Parameter>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self {
            uid: next_store_id(),
            params: Vec::new(),
        }
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_store_id(),
            params: self.params.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let grad = vec![0.0; value.len()];
        self.params.push(Parameter {
            name,
            value,
            grad,
            no_decay: false,
            lr_scale: 1.0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_no_decay(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = self.add(name, value);
        self.params[id.0].no_decay = true;
        id
    }

    /// A no-decay parameter trained at `lr_scale` times the base rate.
    pub fn add_scaled(&mut self, name: impl Into<String>, value: Tensor, lr_scale: f32) -> ParamId {
        let id = self.add_no_decay(name, value);
        self.params[id.0].lr_scale = lr_scale;
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

struct Node {
    value: Tensor,
    op: ops::Op,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Records operations for one forward pass. Single-threaded by construction.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: true,
        }
    }

    /// A tape that computes values only; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            record: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Leaf that does not require a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, ops::Op::Leaf, false, None)
    }

    /// Leaf that requires a gradient but is not tied to a parameter.
    pub fn input(&self, t: Tensor) -> Var<'_> {
        let rg = self.record;
        self.push(t, ops::Op::Leaf, rg, None)
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let rg = self.record;
        self.push(store.get(id).value.clone(), ops::Op::Leaf, rg, Some((store.uid, id)))
    }

    fn push(&self, value: Tensor, op: ops::Op, requires_grad: bool, param: Option<(u64, ParamId)>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = requires_grad && self.record;
        let op = if requires_grad { op } else { ops::Op::Leaf };
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Backpropagates a scalar loss, accumulating into `store`.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        self.backward_multi(loss, &mut [store])
    }

    /// Backpropagates a scalar loss into every store whose parameters the
    /// tape used.
    pub fn backward_multi(&self, loss: Var<'_>, stores: &mut [&mut ParamStore]) -> Result<()> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::dim("backward (loss must be scalar)", &shape, &[1]));
        }
        let grads = self.backward_seeded(loss, &[1.0])?;
        let nodes = self.nodes.borrow();
        for (i, node) in nodes.iter().enumerate() {
            let (Some((uid, pid)), Some(g)) = (node.param, &grads[i]) else {
                continue;
            };
            if let Some(store) = stores.iter_mut().find(|s| s.uid == uid) {
                let p = store.get_mut(pid);
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn backward_seeded(&self, output: Var<'_>, seed: &[f32]) -> Result<Vec<Option<Vec<f32>>>> {
        let nodes = self.nodes.borrow();
        let n_out = nodes[output.id].value.len();
        if seed.len() != n_out {
            return Err(Error::dim("backward seed", &[n_out], &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=output.id).map(|_| None).collect();
        if !nodes[output.id].requires_grad {
            return Ok(grads);
        }
        grads[output.id] = Some(seed.to_vec());
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            ops::backward_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> fmt::Debug for Var<'t> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.tape.nodes.borrow()[self.id].value.data.clone()
    }

    pub fn item(&self) -> f32 {
        self.tape.nodes.borrow()[self.id].value.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub(crate) fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }
}

#[cfg(test)]
mod tests;
