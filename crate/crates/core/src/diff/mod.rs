//! Tape-based reverse-mode differentiation over 1-D real signals.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Trainable
//! tensors live in a [`ParamStore`] and enter a tape through [`Tape::param`];
//! [`Tape::backward`] then returns one gradient vector per stored parameter.
//!
//! Only the operators the template-matching network needs are provided.

mod checkpoint;
mod ops;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use ops::{hard_argmax_freq, ConvShape, Temperature};

use std::cell::{RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, values: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(values);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Vec<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(Vec::as_slice))
    }

    /// Zero-filled tensors with the same shapes.
    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.values.iter().map(|v| vec![T::zero(); v.len()]).collect()
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        shape: ConvShape,
        in_len: usize,
        out_len: usize,
    },
    LeakyRelu { x: Var, slope: T },
    MaxPool { x: Var, routes: Vec<usize> },
    PowerSpectrum { x: Var, nfft: usize, spectrum: Vec<Complex<T>> },
    SoftArgmax {
        power: Var,
        first_bin: usize,
        weights: Vec<T>,
        freqs: Vec<T>,
        tau: T,
        /// Included-bin index of the peak when the temperature scales with it.
        relative_peak: Option<usize>,
    },
    Mean { x: Var },
    Sum { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Square { x: Var },
    WeightedCenter { x: Var, weights: Vec<T> },
    SinMean { f: Var, times: Vec<T> },
}

struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
    param: Option<ParamId>,
}

/// Computation record for one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    planner: RefCell<FftPlanner<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), planner: RefCell::new(FftPlanner::new()) }
    }

    /// Drops recorded nodes but keeps FFT plans.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub(crate) fn push(&mut self, value: Vec<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn planner(&self) -> RefMut<'_, FftPlanner<T>> {
        self.planner.borrow_mut()
    }

    /// Constant input.
    pub fn leaf(&mut self, value: Vec<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Brings a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.get(id).to_vec(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Reverse accumulation from a scalar. Returns one gradient per stored
    /// parameter; parameters absent from the tape get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Vec<Vec<T>>> {
        let grads = self.backward_nodes(loss)?;
        let mut out = store.zeros_like();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                let slot = &mut out[id.0];
                if slot.len() != g.len() {
                    return Err(Error::Shape(format!(
                        "parameter `{}` has {} values on tape, {} in store",
                        store.name(id),
                        g.len(),
                        slot.len()
                    )));
                }
                for (s, x) in slot.iter_mut().zip(g) {
                    *s = *s + x;
                }
            }
        }
        Ok(out)
    }

    /// Gradient of `loss` with respect to one recorded node.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Vec<T>> {
        let mut grads = self.backward_nodes(loss)?;
        Ok(grads[wrt.0]
            .take()
            .unwrap_or_else(|| vec![T::zero(); self.nodes[wrt.0].value.len()]))
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            ops::backprop(self, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    pub(crate) fn node_value(&self, idx: usize) -> &[T] {
        &self.nodes[idx].value
    }

    pub(crate) fn node_op(&self, idx: usize) -> &Op<T> {
        &self.nodes[idx].op
    }
}

/// Adds `g` into the gradient slot of `v`, materializing it on first use.
pub(crate) fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}
