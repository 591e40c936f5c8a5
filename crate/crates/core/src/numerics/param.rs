use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::tape::{Gradients, Tape, Var};
use super::Tensor;
use crate::{Error, Result};

/// A persistent tensor that may receive gradients across tape rebuilds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
    /// Entries flagged `true` are constants: the optimizer never moves them
    /// and they are not counted as parameters.
    pub frozen: Option<Vec<bool>>,
}

impl DiffTensor {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
            frozen: None,
        }
    }

    pub fn constant(value: Tensor) -> Self {
        Self {
            requires_grad: false,
            ..Self::new(value)
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                left: self.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Number of entries the optimizer may move.
    pub fn trainable_len(&self) -> usize {
        if !self.requires_grad {
            return 0;
        }
        match &self.frozen {
            Some(f) => f.iter().filter(|x| !**x).count(),
            None => self.value.len(),
        }
    }
}

/// What a stored tensor means to the model; drives parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Adjacency,
    Weight,
    /// Non-learnable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub role: ParamRole,
    pub tensor: DiffTensor,
}

/// Ordered, named collection of every tensor a model owns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor) -> ParamId {
        let mut tensor = DiffTensor::new(value);
        tensor.requires_grad = role != ParamRole::Buffer;
        self.entries.push(ParamEntry {
            name: name.into(),
            role,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &DiffTensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DiffTensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Replaces the value of the named tensor, checking its shape.
    pub fn load(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        let slot = &mut self.entries[id.0].tensor;
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "load",
                left: slot.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    /// Records every tensor on `tape`, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.entries.iter().map(|e| tape.leaf(&e.tensor)).collect())
    }

    /// Adds the gradients of a finished backward pass into each tensor.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (entry, var) in self.entries.iter_mut().zip(&bound.0) {
            if !entry.tensor.requires_grad {
                continue;
            }
            if let Some(g) = grads.get(*var) {
                entry.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Learnable tensors, paired with their names, in store order.
    pub fn learnable_mut(&mut self) -> impl Iterator<Item = (&str, &mut DiffTensor)> {
        self.entries
            .iter_mut()
            .filter(|e| e.tensor.requires_grad)
            .map(|e| (e.name.as_str(), &mut e.tensor))
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Handles supplied by the caller, one per store entry in store order.
    pub fn new(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}
