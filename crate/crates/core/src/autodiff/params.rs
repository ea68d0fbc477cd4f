//! Named parameter storage, tape binding and JSON checkpoints.
//!
//! Checkpoint layout (format `gedan-params`, version 1):
//!
//! ```json
//! {"format":"gedan-params","version":1,"meta":{...},
//!  "tensors":[{"name":"enc.embed","group":"encoder","shape":[8,32],"data":[...]}]}
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces parameters bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "gedan-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    /// Freeze/unfreeze unit, e.g. `"encoder"`.
    pub group: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Extracts per-parameter gradients from a reverse pass.
    pub fn collect(&self, grads: &mut Gradients) -> ParamGrads {
        ParamGrads(self.vars.iter().map(|&v| grads.take(v)).collect())
    }
}

/// Gradients for each parameter of a store; `None` means zero.
#[derive(Debug, Clone)]
pub struct ParamGrads(pub Vec<Option<Tensor>>);

impl ParamGrads {
    /// Element-wise sum, used to reduce per-sample gradients in a fixed order.
    pub fn merge(mut self, other: ParamGrads) -> Self {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            match (a.as_mut(), b) {
                (Some(x), Some(y)) => x.add_assign(&y),
                (None, Some(y)) => *a = Some(y),
                _ => {}
            }
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    group: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorRecord>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            group: group.into(),
            value,
            grad: None,
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.params.iter().map(|p| p.group.clone()).collect();
        g.dedup();
        g.sort();
        g.dedup();
        g
    }

    pub fn set_group_trainable(&mut self, group: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.requires_grad = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.requires_grad = trainable;
        }
    }

    pub fn group_trainable(&self, group: &str) -> bool {
        self.params
            .iter()
            .any(|p| p.group == group && p.requires_grad)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on the tape; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), p.requires_grad))
                .collect(),
        }
    }

    /// Places every parameter on the tape as a constant, for inference.
    pub fn bind_constants(&self, tape: &mut Tape) -> Binding {
        Binding {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
        }
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            let [r, c] = p.value.shape();
            p.grad = Some(Tensor::zeros(r, c));
        }
    }

    /// Adds `grads` into the buffers of trainable parameters.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            if !p.requires_grad {
                continue;
            }
            let [r, c] = p.value.shape();
            let buf = p.grad.get_or_insert_with(|| Tensor::zeros(r, c));
            if let Some(g) = g {
                buf.add_assign(g);
            }
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Largest absolute gradient entry within a group.
    pub fn group_grad_max_abs(&self, group: &str) -> f64 {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self, meta: BTreeMap<String, serde_json::Value>) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            meta,
            tensors: self
                .params
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    group: p.group.clone(),
                    shape: p.value.shape(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn save(&self, path: &Path, meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
        std::fs::write(path, self.to_json(meta)?)?;
        Ok(())
    }

    /// Restores a standalone store and its metadata from a checkpoint.
    pub fn from_json(text: &str) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut store = Self::new();
        for t in ck.tensors {
            let value = Tensor::new(t.shape[0], t.shape[1], t.data)
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
            store.add(t.name, t.group, value);
        }
        Ok((store, ck.meta))
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Copies values from `other`, matching by name and shape. Every
    /// parameter of `self` must be present.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .find(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}
