use std::ops::Range;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::graph::{Gradients, Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
    /// When set, only these rows of a 2-D parameter are updated.
    pub train_rows: Option<Range<usize>>,
}

/// An ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Graph leaves for every parameter of one store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            group: group.into(),
            value,
            grad,
            requires_grad: true,
            train_rows: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_uniform<R: Rng>(&mut self, name: &str, group: &str, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        self.add(name, group, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.group) {
                out.push(p.group.clone());
            }
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Creates one leaf per parameter; frozen parameters become constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if p.requires_grad {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Binds every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        let vars = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Bound { vars }
    }

    /// Adds the gradients found in `grads` to each parameter's `grad`.
    pub fn accumulate(&mut self, bound: &Bound, grads: &mut Gradients) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.requires_grad {
                continue;
            }
            if let Some(g) = grads.take(v) {
                for (x, gv) in p.grad.data_mut().iter_mut().zip(g) {
                    *x += gv;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Sets `requires_grad` for every parameter from the group membership.
    pub fn freeze_groups(&mut self, frozen: &[String]) {
        for p in &mut self.params {
            p.requires_grad = !frozen.contains(&p.group);
        }
    }

    pub fn set_requires_grad(&mut self, value: bool) {
        for p in &mut self.params {
            p.requires_grad = value;
        }
    }

    /// SHA-256 over names and raw value bits of the parameters in `group`
    /// (all parameters when `None`).
    pub fn checksum(&self, group: Option<&str>) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| group.is_none_or(|g| p.group == g)) {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copies values from `other`, matching by name. Shapes must agree.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape("load_values", format!("{:?}", p.value.shape()), format!("{:?}", src.value.shape())));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}
