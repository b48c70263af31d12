//! Flat parameter storage. Every tensor of the model lives in one `Vec<f32>`
//! so optimizers, gradients and checkpoints deal with a single buffer.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer groups; each gets its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    /// Classifier and quality head.
    Heads,
    /// Per-scene affine table.
    Rescale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: ParamGroup,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Const(f32),
    Normal(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    values: Vec<f32>,
}

impl ParamStore {
    pub(crate) fn empty() -> Self {
        Self {
            specs: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn push(
        &mut self,
        name: &str,
        shape: &[usize],
        group: ParamGroup,
        init: Init,
        rng: &mut impl Rng,
    ) -> Range<usize> {
        let spec = ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.values.len(),
            group,
        };
        let n = spec.numel();
        match init {
            Init::Zeros => self.values.resize(self.values.len() + n, 0.0),
            Init::Const(c) => self.values.resize(self.values.len() + n, c),
            Init::Normal(std) => {
                let dist = Normal::new(0.0f32, std).expect("positive std");
                self.values.extend((0..n).map(|_| dist.sample(rng)));
            }
        }
        let range = spec.range();
        self.specs.push(spec);
        range
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let r = self.spec(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Group of every scalar, in buffer order.
    pub fn group_of_each(&self) -> Vec<ParamGroup> {
        let mut out = Vec::with_capacity(self.values.len());
        for s in &self.specs {
            out.extend(std::iter::repeat_n(s.group, s.numel()));
        }
        out
    }

    /// Replaces the values after checking `specs` matches this layout.
    pub(crate) fn load(&mut self, specs: &[ParamSpec], values: Vec<f32>) -> Result<()> {
        if specs != self.specs.as_slice() {
            let ours: Vec<_> = self.specs.iter().map(|s| (&s.name, &s.shape)).collect();
            let theirs: Vec<_> = specs.iter().map(|s| (&s.name, &s.shape)).collect();
            return Err(Error::Checkpoint(format!(
                "parameter layout mismatch: model {ours:?}, file {theirs:?}"
            )));
        }
        if values.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
        }
        self.values = values;
        Ok(())
    }
}
