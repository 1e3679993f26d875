//! Named model parameters.
//!
//! A [`ParamSet`] owns every tensor of one model. Parameters are referenced
//! by stable index; names are unique within a set and survive checkpoint
//! round-trips bit-exactly at the serialized precision. Frozen parameters
//! (`trainable == false`) are never touched by any optimizer step and their
//! gradient buffers stay exactly zero.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> usize {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let idx = self.params.len();
        let grad = Tensor::zeros(value.shape().to_vec());
        self.by_name.insert(name.clone(), idx);
        self.params.push(Parameter { name, value, grad, trainable });
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter '{name}'")))
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter> {
        Ok(self.get(self.index_of(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Mark every parameter as frozen.
    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.params.iter().all(|p| !p.trainable)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_indexed() {
        let mut set = ParamSet::new();
        let a = set.add("w", Tensor::scalar(1.0), true);
        let b = set.add("b", Tensor::scalar(2.0), false);
        assert_eq!(set.index_of("w").unwrap(), a);
        assert_eq!(set.index_of("b").unwrap(), b);
        assert!(set.index_of("missing").is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::scalar(1.0), true);
        set.add("w", Tensor::scalar(2.0), true);
    }
}
