use std::collections::BTreeMap;

use crate::error::{CoupletError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor2D;

/// One named trainable tensor with its gradient and Adam moment buffers.
/// All four tensors share a shape; moments start at zero.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub m: Tensor2D,
    pub v: Tensor2D,
}

impl ParamEntry {
    fn new(value: Tensor2D) -> Self {
        let (r, c) = (value.rows(), value.cols());
        ParamEntry { value, grad: Tensor2D::zeros(r, c), m: Tensor2D::zeros(r, c), v: Tensor2D::zeros(r, c) }
    }
}

/// Named collection of trainable tensors. Iteration order is the
/// lexicographic name order, which keeps checkpoints, gradient norms and
/// optimizer updates deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
    step_count: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Insert a tensor initialized uniformly in `[-0.5, 0.5]`.
    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut RngState) {
        let mut t = Tensor2D::zeros(rows, cols);
        for v in t.values_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
        self.insert(name, t);
    }

    pub fn insert(&mut self, name: &str, value: Tensor2D) {
        self.entries.insert(name.to_string(), ParamEntry::new(value));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2D> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| CoupletError::Argument(format!("unknown parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> &Tensor2D {
        &self.entries[name].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor2D {
        &mut self.entries.get_mut(name).expect("unknown parameter").value
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor2D {
        &mut self.entries.get_mut(name).expect("unknown parameter").grad
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step_count += 1;
        self.step_count
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// True when parameter values of `self` and `other` are bit-identical.
    pub fn values_equal(&self, other: &ParamSet) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.iter().zip(other.iter()).all(|((na, a), (nb, b))| {
            na == nb && a.value.same_shape(&b.value) && a.value.values() == b.value.values()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_in_range() {
        let mut rng = RngState::new(1);
        let mut p = ParamSet::new();
        p.add_uniform("w", 10, 10, &mut rng);
        assert!(p.value("w").values().iter().all(|&v| (-0.5..0.5).contains(&v)));
    }

    #[test]
    fn moments_zero_before_first_step() {
        let mut rng = RngState::new(1);
        let mut p = ParamSet::new();
        p.add_uniform("w", 3, 3, &mut rng);
        let e = p.iter().next().unwrap().1;
        assert!(e.m.values().iter().all(|&v| v == 0.0));
        assert!(e.v.values().iter().all(|&v| v == 0.0));
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn iteration_order_is_name_order() {
        let mut rng = RngState::new(1);
        let mut p = ParamSet::new();
        p.add_uniform("z", 1, 1, &mut rng);
        p.add_uniform("a", 1, 1, &mut rng);
        p.add_uniform("m", 1, 1, &mut rng);
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["a", "m", "z"]);
    }
}
