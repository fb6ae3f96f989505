//! Named parameter sets.
//!
//! Parameters live outside the tape as plain tensors keyed by name; each
//! training step registers them as leaves on a fresh tape. A `BTreeMap` keeps
//! iteration order stable, which the optimizer, the checkpoint format, and the
//! gradient checker all rely on.

use std::collections::BTreeMap;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Ordered name -> tensor map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Real> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Inserts a parameter. Panics on duplicate names: every parameter is
    /// created exactly once at init time.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        let prev = self.entries.insert(name.to_string(), value);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        let slot = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        assert_eq!(slot.shape(), value.shape(), "parameter {name:?} shape changed");
        *slot = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Registers every parameter as a tape leaf, returning the name -> var map
    /// used to look gradients back up after the backward sweep.
    pub fn register(&self, tape: &mut Tape<T>) -> TapeParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        TapeParams { vars }
    }
}

/// Tape handles for one registration of a [`ParamSet`].
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not registered"))
    }

    /// Gradient per parameter; parameters that did not influence the loss get
    /// zero gradients of the right shape.
    pub fn gradients<T: Real>(
        &self,
        params: &ParamSet<T>,
        grads: &Gradients<T>,
    ) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.get_or_zeros(v, params.get(name).shape());
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_name_sorted() {
        let mut p = ParamSet::<f64>::new();
        p.insert("zeta", Tensor::scalar(1.0));
        p.insert("alpha", Tensor::scalar(2.0));
        p.insert("mid", Tensor::scalar(3.0));
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, ["alpha", "mid", "zeta"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_insert_panics() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::scalar(1.0));
        p.insert("w", Tensor::scalar(2.0));
    }

    #[test]
    fn register_and_grad_lookup() {
        let mut p = ParamSet::<f64>::new();
        p.insert("a", Tensor::scalar(2.0));
        p.insert("b", Tensor::scalar(5.0));
        let mut tape = Tape::new();
        let tp = p.register(&mut tape);
        let y = tape.mul(tp.var("a"), tp.var("a"));
        let g = tape.backward(y);
        let by_name = tp.gradients(&p, &g);
        assert_eq!(by_name["a"].item(), 4.0);
        assert_eq!(by_name["b"].item(), 0.0); // uninvolved
    }

    #[test]
    fn cast_preserves_structure() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::new(&[2], vec![1.5f32, -0.25]).unwrap());
        let q: ParamSet<f64> = p.cast();
        assert_eq!(q.get("w").data(), &[1.5f64, -0.25]);
    }
}
