//! Named parameter storage shared by the models and the optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, VarId};

/// A tensor with a gradient slot of the same shape and a trainable flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Parameter {
            value,
            grad,
            trainable,
        }
    }
}

/// Parameters addressed by path strings such as `gen.encoder.block0.depthwise`.
/// Registration order is fixed and doubles as the optimizer state layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a parameter and returns its slot index. Panics on duplicate
    /// names; paths are assembled by the models and must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter '{name}'"
        );
        let slot = self.params.len();
        self.index.insert(name.clone(), slot);
        self.names.push(name);
        self.params.push(Parameter::new(value, trainable));
        slot
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.params.iter())
    }

    /// Total number of trainable scalar values.
    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Puts every parameter value on the tape as a leaf, in slot order.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        TapeBinding {
            ids: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    /// Adds the tape gradients of a binding into the parameter grad slots.
    pub fn accumulate_grads(&mut self, tape: &Tape, binding: &TapeBinding) {
        for (param, &id) in self.params.iter_mut().zip(&binding.ids) {
            if let Some(g) = tape.grad(id) {
                for (dst, &src) in param.grad.data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// Global L2 norm of the trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all trainable gradients down to the given global norm when they
    /// exceed it. Returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                for g in p.grad.data_mut() {
                    *g *= scale;
                }
            }
        }
        norm
    }
}

/// Tape leaf ids for every parameter of a store, in slot order.
#[derive(Clone, Debug)]
pub struct TapeBinding {
    ids: Vec<VarId>,
}

impl TapeBinding {
    pub fn id(&self, slot: usize) -> VarId {
        self.ids[slot]
    }

    pub fn ids(&self) -> &[VarId] {
        &self.ids
    }
}

/// Kaiming-uniform initialization with fan-in scaling and the Leaky ReLU
/// gain, drawn from a seeded generator so model construction is
/// reproducible.
pub fn kaiming_uniform(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    leaky_slope: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let shape = shape.into();
    let gain = (2.0 / (1.0 + leaky_slope * leaky_slope)).sqrt();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trainable_count_sums_only_trainable() {
        let mut store = ParamStore::new();
        store.register("a", Tensor::zeros([2, 3]), true);
        store.register("b", Tensor::zeros([4]), false);
        store.register("c", Tensor::zeros([5]), true);
        assert_eq!(store.count_trainable(), 11);
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn empty_store_counts_zero() {
        assert_eq!(ParamStore::new().count_trainable(), 0);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros([1]), true);
        store.register("w", Tensor::zeros([1]), true);
    }

    #[test]
    fn bind_and_accumulate_round_trip() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::new([2], vec![1.5, -0.5]), true);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let y = tape.mean(binding.id(0));
        tape.backward(y);
        store.accumulate_grads(&tape, &binding);
        assert_eq!(store.get(0).grad.data(), &[0.5, 0.5]);
        // accumulation adds
        store.accumulate_grads(&tape, &binding);
        assert_eq!(store.get(0).grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros([2]), true);
        store
            .get_mut(0)
            .grad
            .data_mut()
            .copy_from_slice(&[3.0, 4.0]);
        let pre = store.clip_grad_norm(1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = kaiming_uniform([64, 9], 9, 0.2, &mut rng);
        let bound = (2.0f64 / 1.04).sqrt() * (3.0f64 / 9.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound));
        // seeded: same seed, same tensor
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(t, kaiming_uniform([64, 9], 9, 0.2, &mut rng2));
    }
}
