use std::collections::HashMap;

use super::rng::RngStream;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Names are stable across runs and double as checkpoint keys.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    names: Vec<String>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.params.push(Param::new(value));
        id
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

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|id| self.names[id.0].starts_with(prefix)).collect()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// FNV-1a over the raw bits of the given parameters, in id order.
    pub fn checksum(&self, ids: &[ParamId]) -> u64 {
        let mut h = crate::dataio::Fnv64::new();
        for id in ids {
            h.write(self.names[id.0].as_bytes());
            for v in self.params[id.0].value.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    /// Overwrite every parameter with small random values. Tests use this to
    /// leave zero-initialized layers with non-trivial gradients.
    pub fn randomize(&mut self, rng: &mut RngStream, scale: f64) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = scale * rng.normal();
            }
        }
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.params.iter().map(|p| &p.value))
    }
}
