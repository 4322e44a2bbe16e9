use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Dense row-major array of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub param_id: Option<String>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) || numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} does not hold {} values",
                shape,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
            param_id: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
            grad: None,
            requires_grad: false,
            param_id: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
            requires_grad: false,
            param_id: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len().max(1);
        let data = if data.is_empty() { vec![0.0] } else { data };
        Tensor {
            shape: vec![n],
            data,
            grad: None,
            requires_grad: false,
            param_id: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn row_len(&self) -> usize {
        numel(&self.shape[1..])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Index of a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)); fans are the first and last dims.
    XavierUniform,
    Zeros,
    Ones,
    Uniform(f64),
}

/// Ordered set of trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamRegistry {
    params: IndexMap<String, Tensor>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl ParamRegistry {
    pub fn new(rng_seed: u64) -> Self {
        ParamRegistry {
            params: IndexMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter id {name}")));
        }
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("parameter {name} has empty shape {shape:?}")));
        }
        let n = numel(shape);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::XavierUniform => {
                let fan_in = shape[0];
                let fan_out = *shape.last().unwrap();
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect(),
        };
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Registers an explicit tensor as trainable state.
    pub fn insert(&mut self, name: &str, mut t: Tensor) -> Result<ParamId> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter id {name}")));
        }
        t.requires_grad = true;
        t.param_id = Some(name.to_string());
        t.grad = None;
        let (idx, _) = self.params.insert_full(name.to_string(), t);
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets every gradient slot to zeros.
    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            match &mut t.grad {
                Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
                None => t.grad = Some(vec![0.0; t.data.len()]),
            }
        }
    }

    /// Drops gradient slots entirely.
    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        let t = &mut self.params[id.0];
        let slot = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    /// Sum of squares of every parameter value.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Copies parameter values out, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.values().map(|t| t.data.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) -> Result<()> {
        if snap.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "snapshot has {} tensors, registry has {}",
                snap.len(),
                self.params.len()
            )));
        }
        for (t, s) in self.params.values_mut().zip(snap) {
            if t.data.len() != s.len() {
                return Err(Error::Shape(format!(
                    "snapshot tensor length {} vs {}",
                    s.len(),
                    t.data.len()
                )));
            }
            t.data.copy_from_slice(s);
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn registry_rejects_duplicates_and_keeps_order() {
        let mut r = ParamRegistry::new(1);
        let a = r.register("a", &[2, 2], Init::XavierUniform).unwrap();
        let b = r.register("b", &[3], Init::Zeros).unwrap();
        assert!(r.register("a", &[1], Init::Zeros).is_err());
        assert_eq!((a.0, b.0), (0, 1));
        let names: Vec<_> = r.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(r.get(a).param_id.as_deref(), Some("a"));
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(r.get(a).data.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_same_init() {
        let mut r1 = ParamRegistry::new(9);
        let mut r2 = ParamRegistry::new(9);
        r1.register("w", &[4, 5], Init::XavierUniform).unwrap();
        r2.register("w", &[4, 5], Init::XavierUniform).unwrap();
        assert_eq!(r1.snapshot(), r2.snapshot());
    }
}
