use rand::Rng;

use crate::error::{config, usage, Result};

/// A dense parameter array with a same-shaped gradient accumulator.
///
/// Storage is row-major; a `[rows, cols]` weight maps `cols` inputs to `rows` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return config(format!("tensor shape {shape:?} must have positive dimensions"));
        }
        let len = shape.iter().product();
        Ok(ParamTensor {
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: vec![0.0; len],
        })
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        if values.len() != t.values.len() {
            return config(format!(
                "tensor shape {shape:?} needs {} values, got {}",
                t.values.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite("tensor construction"));
        }
        t.values = values;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => config(format!("expected a matrix, got shape {:?}", self.shape)),
        }
    }
}

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An ordered collection of named parameter tensors.
///
/// Networks hold [`ParamId`]s only, so the same layout can be evaluated against an
/// evaluation store and its target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<ParamTensor>,
    generation: u64,
    grads_populated: bool,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            generation: 0,
            grads_populated: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: ParamTensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return config(format!("duplicate parameter name {name}"));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        self.generation += 1;
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Weight matrix `[rows, cols]` drawn uniformly from `±1/sqrt(cols)`.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut t = ParamTensor::zeros(&[rows, cols])?;
        let bound = 1.0 / (cols as f64).sqrt();
        for v in t.values_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        self.add(name, t)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) -> Result<ParamId> {
        self.add(name, ParamTensor::zeros(&[len])?)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    /// Bumped on every mutation of parameter values; used to detect stale tapes.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    pub(crate) fn mark_grads_populated(&mut self) {
        self.grads_populated = true;
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_populated = false;
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for t in &mut self.tensors {
                t.grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if values.len() != t.values.len() {
            return usage(format!(
                "parameter {} has {} entries, got {}",
                self.names[id.0],
                t.values.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite("set_values"));
        }
        t.values.copy_from_slice(values);
        self.generation += 1;
        Ok(())
    }

    /// Read or write one scalar by flat position across all tensors.
    pub fn scalar(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].values[i]
    }

    pub fn scalar_grad(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].grad[i]
    }

    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t].values[i] = value;
        self.generation += 1;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (ti, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return (ti, flat);
            }
            flat -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Overwrite every value with the corresponding value from `other`.
    /// Layouts must match exactly; gradients are left untouched.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.values.copy_from_slice(&src.values);
        }
        self.generation += 1;
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return config("parameter stores have different layouts");
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.shape != b.shape {
                return config(format!(
                    "parameter {} shape {:?} differs from {:?}",
                    self.names[i], a.shape, b.shape
                ));
            }
        }
        Ok(())
    }

    /// True if every value is bit-identical to `other`'s.
    pub fn values_bit_equal(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape == b.shape
                    && a.values
                        .iter()
                        .zip(&b.values)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_product_matches_storage() {
        let t = ParamTensor::zeros(&[3, 4]).unwrap();
        assert_eq!(t.len(), 12);
        assert_eq!(t.grad().len(), 12);
        assert!(ParamTensor::zeros(&[3, 0]).is_err());
        assert!(ParamTensor::from_values(&[2], vec![1.0]).is_err());
        assert!(ParamTensor::from_values(&[1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn weight_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.add_weight("w", 8, 25, &mut rng).unwrap();
        let b = store.add_bias("b", 8).unwrap();
        assert!(store.get(w).values().iter().all(|v| v.abs() <= 0.2));
        assert!(store.get(b).values().iter().all(|&v| v == 0.0));
        assert!(store.add_bias("b", 2).is_err());
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut store = ParamStore::new();
        let id = store.add_bias("b", 2).unwrap();
        store.get_mut(id).grad_mut().copy_from_slice(&[30.0, 40.0]);
        let before = store.clip_grad_norm(10.0);
        assert_eq!(before, 50.0);
        assert!((store.grad_norm() - 10.0).abs() < 1e-12);
        assert_eq!(store.get(id).grad(), &[6.0, 8.0]);
    }

    #[test]
    fn flat_scalar_access_spans_tensors() {
        let mut store = ParamStore::new();
        store.add_bias("a", 2).unwrap();
        store.add_bias("b", 3).unwrap();
        store.set_scalar(3, 7.0);
        assert_eq!(store.scalar(3), 7.0);
        assert_eq!(store.get(ParamId(1)).values(), &[0.0, 7.0, 0.0]);
    }
}
