use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Named gradients, keyed like the [`ParamStore`] they came from.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

/// Named parameters with a gradient accumulator of identical shape per entry.
///
/// Iteration is lexicographic by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.grads.insert(name.clone(), Tensor::zeros(value.shape()));
        self.params.insert(name, value);
        Ok(())
    }

    /// Replaces an existing parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        slot.ensure_same_shape(&value)?;
        *slot = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Each parameter, mutable, beside its accumulated gradient.
    pub(crate) fn with_grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>, &Tensor<T>)> {
        self.params
            .iter_mut()
            .zip(self.grads.values())
            .map(|((k, p), g)| (k.as_str(), p, g))
    }

    pub fn grads(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `scale * grads[name]` into each accumulator.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) -> Result<()> {
        for (name, g) in grads {
            let acc = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown {name}")))?;
            acc.ensure_same_shape(g)?;
            for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + scale * v;
            }
        }
        Ok(())
    }

    /// Global L2 norm of the accumulated gradients.
    pub fn grad_norm(&self) -> T {
        self.grads.values().map(Tensor::norm_sq).sum::<T>().sqrt()
    }

    /// Converts every tensor to another scalar type. Gradients are reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, v) in &self.params {
            out.insert(k.clone(), v.cast()).expect("names are unique");
        }
        out
    }
}

/// Normal(0, std²) truncated to ±2 std by resampling.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let g: f64 = rng.sample(StandardNormal);
        if g.abs() <= 2.0 {
            break T::of(g * std);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_sorted() {
        let mut s = ParamStore::<f64>::new();
        s.insert("b", Tensor::zeros(&[2])).unwrap();
        s.insert("a", Tensor::zeros(&[3])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(s.grad("a").unwrap().shape(), &[3]);
        assert_eq!(s.numel(), 5);
    }

    #[test]
    fn accumulate_checks_shapes() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::zeros(&[2])).unwrap();
        let mut g = Gradients::new();
        g.insert("w".to_string(), Tensor::vector(vec![1.0, 2.0]));
        s.accumulate(&g, 0.5).unwrap();
        s.accumulate(&g, 0.5).unwrap();
        assert_eq!(s.grad("w").unwrap().data(), &[1.0, 2.0]);
        g.insert("w".to_string(), Tensor::vector(vec![1.0]));
        assert!(s.accumulate(&g, 1.0).is_err());
        s.zero_grad();
        assert_eq!(s.grad_norm(), 0.0);
    }

    #[test]
    fn trunc_normal_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = trunc_normal(&[1000], INIT_STD, &mut rng);
        assert!(t.max_abs() <= 2.0 * INIT_STD);
        let std = (t.norm_sq() / 1000.0).sqrt();
        assert!(std > 0.01 && std < 0.02);
    }
}
