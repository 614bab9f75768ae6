use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor4<T>,
    /// Running statistics are stored alongside weights but never stepped by
    /// the optimizer.
    pub trainable: bool,
}

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        ParameterSet {
            entries: IndexMap::new(),
        }
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor4<T>,
        trainable: bool,
    ) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    /// Like [`get`](Self::get) but reports the missing name.
    pub fn expect(&self, name: &str) -> Result<&Tensor4<T>> {
        self.get(name)
            .ok_or_else(|| Error::Topology(format!("parameter `{name}` not present")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor4<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            trainable: p.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Every value in iteration order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Overwrites every value in iteration order; the count must match.
    pub fn assign_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.scalar_count() {
            return Err(Error::Topology(format!(
                "{} stored values for {} parameters",
                values.len(),
                self.scalar_count()
            )));
        }
        let mut offset = 0;
        for p in self.entries.values_mut() {
            let n = p.value.len();
            p.value
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Structural equality: same names, shapes and trainability.
    pub fn same_layout<U: Scalar>(&self, other: &ParameterSet<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((a, pa), (b, pb))| {
                    a == b && pa.value.shape() == pb.value.shape() && pa.trainable == pb.trainable
                })
    }

    /// Bitwise equality of every value.
    pub fn bit_equal(&self, other: &ParameterSet<T>) -> bool {
        self.same_layout(other)
            && self
                .flatten()
                .iter()
                .zip(other.flatten())
                .all(|(a, b)| a.f64().to_bits() == b.f64().to_bits())
    }
}

/// Zero-mean normal weights with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(
    shape: Shape,
    fan_in: usize,
    rng: &mut R,
) -> Tensor4<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..shape.len())
        .map(|_| T::of(normal.sample(rng)))
        .collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    by_name: IndexMap<String, Tensor4<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            by_name: IndexMap::new(),
        }
    }

    /// All-zero gradients for every parameter in `params`.
    pub fn zeros_like(params: &ParameterSet<T>) -> Self {
        Gradients {
            by_name: params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor4::zeros(p.value.shape())))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor4<T>) {
        self.by_name.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut p = ParameterSet::<f32>::new();
        p.insert("b", Tensor4::zeros(Shape::new(1, 2, 1, 1)), true)
            .unwrap();
        p.insert("a", Tensor4::zeros(Shape::new(1, 3, 1, 1)), false)
            .unwrap();
        assert!(p
            .insert("b", Tensor4::zeros(Shape::scalar()), true)
            .is_err());
        assert_eq!(p.names().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(p.scalar_count(), 5);
        assert_eq!(p.trainable_scalar_count(), 2);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", he_normal(Shape::new(4, 3, 3, 3), 27, &mut rng), true)
            .unwrap();
        p.insert("b", Tensor4::vector(&[1.0, 2.0, 3.0, 4.0]), true)
            .unwrap();
        let flat = p.flatten();
        let mut q = p.clone();
        q.assign_flat(&vec![0.0; flat.len()]).unwrap();
        q.assign_flat(&flat).unwrap();
        assert!(p.bit_equal(&q));
        assert!(q.assign_flat(&flat[1..]).is_err());
    }

    #[test]
    fn he_normal_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor4<f64> = he_normal(Shape::new(64, 64, 3, 3), 576, &mut rng);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        assert!((var - 2.0 / 576.0).abs() < 2e-4);
    }
}
