use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Handle to one parameter array in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter arrays in declaration order.
///
/// Every array is 2-D; biases and single vectors are stored as `1 x n`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn normal<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        self.add(name, Array2::from_shape_fn((rows, cols), |_| dist.sample(rng)))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn shapes(&self) -> Vec<(String, [usize; 2])> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), [v.nrows(), v.ncols()]))
            .collect()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::Format("parameter layout does not match".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    pub(crate) fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    /// Replaces every array; shapes must match the current ones.
    pub(crate) fn set_values(&mut self, values: Vec<Array2<f64>>) -> Result<()> {
        if values.len() != self.values.len() || values.iter().zip(&self.values).any(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::Format("parameter layout does not match".into()));
        }
        self.values = values;
        Ok(())
    }
}

/// Gradient buffers matching a [`ParamStore`] one-to-one.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Array2<f64>>);

impl Grads {
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.0[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.mapv_inplace(|x| x * s);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}
