use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Named trainable matrices with a parallel gradient table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    values: BTreeMap<String, Matrix>,
    grads: BTreeMap<String, Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.values.contains_key(&name) {
            return Err(Error::Data(format!("duplicate parameter `{name}`")));
        }
        self.grads
            .insert(name.clone(), Matrix::zeros(value.rows(), value.cols()));
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.grads.get(name)
    }

    pub fn set_grad(&mut self, name: &str, grad: Matrix) -> Result<()> {
        let shape = self
            .values
            .get(name)
            .map(Matrix::shape)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?;
        if grad.shape() != shape {
            return Err(Error::shape(
                "gradient",
                format!("`{name}` is {shape:?}, gradient {:?}", grad.shape()),
            ));
        }
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Moves every parameter of `other` in, failing on name clashes.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (k, v) in other.values {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, v) in &self.values {
            if k.starts_with(prefix) {
                out.insert(k.clone(), v.clone()).expect("unique keys");
            }
        }
        out
    }

    pub fn into_values(self) -> BTreeMap<String, Matrix> {
        self.values
    }
}

/// Glorot-uniform initialisation.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

/// Adam with constant step size.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_moments(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.values.iter_mut() {
            let g = &params.grads[name];
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Plain gradient descent with a fixed step.
pub fn sgd_step(params: &mut ParamSet, lr: f64) {
    for (name, value) in params.values.iter_mut() {
        let g = &params.grads[name];
        for (p, &gi) in value.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * gi;
        }
    }
}
