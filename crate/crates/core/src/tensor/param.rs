use std::collections::{BTreeMap, HashMap};

use super::{Array, TensorError};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable array together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Array,
    pub gradient: Array,
    /// Frozen parameters still receive gradients but are skipped by optimizers.
    pub trainable: bool,
}

/// Ordered collection of parameters. Order is insertion order and is what
/// checkpoints and optimizers iterate over.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let gradient = Array::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            gradient,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds the contributions of one backward pass into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.dense {
            self.params[id.0].gradient.add_assign(g);
        }
        for (id, rows) in &grads.rows {
            let p = &mut self.params[id.0];
            let d = p.gradient.cols();
            let data = p.gradient.data_mut();
            for (&r, g) in rows {
                for (a, b) in data[r * d..(r + 1) * d].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient.fill(0.0);
        }
    }

    pub fn snapshot(&self) -> Vec<Array> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Array]) -> Result<(), TensorError> {
        if values.len() != self.params.len() {
            return Err(TensorError::Shape(format!(
                "snapshot has {} parameters, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(TensorError::Shape(format!(
                    "parameter {} has shape {:?}, snapshot {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Gradient contributions produced by one backward pass.
///
/// Embedding tables get sparse per-row contributions so that a large
/// vocabulary does not force a dense gradient allocation per batch.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) dense: HashMap<ParamId, Array>,
    pub(crate) rows: HashMap<ParamId, BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn add_dense(&mut self, id: ParamId, g: Array) {
        match self.dense.get_mut(&id) {
            Some(existing) => existing.add_assign(&g),
            None => {
                self.dense.insert(id, g);
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let entry = self
            .rows
            .entry(id)
            .or_default()
            .entry(row)
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in entry.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Dense view of the gradient for `id`, materialising sparse rows.
    pub fn to_dense(&self, id: ParamId, shape: &[usize]) -> Array {
        let mut out = self
            .dense
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Array::zeros(shape));
        if let Some(rows) = self.rows.get(&id) {
            let d = out.cols();
            let data = out.data_mut();
            for (&r, g) in rows {
                for (a, b) in data[r * d..(r + 1) * d].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }
}
