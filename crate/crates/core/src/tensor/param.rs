use super::{Gradients, Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry<F> {
    name: String,
    value: Tensor<F>,
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<F>) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Concatenation of every tensor in registration order.
    pub fn flatten(&self) -> Vec<F> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    pub fn load_flat(&mut self, flat: &[F]) -> Result<(), TensorError> {
        if flat.len() != self.num_scalars() {
            return Err(TensorError::ShapeMismatch {
                op: "load_flat",
                detail: format!("{} values for {} parameters", flat.len(), self.num_scalars()),
            });
        }
        let mut pos = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.shape().to_vec()))
            .collect()
    }
}

/// Dense gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            grads: store
                .entries
                .iter()
                .map(|e| vec![F::zero(); e.value.len()])
                .collect(),
        }
    }

    pub fn from_vecs(grads: Vec<Vec<F>>) -> Self {
        Self { grads }
    }

    pub fn add(&mut self, g: &Gradients<F>) {
        for (id, values) in g.iter() {
            for (acc, v) in self.grads[id.0].iter_mut().zip(values) {
                *acc = *acc + *v;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = *v * factor);
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[F]> {
        self.grads.iter().map(Vec::as_slice)
    }
}
