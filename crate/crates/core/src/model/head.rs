//! Projection, pooling and classifier stages shared by both model families.

use crate::metrics::Class;
use crate::mix_seed;
use crate::tensor::{Graph, Real, Tensor, Var};

use super::{ModelError, Mode, Pooling};

/// `tanh(x · Wᵀ + b)`, frame by frame.
pub(crate) fn project_var<F: Real>(g: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let y = g.affine(x, w, Some(b))?;
    Ok(g.tanh(y)?)
}

/// Pools `x: T×k` into `1×k`; SAP also returns the `1×T` attention row.
///
/// SAP: `α = softmax(x · w_c)`, `h = αᵀ x`.
pub(crate) fn pool_var<F: Real>(
    g: &mut Graph<F>,
    x: Var,
    mode: Pooling,
    query: Option<Var>,
) -> Result<(Var, Option<Var>), ModelError> {
    let (t, k) = g.value(x).dims2();
    if t == 0 {
        return Err(ModelError::EmptyInput);
    }
    match mode {
        Pooling::Mean => Ok((g.mean_rows(x)?, None)),
        Pooling::Sap => {
            let q = query.ok_or(ModelError::MissingParam("sap.query".into()))?;
            let q = g.reshape(q, vec![k, 1])?;
            let scores = g.matmul(x, q)?;
            let scores = g.reshape(scores, vec![1, t])?;
            let alpha = g.softmax_rows(scores)?;
            let h = g.matmul(alpha, x)?;
            Ok((h, Some(alpha)))
        }
    }
}

/// Dropout then a linear layer to two logits.
pub(crate) fn classify_var<F: Real>(
    g: &mut Graph<F>,
    h: Var,
    w: Var,
    b: Var,
    dropout_p: f64,
    mode: Mode,
    layer: u64,
) -> Result<Var, ModelError> {
    let h = dropout_var(g, h, dropout_p, mode, layer)?;
    let logits = g.affine(h, w, Some(b))?;
    Ok(g.reshape(logits, vec![2])?)
}

pub(crate) fn dropout_var<F: Real>(g: &mut Graph<F>, x: Var, p: f64, mode: Mode, layer: u64) -> Result<Var, ModelError> {
    Ok(match mode {
        Mode::Eval => g.dropout(x, p, false, 0)?,
        Mode::Train { seed } => g.dropout(x, p, true, mix_seed(seed, layer))?,
    })
}

/// Argmax over two logits; a tie goes to the negative class.
pub fn predicted_class<F: Real>(logits: &[F; 2]) -> Class {
    if logits[1] > logits[0] {
        Class::Positive
    } else {
        Class::Negative
    }
}

/// Fully connected layer with tanh, mapping `d`-dim frames to `k` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<F> {
    /// `k × d`
    pub weight: Tensor<F>,
    /// `k`
    pub bias: Tensor<F>,
}

impl<F: Real> ProjectionHead<F> {
    pub fn k(&self) -> usize {
        self.weight.dims2().0
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dims2().1
    }

    pub fn project(&self, x: &Tensor<F>) -> Result<Tensor<F>, ModelError> {
        let (_, d) = x.dims2();
        if d != self.input_dim() {
            return Err(ModelError::DimMismatch {
                expected: self.input_dim(),
                found: d,
            });
        }
        let mut g = Graph::new();
        let xv = g.input(x.clone())?;
        let w = g.input(self.weight.clone())?;
        let b = g.input(self.bias.clone())?;
        let y = project_var(&mut g, xv, w, b)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingLayer<F> {
    pub mode: Pooling,
    /// `w_c`, length `k`; SAP only.
    pub query: Option<Tensor<F>>,
}

impl<F: Real> PoolingLayer<F> {
    pub fn mean() -> Self {
        Self {
            mode: Pooling::Mean,
            query: None,
        }
    }

    pub fn sap(query: Vec<F>) -> Self {
        Self {
            mode: Pooling::Sap,
            query: Some(Tensor::vector(query)),
        }
    }

    /// Returns the utterance vector and, for SAP, the frame weights.
    pub fn pool(&self, x: &Tensor<F>) -> Result<(Vec<F>, Option<Vec<F>>), ModelError> {
        let (t, k) = x.dims2();
        if t == 0 || x.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if let Some(q) = &self.query {
            if q.len() != k {
                return Err(ModelError::DimMismatch {
                    expected: q.len(),
                    found: k,
                });
            }
        }
        let mut g = Graph::new();
        let xv = g.input(Tensor::new(vec![t, k], x.data().to_vec())?)?;
        let q = match &self.query {
            Some(q) => Some(g.input(q.clone())?),
            None => None,
        };
        let (h, alpha) = pool_var(&mut g, xv, self.mode, q)?;
        Ok((
            g.value(h).data().to_vec(),
            alpha.map(|a| g.value(a).data().to_vec()),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<F> {
    pub dropout_p: f64,
    /// `2 × k`
    pub weight: Tensor<F>,
    /// `2`
    pub bias: Tensor<F>,
}

impl<F: Real> ClassifierHead<F> {
    pub fn classify(&self, h: &[F], mode: Mode) -> Result<[F; 2], ModelError> {
        let k = self.weight.dims2().1;
        if h.len() != k {
            return Err(ModelError::DimMismatch {
                expected: k,
                found: h.len(),
            });
        }
        let mut g = Graph::new();
        let hv = g.input(Tensor::new(vec![1, k], h.to_vec())?)?;
        let w = g.input(self.weight.clone())?;
        let b = g.input(self.bias.clone())?;
        let logits = classify_var(&mut g, hv, w, b, self.dropout_p, mode, 0)?;
        let z = g.value(logits).data();
        Ok([z[0], z[1]])
    }
}
