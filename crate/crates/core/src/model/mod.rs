//! Classifier families over frame features.
//!
//! * Head family: frame projection with tanh, mean or self-attention
//!   pooling, dropout and a two-logit linear layer.
//! * CNN family: 50 ms average pooling of the 257-bin spectrogram, three
//!   1-D convolutions over time with the frequency bins as channels,
//!   self-attention pooling, a ReLU feed-forward layer and two logits.

mod checkpoint;
mod cnn;
mod head;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::FeatureMatrix;
use crate::metrics::Class;
use crate::tensor::{Gradients, Graph, ParamId, ParamStore, Real, Tensor, TensorError, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta, CKPT_MAGIC,
    CKPT_VERSION,
};
pub use cnn::cnn_forward;
pub use head::{predicted_class, ClassifierHead, PoolingLayer, ProjectionHead};

/// Hidden sizes swept for the head family.
pub const HEAD_HIDDEN_SIZES: [usize; 4] = [128, 256, 512, 768];
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("input has no frames")]
    EmptyInput,
    #[error("input has {frames} frames, at least {needed} required")]
    InputTooShort { frames: usize, needed: usize },
    #[error("model was built for feature `{expected}`, input is `{found}`")]
    FeatureMismatch { expected: String, found: String },
    #[error("parameter `{0}` missing from store")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint truncated in {0}")]
    Truncated(&'static str),
    #[error("checkpoint descriptor: {0}")]
    Descriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Sap,
}

impl FromStr for Pooling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Pooling::Mean),
            "sap" => Ok(Pooling::Sap),
            other => Err(format!("unknown pooling `{other}` (expected mean or sap)")),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Sap => "sap",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Head,
    Cnn,
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(Family::Head),
            "cnn" => Ok(Family::Cnn),
            other => Err(format!("unknown family `{other}` (expected head or cnn)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Head => "head",
            Family::Cnn => "cnn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub k: usize,
    pub pooling: Pooling,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_bins: usize,
    pub hidden: usize,
    pub kernel: usize,
    /// Front-end pooling window and stride, in frames.
    pub pool_frames: usize,
    pub dropout_p: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            input_bins: 257,
            hidden: 160,
            kernel: 5,
            pool_frames: 5,
            dropout_p: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Architecture {
    Head(HeadConfig),
    Cnn(CnnConfig),
}

impl Architecture {
    pub fn head(input_dim: usize, k: usize, pooling: Pooling) -> Self {
        Architecture::Head(HeadConfig {
            input_dim,
            k,
            pooling,
            dropout_p: DEFAULT_DROPOUT,
        })
    }

    pub fn cnn() -> Self {
        Architecture::Cnn(CnnConfig::default())
    }

    pub fn family(&self) -> Family {
        match self {
            Architecture::Head(_) => Family::Head,
            Architecture::Cnn(_) => Family::Cnn,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Head(h) => h.input_dim,
            Architecture::Cnn(c) => c.input_bins,
        }
    }

    pub fn pooling(&self) -> Pooling {
        match self {
            Architecture::Head(h) => h.pooling,
            Architecture::Cnn(_) => Pooling::Sap,
        }
    }

    /// Spectrogram frames covered by one attention weight.
    pub fn frames_per_weight(&self) -> usize {
        match self {
            Architecture::Head(_) => 1,
            Architecture::Cnn(c) => c.pool_frames,
        }
    }

    /// Parameter names, shapes and fan-in, in registry order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut v = Vec::new();
        match self {
            Architecture::Head(h) => {
                v.push(("proj.weight".to_string(), vec![h.k, h.input_dim], h.input_dim));
                v.push(("proj.bias".to_string(), vec![h.k], h.input_dim));
                if h.pooling == Pooling::Sap {
                    v.push(("sap.query".to_string(), vec![h.k], 0));
                }
                v.push(("out.weight".to_string(), vec![2, h.k], h.k));
                v.push(("out.bias".to_string(), vec![2], h.k));
            }
            Architecture::Cnn(c) => {
                let mut c_in = c.input_bins;
                for i in 1..=3 {
                    let fan = c_in * c.kernel;
                    v.push((format!("conv{i}.weight"), vec![c.hidden, c_in, c.kernel], fan));
                    v.push((format!("conv{i}.bias"), vec![c.hidden], fan));
                    c_in = c.hidden;
                }
                v.push(("sap.query".to_string(), vec![c.hidden], 0));
                v.push(("ffn.weight".to_string(), vec![c.hidden, c.hidden], c.hidden));
                v.push(("ffn.bias".to_string(), vec![c.hidden], c.hidden));
                v.push(("out.weight".to_string(), vec![2, c.hidden], c.hidden));
                v.push(("out.bias".to_string(), vec![2], c.hidden));
            }
        }
        v
    }

    /// Uniform `±1/√fan_in` weights and biases; attention query starts at
    /// zero and the two output rows start identical.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, fan_in) in self.layout() {
            let n: usize = shape.iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f32> = if fan_in == 0 {
                vec![0.0f32; n]
            } else if name.starts_with("out.") {
                // both logit rows share one draw so training starts at equal logits
                let row: Vec<f32> = (0..n / 2).map(|_| rng.random_range(-bound..bound) as f32).collect();
                row.iter().chain(&row).copied().collect()
            } else {
                (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
            };
            store.add(&name, Tensor::new(shape, data).expect("layout shape"));
        }
        store
    }

    /// Checks that `params` has exactly this architecture's layout.
    pub fn check_params<F: Real>(&self, params: &ParamStore<F>) -> Result<(), ModelError> {
        let want: Vec<(String, Vec<usize>)> = self.layout().into_iter().map(|(n, s, _)| (n, s)).collect();
        let have = params.shapes();
        if want != have {
            return Err(ModelError::Descriptor(format!(
                "parameter layout {have:?} does not match architecture {want:?}"
            )));
        }
        Ok(())
    }
}

/// Dropout switch; training mode carries the seed for this forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Shape `[2]`.
    pub logits: Var,
    /// Shape `1×T'`; absent for mean pooling.
    pub attention: Option<Var>,
}

pub(crate) fn param_var<F: Real>(g: &mut Graph<F>, params: &ParamStore<F>, name: &str) -> Result<Var, ModelError> {
    let id = params
        .id_of(name)
        .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
    Ok(g.param(params, id)?)
}

/// Builds the forward pass for `x: T×d` into `g`.
pub fn build_forward<F: Real>(
    arch: &Architecture,
    params: &ParamStore<F>,
    g: &mut Graph<F>,
    x: Tensor<F>,
    mode: Mode,
) -> Result<ForwardVars, ModelError> {
    let (t, d) = x.dims2();
    if t == 0 {
        return Err(ModelError::EmptyInput);
    }
    if d != arch.input_dim() {
        return Err(ModelError::DimMismatch {
            expected: arch.input_dim(),
            found: d,
        });
    }
    match arch {
        Architecture::Head(h) => {
            let xv = g.input(x)?;
            let w = param_var(g, params, "proj.weight")?;
            let b = param_var(g, params, "proj.bias")?;
            let projected = head::project_var(g, xv, w, b)?;
            let query = match h.pooling {
                Pooling::Sap => Some(param_var(g, params, "sap.query")?),
                Pooling::Mean => None,
            };
            let (pooled, attention) = head::pool_var(g, projected, h.pooling, query)?;
            let ow = param_var(g, params, "out.weight")?;
            let ob = param_var(g, params, "out.bias")?;
            let logits = head::classify_var(g, pooled, ow, ob, h.dropout_p, mode, 0)?;
            Ok(ForwardVars { logits, attention })
        }
        Architecture::Cnn(c) => cnn::build_cnn(c, params, g, x, mode),
    }
}

/// Cross-entropy of one utterance against `label`.
pub fn build_loss<F: Real>(
    arch: &Architecture,
    params: &ParamStore<F>,
    g: &mut Graph<F>,
    x: Tensor<F>,
    label: Class,
    mode: Mode,
) -> Result<Var, ModelError> {
    let fw = build_forward(arch, params, g, x, mode)?;
    Ok(g.cross_entropy(fw.logits, label.index())?)
}

pub fn feature_tensor<F: Real>(m: &FeatureMatrix) -> Tensor<F> {
    let data = m.data().iter().map(|&v| F::from_f64_lossy(f64::from(v))).collect();
    Tensor::new(vec![m.n_frames(), m.dim()], data).expect("feature matrix shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: [f32; 2],
    pub class: Class,
    /// Attention weights over the pooled time axis (SAP only).
    pub attention: Option<Vec<f32>>,
}

/// A trained or freshly initialized model bound to one feature type.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Architecture,
    feature: String,
    params: ParamStore<f32>,
}

impl Classifier {
    pub fn new(arch: Architecture, feature: &str, seed: u64) -> Self {
        Self {
            params: arch.init_params(seed),
            arch,
            feature: feature.to_string(),
        }
    }

    pub fn from_parts(arch: Architecture, feature: &str, params: ParamStore<f32>) -> Result<Self, ModelError> {
        arch.check_params(&params)?;
        Ok(Self {
            arch,
            feature: feature.to_string(),
            params,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn feature(&self) -> &str {
        &self.feature
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id_of(name)
    }

    fn check_feature(&self, m: &FeatureMatrix) -> Result<(), ModelError> {
        if m.source_tag() != self.feature {
            return Err(ModelError::FeatureMismatch {
                expected: self.feature.clone(),
                found: m.source_tag().to_string(),
            });
        }
        Ok(())
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Prediction, ModelError> {
        self.check_feature(m)?;
        let mut g = Graph::new();
        let fw = build_forward(&self.arch, &self.params, &mut g, feature_tensor(m), Mode::Eval)?;
        let z = g.value(fw.logits).data();
        let logits = [z[0], z[1]];
        Ok(Prediction {
            logits,
            class: predicted_class(&logits),
            attention: fw.attention.map(|a| g.value(a).data().to_vec()),
        })
    }

    /// Training-mode loss and parameter gradients for one utterance.
    pub fn loss_and_grads(&self, m: &FeatureMatrix, label: Class, seed: u64) -> Result<(f32, Gradients<f32>), ModelError> {
        self.check_feature(m)?;
        let mut g = Graph::new();
        let loss = build_loss(
            &self.arch,
            &self.params,
            &mut g,
            feature_tensor(m),
            label,
            Mode::Train { seed },
        )?;
        let value = g.scalar(loss);
        Ok((value, g.backward(loss)?))
    }
}
