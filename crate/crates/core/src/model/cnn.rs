use crate::tensor::{Graph, ParamStore, Real, Tensor};

use super::head::{classify_var, dropout_var, pool_var};
use super::{param_var, CnnConfig, ForwardVars, Mode, ModelError, Pooling};

pub(crate) fn build_cnn<F: Real>(
    cfg: &CnnConfig,
    params: &ParamStore<F>,
    g: &mut Graph<F>,
    spec: Tensor<F>,
    mode: Mode,
) -> Result<ForwardVars, ModelError> {
    let (t, bins) = spec.dims2();
    if bins != cfg.input_bins {
        return Err(ModelError::DimMismatch {
            expected: cfg.input_bins,
            found: bins,
        });
    }
    if t < cfg.pool_frames {
        return Err(ModelError::InputTooShort {
            frames: t,
            needed: cfg.pool_frames,
        });
    }
    let x = g.input(spec)?;
    let pooled = g.avgpool_time(x, cfg.pool_frames, cfg.pool_frames)?;
    // channels × time
    let mut h = g.transpose(pooled)?;
    for layer in 1..=3u64 {
        let w = param_var(g, params, &format!("conv{layer}.weight"))?;
        let b = param_var(g, params, &format!("conv{layer}.bias"))?;
        h = g.conv1d(h, w, Some(b), 1, cfg.kernel / 2)?;
        h = g.relu(h)?;
        h = dropout_var(g, h, cfg.dropout_p, mode, layer)?;
    }
    let frames = g.transpose(h)?;
    let query = param_var(g, params, "sap.query")?;
    let (utt, attention) = pool_var(g, frames, Pooling::Sap, Some(query))?;
    let fw = param_var(g, params, "ffn.weight")?;
    let fb = param_var(g, params, "ffn.bias")?;
    let hidden = g.affine(utt, fw, Some(fb))?;
    let hidden = g.relu(hidden)?;
    let ow = param_var(g, params, "out.weight")?;
    let ob = param_var(g, params, "out.bias")?;
    let logits = classify_var(g, hidden, ow, ob, cfg.dropout_p, mode, 4)?;
    Ok(ForwardVars { logits, attention })
}

/// Logits and attention over the `floor(T/pool_frames)` pooled frames.
pub fn cnn_forward<F: Real>(
    spec: &Tensor<F>,
    cfg: &CnnConfig,
    params: &ParamStore<F>,
    mode: Mode,
) -> Result<([F; 2], Vec<F>), ModelError> {
    let mut g = Graph::new();
    let fw = build_cnn(cfg, params, &mut g, spec.clone(), mode)?;
    let z = g.value(fw.logits).data();
    let alpha = fw
        .attention
        .map(|a| g.value(a).data().to_vec())
        .unwrap_or_default();
    Ok(([z[0], z[1]], alpha))
}
