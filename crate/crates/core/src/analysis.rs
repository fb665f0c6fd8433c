//! Attention traces: per-frame SAP weights averaged over independently
//! trained checkpoints, aligned to the spectrogram grid and exported as
//! CSV plus a PNG overlay.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::FeatureMatrix;
use crate::model::{Checkpoint, ModelError, Pooling};
use crate::spectral::FrameGrid;

/// Trace and spectrogram lengths may differ by this many frames before
/// export refuses them.
pub const LENGTH_TOLERANCE: usize = 4;
const PX_PER_FRAME: u32 = 3;
const DB_RANGE: f64 = 80.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no checkpoints given")]
    NoCheckpoints,
    #[error("checkpoints disagree: {0}")]
    ArchitectureMismatch(String),
    #[error("model uses mean pooling and has no attention weights")]
    NoAttention,
    #[error("trace has {trace} frames, spectrogram has {spectrogram} (tolerance {LENGTH_TOLERANCE})")]
    LengthMismatch { trace: usize, spectrogram: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub utterance_id: String,
    /// Start time of each 10 ms frame.
    pub time_axis_s: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_trials_averaged: usize,
    /// Training seeds of the averaged checkpoints, in the order given.
    pub seeds: Vec<u64>,
}

impl AttentionTrace {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Averages eval-mode attention of every checkpoint on `features`, then
/// renormalizes. CNN weights (one per pooled window) are spread evenly over
/// the spectrogram frames of their window.
pub fn collect_attention(
    checkpoints: &[Checkpoint],
    utterance_id: &str,
    features: &FeatureMatrix,
) -> Result<AttentionTrace, AnalysisError> {
    let first = checkpoints.first().ok_or(AnalysisError::NoCheckpoints)?;
    let arch = *first.model.arch();
    if arch.pooling() != Pooling::Sap {
        return Err(AnalysisError::NoAttention);
    }
    for c in &checkpoints[1..] {
        if *c.model.arch() != arch {
            return Err(AnalysisError::ArchitectureMismatch(format!(
                "{:?} vs {:?}",
                arch,
                c.model.arch()
            )));
        }
        if c.model.feature() != first.model.feature() {
            return Err(AnalysisError::ArchitectureMismatch(format!(
                "feature `{}` vs `{}`",
                first.model.feature(),
                c.model.feature()
            )));
        }
    }

    let mut sum: Vec<f64> = Vec::new();
    for c in checkpoints {
        let alpha = c.model.predict(features)?.attention.ok_or(AnalysisError::NoAttention)?;
        if sum.is_empty() {
            sum = vec![0.0; alpha.len()];
        }
        for (s, a) in sum.iter_mut().zip(&alpha) {
            *s += f64::from(*a);
        }
    }
    let n = checkpoints.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let total: f64 = mean.iter().sum();
    let normalized: Vec<f64> = mean.iter().map(|m| m / total).collect();

    let per = arch.frames_per_weight();
    let weights: Vec<f64> = normalized
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w / per as f64, per))
        .collect();
    let hop_s = f64::from(features.frame_shift_ms()) / 1000.0;
    Ok(AttentionTrace {
        utterance_id: utterance_id.to_string(),
        time_axis_s: (0..weights.len()).map(|i| i as f64 * hop_s).collect(),
        weights,
        n_trials_averaged: checkpoints.len(),
        seeds: checkpoints.iter().map(|c| c.meta.seed).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportInfo {
    pub csv: PathBuf,
    pub png: PathBuf,
    pub meta: PathBuf,
    /// Frames drawn in the image after trimming to the shorter length.
    pub frames_drawn: usize,
    /// `(frames - 1)·hop + window`, in seconds.
    pub image_time_extent_s: f64,
    pub image_width_px: u32,
    pub image_height_px: u32,
}

#[derive(Serialize)]
struct TraceMeta<'a> {
    utterance_id: &'a str,
    n_trials_averaged: usize,
    seeds: &'a [u64],
    frame_shift_ms: f32,
    frames_in_trace: usize,
    frames_drawn: usize,
    image_time_extent_s: f64,
}

#[derive(Serialize)]
struct CsvRow {
    time_s: f64,
    weight: f64,
}

/// Writes `<id>_attention.csv` (every trace frame), a PNG overlay of the
/// weights on the log-magnitude spectrogram, and a JSON metadata file.
pub fn export_trace(
    trace: &AttentionTrace,
    spectrogram: &FeatureMatrix,
    out_dir: &Path,
) -> Result<ExportInfo, AnalysisError> {
    let (nt, ns) = (trace.len(), spectrogram.n_frames());
    if nt.abs_diff(ns) > LENGTH_TOLERANCE || nt == 0 {
        return Err(AnalysisError::LengthMismatch {
            trace: nt,
            spectrogram: ns,
        });
    }
    std::fs::create_dir_all(out_dir)?;
    let stem = format!("{}_attention", trace.utterance_id);
    let csv_path = out_dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (t, wt) in trace.time_axis_s.iter().zip(&trace.weights) {
        w.serialize(CsvRow {
            time_s: *t,
            weight: *wt,
        })?;
    }
    w.flush()?;

    let frames = nt.min(ns);
    let img = render_overlay(&trace.weights[..frames], spectrogram, frames);
    let png_path = out_dir.join(format!("{stem}.png"));
    img.save(&png_path)?;

    let grid = FrameGrid::default();
    let hop_s = f64::from(spectrogram.frame_shift_ms()) / 1000.0;
    let extent = (frames - 1) as f64 * hop_s + grid.win_ms / 1000.0;
    let meta_path = out_dir.join(format!("{stem}.json"));
    let meta = TraceMeta {
        utterance_id: &trace.utterance_id,
        n_trials_averaged: trace.n_trials_averaged,
        seeds: &trace.seeds,
        frame_shift_ms: spectrogram.frame_shift_ms(),
        frames_in_trace: nt,
        frames_drawn: frames,
        image_time_extent_s: extent,
    };
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    Ok(ExportInfo {
        csv: csv_path,
        png: png_path,
        meta: meta_path,
        frames_drawn: frames,
        image_time_extent_s: extent,
        image_width_px: img.width(),
        image_height_px: img.height(),
    })
}

/// Grey-scale dB spectrogram (low frequencies at the bottom) with the weight
/// curve in red, scaled so the largest weight reaches 90% of the height.
fn render_overlay(weights: &[f64], spec: &FeatureMatrix, frames: usize) -> RgbImage {
    let bins = spec.dim();
    let width = frames as u32 * PX_PER_FRAME;
    let height = bins as u32;
    let db: Vec<f64> = spec.data()[..frames * bins]
        .iter()
        .map(|&m| 20.0 * f64::from(m).max(1e-10).log10())
        .collect();
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut img = RgbImage::new(width, height);
    for t in 0..frames {
        for b in 0..bins {
            let level = ((db[t * bins + b] - top + DB_RANGE) / DB_RANGE).clamp(0.0, 1.0);
            let g = (level * 255.0) as u8;
            let y = height - 1 - b as u32;
            for dx in 0..PX_PER_FRAME {
                img.put_pixel(t as u32 * PX_PER_FRAME + dx, y, Rgb([g, g, g]));
            }
        }
    }
    let wmax = weights.iter().copied().fold(0.0, f64::max).max(1e-300);
    let to_y = |w: f64| -> u32 {
        let h = (w / wmax * 0.9 * f64::from(height - 1)).round() as u32;
        height - 1 - h.min(height - 1)
    };
    let red = Rgb([230, 30, 30]);
    let mut prev: Option<u32> = None;
    for (t, &w) in weights.iter().enumerate() {
        let y = to_y(w);
        let x0 = t as u32 * PX_PER_FRAME;
        for dx in 0..PX_PER_FRAME {
            img.put_pixel(x0 + dx, y, red);
        }
        if let Some(py) = prev {
            for yy in py.min(y)..=py.max(y) {
                img.put_pixel(x0, yy, red);
            }
        }
        prev = Some(y);
    }
    img
}
