use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::SpectralError;
use crate::audio_io::WavClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rectangular,
}

/// Analysis window and hop, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub win_ms: f64,
    pub hop_ms: f64,
    pub window: WindowKind,
}

impl Default for FrameGrid {
    fn default() -> Self {
        Self {
            win_ms: 25.0,
            hop_ms: 10.0,
            window: WindowKind::Hann,
        }
    }
}

impl FrameGrid {
    pub fn win_samples(&self, sample_rate_hz: u32) -> usize {
        (self.win_ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
    }

    /// `1 + floor((n - win) / hop)`; no centre padding.
    pub fn frame_count(&self, n_samples: usize, sample_rate_hz: u32) -> Result<usize, SpectralError> {
        let win = self.win_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if n_samples < win {
            return Err(SpectralError::ClipTooShort {
                samples: n_samples,
                needed: win,
            });
        }
        Ok(1 + (n_samples - win) / hop)
    }

    pub fn window(&self, sample_rate_hz: u32) -> Vec<f64> {
        let n = self.win_samples(sample_rate_hz);
        match self.window {
            WindowKind::Hann => hann(n),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Cuts a clip into windowed frames on the grid.
pub fn frame_signal(clip: &WavClip, grid: &FrameGrid) -> Result<Vec<Vec<f64>>, SpectralError> {
    let rate = clip.sample_rate_hz();
    let count = grid.frame_count(clip.len(), rate)?;
    let hop = grid.hop_samples(rate);
    let window = grid.window(rate);
    let samples = clip.samples();
    Ok((0..count)
        .map(|t| {
            let start = t * hop;
            samples[start..start + window.len()]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| f64::from(s) * w)
                .collect()
        })
        .collect())
}

/// Real-input FFT of a fixed size; frames shorter than the size are zero padded.
#[derive(Clone)]
pub(crate) struct RealFft {
    size: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl RealFft {
    pub fn new(size: usize) -> Self {
        let plan = FftPlanner::new().plan_fft_forward(size);
        Self { size, plan }
    }

    pub fn n_bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Writes `|X_k|^2` for `k in 0..=size/2` into `out`.
    pub fn power(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>, out: &mut [f64]) {
        debug_assert!(frame.len() <= self.size);
        buf.clear();
        buf.extend(frame.iter().map(|&x| Complex::new(x, 0.0)));
        buf.resize(self.size, Complex::new(0.0, 0.0));
        self.plan.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.norm_sqr();
        }
    }
}
