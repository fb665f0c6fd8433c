use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioError, WavClip};
use crate::spectral::hann;

pub const DEFAULT_CUTOFF_HZ: f64 = 4000.0;
/// Hard truncation from 8 kHz-origin audio leaves orders of magnitude
/// less high-band energy than this.
pub const DEFAULT_NARROWBAND_THRESHOLD: f64 = 1e-3;
/// Welch segment length (128 ms at 16 kHz); segments overlap by half.
pub const WELCH_SEGMENT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandReport {
    /// Fraction of spectral energy in `(cutoff_hz, nyquist]`.
    pub high_band_ratio: f64,
    pub is_narrowband: bool,
    pub cutoff_hz: f64,
}

/// Welch estimate: mean `|FFT|^2` of Hann-windowed segments with 50% overlap.
/// A clip shorter than one segment is zero padded to a single segment.
pub fn welch_power(x: &[f32]) -> Vec<f64> {
    let n = WELCH_SEGMENT;
    let hop = n / 2;
    let window = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let count = if x.len() <= n { 1 } else { 1 + (x.len() - n) / hop };
    let mut acc = vec![0.0; n / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for s in 0..count {
        for (i, b) in buf.iter_mut().enumerate() {
            let v = x.get(s * hop + i).map_or(0.0, |&v| f64::from(v));
            *b = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

/// Measures how much energy a clip carries above `cutoff_hz`, from the
/// [`welch_power`] spectrum. A silent clip reports a ratio of 0 and is
/// flagged narrow-band, as is any purely tonal clip below the cutoff.
pub fn detect_bandwidth(clip: &WavClip, cutoff_hz: f64, threshold: f64) -> Result<BandReport, AudioError> {
    if clip.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    let rate = f64::from(clip.sample_rate_hz());
    let nyquist = rate / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(AudioError::BadCutoff {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }

    let power = welch_power(clip.samples());
    let bin_hz = rate / WELCH_SEGMENT as f64;
    let total: f64 = power.iter().sum();
    let high: f64 = power
        .iter()
        .enumerate()
        .filter(|(b, _)| *b as f64 * bin_hz > cutoff_hz)
        .map(|(_, p)| p)
        .sum();
    let high_band_ratio = if total > 0.0 {
        (high / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(BandReport {
        high_band_ratio,
        is_narrowband: high_band_ratio < threshold,
        cutoff_hz,
    })
}
