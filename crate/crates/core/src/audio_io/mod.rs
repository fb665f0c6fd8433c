//! Loading, validating, normalizing and bandwidth-screening WAV recordings.

mod bandwidth;
mod wav;

pub use bandwidth::{detect_bandwidth, welch_power, BandReport, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD, WELCH_SEGMENT};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use thiserror::Error;

/// Every clip in the pipeline is mono at this rate.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RIFF/WAVE container")]
    NotRiffWave,
    #[error("format_tag={format_tag}, bits_per_sample={bits_per_sample}: expected PCM (1) at 16 bits")]
    NotPcm16 { format_tag: u16, bits_per_sample: u16 },
    #[error("channels={channels}: expected mono")]
    NotMono { channels: u16 },
    #[error("sample_rate={found} Hz: expected 16000 Hz")]
    WrongSampleRate { found: u32 },
    #[error("truncated file: {field}")]
    TruncatedFile { field: &'static str },
    #[error("clip has no samples")]
    EmptyClip,
    #[error("sample {index} is {value}: amplitudes must be finite and within [-1, 1]")]
    InvalidSample { index: usize, value: f32 },
    #[error("cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist_hz} Hz)")]
    BadCutoff { cutoff_hz: f64, nyquist_hz: f64 },
}

/// A mono 16 kHz amplitude buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WavClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl WavClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(AudioError::WrongSampleRate {
                found: sample_rate_hz,
            });
        }
        if samples.is_empty() {
            return Err(AudioError::EmptyClip);
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::InvalidSample { index, value });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a 16 kHz clip.
    pub fn from_samples(samples: Vec<f32>) -> Result<Self, AudioError> {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeStatus {
    Scaled,
    /// Peak was already exactly 1.0.
    Unchanged,
    /// All-zero input; returned as is.
    Silent,
}

/// Scales a clip so its peak absolute amplitude is exactly 1.0.
pub fn normalize_amplitude(clip: &WavClip) -> (WavClip, NormalizeStatus) {
    let peak = clip.peak();
    if peak == 0.0 {
        log::warn!("normalize_amplitude: silent clip left unchanged");
        return (clip.clone(), NormalizeStatus::Silent);
    }
    if peak == 1.0 {
        return (clip.clone(), NormalizeStatus::Unchanged);
    }
    let samples = clip.samples.iter().map(|s| s / peak).collect();
    (
        WavClip {
            samples,
            sample_rate_hz: clip.sample_rate_hz,
        },
        NormalizeStatus::Scaled,
    )
}
