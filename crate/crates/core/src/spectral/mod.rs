//! Handcrafted frame features on the 25 ms / 10 ms grid: linear magnitude
//! spectrogram (257), mel power (80), MFCC with deltas (39) and log
//! filterbank with deltas (240).

mod deltas;
mod frame;
pub mod mel;

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use thiserror::Error;

pub use deltas::delta_rows;
pub use frame::{frame_signal, hann, FrameGrid, WindowKind};
pub use mel::MelFilterbank;

pub(crate) use frame::RealFft;

use crate::audio_io::WavClip;
use crate::interchange::{FeatError, FeatureMatrix};

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("clip has {samples} samples, at least {needed} required for one frame")]
    ClipTooShort { samples: usize, needed: usize },
    #[error("delta order must be 1 or 2, got {0}")]
    BadDeltaOrder(usize),
    #[error("unknown feature type '{0}'")]
    UnknownFeature(String),
    #[error(transparent)]
    Feat(#[from] FeatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Spectrogram,
    Mel,
    Mfcc,
    Fbank,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Spectrogram,
        FeatureKind::Mel,
        FeatureKind::Mfcc,
        FeatureKind::Fbank,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FeatureKind::Spectrogram => "spectrogram",
            FeatureKind::Mel => "mel",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Fbank => "fbank",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureKind::Spectrogram => 257,
            FeatureKind::Mel => 80,
            FeatureKind::Mfcc => 39,
            FeatureKind::Fbank => 240,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureKind {
    type Err = SpectralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| SpectralError::UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub grid: FrameGrid,
    pub n_fft_spec: usize,
    pub n_fft_mel: usize,
    pub n_mel: usize,
    /// Filters in the bank feeding the cepstrum.
    pub n_mfcc_filters: usize,
    pub n_mfcc: usize,
    pub delta_window: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            grid: FrameGrid::default(),
            n_fft_spec: 512,
            n_fft_mel: 400,
            n_mel: 80,
            n_mfcc_filters: 23,
            n_mfcc: 13,
            delta_window: 2,
        }
    }
}

/// Holds FFT plans, windows and filterbanks for repeated extraction.
pub struct SpectralExtractor {
    config: SpectralConfig,
    spec_fft: RealFft,
    mel_fft: RealFft,
    mel_bank: MelFilterbank,
    mfcc_bank: MelFilterbank,
    dct: Vec<Vec<f64>>,
}

impl Default for SpectralExtractor {
    fn default() -> Self {
        Self::new(SpectralConfig::default())
    }
}

impl SpectralExtractor {
    pub fn new(config: SpectralConfig) -> Self {
        let rate = f64::from(crate::audio_io::SAMPLE_RATE_HZ);
        let nyquist = rate / 2.0;
        let mel_bank = MelFilterbank::new(config.n_mel, config.n_fft_mel, rate, 0.0, nyquist);
        let mfcc_bank =
            MelFilterbank::new(config.n_mfcc_filters, config.n_fft_mel, rate, 0.0, nyquist);
        let dct = dct_ii_orthonormal(config.n_mfcc_filters, config.n_mfcc);
        Self {
            spec_fft: RealFft::new(config.n_fft_spec),
            mel_fft: RealFft::new(config.n_fft_mel),
            mel_bank,
            mfcc_bank,
            dct,
            config,
        }
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.config
    }

    pub fn mel_bank(&self) -> &MelFilterbank {
        &self.mel_bank
    }

    pub fn extract(&self, kind: FeatureKind, clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
        match kind {
            FeatureKind::Spectrogram => self.spectrogram_257(clip),
            FeatureKind::Mel => self.mel_80(clip),
            FeatureKind::Mfcc => self.mfcc_39(clip),
            FeatureKind::Fbank => self.fbank_240(clip),
        }
    }

    /// Power spectra on the `n_fft` grid for every frame.
    fn power_frames(&self, clip: &WavClip, fft: &RealFft) -> Result<Vec<Vec<f64>>, SpectralError> {
        let frames = frame_signal(clip, &self.config.grid)?;
        let mut buf: Vec<Complex<f64>> = Vec::with_capacity(fft.n_bins() * 2);
        Ok(frames
            .iter()
            .map(|f| {
                let mut p = vec![0.0; fft.n_bins()];
                fft.power(f, &mut buf, &mut p);
                p
            })
            .collect())
    }

    /// Linear magnitude of the zero-padded 512-point FFT, 257 bins per frame.
    pub fn spectrogram_257(&self, clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
        let rows: Vec<Vec<f64>> = self
            .power_frames(clip, &self.spec_fft)?
            .into_iter()
            .map(|p| p.into_iter().map(f64::sqrt).collect())
            .collect();
        self.to_matrix(FeatureKind::Spectrogram, &rows)
    }

    /// 400-point power spectrum through the 80-filter mel bank.
    pub fn mel_80(&self, clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
        let rows = self.mel_rows(clip, &self.mel_bank)?;
        self.to_matrix(FeatureKind::Mel, &rows)
    }

    /// Cepstra 0..12 of 23 log-mel energies, followed by Δ and ΔΔ.
    pub fn mfcc_39(&self, clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
        let cepstra: Vec<Vec<f64>> = self
            .mel_rows(clip, &self.mfcc_bank)?
            .into_iter()
            .map(|m| {
                let logs: Vec<f64> = m.iter().map(|&e| safe_ln(e)).collect();
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&logs).map(|(b, l)| b * l).sum())
                    .collect()
            })
            .collect();
        let rows = with_deltas(cepstra, self.config.delta_window);
        self.to_matrix(FeatureKind::Mfcc, &rows)
    }

    /// 80 log-mel energies followed by Δ and ΔΔ.
    pub fn fbank_240(&self, clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
        let logs: Vec<Vec<f64>> = self
            .mel_rows(clip, &self.mel_bank)?
            .into_iter()
            .map(|m| m.into_iter().map(safe_ln).collect())
            .collect();
        let rows = with_deltas(logs, self.config.delta_window);
        self.to_matrix(FeatureKind::Fbank, &rows)
    }

    fn mel_rows(&self, clip: &WavClip, bank: &MelFilterbank) -> Result<Vec<Vec<f64>>, SpectralError> {
        Ok(self
            .power_frames(clip, &self.mel_fft)?
            .iter()
            .map(|p| {
                let mut out = vec![0.0; bank.n_mels()];
                bank.apply(p, &mut out);
                out
            })
            .collect())
    }

    fn to_matrix(&self, kind: FeatureKind, rows: &[Vec<f64>]) -> Result<FeatureMatrix, SpectralError> {
        let dim = rows.first().map_or(kind.dim(), Vec::len);
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Ok(FeatureMatrix::new(
            rows.len(),
            dim,
            self.config.grid.hop_ms as f32,
            data,
            kind.tag(),
        )?)
    }
}

fn safe_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

fn with_deltas(base: Vec<Vec<f64>>, window: usize) -> Vec<Vec<f64>> {
    let d1 = delta_rows(&base, window);
    let d2 = delta_rows(&d1, window);
    base.into_iter()
        .zip(d1)
        .zip(d2)
        .map(|((mut b, d), dd)| {
            b.extend(d);
            b.extend(dd);
            b
        })
        .collect()
}

/// Rows are the first `n_out` orthonormal DCT-II basis vectors of length `n_in`.
fn dct_ii_orthonormal(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let n = n_in as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..n_in)
                .map(|i| {
                    scale * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()
                })
                .collect()
        })
        .collect()
}

/// Δ (order 1) or ΔΔ (order 2) of a feature matrix, tagged `<tag>+d<order>`.
pub fn deltas(base: &FeatureMatrix, order: usize) -> Result<FeatureMatrix, SpectralError> {
    if !(1..=2).contains(&order) {
        return Err(SpectralError::BadDeltaOrder(order));
    }
    let mut rows: Vec<Vec<f64>> = base
        .rows()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    for _ in 0..order {
        rows = delta_rows(&rows, 2);
    }
    let data = rows.iter().flatten().map(|&v| v as f32).collect();
    Ok(FeatureMatrix::new(
        base.n_frames(),
        base.dim(),
        base.frame_shift_ms(),
        data,
        &format!("{}+d{}", base.source_tag(), order),
    )?)
}

pub fn spectrogram_257(clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
    SpectralExtractor::default().spectrogram_257(clip)
}

pub fn mel_80(clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
    SpectralExtractor::default().mel_80(clip)
}

pub fn mfcc_39(clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
    SpectralExtractor::default().mfcc_39(clip)
}

pub fn fbank_240(clip: &WavClip) -> Result<FeatureMatrix, SpectralError> {
    SpectralExtractor::default().fbank_240(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize, amp: f64) -> WavClip {
        WavClip::from_samples(
            (0..n)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn output_dims_and_frame_counts() {
        let ex = SpectralExtractor::default();
        let clip = tone(300.0, 16000, 0.5);
        for kind in FeatureKind::ALL {
            let m = ex.extract(kind, &clip).unwrap();
            assert_eq!(m.dim(), kind.dim(), "{kind}");
            assert_eq!(m.n_frames(), 98);
            assert_eq!(m.source_tag(), kind.tag());
        }
    }

    #[test]
    fn dc_signal_concentrates_in_bin_zero() {
        let clip = WavClip::from_samples(vec![1.0; 1600]).unwrap();
        let m = spectrogram_257(&clip).unwrap();
        for row in m.rows() {
            let total: f64 = row.iter().map(|&v| f64::from(v).powi(2)).sum();
            assert!(f64::from(row[0]).powi(2) / total > 0.5);
            // bin 0 and its Hann main-lobe neighbour hold everything
            let lobe: f64 = row[..2].iter().map(|&v| f64::from(v).powi(2)).sum();
            assert!(lobe / total > 0.9);
        }
    }

    #[test]
    fn two_khz_tone_peaks_at_bin_64() {
        let m = spectrogram_257(&tone(2000.0, 4000, 0.8)).unwrap();
        for row in m.rows() {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(arg, 64);
        }
    }

    #[test]
    fn silence_gives_zero_mel_and_finite_logs() {
        let clip = WavClip::from_samples(vec![0.0; 2000]).unwrap();
        let ex = SpectralExtractor::default();
        assert!(ex.mel_80(&clip).unwrap().data().iter().all(|&v| v == 0.0));
        for kind in [FeatureKind::Mfcc, FeatureKind::Fbank] {
            assert!(ex.extract(kind, &clip).unwrap().data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn stationary_signal_has_zero_deltas() {
        // 100 Hz has a period of exactly one hop, so every frame is identical.
        let clip = tone(100.0, 8000, 0.5);
        let ex = SpectralExtractor::default();
        let fb = ex.fbank_240(&clip).unwrap();
        for row in fb.rows() {
            assert!(row[80..].iter().all(|v| v.abs() < 1e-6));
        }
        let mf = ex.mfcc_39(&clip).unwrap();
        for row in mf.rows() {
            assert!(row[13..].iter().all(|v| v.abs() < 1e-6));
        }
        let dc = WavClip::from_samples(vec![0.3; 4000]).unwrap();
        for row in ex.mfcc_39(&dc).unwrap().rows() {
            assert!(row[13..].iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn fbank_base_is_log_of_mel() {
        let clip = tone(440.0, 6000, 0.3);
        let ex = SpectralExtractor::default();
        let mel = ex.mel_80(&clip).unwrap();
        let fb = ex.fbank_240(&clip).unwrap();
        for (m, f) in mel.rows().zip(fb.rows()) {
            for j in 0..80 {
                let expected = f64::from(m[j]).max(LOG_FLOOR).ln();
                assert!((f64::from(f[j]) - expected).abs() < 1e-4 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mel_bin_weight_sums_are_bounded() {
        let ex = SpectralExtractor::default();
        let bank = ex.mel_bank();
        let mut col = vec![0.0; bank.n_bins()];
        for m in 0..bank.n_mels() {
            for (c, w) in col.iter_mut().zip(bank.row(m)) {
                *c += w;
            }
        }
        assert!(col.iter().all(|&s| s <= 1.0 + 1e-9));
    }

    #[test]
    fn delta_op_orders() {
        let data: Vec<f32> = (0..10).map(|t| t as f32).collect();
        let ramp = FeatureMatrix::new(10, 1, 10.0, data, "ramp").unwrap();
        let d1 = deltas(&ramp, 1).unwrap();
        assert!((d1.row(5)[0] - 1.0).abs() < 1e-6);
        let d2 = deltas(&ramp, 2).unwrap();
        assert!(d2.row(5)[0].abs() < 1e-6);
        assert!(matches!(deltas(&ramp, 3), Err(SpectralError::BadDeltaOrder(3))));
    }

    #[test]
    fn kind_parses_from_tag() {
        for kind in FeatureKind::ALL {
            assert_eq!(kind.tag().parse::<FeatureKind>().unwrap(), kind);
        }
        assert!("cpc".parse::<FeatureKind>().is_err());
    }
}
