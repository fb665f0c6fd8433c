//! Synthetic stand-in for a restricted speech corpus.
//!
//! Generates speech-like recordings (harmonic source with a steep spectral
//! tilt, syllabic envelope, aspiration noise) in train/dev/test splits with
//! configurable class counts and a planted subset of 4 kHz band-limited
//! positives.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DatasetError, Label, Manifest, ManifestEntry, Split};
use crate::audio_io::{normalize_amplitude, write_wav, WavClip, SAMPLE_RATE_HZ};
use crate::mix_seed;

/// Per-split composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub positives: usize,
    pub negatives: usize,
    /// How many of the positives are band-limited.
    pub narrowband_positives: usize,
    /// Labels written as `unknown`.
    pub blind: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub train: SplitCounts,
    pub dev: SplitCounts,
    pub test: SplitCounts,
    pub duration_s: f64,
    pub seed: u64,
}

impl FixtureSpec {
    /// Split sizes of the original challenge corpus: train 72+243 (16
    /// narrow-band), dev 142+153 (13 narrow-band), blind test 283 (7).
    pub fn corpus_shaped(seed: u64) -> Self {
        Self {
            train: SplitCounts {
                positives: 72,
                negatives: 243,
                narrowband_positives: 16,
                blind: false,
            },
            dev: SplitCounts {
                positives: 142,
                negatives: 153,
                narrowband_positives: 13,
                blind: false,
            },
            // the blind split's class balance is unpublished; roughly even here
            test: SplitCounts {
                positives: 141,
                negatives: 142,
                narrowband_positives: 7,
                blind: true,
            },
            duration_s: 1.0,
            seed,
        }
    }

    pub fn small(seed: u64) -> Self {
        let counts = |p, n, nb, blind| SplitCounts {
            positives: p,
            negatives: n,
            narrowband_positives: nb,
            blind,
        };
        Self {
            train: counts(12, 12, 2, false),
            dev: counts(8, 8, 1, false),
            test: counts(4, 4, 1, true),
            duration_s: 0.5,
            seed,
        }
    }
}

/// Zero-mean Gaussian noise clipped to [-1, 1].
pub fn white_noise(n: usize, seed: u64, std: f64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..n)
        .map(|_| normal.sample(&mut rng).clamp(-1.0, 1.0) as f32)
        .collect()
}

/// Zeroes every DFT bin above `cutoff_hz` over the whole signal.
pub fn lowpass_brickwall(x: &[f32], cutoff_hz: f64) -> Vec<f32> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect();
    fwd.process(&mut buf);
    let rate = f64::from(SAMPLE_RATE_HZ);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        if bin as f64 * rate / n as f64 > cutoff_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    buf.iter()
        .map(|c| (c.re / n as f64).clamp(-1.0, 1.0) as f32)
        .collect()
}

/// One synthetic utterance. Positives are breathier and carry pitch jitter.
pub fn synth_utterance(class_positive: bool, narrowband: bool, n_samples: usize, seed: u64) -> WavClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = f64::from(SAMPLE_RATE_HZ);
    let f0 = rng.random_range(100.0..220.0);
    let syllable_hz = rng.random_range(3.0..5.0);
    let vib_depth = if class_positive { 0.06 } else { 0.01 };
    let noise_gain = if class_positive { 0.35 } else { 0.12 };
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / rate;
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * 5.0 * t).sin());
        phase = (phase + 2.0 * PI * f / rate) % (2.0 * PI);
        // sin(hθ) by the Chebyshev recurrence
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut voiced = 0.0;
        let mut h = 1.0;
        while h * f < rate / 2.0 {
            voiced += cur / (h * h);
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
            h += 1.0;
        }
        let env = 0.55 + 0.45 * (2.0 * PI * syllable_hz * t).sin();
        let noise: f64 = normal.sample(&mut rng);
        out.push(env * (voiced + noise_gain * noise));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut samples: Vec<f32> = out.iter().map(|v| (0.9 * v / peak) as f32).collect();
    if narrowband {
        samples = lowpass_brickwall(&samples, 4000.0);
    }
    let clip = WavClip::from_samples(samples).expect("bounded samples");
    normalize_amplitude(&clip).0
}

/// Writes `<id>.wav` files and `manifest.csv` into `out_dir`.
///
/// The returned manifest carries the planted `is_narrowband` ground truth.
pub fn generate_fixture(spec: &FixtureSpec, out_dir: &Path) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(out_dir)?;
    let n_samples = (spec.duration_s * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let mut entries = Vec::new();
    for (split, counts) in [
        (Split::Train, spec.train),
        (Split::Dev, spec.dev),
        (Split::Test, spec.test),
    ] {
        let total = counts.positives + counts.negatives;
        // interleave classes so ids carry no label information
        let mut classes: Vec<bool> = (0..counts.positives)
            .map(|_| true)
            .chain((0..counts.negatives).map(|_| false))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, split as u64));
        rand::seq::SliceRandom::shuffle(classes.as_mut_slice(), &mut rng);
        let mut nb_left = counts.narrowband_positives;
        for (i, positive) in classes.into_iter().enumerate() {
            let id = format!("{}_{:04}", split.as_str(), i + 1);
            let narrowband = positive && nb_left > 0;
            if narrowband {
                nb_left -= 1;
            }
            let seed = mix_seed(spec.seed, crate::stable_hash(&id));
            let clip = synth_utterance(positive, narrowband, n_samples, seed);
            let file = format!("{id}.wav");
            write_wav(out_dir.join(&file), &clip).map_err(|e| match e {
                crate::audio_io::AudioError::Io(io) => DatasetError::Io(io),
                other => DatasetError::Io(std::io::Error::other(other.to_string())),
            })?;
            let label = match (counts.blind, positive) {
                (true, _) => Label::Unknown,
                (false, true) => Label::Positive,
                (false, false) => Label::Negative,
            };
            entries.push(ManifestEntry {
                id,
                wav_path: file,
                label,
                split,
                is_narrowband: Some(narrowband),
            });
        }
        debug_assert_eq!(entries.iter().filter(|e| e.split == split).count(), total);
    }
    let manifest = Manifest::new(entries)?.with_base_dir(out_dir);
    super::write_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
