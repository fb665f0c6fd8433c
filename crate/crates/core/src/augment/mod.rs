//! Waveform augmentation: pitch randomization, then reverberation, then a
//! random time crop. Applied once per training recording to double the
//! training split.

mod pitch;
mod reverb;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{read_wav, write_wav, AudioError, WavClip};
use crate::dataset::{DatasetError, Manifest, ManifestEntry, Split};
use crate::{mix_seed, stable_hash};

pub use pitch::{resample, shift_pitch, time_stretch};
pub use reverb::{convolve_same, impulse_response, rt60_s, MAX_RT60_S};

/// Suffix appended to the id and file stem of an augmented twin.
pub const AUG_SUFFIX: &str = "_aug";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation spec: {0}")]
    BadSpec(String),
    #[error("{path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: AudioError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub pitch_cents_range: (f64, f64),
    pub reverb_room_scale_range: (f64, f64),
    pub clip_keep_fraction_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            pitch_cents_range: (-300.0, 300.0),
            reverb_room_scale_range: (0.0, 100.0),
            clip_keep_fraction_range: (0.8, 1.0),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.pitch_cents_range) {
            return Err(AugmentError::BadSpec(format!("pitch range {:?}", self.pitch_cents_range)));
        }
        let (r0, r1) = self.reverb_room_scale_range;
        if !ordered(self.reverb_room_scale_range) || r0 < 0.0 || r1 > 100.0 {
            return Err(AugmentError::BadSpec(format!(
                "room scale range {:?} not within [0, 100]",
                self.reverb_room_scale_range
            )));
        }
        let (k0, k1) = self.clip_keep_fraction_range;
        if !ordered(self.clip_keep_fraction_range) || k0 <= 0.0 || k1 > 1.0 {
            return Err(AugmentError::BadSpec(format!(
                "keep fraction range {:?} not within (0, 1]",
                self.clip_keep_fraction_range
            )));
        }
        Ok(())
    }
}

/// The draws made for one augmented clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub cents: f64,
    pub room_scale: f64,
    pub keep_fraction: f64,
    pub seed: u64,
}

fn to_f64(clip: &WavClip) -> Vec<f64> {
    clip.samples().iter().map(|&s| f64::from(s)).collect()
}

/// Rescales `y` to the peak of `reference` and converts to a clip.
fn rescale_to(y: &[f64], reference_peak: f64) -> WavClip {
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > 0.0 { reference_peak / peak } else { 0.0 };
    let samples = y.iter().map(|v| ((v * g) as f32).clamp(-1.0, 1.0)).collect();
    WavClip::from_samples(samples).expect("bounded finite samples")
}

/// Pitch shift by `cents` with the duration kept; the result keeps the
/// input's peak amplitude.
pub fn pitch_randomize(clip: &WavClip, cents: f64) -> WavClip {
    if cents == 0.0 {
        return clip.clone();
    }
    let y = shift_pitch(&to_f64(clip), cents);
    rescale_to(&y, f64::from(clip.peak()))
}

/// Convolution with a synthetic room response, renormalized to the input peak.
pub fn reverberate(clip: &WavClip, room_scale: f64, seed: u64) -> WavClip {
    let ir = impulse_response(room_scale, seed);
    if ir.len() == 1 {
        return clip.clone();
    }
    let y = convolve_same(&to_f64(clip), &ir);
    rescale_to(&y, f64::from(clip.peak()))
}

/// A seeded contiguous crop of `round(keep_fraction·N)` samples (at least one).
pub fn time_clip(clip: &WavClip, keep_fraction: f64, seed: u64) -> WavClip {
    let n = clip.len();
    let keep = ((keep_fraction.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);
    if keep == n {
        return clip.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..=n - keep);
    WavClip::from_samples(clip.samples()[offset..offset + keep].to_vec()).expect("sub-slice of a valid clip")
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws parameters from `spec` and applies pitch, reverb and crop in order.
pub fn augment_clip(clip: &WavClip, spec: &AugmentSpec, seed: u64) -> (WavClip, AugmentParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AugmentParams {
        cents: draw(&mut rng, spec.pitch_cents_range),
        room_scale: draw(&mut rng, spec.reverb_room_scale_range),
        keep_fraction: draw(&mut rng, spec.clip_keep_fraction_range),
        seed,
    };
    let y = pitch_randomize(clip, params.cents);
    let y = reverberate(&y, params.room_scale, mix_seed(seed, 1));
    let y = time_clip(&y, params.keep_fraction, mix_seed(seed, 2));
    (y, params)
}

/// Writes one augmented twin per train entry into `out_dir` and returns the
/// extended manifest (twins directly follow their source). Dev and test
/// entries pass through unchanged.
pub fn augment_manifest(manifest: &Manifest, spec: &AugmentSpec, out_dir: &Path) -> Result<Manifest, AugmentError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let train: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    let twins = train
        .par_iter()
        .map(|e| -> Result<ManifestEntry, AugmentError> {
            let src = manifest.resolve_wav(e);
            let clip = read_wav(&src).map_err(|source| AugmentError::Audio {
                path: src.clone(),
                source,
            })?;
            let (aug, _) = augment_clip(&clip, spec, mix_seed(spec.seed, stable_hash(&e.id)));
            let file = format!("{}{AUG_SUFFIX}.wav", e.id);
            let dst = out_dir.join(&file);
            write_wav(&dst, &aug).map_err(|source| AugmentError::Audio { path: dst, source })?;
            Ok(ManifestEntry {
                id: format!("{}{AUG_SUFFIX}", e.id),
                wav_path: file,
                ..(*e).clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut twins = twins.into_iter();
    let mut entries = Vec::with_capacity(manifest.len() + train.len());
    for e in manifest.entries() {
        let mut e2 = e.clone();
        e2.wav_path = std::path::absolute(manifest.resolve_wav(e))?.to_string_lossy().into_owned();
        entries.push(e2);
        if e.split == Split::Train {
            entries.push(twins.next().expect("one twin per train entry"));
        }
    }
    Ok(Manifest::new(entries)?.with_base_dir(out_dir))
}
