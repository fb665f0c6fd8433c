//! Speech-based COVID-19 screening toolkit.
//!
//! Frame features (spectral or ingested from self-supervised encoders) are
//! projected, pooled over time with mean or self-attention pooling and
//! classified into two logits. A from-scratch CNN with attention pooling
//! over the spectrogram is the supervised alternative. Around the models sit
//! WAV ingestion with narrow-band screening, waveform augmentation, an
//! AdamW training loop selecting checkpoints by Unweighted Average Recall,
//! and attention-trace export.

pub mod analysis;
pub mod audio_io;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod interchange;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod training;

/// SplitMix64 finalizer over two words; used to derive child seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, stable across builds and platforms.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
