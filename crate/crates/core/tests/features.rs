mod common;

use sapcovid::audio_io::{detect_bandwidth, WavClip, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD};
use sapcovid::dataset::fixture::lowpass_brickwall;
use sapcovid::spectral::{FeatureKind, SpectralExtractor};

fn noise_clip(n: usize, seed: u64) -> WavClip {
    let x: Vec<f32> = common::noise(n, seed, 0.2).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    WavClip::from_samples(x).unwrap()
}

#[test]
fn every_kind_has_its_width_and_a_shared_frame_count() {
    let ex = SpectralExtractor::default();
    for (n, seed) in [(400, 1), (4_321, 2), (16_000, 3)] {
        let clip = noise_clip(n, seed);
        let want_t = 1 + (n - 400) / 160;
        for k in FeatureKind::ALL {
            let m = ex.extract(k, &clip).unwrap();
            assert_eq!(m.dim(), k.dim(), "{k}");
            assert_eq!(m.n_frames(), want_t, "{k}");
            assert_eq!(m.source_tag(), k.tag());
        }
    }
}

#[test]
fn mfcc_matches_the_reference_formula() {
    let ex = SpectralExtractor::default();
    for seed in 0..10 {
        let clip = noise_clip(8_000 + 333 * seed as usize, 100 + seed);
        let got = ex.extract(FeatureKind::Mfcc, &clip).unwrap();
        let want = common::mfcc_oracle(clip.samples());
        assert_eq!(got.n_frames(), want.len());
        for (t, row) in want.iter().enumerate() {
            let err = common::max_abs_diff(row, got.row(t));
            assert!(err < 1e-4, "seed {seed} frame {t}: {err}");
        }
    }
}

#[test]
fn mel_matches_the_reference_bank() {
    let ex = SpectralExtractor::default();
    let clip = noise_clip(6_000, 9);
    let got = ex.extract(FeatureKind::Mel, &clip).unwrap();
    let bank = common::mel_bank(80, 400);
    for (t, f) in common::frames(clip.samples()).iter().enumerate() {
        let p = common::dft_power(f, 400);
        let want: Vec<f64> = bank.iter().map(|r| r.iter().zip(&p).map(|(w, v)| w * v).sum()).collect();
        for (j, (w, g)) in want.iter().zip(got.row(t)).enumerate() {
            assert!((w - f64::from(*g)).abs() <= 1e-5 * w.abs().max(1e-3), "frame {t} band {j}: {w} vs {g}");
        }
    }
}

#[test]
fn spectrogram_is_the_padded_dft_magnitude() {
    let ex = SpectralExtractor::default();
    let clip = noise_clip(2_000, 4);
    let got = ex.extract(FeatureKind::Spectrogram, &clip).unwrap();
    for (t, f) in common::frames(clip.samples()).iter().enumerate() {
        let want: Vec<f64> = common::dft_power(f, 512).into_iter().map(f64::sqrt).collect();
        assert!(common::max_abs_diff(&want, got.row(t)) < 1e-4);
    }
}

#[test]
fn bandwidth_ratio_matches_the_periodogram() {
    for seed in 0..6 {
        let x = common::noise(12_000, 50 + seed, 0.2);
        let x: Vec<f32> = if seed % 2 == 0 { x } else { lowpass_brickwall(&x, 4_000.0) };
        let clip = WavClip::from_samples(x.iter().map(|v| v.clamp(-1.0, 1.0)).collect()).unwrap();
        let r = detect_bandwidth(&clip, DEFAULT_CUTOFF_HZ, DEFAULT_NARROWBAND_THRESHOLD).unwrap();
        let want = common::high_band_ratio(clip.samples(), DEFAULT_CUTOFF_HZ);
        assert!((r.high_band_ratio - want).abs() < 1e-9, "{} vs {want}", r.high_band_ratio);
        assert_eq!(r.is_narrowband, seed % 2 == 1);
    }
}
