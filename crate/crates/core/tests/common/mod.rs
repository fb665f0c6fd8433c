//! Reference implementations written straight from the textbook formulas,
//! sharing no code with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

pub const RATE: f64 = 16_000.0;
pub const WIN: usize = 400;
pub const HOP: usize = 160;

pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos())).collect()
}

pub fn frames(x: &[f32]) -> Vec<Vec<f64>> {
    let w = periodic_hann(WIN);
    let count = 1 + (x.len() - WIN) / HOP;
    (0..count)
        .map(|t| (0..WIN).map(|i| f64::from(x[t * HOP + i]) * w[i]).collect())
        .collect()
}

/// `|Σ x_n e^{-2πikn/N}|²` for `k = 0..=N/2`, the frame zero padded to `n_fft`.
pub fn dft_power(frame: &[f64], n_fft: usize) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &v) in frame.iter().enumerate() {
                let ang = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Slaney mel: linear at 200/3 Hz per mel up to 1 kHz, logarithmic above.
pub fn slaney_mel(hz: f64) -> f64 {
    if hz >= 1000.0 {
        15.0 + (hz / 1000.0).ln() * 27.0 / 6.4f64.ln()
    } else {
        3.0 * hz / 200.0
    }
}

pub fn slaney_hz(mel: f64) -> f64 {
    if mel >= 15.0 {
        1000.0 * (6.4f64.ln() * (mel - 15.0) / 27.0).exp()
    } else {
        200.0 * mel / 3.0
    }
}

/// Dense `n_mels × (n_fft/2+1)` triangular bank, each filter scaled by
/// `2 / (upper edge - lower edge)`.
pub fn mel_bank(n_mels: usize, n_fft: usize) -> Vec<Vec<f64>> {
    let top = slaney_mel(RATE / 2.0);
    let edge: Vec<f64> = (0..n_mels + 2).map(|i| slaney_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    (0..n_mels)
        .map(|m| {
            (0..=n_fft / 2)
                .map(|b| {
                    let f = b as f64 * RATE / n_fft as f64;
                    let up = (f - edge[m]) / (edge[m + 1] - edge[m]);
                    let down = (edge[m + 2] - f) / (edge[m + 2] - edge[m + 1]);
                    up.min(down).max(0.0) * 2.0 / (edge[m + 2] - edge[m])
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

/// HTK regression deltas, window 2, edges replicated.
pub fn deltas(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let last = rows.len() as isize - 1;
    let at = |t: isize| &rows[t.clamp(0, last) as usize];
    (0..rows.len() as isize)
        .map(|t| {
            (0..rows[0].len())
                .map(|j| ((at(t + 1)[j] - at(t - 1)[j]) + 2.0 * (at(t + 2)[j] - at(t - 2)[j])) / 10.0)
                .collect()
        })
        .collect()
}

/// 13 cepstra of 23 log-mel energies (400-point power spectrum, log floor
/// 1e-10) with Δ and ΔΔ appended: 39 per frame.
pub fn mfcc_oracle(x: &[f32]) -> Vec<Vec<f64>> {
    let bank = mel_bank(23, 400);
    let ceps: Vec<Vec<f64>> = frames(x)
        .iter()
        .map(|f| {
            let p = dft_power(f, 400);
            let logs: Vec<f64> = bank
                .iter()
                .map(|row| row.iter().zip(&p).map(|(w, v)| w * v).sum::<f64>().max(1e-10).ln())
                .collect();
            dct2(&logs, 13)
        })
        .collect();
    let d1 = deltas(&ceps);
    let d2 = deltas(&d1);
    ceps.iter()
        .zip(&d1)
        .zip(&d2)
        .map(|((c, a), b)| c.iter().chain(a).chain(b).copied().collect())
        .collect()
}

/// Share of energy in bins above `cutoff_hz` of the averaged periodogram
/// over 2048-sample Hann segments at half overlap (one zero-padded segment
/// for short input).
pub fn high_band_ratio(x: &[f32], cutoff_hz: f64) -> f64 {
    let (n, hop) = (2048, 1024);
    let w = periodic_hann(n);
    let count = if x.len() <= n { 1 } else { 1 + (x.len() - n) / hop };
    let mut mean = vec![0.0; n / 2 + 1];
    for s in 0..count {
        let seg: Vec<f64> = (0..n).map(|i| x.get(s * hop + i).map_or(0.0, |&v| f64::from(v)) * w[i]).collect();
        for (m, p) in mean.iter_mut().zip(dft_power(&seg, n)) {
            *m += p / count as f64;
        }
    }
    let total: f64 = mean.iter().sum();
    let high: f64 = mean.iter().enumerate().filter(|(b, _)| *b as f64 * RATE / n as f64 > cutoff_hz).map(|(_, p)| p).sum();
    high / total
}

/// Standard normal noise from a 64-bit LCG through Box-Muller.
pub fn noise(n: usize, seed: u64, std: f64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut uniform = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    (0..n)
        .map(|_| {
            let (u1, u2) = (uniform(), uniform());
            (std * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()) as f32
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - f64::from(y)).abs()).fold(0.0, f64::max)
}
