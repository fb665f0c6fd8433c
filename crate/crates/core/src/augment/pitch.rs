//! Pitch shift = phase-vocoder time stretch followed by band-limited resampling
//! back to the original length.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::spectral::hann;

const N_FFT: usize = 1024;
const HOP: usize = 256;
const SINC_ZEROS: f64 = 16.0;

fn wrap(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

fn stft(x: &[f64], window: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex<f64>>> {
    let pad = N_FFT / 2;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat_n(0.0, pad + N_FFT));
    let n_frames = 1 + (x.len() + 2 * pad).saturating_sub(N_FFT) / HOP;
    let fft = planner.plan_fft_forward(N_FFT);
    (0..n_frames)
        .map(|f| {
            let mut buf: Vec<Complex<f64>> = padded[f * HOP..f * HOP + N_FFT]
                .iter()
                .zip(window)
                .map(|(s, w)| Complex::new(s * w, 0.0))
                .collect();
            fft.process(&mut buf);
            buf.truncate(N_FFT / 2 + 1);
            buf
        })
        .collect()
}

fn istft(frames: &[Vec<Complex<f64>>], window: &[f64], out_len: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let pad = N_FFT / 2;
    let total = (frames.len().saturating_sub(1)) * HOP + N_FFT;
    let mut acc = vec![0.0; total.max(out_len + pad)];
    let mut norm = vec![0.0; acc.len()];
    let ifft = planner.plan_fft_inverse(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    for (f, half) in frames.iter().enumerate() {
        for k in 0..=N_FFT / 2 {
            buf[k] = half[k];
        }
        for k in 1..N_FFT / 2 {
            buf[N_FFT - k] = half[k].conj();
        }
        ifft.process(&mut buf);
        let start = f * HOP;
        for i in 0..N_FFT {
            acc[start + i] += buf[i].re / N_FFT as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    (0..out_len)
        .map(|i| {
            let n = norm[i + pad];
            if n > 1e-8 {
                acc[i + pad] / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Stretches duration by `factor` (> 1 is longer) without changing pitch.
pub fn time_stretch(x: &[f64], factor: f64) -> Vec<f64> {
    let window = hann(N_FFT);
    let mut planner = FftPlanner::new();
    let spec = stft(x, &window, &mut planner);
    let rate = 1.0 / factor;
    let n_bins = N_FFT / 2 + 1;
    let advance: Vec<f64> = (0..n_bins).map(|k| 2.0 * PI * (k * HOP) as f64 / N_FFT as f64).collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let zero = vec![Complex::new(0.0, 0.0); n_bins];
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while (t as usize) < spec.len() {
        let i = t as usize;
        let a = t - i as f64;
        let c0 = &spec[i];
        let c1 = spec.get(i + 1).unwrap_or(&zero);
        let frame: Vec<Complex<f64>> = (0..n_bins)
            .map(|k| {
                let mag = (1.0 - a) * c0[k].norm() + a * c1[k].norm();
                Complex::from_polar(mag, phase[k])
            })
            .collect();
        out.push(frame);
        for k in 0..n_bins {
            let dphi = wrap(c1[k].arg() - c0[k].arg() - advance[k]);
            phase[k] += advance[k] + dphi;
        }
        t += rate;
    }
    let out_len = (x.len() as f64 * factor).round() as usize;
    istft(&out, &window, out_len, &mut planner)
}

/// Hann-windowed sinc interpolation of `x` onto `out_len` evenly spaced
/// points, low-passed when decimating.
pub fn resample(x: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let step = x.len() as f64 / out_len as f64;
    let fc = (1.0 / step).min(1.0);
    let half = SINC_ZEROS / fc;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos - half).ceil().max(0.0) as usize;
            let hi = ((pos + half).floor() as usize).min(x.len() - 1);
            (lo..=hi)
                .map(|j| {
                    let d = pos - j as f64;
                    let arg = PI * fc * d;
                    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                    let w = 0.5 + 0.5 * (PI * d / half).cos();
                    x[j] * fc * sinc * w
                })
                .sum()
        })
        .collect()
}

/// Shifts pitch by `cents` keeping the sample count.
pub fn shift_pitch(x: &[f64], cents: f64) -> Vec<f64> {
    if cents == 0.0 {
        return x.to_vec();
    }
    let ratio = 2f64.powf(cents / 1200.0);
    let stretched = time_stretch(x, ratio);
    resample(&stretched, x.len())
}
