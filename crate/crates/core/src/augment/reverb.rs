use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio_io::SAMPLE_RATE_HZ;

/// Longest decay time, reached at room scale 100.
pub const MAX_RT60_S: f64 = 0.9;

/// RT60 in seconds for a room scale in [0, 100].
pub fn rt60_s(room_scale: f64) -> f64 {
    MAX_RT60_S * (room_scale.clamp(0.0, 100.0) / 100.0)
}

/// Unit direct path followed by a random-sign tail with envelope
/// `g·exp(-6.9·n / (RT60·fs))` (60 dB amplitude decay at RT60).
///
/// Tail-to-direct energy ratio is `room_scale / 100`; room scale 0 gives a
/// single unit impulse.
pub fn impulse_response(room_scale: f64, seed: u64) -> Vec<f64> {
    let rt60 = rt60_s(room_scale);
    let len = (rt60 * f64::from(SAMPLE_RATE_HZ)).ceil() as usize;
    if len == 0 {
        return vec![1.0];
    }
    let decay = 6.9 / (rt60 * f64::from(SAMPLE_RATE_HZ));
    let envelope_energy: f64 = (1..=len).map(|n| (-2.0 * decay * n as f64).exp()).sum();
    let gain = ((room_scale / 100.0) / envelope_energy).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ir = Vec::with_capacity(len + 1);
    ir.push(1.0);
    for n in 1..=len {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        ir.push(sign * gain * (-decay * n as f64).exp());
    }
    ir
}

/// Linear convolution truncated to `x.len()` samples.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.len() == 1 {
        return x.iter().map(|v| v * h[0]).collect();
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f64]| -> Vec<Complex<f64>> {
        let mut v: Vec<Complex<f64>> = s.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / n as f64).collect()
}
