//! Slaney-scale triangular mel filterbank with area normalization.

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// `n_mels × (n_fft/2 + 1)` weight matrix, stored sparsely per filter.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_bins: usize,
    filters: Vec<Vec<(usize, f64)>>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate_hz: f64, f_min: f64, f_max: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz: Vec<f64> = (0..n_bins)
            .map(|b| b as f64 * sample_rate_hz / n_fft as f64)
            .collect();

        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let enorm = 2.0 / (hi - lo);
                bin_hz
                    .iter()
                    .enumerate()
                    .filter_map(|(b, &f)| {
                        let rising = (f - lo) / (mid - lo);
                        let falling = (hi - f) / (hi - mid);
                        let w = rising.min(falling).max(0.0);
                        (w > 0.0).then_some((b, w * enorm))
                    })
                    .collect()
            })
            .collect();
        Self { n_bins, filters }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense row for one filter.
    pub fn row(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bins];
        for &(b, w) in &self.filters[m] {
            out[b] = w;
        }
        out
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, filt) in out.iter_mut().zip(&self.filters) {
            *o = filt.iter().map(|&(b, w)| w * power[b]).sum();
        }
    }
}
