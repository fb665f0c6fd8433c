/// Regression deltas over a `T × d` row-major block with window 2 and edge
/// replication: `d_t = Σ_{n=1..2} n (x_{t+n} - x_{t-n}) / 10`.
pub fn delta_rows(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let t_len = rows.len();
    if t_len == 0 {
        return Vec::new();
    }
    let dim = rows[0].len();
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let last = t_len - 1;
    (0..t_len)
        .map(|t| {
            let mut out = vec![0.0; dim];
            for n in 1..=window {
                let fwd = &rows[(t + n).min(last)];
                let back = &rows[t.saturating_sub(n)];
                for j in 0..dim {
                    out[j] += n as f64 * (fwd[j] - back[j]);
                }
            }
            out.iter_mut().for_each(|v| *v /= denom);
            out
        })
        .collect()
}
