/// Sinusoidal encoding of a signed day gap. Component `2k` is
/// `sin(dt / 10000^(2k/d_t))` and `2k + 1` the matching cosine.
pub fn time_encode(delta_days: f64, d_t: usize) -> Vec<f64> {
    debug_assert!(d_t.is_multiple_of(2), "time dimension must be even");
    let mut out = Vec::with_capacity(d_t);
    for k in 0..d_t / 2 {
        let freq = 10000f64.powf((2 * k) as f64 / d_t as f64);
        let angle = delta_days / freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}
