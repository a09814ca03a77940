//! Small descriptive-statistics helpers shared across modules.

/// Quantile of sorted data with linear interpolation between order
/// statistics (the default method of NumPy's `percentile`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = pos.floor() as usize;
            let j = pos.ceil() as usize;
            let t = pos - i as f64;
            if i == j || t == 0.0 {
                sorted[i]
            } else {
                sorted[i] + t * (sorted[j] - sorted[i])
            }
        }
    }
}

pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Quantile of `f32` intensities, computed in `f64`.
pub fn quantile_f32(data: &[f32], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    let n = v.len();
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    let (_, lo, rest) = v.select_nth_unstable_by(i, f32::total_cmp);
    let lo = *lo as f64;
    if t == 0.0 || rest.is_empty() {
        return lo;
    }
    let hi = rest.iter().copied().min_by(f32::total_cmp).unwrap() as f64;
    lo + t * (hi - lo)
}

pub fn mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    data.iter().sum::<f64>() / data.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
pub fn std_dev(data: &[f64]) -> f64 {
    let n = data.len();
    if n < 2 {
        return if n == 1 { 0.0 } else { f64::NAN };
    }
    let m = mean(data);
    (data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}
