/// Softmax over variances divided by their maximum.
///
/// Dividing by the maximum makes the weights depend on variance ratios only;
/// equal variances (including all-zero) give uniform weights.
pub fn softmax_weights(variances: &[f64]) -> Vec<f64> {
    if variances.is_empty() {
        return Vec::new();
    }
    let max = variances.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return uniform_weights(variances.len());
    }
    let exps: Vec<f64> = variances.iter().map(|v| (v.max(0.0) / max - 1.0).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn uniform_weights(dims: usize) -> Vec<f64> {
    vec![1.0 / dims as f64; dims]
}

/// `p_i = ceil((n / leaf)^{w_i})`, never below 1.
pub fn split_counts(weights: &[f64], n: usize, leaf: usize) -> Vec<usize> {
    let ratio = n as f64 / leaf.max(1) as f64;
    weights
        .iter()
        .map(|&w| {
            if ratio <= 1.0 {
                return 1;
            }
            let p = ratio.powf(w);
            // absorb rounding so exact powers do not round up
            let p = (p - 1e-9 * p).ceil();
            (p as usize).max(1)
        })
        .collect()
}

/// Split counts from per-dimension variances.
pub fn weighted_split_counts(variances: &[f64], n: usize, leaf: usize) -> Vec<usize> {
    split_counts(&softmax_weights(variances), n, leaf)
}
