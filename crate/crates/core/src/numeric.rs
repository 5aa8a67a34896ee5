//! Scalar helpers shared across modules.

/// Overflow-safe `log(1 + exp(x))`.
///
/// For large positive `x` the naive form overflows; the branch below returns
/// `x + log(1 + exp(-x))`, which is exact in 64-bit floats for `x ≳ 40`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`]: the `x` with `log(1 + exp(x)) = y`, for `y > 0`.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(v_i)` without overflow; `-inf` on an empty slice.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Squared Euclidean norm.
pub(crate) fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Euclidean distance between two slices of equal length.
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean and standard error of the mean.
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Log density of a diagonal Gaussian with the given mean and log-variances.
pub(crate) fn diag_gaussian_log_density(x: &[f64], mean: &[f64], logvar: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    x.iter()
        .zip(mean)
        .zip(logvar)
        .map(|((xi, mi), lv)| {
            let d = xi - mi;
            -0.5 * (LN_2PI + lv + d * d * (-lv).exp())
        })
        .sum()
}

/// SplitMix64 step; used to derive independent seeds from a master seed.
pub(crate) fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15_u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
