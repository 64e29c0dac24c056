//! Special functions and small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// zeta(2..=8)
const ZETA: [f64; 7] = [
    1.644_934_066_848_226_4,
    1.202_056_903_159_594_3,
    1.082_323_233_711_138_2,
    1.036_927_755_143_369_9,
    1.017_343_061_984_449_1,
    1.008_349_277_381_922_8,
    1.004_077_356_197_944_3,
];

/// `ln Γ(1 + x)`, accurate for small `|x|` where the generic routine loses
/// relative precision.
pub fn ln_gamma_1p(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        // ln Γ(1+x) = -γx + Σ_{k≥2} (-1)^k ζ(k) x^k / k
        let mut sum = -EULER_GAMMA * x;
        let mut pow = x;
        for (i, z) in ZETA.iter().enumerate() {
            let k = (i + 2) as f64;
            pow *= x;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * z * pow / k;
        }
        sum
    } else {
        statrs::function::gamma::ln_gamma(1.0 + x)
    }
}

/// `Γ(1 + x)` for `x > -1`.
pub fn gamma_1p(x: f64) -> f64 {
    ln_gamma_1p(x).exp()
}

/// `(1 - Γ(1+x)) / x`, with the `x → 0` limit γ_E.
pub fn one_minus_gamma_over(x: f64) -> f64 {
    if x.abs() < 1e-9 {
        EULER_GAMMA
    } else {
        -(ln_gamma_1p(x)).exp_m1() / x
    }
}

/// `(1 - b^{-x}) / x` for base `b > 1`, with the `x → 0` limit `ln b`.
pub fn one_minus_pow_neg_over(base: f64, x: f64) -> f64 {
    let lb = base.ln();
    if x.abs() < 1e-9 {
        lb
    } else {
        -(-x * lb).exp_m1() / x
    }
}

/// Upper `1 - alpha` quantile of the chi-square distribution with one degree
/// of freedom.
pub fn chi2_1_quantile(level: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    z * z
}

/// Standard normal density with mean and sd.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics
/// (the default `type = 7` rule). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

/// Sample median; even `n` averages the two central order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Pearson correlation. Returns 1 when both inputs are identical, 0 when one
/// of them has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if a == b {
        return 1.0;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}
