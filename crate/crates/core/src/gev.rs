//! Generalized extreme value distribution.
//!
//! Parameterized as in Hosking & Wallis: `F(x) = exp{-(1 - ξ(x-μ)/σ)^{1/ξ}}`,
//! so `ξ < 0` is the heavy, unbounded upper tail and `ξ > 0` has the finite
//! upper endpoint `μ + σ/ξ`. For `|ξ| < GUMBEL_EPS` the Gumbel limit is used.
//! Away from zero the `(1 - y^ξ)/ξ` style terms are evaluated through
//! `expm1`/`ln_1p`, so accuracy does not degrade near the switch.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::rng;
use crate::special::{gamma_1p, one_minus_gamma_over, one_minus_pow_neg_over};

pub const GUMBEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        let p = Self { mu, sigma, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.sigma.is_finite() && self.xi.is_finite()) {
            return Err(GevError::InvalidParams(format!("non-finite parameters {self:?}")));
        }
        if self.sigma <= 0.0 {
            return Err(GevError::InvalidParams(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.xi <= -1.0 {
            return Err(GevError::InvalidParams(format!("xi must be > -1, got {}", self.xi)));
        }
        Ok(())
    }

    /// Lower (for ξ < 0) or upper (for ξ > 0) endpoint of the support.
    pub fn endpoint(&self) -> Option<f64> {
        if self.xi.abs() < GUMBEL_EPS {
            None
        } else {
            Some(self.mu + self.sigma / self.xi)
        }
    }

    /// Whether `x` lies strictly inside the support.
    pub fn in_support(&self, x: f64) -> bool {
        self.xi.abs() < GUMBEL_EPS || 1.0 - self.xi * (x - self.mu) / self.sigma > 0.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.xi.abs() < GUMBEL_EPS {
            return (-(-z).exp()).exp();
        }
        let y = 1.0 - self.xi * z;
        if y <= 0.0 {
            return if self.xi > 0.0 { 1.0 } else { 0.0 };
        }
        let t = ((-self.xi * z).ln_1p() / self.xi).exp();
        (-t).exp()
    }

    /// `q`-quantile; exact inverse of [`cdf`](Self::cdf) on the support.
    pub fn quantile(&self, q: f64) -> f64 {
        let y = -q.ln();
        self.mu + self.sigma * quantile_factor(self.xi, y)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.xi.abs() < GUMBEL_EPS {
            return -self.sigma.ln() - z - (-z).exp();
        }
        let y = 1.0 - self.xi * z;
        if y <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ly = (-self.xi * z).ln_1p();
        -self.sigma.ln() + (1.0 / self.xi - 1.0) * ly - (ly / self.xi).exp()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }
}

/// `(1 - y^ξ)/ξ`, the standardized quantile at `y = -ln q`.
pub fn quantile_factor(xi: f64, y: f64) -> f64 {
    if xi.abs() < GUMBEL_EPS {
        -y.ln()
    } else {
        -(xi * y.ln()).exp_m1() / xi
    }
}

pub fn cdf(params: &GevParams, x: f64) -> Result<f64> {
    params.validate()?;
    Ok(params.cdf(x))
}

pub fn quantile(params: &GevParams, q: f64) -> Result<f64> {
    params.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(GevError::InvalidArgument(format!("probability must be in (0,1), got {q}")));
    }
    Ok(params.quantile(q))
}

/// T-year return level, the `1 - 1/T` quantile.
pub fn return_level(params: &GevParams, period: f64) -> Result<f64> {
    if !(period > 1.0) {
        return Err(GevError::InvalidArgument(format!("return period must be > 1, got {period}")));
    }
    quantile(params, 1.0 - 1.0 / period)
}

/// Log-likelihood; `-∞` when any observation falls outside the support.
pub fn log_likelihood(params: &GevParams, data: &[f64]) -> Result<f64> {
    params.validate()?;
    if data.is_empty() {
        return Err(GevError::TooFewObservations { needed: 1, got: 0 });
    }
    Ok(-neg_log_lik(params.mu, params.sigma, params.xi, data))
}

/// Negative log-likelihood without validation, `+∞` outside the support or
/// for `σ ≤ 0`. This is the objective every likelihood fit minimizes.
pub fn neg_log_lik(mu: f64, sigma: f64, xi: f64, data: &[f64]) -> f64 {
    if !(sigma > 0.0) || !mu.is_finite() || !xi.is_finite() {
        return f64::INFINITY;
    }
    let n = data.len() as f64;
    let ls = sigma.ln();
    let mut acc = n * ls;
    if xi.abs() < GUMBEL_EPS {
        for &x in data {
            let z = (x - mu) / sigma;
            acc += z + (-z).exp();
        }
        return acc;
    }
    let inv = 1.0 / xi;
    for &x in data {
        let a = -xi * (x - mu) / sigma;
        if a <= -1.0 {
            return f64::INFINITY;
        }
        let ly = a.ln_1p();
        acc += (1.0 - inv) * ly + (ly * inv).exp();
    }
    if acc.is_nan() {
        f64::INFINITY
    } else {
        acc
    }
}

/// Population L-moments `(λ1, λ2, λ3)`.
pub fn population_l_moments(params: &GevParams) -> Result<[f64; 3]> {
    params.validate()?;
    Ok(population_l_moments_unchecked(params.mu, params.sigma, params.xi))
}

pub(crate) fn population_l_moments_unchecked(mu: f64, sigma: f64, xi: f64) -> [f64; 3] {
    let l1 = mu + sigma * one_minus_gamma_over(xi);
    let h2 = one_minus_pow_neg_over(2.0, xi);
    let h3 = one_minus_pow_neg_over(3.0, xi);
    let l2 = sigma * gamma_1p(xi) * h2;
    let tau3 = 2.0 * h3 / h2 - 3.0;
    [l1, l2, l2 * tau3]
}

/// L-skewness `τ3` of a GEV with shape `xi`.
pub fn l_skewness(xi: f64) -> f64 {
    2.0 * one_minus_pow_neg_over(3.0, xi) / one_minus_pow_neg_over(2.0, xi) - 3.0
}

/// Inverse-CDF sampling from an explicit generator.
pub fn sample_with<R: Rng + ?Sized>(params: &GevParams, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            params.quantile(u)
        })
        .collect()
}

/// Deterministic sample of size `n` for a given seed.
pub fn sample(params: &GevParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(GevError::InvalidArgument("sample size must be >= 1".into()));
    }
    let mut r = rng::rng_from(seed, &[]);
    Ok(sample_with(params, n, &mut r))
}

/// Gradient of the return level at exceedance probability `p` with respect to
/// `(μ, σ)` for fixed shape: `[1, (1 - y_p^ξ)/ξ]` with `y_p = -ln(1-p)`.
pub fn rl_gradient_fixed_xi(params: &GevParams, p: f64) -> [f64; 2] {
    [1.0, quantile_factor(params.xi, -(-p).ln_1p())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(mu: f64, sigma: f64, xi: f64) -> GevParams {
        GevParams::new(mu, sigma, xi).unwrap()
    }

    #[test]
    fn gumbel_cdf_at_location() {
        assert!((p(0.0, 1.0, 0.0).cdf(0.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((p(0.0, 1.0, 1e-12).cdf(0.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn heavy_tail_reference_quantile() {
        let g = p(100.0, 30.0, -0.35);
        let q = g.quantile(0.99);
        assert!((q - 443.1).abs() < 0.05, "{q}");
        assert!((g.cdf(q) - 0.99).abs() < 1e-12);
        assert!((return_level(&g, 100.0).unwrap() - q).abs() < 1e-12);
    }

    #[test]
    fn bounded_tail_endpoint() {
        let g = p(100.0, 30.0, 0.2);
        assert_eq!(g.cdf(250.0), 1.0);
        assert_eq!(g.cdf(300.0), 1.0);
        let h = p(100.0, 30.0, -0.2);
        assert_eq!(h.cdf(100.0 - 150.0), 0.0);
    }

    #[test]
    fn quantile_matches_bisection_on_cdf() {
        let g = p(100.0, 30.0, -0.2);
        let target = 0.995;
        let (mut a, mut b) = (0.0, 5000.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g.cdf(m) < target {
                a = m
            } else {
                b = m
            }
        }
        let q = g.quantile(target);
        assert!((q - 0.5 * (a + b)).abs() < 1e-10 * q);
    }

    #[test]
    fn gumbel_quantile_and_return_level() {
        let g = p(10.0, 2.0, 0.0);
        assert!((g.quantile((-1f64).exp()) - 10.0).abs() < 1e-12);
        let t = 50.0f64;
        let closed = 10.0 - 2.0 * (-(1.0 - 1.0 / t).ln()).ln();
        assert!((return_level(&g, t).unwrap() - closed).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_cases() {
        let g = p(0.0, 1.0, 0.0);
        assert!((log_likelihood(&g, &[0.0]).unwrap() + 1.0).abs() < 1e-15);
        let b = p(100.0, 30.0, 0.2);
        assert_eq!(log_likelihood(&b, &[120.0, 260.0]).unwrap(), f64::NEG_INFINITY);
        let data = [90.0, 120.0, 150.0, 300.0];
        let h = p(100.0, 30.0, -0.3);
        let total = log_likelihood(&h, &data).unwrap();
        let parts: f64 = data.iter().map(|&x| log_likelihood(&h, &[x]).unwrap()).sum();
        assert!((total - parts).abs() < 1e-12);
        let lp: f64 = data.iter().map(|&x| h.ln_pdf(x)).sum();
        assert!((total - lp).abs() < 1e-12);
        assert!(log_likelihood(&h, &[]).is_err());
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(GevParams::new(0.0, 0.0, 0.1).is_err());
        assert!(GevParams::new(0.0, 1.0, -1.0).is_err());
        let bad = GevParams { mu: 0.0, sigma: -1.0, xi: 0.0 };
        assert!(cdf(&bad, 0.0).is_err());
        assert!(quantile(&bad, 0.5).is_err());
        assert!(return_level(&p(0.0, 1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn gumbel_l_moment_limits() {
        let l = population_l_moments(&p(0.0, 1.0, 0.0)).unwrap();
        assert!((l[0] - 0.5772156649).abs() < 1e-9);
        assert!((l[1] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l[2] / l[1] - 0.1699).abs() < 1e-4);
        assert!(population_l_moments(&GevParams { mu: 0.0, sigma: 1.0, xi: -1.0 }).is_err());
    }

    #[test]
    fn gradient_reference_value() {
        let g = p(100.0, 30.0, -0.35);
        let grad = rl_gradient_fixed_xi(&g, 0.01);
        assert_eq!(grad[0], 1.0);
        assert!((grad[1] - 11.437).abs() < 1e-3, "{}", grad[1]);
        let y = -(0.99f64).ln();
        assert!((grad[1] - (1.0 - y.powf(-0.35)) / -0.35).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = p(100.0, 30.0, -0.2);
        assert_eq!(sample(&g, 20, 5).unwrap(), sample(&g, 20, 5).unwrap());
        assert_ne!(sample(&g, 20, 5).unwrap(), sample(&g, 20, 6).unwrap());
        assert!(sample(&g, 0, 5).is_err());
    }

    #[test]
    fn sampling_median_draw() {
        struct Half;
        impl rand::RngCore for Half {
            fn next_u32(&mut self) -> u32 {
                (self.next_u64() >> 32) as u32
            }
            fn next_u64(&mut self) -> u64 {
                // Open01 maps the top 52 bits to (k + 0.5) * 2^-52
                1u64 << 63
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                rand::rand_core::impls::fill_bytes_via_next(self, dst)
            }
        }
        let g = p(100.0, 30.0, -0.2);
        let x = sample_with(&g, 1, &mut Half);
        assert!((x[0] - g.quantile(0.5)).abs() < 1e-9);
    }

    #[test]
    fn large_sample_high_quantile() {
        let g = p(100.0, 30.0, -0.2);
        let xs = sample(&g, 10_000, 11).unwrap();
        let emp = crate::special::quantile(&xs, 0.99);
        let truth = g.quantile(0.99);
        // sd of the empirical 0.99 quantile ≈ sqrt(q(1-q)/n)/f(x_q)
        let se = (0.99f64 * 0.01 / 10_000.0).sqrt() / g.pdf(truth);
        assert!((emp - truth).abs() < 4.0 * se, "emp {emp} truth {truth} se {se}");
    }
}
