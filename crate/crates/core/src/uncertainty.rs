//! Variance machinery: delta-method submodel variances, the correlation-based
//! covariance approximation between submodels, fixed- and random-weight
//! variances of the averaged return level, the BMA variance decomposition,
//! and nonparametric bootstrap standard errors.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::estimators::{fit_fixed_xi_mle_from, FitMethod, FitResult};
use crate::gev::{neg_log_lik, quantile_factor, GevParams};
use crate::lmoments::resample;
use crate::rng;
use crate::special::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaVariance {
    /// `wᵀ C w`.
    pub var_fixed: f64,
    /// Random-weight variance under the Dirichlet weight model.
    pub var_random: f64,
    pub se_bootstrap: Option<f64>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    /// Whether `C` passed a positive-semidefiniteness check.
    pub c_is_psd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmaVariance {
    pub among_model: f64,
    pub within_model: f64,
    pub total: f64,
}

/// Observed information of the fixed-shape likelihood in `(μ, σ)` by central
/// finite differences with step `1e-5·σ`.
pub fn observed_information_fixed_xi(data: &[f64], params: &GevParams) -> Result<[[f64; 2]; 2]> {
    let GevParams { mu, sigma, xi } = *params;
    let h = 1e-5 * sigma;
    let f = |m: f64, s: f64| neg_log_lik(m, s, xi, data);
    let f0 = f(mu, sigma);
    let fpp = f(mu + h, sigma + h);
    let fpm = f(mu + h, sigma - h);
    let fmp = f(mu - h, sigma + h);
    let fmm = f(mu - h, sigma - h);
    let h_mm = (f(mu + h, sigma) - 2.0 * f0 + f(mu - h, sigma)) / (h * h);
    let h_ss = (f(mu, sigma + h) - 2.0 * f0 + f(mu, sigma - h)) / (h * h);
    let h_ms = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
    let info = [[h_mm, h_ms], [h_ms, h_ss]];
    if info.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GevError::SingularInformation { xi });
    }
    Ok(info)
}

fn invert_pd_2x2(m: [[f64; 2]; 2], xi: f64) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(m[0][0] > 0.0 && det > 0.0) {
        return Err(GevError::SingularInformation { xi });
    }
    Ok([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Asymptotic covariance of `(μ̂, σ̂)` at fixed shape: the inverse observed
/// information at the fixed-shape MLE. Non-MLE fits are first moved to the
/// likelihood optimum at the same shape.
pub fn fixed_xi_covariance(data: &[f64], fit: &FitResult) -> Result<[[f64; 2]; 2]> {
    let xi = fit.params.xi;
    if xi >= 0.5 {
        log::warn!("xi = {xi} is outside the regular range (-1, 1/2) for MLE asymptotics");
    }
    let at = if fit.method == FitMethod::MleFixedXi {
        fit.params
    } else {
        fit_fixed_xi_mle_from(data, xi, fit.params)?.params
    };
    invert_pd_2x2(observed_information_fixed_xi(data, &at)?, xi)
}

/// `∇qᵀ Σ ∇q` for the `q`-quantile at shape `xi`.
pub fn quantile_var_from_cov(cov: &[[f64; 2]; 2], xi: f64, q: f64) -> f64 {
    let g = [1.0, quantile_factor(xi, -q.ln())];
    g[0] * g[0] * cov[0][0] + 2.0 * g[0] * g[1] * cov[0][1] + g[1] * g[1] * cov[1][1]
}

/// Delta-method variance of the return level at exceedance probability `p`
/// for a fixed-shape submodel.
pub fn delta_var_fixed_xi(data: &[f64], fit: &FitResult, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GevError::InvalidArgument(format!("p must be in (0,1), got {p}")));
    }
    let cov = fixed_xi_covariance(data, fit)?;
    let v = quantile_var_from_cov(&cov, fit.params.xi, 1.0 - p);
    if !(v > 0.0) {
        return Err(GevError::SingularInformation { xi: fit.params.xi });
    }
    Ok(v)
}

/// Asymptotic covariance of the unrestricted MLE `(μ̂, σ̂, ξ̂)`: inverse
/// observed information by central differences (steps `1e-5·σ` and `1e-5`).
pub fn mle_covariance(data: &[f64], params: &GevParams) -> Result<[[f64; 3]; 3]> {
    let x0 = [params.mu, params.sigma, params.xi];
    if params.xi >= 0.5 {
        log::warn!("xi = {} is outside the regular range (-1, 1/2) for MLE asymptotics", params.xi);
    }
    let h = [1e-5 * params.sigma, 1e-5 * params.sigma, 1e-5];
    let f = |x: [f64; 3]| neg_log_lik(x[0], x[1], x[2], data);
    let shifted = |i: usize, a: f64, j: usize, b: f64| {
        let mut x = x0;
        x[i] += a;
        x[j] += b;
        f(x)
    };
    let f0 = f(x0);
    let mut info = DMatrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        info[(i, i)] = (shifted(i, h[i], i, 0.0) - 2.0 * f0 + shifted(i, -h[i], i, 0.0)) / (h[i] * h[i]);
        for j in 0..i {
            let v = (shifted(i, h[i], j, h[j]) - shifted(i, h[i], j, -h[j]) - shifted(i, -h[i], j, h[j])
                + shifted(i, -h[i], j, -h[j]))
                / (4.0 * h[i] * h[j]);
            info[(i, j)] = v;
            info[(j, i)] = v;
        }
    }
    if info.iter().any(|v| !v.is_finite()) {
        return Err(GevError::SingularInformation { xi: params.xi });
    }
    let inv = info
        .cholesky()
        .ok_or(GevError::SingularInformation { xi: params.xi })?
        .inverse();
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (inv[(i, j)] + inv[(j, i)]))))
}

/// Delta-method variance of the `period` return level under the full MLE
/// covariance; the shape derivative is a central difference.
pub fn mle_return_level_var(data: &[f64], params: &GevParams, period: f64) -> Result<f64> {
    if !(period > 1.0) {
        return Err(GevError::InvalidArgument(format!("return period must be > 1, got {period}")));
    }
    let cov = mle_covariance(data, params)?;
    let y = -(-1.0 / period).ln_1p();
    let h = 1e-6;
    let q = |xi: f64| params.sigma * quantile_factor(xi, y);
    let g = [1.0, quantile_factor(params.xi, y), (q(params.xi + h) - q(params.xi - h)) / (2.0 * h)];
    let v: f64 = (0..3).map(|i| (0..3).map(|j| g[i] * cov[i][j] * g[j]).sum::<f64>()).sum();
    if !(v > 0.0) {
        return Err(GevError::SingularInformation { xi: params.xi });
    }
    Ok(v)
}

/// Pearson correlation between two submodels over the nine deciles plus the
/// three parameters, treated as twelve paired observations.
pub fn submodel_correlation(a: &GevParams, b: &GevParams) -> f64 {
    let summary = |p: &GevParams| -> Vec<f64> {
        let mut v: Vec<f64> = (1..=9).map(|i| p.quantile(i as f64 / 10.0)).collect();
        v.extend([p.mu, p.sigma, p.xi]);
        v
    };
    pearson(&summary(a), &summary(b))
}

pub fn correlation_matrix(models: &[GevParams]) -> Vec<Vec<f64>> {
    let k = models.len();
    let mut rho = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let r = submodel_correlation(&models[i], &models[j]);
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    rho
}

/// `C_ij = ρ_ij √(v_i v_j)`.
pub fn covariance_from_correlation(var: &[f64], rho: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = var.len();
    if rho.len() != k || rho.iter().any(|r| r.len() != k) {
        return Err(GevError::DimensionMismatch { expected: k, got: rho.len() });
    }
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let r = if i == j { 1.0 } else { rho[i][j] };
                    r * (var[i] * var[j]).sqrt()
                })
                .collect()
        })
        .collect())
}

fn quad_form(w: &[f64], m: &[Vec<f64>]) -> f64 {
    w.iter()
        .enumerate()
        .map(|(i, wi)| wi * m[i].iter().zip(w).map(|(c, wj)| c * wj).sum::<f64>())
        .sum()
}

/// Fixed-weight variance `Σ w_k² v_k + Σ_{i≠j} w_i w_j ρ_ij √(v_i v_j)`.
pub fn ma_var_fixed_weights(w: &[f64], var: &[f64], rho: &[Vec<f64>]) -> Result<f64> {
    if w.len() != var.len() {
        return Err(GevError::DimensionMismatch { expected: w.len(), got: var.len() });
    }
    let c = covariance_from_correlation(var, rho)?;
    Ok(quad_form(w, &c))
}

/// Dirichlet weight covariance: `w_k(1−w_k)/2` on the diagonal and
/// `−w_i w_j / 2` off it.
pub fn dirichlet_cov(w: &[f64]) -> Vec<Vec<f64>> {
    let k = w.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j {
                        w[i] * (1.0 - w[i]) / 2.0
                    } else {
                        -w[i] * w[j] / 2.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Centered moving average of order `q`; windows are truncated at the ends.
pub fn moving_average(r: &[f64], q: usize) -> Vec<f64> {
    let k = r.len();
    let q = q.max(1);
    let back = (q - 1) / 2;
    let fwd = q / 2;
    (0..k)
        .map(|i| {
            let a = i.saturating_sub(back);
            let b = (i + fwd).min(k - 1);
            r[a..=b].iter().sum::<f64>() / (b - a + 1) as f64
        })
        .collect()
}

/// Random-weight variance `r̃ᵀ D r̃ + tr(D C) + ŵᵀ C ŵ` with `r̃` the order-`q`
/// moving average of the submodel return levels.
pub fn ma_var_random_weights(w: &[f64], r: &[f64], c: &[Vec<f64>], q: usize) -> Result<f64> {
    let k = w.len();
    if r.len() != k {
        return Err(GevError::DimensionMismatch { expected: k, got: r.len() });
    }
    if c.len() != k || c.iter().any(|row| row.len() != k) {
        return Err(GevError::DimensionMismatch { expected: k, got: c.len() });
    }
    let d = dirichlet_cov(w);
    let rs = moving_average(r, q);
    let trace: f64 = (0..k)
        .map(|i| (0..k).map(|j| d[i][j] * c[j][i]).sum::<f64>())
        .sum();
    Ok(quad_form(&rs, &d) + trace + quad_form(w, c))
}

/// Positive semidefiniteness up to a relative eigenvalue tolerance.
pub fn is_psd(m: &[Vec<f64>]) -> bool {
    let k = m.len();
    if k == 0 {
        return true;
    }
    let dm = DMatrix::from_fn(k, k, |i, j| 0.5 * (m[i][j] + m[j][i]));
    let eig = SymmetricEigen::new(dm);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    eig.eigenvalues.iter().all(|&e| e >= -1e-10 * max.max(1e-300))
}

/// Full variance summary for an averaged return level.
pub fn ma_variance(
    w: &[f64],
    r: &[f64],
    var: &[f64],
    models: &[GevParams],
    q: usize,
) -> Result<MaVariance> {
    let rho = correlation_matrix(models);
    let c = covariance_from_correlation(var, &rho)?;
    let var_fixed = quad_form(w, &c);
    let var_random = ma_var_random_weights(w, r, &c, q)?;
    Ok(MaVariance {
        var_fixed,
        var_random,
        se_bootstrap: None,
        c_is_psd: is_psd(&c),
        d: dirichlet_cov(w),
        c,
    })
}

/// Posterior variance decomposition of a model-averaged prediction.
pub fn bma_variance(w: &[f64], rl: &[f64], var: &[f64]) -> Result<BmaVariance> {
    if w.len() != rl.len() || w.len() != var.len() {
        return Err(GevError::DimensionMismatch { expected: w.len(), got: rl.len().min(var.len()) });
    }
    let mean: f64 = w.iter().zip(rl).map(|(a, b)| a * b).sum();
    let among: f64 = w.iter().zip(rl).map(|(a, b)| a * (b - mean).powi(2)).sum();
    let within: f64 = w.iter().zip(var).map(|(a, b)| a * b).sum();
    Ok(BmaVariance {
        among_model: among,
        within_model: within,
        total: among + within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub se: f64,
    pub mean: f64,
    /// Successful replicate values in replicate order.
    pub values: Vec<f64>,
    pub failures: usize,
}

/// Nonparametric bootstrap of an arbitrary scalar statistic. Replicate `i`
/// uses the stream `(seed, i)`; failed replicates are dropped and counted.
pub fn bootstrap_statistic<F>(data: &[f64], b: usize, seed: u64, stat: F) -> Result<BootstrapSummary>
where
    F: Fn(&[f64], u64) -> Result<f64> + Sync,
{
    let mut v = bootstrap_vector(data, b, seed, 1, |res, s| stat(res, s).map(|x| vec![x]))?;
    Ok(v.remove(0))
}

/// Joint bootstrap of a `dim`-vector statistic on shared resamples. A
/// replicate is dropped unless every component is finite, so all summaries
/// are over the same replicates.
pub fn bootstrap_vector<F>(data: &[f64], b: usize, seed: u64, dim: usize, stat: F) -> Result<Vec<BootstrapSummary>>
where
    F: Fn(&[f64], u64) -> Result<Vec<f64>> + Sync,
{
    if b < 2 {
        return Err(GevError::InvalidArgument("bootstrap size must be >= 2".into()));
    }
    let n = data.len();
    let results: Vec<Option<Vec<f64>>> = (0..b as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::rng_from(seed, &[0x4253, i]);
            let res = resample(data, n, &mut r);
            stat(&res, rng::derive_seed(seed, &[0x5354, i]))
                .ok()
                .filter(|v| v.len() == dim && v.iter().all(|x| x.is_finite()))
        })
        .collect();
    let ok: Vec<&Vec<f64>> = results.iter().flatten().collect();
    let failures = b - ok.len();
    if ok.len() < 2 {
        return Err(GevError::NonConvergence(format!(
            "only {} of {b} bootstrap replicates succeeded",
            ok.len()
        )));
    }
    Ok((0..dim)
        .map(|d| {
            let values: Vec<f64> = ok.iter().map(|v| v[d]).collect();
            let m = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            BootstrapSummary {
                se: var.sqrt(),
                mean: m,
                values,
                failures,
            }
        })
        .collect())
}
