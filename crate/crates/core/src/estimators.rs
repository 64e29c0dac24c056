//! Point estimators for the GEV: full and fixed-shape MLE/LME, the two
//! L-moment-restricted MLEs, and the Coles–Dixon penalized MLE.

use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::gev::{neg_log_lik, population_l_moments_unchecked, GevParams};
use crate::lmoments::{sample_l_moments, SampleLMoments};
use crate::optim::{golden_section, nelder_mead, NelderMeadOptions};
use crate::special::{gamma_1p, one_minus_gamma_over, one_minus_pow_neg_over};

/// Box constraint on the shape parameter for every optimizer-based fit.
pub const XI_BOUND: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FitMethod {
    Mle,
    Lme,
    MleFixedXi,
    LmeFixedXi,
    ReMle1,
    ReMle2,
    MleCd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: GevParams,
    pub converged: bool,
    /// Negative log-likelihood at `params` on the fitting data (`+∞` if some
    /// observation is outside the fitted support).
    pub neg_log_lik: f64,
    pub method: FitMethod,
}

fn check_data(data: &[f64], needed: usize) -> Result<()> {
    if data.len() < needed {
        return Err(GevError::TooFewObservations { needed, got: data.len() });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(GevError::InvalidArgument("data must be finite".into()));
    }
    let first = data[0];
    if data.iter().all(|&x| x == first) {
        return Err(GevError::DegenerateSample);
    }
    Ok(())
}

fn nll_of(p: &GevParams, data: &[f64]) -> f64 {
    neg_log_lik(p.mu, p.sigma, p.xi, data)
}

/// `(μ, σ)` of the L-moment fit at a known shape.
pub fn fixed_xi_lme_from(l: &SampleLMoments, xi: f64) -> Result<GevParams> {
    if !(xi > -1.0) {
        return Err(GevError::InvalidParams(format!("xi must be > -1, got {xi}")));
    }
    if !(l.l2 > 0.0) {
        return Err(GevError::ConstraintInfeasible(format!(
            "sample l2 = {} gives nonpositive scale",
            l.l2
        )));
    }
    let sigma = l.l2 / (one_minus_pow_neg_over(2.0, xi) * gamma_1p(xi));
    let mu = l.l1 - sigma * one_minus_gamma_over(xi);
    GevParams::new(mu, sigma, xi)
}

pub fn fit_fixed_xi_lme(data: &[f64], xi: f64) -> Result<FitResult> {
    check_data(data, 4)?;
    let l = sample_l_moments(data)?;
    let params = fixed_xi_lme_from(&l, xi)?;
    Ok(FitResult {
        params,
        converged: true,
        neg_log_lik: nll_of(&params, data),
        method: FitMethod::LmeFixedXi,
    })
}

/// Shape from L-skewness by Hosking's rational approximation.
pub fn lme_shape(t3: f64) -> f64 {
    let c = 2.0 / (3.0 + t3) - std::f64::consts::LN_2 / 3f64.ln();
    7.8590 * c + 2.9554 * c * c
}

pub fn fit_lme(data: &[f64]) -> Result<FitResult> {
    check_data(data, 4)?;
    let l = sample_l_moments(data)?;
    let xi = lme_shape(l.t3());
    let params = fixed_xi_lme_from(&l, xi)?;
    Ok(FitResult {
        params,
        converged: true,
        neg_log_lik: nll_of(&params, data),
        method: FitMethod::Lme,
    })
}

/// Inflate the scale until every observation is inside the support. The
/// location is held fixed, so the bound `μ + σ/ξ` moves away from the data
/// for either sign of ξ.
fn make_feasible(mut p: GevParams, data: &[f64]) -> GevParams {
    for _ in 0..200 {
        if nll_of(&p, data).is_finite() {
            return p;
        }
        p.sigma *= 1.25;
    }
    p
}

fn xi_from_z(z: f64) -> f64 {
    XI_BOUND * z.tanh()
}

fn z_from_xi(xi: f64) -> f64 {
    (xi.clamp(-XI_BOUND * 0.999_999, XI_BOUND * 0.999_999) / XI_BOUND).atanh()
}

fn opts() -> NelderMeadOptions {
    NelderMeadOptions {
        max_evals: 20_000,
        x_tol: 1e-9,
        f_tol: 1e-13,
        restarts: 3,
    }
}

/// Two-parameter likelihood fit at fixed shape, starting from `start`.
pub fn fit_fixed_xi_mle_from(data: &[f64], xi: f64, start: GevParams) -> Result<FitResult> {
    let start = make_feasible(GevParams { xi, ..start }, data);
    if !nll_of(&start, data).is_finite() {
        return Err(GevError::NonConvergence(format!(
            "no feasible start at fixed xi = {xi}"
        )));
    }
    let (m0, s0) = (start.mu, start.sigma);
    let f = |v: &[f64]| neg_log_lik(m0 + s0 * v[0], s0 * v[1].exp(), xi, data);
    let m = nelder_mead(f, &[0.0, 0.0], &[0.1, 0.1], &opts());
    if !m.f.is_finite() {
        return Err(GevError::NonConvergence(format!("fixed-xi MLE at xi = {xi}")));
    }
    let params = GevParams::new(m0 + s0 * m.x[0], s0 * m.x[1].exp(), xi)?;
    Ok(FitResult {
        params,
        converged: m.converged,
        neg_log_lik: m.f,
        method: FitMethod::MleFixedXi,
    })
}

pub fn fit_fixed_xi_mle(data: &[f64], xi: f64) -> Result<FitResult> {
    check_data(data, 4)?;
    let l = sample_l_moments(data)?;
    let start = fixed_xi_lme_from(&l, xi)?;
    fit_fixed_xi_mle_from(data, xi, start)
}

fn three_param_starts(data: &[f64], l: &SampleLMoments) -> Vec<GevParams> {
    let mut starts = Vec::new();
    if let Ok(lme) = fixed_xi_lme_from(l, lme_shape(l.t3()).clamp(-0.95, 0.95)) {
        starts.push(lme);
        starts.push(GevParams { sigma: lme.sigma * 1.2, ..lme });
        starts.push(GevParams { sigma: lme.sigma * 0.8, ..lme });
    }
    if let Ok(gum) = fixed_xi_lme_from(l, 0.0) {
        starts.push(gum);
    }
    starts
        .into_iter()
        .map(|p| make_feasible(p, data))
        .filter(|p| nll_of(p, data).is_finite())
        .collect()
}

/// Minimize `objective(μ, σ, ξ)` over the box `|ξ| < 0.99` from several
/// starts and keep the best.
fn fit_three_param<F>(data: &[f64], objective: F, method: FitMethod) -> Result<FitResult>
where
    F: Fn(f64, f64, f64) -> f64,
{
    check_data(data, 10)?;
    let l = sample_l_moments(data)?;
    let starts = three_param_starts(data, &l);
    let mut best: Option<(f64, GevParams, bool)> = None;
    for s in starts {
        let (m0, s0) = (s.mu, s.sigma);
        let f = |v: &[f64]| objective(m0 + s0 * v[0], s0 * v[1].exp(), xi_from_z(v[2]));
        let m = nelder_mead(f, &[0.0, 0.0, z_from_xi(s.xi)], &[0.1, 0.1, 0.1], &opts());
        if !m.f.is_finite() {
            continue;
        }
        let p = GevParams {
            mu: m0 + s0 * m.x[0],
            sigma: s0 * m.x[1].exp(),
            xi: xi_from_z(m.x[2]),
        };
        if best.as_ref().is_none_or(|b| m.f < b.0) {
            best = Some((m.f, p, m.converged));
        }
    }
    let (_, params, converged) =
        best.ok_or_else(|| GevError::NonConvergence(format!("{method:?}: no finite optimum")))?;
    params.validate()?;
    Ok(FitResult {
        params,
        converged,
        neg_log_lik: nll_of(&params, data),
        method,
    })
}

pub fn fit_mle(data: &[f64]) -> Result<FitResult> {
    fit_three_param(data, |m, s, x| neg_log_lik(m, s, x, data), FitMethod::Mle)
}

/// Coles–Dixon penalty `p(ξ)` on the log scale.
pub fn cd_log_penalty(xi: f64, alpha: f64, lambda: f64) -> f64 {
    if xi >= 0.0 {
        0.0
    } else if xi > -1.0 {
        -lambda * (1.0 / (1.0 + xi) - 1.0).powf(alpha)
    } else {
        f64::NEG_INFINITY
    }
}

pub fn fit_mle_cd(data: &[f64], alpha: f64, lambda: f64) -> Result<FitResult> {
    fit_three_param(
        data,
        |m, s, x| neg_log_lik(m, s, x, data) - cd_log_penalty(x, alpha, lambda),
        FitMethod::MleCd,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReMleVariant {
    /// `λ1 = l1`
    MeanMatched,
    /// `λ1 = l1` and `λ2 = l2`
    MeanAndScaleMatched,
}

pub fn fit_remle(data: &[f64], variant: ReMleVariant) -> Result<FitResult> {
    match variant {
        ReMleVariant::MeanMatched => fit_remle1(data),
        ReMleVariant::MeanAndScaleMatched => fit_remle2(data),
    }
}

/// Maximum likelihood over `(σ, ξ)` with `μ = l1 − σ(1 − Γ(1+ξ))/ξ`.
fn fit_remle1(data: &[f64]) -> Result<FitResult> {
    check_data(data, 10)?;
    let l = sample_l_moments(data)?;
    let tied_mu = |sigma: f64, xi: f64| l.l1 - sigma * one_minus_gamma_over(xi);
    let obj = |sigma: f64, xi: f64| neg_log_lik(tied_mu(sigma, xi), sigma, xi, data);
    let mut best: Option<(f64, f64, f64, bool)> = None;
    for s in three_param_starts(data, &l) {
        // re-derive the tied location and inflate σ until feasible
        let mut sigma = s.sigma;
        for _ in 0..200 {
            if obj(sigma, s.xi).is_finite() {
                break;
            }
            sigma *= 1.25;
        }
        if !obj(sigma, s.xi).is_finite() {
            continue;
        }
        let s0 = sigma;
        let f = |v: &[f64]| obj(s0 * v[0].exp(), xi_from_z(v[1]));
        let m = nelder_mead(f, &[0.0, z_from_xi(s.xi)], &[0.1, 0.1], &opts());
        if m.f.is_finite() && best.is_none_or(|b| m.f < b.0) {
            best = Some((m.f, s0 * m.x[0].exp(), xi_from_z(m.x[1]), m.converged));
        }
    }
    let (f, sigma, xi, converged) =
        best.ok_or_else(|| GevError::NonConvergence("Re.MLE1: no finite optimum".into()))?;
    let params = GevParams::new(tied_mu(sigma, xi), sigma, xi)?;
    Ok(FitResult {
        params,
        converged,
        neg_log_lik: f,
        method: FitMethod::ReMle1,
    })
}

/// Maximum likelihood over ξ alone with `(μ, σ)` from the fixed-shape
/// L-moment equations.
fn fit_remle2(data: &[f64]) -> Result<FitResult> {
    check_data(data, 10)?;
    let l = sample_l_moments(data)?;
    if !(l.l2 > 0.0) {
        return Err(GevError::ConstraintInfeasible("l2 <= 0".into()));
    }
    let obj = |xi: f64| match fixed_xi_lme_from(&l, xi) {
        Ok(p) => nll_of(&p, data),
        Err(_) => f64::INFINITY,
    };
    let step = 0.01;
    let grid: Vec<f64> = (0..=198).map(|i| -XI_BOUND + step * i as f64).collect();
    let (imin, fmin) = grid
        .iter()
        .map(|&x| obj(x))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty grid");
    if !fmin.is_finite() {
        return Err(GevError::ConstraintInfeasible(
            "no shape keeps all data inside the L-moment-matched support".into(),
        ));
    }
    let lo = grid[imin.saturating_sub(1)];
    let hi = grid[(imin + 1).min(grid.len() - 1)];
    let (xi, f) = golden_section(obj, lo, hi, 1e-10);
    let (xi, f) = if f <= fmin { (xi, f) } else { (grid[imin], fmin) };
    let params = fixed_xi_lme_from(&l, xi)?;
    Ok(FitResult {
        params,
        converged: true,
        neg_log_lik: f,
        method: FitMethod::ReMle2,
    })
}

/// Population `(λ1, λ2)` residuals of a fit against the sample; used to check
/// the restricted fits.
pub fn l_moment_residuals(fit: &FitResult, data: &[f64]) -> Result<[f64; 2]> {
    let l = sample_l_moments(data)?;
    let p = fit.params;
    let lam = population_l_moments_unchecked(p.mu, p.sigma, p.xi);
    Ok([lam[0] - l.l1, lam[1] - l.l2])
}
