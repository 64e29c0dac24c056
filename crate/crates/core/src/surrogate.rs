//! A single GEV fitted by least squares to an averaged return-level curve.

use serde::{Deserialize, Serialize};

use crate::ensemble::MaFit;
use crate::error::{GevError, Result};
use crate::estimators::XI_BOUND;
use crate::gev::GevParams;
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Default nonexceedance probabilities, dense in the upper tail.
pub const DEFAULT_PROBS: [f64; 16] = [
    0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 0.992, 0.994, 0.995, 0.996, 0.998, 0.999,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub params: GevParams,
    pub rss: f64,
    pub probs: Vec<f64>,
    /// RSS at the starting point.
    pub start_rss: f64,
    /// Largest `|q_fit − q_target| / |q_target|` over the grid.
    pub max_rel_error: f64,
}

fn rss(p: &GevParams, probs: &[f64], targets: &[f64]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&q, &t)| (p.quantile(q) - t).powi(2))
        .sum()
}

/// Minimize `Σ (q_i(μ,σ,ξ) − curve(q_i))²` from `start`.
pub fn fit_surrogate<F>(curve: F, probs: &[f64], start: GevParams) -> Result<SurrogateFit>
where
    F: Fn(f64) -> f64,
{
    if probs.len() < 4 {
        return Err(GevError::InvalidArgument("surrogate needs at least 4 probabilities".into()));
    }
    if probs.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(GevError::InvalidArgument("probabilities must be in (0,1)".into()));
    }
    let mut s = probs.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.len() != probs.len() {
        return Err(GevError::InvalidArgument("probabilities must be distinct".into()));
    }
    start.validate()?;
    let targets: Vec<f64> = probs.iter().map(|&q| curve(q)).collect();
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(GevError::InvalidArgument("target curve is not finite".into()));
    }
    let start = GevParams { xi: start.xi.clamp(-0.98, 0.98), ..start };
    let start_rss = rss(&start, probs, &targets);
    let (m0, s0) = (start.mu, start.sigma);
    let z0 = (start.xi / XI_BOUND).atanh();
    let unpack = |v: &[f64]| GevParams {
        mu: m0 + s0 * v[0],
        sigma: s0 * v[1].exp(),
        xi: XI_BOUND * v[2].tanh(),
    };
    let opts = NelderMeadOptions {
        max_evals: 40_000,
        x_tol: 1e-12,
        f_tol: 1e-16,
        restarts: 6,
    };
    let m = nelder_mead(
        |v| rss(&unpack(v), probs, &targets),
        &[0.0, 0.0, z0],
        &[0.05, 0.05, 0.05],
        &opts,
    );
    if !m.f.is_finite() {
        return Err(GevError::NonConvergence("surrogate least squares".into()));
    }
    let (params, value) = if m.f <= start_rss { (unpack(&m.x), m.f) } else { (start, start_rss) };
    params.validate()?;
    let max_rel_error = probs
        .iter()
        .zip(&targets)
        .map(|(&q, &t)| ((params.quantile(q) - t) / t).abs())
        .fold(0.0, f64::max);
    if max_rel_error > 0.05 {
        log::warn!("surrogate deviates from the averaged curve by {:.1}%", 100.0 * max_rel_error);
    }
    Ok(SurrogateFit {
        params,
        rss: value,
        probs: probs.to_vec(),
        start_rss,
        max_rel_error,
    })
}

/// Surrogate of a model-averaging fit on the default grid, started from the
/// weight-averaged submodel parameters.
pub fn surrogate_of(fit: &MaFit) -> Result<SurrogateFit> {
    fit_surrogate(|q| fit.quantile(q), &DEFAULT_PROBS, fit.mean_params())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_gev() {
        let g = GevParams::new(100.0, 30.0, -0.3).unwrap();
        let start = GevParams::new(110.0, 25.0, -0.2).unwrap();
        let s = fit_surrogate(|q| g.quantile(q), &DEFAULT_PROBS, start).unwrap();
        assert!(s.rss < 1e-8, "{}", s.rss);
        assert!((s.params.mu - 100.0).abs() < 1e-4);
        assert!((s.params.sigma - 30.0).abs() < 1e-4);
        assert!((s.params.xi + 0.3).abs() < 1e-6);
        assert!(s.rss <= s.start_rss);
    }

    #[test]
    fn rejects_short_or_invalid_grids() {
        let g = GevParams::new(0.0, 1.0, 0.0).unwrap();
        assert!(fit_surrogate(|q| g.quantile(q), &[0.5, 0.9, 0.99], g).is_err());
        assert!(fit_surrogate(|q| g.quantile(q), &[0.5, 0.9, 0.99, 1.0], g).is_err());
        assert!(fit_surrogate(|q| g.quantile(q), &[0.5, 0.9, 0.9, 0.99], g).is_err());
    }

    #[test]
    fn mixture_curve_is_tracked_closely() {
        let a = GevParams::new(100.0, 30.0, -0.35).unwrap();
        let b = GevParams::new(104.0, 28.0, -0.25).unwrap();
        let curve = |q: f64| 0.4 * a.quantile(q) + 0.6 * b.quantile(q);
        let s = fit_surrogate(curve, &DEFAULT_PROBS, b).unwrap();
        assert!(s.max_rel_error < 0.01, "{}", s.max_rel_error);
    }
}
