//! Confidence intervals for the shape parameter: profile likelihood around the
//! MLE and percentile bootstrap around the LME. Both feed candidate placement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::estimators::{fit_fixed_xi_mle_from, fit_lme, fit_mle, FitResult, XI_BOUND};
use crate::gev::GevParams;
use crate::lmoments::resample;
use crate::optim::bisect;
use crate::rng;
use crate::special::{chi2_1_quantile, quantile_sorted, sorted};

const GRID_POINTS: usize = 101;
const REFINE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiInterval {
    pub lower: f64,
    pub upper: f64,
    /// Confidence level `1 - alpha`.
    pub level: f64,
    /// Point estimate the interval was built around.
    pub estimate: f64,
    /// `(ξ, ℓ_p(ξ))` on the evaluation grid, ascending in ξ.
    pub profile: Option<Vec<(f64, f64)>>,
    /// Maximum of the profile log-likelihood.
    pub max_log_lik: Option<f64>,
    /// Bootstrap replicates of the LME shape.
    pub boot_sample: Option<Vec<f64>>,
}

impl XiInterval {
    pub fn contains(&self, xi: f64) -> bool {
        xi >= self.lower && xi <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Profile-likelihood cutoff `ℓ̂ − χ²₁(level)/2`.
    pub fn cutoff(&self) -> Option<f64> {
        self.max_log_lik.map(|m| m - chi2_1_quantile(self.level) / 2.0)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(GevError::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")))
    }
}

/// Profile log-likelihood evaluator that warm-starts each fixed-ξ fit from
/// the nearest previous solution.
struct Profiler<'a> {
    data: &'a [f64],
    anchor: GevParams,
}

impl Profiler<'_> {
    fn eval_from(&self, xi: f64, start: GevParams) -> Result<FitResult> {
        fit_fixed_xi_mle_from(self.data, xi, start).map_err(|e| GevError::CandidateFit {
            xi,
            source: Box::new(e),
        })
    }

    /// Sweep outward from the point closest to the anchor.
    fn sweep(&self, grid: &[f64]) -> Result<Vec<FitResult>> {
        let start_idx = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - self.anchor.xi).abs().total_cmp(&(b.1 - self.anchor.xi).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut out: Vec<Option<FitResult>> = vec![None; grid.len()];
        out[start_idx] = Some(self.eval_from(grid[start_idx], self.anchor)?);
        for i in (start_idx + 1)..grid.len() {
            let prev = out[i - 1].expect("filled").params;
            out[i] = Some(self.eval_from(grid[i], prev)?);
        }
        for i in (0..start_idx).rev() {
            let prev = out[i + 1].expect("filled").params;
            out[i] = Some(self.eval_from(grid[i], prev)?);
        }
        Ok(out.into_iter().map(|f| f.expect("filled")).collect())
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Profile-likelihood confidence interval for ξ at level `1 - alpha`.
pub fn profile_ci_xi(data: &[f64], alpha: f64) -> Result<XiInterval> {
    check_alpha(alpha)?;
    let mle = fit_mle(data)?;
    profile_ci_xi_from(data, alpha, &mle)
}

/// As [`profile_ci_xi`], reusing an existing full MLE.
pub fn profile_ci_xi_from(data: &[f64], alpha: f64, mle: &FitResult) -> Result<XiInterval> {
    check_alpha(alpha)?;
    let level = 1.0 - alpha;
    let prof = Profiler { data, anchor: mle.params };
    let xi_hat = mle.params.xi;
    let ll_hat = -mle.neg_log_lik;

    // curvature near the peak for a rough standard error
    let h = 0.02;
    let lo_h = (xi_hat - h).max(-XI_BOUND);
    let hi_h = (xi_hat + h).min(XI_BOUND);
    let l_lo = -prof.eval_from(lo_h, mle.params)?.neg_log_lik;
    let l_hi = -prof.eval_from(hi_h, mle.params)?.neg_log_lik;
    let curv = (l_hi + l_lo - 2.0 * ll_hat) / (0.5 * (hi_h - lo_h)).powi(2);
    let se = if curv < 0.0 { (1.0 / -curv).sqrt() } else { 0.1 };
    let mut half = (4.0 * se).clamp(0.04, 2.0);

    let cut_drop = chi2_1_quantile(level) / 2.0;
    for _ in 0..6 {
        let a = (xi_hat - half).max(-XI_BOUND);
        let b = (xi_hat + half).min(XI_BOUND);
        let grid = linspace(a, b, GRID_POINTS);
        let fits = prof.sweep(&grid)?;
        let ll: Vec<f64> = fits.iter().map(|f| -f.neg_log_lik).collect();

        let (peak, peak_ll) = ll
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("nonempty grid");
        let (max_ll, estimate) = if peak_ll > ll_hat {
            (peak_ll, grid[peak])
        } else {
            (ll_hat, xi_hat)
        };
        let cutoff = max_ll - cut_drop;

        let lower_cross = (0..peak).rev().find(|&i| ll[i] < cutoff);
        let upper_cross = ((peak + 1)..grid.len()).find(|&i| ll[i] < cutoff);
        let lower_open = lower_cross.is_none() && a > -XI_BOUND;
        let upper_open = upper_cross.is_none() && b < XI_BOUND;
        if lower_open || upper_open {
            half *= 2.0;
            continue;
        }

        let refine = |outside: usize, inside: usize| -> Result<f64> {
            let start = fits[inside].params;
            let mut failure = None;
            let root = bisect(
                |x| match prof.eval_from(x, start) {
                    Ok(f) => -f.neg_log_lik - cutoff,
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                },
                grid[outside],
                grid[inside],
                REFINE_TOL,
            );
            match failure {
                Some(e) => Err(e),
                None => Ok(root),
            }
        };
        let lower = match lower_cross {
            Some(i) => refine(i, i + 1)?,
            None => a,
        };
        let upper = match upper_cross {
            Some(i) => refine(i, i - 1)?,
            None => b,
        };
        return Ok(XiInterval {
            lower,
            upper,
            level,
            estimate,
            profile: Some(grid.into_iter().zip(ll).collect()),
            max_log_lik: Some(max_ll),
            boot_sample: None,
        });
    }
    Err(GevError::NonConvergence(
        "profile likelihood did not cross the cutoff inside the shape bounds".into(),
    ))
}

/// LME shape on each of `b` nonparametric resamples, in replicate order.
pub fn bootstrap_lme_shapes(data: &[f64], b: usize, seed: u64) -> Vec<f64> {
    let n = data.len();
    (0..b as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng::rng_from(seed, &[0x5849, i]);
            let res = resample(data, n, &mut r);
            fit_lme(&res).ok().map(|f| f.params.xi)
        })
        .collect()
}

/// Percentile bootstrap interval for the LME of ξ.
pub fn bootstrap_ci_xi(data: &[f64], alpha: f64, b: usize, seed: u64) -> Result<XiInterval> {
    check_alpha(alpha)?;
    if b < 2 {
        return Err(GevError::InvalidArgument("bootstrap size must be >= 2".into()));
    }
    let lme = fit_lme(data)?;
    let reps = bootstrap_lme_shapes(data, b, seed);
    if reps.len() < 2 {
        return Err(GevError::NonConvergence("too few successful bootstrap fits".into()));
    }
    let s = sorted(&reps);
    let mut lower = quantile_sorted(&s, alpha / 2.0);
    let mut upper = quantile_sorted(&s, 1.0 - alpha / 2.0);
    // keep the point estimate inside the interval
    lower = lower.min(lme.params.xi);
    upper = upper.max(lme.params.xi);
    if !(upper > lower) {
        return Err(GevError::DegenerateSample);
    }
    Ok(XiInterval {
        lower,
        upper,
        level: 1.0 - alpha,
        estimate: lme.params.xi,
        profile: None,
        max_log_lik: None,
        boot_sample: Some(reps),
    })
}
