//! Model averaging over fixed-shape GEV submodels: candidate placement,
//! weighting schemes, pruning with edge extension, the averaged return level
//! and the choice of the number of submodels.

use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::estimators::{
    fit_fixed_xi_mle_from, fit_lme, fit_mle, fixed_xi_lme_from, FitMethod, FitResult, XI_BOUND,
};
use crate::gev::{neg_log_lik, return_level, GevParams};
use crate::intervals::{bootstrap_ci_xi, profile_ci_xi_from, XiInterval};
use crate::lmoments::{
    distance_vector, generalized_l_distance, l_moment_cov, med_distance_from, sample_l_moments,
    LMomentCov,
};
use crate::rng::derive_seed;
use crate::special::{normal_pdf, quantile, quantile_sorted, sorted};
use crate::uncertainty::{
    bma_variance, fixed_xi_covariance, ma_variance, quantile_var_from_cov, BmaVariance, MaVariance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimation {
    Mle,
    Lme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Starter {
    MleProfile,
    LmeBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightScheme {
    Gld,
    Med,
    SmoothAic,
    Bma,
    Fcv,
}

/// Weighting criterion, with the BMA likelihood kernel made explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weighting {
    Gld,
    Med,
    SmoothAic,
    BmaLike,
    BmaGld,
    Fcv,
}

impl Weighting {
    pub fn scheme(self) -> WeightScheme {
        match self {
            Weighting::Gld => WeightScheme::Gld,
            Weighting::Med => WeightScheme::Med,
            Weighting::SmoothAic => WeightScheme::SmoothAic,
            Weighting::BmaLike | Weighting::BmaGld => WeightScheme::Bma,
            Weighting::Fcv => WeightScheme::Fcv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaMethod {
    #[serde(rename = "MA.gLd1")]
    MaGld1,
    #[serde(rename = "MA.gLd2")]
    MaGld2,
    #[serde(rename = "MA.like0")]
    MaLike0,
    #[serde(rename = "MA.like1")]
    MaLike1,
    #[serde(rename = "MA.cvt")]
    MaCvt,
    #[serde(rename = "MA.med")]
    MaMed,
    #[serde(rename = "BMA.like")]
    BmaLike,
    #[serde(rename = "BMA.gLd")]
    BmaGld,
    #[serde(rename = "MA.fcv")]
    MaFcv,
}

/// `(estimation, weighting, trim)` of a named method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recipe {
    pub estimation: Estimation,
    pub weighting: Weighting,
    pub trim: usize,
}

impl MaMethod {
    pub const ALL: [MaMethod; 9] = [
        MaMethod::MaGld1,
        MaMethod::MaGld2,
        MaMethod::MaLike0,
        MaMethod::MaLike1,
        MaMethod::MaCvt,
        MaMethod::MaMed,
        MaMethod::BmaLike,
        MaMethod::BmaGld,
        MaMethod::MaFcv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaMethod::MaGld1 => "MA.gLd1",
            MaMethod::MaGld2 => "MA.gLd2",
            MaMethod::MaLike0 => "MA.like0",
            MaMethod::MaLike1 => "MA.like1",
            MaMethod::MaCvt => "MA.cvt",
            MaMethod::MaMed => "MA.med",
            MaMethod::BmaLike => "BMA.like",
            MaMethod::BmaGld => "BMA.gLd",
            MaMethod::MaFcv => "MA.fcv",
        }
    }

    pub fn recipe(self) -> Recipe {
        use Estimation::*;
        let (estimation, weighting, trim) = match self {
            MaMethod::MaGld1 => (Mle, Weighting::Gld, 1),
            MaMethod::MaGld2 => (Mle, Weighting::Gld, 2),
            MaMethod::MaLike0 => (Lme, Weighting::SmoothAic, 0),
            MaMethod::MaLike1 => (Lme, Weighting::SmoothAic, 1),
            MaMethod::MaCvt => (Mle, Weighting::SmoothAic, 0),
            MaMethod::MaMed => (Mle, Weighting::Med, 1),
            MaMethod::BmaLike => (Lme, Weighting::BmaLike, 0),
            MaMethod::BmaGld => (Mle, Weighting::BmaGld, 0),
            MaMethod::MaFcv => (Mle, Weighting::Fcv, 0),
        };
        Recipe { estimation, weighting, trim }
    }
}

impl fmt::Display for MaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaMethod {
    type Err = GevError;

    fn from_str(s: &str) -> Result<Self> {
        MaMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GevError::InvalidArgument(format!("unknown model-averaging method '{s}'")))
    }
}

/// Data-adaptive normal prior on ξ keyed to the L-moment shape estimate:
/// `μ_ξ = mean_scale·max(ξ̂, mean_floor)`,
/// `σ_ξ = max((sd_offset + ξ̂)/sd_divisor + sd_floor, sd_floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorCoefs {
    pub mean_scale: f64,
    pub mean_floor: f64,
    pub sd_offset: f64,
    pub sd_divisor: f64,
    pub sd_floor: f64,
}

impl PriorCoefs {
    pub const GLD: PriorCoefs = PriorCoefs {
        mean_scale: 1.5,
        mean_floor: -0.45,
        sd_offset: 0.4,
        sd_divisor: 4.0,
        sd_floor: 0.14,
    };
    pub const LIKE: PriorCoefs = PriorCoefs {
        mean_scale: 2.2,
        mean_floor: -0.5,
        sd_offset: 0.45,
        sd_divisor: 5.0,
        sd_floor: 0.11,
    };

    /// `(μ_ξ, σ_ξ)` at LME shape `xi_hat`.
    pub fn hyperparameters(&self, xi_hat: f64) -> (f64, f64) {
        let m = self.mean_scale * xi_hat.max(self.mean_floor);
        let s = ((self.sd_offset + xi_hat) / self.sd_divisor + self.sd_floor).max(self.sd_floor);
        (m, s)
    }

    /// Log prior weight of each grid point; flat when `xi_hat ≥ 0`.
    pub fn log_prior(&self, xi_grid: &[f64], xi_hat: f64) -> Vec<f64> {
        if xi_hat >= 0.0 {
            return vec![0.0; xi_grid.len()];
        }
        let (m, s) = self.hyperparameters(xi_hat);
        xi_grid.iter().map(|&x| normal_pdf(x, m, s).ln()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaMethodConfig {
    pub method: MaMethod,
    pub k: usize,
    pub alpha_ci: f64,
    pub prune_threshold: f64,
    pub edge_threshold: f64,
    pub fcv_test_fraction: f64,
    pub starter: Starter,
    /// Bootstrap size for the LME starter and the covariance fallback.
    pub boot_b: usize,
    /// Fit submodels on the trimmed sample as well as weighting on it.
    pub trim_affects_estimation: bool,
    /// Run pruning and edge extension.
    pub adapt: bool,
    pub extension_points: usize,
    pub max_extension_rounds: usize,
    pub prior_gld: PriorCoefs,
    pub prior_like: PriorCoefs,
}

impl Default for MaMethodConfig {
    fn default() -> Self {
        MaMethodConfig {
            method: MaMethod::MaGld1,
            k: 12,
            alpha_ci: 0.05,
            prune_threshold: 0.01,
            edge_threshold: 0.1,
            fcv_test_fraction: 0.10,
            starter: Starter::MleProfile,
            boot_b: 500,
            trim_affects_estimation: false,
            adapt: true,
            extension_points: 3,
            max_extension_rounds: 3,
            prior_gld: PriorCoefs::GLD,
            prior_like: PriorCoefs::LIKE,
        }
    }
}

impl MaMethodConfig {
    pub fn new(method: MaMethod) -> Self {
        MaMethodConfig { method, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GevError::InvalidConfig(m.to_string()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.alpha_ci > 0.0 && self.alpha_ci < 1.0) {
            return bad("alpha_ci must be in (0,1)");
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return bad("prune_threshold must be in [0,1)");
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold <= 1.0) {
            return bad("edge_threshold must be in (0,1]");
        }
        if !(self.fcv_test_fraction > 0.0 && self.fcv_test_fraction < 1.0) {
            return bad("fcv_test_fraction must be in (0,1)");
        }
        if self.boot_b < 2 {
            return bad("boot_b must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub xi_grid: Vec<f64>,
    pub fits: Vec<FitResult>,
    pub est_criterion: Estimation,
    pub starter: Starter,
    pub trim: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.xi_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_grid.is_empty()
    }

    pub fn params(&self) -> Vec<GevParams> {
        self.fits.iter().map(|f| f.params).collect()
    }

    pub fn return_levels(&self, period: f64) -> Result<Vec<f64>> {
        self.fits.iter().map(|f| return_level(&f.params, period)).collect()
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.xi_grid.retain(|_| *it.next().expect("mask length"));
        let mut it = keep.iter();
        self.fits.retain(|_| *it.next().expect("mask length"));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub scheme: WeightScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaEstimate {
    pub r_ma: f64,
    pub period: f64,
    pub weights: WeightVector,
    pub per_model_rl: Vec<f64>,
    pub candidate_set: CandidateSet,
    pub k_effective: usize,
}

/// Final candidate set and weights of a model-averaging fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaFit {
    pub method: MaMethod,
    pub candidates: CandidateSet,
    pub weights: WeightVector,
    pub extension_rounds: usize,
}

impl MaFit {
    pub fn k_effective(&self) -> usize {
        self.candidates.len()
    }

    /// `Σ w_k r_k(T)`.
    pub fn return_level(&self, period: f64) -> Result<f64> {
        let r = self.candidates.return_levels(period)?;
        Ok(dot(&self.weights.w, &r))
    }

    /// Averaged quantile curve at nonexceedance probability `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.candidates
            .fits
            .iter()
            .zip(&self.weights.w)
            .map(|(f, w)| w * f.params.quantile(q))
            .sum()
    }

    /// Weight-averaged submodel parameters.
    pub fn mean_params(&self) -> GevParams {
        let mut p = GevParams { mu: 0.0, sigma: 0.0, xi: 0.0 };
        for (f, w) in self.candidates.fits.iter().zip(&self.weights.w) {
            p.mu += w * f.params.mu;
            p.sigma += w * f.params.sigma;
            p.xi += w * f.params.xi;
        }
        p
    }

    pub fn estimate(&self, period: f64) -> Result<MaEstimate> {
        let per_model_rl = self.candidates.return_levels(period)?;
        Ok(MaEstimate {
            r_ma: dot(&self.weights.w, &per_model_rl),
            period,
            weights: self.weights.clone(),
            per_model_rl,
            candidate_set: self.candidates.clone(),
            k_effective: self.k_effective(),
        })
    }

    /// Delta-method variance of each submodel's `T`-level.
    pub fn submodel_variances(&self, ctx: &MaContext<'_>, period: f64) -> Result<Vec<f64>> {
        let p = exceedance(period)?;
        let data = ctx.estimation_data(self.candidates.trim, ctx.trim_affects_estimation);
        self.candidates
            .fits
            .iter()
            .map(|f| {
                let cov = fixed_xi_covariance(data, f)?;
                let v = quantile_var_from_cov(&cov, f.params.xi, 1.0 - p);
                if v > 0.0 {
                    Ok(v)
                } else {
                    Err(GevError::SingularInformation { xi: f.params.xi })
                }
            })
            .collect()
    }

    pub fn variance(&self, ctx: &MaContext<'_>, period: f64) -> Result<MaVariance> {
        let var = self.submodel_variances(ctx, period)?;
        let r = self.candidates.return_levels(period)?;
        ma_variance(&self.weights.w, &r, &var, &self.candidates.params(), 3)
    }

    pub fn bma_variance(&self, ctx: &MaContext<'_>, period: f64) -> Result<BmaVariance> {
        let var = self.submodel_variances(ctx, period)?;
        let r = self.candidates.return_levels(period)?;
        bma_variance(&self.weights.w, &r, &var)
    }
}

fn exceedance(period: f64) -> Result<f64> {
    if period > 1.0 && period.is_finite() {
        Ok(1.0 / period)
    } else {
        Err(GevError::InvalidArgument(format!("return period must be > 1, got {period}")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample state shared by every averaging method and every K: the full
/// MLE and LME, the shape interval, and L-moment covariances per trim level.
pub struct MaContext<'a> {
    data: &'a [f64],
    sorted: Vec<f64>,
    seed: u64,
    alpha: f64,
    starter: Starter,
    boot_b: usize,
    trim_affects_estimation: bool,
    mle: OnceCell<Result<FitResult>>,
    lme: OnceCell<Result<FitResult>>,
    interval: OnceCell<Result<XiInterval>>,
    covs: RefCell<HashMap<usize, Result<LMomentCov>>>,
}

impl<'a> MaContext<'a> {
    pub fn new(data: &'a [f64], config: &MaMethodConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if data.len() < 10 {
            return Err(GevError::TooFewObservations { needed: 10, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(GevError::InvalidArgument("data must be finite".into()));
        }
        if data.iter().all(|&x| x == data[0]) {
            return Err(GevError::DegenerateSample);
        }
        Ok(MaContext {
            data,
            sorted: sorted(data),
            seed,
            alpha: config.alpha_ci,
            starter: config.starter,
            boot_b: config.boot_b,
            trim_affects_estimation: config.trim_affects_estimation,
            mle: OnceCell::new(),
            lme: OnceCell::new(),
            interval: OnceCell::new(),
            covs: RefCell::new(HashMap::new()),
        })
    }

    pub fn data(&self) -> &[f64] {
        self.data
    }

    pub fn mle(&self) -> Result<&FitResult> {
        self.mle.get_or_init(|| fit_mle(self.data)).as_ref().map_err(Clone::clone)
    }

    pub fn lme(&self) -> Result<&FitResult> {
        self.lme.get_or_init(|| fit_lme(self.data)).as_ref().map_err(Clone::clone)
    }

    /// Shape interval for the configured starter.
    pub fn interval(&self) -> Result<&XiInterval> {
        self.interval
            .get_or_init(|| match self.starter {
                Starter::MleProfile => profile_ci_xi_from(self.data, self.alpha, self.mle()?),
                Starter::LmeBootstrap => bootstrap_ci_xi(
                    self.data,
                    self.alpha,
                    self.boot_b,
                    derive_seed(self.seed, &[0x4349]),
                ),
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Sample with the `trim` smallest observations removed, ascending.
    pub fn trimmed(&self, trim: usize) -> &[f64] {
        &self.sorted[trim.min(self.sorted.len())..]
    }

    fn estimation_data(&self, trim: usize, affects: bool) -> &[f64] {
        if affects {
            self.trimmed(trim)
        } else {
            self.data
        }
    }

    /// L-moment covariance of the trimmed sample.
    pub fn cov(&self, trim: usize) -> Result<LMomentCov> {
        if let Some(c) = self.covs.borrow().get(&trim) {
            return c.clone();
        }
        let c = l_moment_cov(
            self.trimmed(trim),
            self.boot_b,
            derive_seed(self.seed, &[0x434f, trim as u64]),
        );
        self.covs.borrow_mut().insert(trim, c.clone());
        c
    }
}

fn fit_candidate(data: &[f64], xi: f64, estimation: Estimation) -> Result<FitResult> {
    let wrap = |e| GevError::CandidateFit { xi, source: Box::new(e) };
    let l = sample_l_moments(data).map_err(wrap)?;
    let lme = fixed_xi_lme_from(&l, xi).map_err(wrap)?;
    let fit = match estimation {
        Estimation::Lme => FitResult {
            params: lme,
            converged: true,
            neg_log_lik: neg_log_lik(lme.mu, lme.sigma, xi, data),
            method: FitMethod::LmeFixedXi,
        },
        Estimation::Mle => fit_fixed_xi_mle_from(data, xi, lme).map_err(wrap)?,
    };
    if !fit.converged {
        log::warn!("candidate fit at xi = {xi} hit the evaluation limit");
    }
    Ok(fit)
}

/// Value of a piecewise-linear profile at `x`.
fn interpolate(profile: &[(f64, f64)], x: f64) -> f64 {
    match profile.iter().position(|&(g, _)| g >= x) {
        Some(0) => profile[0].1,
        Some(i) => {
            let (x0, y0) = profile[i - 1];
            let (x1, y1) = profile[i];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
        None => profile.last().expect("nonempty profile").1,
    }
}

/// Points at CDF levels `(k − 0.5)/K` of the density proportional to the
/// profile likelihood restricted to the interval, linear between nodes.
pub fn profile_quantile_points(ci: &XiInterval, k: usize) -> Result<Vec<f64>> {
    let profile = ci
        .profile
        .as_ref()
        .ok_or_else(|| GevError::InvalidArgument("interval carries no profile".into()))?;
    let peak = ci.max_log_lik.unwrap_or_else(|| {
        profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    });
    let mut nodes = vec![(ci.lower, interpolate(profile, ci.lower))];
    nodes.extend(profile.iter().copied().filter(|&(x, _)| x > ci.lower && x < ci.upper));
    nodes.push((ci.upper, interpolate(profile, ci.upper)));
    let dens: Vec<f64> = nodes.iter().map(|&(_, l)| (l - peak).exp()).collect();
    let mut cum = vec![0.0];
    for i in 1..nodes.len() {
        let h = nodes[i].0 - nodes[i - 1].0;
        cum.push(cum[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]));
    }
    let total = *cum.last().expect("nonempty");
    if !(total > 0.0) {
        return Err(GevError::DegenerateSample);
    }
    let mut out = Vec::with_capacity(k);
    let mut seg = 1;
    for j in 0..k {
        let target = total * (j as f64 + 0.5) / k as f64;
        while seg < nodes.len() - 1 && cum[seg] < target {
            seg += 1;
        }
        let (x0, f0, f1) = (nodes[seg - 1].0, dens[seg - 1], dens[seg]);
        let h = nodes[seg].0 - x0;
        let rem = target - cum[seg - 1];
        // solve f0·t + (f1 − f0)t²/(2h) = rem for t in [0, h]
        let a = (f1 - f0) / (2.0 * h);
        let disc = (f0 * f0 + 4.0 * a * rem).max(0.0);
        let t = if f0 + disc.sqrt() > 0.0 {
            2.0 * rem / (f0 + disc.sqrt())
        } else {
            0.5 * h
        };
        out.push(x0 + t.clamp(0.0, h));
    }
    Ok(out)
}

fn strictly_increasing(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|b, a| *b <= *a + 1e-9);
    xs
}

/// Shape grid for `k` candidates from the context's interval.
pub fn candidate_grid(ctx: &MaContext<'_>, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(GevError::InvalidArgument("k must be >= 1".into()));
    }
    let ci = ctx.interval()?;
    if k == 1 {
        return Ok(vec![ci.estimate]);
    }
    let grid = match ctx.starter {
        Starter::MleProfile => profile_quantile_points(ci, k)?,
        Starter::LmeBootstrap => {
            let boot = ci.boot_sample.as_ref().ok_or_else(|| {
                GevError::InvalidArgument("interval carries no bootstrap sample".into())
            })?;
            let inside = sorted(
                &boot.iter().copied().filter(|&x| ci.contains(x)).collect::<Vec<_>>(),
            );
            if inside.is_empty() {
                return Err(GevError::DegenerateSample);
            }
            (0..k)
                .map(|j| quantile_sorted(&inside, (j as f64 + 0.5) / k as f64))
                .collect()
        }
    };
    Ok(strictly_increasing(grid))
}

fn fit_all(data: &[f64], grid: &[f64], estimation: Estimation) -> Result<Vec<FitResult>> {
    grid.iter().map(|&x| fit_candidate(data, x, estimation)).collect()
}

/// Candidate submodels for `config` on the context's sample.
pub fn select_candidates_in(ctx: &MaContext<'_>, config: &MaMethodConfig) -> Result<CandidateSet> {
    let recipe = config.method.recipe();
    let xi_grid = candidate_grid(ctx, config.k)?;
    let data = ctx.estimation_data(recipe.trim, config.trim_affects_estimation);
    let fits = fit_all(data, &xi_grid, recipe.estimation)?;
    Ok(CandidateSet {
        xi_grid,
        fits,
        est_criterion: recipe.estimation,
        starter: config.starter,
        trim: recipe.trim,
    })
}

pub fn select_candidates(data: &[f64], config: &MaMethodConfig, seed: u64) -> Result<CandidateSet> {
    let ctx = MaContext::new(data, config, seed)?;
    select_candidates_in(&ctx, config)
}

/// Normalize log-weights onto the simplex.
pub fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GevError::NonConvergence(
            "no candidate has a finite weighting criterion".into(),
        ));
    }
    let e: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GldVariant {
    Gld,
    Med,
}

fn gld_log_kernel(
    data: &[f64],
    fits: &[GevParams],
    cov: &LMomentCov,
    trim: usize,
    variant: GldVariant,
) -> Result<Vec<f64>> {
    let s = sorted(data);
    let l = sample_l_moments(&s[trim.min(s.len())..])?;
    fits.iter()
        .map(|p| {
            let d = match variant {
                GldVariant::Gld => distance_vector(&l, p)?,
                GldVariant::Med => med_distance_from(&l, p)?,
            };
            Ok(-0.5 * generalized_l_distance(d, cov)?)
        })
        .collect()
}

/// Weights `∝ exp(−GLD_k/2)` from the L-moments of the sample with its
/// `trim` smallest values removed. `cov` is the covariance of those sample
/// L-moments.
pub fn weights_gld(
    data: &[f64],
    fits: &[GevParams],
    cov: &LMomentCov,
    trim: usize,
    variant: GldVariant,
) -> Result<WeightVector> {
    let w = normalize_log_weights(&gld_log_kernel(data, fits, cov, trim, variant)?)?;
    let scheme = match variant {
        GldVariant::Gld => WeightScheme::Gld,
        GldVariant::Med => WeightScheme::Med,
    };
    Ok(WeightVector { w, scheme })
}

/// `AIC_k = 2·nll_k + 4` on the trimmed sample; `+∞` off the support.
pub fn aic_scores(data: &[f64], fits: &[GevParams], trim: usize) -> Vec<f64> {
    let s = sorted(data);
    let t = &s[trim.min(s.len())..];
    fits.iter()
        .map(|p| 2.0 * neg_log_lik(p.mu, p.sigma, p.xi, t) + 4.0)
        .collect()
}

pub fn weights_from_aic(aic: &[f64]) -> Result<Vec<f64>> {
    normalize_log_weights(&aic.iter().map(|a| -0.5 * a).collect::<Vec<_>>())
}

pub fn weights_smooth_aic(data: &[f64], fits: &[GevParams], trim: usize) -> Result<WeightVector> {
    Ok(WeightVector {
        w: weights_from_aic(&aic_scores(data, fits, trim))?,
        scheme: WeightScheme::SmoothAic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BmaKernel {
    Like,
    Gld,
}

/// Posterior model probabilities: likelihood kernel times the adaptive
/// normal prior on ξ (flat when `xi_lme ≥ 0`).
#[allow(clippy::too_many_arguments)]
pub fn weights_bma(
    data: &[f64],
    fits: &[GevParams],
    kernel: BmaKernel,
    cov: Option<&LMomentCov>,
    trim: usize,
    xi_lme: f64,
    prior: &PriorCoefs,
) -> Result<WeightVector> {
    let base = match kernel {
        BmaKernel::Like => aic_scores(data, fits, trim).iter().map(|a| -0.5 * a).collect(),
        BmaKernel::Gld => {
            let cov = cov.ok_or_else(|| {
                GevError::InvalidArgument("gLd kernel needs an L-moment covariance".into())
            })?;
            gld_log_kernel(data, fits, cov, trim, GldVariant::Gld)?
        }
    };
    let xis: Vec<f64> = fits.iter().map(|p| p.xi).collect();
    let logw: Vec<f64> = base
        .iter()
        .zip(prior.log_prior(&xis, xi_lme))
        .map(|(a, b)| a + b)
        .collect();
    Ok(WeightVector {
        w: normalize_log_weights(&logw)?,
        scheme: WeightScheme::Bma,
    })
}

/// Number of held-out upper order statistics.
pub fn fcv_test_size(n: usize, fraction: f64) -> Result<usize> {
    let m = (n as f64 * fraction).round() as usize;
    if m == 0 || m + 4 > n {
        return Err(GevError::EmptyTestSet { n, fraction });
    }
    Ok(m)
}

/// Forward cross-validation scores and log weights for each candidate:
/// refit on all but the largest values, predict those at plotting positions
/// of the full sample, and score standardized squared errors.
pub fn fcv_scores(
    data: &[f64],
    fits: &[GevParams],
    estimation: Estimation,
    test_fraction: f64,
) -> Result<Vec<(f64, f64)>> {
    let s = sorted(data);
    let n = s.len();
    let m = fcv_test_size(n, test_fraction)?;
    let (train, test) = s.split_at(n - m);
    fits.iter()
        .map(|p| {
            let fit = fit_candidate(train, p.xi, estimation)?;
            let cov = fixed_xi_covariance(train, &fit)?;
            let mut score = 0.0;
            let mut log_norm = 0.0;
            for (j, y) in test.iter().enumerate() {
                let q = ((n - m + j + 1) as f64 - 0.5) / n as f64;
                let yhat = fit.params.quantile(q);
                let v = quantile_var_from_cov(&cov, p.xi, q);
                if !(v > 0.0) {
                    return Err(GevError::SingularInformation { xi: p.xi });
                }
                score += (y - yhat).powi(2) / v;
                log_norm -= 0.5 * v.ln();
            }
            Ok((score, log_norm - 0.5 * score))
        })
        .collect()
}

pub fn weights_fcv(
    data: &[f64],
    fits: &[GevParams],
    estimation: Estimation,
    test_fraction: f64,
) -> Result<WeightVector> {
    let logw: Vec<f64> = fcv_scores(data, fits, estimation, test_fraction)?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    Ok(WeightVector {
        w: normalize_log_weights(&logw)?,
        scheme: WeightScheme::Fcv,
    })
}

/// Weights for `cands` under the method of `config`.
pub fn compute_weights(
    ctx: &MaContext<'_>,
    config: &MaMethodConfig,
    cands: &CandidateSet,
) -> Result<WeightVector> {
    let recipe = config.method.recipe();
    let params = cands.params();
    let data = ctx.data;
    let trim = cands.trim;
    match recipe.weighting {
        Weighting::Gld => weights_gld(data, &params, &ctx.cov(trim)?, trim, GldVariant::Gld),
        Weighting::Med => weights_gld(data, &params, &ctx.cov(trim)?, trim, GldVariant::Med),
        Weighting::SmoothAic => weights_smooth_aic(data, &params, trim),
        Weighting::BmaLike => weights_bma(
            data,
            &params,
            BmaKernel::Like,
            None,
            trim,
            ctx.lme()?.params.xi,
            &config.prior_like,
        ),
        Weighting::BmaGld => weights_bma(
            data,
            &params,
            BmaKernel::Gld,
            Some(&ctx.cov(trim)?),
            trim,
            ctx.lme()?.params.xi,
            &config.prior_gld,
        ),
        Weighting::Fcv => weights_fcv(
            ctx.estimation_data(trim, config.trim_affects_estimation),
            &params,
            recipe.estimation,
            config.fcv_test_fraction,
        ),
    }
}

/// Drop candidates with weight `≤ threshold`, always keeping the two
/// heaviest, and renormalize.
pub fn prune(cands: &mut CandidateSet, weights: &mut WeightVector, threshold: f64) {
    let k = weights.w.len();
    let mut keep: Vec<bool> = weights.w.iter().map(|&w| w > threshold).collect();
    let min_keep = k.min(2);
    if keep.iter().filter(|&&b| b).count() < min_keep {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| weights.w[b].total_cmp(&weights.w[a]).then(a.cmp(&b)));
        for &i in order.iter().take(min_keep) {
            keep[i] = true;
        }
    }
    cands.retain(&keep);
    let mut it = keep.iter();
    weights.w.retain(|_| *it.next().expect("mask length"));
    let s: f64 = weights.w.iter().sum();
    for w in &mut weights.w {
        *w /= s;
    }
}

fn extension_points(grid: &[f64], lower: bool, count: usize) -> Vec<f64> {
    let k = grid.len();
    let step = if k >= 2 {
        if lower {
            grid[1] - grid[0]
        } else {
            grid[k - 1] - grid[k - 2]
        }
    } else {
        0.0
    };
    let step = if step > 1e-6 { step } else { 0.02 };
    let edge = if lower { grid[0] } else { grid[k - 1] };
    let lim = XI_BOUND - 1e-6;
    (1..=count)
        .map(|j| if lower { edge - step * j as f64 } else { edge + step * j as f64 })
        .filter(|x| x.abs() < lim)
        .collect()
}

/// Full averaging pipeline on a prepared context: candidates, weights, then
/// pruning and edge extension rounds.
pub fn fit_ma_in(ctx: &MaContext<'_>, config: &MaMethodConfig) -> Result<MaFit> {
    config.validate()?;
    let recipe = config.method.recipe();
    let mut cands = select_candidates_in(ctx, config)?;
    let mut weights = compute_weights(ctx, config, &cands)?;
    let mut rounds = 0;
    if config.adapt && config.k > 1 {
        prune(&mut cands, &mut weights, config.prune_threshold);
        let est_data = ctx.estimation_data(recipe.trim, config.trim_affects_estimation);
        while rounds < config.max_extension_rounds {
            let k = weights.w.len();
            let mut new_xi = Vec::new();
            if weights.w[0] > config.edge_threshold {
                new_xi.extend(extension_points(&cands.xi_grid, true, config.extension_points));
            }
            if weights.w[k - 1] > config.edge_threshold {
                new_xi.extend(extension_points(&cands.xi_grid, false, config.extension_points));
            }
            if new_xi.is_empty() {
                break;
            }
            rounds += 1;
            let mut added = 0;
            for x in new_xi {
                match fit_candidate(est_data, x, recipe.estimation) {
                    Ok(f) => {
                        let pos = cands.xi_grid.partition_point(|&g| g < x);
                        cands.xi_grid.insert(pos, x);
                        cands.fits.insert(pos, f);
                        added += 1;
                    }
                    Err(e) => log::debug!("skipping extension point {x}: {e}"),
                }
            }
            if added == 0 {
                break;
            }
            weights = compute_weights(ctx, config, &cands)?;
            prune(&mut cands, &mut weights, config.prune_threshold);
        }
    }
    Ok(MaFit {
        method: config.method,
        candidates: cands,
        weights,
        extension_rounds: rounds,
    })
}

pub fn fit_ma(data: &[f64], config: &MaMethodConfig, seed: u64) -> Result<MaFit> {
    let ctx = MaContext::new(data, config, seed)?;
    fit_ma_in(&ctx, config)
}

pub fn ma_return_level(
    data: &[f64],
    config: &MaMethodConfig,
    period: f64,
    seed: u64,
) -> Result<MaEstimate> {
    fit_ma(data, config, seed)?.estimate(period)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub r_ma: f64,
    /// `|r(K) − r(K−1)| + |r(K+1) − r(K)|`, interior K only.
    pub d_k: Option<f64>,
    pub se_k: f64,
    pub in_stable: bool,
    pub in_efficient: bool,
    pub k_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub rows: Vec<KRow>,
    pub k_prime: usize,
    pub k_star: usize,
    pub threshold_d: f64,
    pub threshold_se: f64,
    /// The stable and efficient sets did not intersect.
    pub fallback: bool,
}

/// Choose the number of submodels by joint stability of the averaged
/// return level and its random-weight standard error.
pub fn select_k_in(
    ctx: &MaContext<'_>,
    config: &MaMethodConfig,
    period: f64,
    k_range: (usize, usize),
    alpha_q: f64,
) -> Result<KSelection> {
    let (k_lo, k_hi) = k_range;
    if k_lo < 1 || k_hi < k_lo + 2 {
        return Err(GevError::InvalidArgument(format!(
            "K range must span at least three values, got {k_lo}..{k_hi}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha_q) {
        return Err(GevError::InvalidArgument("alpha_q must be in [0,1]".into()));
    }
    let mut rows = Vec::new();
    for k in k_lo..=k_hi {
        let cfg = MaMethodConfig { k, ..config.clone() };
        let fit = fit_ma_in(ctx, &cfg)?;
        let r_ma = fit.return_level(period)?;
        let v = fit.variance(ctx, period)?;
        rows.push(KRow {
            k,
            r_ma,
            d_k: None,
            se_k: v.var_random.max(0.0).sqrt(),
            in_stable: false,
            in_efficient: false,
            k_effective: fit.k_effective(),
        });
    }
    Ok(choose_k(rows, alpha_q))
}

/// Stability/efficiency selection over rows with consecutive `k`, `r_ma` and
/// `se_k` filled in.
pub fn choose_k(mut rows: Vec<KRow>, alpha_q: f64) -> KSelection {
    let k_lo = rows[0].k;
    for i in 1..rows.len() - 1 {
        rows[i].d_k =
            Some((rows[i].r_ma - rows[i - 1].r_ma).abs() + (rows[i + 1].r_ma - rows[i].r_ma).abs());
    }
    let ds: Vec<f64> = rows.iter().filter_map(|r| r.d_k).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.se_k).collect();
    let threshold_d = quantile(&ds, alpha_q);
    let threshold_se = quantile(&ses, alpha_q);
    for r in &mut rows {
        r.in_stable = r.d_k.is_some_and(|d| d <= threshold_d);
        r.in_efficient = r.se_k <= threshold_se;
    }
    let se_of = |k: usize| rows[k - k_lo].se_k;
    let (k_prime, fallback) = match rows.iter().find(|r| r.in_stable && r.in_efficient) {
        Some(r) => (r.k, false),
        None => {
            let best = rows
                .iter()
                .filter(|r| r.in_stable)
                .min_by(|a, b| a.se_k.total_cmp(&b.se_k))
                .expect("stable set is nonempty");
            (best.k, true)
        }
    };
    let k_star = rows
        .iter()
        .filter(|r| r.in_stable && r.k + 2 >= k_prime && r.k <= k_prime + 2)
        .min_by(|a, b| se_of(a.k).total_cmp(&se_of(b.k)).then(a.k.cmp(&b.k)))
        .map(|r| r.k)
        .unwrap_or(k_prime);
    KSelection {
        rows,
        k_prime,
        k_star,
        threshold_d,
        threshold_se,
        fallback,
    }
}

pub fn select_k(
    data: &[f64],
    config: &MaMethodConfig,
    period: f64,
    k_range: (usize, usize),
    alpha_q: f64,
    seed: u64,
) -> Result<KSelection> {
    let ctx = MaContext::new(data, config, seed)?;
    select_k_in(&ctx, config, period, k_range, alpha_q)
}
