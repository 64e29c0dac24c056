//! Uniform naming and evaluation of every point estimator and averaging
//! method, sharing per-sample work between averaging methods.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::{fit_ma_in, MaContext, MaMethod, MaMethodConfig};
use crate::error::{GevError, Result};
use crate::estimators::{fit_lme, fit_mle_cd, fit_remle, FitResult, ReMleVariant};
use crate::gev::return_level;
use crate::uncertainty::{bootstrap_statistic, bootstrap_vector, BootstrapSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Mle,
    Lme,
    ReMle1,
    ReMle2,
    MleCd,
    Ma(MaMethod),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "MLE",
            Method::Lme => "LME",
            Method::ReMle1 => "Re.MLE1",
            Method::ReMle2 => "Re.MLE2",
            Method::MleCd => "MLE.CD",
            Method::Ma(m) => m.name(),
        }
    }

    /// The ten methods of the main simulation comparison.
    pub fn simulation_set() -> Vec<Method> {
        vec![
            Method::Mle,
            Method::Lme,
            Method::ReMle1,
            Method::ReMle2,
            Method::MleCd,
            Method::Ma(MaMethod::MaGld1),
            Method::Ma(MaMethod::MaGld2),
            Method::Ma(MaMethod::MaLike0),
            Method::Ma(MaMethod::MaLike1),
            Method::Ma(MaMethod::MaCvt),
        ]
    }

    pub fn is_ma(self) -> bool {
        matches!(self, Method::Ma(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GevError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        for m in [Method::Mle, Method::Lme, Method::ReMle1, Method::ReMle2, Method::MleCd] {
            if m.name().eq_ignore_ascii_case(t) {
                return Ok(m);
            }
        }
        t.parse::<MaMethod>()
            .map(Method::Ma)
            .map_err(|_| GevError::InvalidArgument(format!("unknown method '{t}'")))
    }
}

impl TryFrom<String> for Method {
    type Error = GevError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Outcome of one method on one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Single(FitResult),
    Averaged(crate::ensemble::MaFit),
}

impl Fitted {
    pub fn return_level(&self, period: f64) -> Result<f64> {
        match self {
            Fitted::Single(f) => return_level(&f.params, period),
            Fitted::Averaged(m) => m.return_level(period),
        }
    }
}

/// Fit `method` using the shared context; MA methods take their tuning from
/// `base` with the method overridden.
pub fn fit_method_in(ctx: &MaContext<'_>, method: Method, base: &MaMethodConfig) -> Result<Fitted> {
    let data = ctx.data();
    Ok(match method {
        Method::Mle => Fitted::Single(*ctx.mle()?),
        Method::Lme => Fitted::Single(fit_lme(data)?),
        Method::ReMle1 => Fitted::Single(fit_remle(data, ReMleVariant::MeanMatched)?),
        Method::ReMle2 => Fitted::Single(fit_remle(data, ReMleVariant::MeanAndScaleMatched)?),
        Method::MleCd => Fitted::Single(fit_mle_cd(data, 1.0, 1.0)?),
        Method::Ma(m) => Fitted::Averaged(fit_ma_in(ctx, &MaMethodConfig { method: m, ..base.clone() })?),
    })
}

pub fn fit_method(data: &[f64], method: Method, base: &MaMethodConfig, seed: u64) -> Result<Fitted> {
    let ctx = MaContext::new(data, base, seed)?;
    fit_method_in(&ctx, method, base)
}

/// Return levels at every period for every method on one sample. Failures
/// are per method.
pub fn return_levels(
    data: &[f64],
    methods: &[Method],
    periods: &[f64],
    base: &MaMethodConfig,
    seed: u64,
) -> Result<Vec<Result<Vec<f64>>>> {
    let ctx = MaContext::new(data, base, seed)?;
    Ok(methods
        .iter()
        .map(|&m| {
            let f = fit_method_in(&ctx, m, base)?;
            periods.iter().map(|&t| f.return_level(t)).collect()
        })
        .collect())
}

/// Nonparametric bootstrap standard error of the `period` return level.
pub fn bootstrap_se(
    data: &[f64],
    method: Method,
    period: f64,
    b: usize,
    base: &MaMethodConfig,
    seed: u64,
) -> Result<BootstrapSummary> {
    if !(period > 1.0) {
        return Err(GevError::InvalidArgument(format!("return period must be > 1, got {period}")));
    }
    bootstrap_statistic(data, b, seed, |res, s| {
        fit_method(res, method, base, s)?.return_level(period)
    })
}

/// Joint bootstrap of the return levels at every period on shared resamples.
pub fn bootstrap_return_levels(
    data: &[f64],
    method: Method,
    periods: &[f64],
    b: usize,
    base: &MaMethodConfig,
    seed: u64,
) -> Result<Vec<BootstrapSummary>> {
    if let Some(&t) = periods.iter().find(|&&t| !(t > 1.0)) {
        return Err(GevError::InvalidArgument(format!("return period must be > 1, got {t}")));
    }
    bootstrap_vector(data, b, seed, periods.len(), |res, s| {
        let f = fit_method(res, method, base, s)?;
        periods.iter().map(|&t| f.return_level(t)).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        let all: Vec<Method> = Method::simulation_set()
            .into_iter()
            .chain(MaMethod::ALL.into_iter().map(Method::Ma))
            .collect();
        for m in all {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let js = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&js).unwrap(), m);
        }
        assert_eq!(parse_methods("MLE, LME,MA.like1").unwrap().len(), 3);
        assert!(parse_methods("MLE,bogus").is_err());
    }

    #[test]
    fn joint_bootstrap_matches_scalar_bootstrap() {
        let g = crate::gev::GevParams::new(100.0, 30.0, -0.2).unwrap();
        let xs = crate::gev::sample(&g, 40, 4).unwrap();
        let cfg = MaMethodConfig::default();
        let joint = bootstrap_return_levels(&xs, Method::Lme, &[20.0, 100.0], 50, &cfg, 9).unwrap();
        let single = bootstrap_se(&xs, Method::Lme, 100.0, 50, &cfg, 9).unwrap();
        assert_eq!(joint[1], single);
        assert!(joint[0].se < joint[1].se);
    }
}
