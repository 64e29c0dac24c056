use std::fmt::Write as _;

use anyhow::Result;
use serde::Serialize;

use gevma::dataset::Dataset;
use gevma::ensemble::{MaContext, MaFit, MaMethod, MaMethodConfig};
use gevma::method::{bootstrap_return_levels, fit_method_in, Fitted, Method};
use gevma::special::quantile;
use gevma::surrogate::{surrogate_of, SurrogateFit};
use gevma::uncertainty::{mle_return_level_var, BootstrapSummary};
use gevma::GevParams;

use crate::output::{join, opt, OutDir};

pub struct FitSettings {
    pub methods: Vec<Method>,
    pub periods: Vec<f64>,
    pub boot: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub base: MaMethodConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub method: Method,
    pub ok: bool,
    pub error: Option<String>,
    /// Fitted parameters; the surrogate for averaging methods.
    pub params: Option<GevParams>,
    pub return_levels: Vec<f64>,
    pub asym_se: Vec<Option<f64>>,
    pub boot_se: Vec<Option<f64>>,
    pub boot_failures: Option<usize>,
    pub surrogate: Option<SurrogateFit>,
    pub k_effective: Option<usize>,
    pub xi_grid: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub dataset: String,
    pub n: usize,
    pub first_year: Option<i64>,
    pub last_year: Option<i64>,
    pub periods: Vec<f64>,
    pub rows: Vec<FitRow>,
}

impl FitReport {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.ok)
    }
}

/// 30 log-spaced return periods from 2 to 1000.
pub fn curve_periods() -> Vec<f64> {
    let m = 30;
    (0..m)
        .map(|i| {
            let t = (2f64.ln() + (1000f64.ln() - 2f64.ln()) * i as f64 / (m - 1) as f64).exp();
            (t * 1e6).round() / 1e6
        })
        .collect()
}

fn asymptotic_se(ctx: &MaContext<'_>, fitted: &Fitted, method: Method, t: f64) -> Option<f64> {
    let v = match (method, fitted) {
        (Method::Mle, Fitted::Single(f)) => mle_return_level_var(ctx.data(), &f.params, t),
        (Method::Ma(MaMethod::BmaLike | MaMethod::BmaGld), Fitted::Averaged(m)) => {
            m.bma_variance(ctx, t).map(|v| v.total)
        }
        (Method::Ma(_), Fitted::Averaged(m)) => m.variance(ctx, t).map(|v| v.var_random),
        _ => return None,
    };
    match v {
        Ok(v) => Some(v.sqrt()),
        Err(e) => {
            log::warn!("{method}: asymptotic SE at T={t} unavailable: {e}");
            None
        }
    }
}

/// Bootstrap band `(lower, upper)` at one period.
type Band = Option<(f64, f64)>;

struct MethodOutput {
    row: FitRow,
    qq: Vec<(f64, f64, f64)>,
    curve: Vec<(f64, f64, Band)>,
    weights: Vec<(f64, f64, f64)>,
    boot: Vec<BootstrapSummary>,
}

fn failed(method: Method, e: impl std::fmt::Display, np: usize) -> MethodOutput {
    log::warn!("{method} failed: {e}");
    MethodOutput {
        row: FitRow {
            method,
            ok: false,
            error: Some(e.to_string()),
            params: None,
            return_levels: vec![],
            asym_se: vec![None; np],
            boot_se: vec![None; np],
            boot_failures: None,
            surrogate: None,
            k_effective: None,
            xi_grid: None,
            weights: None,
        },
        qq: vec![],
        curve: vec![],
        weights: vec![],
        boot: vec![],
    }
}

fn run_method(ctx: &MaContext<'_>, s: &FitSettings, method: Method) -> MethodOutput {
    let np = s.periods.len();
    let fitted = match fit_method_in(ctx, method, &s.base) {
        Ok(f) => f,
        Err(e) => return failed(method, e, np),
    };
    let rl: Result<Vec<f64>, _> = s.periods.iter().map(|&t| fitted.return_level(t)).collect();
    let rl = match rl {
        Ok(v) => v,
        Err(e) => return failed(method, e, np),
    };
    let (params, surrogate, ma): (GevParams, Option<SurrogateFit>, Option<&MaFit>) = match &fitted {
        Fitted::Single(f) => (f.params, None, None),
        Fitted::Averaged(m) => match surrogate_of(m) {
            Ok(sf) => (sf.params, Some(sf), Some(m)),
            Err(e) => {
                log::warn!("{method}: surrogate failed: {e}");
                (m.mean_params(), None, Some(m))
            }
        },
    };
    let asym_se = s.periods.iter().map(|&t| asymptotic_se(ctx, &fitted, method, t)).collect();

    let data = ctx.data();
    let n = data.len();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fq = |q: f64| match &fitted {
        Fitted::Single(f) => f.params.quantile(q),
        Fitted::Averaged(m) => m.quantile(q),
    };
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let q = (i as f64 + 0.5) / n as f64;
            (x, q, fq(q))
        })
        .collect();

    let grid = curve_periods();
    let mut boot = Vec::new();
    let mut boot_failures = None;
    if s.boot > 0 {
        let all: Vec<f64> = s.periods.iter().chain(&grid).copied().collect();
        match bootstrap_return_levels(data, method, &all, s.boot, &s.base, s.seed) {
            Ok(b) => {
                boot_failures = Some(b[0].failures);
                boot = b;
            }
            Err(e) => log::warn!("{method}: bootstrap failed: {e}"),
        }
    }
    let a = (1.0 - s.ci_level) / 2.0;
    let curve = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let band = boot.get(np + i).map(|b| (quantile(&b.values, a), quantile(&b.values, 1.0 - a)));
            (t, fitted.return_level(t).unwrap_or(f64::NAN), band)
        })
        .collect();
    let boot_se = (0..np).map(|i| boot.get(i).map(|b| b.se)).collect();
    boot.truncate(np);

    let mut weights = Vec::new();
    if let Some(m) = ma {
        let rl0 = m.candidates.return_levels(s.periods[0]).unwrap_or_default();
        for (i, (&xi, &w)) in m.candidates.xi_grid.iter().zip(&m.weights.w).enumerate() {
            weights.push((xi, w, rl0.get(i).copied().unwrap_or(f64::NAN)));
        }
    }

    MethodOutput {
        row: FitRow {
            method,
            ok: true,
            error: None,
            params: Some(params),
            return_levels: rl,
            asym_se,
            boot_se,
            boot_failures,
            surrogate,
            k_effective: ma.map(MaFit::k_effective),
            xi_grid: ma.map(|m| m.candidates.xi_grid.clone()),
            weights: ma.map(|m| m.weights.w.clone()),
        },
        qq,
        curve,
        weights,
        boot,
    }
}

pub fn report_csv(r: &FitReport) -> String {
    let mut s = String::from("method,status,mu,sigma,xi,k_effective");
    for t in &r.periods {
        let _ = write!(s, ",rl_{t},asym_se_{t},boot_se_{t}");
    }
    s.push_str(",boot_failures,xi_grid,weights,error\n");
    for row in &r.rows {
        let p = row.params;
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            row.method,
            if row.ok { "ok" } else { "failed" },
            opt(p.map(|p| p.mu)),
            opt(p.map(|p| p.sigma)),
            opt(p.map(|p| p.xi)),
            row.k_effective.map_or("NA".into(), |k| k.to_string()),
        );
        for i in 0..r.periods.len() {
            let _ = write!(
                s,
                ",{},{},{}",
                opt(row.return_levels.get(i).copied()),
                opt(row.asym_se[i]),
                opt(row.boot_se[i])
            );
        }
        let err = row.error.as_deref().unwrap_or("").replace(['"', ','], " ");
        let _ = writeln!(
            s,
            ",{},{},{},{}",
            row.boot_failures.map_or("NA".into(), |k| k.to_string()),
            row.xi_grid.as_deref().map_or(String::new(), |v| join(v, ";")),
            row.weights.as_deref().map_or(String::new(), |v| join(v, ";")),
            err
        );
    }
    s
}

pub fn report_markdown(r: &FitReport) -> String {
    let mut s = String::from("| Method | mu | sigma | xi |");
    for t in &r.periods {
        let _ = write!(s, " RL {t} | Asym. SE | Boot. SE |");
    }
    s.push_str("\n|---|---:|---:|---:|");
    for _ in &r.periods {
        s.push_str("---:|---:|---:|");
    }
    s.push('\n');
    let f = |v: Option<f64>, d: usize| v.map_or("NA".to_string(), |x| format!("{x:.d$}"));
    for row in &r.rows {
        let p = row.params;
        let _ = write!(
            s,
            "| {} | {} | {} | {} |",
            row.method,
            f(p.map(|p| p.mu), 2),
            f(p.map(|p| p.sigma), 2),
            f(p.map(|p| p.xi), 3)
        );
        for i in 0..r.periods.len() {
            let _ = write!(
                s,
                " {} | {} | {} |",
                f(row.return_levels.get(i).copied(), 1),
                f(row.asym_se[i], 1),
                f(row.boot_se[i], 1)
            );
        }
        s.push('\n');
    }
    s
}

pub fn run(ds: &Dataset, ctx: &MaContext<'_>, s: &FitSettings, out: &mut OutDir) -> Result<FitReport> {
    let outputs: Vec<MethodOutput> = s.methods.iter().map(|&m| run_method(ctx, s, m)).collect();
    let years = ds.years.as_deref();
    let report = FitReport {
        dataset: ds.name.clone(),
        n: ds.n(),
        first_year: years.and_then(|y| y.first().copied()),
        last_year: years.and_then(|y| y.last().copied()),
        periods: s.periods.clone(),
        rows: outputs.iter().map(|o| o.row.clone()).collect(),
    };
    out.csv("fit_report.csv", &report_csv(&report))?;
    out.json("fit_report.json", &report)?;

    let mut qq = String::from("method,observed,plotting_position,fitted\n");
    let mut curve = String::from("method,period,return_level,lower,upper\n");
    let mut wp = String::from("method,xi,weight,return_level\n");
    let mut bd = String::from("method,period,replicate,return_level\n");
    for o in &outputs {
        let m = o.row.method;
        for (x, q, y) in &o.qq {
            let _ = writeln!(qq, "{m},{x},{q},{y}");
        }
        for (t, r, band) in &o.curve {
            let (lo, hi) = band.map_or((None, None), |(a, b)| (Some(a), Some(b)));
            let _ = writeln!(curve, "{m},{t},{r},{},{}", opt(lo), opt(hi));
        }
        for (xi, w, r) in &o.weights {
            let _ = writeln!(wp, "{m},{xi},{w},{r}");
        }
        for (b, t) in o.boot.iter().zip(&s.periods) {
            for (i, v) in b.values.iter().enumerate() {
                let _ = writeln!(bd, "{m},{t},{i},{v}");
            }
        }
    }
    out.csv("qq.csv", &qq)?;
    out.csv("return_level_curve.csv", &curve)?;
    out.csv("weight_profile.csv", &wp)?;
    if s.boot > 0 {
        out.csv("bootstrap_distribution.csv", &bd)?;
    }
    Ok(report)
}
