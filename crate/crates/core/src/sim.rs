//! Monte Carlo comparison of estimators: replicate generation, per-method
//! return levels with common random numbers, and Bias/SE/RMSE aggregation.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ensemble::MaMethodConfig;
use crate::error::{GevError, Result};
use crate::gev::{return_level, sample_with, GevParams};
use crate::method::{return_levels, Method};
use crate::rng;

fn default_mu() -> f64 {
    100.0
}
fn default_sigma() -> f64 {
    30.0
}
fn default_n() -> usize {
    50
}
fn default_reps() -> usize {
    1000
}
fn default_k() -> usize {
    12
}
fn default_boot() -> usize {
    500
}
fn default_periods() -> Vec<f64> {
    vec![100.0, 200.0]
}
pub fn default_xi_grid() -> Vec<f64> {
    vec![-0.45, -0.4, -0.35, -0.3, -0.25, -0.2, -0.15, -0.1, -0.05, -0.001]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_xi_grid")]
    pub xi_grid: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_boot")]
    pub b_boot: usize,
    #[serde(default = "default_periods")]
    pub periods: Vec<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Tuning shared by all averaging methods; `k` and `b_boot` above take
    /// precedence over the fields of the same meaning here.
    #[serde(default)]
    pub ma: MaMethodConfig,
}

impl SimConfig {
    pub fn new(methods: Vec<Method>, seed: u64) -> Self {
        SimConfig {
            mu: default_mu(),
            sigma: default_sigma(),
            xi_grid: default_xi_grid(),
            n: default_n(),
            n_reps: default_reps(),
            k: default_k(),
            b_boot: default_boot(),
            periods: default_periods(),
            methods,
            seed,
            ma: MaMethodConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(GevError::InvalidConfig(format!("{f}: {m}")));
        if self.n < 20 {
            return bad("n", "must be >= 20");
        }
        if self.n_reps < 1 {
            return bad("n_reps", "must be >= 1");
        }
        if self.methods.is_empty() {
            return bad("methods", "must list at least one method");
        }
        if self.xi_grid.is_empty() {
            return bad("xi_grid", "must list at least one shape value");
        }
        for &x in &self.xi_grid {
            if let Err(e) = GevParams::new(self.mu, self.sigma, x) {
                return bad("xi_grid", &e.to_string());
            }
        }
        if self.periods.is_empty() || self.periods.iter().any(|&t| !(t > 1.0 && t.is_finite())) {
            return bad("periods", "every return period must be > 1");
        }
        if self.k < 1 {
            return bad("k", "must be >= 1");
        }
        if self.b_boot < 2 {
            return bad("b_boot", "must be >= 2");
        }
        self.ma_config().validate().map_err(|e| GevError::InvalidConfig(format!("ma: {e}")))
    }

    pub fn ma_config(&self) -> MaMethodConfig {
        MaMethodConfig {
            k: self.k,
            boot_b: self.b_boot,
            ..self.ma.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: SimConfig =
            serde_json::from_str(text).map_err(|e| GevError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// `key = value` lines; `#` starts a comment, lists are comma separated
    /// and `ma.<field>` addresses the averaging configuration.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut root = Map::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| GevError::Parse {
                line: i + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parsed = match key {
                "xi_grid" | "periods" | "methods" => Value::Array(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(scalar)
                        .collect(),
                ),
                _ => scalar(value),
            };
            match key.strip_prefix("ma.") {
                Some(sub) => {
                    let ma = root
                        .entry("ma")
                        .or_insert_with(|| Value::Object(Map::new()));
                    if let Value::Object(m) = ma {
                        m.insert(sub.to_string(), parsed);
                    }
                }
                None => {
                    root.insert(key.to_string(), parsed);
                }
            }
        }
        let c: SimConfig = serde_json::from_value(Value::Object(root))
            .map_err(|e| GevError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// JSON when the text starts with `{`, key = value otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_key_values(text)
        }
    }
}

fn scalar(s: &str) -> Value {
    if let Ok(i) = s.parse::<u64>() {
        return Value::from(i);
    }
    if let Ok(x) = s.parse::<f64>() {
        return Value::from(x);
    }
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::String(s.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub method: Method,
    pub xi: f64,
    pub period: f64,
    pub true_value: f64,
    /// `None` when every replicate failed.
    pub bias: Option<f64>,
    pub se: Option<f64>,
    pub rmse: Option<f64>,
    pub n_ok: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub cells: Vec<SimCell>,
}

impl SimReport {
    pub fn cell(&self, method: Method, xi: f64, period: f64) -> Option<&SimCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.xi == xi && c.period == period)
    }
}

/// Bias, SE and RMSE with divisor `N`; `rmse² = bias² + se²`.
pub fn summarize(estimates: &[f64], truth: f64) -> (f64, f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let bias = mean - truth;
    let var = estimates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let se = var.sqrt();
    let rmse = (estimates.iter().map(|r| (r - truth).powi(2)).sum::<f64>() / n).sqrt();
    (bias, se, rmse)
}

/// Seed of the sample for shape index `i`, replicate `r`.
pub fn replicate_seed(seed: u64, xi_index: usize, replicate: usize) -> u64 {
    rng::derive_seed(seed, &[xi_index as u64, replicate as u64])
}

pub fn replicate_sample(config: &SimConfig, xi_index: usize, replicate: usize) -> Result<Vec<f64>> {
    let p = GevParams::new(config.mu, config.sigma, config.xi_grid[xi_index])?;
    let mut r = rng::rng_from(replicate_seed(config.seed, xi_index, replicate), &[]);
    Ok(sample_with(&p, config.n, &mut r))
}

pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let ma = config.ma_config();
    let n_xi = config.xi_grid.len();
    let total = n_xi * config.n_reps;
    let done = AtomicUsize::new(0);
    let step = (total / 20).max(1);
    // [xi][rep][method] -> per-period levels
    let results: Vec<Vec<Option<Vec<f64>>>> = (0..total)
        .into_par_iter()
        .map(|job| {
            let (i, r) = (job / config.n_reps, job % config.n_reps);
            let out = replicate_sample(config, i, r)
                .and_then(|xs| {
                    return_levels(
                        &xs,
                        &config.methods,
                        &config.periods,
                        &ma,
                        rng::derive_seed(replicate_seed(config.seed, i, r), &[1]),
                    )
                })
                .map(|per| per.into_iter().map(|x| x.ok()).collect())
                .unwrap_or_else(|e| {
                    log::debug!("replicate ({i}, {r}) failed: {e}");
                    vec![None; config.methods.len()]
                });
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if d.is_multiple_of(step) || d == total {
                log::info!("simulation progress: {d}/{total} replicates");
            }
            out
        })
        .collect();

    let mut cells = Vec::new();
    for (i, &xi) in config.xi_grid.iter().enumerate() {
        let truth_params = GevParams::new(config.mu, config.sigma, xi)?;
        let reps = &results[i * config.n_reps..(i + 1) * config.n_reps];
        for (mi, &method) in config.methods.iter().enumerate() {
            for (pi, &period) in config.periods.iter().enumerate() {
                let truth = return_level(&truth_params, period)?;
                let est: Vec<f64> = reps
                    .iter()
                    .filter_map(|rep| rep[mi].as_ref().map(|v| v[pi]))
                    .filter(|v| v.is_finite())
                    .collect();
                let (bias, se, rmse) = if est.is_empty() {
                    (None, None, None)
                } else {
                    let (b, s, r) = summarize(&est, truth);
                    (Some(b), Some(s), Some(r))
                };
                cells.push(SimCell {
                    method,
                    xi,
                    period,
                    true_value: truth,
                    bias,
                    se,
                    rmse,
                    n_ok: est.len(),
                    failures: config.n_reps - est.len(),
                });
            }
        }
    }
    Ok(SimReport { config: config.clone(), cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = GevError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(GevError::InvalidArgument(format!("unknown format '{s}'"))),
        }
    }
}

const MEASURES: [&str; 3] = ["Bias", "SE", "RMSE"];

fn measure(c: &SimCell, m: &str) -> Option<f64> {
    match m {
        "Bias" => c.bias,
        "SE" => c.se,
        _ => c.rmse,
    }
}

fn fmt1(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.1}"))
}

/// Paper-style grid: one row per (measure, method), one column per ξ, one
/// block per return period.
pub fn report_table(report: &SimReport, format: TableFormat) -> Result<String> {
    let cfg = &report.config;
    let lookup = |m: Method, xi: f64, t: f64| report.cell(m, xi, t);
    match format {
        TableFormat::Json => serde_json::to_string_pretty(report)
            .map_err(|e| GevError::InvalidArgument(e.to_string())),
        TableFormat::Csv => {
            let mut s = String::from("period,measure,method");
            for xi in &cfg.xi_grid {
                let _ = write!(s, ",{xi}");
            }
            s.push_str(",failures\n");
            for &t in &cfg.periods {
                for m in MEASURES {
                    for &method in &cfg.methods {
                        let _ = write!(s, "{t},{m},{method}");
                        let mut fails = 0;
                        for &xi in &cfg.xi_grid {
                            let c = lookup(method, xi, t);
                            fails += c.map_or(0, |c| c.failures);
                            let _ = write!(s, ",{}", fmt1(c.and_then(|c| measure(c, m))));
                        }
                        let _ = writeln!(s, ",{fails}");
                    }
                }
            }
            Ok(s)
        }
        TableFormat::Markdown => {
            let mut s = String::new();
            for &t in &cfg.periods {
                let _ = writeln!(s, "### T = {t}\n");
                s.push_str("| Measure | Method |");
                for xi in &cfg.xi_grid {
                    let _ = write!(s, " {xi} |");
                }
                s.push('\n');
                s.push_str("|---|---|");
                for _ in &cfg.xi_grid {
                    s.push_str("---:|");
                }
                s.push('\n');
                for m in MEASURES {
                    for &method in &cfg.methods {
                        let _ = write!(s, "| {m} | {method} |");
                        for &xi in &cfg.xi_grid {
                            let c = lookup(method, xi, t);
                            let _ = write!(s, " {} |", fmt1(c.and_then(|c| measure(c, m))));
                        }
                        s.push('\n');
                    }
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

pub fn parse_json_report(text: &str) -> Result<SimReport> {
    serde_json::from_str(text).map_err(|e| GevError::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig {
            xi_grid: vec![-0.2, -0.05],
            n_reps: 6,
            ..SimConfig::new(vec![Method::Mle, Method::Lme], 17)
        }
    }

    #[test]
    fn single_replicate_measures() {
        let c = SimConfig { n_reps: 1, ..tiny() };
        let rep = run_simulation(&c).unwrap();
        for cell in &rep.cells {
            let b = cell.bias.unwrap();
            assert_eq!(cell.se.unwrap(), 0.0);
            assert!((cell.rmse.unwrap() - b.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_identity_and_truth() {
        let rep = run_simulation(&tiny()).unwrap();
        assert_eq!(rep.cells.len(), 2 * 2 * 2);
        for c in &rep.cells {
            let (b, s, r) = (c.bias.unwrap(), c.se.unwrap(), c.rmse.unwrap());
            assert!((r * r - (b * b + s * s)).abs() <= 1e-9 * r * r);
            assert_eq!(c.n_ok + c.failures, 6);
        }
        let t = return_level(&GevParams::new(100.0, 30.0, -0.35).unwrap(), 100.0).unwrap();
        assert!((t - 443.1).abs() < 0.05);
    }

    #[test]
    fn common_random_numbers() {
        let c = tiny();
        let a = replicate_sample(&c, 1, 3).unwrap();
        let b = replicate_sample(&c, 1, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, replicate_sample(&c, 1, 4).unwrap());
        assert_ne!(a, replicate_sample(&c, 0, 3).unwrap());
    }

    #[test]
    fn tables_render_and_roundtrip() {
        let rep = run_simulation(&tiny()).unwrap();
        let js = report_table(&rep, TableFormat::Json).unwrap();
        assert_eq!(parse_json_report(&js).unwrap(), rep);
        let md = report_table(&rep, TableFormat::Markdown).unwrap();
        let rows = md.lines().filter(|l| l.starts_with("| Bias") || l.starts_with("| SE") || l.starts_with("| RMSE")).count();
        assert_eq!(rows, 3 * 2 * 2);
        let csv = report_table(&rep, TableFormat::Csv).unwrap();
        let line = csv.lines().nth(1).unwrap();
        let v = line.split(',').nth(3).unwrap();
        assert_eq!(v.split('.').nth(1).unwrap().len(), 1, "{line}");
    }

    #[test]
    fn config_parsing() {
        let kv = "# desk run\nn = 40\nn_reps = 10\nmethods = MLE, MA.gLd1\nxi_grid = -0.3,-0.1\nseed = 5\nma.prune_threshold = 0.02\n";
        let c = SimConfig::parse(kv).unwrap();
        assert_eq!(c.n, 40);
        assert_eq!(c.methods.len(), 2);
        assert_eq!(c.xi_grid, vec![-0.3, -0.1]);
        assert_eq!(c.ma.prune_threshold, 0.02);
        assert_eq!(c.periods, vec![100.0, 200.0]);
        let js = serde_json::to_string(&c).unwrap();
        assert_eq!(SimConfig::parse(&js).unwrap(), c);

        let missing = SimConfig::parse("n = 40\nmethods = MLE\n").unwrap_err().to_string();
        assert!(missing.contains("seed"), "{missing}");
        let small = SimConfig::parse("n = 5\nmethods = MLE\nseed = 1\n").unwrap_err().to_string();
        assert!(small.contains("n:"), "{small}");
        let unknown = SimConfig::parse("bogus = 1\nmethods = MLE\nseed = 1\n").unwrap_err().to_string();
        assert!(unknown.contains("bogus"), "{unknown}");
        assert!(matches!(SimConfig::parse("seed 1"), Err(GevError::Parse { line: 1, .. })));
    }
}
