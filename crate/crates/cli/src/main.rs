//! `gevma`: batch front end for GEV fitting, model averaging, K selection,
//! bootstrap standard errors and simulation studies. Outputs are files.

mod fit;
mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gevma::dataset::{DataFormat, Dataset};
use gevma::ensemble::{select_k_in, MaContext, MaMethodConfig, Starter};
use gevma::method::{bootstrap_return_levels, fit_method_in, parse_methods, Method};
use gevma::sim::{report_table, run_simulation, SimConfig, TableFormat};
use gevma::GevError;

use output::{opt, OutDir, Provenance};

#[derive(Parser, Debug)]
#[command(name = "gevma", version, about = "GEV model averaging for extreme return levels")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit methods to a series and write reports and plot data.
    Fit(FitArgs),
    /// K-selection diagnostics for one averaging method.
    SelectK(SelectKArgs),
    /// Run a simulation study from a key=value or JSON config.
    Simulate(SimulateArgs),
    /// Nonparametric bootstrap standard errors of return levels.
    BootstrapSe(BootArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InputFormat {
    Auto,
    Single,
    YearValue,
}

impl From<InputFormat> for DataFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Auto => DataFormat::Auto,
            InputFormat::Single => DataFormat::CsvSingleColumn,
            InputFormat::YearValue => DataFormat::CsvYearValue,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StarterArg {
    Mle,
    Lme,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Markdown,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Json => TableFormat::Json,
            FormatArg::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV with one value column or year,value columns.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    input_format: InputFormat,
}

#[derive(Args, Debug)]
struct TuningArgs {
    #[arg(long, default_value_t = 12)]
    k: usize,
    /// Level of the shape interval that bounds the candidate grid.
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, value_enum, default_value = "mle")]
    starter: StarterArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl TuningArgs {
    fn config(&self) -> Result<MaMethodConfig, CliError> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CliError::Usage(anyhow!("--ci-level must be in (0,1)")));
        }
        let cfg = MaMethodConfig {
            k: self.k,
            alpha_ci: 1.0 - self.ci_level,
            starter: match self.starter {
                StarterArg::Mle => Starter::MleProfile,
                StarterArg::Lme => Starter::LmeBootstrap,
            },
            ..MaMethodConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.into()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "MLE,LME,Re.MLE1,Re.MLE2,MLE.CD,MA.gLd1,MA.like1")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    return_periods: Vec<f64>,
    /// Bootstrap replicates for SEs and bands; 0 disables.
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct SelectKArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "MA.like1")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    return_periods: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    k_min: usize,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct BootArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "MLE,MA.gLd1")]
    methods: String,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    return_periods: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Debug)]
enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    AllFailed(String),
    Other(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::AllFailed(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "usage error: {e:#}"),
            CliError::Data(e) => write!(f, "data error: {e:#}"),
            CliError::AllFailed(m) => write!(f, "all requested methods failed: {m}"),
            CliError::Other(e) => write!(f, "error: {e:#}"),
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn load(d: &DataArgs) -> Result<Dataset, CliError> {
    Dataset::from_path(&d.data, d.input_format.into())
        .with_context(|| format!("reading {}", d.data.display()))
        .map_err(CliError::Data)
}

fn context<'a>(ds: &'a Dataset, cfg: &MaMethodConfig, seed: u64) -> Result<MaContext<'a>, CliError> {
    MaContext::new(&ds.values, cfg, seed).map_err(|e| CliError::Data(e.into()))
}

fn check_periods(p: &[f64]) -> Result<(), CliError> {
    if p.is_empty() {
        return Err(usage(anyhow!("--return-periods is empty")));
    }
    if let Some(t) = p.iter().find(|&&t| !(t > 1.0 && t.is_finite())) {
        return Err(usage(anyhow!("return period must be > 1, got {t}")));
    }
    Ok(())
}

fn methods(list: &str) -> Result<Vec<Method>, CliError> {
    let m = parse_methods(list).map_err(usage)?;
    if m.is_empty() {
        return Err(usage(anyhow!("--methods is empty")));
    }
    Ok(m)
}

fn names(m: &[Method]) -> Vec<&'static str> {
    m.iter().map(|m| m.name()).collect()
}

fn data_config(d: &DataArgs, ds: &Dataset) -> serde_json::Value {
    json!({ "data": d.data.display().to_string(), "input_format": format!("{:?}", d.input_format).to_lowercase(), "n": ds.n() })
}

fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let methods = methods(&a.methods)?;
    check_periods(&a.return_periods)?;
    let base = a.tuning.config()?;
    let ds = load(&a.data)?;
    let ctx = context(&ds, &base, a.tuning.seed)?;
    let config = json!({
        "input": data_config(&a.data, &ds),
        "methods": names(&methods),
        "return_periods": a.return_periods,
        "boot": a.boot,
        "ci_level": a.tuning.ci_level,
        "ma": base,
    });
    let mut out = OutDir::create(&a.out, Provenance::new("fit", a.tuning.seed, config))?;
    let settings = fit::FitSettings {
        methods,
        periods: a.return_periods.clone(),
        boot: a.boot,
        ci_level: a.tuning.ci_level,
        seed: a.tuning.seed,
        base,
    };
    let report = fit::run(&ds, &ctx, &settings, &mut out)?;
    let summary = match a.format {
        FormatArg::Csv => fit::report_csv(&report),
        FormatArg::Json => serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?,
        FormatArg::Markdown => fit::report_markdown(&report),
    };
    println!("{summary}");
    if report.all_failed() {
        let msgs: Vec<String> =
            report.rows.iter().map(|r| format!("{}: {}", r.method, r.error.as_deref().unwrap_or(""))).collect();
        return Err(CliError::AllFailed(msgs.join("; ")));
    }
    Ok(())
}

fn cmd_select_k(a: &SelectKArgs) -> Result<(), CliError> {
    let m = match methods(&a.methods)?.as_slice() {
        [Method::Ma(m)] => *m,
        _ => return Err(usage(anyhow!("select-k takes exactly one averaging method"))),
    };
    check_periods(&a.return_periods)?;
    if a.k_min < 1 || a.k_max < a.k_min + 2 {
        return Err(usage(anyhow!("need 1 <= --k-min and --k-max >= --k-min + 2")));
    }
    let t = a.return_periods[0];
    let base = MaMethodConfig { method: m, ..a.tuning.config()? };
    let ds = load(&a.data)?;
    let ctx = context(&ds, &base, a.tuning.seed)?;
    let sel = select_k_in(&ctx, &base, t, (a.k_min, a.k_max), 0.6)
        .map_err(|e| CliError::AllFailed(format!("{m}: {e}")))?;
    let config = json!({
        "input": data_config(&a.data, &ds),
        "method": m.name(),
        "return_period": t,
        "k_range": [a.k_min, a.k_max],
        "alpha_q": 0.6,
        "ma": base,
    });
    let mut out = OutDir::create(&a.out, Provenance::new("select-k", a.tuning.seed, config))?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# k_prime: {}\n# k_star: {}\n# threshold_d: {}\n# threshold_se: {}\n# fallback: {}",
        sel.k_prime, sel.k_star, sel.threshold_d, sel.threshold_se, sel.fallback
    );
    s.push_str("k,r_ma,d_k,se_k,in_stable,in_efficient,k_effective,is_k_prime,is_k_star\n");
    for r in &sel.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            r.r_ma,
            opt(r.d_k),
            r.se_k,
            r.in_stable,
            r.in_efficient,
            r.k_effective,
            r.k == sel.k_prime,
            r.k == sel.k_star
        );
    }
    out.csv("k_selection.csv", &s)?;
    if matches!(a.format, FormatArg::Json) {
        out.json("k_selection.json", &sel)?;
    }
    println!("K' = {}, K* = {}", sel.k_prime, sel.k_star);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))
        .map_err(CliError::Usage)?;
    let mut cfg = SimConfig::parse(&text).map_err(usage)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    let resolved = serde_json::to_value(&cfg).map_err(anyhow::Error::from)?;
    let mut out = OutDir::create(&a.out, Provenance::new("simulate", cfg.seed, resolved))?;
    out.json("resolved_config.json", &cfg)?;
    let report = run_simulation(&cfg).map_err(|e| CliError::Other(e.into()))?;
    out.json("report.json", &report)?;
    match a.format {
        FormatArg::Csv => out.csv("report.csv", &report_table(&report, TableFormat::Csv).map_err(anyhow::Error::from)?)?,
        FormatArg::Markdown => {
            let md = report_table(&report, TableFormat::Markdown).map_err(anyhow::Error::from)?;
            out.markdown("report.md", &md)?;
            println!("{md}");
        }
        FormatArg::Json => {}
    }
    if report.cells.iter().all(|c| c.rmse.is_none()) {
        return Err(CliError::AllFailed("every simulation cell failed".into()));
    }
    Ok(())
}

fn cmd_bootstrap_se(a: &BootArgs) -> Result<(), CliError> {
    let methods = methods(&a.methods)?;
    check_periods(&a.return_periods)?;
    if a.boot < 2 {
        return Err(usage(anyhow!("--boot must be >= 2")));
    }
    let base = a.tuning.config()?;
    let ds = load(&a.data)?;
    let ctx = context(&ds, &base, a.tuning.seed)?;
    let config = json!({
        "input": data_config(&a.data, &ds),
        "methods": names(&methods),
        "return_periods": a.return_periods,
        "boot": a.boot,
        "ma": base,
    });
    let mut out = OutDir::create(&a.out, Provenance::new("bootstrap-se", a.tuning.seed, config))?;
    let mut s = String::from("method,period,estimate,boot_se,boot_mean,n_ok,failures,error\n");
    let mut vals = String::from("method,period,replicate,return_level\n");
    let mut rows = Vec::new();
    let mut any_ok = false;
    for &m in &methods {
        let est = fit_method_in(&ctx, m, &base)
            .and_then(|f| a.return_periods.iter().map(|&t| f.return_level(t)).collect::<Result<Vec<_>, GevError>>());
        let boot = bootstrap_return_levels(&ds.values, m, &a.return_periods, a.boot, &base, a.tuning.seed);
        match (&est, &boot) {
            (Ok(est), Ok(boot)) => {
                any_ok = true;
                for ((t, e), b) in a.return_periods.iter().zip(est).zip(boot) {
                    let _ = writeln!(s, "{m},{t},{e},{},{},{},{},", b.se, b.mean, b.values.len(), b.failures);
                    for (i, v) in b.values.iter().enumerate() {
                        let _ = writeln!(vals, "{m},{t},{i},{v}");
                    }
                    rows.push(json!({ "method": m, "period": t, "estimate": e, "boot_se": b.se,
                        "boot_mean": b.mean, "n_ok": b.values.len(), "failures": b.failures }));
                }
            }
            _ => {
                let err = est.err().or(boot.err()).map(|e| e.to_string()).unwrap_or_default();
                log::warn!("{m} failed: {err}");
                for t in &a.return_periods {
                    let _ = writeln!(s, "{m},{t},NA,NA,NA,0,{},{}", a.boot, err.replace(',', " "));
                    rows.push(json!({ "method": m, "period": t, "error": err }));
                }
            }
        }
    }
    out.csv("bootstrap_se.csv", &s)?;
    out.csv("bootstrap_values.csv", &vals)?;
    if matches!(a.format, FormatArg::Json) {
        out.json("bootstrap_se.json", &json!({ "rows": rows }))?;
    }
    print!("{s}");
    if !any_ok {
        return Err(CliError::AllFailed("no method produced a bootstrap SE".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(anyhow!("--threads: {e}")))?;
    }
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| a.out.as_path()),
        Command::SelectK(a) => cmd_select_k(a).map(|_| a.out.as_path()),
        Command::Simulate(a) => cmd_simulate(a).map(|_| a.out.as_path()),
        Command::BootstrapSe(a) => cmd_bootstrap_se(a).map(|_| a.out.as_path()),
    };
    outcome.map(|p: &Path| log::info!("outputs written to {}", p.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gevma: {e}");
            ExitCode::from(e.code())
        }
    }
}
