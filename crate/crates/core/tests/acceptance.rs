//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! The Hae-nam series is read from `$HAENAM_DATA` or
//! `tests/data/haenam.csv` (single column or year,value).

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gevma::dataset::{DataFormat, Dataset};
use gevma::ensemble::{fit_ma_in, select_k_in, MaContext, MaMethod, MaMethodConfig};
use gevma::estimators::{fit_fixed_xi_mle, fit_lme, fit_mle, fit_mle_cd, fit_remle, fixed_xi_lme_from, ReMleVariant};
use gevma::gev::{self, population_l_moments, return_level, rl_gradient_fixed_xi, GevParams};
use gevma::lmoments::SampleLMoments;
use gevma::method::{bootstrap_se, Method};
use gevma::sim::{report_table, run_simulation, summarize, SimConfig, SimReport, TableFormat};
use gevma::surrogate::{fit_surrogate, surrogate_of, DEFAULT_PROBS};
use gevma::uncertainty::{delta_var_fixed_xi, dirichlet_cov, ma_var_random_weights};

fn verdict(n: u32, checks: &[(String, bool)]) {
    let ok = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(d, b)| format!("{}{d}", if *b { "" } else { "!" }))
        .collect();
    println!("criterion {n}: {} [{}]", if ok { "PASS" } else { "FAIL" }, detail.join("; "));
    assert!(ok, "criterion {n} failed");
}

fn within(name: &str, got: f64, target: f64, tol: f64) -> (String, bool) {
    (format!("{name}={got:.3} (target {target}±{tol})"), (got - target).abs() <= tol)
}

fn within_rel(name: &str, got: f64, target: f64, rel: f64) -> (String, bool) {
    within(name, got, target, rel * target.abs())
}

fn haenam() -> Result<Vec<f64>, String> {
    let path = std::env::var_os("HAENAM_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/haenam.csv"));
    Dataset::from_path(&path, DataFormat::Auto)
        .map(|d| d.values)
        .map_err(|e| format!("Hae-nam series unavailable at {}: {e}", path.display()))
}

fn need_haenam(n: u32) -> Vec<f64> {
    match haenam() {
        Ok(d) => d,
        Err(e) => {
            println!("criterion {n}: FAIL [{e}]");
            panic!("criterion {n} failed: {e}");
        }
    }
}

#[test]
fn criterion_1_haenam_golden_fits() {
    let xs = need_haenam(1);
    let t0 = Instant::now();
    let mle = fit_mle(&xs).unwrap().params;
    let lme = fit_lme(&xs).unwrap().params;
    let re1 = fit_remle(&xs, ReMleVariant::MeanMatched).unwrap().params;
    let re2 = fit_remle(&xs, ReMleVariant::MeanAndScaleMatched).unwrap().params;
    let cd = fit_mle_cd(&xs, 1.0, 1.0).unwrap().params;
    let elapsed = t0.elapsed();
    let rl = |p: &GevParams| return_level(p, 100.0).unwrap();
    verdict(
        1,
        &[
            (format!("n={}", xs.len()), xs.len() == 52),
            within("MLE mu", mle.mu, 112.6, 0.5),
            within("MLE sigma", mle.sigma, 35.10, 0.5),
            within("MLE xi", mle.xi, -0.394, 0.01),
            within_rel("MLE RL", rl(&mle), 569.4, 0.01),
            within("LME mu", lme.mu, 113.5, 0.5),
            within("LME sigma", lme.sigma, 37.35, 0.5),
            within("LME xi", lme.xi, -0.310, 0.01),
            within_rel("LME RL", rl(&lme), 494.9, 0.01),
            within_rel("Re.MLE1 RL", rl(&re1), 537.1, 0.01),
            within_rel("Re.MLE2 RL", rl(&re2), 515.7, 0.01),
            within_rel("MLE.CD RL", rl(&cd), 513.5, 0.01),
            (format!("runtime {elapsed:?} < 5s"), elapsed < Duration::from_secs(5)),
        ],
    );
}

#[test]
fn criterion_2_haenam_ma_rows() {
    let xs = need_haenam(2);
    let mut checks = Vec::new();
    for (m, rl_target, se_target) in [(MaMethod::MaGld1, 492.2, 73.0), (MaMethod::MaLike1, 518.1, 72.1)] {
        let cfg = MaMethodConfig::new(m);
        let ctx = MaContext::new(&xs, &cfg, 1).unwrap();
        let fit = fit_ma_in(&ctx, &cfg).unwrap();
        let se = fit.variance(&ctx, 100.0).unwrap().var_random.sqrt();
        checks.push(within(&format!("{m} RL"), fit.return_level(100.0).unwrap(), rl_target, 5.0));
        checks.push(within_rel(&format!("{m} SE"), se, se_target, 0.15));
        if m == MaMethod::MaGld1 {
            let s = surrogate_of(&fit).unwrap().params;
            checks.push(within("surrogate mu", s.mu, 115.3, 1.0));
            checks.push(within("surrogate sigma", s.sigma, 34.34, 1.0));
            checks.push(within("surrogate xi", s.xi, -0.336, 0.02));
        }
    }
    verdict(2, &checks);
}

#[test]
fn criterion_3_haenam_bma() {
    let xs = need_haenam(3);
    let cfg = MaMethodConfig::new(MaMethod::BmaLike);
    let ctx = MaContext::new(&xs, &cfg, 1).unwrap();
    let fit = fit_ma_in(&ctx, &cfg).unwrap();
    let v = fit.bma_variance(&ctx, 100.0).unwrap();
    verdict(
        3,
        &[
            within_rel("total SE", v.total.sqrt(), 62.07, 0.15),
            within_rel("among SE", v.among_model.sqrt(), 14.73, 0.15),
            within_rel("within SE", v.within_model.sqrt(), 60.29, 0.15),
            within("RL", fit.return_level(100.0).unwrap(), 520.59, 8.0),
        ],
    );
}

const DESK_SEED: u64 = 2024;

fn desk() -> &'static (SimReport, Duration) {
    static R: OnceLock<(SimReport, Duration)> = OnceLock::new();
    R.get_or_init(|| {
        let c = SimConfig {
            xi_grid: vec![-0.4, -0.35, -0.2, -0.05],
            n_reps: 200,
            periods: vec![100.0],
            ..SimConfig::new(
                vec![
                    Method::Mle,
                    Method::Ma(MaMethod::MaGld1),
                    Method::Ma(MaMethod::MaCvt),
                    Method::Ma(MaMethod::BmaLike),
                ],
                DESK_SEED,
            )
        };
        let t0 = Instant::now();
        let r = run_simulation(&c).unwrap();
        (r, t0.elapsed())
    })
}

fn cell(r: &SimReport, m: Method, xi: f64) -> (f64, f64) {
    let c = r.cell(m, xi, 100.0).expect("cell");
    (c.bias.expect("bias"), c.rmse.expect("rmse"))
}

#[test]
fn criterion_4_desk_simulation() {
    let (r, elapsed) = desk();
    let mle = Method::Mle;
    let gld = Method::Ma(MaMethod::MaGld1);
    let cvt = Method::Ma(MaMethod::MaCvt);
    let mut checks = vec![];
    for xi in [-0.2, -0.35] {
        let b = cell(r, mle, xi).0;
        checks.push((format!("MLE bias({xi})={b:.1} > 0"), b > 0.0));
    }
    let b = cell(r, gld, -0.35).0;
    checks.push((format!("MA.gLd1 bias(-0.35)={b:.1} < 0"), b < 0.0));
    for xi in [-0.35, -0.2, -0.05] {
        let (g, m) = (cell(r, gld, xi).1, cell(r, mle, xi).1);
        checks.push((format!("RMSE MA.gLd1 {g:.1} < MLE {m:.1} at {xi}"), g < m));
    }
    let (c, g) = (cell(r, cvt, -0.35).1, cell(r, gld, -0.35).1);
    checks.push((format!("RMSE MA.cvt {c:.1} > MA.gLd1 {g:.1} at -0.35"), c > g));
    checks.push(within_rel("RMSE MLE(-0.2)", cell(r, mle, -0.2).1, 85.3, 0.25));
    checks.push(within_rel("RMSE MA.gLd1(-0.2)", cell(r, gld, -0.2).1, 65.1, 0.25));
    checks.push((format!("runtime {elapsed:.1?} <= 10 min"), *elapsed <= Duration::from_secs(600)));
    verdict(4, &checks);
}

#[test]
fn criterion_5_bma_bias_correction() {
    let (r, _) = desk();
    let b_bma = cell(r, Method::Ma(MaMethod::BmaLike), -0.4).0;
    let b_gld = cell(r, Method::Ma(MaMethod::MaGld1), -0.4).0;
    verdict(
        5,
        &[
            (format!("|bias BMA.like| {:.1} < |bias MA.gLd1| {:.1}", b_bma.abs(), b_gld.abs()), b_bma.abs() < b_gld.abs()),
            within("bias BMA.like(-0.4)", b_bma, -2.0, 15.0),
        ],
    );
}

#[test]
fn criterion_6_haenam_k_selection() {
    let xs = need_haenam(6);
    let cfg = MaMethodConfig::new(MaMethod::MaLike1);
    let ctx = MaContext::new(&xs, &cfg, 1).unwrap();
    let sel = select_k_in(&ctx, &cfg, 100.0, (4, 20), 0.6).unwrap();
    verdict(
        6,
        &[(format!("K*={} in {{10,11,12}}", sel.k_star), (10..=12).contains(&sel.k_star))],
    );
}

/// Tanh-sinh quadrature of `f(u, 1-u)` over (0,1).
fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
    let h = 1.0 / 64.0;
    let half = std::f64::consts::FRAC_PI_2;
    let mut acc = 0.0;
    for j in -400..=400 {
        let t = j as f64 * h;
        let s = half * t.sinh();
        let u = 1.0 / (1.0 + (-2.0 * s).exp());
        let v = 1.0 / (1.0 + (2.0 * s).exp());
        if u <= 0.0 || v <= 0.0 {
            continue;
        }
        acc += half * t.cosh() / (s.cosh() * s.cosh()) * 0.5 * f(u, v);
    }
    acc * h
}

fn random_params(r: &mut ChaCha8Rng) -> GevParams {
    GevParams::new(r.random_range(-200.0..200.0), r.random_range(0.1..80.0), r.random_range(-0.9..0.9))
        .unwrap()
}

#[test]
fn criterion_7_property_suites() {
    const CASES: usize = 100;
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let mut checks = Vec::new();

    let ok = (0..CASES).all(|_| {
        let p = random_params(&mut r);
        let q: f64 = r.random_range(0.001..0.999);
        (p.cdf(p.quantile(q)) - q).abs() < 1e-9
    });
    checks.push(("quantile∘cdf 1e-9".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let p = random_params(&mut r);
        let [l1, l2, l3] = population_l_moments(&p).unwrap();
        let l = SampleLMoments { l1, l2, l3, n: 50, robust_center: 0.0 };
        let b = fixed_xi_lme_from(&l, p.xi).unwrap();
        (b.mu - p.mu).abs() < 1e-10 * (p.mu.abs() + p.sigma) && (b.sigma - p.sigma).abs() < 1e-10 * p.sigma
    });
    checks.push(("fixed-shape LME roundtrip 1e-10".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let p = GevParams::new(r.random_range(-100.0..100.0), r.random_range(0.5..50.0), r.random_range(-0.45..0.9)).unwrap();
        let q = |u: f64, v: f64| p.mu + p.sigma * gev::quantile_factor(p.xi, (v / u).ln_1p());
        let quad = [
            tanh_sinh(q),
            tanh_sinh(|u, v| q(u, v) * (u - v)),
            tanh_sinh(|u, v| q(u, v) * (6.0 * u * u - 6.0 * u + 1.0)),
        ];
        let pop = population_l_moments(&p).unwrap();
        let tol = 1e-6 * (p.mu.abs() + p.sigma);
        (0..3).all(|k| (pop[k] - quad[k]).abs() < tol)
    });
    checks.push(("population L-moments vs quadrature 1e-6".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let p = random_params(&mut r);
        let t: f64 = r.random_range(1.5..2000.0);
        let g = rl_gradient_fixed_xi(&p, 1.0 / t);
        let hs = 1e-4 * p.sigma;
        let f = |s: f64| return_level(&GevParams { sigma: s, ..p }, t).unwrap();
        let ds = (f(p.sigma + hs) - f(p.sigma - hs)) / (2.0 * hs);
        (ds - g[1]).abs() <= 1e-6 * g[1].abs().max(1e-3)
    });
    checks.push(("rl gradient vs differences 1e-6".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let k = r.random_range(2..10);
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let a: Vec<f64> = (0..k * k).map(|_| r.random_range(-10.0..10.0)).collect();
        let c: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| (0..k).map(|m| a[i * k + m] * a[j * k + m]).sum()).collect())
            .collect();
        let rl: Vec<f64> = (0..k).map(|_| r.random_range(100.0..900.0)).collect();
        let quad: f64 = (0..k).map(|i| w[i] * (0..k).map(|j| c[i][j] * w[j]).sum::<f64>()).sum();
        let rows_zero = dirichlet_cov(&w).iter().all(|row| row.iter().sum::<f64>().abs() < 1e-12);
        ma_var_random_weights(&w, &rl, &c, 3).unwrap() >= quad - 1e-9 * quad && rows_zero
    });
    checks.push(("random-weight variance ≥ wᵀCw; D rows sum to 0".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let n = r.random_range(1..300);
        let est: Vec<f64> = (0..n).map(|_| r.random_range(-1e4..1e4)).collect();
        let (b, s, m) = summarize(&est, r.random_range(-1e3..1e3));
        (m * m - (b * b + s * s)).abs() <= 1e-9 * m * m
    });
    checks.push(("rmse² = bias² + se²".to_string(), ok));

    let ok = (0..CASES).all(|_| {
        let g = GevParams::new(r.random_range(0.0..200.0), r.random_range(5.0..60.0), r.random_range(-0.45..0.45)).unwrap();
        let start = GevParams { mu: g.mu + 0.1 * g.sigma, sigma: g.sigma * 1.1, xi: g.xi + 0.05 };
        fit_surrogate(|q| g.quantile(q), &DEFAULT_PROBS, start).unwrap().rss < 1e-8
    });
    checks.push(("surrogate recovery rss < 1e-8".to_string(), ok));

    let mut simplex_ok = true;
    let mut equiv_ok = true;
    for case in 0..CASES {
        let xi = r.random_range(-0.4..0.1);
        let xs = gev::sample(&GevParams::new(100.0, 30.0, xi).unwrap(), 50, case as u64).unwrap();
        let a: f64 = r.random_range(-500.0..500.0);
        let b: f64 = r.random_range(0.05..20.0);
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let m = MaMethod::ALL[case % MaMethod::ALL.len()];
        let cfg = MaMethodConfig { boot_b: 200, ..MaMethodConfig::new(m) };
        if let Ok(e) = gevma::ensemble::ma_return_level(&xs, &cfg, 100.0, 3) {
            let w = &e.weights.w;
            let lo = e.per_model_rl.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = e.per_model_rl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            simplex_ok &= w.iter().all(|&v| v >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12;
            simplex_ok &= lo - 1e-9 * hi <= e.r_ma && e.r_ma <= hi + 1e-9 * hi;
        }
        for f in [fit_mle, fit_lme] {
            if let (Ok(p), Ok(q)) = (f(&xs), f(&ys)) {
                let (p, q) = (p.params, q.params);
                equiv_ok &= ((q.mu - a) / b - p.mu).abs() < 1e-4 * p.sigma
                    && (q.sigma / b - p.sigma).abs() < 1e-4 * p.sigma
                    && (q.xi - p.xi).abs() < 1e-4;
            }
        }
    }
    checks.push(("weights on simplex, r_ma convex".to_string(), simplex_ok));
    checks.push(("affine equivariance 1e-4".to_string(), equiv_ok));

    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let xi = r.random_range(-0.3..0.1);
        let t = [10.0, 50.0, 100.0][case % 3];
        let g = GevParams::new(100.0, 30.0, xi).unwrap();
        let n = 50;
        let typical: Vec<f64> = (1..=n).map(|i| g.quantile((i as f64 - 0.5) / n as f64)).collect();
        let v = delta_var_fixed_xi(&typical, &fit_fixed_xi_mle(&typical, xi).unwrap(), 1.0 / t).unwrap();
        let reps = 1000;
        let est: Vec<f64> = (0..reps)
            .map(|k| {
                let xs = gev::sample(&g, n, 10_000 * case as u64 + k).unwrap();
                return_level(&fit_fixed_xi_mle(&xs, xi).unwrap().params, t).unwrap()
            })
            .collect();
        let m = est.iter().sum::<f64>() / reps as f64;
        let mc = est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        worst = worst.max((v / mc - 1.0).abs());
    }
    checks.push((format!("delta variance vs parametric bootstrap, worst {:.1}% < 20%", 100.0 * worst), worst < 0.2));
    verdict(7, &checks);
}

#[test]
fn criterion_8_determinism_across_workers() {
    let c = SimConfig {
        xi_grid: vec![-0.3, -0.1],
        n_reps: 12,
        periods: vec![100.0],
        ..SimConfig::new(vec![Method::Mle, Method::Ma(MaMethod::MaGld1), Method::Ma(MaMethod::MaLike1)], 99)
    };
    let g = GevParams::new(100.0, 30.0, -0.25).unwrap();
    let xs = gev::sample(&g, 50, 5).unwrap();
    let cfg = MaMethodConfig::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let rep = report_table(&run_simulation(&c).unwrap(), TableFormat::Json).unwrap();
            let a = bootstrap_se(&xs, Method::Mle, 100.0, 100, &cfg, 8).unwrap();
            let b = bootstrap_se(&xs, Method::Ma(MaMethod::MaGld1), 100.0, 40, &cfg, 8).unwrap();
            (rep, a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        })
    };
    let one = run(1);
    let four = run(4);
    verdict(
        8,
        &[
            ("simulate report identical for 1 vs 4 workers".to_string(), one.0 == four.0),
            ("bootstrap MLE identical".to_string(), one.1 == four.1),
            ("bootstrap MA.gLd1 identical".to_string(), one.2 == four.2),
        ],
    );
}
