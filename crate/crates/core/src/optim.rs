//! Derivative-free minimizers.
//!
//! Likelihood surfaces of the GEV have cliffs wherever an observation leaves
//! the support, so objectives here may return `f64::INFINITY`. The simplex
//! method only compares function values and copes with that as long as the
//! starting vertex is finite.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when every vertex is within `x_tol * (1 + |best|)` of the best
    /// vertex, coordinate-wise.
    pub x_tol: f64,
    /// ...and the spread of function values is below `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// Number of restarts from the converged point.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            x_tol: 1e-8,
            f_tol: 1e-12,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` starting at `x0`, with an axis-aligned initial simplex of
/// per-coordinate sizes `step`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best = run_simplex(&mut f, x0, step, opts);
    let mut total = best.evals;
    for _ in 0..opts.restarts {
        if total >= opts.max_evals {
            break;
        }
        let shrunk: Vec<f64> = step.iter().map(|s| s * 0.1).collect();
        let next = run_simplex(&mut f, &best.x, &shrunk, opts);
        total += next.evals;
        let improved = next.f < best.f - opts.f_tol * (1.0 + best.f.abs());
        if next.f <= best.f {
            best = Minimum {
                evals: total,
                ..next
            };
        }
        if !improved {
            break;
        }
    }
    best.evals = total;
    best
}

fn run_simplex<F>(f: &mut F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(dim + 1);
    pts.push(x0.to_vec());
    vals.push(f(x0));
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += if step[i] != 0.0 { step[i] } else { 1e-4 };
        let mut v = f(&p);
        if !v.is_finite() {
            // try the opposite direction
            p[i] = x0[i] - step[i];
            v = f(&p);
        }
        pts.push(p);
        vals.push(v);
    }
    let mut evals = dim + 1;
    let n = dim as f64;
    let mut converged = false;

    let mut order: Vec<usize> = (0..=dim).collect();
    while evals < opts.max_evals {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let b = order[0];
        let w = order[dim];
        let sw = order[dim - 1];

        if vals[b].is_finite() {
            let fb = vals[b];
            let spread = vals[w] - fb;
            let x_ok = pts.iter().all(|p| {
                p.iter()
                    .zip(&pts[b])
                    .all(|(a, c)| (a - c).abs() <= opts.x_tol * (1.0 + c.abs()))
            });
            if x_ok && spread.is_finite() && spread <= opts.f_tol * (1.0 + fb.abs()) {
                converged = true;
                break;
            }
        }

        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for (c, x) in centroid.iter_mut().zip(&pts[i]) {
                *c += x / n;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[w])
                .map(|(c, x)| c + t * (c - x))
                .collect()
        };

        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[b] {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                pts[w] = xe;
                vals[w] = fe;
            } else {
                pts[w] = xr;
                vals[w] = fr;
            }
        } else if fr < vals[sw] {
            pts[w] = xr;
            vals[w] = fr;
        } else {
            let (xc, fc) = if fr < vals[w] {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < vals[w].min(fr) {
                pts[w] = xc;
                vals[w] = fc;
            } else {
                // shrink toward the best vertex
                let xb = pts[b].clone();
                for &i in order.iter().skip(1) {
                    let p: Vec<f64> = pts[i]
                        .iter()
                        .zip(&xb)
                        .map(|(x, c)| c + 0.5 * (x - c))
                        .collect();
                    vals[i] = f(&p);
                    pts[i] = p;
                    evals += 1;
                }
            }
        }
    }

    let (bi, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty simplex");
    Minimum {
        x: pts[bi].clone(),
        f: vals[bi],
        evals,
        converged,
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bisection for a sign change of `f` on `[a, b]`.
pub fn bisect<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    let mut fa = f(a);
    while (b - a).abs() > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
