//! Sample L-moments, their covariance, and L-moment distances.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GevError, Result};
use crate::gev::GevParams;
use crate::rng;
use crate::special;

/// The first three sample L-moments of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleLMoments {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub n: usize,
    /// Sample median, used by the median-based distance.
    pub robust_center: f64,
}

impl SampleLMoments {
    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn t3(&self) -> f64 {
        self.l3 / self.l2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovSource {
    Exact,
    Bootstrap,
}

/// Covariance of `(l1, l2, l3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMomentCov {
    pub v: [[f64; 3]; 3],
    pub source: CovSource,
}

impl LMomentCov {
    pub fn identity() -> Self {
        Self {
            v: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            source: CovSource::Exact,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.v[i][j])
    }

    pub fn is_positive_definite(&self) -> bool {
        cholesky3(&self.matrix()).is_some()
    }
}

/// Unbiased probability-weighted moments `(b0, b1, b2)` of an ascending
/// sample. `b2` is zero for `n < 3`, `b1` for `n < 2`.
pub fn probability_weighted_moments(sorted: &[f64]) -> [f64; 3] {
    let n = sorted.len();
    let nf = n as f64;
    let mut b = [0.0; 3];
    for (i, &x) in sorted.iter().enumerate() {
        let i = i as f64;
        b[0] += x;
        if n >= 2 {
            b[1] += x * i / (nf - 1.0);
        }
        if n >= 3 {
            b[2] += x * i * (i - 1.0) / ((nf - 1.0) * (nf - 2.0));
        }
    }
    b.map(|v| v / nf)
}

fn pwm_to_l(b: [f64; 3]) -> [f64; 3] {
    [b[0], 2.0 * b[1] - b[0], 6.0 * b[2] - 6.0 * b[1] + b[0]]
}

pub fn sample_l_moments(data: &[f64]) -> Result<SampleLMoments> {
    if data.len() < 4 {
        return Err(GevError::TooFewObservations { needed: 4, got: data.len() });
    }
    let s = special::sorted(data);
    let [l1, l2, l3] = pwm_to_l(probability_weighted_moments(&s));
    Ok(SampleLMoments {
        l1,
        l2,
        l3,
        n: data.len(),
        robust_center: special::median(&s),
    })
}

fn binom(n: i64, k: i64) -> f64 {
    if k < 0 || n < k {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c *= (n - j) as f64 / (j + 1) as f64;
    }
    c
}

/// Distribution-free unbiased estimator of `Cov(b_r, b_s)` for `r, s ≤ 2`.
///
/// `β_r β_s` is estimated by the U-statistic averaging
/// `max(A)·max(B)/((r+1)(s+1))` over disjoint subsets `|A| = r+1`,
/// `|B| = s+1`; the covariance estimate is `b_r b_s` minus that.
fn pwm_cov_exact(sorted: &[f64]) -> [[f64; 3]; 3] {
    let n = sorted.len() as i64;
    let b = probability_weighted_moments(sorted);
    let mut cov = [[0.0; 3]; 3];
    for r in 0..3i64 {
        for s in r..3i64 {
            let mut acc = 0.0;
            for i in 1..=n {
                let xi = sorted[(i - 1) as usize];
                for j in 1..=n {
                    if i == j {
                        continue;
                    }
                    let xj = sorted[(j - 1) as usize];
                    // i is max of A, j is max of B
                    let w = if i > j {
                        binom(j - 1, s) * binom(i - s - 2, r)
                    } else {
                        binom(i - 1, r) * binom(j - r - 2, s)
                    };
                    acc += w * xi * xj;
                }
            }
            let total = binom(n, r + 1) * binom(n - r - 1, s + 1) * ((r + 1) * (s + 1)) as f64;
            let theta = acc / total;
            let c = b[r as usize] * b[s as usize] - theta;
            cov[r as usize][s as usize] = c;
            cov[s as usize][r as usize] = c;
        }
    }
    cov
}

fn pwm_cov_to_l_cov(cb: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let a = Matrix3::new(1.0, 0.0, 0.0, -1.0, 2.0, 0.0, 1.0, -6.0, 6.0);
    let c = Matrix3::from_fn(|i, j| cb[i][j]);
    let v = a * c * a.transpose();
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (v[(i, j)] + v[(j, i)]);
        }
    }
    out
}

/// Exact (distribution-free) covariance estimate of the sample L-moments,
/// without the positive-definiteness fallback.
pub fn l_moment_cov_exact(data: &[f64]) -> Result<[[f64; 3]; 3]> {
    if data.len() < 4 {
        return Err(GevError::TooFewObservations { needed: 4, got: data.len() });
    }
    Ok(pwm_cov_to_l_cov(pwm_cov_exact(&special::sorted(data))))
}

/// Empirical covariance of the sample L-moments over `b` nonparametric
/// resamples. Replicate `i` draws from its own seed-indexed stream.
pub fn l_moment_cov_bootstrap(data: &[f64], b: usize, seed: u64) -> Result<[[f64; 3]; 3]> {
    if b < 2 {
        return Err(GevError::InvalidArgument("bootstrap size must be >= 2".into()));
    }
    let n = data.len();
    let reps: Vec<[f64; 3]> = (0..b as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::rng_from(seed, &[0x4c4d, i]);
            let res = resample(data, n, &mut r);
            pwm_to_l(probability_weighted_moments(&special::sorted(&res)))
        })
        .collect();
    let bf = b as f64;
    let mut m = [0.0; 3];
    for r in &reps {
        for k in 0..3 {
            m[k] += r[k] / bf;
        }
    }
    let mut c = [[0.0; 3]; 3];
    for r in &reps {
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += (r[i] - m[i]) * (r[j] - m[j]) / (bf - 1.0);
            }
        }
    }
    Ok(c)
}

pub(crate) fn resample<R: rand::Rng>(data: &[f64], n: usize, r: &mut R) -> Vec<f64> {
    (0..n).map(|_| data[r.random_range(0..data.len())]).collect()
}

/// Covariance of the sample L-moments: the exact estimator, falling back to
/// a nonparametric bootstrap with `bootstrap_b` resamples when it is not
/// positive definite.
pub fn l_moment_cov(data: &[f64], bootstrap_b: usize, seed: u64) -> Result<LMomentCov> {
    if data.len() < 10 {
        return Err(GevError::TooFewObservations { needed: 10, got: data.len() });
    }
    let first = data[0];
    if data.iter().all(|&x| x == first) {
        return Err(GevError::DegenerateSample);
    }
    let exact = LMomentCov {
        v: l_moment_cov_exact(data)?,
        source: CovSource::Exact,
    };
    if exact.is_positive_definite() {
        return Ok(exact);
    }
    log::debug!("exact L-moment covariance not positive definite; using bootstrap");
    let boot = LMomentCov {
        v: l_moment_cov_bootstrap(data, bootstrap_b, seed)?,
        source: CovSource::Bootstrap,
    };
    if boot.is_positive_definite() {
        Ok(boot)
    } else {
        Err(GevError::NotPositiveDefinite)
    }
}

/// Lower Cholesky factor; `None` at any nonpositive pivot.
pub(crate) fn cholesky3(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..3 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// `Σ |l_j − λ_j|`.
pub fn l_distance(sample: &SampleLMoments, pop: [f64; 3]) -> f64 {
    sample
        .as_array()
        .iter()
        .zip(pop)
        .map(|(l, p)| (l - p).abs())
        .sum()
}

/// `dᵀ V⁻¹ d` through a Cholesky solve.
pub fn generalized_l_distance(d: [f64; 3], cov: &LMomentCov) -> Result<f64> {
    let l = cholesky3(&cov.matrix()).ok_or(GevError::NotPositiveDefinite)?;
    // forward substitution L y = d, then GLD = |y|²
    let mut y = Vector3::zeros();
    for i in 0..3 {
        let mut s = d[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    Ok(y.norm_squared())
}

/// `l − λ(candidate)`.
pub fn distance_vector(sample: &SampleLMoments, candidate: &GevParams) -> Result<[f64; 3]> {
    let pop = crate::gev::population_l_moments(candidate)?;
    Ok([sample.l1 - pop[0], sample.l2 - pop[1], sample.l3 - pop[2]])
}

/// Distance vector with the first component replaced by
/// `sample median − candidate median`.
pub fn med_distance_vector(data: &[f64], candidate: &GevParams) -> Result<[f64; 3]> {
    let s = sample_l_moments(data)?;
    med_distance_from(&s, candidate)
}

pub(crate) fn med_distance_from(s: &SampleLMoments, candidate: &GevParams) -> Result<[f64; 3]> {
    let mut d = distance_vector(s, candidate)?;
    d[0] = s.robust_center - candidate.quantile(0.5);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gev;

    #[test]
    fn constant_sample() {
        let s = sample_l_moments(&[4.0; 8]).unwrap();
        assert!((s.l1 - 4.0).abs() < 1e-14 && s.l2.abs() < 1e-14 && s.l3.abs() < 1e-14);
    }

    #[test]
    fn two_point_pwm() {
        let b = probability_weighted_moments(&[0.0, 1.0]);
        assert!((b[0] - 0.5).abs() < 1e-15 && (b[1] - 0.5).abs() < 1e-15);
        let l = pwm_to_l(b);
        assert!((l[0] - 0.5).abs() < 1e-15 && (l[1] - 0.5).abs() < 1e-15);
        assert!(sample_l_moments(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn large_sample_consistency() {
        let g = GevParams::new(100.0, 30.0, -0.2).unwrap();
        let xs = gev::sample(&g, 200_000, 3).unwrap();
        let s = sample_l_moments(&xs).unwrap();
        let p = gev::population_l_moments(&g).unwrap();
        assert!((s.l1 - p[0]).abs() < 1.0, "{} {}", s.l1, p[0]);
        assert!((s.l2 - p[1]).abs() < 0.5);
        assert!((s.l3 - p[2]).abs() < 0.5);
    }

    #[test]
    fn equivariance() {
        let xs = [3.0, 7.5, 1.25, 9.0, 4.0, 12.0, 5.5];
        let s = sample_l_moments(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + 10.0).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| x * 3.0).collect();
        let ss = sample_l_moments(&shifted).unwrap();
        let sc = sample_l_moments(&scaled).unwrap();
        assert!((ss.l1 - s.l1 - 10.0).abs() < 1e-12);
        assert!((ss.l2 - s.l2).abs() < 1e-12 && (ss.l3 - s.l3).abs() < 1e-12);
        assert!((sc.l2 - 3.0 * s.l2).abs() < 1e-12 && (sc.l3 - 3.0 * s.l3).abs() < 1e-12);
    }

    #[test]
    fn exact_variance_of_mean_is_s2_over_n() {
        // Var-hat(l1) must reduce to the unbiased sample variance over n.
        let xs = [2.0, 5.0, 3.5, 10.0, 7.0, 1.0, 4.0, 8.5, 6.0, 9.0, 2.5];
        let v = l_moment_cov_exact(&xs).unwrap();
        let n = xs.len() as f64;
        let m = special::mean(&xs);
        let s2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((v[0][0] - s2 / n).abs() < 1e-10, "{} vs {}", v[0][0], s2 / n);
    }

    #[test]
    fn exact_cov_matches_monte_carlo() {
        // brute-force oracle: covariance of sample L-moments across many
        // independent samples from a known distribution
        let g = GevParams::new(100.0, 30.0, -0.1).unwrap();
        let n = 30;
        let reps = 20_000;
        let mut ls = Vec::with_capacity(reps);
        let mut est = [[0.0; 3]; 3];
        for r in 0..reps {
            let xs = gev::sample(&g, n, 1000 + r as u64).unwrap();
            ls.push(sample_l_moments(&xs).unwrap().as_array());
            if r < 2000 {
                let v = l_moment_cov_exact(&xs).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        est[i][j] += v[i][j] / 2000.0;
                    }
                }
            }
        }
        let mut m = [0.0; 3];
        for l in &ls {
            for k in 0..3 {
                m[k] += l[k] / reps as f64;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mc = ls.iter().map(|l| (l[i] - m[i]) * (l[j] - m[j])).sum::<f64>()
                    / (reps as f64 - 1.0);
                let scale = (est[i][i] * est[j][j]).sqrt();
                assert!(
                    (mc - est[i][j]).abs() < 0.1 * scale,
                    "({i},{j}) mc {mc} est {}",
                    est[i][j]
                );
            }
        }
    }

    #[test]
    fn bootstrap_cov_is_seeded() {
        let g = GevParams::new(100.0, 30.0, -0.2).unwrap();
        let xs = gev::sample(&g, 50, 9).unwrap();
        let a = l_moment_cov_bootstrap(&xs, 500, 4).unwrap();
        let b = l_moment_cov_bootstrap(&xs, 500, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_and_bootstrap_agree_roughly() {
        let g = GevParams::new(100.0, 30.0, -0.1).unwrap();
        let xs = gev::sample(&g, 200, 21).unwrap();
        let e = l_moment_cov_exact(&xs).unwrap();
        let b = l_moment_cov_bootstrap(&xs, 2000, 5).unwrap();
        for i in 0..3 {
            assert!((e[i][i] - b[i][i]).abs() < 0.3 * e[i][i], "{i}: {} {}", e[i][i], b[i][i]);
        }
        for i in 0..3 {
            for j in 0..3 {
                let scale = (e[i][i] * e[j][j]).sqrt();
                assert!((e[i][j] - b[i][j]).abs() < 0.3 * scale);
            }
        }
    }

    #[test]
    fn variance_shrinks_with_n() {
        let g = GevParams::new(100.0, 30.0, -0.1).unwrap();
        let mut small_sum = [0.0; 3];
        let mut big_sum = [0.0; 3];
        for s in 0..200 {
            let small = gev::sample(&g, 100, 500 + s).unwrap();
            let big = gev::sample(&g, 200, 900 + s).unwrap();
            let a = l_moment_cov_exact(&small).unwrap();
            let b = l_moment_cov_exact(&big).unwrap();
            for k in 0..3 {
                small_sum[k] += a[k][k];
                big_sum[k] += b[k][k];
            }
        }
        for k in 0..3 {
            let r = big_sum[k] / small_sum[k];
            assert!((r - 0.5).abs() < 0.125, "{k}: {r}");
        }
    }

    #[test]
    fn degenerate_and_short_inputs() {
        assert_eq!(l_moment_cov(&[1.0; 12], 100, 0), Err(GevError::DegenerateSample));
        assert!(matches!(
            l_moment_cov(&[1.0, 2.0, 3.0], 100, 0),
            Err(GevError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn distances() {
        let s = SampleLMoments { l1: 1.0, l2: 2.0, l3: 3.0, n: 10, robust_center: 0.0 };
        assert_eq!(l_distance(&s, [1.0, 2.0, 3.0]), 0.0);
        assert!((l_distance(&s, [2.0, 1.0, 4.0]) - 3.0).abs() < 1e-15);
        let id = LMomentCov::identity();
        assert_eq!(generalized_l_distance([0.0; 3], &id).unwrap(), 0.0);
        assert!((generalized_l_distance([1.0, 2.0, 2.0], &id).unwrap() - 9.0).abs() < 1e-12);
        let v = LMomentCov {
            v: [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]],
            source: CovSource::Exact,
        };
        let d = [0.3, -1.2, 0.7];
        let g1 = generalized_l_distance(d, &v).unwrap();
        let c = 2.5;
        let v2 = LMomentCov {
            v: v.v.map(|r| r.map(|x| x * c * c)),
            source: CovSource::Exact,
        };
        let g2 = generalized_l_distance(d.map(|x| x * c), &v2).unwrap();
        assert!((g1 - g2).abs() < 1e-12);
        // direct inverse as a cross-check
        let inv = v.matrix().try_inverse().unwrap();
        let dv = Vector3::from(d);
        assert!((g1 - (dv.transpose() * inv * dv)[(0, 0)]).abs() < 1e-12);
        let bad = LMomentCov {
            v: [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            source: CovSource::Exact,
        };
        assert_eq!(generalized_l_distance(d, &bad), Err(GevError::NotPositiveDefinite));
    }

    #[test]
    fn median_distance() {
        let xs = [1.0, 3.0, 2.0, 5.0, 4.0];
        let med = 3.0;
        let g = GevParams::new(0.0, 1.0, -0.1).unwrap();
        let shift = med - g.quantile(0.5);
        let cand = GevParams::new(shift, 1.0, -0.1).unwrap();
        let d = med_distance_vector(&xs, &cand).unwrap();
        assert!(d[0].abs() < 1e-12);
        let delta = 0.7;
        let moved = GevParams::new(shift + delta, 1.0, -0.1).unwrap();
        let d2 = med_distance_vector(&xs, &moved).unwrap();
        assert!((d2[0] - d[0] + delta).abs() < 1e-12);
        assert!((d2[1] - d[1]).abs() < 1e-12);
    }
}
