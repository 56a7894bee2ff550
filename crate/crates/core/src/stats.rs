//! Replica aggregation and the statistical decisions built on it.
//!
//! Every reduction sorts its inputs first and sums with Neumaier compensation,
//! so reported numbers do not depend on replica order or thread count.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ensemble::derive_seed;
use crate::error::{Error, Result};

/// Acceptance threshold in standard deviations.
pub const SIGMAS: f64 = 4.0;
/// Two-sided tail mass outside ±4 standard normal deviations.
pub const FOUR_SIGMA_TAIL: f64 = 6.334_248_366_623_996e-5;
/// Smallest sample accepted by [`test_against`].
pub const MIN_TEST_SAMPLES: usize = 30;

/// Neumaier-compensated sum of values taken in sorted order.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in sorted {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean_of(values: &[f64]) -> f64 {
    stable_sum(values) / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `sqrt(variance / n)`.
    pub stderr: f64,
    pub ci95: (f64, f64),
}

impl ReplicaStats {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("replica statistic"));
        }
        let mean = mean_of(values);
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let variance = stable_sum(&sq) / (n as f64 - 1.0);
        let stderr = (variance / n as f64).sqrt();
        let half = 1.959_963_984_540_054 * stderr;
        Ok(ReplicaStats { n, mean, variance, stderr, ci95: (mean - half, mean + half) })
    }
}

/// Sample covariance matrix of multi-statistic replicas with an estimated
/// standard error for each entry, `sd((x − x̄)(y − ȳ)) / √n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceStats {
    pub n: usize,
    pub means: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
}

impl CovarianceStats {
    /// `rows[k]` is replica `k`'s vector of statistics.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidParameter("ragged replica rows".into()));
        }
        let column = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
        let means: Vec<f64> = (0..k).map(|j| mean_of(&column(j))).collect();
        let mut covariance = vec![vec![0.0; k]; k];
        let mut stderr = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i..k {
                let prods: Vec<f64> = rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).collect();
                let cov = stable_sum(&prods) / (n as f64 - 1.0);
                let pm = mean_of(&prods);
                let dev: Vec<f64> = prods.iter().map(|p| (p - pm) * (p - pm)).collect();
                let se = (stable_sum(&dev) / (n as f64 - 1.0) / n as f64).sqrt();
                covariance[i][j] = cov;
                covariance[j][i] = cov;
                stderr[i][j] = se;
                stderr[j][i] = se;
            }
        }
        Ok(CovarianceStats { n, means, covariance, stderr })
    }
}

/// Pearson correlation; `None` when either sample has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter("correlation of unequal-length samples".into()));
    }
    let cov = CovarianceStats::from_rows(&a.iter().zip(b).map(|(&x, &y)| vec![x, y]).collect::<Vec<_>>())?;
    let (va, vb) = (cov.covariance[0][0], cov.covariance[1][1]);
    if va <= 0.0 || vb <= 0.0 {
        return Ok(None);
    }
    Ok(Some(cov.covariance[0][1] / (va * vb).sqrt()))
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn skew_kurtosis(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    let mean = mean_of(values);
    let m = |p: i32| mean_of(&values.iter().map(|v| (v - mean).powi(p)).collect::<Vec<_>>());
    let m2 = m(2);
    if m2 <= 0.0 {
        return Err(Error::InvalidParameter("zero-variance sample has no shape".into()));
    }
    Ok((m(3) / m2.powf(1.5), m(4) / (m2 * m2) - 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Mean,
    Variance,
}

/// One pass/fail record; serialized as a JSON line by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub test_id: String,
    pub statistic: f64,
    pub target: f64,
    /// Standard error for mean tests, `[lo, hi]` interval for variance tests.
    pub stderr_or_ci: StderrOrCi,
    /// z-score for mean tests, the chi-square statistic `(n−1)s²/target` for variance tests.
    pub z_or_chi2: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum StderrOrCi {
    Stderr(f64),
    Ci([f64; 2]),
}

impl Verdict {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.test_id = id.into();
        self
    }

    /// A check with a custom pass rule, such as a threshold on a correlation.
    pub fn threshold(id: impl Into<String>, statistic: f64, target: f64, stderr: f64, pass: bool) -> Self {
        let z = if stderr > 0.0 { (statistic - target) / stderr } else { 0.0 };
        Verdict { test_id: id.into(), statistic, target, stderr_or_ci: StderrOrCi::Stderr(stderr), z_or_chi2: z, pass }
    }
}

/// Chi-square interval for the variance at four-sigma coverage.
pub fn variance_interval(variance: f64, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let dof = n as f64 - 1.0;
    let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let upper_q = chi.inverse_cdf(1.0 - FOUR_SIGMA_TAIL / 2.0);
    let lower_q = chi.inverse_cdf(FOUR_SIGMA_TAIL / 2.0);
    Ok((dof * variance / upper_q, dof * variance / lower_q))
}

/// Mean: `z = (mean − target)/stderr`, pass iff `|z| ≤ 4`.
/// Variance: pass iff the four-sigma chi-square interval contains `target`.
pub fn test_against(stats: &ReplicaStats, target: f64, kind: TestKind) -> Result<Verdict> {
    if stats.n < MIN_TEST_SAMPLES {
        return Err(Error::TooFewSamples { need: MIN_TEST_SAMPLES, got: stats.n });
    }
    Ok(match kind {
        TestKind::Mean => {
            let diff = stats.mean - target;
            let z = if diff == 0.0 { 0.0 } else { diff / stats.stderr };
            Verdict {
                test_id: String::new(),
                statistic: stats.mean,
                target,
                stderr_or_ci: StderrOrCi::Stderr(stats.stderr),
                z_or_chi2: z,
                pass: z.abs() <= SIGMAS,
            }
        }
        TestKind::Variance => {
            let (lo, hi) = variance_interval(stats.variance, stats.n)?;
            let chi2 = if target > 0.0 { (stats.n as f64 - 1.0) * stats.variance / target } else { f64::INFINITY };
            Verdict {
                test_id: String::new(),
                statistic: stats.variance,
                target,
                stderr_or_ci: StderrOrCi::Ci([lo, hi]),
                z_or_chi2: chi2,
                pass: lo <= target && target <= hi,
            }
        }
    })
}

/// Mean test against a known standard error instead of the sample one.
/// A zero standard error passes only on exact agreement.
pub fn test_mean_with_stderr(mean: f64, target: f64, stderr: f64) -> Verdict {
    let diff = mean - target;
    let z = if diff == 0.0 { 0.0 } else { diff / stderr };
    Verdict {
        test_id: String::new(),
        statistic: mean,
        target,
        stderr_or_ci: StderrOrCi::Stderr(stderr),
        z_or_chi2: z,
        pass: z.abs() <= SIGMAS,
    }
}

/// Normality check on a sample: `|skew| ≤ 4√(6/n)` and `|excess kurtosis| ≤ 4√(24/n)`.
pub fn normality(id: &str, values: &[f64]) -> Result<[Verdict; 2]> {
    let (skew, kurt) = skew_kurtosis(values)?;
    let n = values.len() as f64;
    let (se_s, se_k) = ((6.0 / n).sqrt(), (24.0 / n).sqrt());
    Ok([
        Verdict::threshold(format!("{id}/skewness"), skew, 0.0, se_s, skew.abs() <= SIGMAS * se_s),
        Verdict::threshold(format!("{id}/excess_kurtosis"), kurt, 0.0, se_k, kurt.abs() <= SIGMAS * se_k),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    pub target: f64,
    /// Slope of `log|value − target|` against `log ε`.
    pub fitted_rate: f64,
    pub r_squared: f64,
    /// Epsilons dropped because their residual was exactly zero.
    pub excluded: Vec<f64>,
}

/// Least-squares rate of `|value − target| ~ ε^rate`.
pub fn fit_rate(points: &[(f64, f64)], target: f64) -> Result<ConvergenceFit> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: points.len() });
    }
    if points.windows(2).any(|w| !(w[1].0 < w[0].0)) || points.iter().any(|p| !(p.0 > 0.0)) {
        return Err(Error::InvalidParameter("epsilons must be positive and strictly decreasing".into()));
    }
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(eps, value) in points {
        let resid = (value - target).abs();
        if resid == 0.0 {
            excluded.push(eps);
        } else {
            xs.push(eps.ln());
            ys.push(resid.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(ConvergenceFit {
        epsilons: points.iter().map(|p| p.0).collect(),
        values: points.iter().map(|p| p.1).collect(),
        target,
        fitted_rate: slope,
        r_squared,
        excluded,
    })
}

/// Run `job(index, seed)` for `n` replicas on `threads` workers (0 = all cores)
/// and return results in replica order. Seeds are `derive_seed(master, index)`.
pub fn map_replicas<T, F>(n: usize, master_seed: u64, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|index| {
                let seed = derive_seed(master_seed, index);
                job(index, seed).map_err(|e| Error::ReplicaFailed { index: index as usize, seed, source: Box::new(e) })
            })
            .collect::<Result<Vec<T>>>()
    })
}

/// [`map_replicas`] for a scalar statistic, aggregated into [`ReplicaStats`].
pub fn run_replicas<F>(n: usize, master_seed: u64, threads: usize, job: F) -> Result<ReplicaStats>
where
    F: Fn(u64, u64) -> Result<f64> + Sync + Send,
{
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    ReplicaStats::from_samples(&map_replicas(n, master_seed, threads, job)?)
}
