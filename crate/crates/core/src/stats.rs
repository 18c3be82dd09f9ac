//! Sample statistics and the two-sample Kolmogorov–Smirnov distance.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub variance_stderr: f64,
    pub skewness: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    let nf = n as f64;
    if n == 0 {
        return Summary { n, mean: f64::NAN, variance: f64::NAN, stderr: f64::NAN, variance_stderr: f64::NAN, skewness: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let variance = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    Summary {
        n,
        mean,
        variance,
        stderr: (variance / nf).sqrt(),
        variance_stderr: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
        skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
    }
}

/// `sup_x |F̂_1(x) − F̂_2(x)|` over the two empirical distribution functions.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsOutcome {
    pub ks_stat: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const KS_MIN_SAMPLES: usize = 200;

/// Two-sample KS comparison against a fixed threshold.
pub fn compare_distributions(empirical: &[f64], reference: &[f64], threshold: f64) -> Result<KsOutcome> {
    for len in [empirical.len(), reference.len()] {
        if len < KS_MIN_SAMPLES {
            return Err(Error::TooFewSamples { got: len, need: KS_MIN_SAMPLES });
        }
    }
    let ks_stat = ks_statistic(empirical, reference);
    Ok(KsOutcome { ks_stat, threshold, pass: ks_stat < threshold })
}

/// Asymptotic two-sample KS critical value `c(α)·√((n+m)/(nm))`.
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
