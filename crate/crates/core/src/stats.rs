//! Deterministic-threshold two-sample and goodness-of-fit statistics.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Confidence level used by every acceptance threshold.
pub const CONFIDENCE: f64 = 0.99;

/// `sup_t |F_a(t) - F_b(t)|` between two empirical CDFs. Infinite values
/// (censored or absorbed) are allowed and simply never fall below a finite `t`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// One-sample `sup |F_n - F|` against a continuous CDF.
pub fn ks_distance_to(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |d: f64, (k, &x)| {
        let f = cdf(x);
        d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs())
    })
}

/// DKW radius `sqrt(ln(2/alpha) / (2n))`.
pub fn dkw_threshold(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sample DKW radius `sqrt(ln(2/alpha) (n+m) / (2nm))`.
pub fn dkw_two_sample_threshold(n: usize, m: usize, alpha: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ((2.0 / alpha).ln() * (n + m) / (2.0 * n * m)).sqrt()
}

/// Upper `confidence`-quantile of chi-square with `df` degrees of freedom.
pub fn chi_square_quantile(df: usize, confidence: f64) -> f64 {
    ChiSquared::new(df as f64)
        .expect("df is positive")
        .inverse_cdf(confidence)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    /// Quantile at [`CONFIDENCE`]; 0 and trivially passing when `df == 0`.
    pub threshold: f64,
}

impl ChiSquare {
    pub fn passes(&self) -> bool {
        self.df == 0 || self.statistic < self.threshold
    }

    fn with_df(statistic: f64, df: usize) -> Self {
        let threshold = if df == 0 { 0.0 } else { chi_square_quantile(df, CONFIDENCE) };
        Self { statistic, df, threshold }
    }
}

/// Homogeneity test of two count vectors over the same bins.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len(), "bin counts must align");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    if na == 0 || nb == 0 {
        return ChiSquare::with_df(0.0, 0);
    }
    let mut stat = 0.0;
    let mut bins = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        let ea = col * na as f64 / total;
        let eb = col * nb as f64 / total;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    ChiSquare::with_df(stat, bins.max(1) - 1)
}

/// Goodness of fit of `observed` counts to cell probabilities `probs`.
/// Adjacent bins with expected count below 5 are pooled left to right.
pub fn chi_square_goodness_of_fit(observed: &[u64], probs: &[f64]) -> ChiSquare {
    assert_eq!(observed.len(), probs.len(), "bin counts must align");
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        acc.0 += o as f64;
        acc.1 += p * n;
        if acc.1 >= 5.0 {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    let stat = pooled
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    ChiSquare::with_df(stat, pooled.len().max(1) - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = [0.1, 0.5, 0.9, f64::INFINITY];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
        assert!((ks_distance(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_quantile_matches_table() {
        // Standard tables: 6.635 (df 1), 9.210 (df 2) at 0.99.
        assert!((chi_square_quantile(1, 0.99) - 6.634_896_6).abs() < 1e-6);
        assert!((chi_square_quantile(2, 0.99) - 9.210_340_4).abs() < 1e-6);
    }

    #[test]
    fn homogeneity_of_equal_counts() {
        let c = chi_square_homogeneity(&[10, 20, 0], &[10, 20, 0]);
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.df, 1);
        assert!(c.passes());
    }

    #[test]
    fn goodness_of_fit_pools_small_bins() {
        let c = chi_square_goodness_of_fit(&[50, 50, 0, 0], &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(c.df, 1);
        assert_eq!(c.statistic, 0.0);
    }

    #[test]
    fn dkw_values() {
        assert!((dkw_threshold(2, 0.01) - ((200.0f64).ln() / 4.0).sqrt()).abs() < 1e-15);
        assert!((dkw_two_sample_threshold(4, 4, 0.01) - dkw_threshold(2, 0.01)).abs() < 1e-15);
    }
}
