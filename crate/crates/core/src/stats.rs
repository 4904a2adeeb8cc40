//! Paired-sample statistics backing the benchmark tables.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Result of a two-sided paired t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided p-value for a t statistic at `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    assert!(df > 0.0);
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Two-sided paired t-test on the differences a[i] - b[i].
///
/// Degenerate inputs follow the reporting conventions: fewer than two
/// pairs or identically zero differences give p = 1 (nothing to detect);
/// zero variance with a nonzero mean gives p = 0 (perfect separation).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> TTest {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return TTest {
            t: 0.0,
            df: 0.0,
            p: 1.0,
        };
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    let df = n as f64 - 1.0;
    if var == 0.0 {
        return if mean == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: f64::INFINITY * mean.signum(),
                df,
                p: 0.0,
            }
        };
    }
    let t = mean / (var / n as f64).sqrt();
    TTest {
        t,
        df,
        p: two_sided_p(t, df),
    }
}

/// Sample standard error of the mean, n - 1 normalization.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}
