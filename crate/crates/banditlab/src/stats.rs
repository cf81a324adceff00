//! Small shared statistics helpers (means, Student-t CIs and tails).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean with a 95% Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width of the 95% CI: `t_{0.975, n-1} * sd / sqrt(n)`.
    pub ci_half: f64,
    pub sem: f64,
    pub sd: f64,
    pub n: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided 97.5% quantile of Student-t with `df` degrees of freedom.
pub fn t_quantile_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(0.975)
}

/// Two-sided tail probability of `t` under Student-t with `df` degrees of
/// freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

pub fn mean_ci_95(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return MeanCi {
            mean: m,
            ci_half: f64::NAN,
            sem: f64::NAN,
            sd: f64::NAN,
            n,
        };
    }
    let sd = sample_sd(xs);
    let sem = sd / (n as f64).sqrt();
    MeanCi {
        mean: m,
        ci_half: t_quantile_975((n - 1) as f64) * sem,
        sem,
        sd,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn known_quantiles() {
        // Classic table values.
        assert_relative_eq!(t_quantile_975(1.0), 12.706, max_relative = 1e-3);
        assert_relative_eq!(t_quantile_975(10.0), 2.228, max_relative = 1e-3);
        assert_relative_eq!(t_quantile_975(1e6), 1.960, max_relative = 1e-3);
    }

    #[test]
    fn ci_of_identical_samples_is_zero() {
        let s = mean_ci_95(&[0.3; 8]);
        assert_eq!(s.mean, 0.3);
        assert_eq!(s.ci_half, 0.0);
        assert_eq!(s.n, 8);
    }
}
