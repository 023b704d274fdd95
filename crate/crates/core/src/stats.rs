//! Small hypothesis tests used by the trend and distribution checks.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::error::{Error, Result};

/// One-sided paired sign test for `H1: a > b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    /// `P(W >= wins)` under `W ~ Binomial(wins + losses, 1/2)`; ties dropped.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut wins, mut losses, mut ties) = (0u64, 0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p_value = if wins == 0 {
        1.0
    } else {
        let d = Binomial::new(0.5, n).expect("valid binomial");
        d.sf(wins - 1)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value of statistic `d` for `n` samples.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson goodness of fit. Returns `(statistic, p_value)` with
/// `bins - 1 - fitted` degrees of freedom.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], fitted: usize) -> Result<(f64, f64)> {
    if observed.len() != expected.len() {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: expected.len(),
        });
    }
    if observed.len() < fitted + 2 || expected.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "expected",
            reason: "need positive expectations and at least one degree of freedom".into(),
        });
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let df = (observed.len() - 1 - fitted) as f64;
    let p = ChiSquared::new(df).expect("valid dof").sf(stat);
    Ok((stat, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_all_wins() {
        let a = vec![1.0; 10];
        let b = vec![0.0; 10];
        let t = sign_test(&a, &b).unwrap();
        assert_eq!(t.wins, 10);
        assert!((t.p_value - 0.5f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn sign_test_balanced_is_not_significant() {
        let a = [1.0, 0.0, 1.0, 0.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        assert!(sign_test(&a, &b).unwrap().p_value > 0.5);
    }

    #[test]
    fn sign_test_drops_ties() {
        let t = sign_test(&[1.0, 2.0, 3.0], &[1.0, 1.0, 3.0]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (1, 0, 2));
        assert!((t.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_uniform_grid() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_statistic(&x, |v| v.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12);
        assert!(ks_p_value(d, 100) > 0.99);
        assert!(ks_p_value(0.3, 100) < 1e-6);
    }

    #[test]
    fn chi_square_exact_fit() {
        let (s, p) = chi_square_gof(&[10, 20, 30], &[10.0, 20.0, 30.0], 0).unwrap();
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
