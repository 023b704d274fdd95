//! Proactive demand prediction: transient M/G/inf forecast of the number of
//! active users per (AP, class) one slot ahead.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete, Poisson};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::traffic::{holding_time_survival, mean_holding_time};

/// Counts observed at one AP for one class.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ObservationWindow {
    pub ap: usize,
    pub class: usize,
    pub timestamps: Vec<f64>,
    pub counts: Vec<u32>,
    /// New arrivals (fresh and handoff) seen over `window_span`.
    pub arrivals_seen: u64,
    pub window_span: f64,
}

impl ObservationWindow {
    pub fn new(ap: usize, class: usize) -> Self {
        Self {
            ap,
            class,
            ..Self::default()
        }
    }

    pub fn record(&mut self, t: f64, count: u32) -> Result<()> {
        if self.timestamps.last().is_some_and(|&last| t <= last) {
            return Err(Error::InvalidParameter {
                name: "timestamp",
                reason: format!("observation at {t} s is not after the previous one"),
            });
        }
        self.timestamps.push(t);
        self.counts.push(count);
        Ok(())
    }

    pub fn latest(&self) -> Option<u32> {
        self.counts.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorParams {
    pub epsilon: f64,
    /// Prediction horizon `tau` (s).
    pub horizon: f64,
    #[serde(default = "default_tail_cutoff")]
    pub pmf_tail_cutoff: f64,
}

fn default_tail_cutoff() -> f64 {
    1e-12
}

impl PredictorParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must lie in [0, 1], got {}", self.epsilon),
            });
        }
        ensure_positive("horizon", self.horizon)?;
        if !(self.pmf_tail_cutoff > 0.0 && self.pmf_tail_cutoff < 1e-3) {
            return Err(Error::InvalidParameter {
                name: "pmf_tail_cutoff",
                reason: format!("must lie in (0, 1e-3), got {}", self.pmf_tail_cutoff),
            });
        }
        Ok(())
    }
}

/// A truncated, renormalised probability mass function on `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pmf {
    pub probs: Vec<f64>,
    /// Mass kept before renormalisation.
    pub retained: f64,
}

impl Pmf {
    pub fn point(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self { probs, retained: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandForecast {
    pub ap: usize,
    pub class: usize,
    pub n_tilde: u32,
    pub pmf: Pmf,
    pub p_tau: f64,
    pub q_tau: f64,
    pub mu_hat: f64,
    pub basis_count: u32,
}

/// Probability that a user active now is still active `tau` seconds later,
/// `(1/E[T_h]) * int_tau^inf (1 - F(s)) ds`, integrated term by term.
pub fn persistence_prob(tau: f64, tr: f64, td: f64, omega: f64) -> f64 {
    if tau <= 0.0 {
        return 1.0;
    }
    let w = omega;
    let terms = [
        (w / (w + 1.0), 1.0 / tr + w / td),
        (1.0 / (w + 1.0), 1.0 / tr + 1.0 / (w * td)),
    ];
    let tail: f64 = terms.iter().map(|(weight, rate)| weight * (-rate * tau).exp() / rate).sum();
    (tail / mean_holding_time(tr, td, omega)).clamp(0.0, 1.0)
}

/// Probability that a user arriving uniformly in `(t, t + tau]` is still
/// active at `t + tau`: `(E[T_h] / tau) (1 - p_tau)`.
pub fn arrival_persistence_prob(tau: f64, mean_holding: f64, p_tau: f64) -> f64 {
    mean_holding / tau * (1.0 - p_tau)
}

/// Distribution of `Binomial(n_now, p_tau) + Poisson(poisson_mean)` by exact
/// convolution. The Poisson support stops once its tail mass drops below
/// `tail_cutoff`; the result is renormalised.
pub fn transient_pmf(n_now: u32, p_tau: f64, poisson_mean: f64, tail_cutoff: f64) -> Result<Pmf> {
    if !(0.0..=1.0).contains(&p_tau) {
        return Err(Error::InvalidParameter {
            name: "p_tau",
            reason: format!("must lie in [0, 1], got {p_tau}"),
        });
    }
    ensure_non_negative("poisson_mean", poisson_mean)?;
    let binom: Vec<f64> = match Binomial::new(p_tau, n_now as u64) {
        Ok(b) => (0..=n_now as u64).map(|k| b.pmf(k)).collect(),
        Err(e) => {
            return Err(Error::InvalidParameter {
                name: "binomial",
                reason: e.to_string(),
            })
        }
    };
    let poisson: Vec<f64> = if poisson_mean == 0.0 {
        vec![1.0]
    } else {
        let dist = Poisson::new(poisson_mean).map_err(|e| Error::InvalidParameter {
            name: "poisson_mean",
            reason: e.to_string(),
        })?;
        let mut out = Vec::new();
        let mut acc = 0.0;
        let mut k = 0u64;
        loop {
            let p = dist.pmf(k);
            out.push(p);
            acc += p;
            k += 1;
            if (1.0 - acc < tail_cutoff && k as f64 > poisson_mean) || k > 100_000 {
                break;
            }
        }
        out
    };
    let mut probs = vec![0.0; binom.len() + poisson.len() - 1];
    for (i, b) in binom.iter().enumerate() {
        for (j, q) in poisson.iter().enumerate() {
            probs[i + j] += b * q;
        }
    }
    let retained: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= retained;
    }
    Ok(Pmf { probs, retained })
}

/// Smallest `N` with `P(X <= N) >= 1 - epsilon`, measured against the mass
/// actually retained by the truncated PMF.
pub fn forecast_quantile(pmf: &Pmf, epsilon: f64) -> Result<u32> {
    let required = 1.0 - epsilon;
    if required > pmf.retained + 1e-15 {
        return Err(Error::EpsilonUnreachable {
            required,
            retained: pmf.retained,
        });
    }
    let mut cdf = 0.0;
    for (i, p) in pmf.probs.iter().enumerate() {
        cdf += p * pmf.retained;
        if cdf >= required - 1e-15 {
            return Ok(i as u32);
        }
    }
    Ok((pmf.probs.len() - 1) as u32)
}

pub fn estimate_arrival_rate(w: &ObservationWindow) -> Result<f64> {
    ensure_positive("window_span", w.window_span)?;
    Ok(w.arrivals_seen as f64 / w.window_span)
}

/// Builds the forecast for the next slot from the most recent count.
pub fn predict_slot(
    w: &ObservationWindow,
    params: &PredictorParams,
    mean_session: f64,
    omega: f64,
    mean_residence: f64,
) -> Result<DemandForecast> {
    let basis = w.latest().ok_or_else(|| Error::InvalidParameter {
        name: "window",
        reason: "no observation recorded".into(),
    })?;
    let tau = params.horizon;
    let mean_h = mean_holding_time(mean_residence, mean_session, omega);
    let p_tau = persistence_prob(tau, mean_residence, mean_session, omega);
    let q_tau = arrival_persistence_prob(tau, mean_h, p_tau).clamp(0.0, 1.0);
    let mu_hat = estimate_arrival_rate(w)?;
    let pmf = transient_pmf(basis, p_tau, mu_hat * tau * q_tau, params.pmf_tail_cutoff)?;
    let n_tilde = forecast_quantile(&pmf, params.epsilon)?;
    Ok(DemandForecast {
        ap: w.ap,
        class: w.class,
        n_tilde,
        pmf,
        p_tau,
        q_tau,
        mu_hat,
        basis_count: basis,
    })
}

/// Forecast quality over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionLoss {
    /// Mean absolute error `|N_tilde - N_actual|`.
    pub mae: f64,
    /// Fraction of forecasts with `N_actual > N_tilde`.
    pub violation_rate: f64,
}

pub fn prediction_loss(forecasts: &[u32], actuals: &[u32]) -> Result<PredictionLoss> {
    if forecasts.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            left: forecasts.len(),
            right: actuals.len(),
        });
    }
    if forecasts.is_empty() {
        return Ok(PredictionLoss {
            mae: 0.0,
            violation_rate: 0.0,
        });
    }
    let n = forecasts.len() as f64;
    let mae = forecasts
        .iter()
        .zip(actuals)
        .map(|(&f, &a)| (f as f64 - a as f64).abs())
        .sum::<f64>()
        / n;
    let violations = forecasts.iter().zip(actuals).filter(|(f, a)| a > f).count();
    Ok(PredictionLoss {
        mae,
        violation_rate: violations as f64 / n,
    })
}

/// Integral of the holding-time survival function over `[tau, inf)` by
/// adaptive Simpson quadrature; used to audit the closed form.
pub fn survival_tail_numeric(tau: f64, tr: f64, td: f64, omega: f64) -> f64 {
    let f = |s: f64| holding_time_survival(s, tr, td, omega);
    // Substitute s = tau + u / (1 - u) to map [tau, inf) onto [0, 1).
    let g = |u: f64| {
        if u >= 1.0 {
            0.0
        } else {
            let d = 1.0 - u;
            f(tau + u / d) / (d * d)
        }
    };
    adaptive_simpson(&g, 0.0, 1.0, 1e-13, 50)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn persistence_limits() {
        assert_eq!(persistence_prob(0.0, 120.0, 60.0, 3.0), 1.0);
        let e = mean_holding_time(90.0, 60.0, 1.0);
        assert_relative_eq!(persistence_prob(e, 90.0, 60.0, 1.0), (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn persistence_matches_quadrature() {
        for (tau, tr, td, w) in [(30.0, 120.0, 600.0, 4.0), (60.0, 50.0, 80.0, 2.0), (5.0, 300.0, 10.0, 7.5)] {
            let numeric = survival_tail_numeric(tau, tr, td, w) / mean_holding_time(tr, td, w);
            assert_relative_eq!(persistence_prob(tau, tr, td, w), numeric, max_relative = 1e-8);
        }
    }

    #[test]
    fn arrival_persistence_limits() {
        let e = 50.0;
        let tau = 1e-6 * e;
        let p = persistence_prob(tau, 100.0, 100.0, 1.0);
        assert!((arrival_persistence_prob(tau, e, p) - 1.0).abs() < 1e-5);
        let far = 1e6;
        let p = persistence_prob(far, 100.0, 100.0, 1.0);
        assert!(arrival_persistence_prob(far, e, p) < 1e-4);
    }

    #[test]
    fn transient_pmf_examples() {
        let pmf = transient_pmf(0, 0.3, 0.0, 1e-12).unwrap();
        assert_eq!(pmf.probs, vec![1.0]);
        let pmf = transient_pmf(2, 0.5, 1.0, 1e-12).unwrap();
        assert!((pmf.probs[0] - 0.0920).abs() < 1e-4);
        assert!((pmf.probs[1] - 0.2759).abs() < 1e-4);
        assert!((pmf.probs[2] - 0.3219).abs() < 1e-4);
        assert_relative_eq!(pmf.mean(), 2.0, max_relative = 1e-9);
        assert_eq!(forecast_quantile(&pmf, 0.05).unwrap(), 4);
    }

    #[test]
    fn quantile_edges() {
        let pmf = transient_pmf(5, 0.4, 2.0, 1e-12).unwrap();
        assert_eq!(forecast_quantile(&pmf, 1.0).unwrap(), 0);
        assert_eq!(forecast_quantile(&Pmf::point(3), 0.05).unwrap(), 3);
        assert!(matches!(forecast_quantile(&pmf, 0.0), Err(Error::EpsilonUnreachable { .. })));
    }

    #[test]
    fn arrival_rate_estimate() {
        let mut w = ObservationWindow::new(0, 0);
        w.window_span = 300.0;
        assert_eq!(estimate_arrival_rate(&w).unwrap(), 0.0);
        w.arrivals_seen = 6;
        assert_relative_eq!(estimate_arrival_rate(&w).unwrap(), 0.02);
        w.window_span = 0.0;
        assert!(estimate_arrival_rate(&w).is_err());
    }

    #[test]
    fn observations_must_advance() {
        let mut w = ObservationWindow::new(1, 2);
        w.record(1.0, 3).unwrap();
        assert!(w.record(1.0, 2).is_err());
        assert_eq!(w.latest(), Some(3));
    }

    #[test]
    fn empty_room_forecasts_zero() {
        let mut w = ObservationWindow::new(0, 0);
        w.record(0.0, 0).unwrap();
        w.window_span = 300.0;
        let params = PredictorParams {
            epsilon: 0.05,
            horizon: 30.0,
            pmf_tail_cutoff: 1e-12,
        };
        let f = predict_slot(&w, &params, 600.0, 4.0, 120.0).unwrap();
        assert_eq!(f.n_tilde, 0);
        assert!(predict_slot(&ObservationWindow::new(0, 0), &params, 600.0, 4.0, 120.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let a = [1, 2, 3, 0];
        assert_eq!(prediction_loss(&a, &a).unwrap().mae, 0.0);
        let f = [2, 3, 4, 1];
        let l = prediction_loss(&f, &a).unwrap();
        assert_eq!(l.mae, 1.0);
        assert_eq!(l.violation_rate, 0.0);
        assert_eq!(prediction_loss(&a, &f).unwrap().violation_rate, 1.0);
        assert!(matches!(prediction_loss(&a, &f[..2]), Err(Error::LengthMismatch { .. })));
    }
}
