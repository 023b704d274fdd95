//! Monte-Carlo checks of the traffic generators against closed-form laws
//! written out independently here.

use pdpopa::rng::stream;
use pdpopa::stats::{chi_square_gof, ks_p_value, ks_statistic};
use pdpopa::traffic::{sample_session_duration, spawn_arrivals, spawn_user, MobilityConfig, ServiceClass};
use statrs::distribution::{Discrete, Poisson};

const N: usize = 100_000;

fn class(td: f64, omega: f64, mu: f64) -> ServiceClass {
    ServiceClass {
        name: "c".into(),
        min_rate: 1e6,
        mean_session: td,
        omega,
        arrival_rate: mu,
        power_min: 0.0,
        power_max: 1.0,
    }
}

fn hyperexp_cdf(t: f64, td: f64, w: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    1.0 - w / (w + 1.0) * (-w * t / td).exp() - 1.0 / (w + 1.0) * (-t / (w * td)).exp()
}

#[test]
fn session_durations_follow_the_mixture() {
    let c = class(120.0, 4.0, 0.0);
    let mut rng = stream(11, "test.session", 0, 0);
    let x: Vec<f64> = (0..N).map(|_| sample_session_duration(&c, &mut rng)).collect();
    let mean = x.iter().sum::<f64>() / N as f64;
    // Mixture mean: w/(w+1) * Td/w + 1/(w+1) * w Td.
    let expected = 0.8 * 30.0 + 0.2 * 480.0;
    let var_bound = 2.0 * 480.0 * 480.0;
    assert!((mean - expected).abs() < 5.0 * (var_bound / N as f64).sqrt(), "{mean} vs {expected}");
    let d = ks_statistic(&x, |t| hyperexp_cdf(t, 120.0, 4.0));
    assert!(ks_p_value(d, N) > 0.01, "D = {d}");
}

#[test]
fn unit_shape_collapses_to_exponentials() {
    let td = 90.0;
    let m = MobilityConfig {
        mean_residence: 150.0,
        ..MobilityConfig::default()
    };
    let c = class(td, 1.0, 0.0);
    let mut rng = stream(12, "test.omega1", 0, 0);
    let mut next = 0;
    let mut sessions = Vec::with_capacity(N);
    let mut holding = Vec::with_capacity(N);
    for _ in 0..N {
        let u = spawn_user(0, &c, &m, &mut next, &mut rng);
        sessions.push(u.session_remaining);
        holding.push(u.session_remaining.min(u.residence_remaining));
    }
    let d = ks_statistic(&sessions, |t| 1.0 - (-t / td).exp());
    assert!(ks_p_value(d, N) > 0.01, "session D = {d}");
    let rate = 1.0 / td + 1.0 / 150.0;
    let d = ks_statistic(&holding, |t| 1.0 - (-rate * t).exp());
    assert!(ks_p_value(d, N) > 0.01, "holding D = {d}");
}

#[test]
fn holding_time_is_the_minimum_of_session_and_residence() {
    let (td, tr, w) = (200.0, 80.0, 3.0);
    let m = MobilityConfig {
        mean_residence: tr,
        ..MobilityConfig::default()
    };
    let c = class(td, w, 0.0);
    let mut rng = stream(13, "test.holding", 0, 0);
    let mut next = 0;
    let holding: Vec<f64> = (0..N)
        .map(|_| {
            let u = spawn_user(0, &c, &m, &mut next, &mut rng);
            u.session_remaining.min(u.residence_remaining)
        })
        .collect();
    // P(min(D, R) > t) = P(D > t) P(R > t) for independent clocks.
    let cdf = |t: f64| 1.0 - (1.0 - hyperexp_cdf(t, td, w)) * (-t / tr).exp();
    let d = ks_statistic(&holding, cdf);
    assert!(ks_p_value(d, N) > 0.01, "D = {d}");
}

#[test]
fn arrival_counts_are_poisson() {
    let c = class(60.0, 2.0, 0.05);
    let m = MobilityConfig::default();
    let duration = 60.0;
    let slots = 20_000u64;
    let mut next = 0;
    let counts: Vec<usize> = (0..slots)
        .map(|s| {
            let mut rng = stream(14, "test.arrivals", s, 0);
            spawn_arrivals(0, &c, duration, &m, &mut next, &mut rng).len()
        })
        .collect();
    let lambda = c.arrival_rate * duration;
    let pois = Poisson::new(lambda).unwrap();
    let bins = 8;
    let mut observed = vec![0u64; bins];
    for &k in &counts {
        observed[k.min(bins - 1)] += 1;
    }
    let mut expected: Vec<f64> = (0..bins - 1).map(|k| pois.pmf(k as u64) * slots as f64).collect();
    expected.push(slots as f64 - expected.iter().sum::<f64>());
    let (_, p) = chi_square_gof(&observed, &expected, 0).unwrap();
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn streams_for_different_classes_are_uncorrelated() {
    let c = class(60.0, 2.0, 0.1);
    let m = MobilityConfig::default();
    let n = 20_000u64;
    let mut next = 0;
    let mut draw = |slot: u64, index: u64| {
        let mut rng = stream(15, "traffic.arrivals", slot, index);
        spawn_arrivals(0, &c, 30.0, &m, &mut next, &mut rng).len() as f64
    };
    let pairs: Vec<(f64, f64, f64)> = (0..n).map(|s| (draw(s, 0), draw(s, 1), draw(s + 1, 0))).collect();
    let corr = |f: &dyn Fn(&(f64, f64, f64)) -> (f64, f64)| {
        let xy: Vec<(f64, f64)> = pairs.iter().map(f).collect();
        let k = xy.len() as f64;
        let (mx, my) = (xy.iter().map(|p| p.0).sum::<f64>() / k, xy.iter().map(|p| p.1).sum::<f64>() / k);
        let cov: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
        let vx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let vy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
        cov / (vx * vy).sqrt()
    };
    let limit = 4.0 / (n as f64).sqrt();
    assert!(corr(&|p| (p.0, p.1)).abs() < limit);
    assert!(corr(&|p| (p.0, p.2)).abs() < limit);
}
