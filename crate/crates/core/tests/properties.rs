use nalgebra::{DMatrix, Vector3};
use pdpopa::config::ScenarioConfig;
use pdpopa::optics::{
    aggregate_gain, beam_radius, enclosed_power, lens_transform, ApGeometry, LensParams, ReceiverGeometry, VcselParams,
};
use pdpopa::optimizer::{optimize_ap, ApProblem, ApUser, OptimizerParams};
use pdpopa::phy::{demodulate_frame, frame_bits, modulate_frame, zf_precoder, ChannelMatrix, OfdmParams};
use pdpopa::predictor::{arrival_persistence_prob, forecast_quantile, persistence_prob, transient_pmf};
use pdpopa::traffic::{advance, mean_holding_time, spawn_user, MobilityConfig, ServiceClass};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn beam() -> pdpopa::optics::TransformedBeam {
    let v = VcselParams::new(5e-6, 1550e-9, 1.55, 0.05).unwrap();
    lens_transform(
        &v,
        &LensParams {
            focal_length: 12.5e-6,
            vcsel_to_lens: 12.5e-6,
        },
    )
    .unwrap()
}

fn receiver(x: f64, y: f64) -> ReceiverGeometry {
    ReceiverGeometry {
        position: Vector3::new(x, y, 1.0),
        pd_orientations: ReceiverGeometry::adr_orientations(4, 30f64.to_radians()),
        active_area: 0.1,
        concentrator_gain: 3.3,
        acceptance_angle: 30f64.to_radians(),
        responsivity: 0.7,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beam_never_narrower_than_waist(w0 in 1e-6f64..1e-3, z in 0.0f64..10.0, zr in 1e-6f64..10.0) {
        let w = beam_radius(w0, z, zr);
        prop_assert!(w >= w0);
        if z > 0.0 && z / zr > 1e-6 {
            prop_assert!(w > w0);
        }
    }

    #[test]
    fn enclosed_power_monotone_and_bounded(p in 1e-3f64..1.0, w in 1e-3f64..2.0, r1 in 0.0f64..3.0, r2 in 0.0f64..3.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = enclosed_power(p, lo, w);
        let b = enclosed_power(p, hi, w);
        prop_assert!(a <= b);
        prop_assert!(b <= p);
    }

    #[test]
    fn lens_scales_divergence_by_magnification(
        w0 in 2e-6f64..2e-5,
        f in 5e-6f64..1e-3,
        d1_ratio in 0.0f64..3.0,
    ) {
        let v = VcselParams::new(w0, 1550e-9, 1.55, 0.05).unwrap();
        if let Ok(b) = lens_transform(&v, &LensParams { focal_length: f, vcsel_to_lens: d1_ratio * f }) {
            let rel = (b.divergence * b.magnification - v.divergence()).abs() / v.divergence();
            prop_assert!(rel < 1e-12, "{rel}");
        }
    }

    #[test]
    fn gain_is_symmetric_about_the_beam_axis(dx in -2.0f64..2.0, dy in -2.0f64..2.0) {
        let ap = ApGeometry::uniform_grid(Vector3::new(2.5, 2.5, 3.0), 5, 250e-6, 0.05);
        let b = beam();
        let g = aggregate_gain(&ap, &receiver(2.5 + dx, 2.5 + dy), &b);
        let h = aggregate_gain(&ap, &receiver(2.5 - dx, 2.5 - dy), &b);
        prop_assert!((g - h).abs() <= 1e-9 * g.abs().max(1e-300));
    }

    #[test]
    fn rate_is_increasing_and_concave(gain in 1e-2f64..600.0, interference in 0.0f64..1e-9) {
        let phy = ScenarioConfig::default().phy_params().unwrap();
        let grid: Vec<f64> = (0..60).map(|i| 1e-4 * 1.2f64.powi(i)).collect();
        let r: Vec<f64> = grid.iter().map(|&p| phy.user_rate(p, gain, interference)).collect();
        for w in r.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        // Second divided differences on the (non-uniform) grid.
        for i in 1..grid.len() - 1 {
            let s1 = (r[i] - r[i - 1]) / (grid[i] - grid[i - 1]);
            let s2 = (r[i + 1] - r[i]) / (grid[i + 1] - grid[i]);
            prop_assert!(s2 <= s1 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn zero_forcing_reproduces_the_channel(n in 1usize..=16, extra in 0usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = n + extra;
        let h = DMatrix::from_fn(n, cols, |_, _| rand::Rng::random::<f64>(&mut rng) + 0.05);
        let p = zf_precoder(&ChannelMatrix::new(h.clone()).unwrap());
        prop_assume!(!p.rank_deficient);
        let back = &h * &p.weights * &h;
        let err = (&back - &h).amax();
        prop_assert!(err < 1e-9 * h.amax().max(1.0), "{err}");
    }

    #[test]
    fn noiseless_roundtrip(order_idx in 0usize..2, m_idx in 0usize..3, seed in any::<u64>()) {
        let order = [4, 16][order_idx];
        let m = [16, 64, 256][m_idx];
        let p = OfdmParams::new(m, 1.5e9, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..frame_bits(order, &p)).map(|_| rand::Rng::random::<bool>(&mut rng) as u8).collect();
        let f = modulate_frame(&bits, order, &p, 1.0).unwrap();
        prop_assert_eq!(demodulate_frame(&f.samples, &p, order).unwrap(), bits);
    }

    #[test]
    fn persistence_is_non_increasing(tr in 10.0f64..1000.0, td in 10.0f64..2000.0, omega in 1.0f64..8.0, t1 in 0.0f64..600.0, t2 in 0.0f64..600.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(persistence_prob(hi, tr, td, omega) <= persistence_prob(lo, tr, td, omega));
        if hi > 0.0 {
            let p = persistence_prob(hi, tr, td, omega);
            let q = arrival_persistence_prob(hi, mean_holding_time(tr, td, omega), p);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&q), "{q}");
        }
    }

    #[test]
    fn transient_pmf_is_normalised_with_the_right_mean(n in 0u32..40, p in 0.0f64..=1.0, mean in 0.0f64..30.0) {
        let pmf = transient_pmf(n, p, mean, 1e-12).unwrap();
        let total: f64 = pmf.probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((pmf.mean() - (n as f64 * p + mean)).abs() < 1e-6 * (1.0 + n as f64 + mean));
    }

    #[test]
    fn quantile_monotone_in_epsilon(n in 0u32..30, p in 0.0f64..=1.0, mean in 0.0f64..20.0, e1 in 1e-4f64..0.5, e2 in 1e-4f64..0.5) {
        let pmf = transient_pmf(n, p, mean, 1e-12).unwrap();
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(forecast_quantile(&pmf, small).unwrap() >= forecast_quantile(&pmf, large).unwrap());
    }

    #[test]
    fn optimizer_returns_feasible_points_with_monotone_trace(
        coefs in prop::collection::vec(1.0f64..1e5, 1..6),
        floor in 1e-3f64..0.05,
        cap in 0.1f64..0.6,
        budget_frac in 0.0f64..1.0,
        scale in 1.0f64..1e9,
    ) {
        let users: Vec<ApUser> = coefs.iter().map(|&a| ApUser { coefficient: a, floor, cap }).collect();
        let floor_sum = floor * users.len() as f64;
        let budget = floor_sum + budget_frac * (1.25 - floor_sum).max(0.0);
        let problem = ApProblem { users, budget, rate_scale: scale };
        let r = optimize_ap(&problem, &OptimizerParams::default(), None).unwrap();
        prop_assert!(r.power.iter().sum::<f64>() <= budget + 1e-9);
        for &p in &r.power {
            prop_assert!(p >= floor - 1e-9 && p <= cap + 1e-9);
        }
        for w in r.trace.windows(2) {
            prop_assert!(w[1].ee >= w[0].ee - 1e-9 * w[0].ee.abs().max(1.0));
        }
    }

    #[test]
    fn users_stay_in_the_room_and_leave_by_the_min_rule(seed in any::<u64>(), dt in 0.1f64..120.0) {
        let m = MobilityConfig::default();
        let c = ServiceClass {
            name: "c".into(),
            min_rate: 1e6,
            mean_session: 60.0,
            omega: 3.0,
            arrival_rate: 0.1,
            power_min: 0.0,
            power_max: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = 0;
        let mut users: Vec<_> = (0..30).map(|_| spawn_user(0, &c, &m, &mut next, &mut rng)).collect();
        let before: Vec<_> = users.clone();
        let gone = advance(&mut users, dt, &m, &mut rng);
        prop_assert_eq!(gone.len() + users.len(), before.len());
        for u in &before {
            let expires = u.session_remaining.min(u.residence_remaining) <= dt;
            prop_assert_eq!(gone.iter().any(|g| g.id == u.id), expires);
        }
        for u in &users {
            prop_assert!((0.0..=m.room[0]).contains(&u.position.x));
            prop_assert!((0.0..=m.room[1]).contains(&u.position.y));
        }
    }
}
