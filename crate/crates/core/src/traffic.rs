//! Dynamic user population: per-class Poisson arrivals, hyper-exponential
//! session durations, exponential residence and random-waypoint mobility.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

/// A demand/service class.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceClass {
    pub name: String,
    /// Minimum rate `C_min` (bit/s).
    pub min_rate: f64,
    /// Mean session duration `T_d` (s).
    pub mean_session: f64,
    /// Hyper-exponential shape `omega >= 1`.
    pub omega: f64,
    /// Room-wide arrival rate (users/s).
    pub arrival_rate: f64,
    pub power_min: f64,
    pub power_max: f64,
}

impl ServiceClass {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("min_rate", self.min_rate)?;
        ensure_positive("mean_session", self.mean_session)?;
        ensure_non_negative("arrival_rate", self.arrival_rate)?;
        ensure_non_negative("power_min", self.power_min)?;
        ensure_positive("power_max", self.power_max)?;
        if !(self.omega >= 1.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: format!("must be >= 1, got {}", self.omega),
            });
        }
        if self.power_min > self.power_max {
            return Err(Error::InvalidParameter {
                name: "power_min",
                reason: format!("{} exceeds power_max {}", self.power_min, self.power_max),
            });
        }
        Ok(())
    }

    /// Mean of the session-duration mixture.
    pub fn session_mean(&self) -> f64 {
        let w = self.omega;
        w / (w + 1.0) * self.mean_session / w + 1.0 / (w + 1.0) * w * self.mean_session
    }
}

/// One active user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub id: u64,
    pub class: usize,
    pub position: Vector3<f64>,
    pub waypoint: [f64; 2],
    pub speed: f64,
    pub pause_remaining: f64,
    pub session_remaining: f64,
    pub residence_remaining: f64,
    /// Time since arrival (s).
    pub age: f64,
    pub serving_ap: Option<usize>,
    pub allocated_power: f64,
}

/// Room and random-waypoint parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityConfig {
    /// Room length, width, height (m).
    pub room: [f64; 3],
    pub receiver_height: f64,
    pub speed_range: [f64; 2],
    pub pause_range: [f64; 2],
    /// Mean residence time `T_r` (s).
    pub mean_residence: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            room: [5.0, 5.0, 3.0],
            receiver_height: 1.0,
            speed_range: [0.1, 0.5],
            pause_range: [0.0, 30.0],
            mean_residence: 120.0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("room.length", self.room[0]), ("room.width", self.room[1]), ("room.height", self.room[2])] {
            ensure_positive(name, v)?;
        }
        ensure_positive("mean_residence", self.mean_residence)?;
        ensure_non_negative("speed_min", self.speed_range[0])?;
        ensure_non_negative("pause_min", self.pause_range[0])?;
        if self.speed_range[1] < self.speed_range[0] || self.pause_range[1] < self.pause_range[0] {
            return Err(Error::InvalidParameter {
                name: "mobility ranges",
                reason: "need min <= max".into(),
            });
        }
        if !(self.receiver_height >= 0.0 && self.receiver_height < self.room[2]) {
            return Err(Error::InvalidParameter {
                name: "receiver_height",
                reason: format!("must lie in [0, {}), got {}", self.room[2], self.receiver_height),
            });
        }
        Ok(())
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        [rng.random::<f64>() * self.room[0], rng.random::<f64>() * self.room[1]]
    }

    fn random_in<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
        range[0] + (range[1] - range[0]) * rng.random::<f64>()
    }
}

/// Draws a session duration from the two-stage hyper-exponential.
pub fn sample_session_duration<R: Rng + ?Sized>(c: &ServiceClass, rng: &mut R) -> f64 {
    let w = c.omega;
    let mean = if rng.random::<f64>() < w / (w + 1.0) {
        c.mean_session / w
    } else {
        w * c.mean_session
    };
    -mean * (1.0 - rng.random::<f64>()).ln()
}

/// Session-duration density.
pub fn session_pdf(t: f64, td: f64, omega: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let w = omega;
    let (r1, r2) = (w / td, 1.0 / (w * td));
    w / (w + 1.0) * r1 * (-r1 * t).exp() + 1.0 / (w + 1.0) * r2 * (-r2 * t).exp()
}

fn holding_terms(tr: f64, td: f64, omega: f64) -> [(f64, f64); 2] {
    let w = omega;
    [
        (w / (w + 1.0), 1.0 / tr + w / td),
        (1.0 / (w + 1.0), 1.0 / tr + 1.0 / (w * td)),
    ]
}

/// Holding-time density, the two-term mixture over the combined rates
/// `1/T_r + omega/T_d` and `1/T_r + 1/(omega T_d)`.
pub fn holding_time_pdf(t: f64, tr: f64, td: f64, omega: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    holding_terms(tr, td, omega)
        .iter()
        .map(|(weight, rate)| weight * rate * (-rate * t).exp())
        .sum()
}

/// Holding-time survival function `1 - F(t)`.
pub fn holding_time_survival(t: f64, tr: f64, td: f64, omega: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    holding_terms(tr, td, omega)
        .iter()
        .map(|(weight, rate)| weight * (-rate * t).exp())
        .sum()
}

/// Mean class holding time.
pub fn mean_holding_time(tr: f64, td: f64, omega: f64) -> f64 {
    holding_terms(tr, td, omega).iter().map(|(weight, rate)| weight / rate).sum()
}

/// Users arriving in a window of `duration` seconds. Ids are taken from
/// `next_id`, which is advanced.
pub fn spawn_arrivals<R: Rng + ?Sized>(
    class_index: usize,
    c: &ServiceClass,
    duration: f64,
    m: &MobilityConfig,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<UserState> {
    let mean = c.arrival_rate * duration;
    if !(mean > 0.0) {
        return Vec::new();
    }
    let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    (0..count).map(|_| spawn_user(class_index, c, m, next_id, rng)).collect()
}

/// One fresh user at a uniform position with fresh session and residence
/// clocks.
pub fn spawn_user<R: Rng + ?Sized>(
    class_index: usize,
    c: &ServiceClass,
    m: &MobilityConfig,
    next_id: &mut u64,
    rng: &mut R,
) -> UserState {
    let residence = Exp::new(1.0 / m.mean_residence).expect("validated residence mean");
    let xy = m.random_point(rng);
    let user = UserState {
        id: *next_id,
        class: class_index,
        position: Vector3::new(xy[0], xy[1], m.receiver_height),
        waypoint: m.random_point(rng),
        speed: MobilityConfig::random_in(m.speed_range, rng),
        pause_remaining: 0.0,
        session_remaining: sample_session_duration(c, rng),
        residence_remaining: residence.sample(rng),
        age: 0.0,
        serving_ap: None,
        allocated_power: 0.0,
    };
    *next_id += 1;
    user
}

/// Moves every user by `dt` seconds of random-waypoint motion, runs down the
/// session and residence clocks and removes users whose holding time
/// `min(session, residence)` has expired. Returns the departed users.
pub fn advance<R: Rng + ?Sized>(users: &mut Vec<UserState>, dt: f64, m: &MobilityConfig, rng: &mut R) -> Vec<UserState> {
    for u in users.iter_mut() {
        step_waypoint(u, dt, m, rng);
        u.session_remaining -= dt;
        u.residence_remaining -= dt;
        u.age += dt;
    }
    let (gone, stay): (Vec<_>, Vec<_>) = users
        .drain(..)
        .partition(|u| u.session_remaining <= 0.0 || u.residence_remaining <= 0.0);
    *users = stay;
    gone
}

fn step_waypoint<R: Rng + ?Sized>(u: &mut UserState, dt: f64, m: &MobilityConfig, rng: &mut R) {
    let mut left = dt;
    while left > 0.0 {
        if u.pause_remaining > 0.0 {
            let p = u.pause_remaining.min(left);
            u.pause_remaining -= p;
            left -= p;
            continue;
        }
        let dx = u.waypoint[0] - u.position.x;
        let dy = u.waypoint[1] - u.position.y;
        let dist = dx.hypot(dy);
        let reach = u.speed * left;
        if u.speed <= 0.0 {
            break;
        }
        if reach < dist {
            u.position.x += dx / dist * reach;
            u.position.y += dy / dist * reach;
            break;
        }
        u.position.x = u.waypoint[0];
        u.position.y = u.waypoint[1];
        left -= dist / u.speed;
        u.pause_remaining = MobilityConfig::random_in(m.pause_range, rng);
        u.waypoint = m.random_point(rng);
        u.speed = MobilityConfig::random_in(m.speed_range, rng);
        if u.pause_remaining <= 0.0 && u.speed <= 0.0 {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn class(td: f64, omega: f64, mu: f64) -> ServiceClass {
        ServiceClass {
            name: "test".into(),
            min_rate: 1e6,
            mean_session: td,
            omega,
            arrival_rate: mu,
            power_min: 0.0,
            power_max: 1.0,
        }
    }

    #[test]
    fn class_validation() {
        assert!(class(60.0, 1.0, 0.1).validate().is_ok());
        assert!(class(60.0, 0.5, 0.1).validate().is_err());
        let mut c = class(60.0, 2.0, 0.1);
        c.power_min = 2.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn exponential_collapse_at_unit_shape() {
        for t in [0.0, 1.0, 30.0, 200.0] {
            assert_relative_eq!(session_pdf(t, 60.0, 1.0), (-t / 60.0).exp() / 60.0, max_relative = 1e-12);
            let rate = 1.0 / 60.0 + 1.0 / 90.0;
            assert_relative_eq!(holding_time_pdf(t, 90.0, 60.0, 1.0), rate * (-rate * t).exp(), max_relative = 1e-12);
        }
        assert_relative_eq!(mean_holding_time(60.0, 60.0, 1.0), 30.0, max_relative = 1e-12);
    }

    #[test]
    fn session_mean_formula() {
        let c = class(60.0, 4.0, 0.0);
        assert_relative_eq!(c.session_mean(), 0.8 * 15.0 + 0.2 * 240.0, max_relative = 1e-12);
        assert_relative_eq!(mean_holding_time(1e12, 60.0, 4.0), c.session_mean(), max_relative = 1e-6);
    }

    #[test]
    fn spawn_zero_rate_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut id = 0;
        assert!(spawn_arrivals(0, &class(60.0, 1.0, 0.0), 10.0, &MobilityConfig::default(), &mut id, &mut rng).is_empty());
    }

    #[test]
    fn spawned_users_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MobilityConfig::default();
        let mut id = 10;
        let users = spawn_arrivals(2, &class(60.0, 2.0, 5.0), 4.0, &m, &mut id, &mut rng);
        assert!(!users.is_empty());
        assert_eq!(id, 10 + users.len() as u64);
        for u in &users {
            assert_eq!(u.class, 2);
            assert_eq!(u.position.z, 1.0);
            assert!(u.session_remaining >= 0.0 && u.residence_remaining >= 0.0);
            assert!((0.0..=5.0).contains(&u.position.x) && (0.0..=5.0).contains(&u.position.y));
        }
    }

    #[test]
    fn short_session_is_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MobilityConfig::default();
        let mut id = 0;
        let mut users = spawn_arrivals(0, &class(60.0, 1.0, 50.0), 1.0, &m, &mut id, &mut rng);
        users[0].session_remaining = 0.5;
        users[0].residence_remaining = 100.0;
        for u in users.iter_mut().skip(1) {
            u.session_remaining = 100.0;
            u.residence_remaining = 100.0;
        }
        let n = users.len();
        let gone = advance(&mut users, 1.0, &m, &mut rng);
        assert_eq!(gone.len(), 1);
        assert_eq!(users.len(), n - 1);
    }

    #[test]
    fn tiny_step_barely_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MobilityConfig::default();
        let mut id = 0;
        let mut users = spawn_arrivals(0, &class(1e6, 1.0, 20.0), 1.0, &m, &mut id, &mut rng);
        for u in users.iter_mut() {
            u.residence_remaining = 1e6;
        }
        let before: Vec<_> = users.iter().map(|u| u.position).collect();
        advance(&mut users, 1e-9, &m, &mut rng);
        for (u, p) in users.iter().zip(before) {
            assert!((u.position - p).norm() < 1e-6);
        }
    }
}
