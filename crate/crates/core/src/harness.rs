//! Discrete-time simulation: per-slot observe, predict, associate, allocate
//! and evaluate, plus scheme comparisons and parameter sweeps.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InterferenceModel, ScenarioConfig, Scheme};
use crate::error::{Error, Result};
use crate::optics::{
    aggregate_gain, eye_safe_power, lens_transform, ApGeometry, EyeSafetyParams, LensParams, ReceiverGeometry,
    TransformedBeam, VcselParams,
};
use crate::optimizer::{
    associate_distance, associate_pdp, min_power_floor, optimize_ap, uniform_power, ApProblem, ApUser, Candidate,
    WarmStart,
};
use crate::phy::{ber_upper_bound, PhyParams};
use crate::predictor::{predict_slot, DemandForecast, ObservationWindow};
use crate::rng::stream;
use crate::traffic::{advance, spawn_arrivals, spawn_user, MobilityConfig, ServiceClass, UserState};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed geometry of the room: AP arrays, the transformed beam and the
/// receiver template.
#[derive(Debug, Clone)]
pub struct Network {
    pub aps: Vec<ApGeometry>,
    pub beam: TransformedBeam,
    pub receiver: ReceiverGeometry,
    /// Eye-safe power per VCSEL (W).
    pub eye_safe_power: f64,
}

impl Network {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let o = &cfg.optics;
        let vcsel = VcselParams::new(o.beam_waist, o.wavelength, o.lens_index, o.vcsel_power)?;
        let lens = LensParams {
            focal_length: o.focal_length,
            vcsel_to_lens: o.vcsel_to_lens,
        };
        let beam = lens_transform(&vcsel, &lens)?;
        let eye = EyeSafetyParams {
            mpe: o.mpe,
            pupil_radius: o.pupil_radius,
            mhp_distance: o.mhp_distance.unwrap_or(beam.waist_location.max(f64::MIN_POSITIVE)),
        };
        let cap = eye_safe_power(&eye, &vcsel)?;
        let [cols, rows] = cfg.room.ap_grid;
        let [len, wid, height] = cfg.room.dims;
        let mut aps = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let pos = Vector3::new(
                    (c as f64 + 0.5) * len / cols as f64,
                    (r as f64 + 0.5) * wid / rows as f64,
                    height,
                );
                let ap = ApGeometry::uniform_grid(pos, o.array_side, o.element_pitch, o.vcsel_power);
                ap.validate(cap)?;
                aps.push(ap);
            }
        }
        let rc = &cfg.receiver;
        let receiver = ReceiverGeometry {
            position: Vector3::new(0.0, 0.0, cfg.receiver_height()),
            pd_orientations: ReceiverGeometry::adr_orientations(rc.n_pd, rc.tilt_deg.to_radians()),
            active_area: rc.active_area,
            concentrator_gain: rc.gain(),
            acceptance_angle: rc.fov_deg.to_radians(),
            responsivity: rc.responsivity,
        };
        receiver.validate()?;
        Ok(Self {
            aps,
            beam,
            receiver,
            eye_safe_power: cap,
        })
    }

    pub fn ap_count(&self) -> usize {
        self.aps.len()
    }

    pub fn ap_positions(&self) -> Vec<[f64; 3]> {
        self.aps.iter().map(|a| [a.position.x, a.position.y, a.position.z]).collect()
    }

    /// Aggregate gain from every AP to a receiver at `pos`.
    pub fn gains(&self, pos: &Vector3<f64>) -> Vec<f64> {
        let mut rx = self.receiver.clone();
        rx.position = *pos;
        self.aps.iter().map(|ap| aggregate_gain(ap, &rx, &self.beam)).collect()
    }

    /// Nearest AP in the horizontal plane (the coverage zone); ties go to the
    /// lowest index.
    pub fn zone(&self, pos: &Vector3<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (a, ap) in self.aps.iter().enumerate() {
            let d = (ap.position.x - pos.x).hypot(ap.position.y - pos.y);
            if d < best.1 {
                best = (a, d);
            }
        }
        best.0
    }

    /// Every point of a `grid x grid` lattice over the floor at receiver
    /// height must see a nonzero gain from some AP.
    pub fn check_coverage(&self, cfg: &ScenarioConfig, grid: usize) -> Result<()> {
        let [len, wid, _] = cfg.room.dims;
        let h = cfg.receiver_height();
        for i in 0..=grid {
            for j in 0..=grid {
                let p = Vector3::new(len * i as f64 / grid as f64, wid * j as f64 / grid as f64, h);
                if self.gains(&p).iter().all(|&g| g <= 0.0) {
                    return Err(Error::ConfigInvalid(format!(
                        "room.ap_grid: floor point ({:.2}, {:.2}) m is outside every AP's coverage",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full validation: field checks, then eye safety and coverage.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Result<Network> {
    cfg.validate()?;
    let net = Network::new(cfg).map_err(|e| match e {
        Error::ConfigInvalid(m) => Error::ConfigInvalid(m),
        other => Error::ConfigInvalid(format!("optics: {other}")),
    })?;
    net.check_coverage(cfg, 20)?;
    Ok(net)
}

/// Per-slot metrics; time averages over the evaluation steps of the slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub time: f64,
    pub users_present: f64,
    pub users_served: f64,
    /// `sum ln(C / unit) / sum P` per AP; zero for an AP without users.
    pub per_ap_ee: Vec<f64>,
    /// Mean of `per_ap_ee` over the APs that served someone.
    pub mean_ap_ee: f64,
    /// The same ratio restricted to each class; `None` when nobody of the
    /// class was served.
    pub class_ee: Vec<Option<f64>>,
    pub network_cf_db: f64,
    pub sum_rate: f64,
    pub total_power: f64,
    pub mean_ber_bound: f64,
    pub prediction_mae: f64,
    pub prediction_violation: f64,
    pub unserved_users: f64,
    /// Outer iterations summed over the per-AP solves of the slot; each
    /// outer iteration carries exactly one dual update.
    pub optimizer_iters: usize,
    pub optimizer_solves: usize,
    pub optimizer_max_iters: usize,
    pub nonconverged: usize,
    pub reserved_power: f64,
}

/// Summary of one run over the slots after warm-up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub slots: usize,
    pub mean_ee: f64,
    pub std_ee: f64,
    pub cf_db: f64,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub mean_power: f64,
    pub mean_ber_bound: f64,
    pub prediction_mae: f64,
    pub violation_rate: f64,
    pub mean_unserved: f64,
    /// Outer iterations per per-AP solve.
    pub mean_iters: f64,
    pub class_ee: Vec<Option<f64>>,
}

/// Conservation and feasibility counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Audit {
    pub arrived: u64,
    pub departed: u64,
    pub present: u64,
    /// Slots where some AP exceeded its budget or a power left its range.
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRow {
    pub slot: usize,
    pub ap: usize,
    pub user: u64,
    pub class: usize,
    pub rho: f64,
    pub power: f64,
    pub rate: f64,
    pub lambda: f64,
    pub mu: f64,
    pub ee_ap: f64,
    pub converged: bool,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub slot: usize,
    pub ap: usize,
    pub class: usize,
    pub basis: u32,
    pub p_tau: f64,
    pub q_tau: f64,
    pub mu_hat: f64,
    pub n_tilde: u32,
    pub actual: u32,
    pub loss: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub slot: usize,
    pub time: f64,
    pub user: u64,
    pub class: usize,
    pub x: f64,
    pub y: f64,
    pub serving_ap: Option<usize>,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub slots: Vec<SlotMetrics>,
    pub aggregate: Aggregate,
    pub audit: Audit,
    pub allocations: Vec<AllocationRow>,
    pub forecasts: Vec<ForecastRow>,
    pub snapshots: Vec<SnapshotRow>,
    /// Excluded from every written artifact.
    #[serde(skip)]
    pub wall_clock: std::time::Duration,
}

/// Mutable state carried across slots.
pub struct SimState {
    pub slot: usize,
    pub time: f64,
    pub users: Vec<UserState>,
    next_id: u64,
    windows: Vec<ObservationWindow>,
    /// Zone arrivals per `(ap, class)` in each recent slot.
    arrival_history: VecDeque<Vec<u64>>,
    zone_of: BTreeMap<u64, usize>,
    /// Forecasts for the current slot, indexed `ap * K + class`.
    forecasts: Option<Vec<DemandForecast>>,
    /// Unused reservation per AP during the current slot.
    reserve: Vec<f64>,
    /// Last optimised power and floor multiplier per user id.
    warm: BTreeMap<u64, (f64, f64)>,
    pub audit: Audit,
}

/// One simulator instance: configuration, fixed geometry and state.
pub struct Simulator {
    pub cfg: ScenarioConfig,
    pub net: Network,
    pub phy: PhyParams,
    pub classes: Vec<ServiceClass>,
    pub mobility: MobilityConfig,
    pub state: SimState,
    steps_per_slot: usize,
    collect_allocations: bool,
    collect_forecasts: bool,
    collect_snapshots: bool,
    allocations: Vec<AllocationRow>,
    forecast_rows: Vec<ForecastRow>,
    snapshots: Vec<SnapshotRow>,
}

#[derive(Debug, Clone, Copy, Default)]
struct SolveStats {
    iters: usize,
    solves: usize,
    max_iters: usize,
    nonconverged: usize,
}

/// Per-user view used inside a slot.
struct Link {
    gains: Vec<f64>,
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let net = validate_scenario(cfg)?;
        let phy = cfg.phy_params()?;
        let classes = cfg.service_classes();
        let mobility = cfg.mobility();
        let k = classes.len();
        let n_aps = net.ap_count();
        let mut next_id = 0;
        let mut users = Vec::with_capacity(cfg.users_initial);
        if cfg.users_initial > 0 {
            let weights: Vec<f64> = cfg.classes.iter().map(|c| c.share).collect();
            let pick = WeightedIndex::new(&weights).map_err(|e| Error::ConfigInvalid(format!("classes.share: {e}")))?;
            let mut rng = stream(cfg.seed, "traffic.initial", 0, 0);
            for _ in 0..cfg.users_initial {
                let class = pick.sample(&mut rng);
                users.push(spawn_user(class, &classes[class], &mobility, &mut next_id, &mut rng));
            }
        }
        let mut windows = Vec::with_capacity(n_aps * k);
        for a in 0..n_aps {
            for c in 0..k {
                windows.push(ObservationWindow::new(a, c));
            }
        }
        let mut zone_of = BTreeMap::new();
        for u in &users {
            zone_of.insert(u.id, net.zone(&u.position));
        }
        let audit = Audit {
            arrived: users.len() as u64,
            departed: 0,
            present: users.len() as u64,
            violations: 0,
        };
        let steps_per_slot = (cfg.slot_tau / cfg.obs_interval).round() as usize;
        let mut sim = Self {
            cfg: cfg.clone(),
            net,
            phy,
            classes,
            mobility,
            state: SimState {
                slot: 0,
                time: 0.0,
                users,
                next_id,
                windows,
                arrival_history: VecDeque::new(),
                zone_of,
                forecasts: None,
                reserve: vec![0.0; n_aps],
                warm: BTreeMap::new(),
                audit,
            },
            steps_per_slot,
            collect_allocations: cfg.output.allocations,
            collect_forecasts: cfg.output.forecasts,
            collect_snapshots: cfg.output.snapshots,
            allocations: Vec::new(),
            forecast_rows: Vec::new(),
            snapshots: Vec::new(),
        };
        sim.record_observations(0.0)?;
        Ok(sim)
    }

    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn ap_budget(&self) -> f64 {
        self.cfg.ap_budget()
    }

    /// Users per `(zone, class)` right now.
    fn zone_counts(&self) -> Vec<u32> {
        let k = self.n_classes();
        let mut counts = vec![0u32; self.net.ap_count() * k];
        for u in &self.state.users {
            counts[self.state.zone_of[&u.id] * k + u.class] += 1;
        }
        counts
    }

    /// Updates zones, counts zone arrivals (fresh users and handoffs) and
    /// records the per-zone counts at time `t`.
    fn record_observations(&mut self, t: f64) -> Result<()> {
        let k = self.n_classes();
        let n = self.net.ap_count() * k;
        if self.state.arrival_history.is_empty() {
            self.state.arrival_history.push_back(vec![0; n]);
        }
        let mut fresh = vec![0u64; n];
        let mut zone_of = BTreeMap::new();
        for u in &self.state.users {
            let z = self.net.zone(&u.position);
            if self.state.zone_of.get(&u.id) != Some(&z) && (t > 0.0 || self.state.slot > 0) {
                fresh[z * k + u.class] += 1;
            }
            zone_of.insert(u.id, z);
        }
        self.state.zone_of = zone_of;
        let current = self.state.arrival_history.back_mut().expect("history is non-empty");
        for (c, f) in current.iter_mut().zip(&fresh) {
            *c += f;
        }
        let counts = self.zone_counts();
        let keep = self.steps_per_slot * self.cfg.predictor.rate_window_slots + 1;
        for (w, &c) in self.state.windows.iter_mut().zip(&counts) {
            w.record(t, c)?;
            if w.counts.len() > 2 * keep {
                let cut = w.counts.len() - keep;
                w.counts.drain(..cut);
                w.timestamps.drain(..cut);
            }
        }
        Ok(())
    }

    /// Interference seen by a class-`class` user with `gains` if served by
    /// `ap`, given the per-`(ap, class)` allocated totals.
    fn interference(&self, ap: usize, class: usize, gains: &[f64], totals: &[f64]) -> f64 {
        let k = self.n_classes();
        let r = self.phy.responsivity;
        (0..self.net.ap_count())
            .filter(|&a| a != ap)
            .map(|a| {
                let p = totals[a * k + class];
                match self.cfg.phy.interference_model {
                    InterferenceModel::Literal => p,
                    InterferenceModel::GainWeighted => (r * gains[a]).powi(2) * p,
                }
            })
            .sum()
    }

    fn class_totals(&self, users: &[UserState]) -> Vec<f64> {
        let k = self.n_classes();
        let mut totals = vec![0.0; self.net.ap_count() * k];
        for u in users {
            if let Some(a) = u.serving_ap {
                totals[a * k + u.class] += u.allocated_power;
            }
        }
        totals
    }

    fn links(&self) -> Vec<Link> {
        self.state
            .users
            .iter()
            .map(|u| Link {
                gains: self.net.gains(&u.position),
            })
            .collect()
    }

    /// Association and power allocation at the start of a slot.
    fn allocate(&mut self) -> Result<SolveStats> {
        let scheme = self.cfg.scheme;
        let n_aps = self.net.ap_count();
        let k = self.n_classes();
        let budget = self.ap_budget();
        let links = self.links();
        let caps: Vec<f64> = self.state.users.iter().map(|u| self.classes[u.class].power_max).collect();

        // Reservation for the forecast growth of each zone.
        let mut reserve = vec![0.0; n_aps];
        if scheme.uses_prediction() {
            if let Some(f) = &self.state.forecasts {
                let counts = self.zone_counts();
                for a in 0..n_aps {
                    for c in 0..k {
                        let growth = f[a * k + c].n_tilde.saturating_sub(counts[a * k + c]);
                        reserve[a] += growth as f64 * self.classes[c].power_min;
                    }
                }
            }
            for r in reserve.iter_mut() {
                *r = r.min(budget);
            }
        }
        let budgets: Vec<f64> = reserve.iter().map(|r| budget - r).collect();

        // Interference estimate from the allocation still in place.
        let prev_totals = self.class_totals(&self.state.users);
        let mut iters = SolveStats::default();
        let m = self.state.users.len();
        let mut serving: Vec<Option<usize>> = vec![None; m];
        let mut power = vec![0.0; m];
        let mut floors = vec![0.0; m];
        let mut qos_fixed = vec![false; m];

        match scheme {
            Scheme::Baseline => {
                let pos: Vec<[f64; 3]> = self.state.users.iter().map(|u| [u.position.x, u.position.y, u.position.z]).collect();
                let s = associate_distance(&pos, &self.net.ap_positions());
                power = uniform_power(&s, &budgets, &caps);
                serving = s.serving;
            }
            Scheme::PdpUpa | Scheme::PdpOpa => {
                let candidates: Vec<Candidate> = self
                    .state
                    .users
                    .iter()
                    .zip(&links)
                    .map(|(u, l)| {
                        let c = &self.classes[u.class];
                        let floors = (0..n_aps)
                            .map(|a| {
                                let i = self.interference(a, u.class, &l.gains, &prev_totals);
                                min_power_floor(i, c.min_rate, c.power_min, c.power_max, l.gains[a], &self.phy).ok()
                            })
                            .collect();
                        Candidate {
                            priority: c.min_rate,
                            gains: l.gains.clone(),
                            floors,
                        }
                    })
                    .collect();
                let (s, mut remaining) = associate_pdp(&candidates, &budgets);
                serving = s.serving;
                // Users no AP can bring to their class rate are still served
                // at P_min where budget allows, as a recorded QoS miss.
                for n in 0..m {
                    if serving[n].is_some() || candidates[n].floors.iter().any(|f| f.is_some()) {
                        continue;
                    }
                    let pmin = self.classes[self.state.users[n].class].power_min;
                    let best = (0..n_aps)
                        .filter(|&a| links[n].gains[a] > 0.0 && remaining[a] >= pmin)
                        .max_by(|&x, &y| links[n].gains[x].total_cmp(&links[n].gains[y]));
                    if let Some(a) = best {
                        remaining[a] -= pmin;
                        serving[n] = Some(a);
                        qos_fixed[n] = true;
                    }
                }
                for n in 0..m {
                    if let Some(a) = serving[n] {
                        floors[n] = if qos_fixed[n] {
                            self.classes[self.state.users[n].class].power_min
                        } else {
                            candidates[n].floors[a].expect("associated at a feasible AP")
                        };
                    }
                }
                let assoc = crate::optimizer::AssociationMatrix { n_aps, serving: serving.clone() };
                match scheme {
                    Scheme::PdpUpa => power = uniform_power(&assoc, &budgets, &caps),
                    _ => {
                        // Start from the floors, then Jacobi passes with
                        // refreshed interference.
                        power = floors.clone();
                        for sweep in 0..self.cfg.optimizer.interference_sweeps {
                            let mut staged = self.state.users.clone();
                            for (u, (&s, &p)) in staged.iter_mut().zip(serving.iter().zip(&power)) {
                                u.serving_ap = s;
                                u.allocated_power = p;
                            }
                            let totals = if sweep == 0 { prev_totals.clone() } else { self.class_totals(&staged) };
                            iters = SolveStats::default();
                            for a in 0..n_aps {
                                let members: Vec<usize> = assoc.users_of(a);
                                if members.is_empty() {
                                    continue;
                                }
                                let fixed: f64 = members.iter().filter(|&&n| qos_fixed[n]).map(|&n| floors[n]).sum();
                                let opt: Vec<usize> = members.iter().copied().filter(|&n| !qos_fixed[n]).collect();
                                if opt.is_empty() {
                                    continue;
                                }
                                let mut users = Vec::with_capacity(opt.len());
                                for &n in &opt {
                                    let u = &self.state.users[n];
                                    let c = &self.classes[u.class];
                                    let i = self.interference(a, u.class, &links[n].gains, &totals);
                                    let coefficient = self.phy.rate_coefficient(links[n].gains[a], i);
                                    let rho = if sweep == 0 {
                                        floors[n]
                                    } else {
                                        min_power_floor(i, c.min_rate, c.power_min, c.power_max, links[n].gains[a], &self.phy)
                                            .unwrap_or(c.power_min)
                                    };
                                    users.push(ApUser {
                                        coefficient,
                                        floor: rho,
                                        cap: c.power_max,
                                    });
                                }
                                let ap_budget = (budgets[a] - fixed).max(0.0);
                                let floor_sum: f64 = users.iter().map(|u| u.floor).sum();
                                if floor_sum > ap_budget {
                                    for (u, &n) in users.iter_mut().zip(&opt) {
                                        u.floor = self.classes[self.state.users[n].class].power_min;
                                    }
                                }
                                let problem = ApProblem {
                                    users,
                                    budget: ap_budget,
                                    rate_scale: self.phy.rate_scale() / self.cfg.phy.utility_rate_unit,
                                };
                                let warm = if self.cfg.optimizer.warm_start {
                                    let mut w = WarmStart::default();
                                    for (j, &n) in opt.iter().enumerate() {
                                        let id = self.state.users[n].id;
                                        let (p, l) = self.state.warm.get(&id).copied().unwrap_or((problem.users[j].floor, 0.0));
                                        w.power.push(p);
                                        w.lambda.push(l);
                                    }
                                    Some(w)
                                } else {
                                    None
                                };
                                let result = optimize_ap(&problem, &self.cfg.optimizer_params(), warm.as_ref())?;
                                iters.iters += result.iterations;
                                iters.solves += 1;
                                iters.max_iters = iters.max_iters.max(result.iterations);
                                if !result.converged {
                                    iters.nonconverged += 1;
                                }
                                for (j, &n) in opt.iter().enumerate() {
                                    power[n] = result.power[j];
                                    floors[n] = problem.users[j].floor;
                                }
                                if sweep + 1 == self.cfg.optimizer.interference_sweeps {
                                    for (j, &n) in opt.iter().enumerate() {
                                        let id = self.state.users[n].id;
                                        self.state.warm.insert(id, (result.power[j], result.duals.lambda[j]));
                                    }
                                    if self.collect_allocations {
                                        for (j, &n) in opt.iter().enumerate() {
                                            let u = &self.state.users[n];
                                            self.allocations.push(AllocationRow {
                                                slot: self.state.slot,
                                                ap: a,
                                                user: u.id,
                                                class: u.class,
                                                rho: problem.users[j].floor,
                                                power: result.power[j],
                                                rate: problem.rate(j, result.power[j]) * self.cfg.phy.utility_rate_unit,
                                                lambda: result.duals.lambda[j],
                                                mu: result.duals.mu,
                                                ee_ap: result.ee_value,
                                                converged: result.converged,
                                                iters: result.iterations,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut used = vec![0.0; n_aps];
        for (u, (&s, &p)) in self.state.users.iter_mut().zip(serving.iter().zip(&power)) {
            u.serving_ap = s;
            u.allocated_power = if s.is_some() { p } else { 0.0 };
            if let Some(a) = s {
                used[a] += p;
            }
        }
        self.state.warm.retain(|id, _| self.state.users.iter().any(|u| u.id == *id));
        self.state.reserve = (0..n_aps).map(|a| reserve[a].min(budget - used[a]).max(0.0)).collect();
        Ok(iters)
    }

    /// Mid-slot admission of fresh users from the reservation (PDP schemes).
    fn admit(&mut self, new_users: &mut [UserState]) {
        if !self.cfg.scheme.uses_prediction() {
            return;
        }
        let totals = self.class_totals(&self.state.users);
        for u in new_users.iter_mut() {
            let gains = self.net.gains(&u.position);
            let c = &self.classes[u.class];
            let mut order: Vec<usize> = (0..gains.len()).filter(|&a| gains[a] > 0.0).collect();
            order.sort_by(|&x, &y| gains[y].total_cmp(&gains[x]));
            for a in order {
                let i = self.interference(a, u.class, &gains, &totals);
                let Ok(floor) = min_power_floor(i, c.min_rate, c.power_min, c.power_max, gains[a], &self.phy) else {
                    continue;
                };
                if self.state.reserve[a] >= floor {
                    self.state.reserve[a] -= floor;
                    u.serving_ap = Some(a);
                    u.allocated_power = floor;
                    break;
                }
            }
        }
    }

    fn audit_power(&mut self) {
        let budget = self.ap_budget();
        let mut used = vec![0.0; self.net.ap_count()];
        let mut bad = false;
        for u in &self.state.users {
            if let Some(a) = u.serving_ap {
                used[a] += u.allocated_power;
                let c = &self.classes[u.class];
                if u.allocated_power > c.power_max + 1e-9 || u.allocated_power < -1e-12 {
                    bad = true;
                }
            } else if u.allocated_power != 0.0 {
                bad = true;
            }
        }
        if used.iter().any(|&p| p > budget + 1e-9) {
            bad = true;
        }
        if bad {
            self.state.audit.violations += 1;
        }
    }

    /// Runs one slot and returns its metrics.
    pub fn run_slot(&mut self) -> Result<SlotMetrics> {
        let n_aps = self.net.ap_count();
        let k = self.n_classes();
        let slot = self.state.slot;
        let slot_start = self.state.time;
        let stats = self.allocate()?;
        self.audit_power();
        let reserved_power: f64 = self.state.reserve.iter().sum();

        let dt = self.cfg.obs_interval;
        let unit = self.cfg.phy.utility_rate_unit;
        let order = self.cfg.phy.constellation;
        let mut acc = Accumulator::new(n_aps, k);
        for step in 0..self.steps_per_slot {
            let mut rng = stream(self.cfg.seed, "traffic.mobility", slot as u64, step as u64);
            let gone = advance(&mut self.state.users, dt, &self.mobility, &mut rng);
            self.state.audit.departed += gone.len() as u64;
            for c in 0..k {
                let mut rng = stream(self.cfg.seed, "traffic.arrivals", slot as u64, (step * k + c) as u64);
                let mut fresh = spawn_arrivals(c, &self.classes[c], dt, &self.mobility, &mut self.state.next_id, &mut rng);
                self.state.audit.arrived += fresh.len() as u64;
                self.admit(&mut fresh);
                self.state.users.extend(fresh);
            }
            self.state.audit.present = self.state.users.len() as u64;
            if self.state.audit.arrived != self.state.audit.departed + self.state.audit.present {
                return Err(Error::InvalidParameter {
                    name: "user audit",
                    reason: "arrivals, departures and present users disagree".into(),
                });
            }
            self.state.time = slot_start + (step + 1) as f64 * dt;
            self.record_observations(self.state.time)?;
            self.evaluate(&mut acc, unit, order);
        }
        self.audit_power();

        // Forecast quality for this slot, then the forecast for the next.
        let counts = self.zone_counts();
        let (mae, violation) = match &self.state.forecasts {
            Some(f) => {
                let predicted: Vec<u32> = f.iter().map(|x| x.n_tilde).collect();
                let loss = crate::predictor::prediction_loss(&predicted, &counts)?;
                (loss.mae, loss.violation_rate)
            }
            None => (0.0, 0.0),
        };
        if self.collect_forecasts {
            if let Some(f) = &self.state.forecasts {
                for (x, &actual) in f.iter().zip(&counts) {
                    self.forecast_rows.push(ForecastRow {
                        slot,
                        ap: x.ap,
                        class: x.class,
                        basis: x.basis_count,
                        p_tau: x.p_tau,
                        q_tau: x.q_tau,
                        mu_hat: x.mu_hat,
                        n_tilde: x.n_tilde,
                        actual,
                        loss: x.n_tilde.abs_diff(actual),
                    });
                }
            }
        }
        self.forecast_next()?;
        if self.collect_snapshots {
            for u in &self.state.users {
                self.snapshots.push(SnapshotRow {
                    slot,
                    time: self.state.time,
                    user: u.id,
                    class: u.class,
                    x: u.position.x,
                    y: u.position.y,
                    serving_ap: u.serving_ap,
                    power: u.allocated_power,
                });
            }
        }
        self.state.slot += 1;
        let mut m = acc.finish(slot, slot_start, self.steps_per_slot);
        m.prediction_mae = mae;
        m.prediction_violation = violation;
        m.optimizer_iters = stats.iters;
        m.optimizer_solves = stats.solves;
        m.optimizer_max_iters = stats.max_iters;
        m.nonconverged = stats.nonconverged;
        m.reserved_power = reserved_power;
        Ok(m)
    }

    fn forecast_next(&mut self) -> Result<()> {
        let tau = self.cfg.slot_tau;
        let window = self.cfg.predictor.rate_window_slots;
        let slots_seen = self.state.arrival_history.len();
        let span = slots_seen as f64 * tau;
        let n = self.state.windows.len();
        let mut seen = vec![0u64; n];
        for h in &self.state.arrival_history {
            for (s, x) in seen.iter_mut().zip(h) {
                *s += x;
            }
        }
        let params = self.cfg.predictor_params(tau);
        let mut out = Vec::with_capacity(n);
        for (i, w) in self.state.windows.iter_mut().enumerate() {
            w.arrivals_seen = seen[i];
            w.window_span = span;
            let c = &self.classes[w.class];
            out.push(predict_slot(w, &params, c.mean_session, c.omega, self.mobility.mean_residence)?);
        }
        self.state.forecasts = Some(out);
        self.state.arrival_history.push_back(vec![0; n]);
        while self.state.arrival_history.len() > window {
            self.state.arrival_history.pop_front();
        }
        Ok(())
    }

    fn evaluate(&self, acc: &mut Accumulator, unit: f64, order: usize) {
        let totals = self.class_totals(&self.state.users);
        let k = self.n_classes();
        acc.steps += 1;
        acc.present += self.state.users.len() as f64;
        let mut ap_num = vec![0.0; acc.n_aps];
        let mut ap_den = vec![0.0; acc.n_aps];
        let mut class_num = vec![0.0; acc.n_aps * k];
        let mut class_den = vec![0.0; acc.n_aps * k];
        let mut rate_sum = 0.0;
        let mut power_sum = 0.0;
        for u in &self.state.users {
            let c = &self.classes[u.class];
            let Some(a) = u.serving_ap else {
                acc.unserved += 1.0;
                continue;
            };
            let gains = self.net.gains(&u.position);
            let i = self.interference(a, u.class, &gains, &totals);
            let p = u.allocated_power;
            let rate = self.phy.user_rate(p, gains[a], i);
            if rate < c.min_rate {
                acc.unserved += 1.0;
            }
            acc.served += 1.0;
            rate_sum += rate;
            power_sum += p;
            acc.ber_sum += ber_upper_bound(self.phy.sinr(p, gains[a], i), order);
            acc.ber_count += 1.0;
            // A zero rate would send the log utility to -inf; floor it.
            let utility = (rate.max(1.0) / unit).ln();
            ap_num[a] += utility;
            ap_den[a] += p;
            class_num[a * k + u.class] += utility;
            class_den[a * k + u.class] += p;
        }
        acc.rate += rate_sum;
        acc.power += power_sum;
        let mut ee_sum = 0.0;
        let mut ee_count = 0;
        for a in 0..acc.n_aps {
            if ap_den[a] > 0.0 {
                let ee = ap_num[a] / ap_den[a];
                acc.per_ap[a] += ee;
                acc.per_ap_count[a] += 1.0;
                ee_sum += ee;
                ee_count += 1;
            }
        }
        if ee_count > 0 {
            acc.mean_ee += ee_sum / ee_count as f64;
            acc.mean_ee_count += 1.0;
        }
        for c in 0..k {
            let mut s = 0.0;
            let mut cnt = 0;
            for a in 0..acc.n_aps {
                if class_den[a * k + c] > 0.0 {
                    s += class_num[a * k + c] / class_den[a * k + c];
                    cnt += 1;
                }
            }
            if cnt > 0 {
                acc.class_ee[c] += s / cnt as f64;
                acc.class_count[c] += 1.0;
            }
        }
    }

    pub fn into_parts(self) -> (Vec<AllocationRow>, Vec<ForecastRow>, Vec<SnapshotRow>, Audit) {
        (self.allocations, self.forecast_rows, self.snapshots, self.state.audit)
    }
}

struct Accumulator {
    n_aps: usize,
    steps: usize,
    present: f64,
    served: f64,
    unserved: f64,
    rate: f64,
    power: f64,
    ber_sum: f64,
    ber_count: f64,
    per_ap: Vec<f64>,
    per_ap_count: Vec<f64>,
    mean_ee: f64,
    mean_ee_count: f64,
    class_ee: Vec<f64>,
    class_count: Vec<f64>,
}

impl Accumulator {
    fn new(n_aps: usize, k: usize) -> Self {
        Self {
            n_aps,
            steps: 0,
            present: 0.0,
            served: 0.0,
            unserved: 0.0,
            rate: 0.0,
            power: 0.0,
            ber_sum: 0.0,
            ber_count: 0.0,
            per_ap: vec![0.0; n_aps],
            per_ap_count: vec![0.0; n_aps],
            mean_ee: 0.0,
            mean_ee_count: 0.0,
            class_ee: vec![0.0; k],
            class_count: vec![0.0; k],
        }
    }

    fn finish(self, slot: usize, time: f64, steps: usize) -> SlotMetrics {
        let n = steps.max(1) as f64;
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let sum_rate = self.rate / n;
        let total_power = self.power / n;
        SlotMetrics {
            slot,
            time,
            users_present: self.present / n,
            users_served: self.served / n,
            per_ap_ee: self.per_ap.iter().zip(&self.per_ap_count).map(|(s, c)| ratio(*s, *c)).collect(),
            mean_ap_ee: ratio(self.mean_ee, self.mean_ee_count),
            class_ee: self
                .class_ee
                .iter()
                .zip(&self.class_count)
                .map(|(s, c)| (*c > 0.0).then(|| s / c))
                .collect(),
            network_cf_db: if total_power > 0.0 && sum_rate > 0.0 {
                10.0 * (sum_rate / total_power).log10()
            } else {
                0.0
            },
            sum_rate,
            total_power,
            mean_ber_bound: ratio(self.ber_sum, self.ber_count),
            prediction_mae: 0.0,
            prediction_violation: 0.0,
            unserved_users: self.unserved / n,
            optimizer_iters: 0,
            optimizer_solves: 0,
            optimizer_max_iters: 0,
            nonconverged: 0,
            reserved_power: 0.0,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn aggregate(slots: &[SlotMetrics], warmup: usize, n_classes: usize) -> Aggregate {
    let s: Vec<&SlotMetrics> = slots.iter().filter(|m| m.slot >= warmup).collect();
    let col = |f: &dyn Fn(&SlotMetrics) -> f64| s.iter().map(|m| f(m)).collect::<Vec<f64>>();
    let (mean_ee, std_ee) = mean_std(&col(&|m| m.mean_ap_ee));
    let (mean_sum_rate, std_sum_rate) = mean_std(&col(&|m| m.sum_rate));
    let (mean_power, _) = mean_std(&col(&|m| m.total_power));
    let class_ee = (0..n_classes)
        .map(|c| {
            let v: Vec<f64> = s.iter().filter_map(|m| m.class_ee[c]).collect();
            (!v.is_empty()).then(|| mean_std(&v).0)
        })
        .collect();
    let forecast_slots: Vec<&&SlotMetrics> = s.iter().filter(|m| m.slot > 0).collect();
    let fmean = |f: &dyn Fn(&SlotMetrics) -> f64| {
        if forecast_slots.is_empty() {
            0.0
        } else {
            forecast_slots.iter().map(|m| f(m)).sum::<f64>() / forecast_slots.len() as f64
        }
    };
    Aggregate {
        slots: s.len(),
        mean_ee,
        std_ee,
        cf_db: if mean_power > 0.0 && mean_sum_rate > 0.0 {
            10.0 * (mean_sum_rate / mean_power).log10()
        } else {
            0.0
        },
        mean_sum_rate,
        std_sum_rate,
        mean_power,
        mean_ber_bound: mean_std(&col(&|m| m.mean_ber_bound)).0,
        prediction_mae: fmean(&|m| m.prediction_mae),
        violation_rate: fmean(&|m| m.prediction_violation),
        mean_unserved: mean_std(&col(&|m| m.unserved_users)).0,
        mean_iters: {
            let solves: usize = s.iter().map(|m| m.optimizer_solves).sum();
            let iters: usize = s.iter().map(|m| m.optimizer_iters).sum();
            if solves > 0 {
                iters as f64 / solves as f64
            } else {
                0.0
            }
        },
        class_ee,
    }
}

/// Runs `slots_total` slots of the configured scheme.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    let start = std::time::Instant::now();
    let mut sim = Simulator::new(cfg)?;
    let mut slots = Vec::with_capacity(cfg.slots_total);
    for _ in 0..cfg.slots_total {
        slots.push(sim.run_slot()?);
    }
    let aggregate = aggregate(&slots, cfg.warmup_slots, cfg.classes.len());
    let (allocations, forecasts, snapshots, audit) = sim.into_parts();
    Ok(RunResult {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        scheme: cfg.scheme,
        slots,
        aggregate,
        audit,
        allocations,
        forecasts,
        snapshots,
        wall_clock: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Arrival rate, users/min per AP.
    Mu,
    /// Slot length and prediction horizon, min.
    Tau,
    /// Per-symbol SNR of the Monte-Carlo BER chain, dB.
    Snr,
    /// Index of the only active class.
    Class,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Mu => "mu",
            SweepAxis::Tau => "tau",
            SweepAxis::Snr => "snr",
            SweepAxis::Class => "class",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepAxis::Mu),
            "tau" => Ok(SweepAxis::Tau),
            "snr" => Ok(SweepAxis::Snr),
            "class" => Ok(SweepAxis::Class),
            _ => Err(Error::ConfigInvalid(format!("unknown sweep axis `{s}` (expected mu, tau, snr or class)"))),
        }
    }
}

/// Applies one sweep value to a copy of the configuration.
pub fn apply_axis(cfg: &ScenarioConfig, axis: SweepAxis, value: f64) -> Result<ScenarioConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Mu => c.arrival_rate = value,
        SweepAxis::Tau => c.slot_tau = value * 60.0,
        SweepAxis::Class => {
            let idx = value as usize;
            if value < 0.0 || value.fract() != 0.0 || idx >= c.classes.len() {
                return Err(Error::ConfigInvalid(format!("class axis value {value} is not a class index")));
            }
            for (i, cl) in c.classes.iter_mut().enumerate() {
                cl.share = if i == idx { 1.0 } else { 0.0 };
            }
        }
        SweepAxis::Snr => {
            return Err(Error::ConfigInvalid("the snr axis drives the BER chain, not scenario runs".into()));
        }
    }
    c.validate()?;
    Ok(c)
}

/// One row of a scenario sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub aggregate: Aggregate,
}

/// Runs every `(value, scheme, seed)` point; rows come back ordered by that
/// key whatever the thread count.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64], schemes: &[Scheme], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::ConfigInvalid("sweep needs at least one value".into()));
    }
    let mut points = Vec::new();
    for &v in values {
        let base = apply_axis(cfg, axis, v)?;
        for &scheme in schemes {
            for &seed in seeds {
                let mut c = base.clone();
                c.scheme = scheme;
                c.seed = seed;
                c.output = Default::default();
                points.push((v, c));
            }
        }
    }
    points
        .into_par_iter()
        .map(|(v, c)| {
            let r = run_scenario(&c)?;
            Ok(SweepRow {
                axis,
                value: v,
                scheme: c.scheme,
                seed: c.seed,
                aggregate: r.aggregate,
            })
        })
        .collect()
}

/// One point of a BER curve for one scheme's link population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRow {
    pub scheme: Scheme,
    pub order: usize,
    pub point: crate::phy::BerPoint,
    pub seed: u64,
}

/// Relative SINR of every served user at the end of a short run of
/// `scheme`; these weight the Monte-Carlo BER so each scheme is measured on
/// its own link population.
pub fn link_weights(cfg: &ScenarioConfig, scheme: Scheme) -> Result<Vec<f64>> {
    let mut c = cfg.clone();
    c.scheme = scheme;
    c.output = Default::default();
    let mut sim = Simulator::new(&c)?;
    for _ in 0..(c.warmup_slots + 1).min(c.slots_total.max(1)) {
        sim.run_slot()?;
    }
    let totals = sim.class_totals(&sim.state.users);
    let mut sinr = Vec::new();
    for u in &sim.state.users {
        if let Some(a) = u.serving_ap {
            let gains = sim.net.gains(&u.position);
            let i = sim.interference(a, u.class, &gains, &totals);
            let s = sim.phy.sinr(u.allocated_power, gains[a], i);
            if s.is_finite() && s > 0.0 {
                sinr.push(s);
            }
        }
    }
    if sinr.is_empty() {
        return Ok(vec![1.0]);
    }
    let mean = sinr.iter().sum::<f64>() / sinr.len() as f64;
    Ok(sinr.into_iter().map(|s| s / mean).collect())
}

/// BER curves per scheme and constellation over the configured SNR grid.
pub fn ber_curves(cfg: &ScenarioConfig, schemes: &[Scheme], orders: &[usize]) -> Result<Vec<BerRow>> {
    let ofdm = cfg.phy_params()?.ofdm;
    let mut rows = Vec::new();
    for &scheme in schemes {
        let weights = link_weights(cfg, scheme)?;
        for &order in orders {
            let run = crate::phy::BerRun::new(order, cfg.sweep.ber_frames, cfg.seed);
            for point in crate::phy::simulate_ber_curve(&weights, &ofdm, &cfg.sweep.snr_grid, &run)? {
                rows.push(BerRow {
                    scheme,
                    order,
                    point,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(rows)
}
