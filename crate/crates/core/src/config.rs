//! Scenario configuration: TOML with one section per model component.
//! Every field has a default; an empty file is the reference scenario.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizer::OptimizerParams;
use crate::phy::{NoiseModel, OfdmParams, PhyParams, QamLink};
use crate::predictor::PredictorParams;
use crate::traffic::{MobilityConfig, ServiceClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Baseline,
    PdpUpa,
    PdpOpa,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Baseline, Scheme::PdpUpa, Scheme::PdpOpa];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::PdpUpa => "pdp-upa",
            Scheme::PdpOpa => "pdp-opa",
        }
    }

    pub fn uses_prediction(&self) -> bool {
        !matches!(self, Scheme::Baseline)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown scheme `{s}` (expected baseline, pdp-upa or pdp-opa)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferenceModel {
    /// Raw power allocated by the other APs to users of the same class.
    Literal,
    /// The same powers weighted by `(R H)^2` towards the victim receiver.
    GainWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoomConfig {
    /// Length, width, height (m).
    pub dims: [f64; 3],
    /// AP grid columns by rows.
    pub ap_grid: [usize; 2],
    /// Vertical separation between the APs and the receivers (m).
    pub h_tx: f64,
}

impl Default for RoomConfig {
    fn default() -> Self {
        Self {
            dims: [5.0, 5.0, 3.0],
            ap_grid: [4, 2],
            h_tx: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub beam_waist: f64,
    pub wavelength: f64,
    pub lens_index: f64,
    pub vcsel_power: f64,
    pub array_side: usize,
    pub element_pitch: f64,
    pub focal_length: f64,
    pub vcsel_to_lens: f64,
    pub mpe: f64,
    pub pupil_radius: f64,
    /// Most hazardous position; defaults to the lens image plane.
    pub mhp_distance: Option<f64>,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            beam_waist: 5e-6,
            wavelength: 1550e-9,
            lens_index: 1.55,
            vcsel_power: 0.05,
            array_side: 5,
            element_pitch: 250e-6,
            focal_length: 12.5e-6,
            vcsel_to_lens: 12.5e-6,
            mpe: 2000.0,
            pupil_radius: 3.5e-3,
            mhp_distance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub n_pd: usize,
    pub tilt_deg: f64,
    pub fov_deg: f64,
    pub refractive_index: f64,
    /// Active-area fraction of each photodiode.
    pub active_area: f64,
    pub responsivity: f64,
    /// Overrides `n^2 / sin^2(FOV)` when set.
    pub concentrator_gain: Option<f64>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            n_pd: 5,
            tilt_deg: 30.0,
            fov_deg: 30.0,
            refractive_index: 1.77,
            active_area: 0.1,
            responsivity: 0.7,
            concentrator_gain: None,
        }
    }
}

impl ReceiverConfig {
    pub fn gain(&self) -> f64 {
        self.concentrator_gain.unwrap_or_else(|| {
            let s = self.fov_deg.to_radians().sin();
            self.refractive_index * self.refractive_index / (s * s)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub fft_size: usize,
    pub bandwidth: f64,
    pub bias_sigmas: f64,
    pub target_ber: f64,
    pub constellation: usize,
    pub noise_figure_db: f64,
    pub rin_db_per_hz: f64,
    pub temperature: f64,
    pub load_resistance: f64,
    /// Received optical power on which RIN is evaluated (W).
    pub rin_reference_power: f64,
    /// Overrides the composed noise PSD (A^2/Hz) when set.
    pub noise_psd: Option<f64>,
    pub interference_model: InterferenceModel,
    /// Rate unit inside the log utility (bit/s).
    pub utility_rate_unit: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            fft_size: 64,
            bandwidth: 1.5e9,
            bias_sigmas: 3.0,
            target_ber: 1e-3,
            constellation: 4,
            noise_figure_db: 5.0,
            rin_db_per_hz: -155.0,
            temperature: 300.0,
            load_resistance: 50.0,
            rin_reference_power: 0.01,
            noise_psd: None,
            interference_model: InterferenceModel::Literal,
            utility_rate_unit: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub name: String,
    pub min_rate: f64,
    pub mean_session: f64,
    pub omega: f64,
    /// Share of the total arrival rate.
    pub share: f64,
    pub power_min: f64,
    pub power_max: f64,
}

pub fn default_classes() -> Vec<ClassConfig> {
    vec![
        ClassConfig {
            name: "video".into(),
            min_rate: 1e9,
            mean_session: 600.0,
            omega: 4.0,
            share: 1.0 / 3.0,
            power_min: 2e-2,
            power_max: 0.6,
        },
        ClassConfig {
            name: "web".into(),
            min_rate: 1e8,
            mean_session: 120.0,
            omega: 2.0,
            share: 1.0 / 3.0,
            power_min: 1e-2,
            power_max: 0.4,
        },
        ClassConfig {
            name: "voice".into(),
            min_rate: 1e7,
            mean_session: 180.0,
            omega: 1.0,
            share: 1.0 / 3.0,
            power_min: 5e-3,
            power_max: 0.2,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub speed_range: [f64; 2],
    pub pause_range: [f64; 2],
    pub mean_residence: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        let m = MobilityConfig::default();
        Self {
            speed_range: m.speed_range,
            pause_range: m.pause_range,
            mean_residence: m.mean_residence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub epsilon: f64,
    pub pmf_tail_cutoff: f64,
    /// Slots in the sliding window of the arrival-rate estimator.
    pub rate_window_slots: usize,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            pmf_tail_cutoff: 1e-12,
            rate_window_slots: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub tol: f64,
    pub max_iter: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Jacobi passes over the APs with refreshed interference.
    pub interference_sweeps: usize,
    /// Start each slot from the previous slot's powers.
    pub warm_start: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let p = OptimizerParams::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            interference_sweeps: 2,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Arrival rates (users/min per AP).
    pub mu_grid: Vec<f64>,
    /// Slot lengths (min).
    pub tau_grid: Vec<f64>,
    /// Consecutive seeds per sweep point, starting at `seed`.
    pub seeds: usize,
    /// Per-symbol SNR grid of the BER curves (dB).
    pub snr_grid: Vec<f64>,
    pub ber_frames: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            mu_grid: vec![0.6, 1.0, 1.4],
            tau_grid: vec![0.5, 1.0],
            seeds: 1,
            snr_grid: (0..=10).map(|i| 2.0 * i as f64).collect(),
            ber_frames: 16_130,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub snapshots: bool,
    pub allocations: bool,
    pub forecasts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scheme: Scheme,
    /// Slot length, equal to the prediction horizon (s).
    pub slot_tau: f64,
    pub slots_total: usize,
    pub warmup_slots: usize,
    pub users_initial: usize,
    /// Mean arrivals per minute per AP, split over the classes by share.
    pub arrival_rate: f64,
    /// Observation and rate-evaluation step inside a slot (s).
    pub obs_interval: f64,
    pub room: RoomConfig,
    pub optics: OpticsConfig,
    pub receiver: ReceiverConfig,
    pub phy: PhyConfig,
    pub mobility: MobilitySection,
    pub classes: Vec<ClassConfig>,
    pub predictor: PredictorSection,
    pub optimizer: OptimizerSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scheme: Scheme::PdpOpa,
            slot_tau: 30.0,
            slots_total: 200,
            warmup_slots: 10,
            users_initial: 12,
            arrival_rate: 1.4,
            obs_interval: 1.0,
            room: RoomConfig::default(),
            optics: OpticsConfig::default(),
            receiver: ReceiverConfig::default(),
            phy: PhyConfig::default(),
            mobility: MobilitySection::default(),
            classes: default_classes(),
            predictor: PredictorSection::default(),
            optimizer: OptimizerSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(format!("{field}: {reason}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ScenarioConfig {
    /// Parses TOML text; unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        positive("slot_tau", self.slot_tau)?;
        positive("obs_interval", self.obs_interval)?;
        if self.obs_interval > self.slot_tau {
            return Err(invalid("obs_interval", "must not exceed slot_tau"));
        }
        let steps = self.slot_tau / self.obs_interval;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(invalid("obs_interval", "must divide slot_tau"));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(invalid("arrival_rate", "must be finite and >= 0"));
        }
        for (i, d) in self.room.dims.iter().enumerate() {
            positive(["room.dims[0]", "room.dims[1]", "room.dims[2]"][i], *d)?;
        }
        if self.room.ap_grid[0] == 0 || self.room.ap_grid[1] == 0 {
            return Err(invalid("room.ap_grid", "needs at least one AP per axis"));
        }
        positive("room.h_tx", self.room.h_tx)?;
        if self.room.h_tx >= self.room.dims[2] {
            return Err(invalid("room.h_tx", "must be below the ceiling height"));
        }
        let o = &self.optics;
        for (name, v) in [
            ("optics.beam_waist", o.beam_waist),
            ("optics.wavelength", o.wavelength),
            ("optics.lens_index", o.lens_index),
            ("optics.vcsel_power", o.vcsel_power),
            ("optics.element_pitch", o.element_pitch),
            ("optics.focal_length", o.focal_length),
            ("optics.mpe", o.mpe),
        ] {
            positive(name, v)?;
        }
        if o.array_side == 0 {
            return Err(invalid("optics.array_side", "must be >= 1"));
        }
        if !(1e-3..=7e-3).contains(&o.pupil_radius) {
            return Err(invalid("optics.pupil_radius", format!("must lie in [1e-3, 7e-3] m, got {}", o.pupil_radius)));
        }
        let r = &self.receiver;
        if r.n_pd == 0 {
            return Err(invalid("receiver.n_pd", "must be >= 1"));
        }
        if !(r.fov_deg > 0.0 && r.fov_deg <= 90.0) {
            return Err(invalid("receiver.fov_deg", "must lie in (0, 90]"));
        }
        if !(r.active_area > 0.0 && r.active_area <= 1.0) {
            return Err(invalid("receiver.active_area", "must lie in (0, 1]"));
        }
        positive("receiver.responsivity", r.responsivity)?;
        positive("receiver.refractive_index", r.refractive_index)?;
        let p = &self.phy;
        OfdmParams::new(p.fft_size, p.bandwidth, p.bias_sigmas).map_err(|e| invalid("phy", e))?;
        QamLink::new(p.target_ber, p.constellation).map_err(|e| invalid("phy", e))?;
        positive("phy.temperature", p.temperature)?;
        positive("phy.load_resistance", p.load_resistance)?;
        positive("phy.utility_rate_unit", p.utility_rate_unit)?;
        if let Some(psd) = p.noise_psd {
            positive("phy.noise_psd", psd)?;
        }
        self.mobility().validate().map_err(|e| invalid("mobility", e))?;
        if self.classes.is_empty() {
            return Err(invalid("classes", "at least one class required"));
        }
        let share: f64 = self.classes.iter().map(|c| c.share).sum();
        if self.classes.iter().any(|c| !(c.share >= 0.0)) || (share - 1.0).abs() > 1e-6 {
            return Err(invalid("classes.share", format!("shares must be >= 0 and sum to 1, got {share}")));
        }
        for (i, c) in self.service_classes().iter().enumerate() {
            c.validate().map_err(|e| invalid(&format!("classes[{i}] ({})", c.name), e))?;
            if c.power_min <= 0.0 {
                return Err(invalid(&format!("classes[{i}].power_min"), "must be > 0"));
            }
            if c.power_max > self.ap_budget() {
                return Err(invalid(&format!("classes[{i}].power_max"), "exceeds the AP budget"));
            }
        }
        self.predictor_params(self.slot_tau).validate().map_err(|e| invalid("predictor", e))?;
        if self.predictor.rate_window_slots == 0 {
            return Err(invalid("predictor.rate_window_slots", "must be >= 1"));
        }
        positive("optimizer.tol", self.optimizer.tol)?;
        if self.optimizer.max_iter == 0 || self.optimizer.interference_sweeps == 0 {
            return Err(invalid("optimizer", "max_iter and interference_sweeps must be >= 1"));
        }
        if !(self.optimizer.alpha1 >= 0.0 && self.optimizer.alpha2 >= 0.0) {
            return Err(invalid("optimizer.alpha", "step sizes must be >= 0"));
        }
        if self.sweep.seeds == 0 {
            return Err(invalid("sweep.seeds", "must be >= 1"));
        }
        if self.sweep.ber_frames < 1000 {
            return Err(invalid("sweep.ber_frames", "at least 1000 frames per point"));
        }
        Ok(())
    }

    /// Per-AP power budget `Lc^2` times the VCSEL power.
    pub fn ap_budget(&self) -> f64 {
        (self.optics.array_side * self.optics.array_side) as f64 * self.optics.vcsel_power
    }

    pub fn ap_count(&self) -> usize {
        self.room.ap_grid[0] * self.room.ap_grid[1]
    }

    pub fn receiver_height(&self) -> f64 {
        self.room.dims[2] - self.room.h_tx
    }

    pub fn mobility(&self) -> MobilityConfig {
        MobilityConfig {
            room: self.room.dims,
            receiver_height: self.receiver_height(),
            speed_range: self.mobility.speed_range,
            pause_range: self.mobility.pause_range,
            mean_residence: self.mobility.mean_residence,
        }
    }

    /// Classes with the room-wide arrival rate (users/s) filled in.
    pub fn service_classes(&self) -> Vec<ServiceClass> {
        let total = self.arrival_rate * self.ap_count() as f64 / 60.0;
        self.classes
            .iter()
            .map(|c| ServiceClass {
                name: c.name.clone(),
                min_rate: c.min_rate,
                mean_session: c.mean_session,
                omega: c.omega,
                arrival_rate: total * c.share,
                power_min: c.power_min,
                power_max: c.power_max,
            })
            .collect()
    }

    pub fn predictor_params(&self, horizon: f64) -> PredictorParams {
        PredictorParams {
            epsilon: self.predictor.epsilon,
            horizon,
            pmf_tail_cutoff: self.predictor.pmf_tail_cutoff,
        }
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        OptimizerParams {
            tol: self.optimizer.tol,
            max_iter: self.optimizer.max_iter,
            alpha1: self.optimizer.alpha1,
            alpha2: self.optimizer.alpha2,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        let p = &self.phy;
        let mut n = NoiseModel::from_components(
            p.bandwidth,
            p.noise_figure_db,
            p.temperature,
            p.load_resistance,
            p.rin_db_per_hz,
            self.receiver.responsivity * p.rin_reference_power,
        );
        if let Some(psd) = p.noise_psd {
            n.psd = psd;
        }
        n
    }

    pub fn phy_params(&self) -> Result<PhyParams> {
        let p = &self.phy;
        Ok(PhyParams {
            ofdm: OfdmParams::new(p.fft_size, p.bandwidth, p.bias_sigmas)?,
            link: QamLink::new(p.target_ber, p.constellation)?,
            noise: self.noise(),
            responsivity: self.receiver.responsivity,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.room.h_tx, 2.0);
        assert_eq!(cfg.optics.beam_waist, 5e-6);
        assert_eq!(cfg.optics.wavelength, 1550e-9);
        assert_eq!(cfg.optics.vcsel_power, 0.05);
        assert_eq!(cfg.optics.array_side, 5);
        assert_eq!(cfg.phy.rin_db_per_hz, -155.0);
        assert_eq!(cfg.optics.lens_index, 1.55);
        assert_eq!(cfg.receiver.refractive_index, 1.77);
        assert_eq!(cfg.receiver.responsivity, 0.7);
        assert_eq!(cfg.receiver.n_pd, 5);
        assert_eq!(cfg.receiver.fov_deg, 30.0);
        assert_eq!(cfg.phy.noise_figure_db, 5.0);
        assert_eq!(cfg.phy.bandwidth, 1.5e9);
        assert_eq!(cfg.phy.target_ber, 1e-3);
        assert_eq!(cfg.ap_count(), 8);
        assert_eq!(cfg.users_initial, 12);
        assert!((cfg.ap_budget() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn negative_slot_rejected() {
        let err = ScenarioConfig::from_toml("slot_tau = -1").unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(m) if m.contains("slot_tau")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ScenarioConfig::from_toml("slot_tua = 30").is_err());
        assert!(ScenarioConfig::from_toml("[phy]\nbandwith = 1e9").is_err());
    }

    #[test]
    fn roundtrip() {
        let cfg = ScenarioConfig::default();
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ScenarioConfig::from_toml("scheme = \"baseline\"\nseed = 9\n[predictor]\nepsilon = 0.1").unwrap();
        assert_eq!(cfg.scheme, Scheme::Baseline);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.predictor.epsilon, 0.1);
        assert_ne!(cfg.hash(), ScenarioConfig::default().hash());
    }

    #[test]
    fn shares_must_sum_to_one() {
        let text = "[[classes]]\nname = \"a\"\nmin_rate = 1e6\nmean_session = 60\nomega = 1\nshare = 0.5\npower_min = 1e-3\npower_max = 0.1\n";
        assert!(ScenarioConfig::from_toml(text).is_err());
    }

    #[test]
    fn concentrator_gain_default() {
        let g = ReceiverConfig::default().gain();
        assert!((g - 1.77f64 * 1.77 / 0.25).abs() < 1e-9);
    }

    #[test]
    fn scheme_names() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("opa".parse::<Scheme>().is_err());
    }
}
