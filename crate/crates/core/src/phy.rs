//! DCO-OFDM physical layer: adaptive square QAM, zero-forcing precoding,
//! noise model and the rate/SNR expressions consumed by the optimizer.

use std::f64::consts::{E, LN_2, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::rng::derive_seed;

/// Square QAM orders supported by the modem.
pub const SUPPORTED_ORDERS: [usize; 4] = [4, 16, 64, 256];

const BOLTZMANN: f64 = 1.380_649e-23;

/// DCO-OFDM frame parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    /// FFT size `M` (power of two, at least 4).
    pub fft_size: usize,
    /// Baseband bandwidth `B` (Hz).
    pub bandwidth: f64,
    /// DC bias expressed in standard deviations of the scaled AC signal.
    pub bias_sigmas: f64,
}

impl OfdmParams {
    pub fn new(fft_size: usize, bandwidth: f64, bias_sigmas: f64) -> Result<Self> {
        let p = Self {
            fft_size,
            bandwidth,
            bias_sigmas,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidParameter {
                name: "fft_size",
                reason: format!("must be a power of two >= 4, got {}", self.fft_size),
            });
        }
        ensure_positive("bandwidth", self.bandwidth)?;
        ensure_positive("bias_sigmas", self.bias_sigmas)
    }

    /// Sub-carrier utilisation ratio `xi = (M - 2) / M`.
    pub fn utilization(&self) -> f64 {
        let m = self.fft_size as f64;
        (m - 2.0) / m
    }

    /// Power normalisation factor `alpha = sqrt(M / (M - 2))`.
    pub fn norm_alpha(&self) -> f64 {
        let m = self.fft_size as f64;
        (m / (m - 2.0)).sqrt()
    }

    pub fn data_subcarriers(&self) -> usize {
        self.fft_size / 2 - 1
    }

    /// DC bias for a given electrical signal power.
    pub fn dc_bias(&self, tx_power: f64) -> f64 {
        self.bias_sigmas * tx_power.sqrt()
    }
}

/// SINR gap for a target uncoded BER: `-ln(5 BER) / 1.5`.
pub fn sinr_gap(target_ber: f64) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber < 0.2) {
        return Err(Error::InvalidBer { ber: target_ber });
    }
    Ok(-(5.0 * target_ber).ln() / 1.5)
}

/// Upper bound on the BER of `F`-QAM at the given linear SINR.
pub fn ber_upper_bound(sinr: f64, order: usize) -> f64 {
    0.2 * (-1.5 * sinr / (order as f64 - 1.0)).exp()
}

/// Constellation selected for a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationChoice {
    /// Selected square-QAM order.
    pub order: usize,
    /// Unrounded `1 + SINR / Gamma`.
    pub raw: f64,
    /// The link cannot support even 4-QAM at the target BER.
    pub below_min_order: bool,
}

/// Largest supported constellation not exceeding `1 + SINR / Gamma`.
pub fn max_constellation(sinr: f64, gap: f64) -> ConstellationChoice {
    let raw = 1.0 + sinr / gap;
    let order = SUPPORTED_ORDERS
        .iter()
        .rev()
        .copied()
        .find(|&o| o as f64 <= raw)
        .unwrap_or(SUPPORTED_ORDERS[0]);
    ConstellationChoice {
        order,
        raw,
        below_min_order: raw < SUPPORTED_ORDERS[0] as f64,
    }
}

/// Target BER, its SINR gap and the nominal constellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QamLink {
    pub target_ber: f64,
    pub sinr_gap: f64,
    pub constellation: usize,
}

impl QamLink {
    pub fn new(target_ber: f64, constellation: usize) -> Result<Self> {
        if !SUPPORTED_ORDERS.contains(&constellation) {
            return Err(Error::UnsupportedConstellation(constellation));
        }
        Ok(Self {
            target_ber,
            sinr_gap: sinr_gap(target_ber)?,
            constellation,
        })
    }
}

/// Receiver noise: white Gaussian with variance `N_T * B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// One-sided power spectral density `N_T` (A^2/Hz).
    pub psd: f64,
    /// Noise bandwidth (Hz).
    pub bandwidth: f64,
    /// Relative intensity noise (dB/Hz) folded into `psd`.
    pub rin_db_per_hz: f64,
    /// Preamplifier noise figure (dB) folded into `psd`.
    pub noise_figure_db: f64,
}

impl NoiseModel {
    /// Thermal noise of a resistive load scaled by the noise figure, plus RIN
    /// on a reference DC photocurrent.
    pub fn from_components(
        bandwidth: f64,
        noise_figure_db: f64,
        temperature: f64,
        load_resistance: f64,
        rin_db_per_hz: f64,
        rin_reference_current: f64,
    ) -> Self {
        let thermal = 4.0 * BOLTZMANN * temperature * 10f64.powf(noise_figure_db / 10.0) / load_resistance;
        let rin = 10f64.powf(rin_db_per_hz / 10.0) * rin_reference_current * rin_reference_current;
        Self {
            psd: thermal + rin,
            bandwidth,
            rin_db_per_hz,
            noise_figure_db,
        }
    }

    /// `sigma^2 = N_T B`.
    pub fn variance(&self) -> f64 {
        self.psd * self.bandwidth
    }
}

/// Received SNR per sub-carrier, `R^2 alpha^2 P / (xi sigma^2)`.
pub fn subcarrier_snr(power: f64, responsivity: f64, p: &OfdmParams, n: &NoiseModel) -> f64 {
    let alpha = p.norm_alpha();
    responsivity * responsivity * alpha * alpha * power / (p.utilization() * n.variance())
}

/// Everything the rate expression needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhyParams {
    pub ofdm: OfdmParams,
    pub link: QamLink,
    pub noise: NoiseModel,
    /// Photodiode responsivity (A/W).
    pub responsivity: f64,
}

impl PhyParams {
    /// `xi^2 sigma^2`, the noise term of the rate denominator.
    pub fn noise_term(&self) -> f64 {
        let xi = self.ofdm.utilization();
        xi * xi * self.noise.variance()
    }

    /// Coefficient `a` with `C = xi B log2(1 + a P)`.
    pub fn rate_coefficient(&self, gain: f64, interference: f64) -> f64 {
        let rh = self.responsivity * gain;
        E / (2.0 * PI) * rh * rh / (self.link.sinr_gap * (self.noise_term() + interference))
    }

    /// Rate prefactor `xi B` (bit/s per bit of spectral efficiency).
    pub fn rate_scale(&self) -> f64 {
        self.ofdm.utilization() * self.ofdm.bandwidth
    }

    pub fn user_rate(&self, power: f64, gain: f64, interference: f64) -> f64 {
        user_rate(power, gain, interference, &self.link, &self.ofdm, &self.noise, self.responsivity)
    }

    /// SINR seen by the rate expression before the gap is applied.
    pub fn sinr(&self, power: f64, gain: f64, interference: f64) -> f64 {
        self.rate_coefficient(gain, interference) * self.link.sinr_gap * power
    }
}

/// Achievable user rate under IM/DD,
/// `xi B log2(1 + (e / 2 pi) (R H)^2 P / (Gamma (xi^2 sigma^2 + I)))`.
pub fn user_rate(
    power: f64,
    gain: f64,
    interference: f64,
    link: &QamLink,
    p: &OfdmParams,
    n: &NoiseModel,
    responsivity: f64,
) -> f64 {
    let xi = p.utilization();
    let rh = responsivity * gain;
    let sinr = E / (2.0 * PI) * rh * rh * power / (link.sinr_gap * (xi * xi * n.variance() + interference));
    xi * p.bandwidth * (1.0 + sinr).ln() / LN_2
}

/// Real channel matrix between an access point's streams and its users.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub DMatrix<f64>);

impl ChannelMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::InvalidParameter {
                name: "channel",
                reason: "entries must be finite and non-negative".into(),
            });
        }
        Ok(Self(entries))
    }
}

/// Zero-forcing precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub weights: DMatrix<f64>,
    /// Numerical rank is below the number of rows of `H`.
    pub rank_deficient: bool,
}

/// `W = H^+` via the SVD-based Moore-Penrose pseudo-inverse.
pub fn zf_precoder(h: &ChannelMatrix) -> Precoder {
    let m = &h.0;
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = f64::EPSILON * (m.nrows().max(m.ncols()) as f64) * max_sv;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let weights = svd
        .pseudo_inverse(tol.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()));
    Precoder {
        weights,
        rank_deficient: rank < m.nrows(),
    }
}

fn gray_encode(i: usize) -> usize {
    i ^ (i >> 1)
}

fn gray_decode(mut g: usize) -> usize {
    let mut i = g;
    while g > 1 {
        g >>= 1;
        i ^= g;
    }
    i
}

/// Gray-mapped square QAM with unit average symbol energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareQam {
    order: usize,
    bits_per_axis: usize,
    levels: usize,
    scale: f64,
}

impl SquareQam {
    pub fn new(order: usize) -> Result<Self> {
        if !SUPPORTED_ORDERS.contains(&order) {
            return Err(Error::UnsupportedConstellation(order));
        }
        let bits = order.trailing_zeros() as usize;
        let levels = 1usize << (bits / 2);
        Ok(Self {
            order,
            bits_per_axis: bits / 2,
            levels,
            scale: (2.0 * (order as f64 - 1.0) / 3.0).sqrt().recip(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.bits_per_axis
    }

    fn axis_level(&self, bits: &[u8]) -> f64 {
        let g = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        let index = gray_decode(g);
        (2.0 * index as f64 - (self.levels as f64 - 1.0)) * self.scale
    }

    fn axis_bits(&self, value: f64, out: &mut Vec<u8>) {
        let half = (self.levels as f64 - 1.0) / 2.0;
        let index = (value / self.scale / 2.0 + half).round().clamp(0.0, self.levels as f64 - 1.0) as usize;
        let g = gray_encode(index);
        for shift in (0..self.bits_per_axis).rev() {
            out.push(((g >> shift) & 1) as u8);
        }
    }

    pub fn map(&self, bits: &[u8]) -> Complex64 {
        let (i_bits, q_bits) = bits.split_at(self.bits_per_axis);
        Complex64::new(self.axis_level(i_bits), self.axis_level(q_bits))
    }

    pub fn decide(&self, symbol: Complex64, out: &mut Vec<u8>) {
        self.axis_bits(symbol.re, out);
        self.axis_bits(symbol.im, out);
    }
}

/// One transmitted DCO-OFDM frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Biased, clipped real samples `x_op(t)`.
    pub samples: Vec<f64>,
    /// Samples clipped at zero.
    pub clipped: usize,
}

/// Bits carried by one frame.
pub fn frame_bits(order: usize, p: &OfdmParams) -> usize {
    p.data_subcarriers() * order.trailing_zeros() as usize
}

fn hermitian_spectrum(bits: &[u8], qam: &SquareQam, p: &OfdmParams) -> Vec<Complex64> {
    let m = p.fft_size;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); m];
    for (l, chunk) in bits.chunks(qam.bits_per_symbol()).enumerate() {
        let x = qam.map(chunk);
        spectrum[l + 1] = x;
        spectrum[m - l - 1] = x.conj();
    }
    spectrum
}

/// Unbiased time-domain samples `x(t)` with unit average power.
pub fn ofdm_waveform(spectrum: &[Complex64], p: &OfdmParams, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let m = p.fft_size;
    let mut buffer = spectrum.to_vec();
    planner.plan_fft_inverse(m).process(&mut buffer);
    let scale = p.norm_alpha() / (m as f64).sqrt();
    buffer.iter().map(|c| c.re * scale).collect()
}

/// Builds a DCO-OFDM frame: Hermitian QAM loading, inverse FFT, power
/// scaling by `sqrt(P)`, DC bias and clipping at zero.
pub fn modulate_frame(bits: &[u8], order: usize, p: &OfdmParams, tx_power: f64) -> Result<Frame> {
    modulate_with(bits, order, p, tx_power, 1.0, &mut FftPlanner::new())
}

fn modulate_with(
    bits: &[u8],
    order: usize,
    p: &OfdmParams,
    tx_power: f64,
    bias_scale: f64,
    planner: &mut FftPlanner<f64>,
) -> Result<Frame> {
    let qam = SquareQam::new(order)?;
    let expected = frame_bits(order, p);
    if bits.len() != expected {
        return Err(Error::BitCountMismatch {
            expected,
            actual: bits.len(),
        });
    }
    let spectrum = hermitian_spectrum(bits, &qam, p);
    let x = ofdm_waveform(&spectrum, p, planner);
    let amplitude = tx_power.sqrt();
    let bias = p.dc_bias(tx_power) * bias_scale;
    let mut clipped = 0;
    let samples = x
        .into_iter()
        .map(|v| {
            let s = amplitude * v + bias;
            if s < 0.0 {
                clipped += 1;
                0.0
            } else {
                s
            }
        })
        .collect();
    Ok(Frame { samples, clipped })
}

/// Removes the DC bias, applies the forward FFT and takes nearest-neighbour
/// decisions on every data sub-carrier.
///
/// The receiver has no side channel for the transmit power: it reads the DC
/// level of the frame (the bias, since `X_0 = 0`) and infers the signal
/// amplitude as `I_DC / bias_sigmas`.
pub fn demodulate_frame(samples: &[f64], p: &OfdmParams, order: usize) -> Result<Vec<u8>> {
    demodulate_with(samples, p, order, &mut FftPlanner::new())
}

fn demodulate_with(samples: &[f64], p: &OfdmParams, order: usize, planner: &mut FftPlanner<f64>) -> Result<Vec<u8>> {
    let qam = SquareQam::new(order)?;
    let m = p.fft_size;
    if samples.len() != m {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("expected {m} samples, got {}", samples.len()),
        });
    }
    let bias = samples.iter().sum::<f64>() / m as f64;
    if !(bias > 0.0) {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "frame carries no DC level".into(),
        });
    }
    let amplitude = bias / p.bias_sigmas;
    let mut buffer: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s - bias, 0.0)).collect();
    planner.plan_fft_forward(m).process(&mut buffer);
    let scale = 1.0 / ((m as f64).sqrt() * p.norm_alpha() * amplitude);
    let mut bits = Vec::with_capacity(frame_bits(order, p));
    for y in &buffer[1..=p.data_subcarriers()] {
        qam.decide(*y * scale, &mut bits);
    }
    Ok(bits)
}

/// One point of a simulated BER curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
    pub frames: usize,
    pub clipped_fraction: f64,
}

/// Settings of one Monte-Carlo BER curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerRun {
    pub order: usize,
    pub frames: usize,
    pub seed: u64,
    /// Relative error of the transmitter's DC bias, e.g. `0.1` for +10%.
    pub bias_mismatch: f64,
}

impl BerRun {
    pub fn new(order: usize, frames: usize, seed: u64) -> Self {
        Self {
            order,
            frames,
            seed,
            bias_mismatch: 0.0,
        }
    }
}

/// Monte-Carlo BER of the DCO-OFDM chain over AWGN.
///
/// `snr_db` is the per-symbol SNR on a data sub-carrier for a link of unit
/// relative strength. Each entry of `link_weights` scales that SNR for one
/// user (for example `(R H)^2 P` normalised to its mean), and the reported BER
/// averages the users. Every grid point uses its own stream derived from
/// `(seed, grid index)`, so points can be evaluated in parallel.
pub fn simulate_ber_curve(link_weights: &[f64], p: &OfdmParams, snr_grid_db: &[f64], run: &BerRun) -> Result<Vec<BerPoint>> {
    p.validate()?;
    SquareQam::new(run.order)?;
    if run.frames < 1000 {
        return Err(Error::InvalidParameter {
            name: "frames",
            reason: format!("at least 1000 frames per point required, got {}", run.frames),
        });
    }
    if link_weights.is_empty() || link_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "link_weights",
            reason: "need at least one positive finite weight".into(),
        });
    }
    if !(run.bias_mismatch > -1.0 && run.bias_mismatch.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "bias_mismatch",
            reason: format!("must be finite and > -1, got {}", run.bias_mismatch),
        });
    }
    snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(index, &snr_db)| {
            let seed = derive_seed(run.seed, "phy.ber", index as u64, run.order as u64);
            ber_point(link_weights, p, snr_db, run, seed)
        })
        .collect()
}

/// True when the highest-SNR point still shows bit errors.
pub fn has_error_floor(points: &[BerPoint]) -> bool {
    points
        .iter()
        .max_by(|a, b| a.snr_db.total_cmp(&b.snr_db))
        .is_some_and(|p| p.errors > 0)
}

fn ber_point(weights: &[f64], p: &OfdmParams, snr_db: f64, run: &BerRun, seed: u64) -> Result<BerPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let order = run.order;
    let nbits = frame_bits(order, p);
    let tx_power = 1.0;
    let snr = 10f64.powf(snr_db / 10.0);
    let m = p.fft_size as f64;
    let alpha = p.norm_alpha();
    let mut errors = 0u64;
    let mut bits_total = 0u64;
    let mut clipped = 0usize;
    let mut bits = vec![0u8; nbits];
    for frame_index in 0..run.frames {
        let weight = weights[frame_index % weights.len()];
        // A unit symbol on a sub-carrier arrives with energy alpha^2 P after the
        // unitary FFT, while time-domain noise of variance s^2 gives s^2 per bin.
        let sigma = (alpha * alpha * tx_power / (snr * weight)).sqrt();
        for b in bits.iter_mut() {
            *b = rng.random::<bool>() as u8;
        }
        let frame = modulate_with(&bits, order, p, tx_power, 1.0 + run.bias_mismatch, &mut planner)?;
        clipped += frame.clipped;
        let noisy: Vec<f64> = frame
            .samples
            .iter()
            .map(|&s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s + sigma * z
            })
            .collect();
        // Noise can pull the DC level of a very weak frame below zero; the
        // receiver then has no amplitude reference and its decisions are guesses.
        let decided = if noisy.iter().sum::<f64>() > 0.0 {
            demodulate_with(&noisy, p, order, &mut planner)?
        } else {
            (0..nbits).map(|_| rng.random::<bool>() as u8).collect()
        };
        errors += bits.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64;
        bits_total += nbits as u64;
    }
    Ok(BerPoint {
        snr_db,
        ber: errors as f64 / bits_total as f64,
        bits: bits_total,
        errors,
        frames: run.frames,
        clipped_fraction: clipped as f64 / (run.frames as f64 * m),
    })
}
