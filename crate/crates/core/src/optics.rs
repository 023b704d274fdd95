//! VCSEL Gaussian-beam optics and line-of-sight DC channel gains.
//!
//! Every access point is a ceiling-mounted `Lc x Lc` array of VCSELs, each
//! behind a micro-lens and pointing straight down. A user carries an angle
//! diversity receiver: several photodiodes with distinct normals, each behind
//! a concentrator with a hard acceptance cutoff.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, Error, Result};

/// Tolerance below which the lens waist-location denominator is treated as zero.
pub const LENS_DENOMINATOR_TOL: f64 = 1e-30;

/// Smallest enclosure factor accepted by [`eye_safe_power`].
pub const ETA_FLOOR: f64 = 1e-12;

/// Emitter parameters of a single VCSEL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcselParams {
    /// Beam waist radius at the emitter (m).
    pub beam_waist: f64,
    /// Free-space wavelength (m).
    pub wavelength: f64,
    /// Refractive index of the propagation medium.
    pub medium_index: f64,
    /// Optical output power (W).
    pub emit_power: f64,
}

impl VcselParams {
    pub fn new(beam_waist: f64, wavelength: f64, medium_index: f64, emit_power: f64) -> Result<Self> {
        let v = Self {
            beam_waist,
            wavelength,
            medium_index,
            emit_power,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("beam_waist", self.beam_waist)?;
        ensure_positive("wavelength", self.wavelength)?;
        ensure_positive("medium_index", self.medium_index)?;
        ensure_positive("emit_power", self.emit_power)
    }

    /// Far-field half-angle divergence of the fundamental mode.
    pub fn divergence(&self) -> f64 {
        self.wavelength / (PI * self.beam_waist * self.medium_index)
    }
}

/// Thin micro-lens in front of a VCSEL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensParams {
    /// Focal length (m).
    pub focal_length: f64,
    /// Distance from the VCSEL waist to the lens (m).
    pub vcsel_to_lens: f64,
}

impl LensParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("focal_length", self.focal_length)?;
        ensure_non_negative("vcsel_to_lens", self.vcsel_to_lens)
    }
}

/// Beam geometry after the micro-lens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedBeam {
    /// New minimum waist `w_d` (m).
    pub new_waist: f64,
    /// Distance of the new waist behind the lens (m).
    pub waist_location: f64,
    /// Far-field divergence after the lens (rad).
    pub divergence: f64,
    /// Magnification `k = w_d / w0`.
    pub magnification: f64,
    /// Rayleigh range of the transformed beam (m).
    pub rayleigh_range: f64,
}

impl TransformedBeam {
    /// Beam radius of the transformed beam at axial distance `z` from the array.
    pub fn radius_at(&self, z: f64) -> f64 {
        beam_radius(self.new_waist, z, self.rayleigh_range)
    }
}

/// Rayleigh range `z_R = pi w0^2 n / lambda`.
pub fn rayleigh_range(v: &VcselParams) -> f64 {
    PI * v.beam_waist * v.beam_waist * v.medium_index / v.wavelength
}

/// Gaussian beam radius `w(z) = w0 sqrt(1 + (z / z_R)^2)`.
pub fn beam_radius(w0: f64, z: f64, z_r: f64) -> f64 {
    let ratio = z / z_r;
    w0 * (1.0 + ratio * ratio).sqrt()
}

/// Waist location and waist radius behind a thin lens.
///
/// `d2` follows the closed form in terms of `1/f`, `d1` and `lambda/(pi w0^2)`;
/// the new waist is evaluated from `d2` with the same quantities. Both are
/// written with the Rayleigh range so the medium index enters consistently.
pub fn lens_transform(v: &VcselParams, l: &LensParams) -> Result<TransformedBeam> {
    v.validate()?;
    l.validate()?;
    let f = l.focal_length;
    let d1 = l.vcsel_to_lens;
    let z_r = rayleigh_range(v);
    // (lambda / (pi w0^2 n))^2
    let c = 1.0 / (z_r * z_r);
    let shift = 1.0 - d1 / f;

    let denominator = 1.0 / (f * f) + shift * shift * c;
    if !(denominator.abs() >= LENS_DENOMINATOR_TOL) {
        return Err(Error::DegenerateLens { denominator });
    }
    let d2 = (1.0 / f - shift * d1 * c) / denominator;

    let image_shift = 1.0 - d2 / f;
    let wd = (v.beam_waist * f / z_r) / (1.0 + image_shift * image_shift * f * f * c).sqrt();

    let k = wd / v.beam_waist;
    let new_zr = PI * wd * wd * v.medium_index / v.wavelength;
    Ok(TransformedBeam {
        new_waist: wd,
        waist_location: d2,
        divergence: v.divergence() / k,
        magnification: k,
        rayleigh_range: new_zr,
    })
}

/// Power of a Gaussian beam enclosed in a disc of radius `r0`.
pub fn enclosed_power(p_out: f64, r0: f64, w_at_z: f64) -> f64 {
    p_out * (1.0 - (-2.0 * r0 * r0 / (w_at_z * w_at_z)).exp())
}

/// Eye-safety inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeSafetyParams {
    /// Maximum permissible exposure (W/m^2).
    pub mpe: f64,
    /// Radius of the dilated pupil (m).
    pub pupil_radius: f64,
    /// Distance of the most hazardous position from the emitter (m).
    pub mhp_distance: f64,
}

impl EyeSafetyParams {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("mpe", self.mpe)?;
        ensure_positive("mhp_distance", self.mhp_distance)?;
        if !(1e-3..=7e-3).contains(&self.pupil_radius) {
            return Err(Error::InvalidParameter {
                name: "pupil_radius",
                reason: format!("must lie in [1e-3, 7e-3] m, got {}", self.pupil_radius),
            });
        }
        Ok(())
    }
}

/// Fraction of the beam entering the pupil at the most hazardous position.
///
/// Uses the far-field radius `lambda * MHP / (pi w0 n)`, so the factor is the
/// enclosed-power fraction of a disc of radius `r_p` at that distance.
pub fn eye_enclosure_factor(e: &EyeSafetyParams, v: &VcselParams) -> f64 {
    let w_far = v.wavelength * e.mhp_distance / (PI * v.beam_waist * v.medium_index);
    1.0 - (-2.0 * e.pupil_radius * e.pupil_radius / (w_far * w_far)).exp()
}

/// Maximum eye-safe emitted power per VCSEL, `MPE * pi r_p^2 / eta`.
pub fn eye_safe_power(e: &EyeSafetyParams, v: &VcselParams) -> Result<f64> {
    e.validate()?;
    v.validate()?;
    let eta = eye_enclosure_factor(e, v);
    if !(eta >= ETA_FLOOR) {
        return Err(Error::EtaUnderflow { eta });
    }
    Ok(e.mpe * PI * e.pupil_radius * e.pupil_radius / eta)
}

/// A ceiling-mounted VCSEL array.
#[derive(Debug, Clone, PartialEq)]
pub struct ApGeometry {
    /// Array centre (m).
    pub position: Vector3<f64>,
    /// Elements per side.
    pub array_side: usize,
    /// Optical power per VCSEL (W).
    pub per_vcsel_power: f64,
    /// Lateral offset of every element from the array centre (m).
    pub element_offsets: Vec<[f64; 2]>,
}

impl ApGeometry {
    /// Square `side x side` array on a uniform grid with the given pitch.
    pub fn uniform_grid(position: Vector3<f64>, side: usize, pitch: f64, per_vcsel_power: f64) -> Self {
        let centre = (side as f64 - 1.0) / 2.0;
        let element_offsets = (0..side)
            .flat_map(|row| {
                (0..side).map(move |col| [(col as f64 - centre) * pitch, (row as f64 - centre) * pitch])
            })
            .collect();
        Self {
            position,
            array_side: side,
            per_vcsel_power,
            element_offsets,
        }
    }

    pub fn element_count(&self) -> usize {
        self.element_offsets.len()
    }

    pub fn element_position(&self, index: usize) -> Vector3<f64> {
        let [dx, dy] = self.element_offsets[index];
        self.position + Vector3::new(dx, dy, 0.0)
    }

    /// Total optical power of the array.
    pub fn total_power(&self) -> f64 {
        self.element_count() as f64 * self.per_vcsel_power
    }

    pub fn validate(&self, eye_safe_cap: f64) -> Result<()> {
        if self.element_offsets.len() != self.array_side * self.array_side {
            return Err(Error::InvalidParameter {
                name: "element_offsets",
                reason: format!(
                    "expected {} elements, got {}",
                    self.array_side * self.array_side,
                    self.element_offsets.len()
                ),
            });
        }
        ensure_positive("per_vcsel_power", self.per_vcsel_power)?;
        if self.per_vcsel_power > eye_safe_cap {
            return Err(Error::InvalidParameter {
                name: "per_vcsel_power",
                reason: format!("{} W exceeds the eye-safe cap {} W", self.per_vcsel_power, eye_safe_cap),
            });
        }
        Ok(())
    }
}

/// Angle diversity receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverGeometry {
    pub position: Vector3<f64>,
    /// Unit normal of each photodiode.
    pub pd_orientations: Vec<Vector3<f64>>,
    /// Effective active-area fraction.
    pub active_area: f64,
    /// Concentrator gain.
    pub concentrator_gain: f64,
    /// Concentrator acceptance half-angle (rad).
    pub acceptance_angle: f64,
    /// Photodiode responsivity (A/W).
    pub responsivity: f64,
}

impl ReceiverGeometry {
    /// One upward photodiode plus `side_count` photodiodes tilted by `tilt`
    /// from the vertical at evenly spaced azimuths.
    pub fn adr_orientations(side_count: usize, tilt: f64) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::new(0.0, 0.0, 1.0)];
        for i in 0..side_count {
            let azimuth = 2.0 * PI * i as f64 / side_count as f64;
            normals.push(Vector3::new(
                tilt.sin() * azimuth.cos(),
                tilt.sin() * azimuth.sin(),
                tilt.cos(),
            ));
        }
        normals
    }

    pub fn pd_count(&self) -> usize {
        self.pd_orientations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pd_orientations.is_empty() {
            return Err(Error::InvalidParameter {
                name: "pd_orientations",
                reason: "at least one photodiode required".into(),
            });
        }
        if !(self.active_area > 0.0 && self.active_area <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "active_area",
                reason: format!("must lie in (0, 1], got {}", self.active_area),
            });
        }
        if !(self.concentrator_gain >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "concentrator_gain",
                reason: format!("must be >= 1, got {}", self.concentrator_gain),
            });
        }
        if !(self.acceptance_angle > 0.0 && self.acceptance_angle <= PI / 2.0) {
            return Err(Error::InvalidParameter {
                name: "acceptance_angle",
                reason: format!("must lie in (0, pi/2], got {}", self.acceptance_angle),
            });
        }
        ensure_positive("responsivity", self.responsivity)
    }
}

/// DC gain between one VCSEL element and one photodiode.
///
/// The beam points straight down. The beam radius is evaluated at the axial
/// distance `d cos(phi)`; outside the concentrator acceptance cone the gain is
/// exactly zero.
pub fn element_channel_gain(
    ap: &ApGeometry,
    element_index: usize,
    rx: &ReceiverGeometry,
    pd_index: usize,
    beam: &TransformedBeam,
) -> f64 {
    let source = ap.element_position(element_index);
    let to_source = source - rx.position;
    let d = to_source.norm();
    if d == 0.0 {
        return 0.0;
    }
    let cos_psi = rx.pd_orientations[pd_index].dot(&to_source) / d;
    if cos_psi <= 0.0 {
        return 0.0;
    }
    let psi = cos_psi.min(1.0).acos();
    if psi > rx.acceptance_angle {
        return 0.0;
    }
    // Angle between the downward beam axis and the ray towards the receiver.
    let axial = to_source.z;
    if axial <= 0.0 {
        return 0.0;
    }
    let cos_phi = axial / d;
    let lateral_sq = (d * d - axial * axial).max(0.0); // d^2 sin^2(phi)
    let w = beam.radius_at(d * cos_phi);
    let w_sq = w * w;
    let n_pd = rx.pd_count() as f64;
    2.0 * n_pd * rx.active_area * rx.concentrator_gain / (PI * w_sq)
        * (-2.0 * lateral_sq / w_sq).exp()
        * cos_psi
}

/// Sum of element gains over every photodiode and every VCSEL element.
pub fn aggregate_gain(ap: &ApGeometry, rx: &ReceiverGeometry, beam: &TransformedBeam) -> f64 {
    (0..rx.pd_count())
        .map(|pd| {
            (0..ap.element_count())
                .map(|i| element_channel_gain(ap, i, rx, pd, beam))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vcsel() -> VcselParams {
        VcselParams::new(5e-6, 1550e-9, 1.0, 50e-3).unwrap()
    }

    fn receiver_at(position: Vector3<f64>, normals: Vec<Vector3<f64>>) -> ReceiverGeometry {
        ReceiverGeometry {
            position,
            pd_orientations: normals,
            active_area: 0.5,
            concentrator_gain: 2.0,
            acceptance_angle: 30f64.to_radians(),
            responsivity: 0.7,
        }
    }

    fn single_element_ap() -> ApGeometry {
        ApGeometry::uniform_grid(Vector3::new(0.0, 0.0, 3.0), 1, 0.0, 0.05)
    }

    fn test_beam() -> TransformedBeam {
        lens_transform(
            &vcsel(),
            &LensParams {
                focal_length: 12.5e-6,
                vcsel_to_lens: 12.5e-6,
            },
        )
        .unwrap()
    }

    #[test]
    fn rayleigh_range_values() {
        let v = vcsel();
        let expected = PI * 25e-12 / 1550e-9;
        assert_relative_eq!(rayleigh_range(&v), expected, max_relative = 1e-12);
        assert_relative_eq!(rayleigh_range(&v), 5.0671e-5, max_relative = 1e-4);
        let wide = VcselParams { beam_waist: 10e-6, ..v };
        assert_relative_eq!(rayleigh_range(&wide), 4.0 * rayleigh_range(&v), max_relative = 1e-12);
        let red = VcselParams { wavelength: 3100e-9, ..v };
        assert_relative_eq!(rayleigh_range(&red), 0.5 * rayleigh_range(&v), max_relative = 1e-12);
    }

    #[test]
    fn beam_radius_values() {
        let zr = rayleigh_range(&vcsel());
        assert_eq!(beam_radius(5e-6, 0.0, zr), 5e-6);
        assert_relative_eq!(beam_radius(5e-6, zr, zr), 5e-6 * 2f64.sqrt(), max_relative = 1e-12);
        let w = beam_radius(5e-6, 2.0, 5.067e-5);
        assert_relative_eq!(w, 0.1974, max_relative = 1e-3);
        // far-field asymptote
        assert_relative_eq!(w, 5e-6 * 2.0 / 5.067e-5, max_relative = 1e-6);
    }

    #[test]
    fn lens_divergence_scales_with_magnification() {
        let v = vcsel();
        let beam = test_beam();
        assert_relative_eq!(beam.divergence * beam.magnification, v.divergence(), max_relative = 1e-12);
        assert_relative_eq!(beam.magnification, beam.new_waist / v.beam_waist, max_relative = 1e-15);
    }

    #[test]
    fn collimated_limit_places_waist_at_focus() {
        let v = VcselParams::new(5e-3, 1550e-9, 1.0, 1.0).unwrap();
        let f = 0.01;
        let beam = lens_transform(
            &v,
            &LensParams {
                focal_length: f,
                vcsel_to_lens: f,
            },
        )
        .unwrap();
        assert_relative_eq!(beam.waist_location, f, max_relative = 1e-9);
    }

    #[test]
    fn enclosed_power_limits() {
        assert_relative_eq!(enclosed_power(1.0, 0.3, 0.3), 1.0 - (-2f64).exp(), max_relative = 1e-12);
        assert_eq!(enclosed_power(2.0, 0.0, 0.3), 0.0);
        assert!((enclosed_power(1.0, 3.0, 0.3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eye_safe_power_unit_enclosure() {
        let e = EyeSafetyParams {
            mpe: 1000.0,
            pupil_radius: 3.5e-3,
            mhp_distance: 1e-5,
        };
        let p = eye_safe_power(&e, &vcsel()).unwrap();
        assert_relative_eq!(p, 1000.0 * PI * 3.5e-3 * 3.5e-3, max_relative = 1e-12);
    }

    #[test]
    fn eye_safe_power_underflow() {
        let e = EyeSafetyParams {
            mpe: 1000.0,
            pupil_radius: 1e-3,
            mhp_distance: 1e6,
        };
        assert!(matches!(eye_safe_power(&e, &vcsel()), Err(Error::EtaUnderflow { .. })));
    }

    #[test]
    fn on_axis_gain_collapses() {
        let ap = single_element_ap();
        let rx = receiver_at(Vector3::new(0.0, 0.0, 1.0), vec![Vector3::z()]);
        let beam = test_beam();
        let w = beam.radius_at(2.0);
        let expected = 2.0 * 1.0 * 0.5 * 2.0 / (PI * w * w);
        assert_relative_eq!(element_channel_gain(&ap, 0, &rx, 0, &beam), expected, max_relative = 1e-12);
    }

    #[test]
    fn gain_zero_outside_acceptance() {
        let ap = single_element_ap();
        let beam = test_beam();
        let psi = 30f64.to_radians() + 0.01;
        let tilted = Vector3::new(psi.sin(), 0.0, psi.cos());
        let rx = receiver_at(Vector3::new(0.0, 0.0, 1.0), vec![tilted]);
        assert_eq!(element_channel_gain(&ap, 0, &rx, 0, &beam), 0.0);
        let inside = 30f64.to_radians() - 0.01;
        let rx = receiver_at(Vector3::new(0.0, 0.0, 1.0), vec![Vector3::new(inside.sin(), 0.0, inside.cos())]);
        assert!(element_channel_gain(&ap, 0, &rx, 0, &beam) > 0.0);
    }

    #[test]
    fn gain_is_axially_symmetric() {
        let ap = single_element_ap();
        let beam = test_beam();
        let up = vec![Vector3::z()];
        let a = aggregate_gain(&ap, &receiver_at(Vector3::new(0.4, -0.2, 1.0), up.clone()), &beam);
        let b = aggregate_gain(&ap, &receiver_at(Vector3::new(-0.4, 0.2, 1.0), up), &beam);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn aggregate_of_single_pair_is_element_gain() {
        let ap = single_element_ap();
        let beam = test_beam();
        let rx = receiver_at(Vector3::new(0.3, 0.1, 1.0), vec![Vector3::z()]);
        assert_eq!(aggregate_gain(&ap, &rx, &beam), element_channel_gain(&ap, 0, &rx, 0, &beam));
    }

    #[test]
    fn uniform_grid_layout() {
        let ap = ApGeometry::uniform_grid(Vector3::new(1.0, 1.0, 3.0), 5, 300e-6, 0.05);
        assert_eq!(ap.element_count(), 25);
        assert_relative_eq!(ap.total_power(), 1.25, max_relative = 1e-12);
        let mean_x: f64 = ap.element_offsets.iter().map(|o| o[0]).sum::<f64>() / 25.0;
        assert!(mean_x.abs() < 1e-18);
        assert!(ap.validate(0.05).is_ok());
        assert!(ap.validate(0.04).is_err());
    }
}
