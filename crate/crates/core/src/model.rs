//! Closed-form intensity statistics of bright two-mode squeezed light.
//!
//! All noise figures are expressed in shot-noise units: a coherent beam of
//! the same mean power has relative variance 1 (0 dB). The model works in the
//! bright-seed limit, where the vacuum-seeded `sinh²s·cosh²s` contribution to
//! each mode's photon-number variance is negligible next to the seeded terms.
//! Losses follow the beam-splitter model: a beam with transmission `η` keeps
//! `η` of its mean photon number and picks up `η(1-η)·n` of partition noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power ratio to decibels.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Decibels to power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physics configuration of the seeded four-wave-mixing source and detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqueezeParams {
    /// Gain `G = cosh²s` of the amplifier, at least 1.
    pub gain: f64,
    /// Mean seed photon number `|α|²`; only scales the reported means.
    pub seed_power: f64,
    /// Probe transmission, optical and detection losses included.
    pub eta_probe: f64,
    /// Conjugate transmission.
    pub eta_conj: f64,
    /// Electronic noise variance per detector, shot-noise units.
    #[serde(default)]
    pub electronic_var: f64,
    /// Uncorrelated classical excess noise per beam, shot-noise units.
    #[serde(default)]
    pub excess_classical_var: f64,
}

impl Default for SqueezeParams {
    fn default() -> Self {
        Self {
            gain: 11.5,
            seed_power: 1e6,
            eta_probe: 0.78,
            eta_conj: 0.78,
            electronic_var: 0.0,
            excess_classical_var: 0.0,
        }
    }
}

impl SqueezeParams {
    /// Lossless, noiseless source with the given gain.
    pub fn lossless(gain: f64) -> Self {
        Self {
            gain,
            eta_probe: 1.0,
            eta_conj: 1.0,
            ..Self::default()
        }
    }

    pub fn with_transmission(mut self, eta_probe: f64, eta_conj: f64) -> Self {
        self.eta_probe = eta_probe;
        self.eta_conj = eta_conj;
        self
    }

    pub fn with_classical_noise(mut self, electronic_var: f64, excess_classical_var: f64) -> Self {
        self.electronic_var = electronic_var;
        self.excess_classical_var = excess_classical_var;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain >= 1.0) {
            return Err(Error::Config(format!(
                "gain must be finite and >= 1, got {}",
                self.gain
            )));
        }
        if !(self.seed_power.is_finite() && self.seed_power > 0.0) {
            return Err(Error::Config(format!(
                "seed_power must be positive, got {}",
                self.seed_power
            )));
        }
        for (name, eta) in [("eta_probe", self.eta_probe), ("eta_conj", self.eta_conj)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        for (name, var) in [
            ("electronic_var", self.electronic_var),
            ("excess_classical_var", self.excess_classical_var),
        ] {
            if !(var.is_finite() && var >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {var}")));
            }
        }
        Ok(())
    }

    /// Squeeze degree `s` with `cosh²s = G`.
    pub fn squeeze_degree(&self) -> f64 {
        self.gain.sqrt().acosh()
    }
}

/// Relative intensity noise figures (linear, shot-noise units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFigures {
    pub probe_rel: f64,
    pub conj_rel: f64,
    /// Intensity-difference noise; absent when no light reaches either detector.
    pub diff_rel: Option<f64>,
}

impl NoiseFigures {
    pub fn probe_db(&self) -> f64 {
        to_db(self.probe_rel)
    }

    pub fn conj_db(&self) -> f64 {
        to_db(self.conj_rel)
    }

    pub fn diff_db(&self) -> Option<f64> {
        self.diff_rel.map(to_db)
    }
}

/// Mean detected photon numbers `(n_probe, n_conj)` after losses.
pub fn mean_photons(p: &SqueezeParams) -> (f64, f64) {
    let n_a = p.eta_probe * p.seed_power * p.gain;
    let n_b = p.eta_conj * p.seed_power * (p.gain - 1.0);
    (n_a, n_b)
}

/// Individual beam noise relative to shot noise, classical knobs included.
///
/// The probe figure is `1 + 2η_a(G-1) + ν + ε`; at unit transmission and no
/// classical noise both beams sit at `2G - 1`.
pub fn individual_noise(p: &SqueezeParams) -> NoiseFigures {
    let classical = p.excess_classical_var + p.electronic_var;
    let probe_rel = 1.0 + 2.0 * p.eta_probe * (p.gain - 1.0) + classical;
    let conj_rel = 1.0 + 2.0 * p.eta_conj * (p.gain - 1.0) + classical;
    NoiseFigures {
        probe_rel,
        conj_rel,
        diff_rel: lossy_diff_noise(p).ok(),
    }
}

/// Intensity-difference noise of a lossless two-mode squeezed state, `1/(2G-1)`.
pub fn ideal_diff_noise(gain: f64) -> f64 {
    1.0 / (2.0 * gain - 1.0)
}

/// Intensity-difference noise with per-beam losses (optical only).
pub fn lossy_diff_noise(p: &SqueezeParams) -> Result<f64> {
    let (g, ea, eb) = (p.gain, p.eta_probe, p.eta_conj);
    let denom = g * ea + (g - 1.0) * eb;
    if ea == 0.0 && eb == 0.0 {
        return Err(Error::Config(
            "intensity-difference noise undefined with zero transmission on both beams".into(),
        ));
    }
    if denom == 0.0 {
        // G = 1 with a dark probe: only the (empty) conjugate port remains.
        return Ok(1.0);
    }
    Ok(1.0 + 2.0 * (g - 1.0) * (g * (ea - eb).powi(2) - eb * eb) / denom)
}

/// Joint fluctuation statistics of the two detected beams.
///
/// `cov` is normalized per beam to that beam's own shot noise, so a coherent
/// pair with no classical noise gives the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub cov: [[f64; 2]; 2],
    /// Electronic noise variance already included on the diagonal.
    pub electronic_var: f64,
}

impl NoiseModel {
    /// Pearson correlation between the two beams.
    pub fn correlation(&self) -> f64 {
        let [[aa, ab], [_, bb]] = self.cov;
        if ab == 0.0 {
            return 0.0;
        }
        ab / (aa * bb).sqrt()
    }

    /// Difference noise `Var(n_a - n_b) / (⟨n_a⟩ + ⟨n_b⟩)` reconstructed from
    /// the per-beam normalized covariance and the beams' mean photon numbers.
    pub fn difference_noise(&self, mean_a: f64, mean_b: f64) -> f64 {
        let [[aa, ab], [_, bb]] = self.cov;
        (mean_a * aa + mean_b * bb - 2.0 * (mean_a * mean_b).sqrt() * ab) / (mean_a + mean_b)
    }

    pub fn determinant(&self) -> f64 {
        let [[aa, ab], [ba, bb]] = self.cov;
        aa * bb - ab * ba
    }
}

/// Normalized covariance of probe/conjugate fluctuations including classical noise.
pub fn covariance_matrix(p: &SqueezeParams) -> Result<NoiseModel> {
    p.validate()?;
    let classical = p.excess_classical_var + p.electronic_var;
    let aa = 1.0 + 2.0 * p.eta_probe * (p.gain - 1.0) + classical;
    let bb = 1.0 + 2.0 * p.eta_conj * (p.gain - 1.0) + classical;
    let ab = 2.0 * (p.eta_probe * p.eta_conj * p.gain * (p.gain - 1.0)).sqrt();
    let model = NoiseModel {
        cov: [[aa, ab], [ab, bb]],
        electronic_var: p.electronic_var,
    };
    // Without classical noise det = 1 + 2(G-1)(ηa(1-ηb) + ηb(1-ηa)) >= 1.
    assert!(
        model.determinant() >= -1e-9 * aa * bb,
        "covariance not positive semidefinite for {p:?}"
    );
    Ok(model)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn reference(eta: f64) -> SqueezeParams {
        SqueezeParams {
            gain: 11.5,
            seed_power: 1.0,
            ..SqueezeParams::lossless(11.5)
        }
        .with_transmission(eta, eta)
    }

    #[test]
    fn squeeze_degree_recovers_gain() {
        for g in [1.0, 1.5, 11.5, 400.0] {
            let s = SqueezeParams::lossless(g).squeeze_degree();
            assert_relative_eq!(s.cosh().powi(2), g, max_relative = 1e-12);
        }
    }

    #[test]
    fn mean_photons_examples() {
        let p = SqueezeParams {
            seed_power: 100.0,
            ..SqueezeParams::lossless(1.0)
        };
        assert_eq!(mean_photons(&p), (100.0, 0.0));
        let (a, b) = mean_photons(&reference(1.0));
        assert_relative_eq!(a, 11.5);
        assert_relative_eq!(b, 10.5);
        let (a, b) = mean_photons(&reference(0.78));
        assert_relative_eq!(a, 8.97, epsilon = 1e-12);
        assert_relative_eq!(b, 8.19, epsilon = 1e-12);
    }

    #[test]
    fn individual_noise_examples() {
        let f = individual_noise(&reference(1.0));
        assert_relative_eq!(f.probe_rel, 22.0);
        assert!((f.probe_db() - 13.42).abs() < 0.005);
        let f = individual_noise(&reference(0.78));
        assert_relative_eq!(f.probe_rel, 17.38, epsilon = 1e-12);
        assert!((f.probe_db() - 12.40).abs() < 0.005);
        for eta in [0.0, 0.3, 1.0] {
            let f = individual_noise(&SqueezeParams::lossless(1.0).with_transmission(eta, eta));
            assert_eq!(f.probe_rel, 1.0);
            assert_eq!(f.conj_rel, 1.0);
        }
    }

    #[test]
    fn single_beam_limits_of_lossy_formula_match_individual_noise() {
        let p = reference(0.78);
        let probe_only = lossy_diff_noise(&p.with_transmission(0.78, 0.0)).unwrap();
        let conj_only = lossy_diff_noise(&p.with_transmission(0.0, 0.78)).unwrap();
        assert_relative_eq!(probe_only, 17.38, epsilon = 1e-12);
        assert_relative_eq!(conj_only, 17.38, epsilon = 1e-12);
    }

    #[test]
    fn ideal_diff_examples() {
        assert_eq!(ideal_diff_noise(1.0), 1.0);
        assert!((ideal_diff_noise(11.5) - 0.04545).abs() < 1e-5);
        assert!((to_db(ideal_diff_noise(11.5)) + 13.42).abs() < 0.005);
        let mut last = ideal_diff_noise(1.0);
        for g in (2..200).map(f64::from) {
            let r = ideal_diff_noise(g);
            assert!(r < last && r > 0.0);
            last = r;
        }
    }

    #[test]
    fn lossy_diff_examples() {
        let r = lossy_diff_noise(&reference(0.78)).unwrap();
        assert!((r - 0.2555).abs() < 1e-4);
        assert!((to_db(r) + 5.93).abs() < 0.005);
        assert_relative_eq!(
            lossy_diff_noise(&reference(1.0)).unwrap(),
            ideal_diff_noise(11.5),
            max_relative = 1e-12
        );
        for (ea, eb) in [(0.1, 0.9), (1.0, 0.0), (0.0, 0.4), (0.5, 0.5)] {
            let p = SqueezeParams::lossless(1.0).with_transmission(ea, eb);
            assert_relative_eq!(lossy_diff_noise(&p).unwrap(), 1.0);
        }
        let dark = reference(0.0);
        assert!(matches!(lossy_diff_noise(&dark), Err(Error::Config(_))));
    }

    #[test]
    fn covariance_examples() {
        let m = covariance_matrix(&reference(0.78)).unwrap();
        assert_relative_eq!(m.cov[0][0], 17.38, epsilon = 1e-12);
        assert_relative_eq!(m.cov[1][1], 17.38, epsilon = 1e-12);
        assert!((m.cov[0][1] - 17.14).abs() < 0.005);
        assert!((m.correlation() - 0.986).abs() < 5e-4);

        let m = covariance_matrix(&reference(0.78).with_classical_noise(0.53, 0.0)).unwrap();
        assert!((m.correlation() - 0.957).abs() < 5e-4);

        let m = covariance_matrix(&SqueezeParams::lossless(1.0).with_classical_noise(0.2, 0.3)).unwrap();
        assert_eq!(m.cov, [[1.5, 0.0], [0.0, 1.5]]);
    }

    #[test]
    fn covariance_rejects_bad_params() {
        let bad = SqueezeParams {
            gain: 0.5,
            ..SqueezeParams::default()
        };
        assert!(matches!(covariance_matrix(&bad), Err(Error::Config(_))));
        let bad = SqueezeParams::default().with_transmission(1.2, 0.5);
        assert!(covariance_matrix(&bad).is_err());
        let bad = SqueezeParams::default().with_classical_noise(-0.1, 0.0);
        assert!(covariance_matrix(&bad).is_err());
    }

    #[test]
    fn equal_transmission_closed_form() {
        for (g, eta) in [(11.5, 0.78), (3.0, 0.5), (30.0, 0.95)] {
            let p = SqueezeParams::lossless(g).with_transmission(eta, eta);
            let expected = 1.0 - 2.0 * eta * (g - 1.0) / (2.0 * g - 1.0);
            assert_relative_eq!(lossy_diff_noise(&p).unwrap(), expected, max_relative = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn covariance_matches_lossy_formula(
            g in 1.0f64..30.0, ea in 0.05f64..=1.0, eb in 0.05f64..=1.0,
        ) {
            let p = SqueezeParams::lossless(g).with_transmission(ea, eb);
            let m = covariance_matrix(&p).unwrap();
            let (na, nb) = mean_photons(&p);
            let via_cov = m.difference_noise(na, nb);
            let direct = lossy_diff_noise(&p).unwrap();
            prop_assert!((via_cov - direct).abs() <= 1e-9 * direct.abs());
        }

        #[test]
        fn individual_noise_swaps_with_transmissions(
            g in 1.0f64..30.0, ea in 0.0f64..=1.0, eb in 0.0f64..=1.0,
        ) {
            let f = individual_noise(&SqueezeParams::lossless(g).with_transmission(ea, eb));
            let s = individual_noise(&SqueezeParams::lossless(g).with_transmission(eb, ea));
            prop_assert_eq!(f.probe_rel, s.conj_rel);
            prop_assert_eq!(f.conj_rel, s.probe_rel);
        }

        #[test]
        fn lossy_diff_monotone(g in 1.05f64..30.0, eta in 0.05f64..0.95, step in 0.001f64..0.05) {
            let at = |g: f64, e: f64| lossy_diff_noise(&SqueezeParams::lossless(g).with_transmission(e, e)).unwrap();
            prop_assert!(at(g, eta + step) < at(g, eta));
            prop_assert!(at(g + step * 10.0, eta) < at(g, eta));
        }

        #[test]
        fn db_round_trip(x in -60.0f64..60.0) {
            prop_assert!((to_db(from_db(x)) - x).abs() <= 1e-12);
        }

        #[test]
        fn correlation_bounded(
            g in 1.0f64..1e4, ea in 0.0f64..=1.0, eb in 0.0f64..=1.0,
            eps in 0.0f64..2.0, nu in 0.0f64..2.0,
        ) {
            let p = SqueezeParams::lossless(g).with_transmission(ea, eb).with_classical_noise(eps, nu);
            let rho = covariance_matrix(&p).unwrap().correlation();
            prop_assert!((0.0..1.0).contains(&rho), "rho = {rho}");
        }
    }
}
