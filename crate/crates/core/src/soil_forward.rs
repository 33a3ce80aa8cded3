//! Synthetic soil forward model.
//!
//! Maps a six-component composition to the observable sensing vector: bulk
//! relative permittivity plus seven VNIR photodiode voltages. Permittivity is
//! built on the inverted moisture law `M = 0.1138·√ε − 0.1758` with additive
//! carbon and aluminosilicate terms. Each VNIR band is affine in the
//! composition with one dominant slope and small cross terms, clamped to the
//! photodiode range.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the moisture law `M = MOISTURE_SLOPE·√ε + MOISTURE_OFFSET`.
pub const MOISTURE_SLOPE: f64 = 0.1138;
pub const MOISTURE_OFFSET: f64 = -0.1758;

/// Permittivity added per percent of organic carbon.
pub const EPS_PER_CARBON_PCT: f64 = 0.16;
/// Permittivity added per percent of aluminosilicate.
pub const EPS_PER_AL_PCT: f64 = 0.8;

pub const VNIR_MAX_VOLTS: f64 = 0.5;

/// VNIR wavelengths in nanometres, in sensing-vector order.
pub const VNIR_BANDS_NM: [u32; 7] = [460, 620, 1200, 1300, 1450, 1550, 1650];

/// Soil components in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    M,
    N,
    P,
    K,
    C,
    Al,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::M,
        Component::N,
        Component::P,
        Component::K,
        Component::C,
        Component::Al,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Closed physical range of the component in its native unit.
    pub fn range(self) -> (f64, f64) {
        match self {
            Component::M | Component::C => (0.0, 50.0),
            Component::Al => (0.0, 10.0),
            Component::N | Component::P | Component::K => (0.0, 10.0),
        }
    }

    /// Reporting unit: percent for M, C, Al and per-mille for N, P, K.
    pub fn unit(self) -> &'static str {
        match self {
            Component::M | Component::C | Component::Al => "%",
            Component::N | Component::P | Component::K => "‰",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::M => "M",
            Component::N => "N",
            Component::P => "P",
            Component::K => "K",
            Component::C => "C",
            Component::Al => "Al",
        }
    }
}

/// Ground-truth composition of one soil sample.
///
/// Moisture, carbon and aluminosilicate are in percent; nitrogen, phosphorus
/// and potassium in per-mille.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SoilSample {
    pub m_pct: f64,
    pub c_pct: f64,
    pub al_pct: f64,
    pub n_pml: f64,
    pub p_pml: f64,
    pub k_pml: f64,
}

impl SoilSample {
    /// The reference composition {M=30%, Al=4%, everything else 0}.
    pub const REFERENCE: SoilSample = SoilSample {
        m_pct: 30.0,
        c_pct: 0.0,
        al_pct: 4.0,
        n_pml: 0.0,
        p_pml: 0.0,
        k_pml: 0.0,
    };

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::M => self.m_pct,
            Component::N => self.n_pml,
            Component::P => self.p_pml,
            Component::K => self.k_pml,
            Component::C => self.c_pct,
            Component::Al => self.al_pct,
        }
    }

    pub fn set(&mut self, c: Component, value: f64) {
        match c {
            Component::M => self.m_pct = value,
            Component::N => self.n_pml = value,
            Component::P => self.p_pml = value,
            Component::K => self.k_pml = value,
            Component::C => self.c_pct = value,
            Component::Al => self.al_pct = value,
        }
    }

    pub fn with(mut self, c: Component, value: f64) -> Self {
        self.set(c, value);
        self
    }

    /// Values in canonical order [M, N, P, K, C, Al].
    pub fn to_array(&self) -> [f64; 6] {
        Component::ALL.map(|c| self.get(c))
    }

    pub fn from_array(values: [f64; 6]) -> Self {
        let mut s = SoilSample::default();
        for (c, v) in Component::ALL.into_iter().zip(values) {
            s.set(c, v);
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        for c in Component::ALL {
            let v = self.get(c);
            let (lo, hi) = c.range();
            if !v.is_finite() || v < lo || v > hi {
                return Err(Error::Domain(format!(
                    "{} = {v} outside [{lo}, {hi}]",
                    c.name()
                )));
            }
        }
        Ok(())
    }
}

/// Observable sensing vector: permittivity followed by seven VNIR voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingVector {
    pub epsilon: f64,
    /// Voltages ordered as [`VNIR_BANDS_NM`].
    pub vnir: [f64; 7],
}

impl SensingVector {
    pub fn new(epsilon: f64, vnir: [f64; 7]) -> Result<Self> {
        let s = SensingVector { epsilon, vnir };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 1.0 {
            return Err(Error::Domain(format!(
                "permittivity {} must be finite and >= 1",
                self.epsilon
            )));
        }
        for (v, nm) in self.vnir.iter().zip(VNIR_BANDS_NM) {
            if !v.is_finite() || !(0.0..=VNIR_MAX_VOLTS).contains(v) {
                return Err(Error::Domain(format!(
                    "{nm} nm voltage {v} outside [0, {VNIR_MAX_VOLTS}]"
                )));
            }
        }
        Ok(())
    }

    /// Flattened 8-vector `[ε, v460, …, v1650]`.
    pub fn to_features(&self) -> [f64; 8] {
        let mut f = [0.0; 8];
        f[0] = self.epsilon;
        f[1..].copy_from_slice(&self.vnir);
        f
    }
}

/// Measurement noise: multiplicative Gaussian on ε, additive Gaussian on voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_epsilon_rel: f64,
    pub sigma_vnir: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_epsilon_rel: 0.01,
            sigma_vnir: 0.005,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        NoiseConfig {
            sigma_epsilon_rel: 0.0,
            sigma_vnir: 0.0,
            seed,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_epsilon_rel == 0.0 && self.sigma_vnir == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_epsilon_rel >= 0.0 && self.sigma_vnir >= 0.0) {
            return Err(Error::Config(format!(
                "noise sigmas must be >= 0 (got {}, {})",
                self.sigma_epsilon_rel, self.sigma_vnir
            )));
        }
        Ok(())
    }

    /// Same noise levels with a seed derived from `index`, for per-sample streams.
    pub fn for_index(&self, index: usize) -> Self {
        NoiseConfig {
            seed: self
                .seed
                .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..*self
        }
    }
}

/// Relative permittivity of the sample. Independent of N, P and K.
pub fn permittivity_of(sample: &SoilSample) -> f64 {
    let root = (sample.m_pct / 100.0 - MOISTURE_OFFSET) / MOISTURE_SLOPE;
    root * root + EPS_PER_CARBON_PCT * sample.c_pct + EPS_PER_AL_PCT * sample.al_pct
}

/// Volumetric moisture fraction from permittivity. Not clamped: small ε gives
/// negative moisture.
pub fn moisture_from_permittivity(epsilon: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon < 1.0 {
        return Err(Error::Domain(format!(
            "permittivity {epsilon} must be finite and >= 1"
        )));
    }
    Ok(MOISTURE_SLOPE * epsilon.sqrt() + MOISTURE_OFFSET)
}

/// Affine response of one VNIR band: baseline voltage and per-unit slopes in
/// canonical component order [M, N, P, K, C, Al].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandModel {
    pub wavelength_nm: u32,
    pub baseline: f64,
    pub slopes: [f64; 6],
}

impl BandModel {
    pub fn response(&self, sample: &SoilSample) -> f64 {
        let v = self.baseline
            + self
                .slopes
                .iter()
                .zip(sample.to_array())
                .map(|(s, x)| s * x)
                .sum::<f64>();
        v.clamp(0.0, VNIR_MAX_VOLTS)
    }
}

const fn band(wavelength_nm: u32, baseline: f64, slopes: [f64; 6]) -> BandModel {
    BandModel {
        wavelength_nm,
        baseline,
        slopes,
    }
}

//                                  M        N       P       K       C        Al
pub const VNIR_MODEL: [BandModel; 7] = [
    band(460, 0.30, [0.0, 0.0, 0.0, -0.020, 0.0, 0.0]),
    band(620, 0.30, [0.0, 0.0, -0.020, 0.0, 0.0, 0.0]),
    band(1200, 0.22, [-0.001, -0.021, 0.0, 0.0, 0.0, 0.014]),
    band(1300, 0.28, [-0.0015, -0.004, -0.004, -0.004, -0.0012, 0.004]),
    band(1450, 0.30, [-0.0056, 0.0, 0.0, 0.0, -0.0004, -0.0005]),
    band(1550, 0.28, [-0.0015, -0.004, -0.004, -0.004, -0.0012, 0.004]),
    band(1650, 0.30, [-0.0008, 0.0, 0.0, 0.0, -0.004, -0.0006]),
];

/// Noise-free photodiode voltages, ordered as [`VNIR_BANDS_NM`].
pub fn vnir_response(sample: &SoilSample) -> [f64; 7] {
    VNIR_MODEL.map(|b| b.response(sample))
}

/// Full forward model with measurement noise drawn from `noise.seed`.
pub fn sense(sample: &SoilSample, noise: &NoiseConfig) -> SensingVector {
    let mut epsilon = permittivity_of(sample);
    let mut vnir = vnir_response(sample);
    if noise.is_noiseless() {
        return SensingVector { epsilon, vnir };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let eta: f64 = StandardNormal.sample(&mut rng);
    epsilon = (epsilon * (1.0 + noise.sigma_epsilon_rel * eta)).max(1.0);
    for v in vnir.iter_mut() {
        let eta: f64 = StandardNormal.sample(&mut rng);
        *v = (*v + noise.sigma_vnir * eta).clamp(0.0, VNIR_MAX_VOLTS);
    }
    SensingVector { epsilon, vnir }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn only(c: Component, v: f64) -> SoilSample {
        SoilSample::default().with(c, v)
    }

    fn band_index(nm: u32) -> usize {
        VNIR_BANDS_NM.iter().position(|&b| b == nm).unwrap()
    }

    #[test]
    fn permittivity_examples() {
        assert_abs_diff_eq!(permittivity_of(&only(Component::M, 30.0)), 17.48092, epsilon = 1e-5);
        assert_abs_diff_eq!(permittivity_of(&SoilSample::REFERENCE), 20.68092, epsilon = 1e-5);
        assert_abs_diff_eq!(permittivity_of(&SoilSample::default()), 2.386455, epsilon = 1e-6);
    }

    #[test]
    fn moisture_examples() {
        assert_abs_diff_eq!(moisture_from_permittivity(16.0).unwrap(), 0.2794, epsilon = 1e-12);
        assert_abs_diff_eq!(moisture_from_permittivity(17.48092).unwrap(), 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(moisture_from_permittivity(1.0).unwrap(), -0.062, epsilon = 1e-12);
        assert!(moisture_from_permittivity(0.5).is_err());
        assert!(moisture_from_permittivity(f64::NAN).is_err());
        assert!(moisture_from_permittivity(f64::INFINITY).is_err());
    }

    #[test]
    fn vnir_anchor_endpoints() {
        let b1450 = band_index(1450);
        assert_abs_diff_eq!(vnir_response(&only(Component::M, 0.0))[b1450], 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(vnir_response(&only(Component::M, 50.0))[b1450], 0.02, epsilon = 1e-12);
        let b1200 = band_index(1200);
        assert_abs_diff_eq!(vnir_response(&only(Component::N, 0.0))[b1200], 0.22, epsilon = 1e-12);
        assert_abs_diff_eq!(vnir_response(&only(Component::N, 10.0))[b1200], 0.01, epsilon = 1e-12);
        let b1650 = band_index(1650);
        assert_abs_diff_eq!(vnir_response(&only(Component::C, 0.0))[b1650], 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(vnir_response(&only(Component::C, 50.0))[b1650], 0.10, epsilon = 1e-12);
    }

    #[test]
    fn model_table_matches_band_order() {
        for (b, nm) in VNIR_MODEL.iter().zip(VNIR_BANDS_NM) {
            assert_eq!(b.wavelength_nm, nm);
        }
    }

    #[test]
    fn noiseless_sense_is_exact() {
        let s = sense(&SoilSample::REFERENCE, &NoiseConfig::noiseless(9));
        assert_eq!(s.epsilon, permittivity_of(&SoilSample::REFERENCE));
        assert_eq!(s.vnir, vnir_response(&SoilSample::REFERENCE));
        assert_abs_diff_eq!(s.epsilon, 20.68092, epsilon = 1e-5);
    }

    #[test]
    fn noisy_sense_is_seeded() {
        let cfg = NoiseConfig { seed: 77, ..NoiseConfig::default() };
        let a = sense(&SoilSample::REFERENCE, &cfg);
        let b = sense(&SoilSample::REFERENCE, &cfg);
        assert_eq!(a, b);
        let c = sense(&SoilSample::REFERENCE, &NoiseConfig { seed: 78, ..cfg });
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn sample_validation() {
        SoilSample::REFERENCE.validate().unwrap();
        assert!(only(Component::M, 60.0).validate().is_err());
        assert!(only(Component::Al, -0.1).validate().is_err());
        assert!(only(Component::K, f64::NAN).validate().is_err());
    }

    fn any_sample() -> impl Strategy<Value = SoilSample> {
        (0.0..=50.0, 0.0..=50.0, 0.0..=10.0, 0.0..=10.0, 0.0..=10.0, 0.0..=10.0).prop_map(
            |(m_pct, c_pct, al_pct, n_pml, p_pml, k_pml)| SoilSample {
                m_pct,
                c_pct,
                al_pct,
                n_pml,
                p_pml,
                k_pml,
            },
        )
    }

    proptest! {
        #[test]
        fn moisture_round_trip(m in 0.0..=50.0f64) {
            let eps = permittivity_of(&only(Component::M, m));
            let back = moisture_from_permittivity(eps).unwrap() * 100.0;
            prop_assert!((back - m).abs() < 1e-9);
        }

        #[test]
        fn permittivity_ignores_npk(s in any_sample(), n in 0.0..=10.0f64, p in 0.0..=10.0f64, k in 0.0..=10.0f64) {
            let t = SoilSample { n_pml: n, p_pml: p, k_pml: k, ..s };
            prop_assert_eq!(permittivity_of(&s).to_bits(), permittivity_of(&t).to_bits());
        }

        #[test]
        fn permittivity_monotone(s in any_sample(), d in 0.01..=5.0f64) {
            for c in [Component::M, Component::C, Component::Al] {
                let (_, hi) = c.range();
                let v = s.get(c);
                if v + d <= hi {
                    prop_assert!(permittivity_of(&s.with(c, v + d)) > permittivity_of(&s));
                }
            }
        }

        #[test]
        fn voltages_stay_in_range(s in any_sample()) {
            for v in vnir_response(&s) {
                prop_assert!((0.0..=VNIR_MAX_VOLTS).contains(&v));
            }
            sense(&s, &NoiseConfig::default()).validate().unwrap();
        }

        #[test]
        fn dominant_band_monotone(s in any_sample(), d in 0.01..=1.0f64) {
            // strict where the band is unclamped on both ends of the step
            let check = |nm: u32, c: Component, sign: f64| -> bool {
                let i = band_index(nm);
                let (_, hi) = c.range();
                let v = s.get(c);
                if v + d > hi {
                    return true;
                }
                let a = vnir_response(&s)[i];
                let b = vnir_response(&s.with(c, v + d))[i];
                let interior = |x: f64| x > 0.0 && x < VNIR_MAX_VOLTS;
                if interior(a) && interior(b) { sign * (b - a) > 0.0 } else { sign * (b - a) >= 0.0 }
            };
            prop_assert!(check(1450, Component::M, -1.0));
            prop_assert!(check(1200, Component::N, -1.0));
            prop_assert!(check(1200, Component::Al, 1.0));
            prop_assert!(check(1650, Component::C, -1.0));
        }
    }
}
