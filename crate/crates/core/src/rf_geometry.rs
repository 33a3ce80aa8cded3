//! Tetrahedral antenna-array geometry and phase-shift inversion.
//!
//! Four antennas sit on the vertices of a regular tetrahedron with edge `d0`.
//! One vertex is the origin; the other three give baselines `d_k`. For a
//! plane wave leaving the node along `r_tx` through soil of permittivity `ε`
//! the phase shift between the origin antenna and antenna `k` is
//!
//! ```text
//! Δφ_k = (2π f_c √ε / c0) · (d_k · r_tx)
//! ```
//!
//! Writing `u = √ε · r_tx` turns the three equations into the linear system
//! `D u = φ / k0`, so inversion is a single 3×3 solve: `ε = |u|²` and
//! `r_tx = u / |u|`. Directions are node→gateway, +z up.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Antenna spacing (tetrahedron edge), metres.
    pub d0: f64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            f_c: 915e6,
            d0: 0.132,
        }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_c > 0.0 && self.f_c.is_finite() && self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Config(format!(
                "carrier {} Hz and spacing {} m must be positive",
                self.f_c, self.d0
            )));
        }
        Ok(())
    }

    /// Free-space wavenumber `2π f_c / c0`, rad/m.
    pub fn wavenumber(&self) -> f64 {
        TAU * self.f_c / SPEED_OF_LIGHT
    }

    pub fn c0(&self) -> f64 {
        SPEED_OF_LIGHT
    }
}

/// Proper rotation of the array frame relative to the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation(UnitQuaternion<f64>);

impl Default for Orientation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Orientation {
    pub fn identity() -> Self {
        Orientation(UnitQuaternion::identity())
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Orientation(q)
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::Domain("rotation axis must be non-zero".into()))?;
        Ok(Orientation(UnitQuaternion::from_axis_angle(&axis, angle)))
    }

    /// Intrinsic roll (x), pitch (y), yaw (z), radians.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        Orientation(UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    /// Uniformly distributed rotation ("random throw").
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // Shoemake's subgroup algorithm
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let q = nalgebra::Quaternion::new(
            b * (TAU * u3).cos(),
            a * (TAU * u2).sin(),
            a * (TAU * u2).cos(),
            b * (TAU * u3).sin(),
        );
        Orientation(UnitQuaternion::from_quaternion(q))
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.0.to_rotation_matrix()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.rotation().matrix()
    }

    /// Maps an array-frame vector into the world frame.
    pub fn to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn to_array_frame(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse() * v
    }
}

/// Unit transmit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxDirection(Vector3<f64>);

impl TxDirection {
    /// Normalizes `v`; fails for zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain(format!("direction {v:?} cannot be normalized")));
        }
        Ok(TxDirection(v / n))
    }

    pub fn up() -> Self {
        TxDirection(Vector3::z())
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn angle_to(&self, other: &TxDirection) -> f64 {
        // atan2 form stays accurate near zero angle
        let cross = self.0.cross(&other.0).norm();
        let dot = self.0.dot(&other.0);
        cross.atan2(dot)
    }
}

/// Three phase shifts from the origin antenna to antennas 1..3, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTriple {
    pub phi: [f64; 3],
    /// True when every value has been reduced into (−π, π].
    pub wrapped: bool,
}

impl PhaseTriple {
    pub fn unwrapped(phi: [f64; 3]) -> Self {
        PhaseTriple { phi, wrapped: false }
    }

    pub fn wrapped(phi: [f64; 3]) -> Result<Self> {
        if phi.iter().any(|p| !(*p > -PI && *p <= PI)) {
            return Err(Error::Domain(format!("wrapped phases {phi:?} not in (-π, π]")));
        }
        Ok(PhaseTriple { phi, wrapped: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionResult {
    pub epsilon: f64,
    pub r_tx: TxDirection,
    /// Phase mismatch of the re-simulated solution, radians.
    pub residual: f64,
    /// Integer cycles added per channel before inversion.
    pub unwrap_ints: [i64; 3],
}

/// Candidates from the wrapped-phase search, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedInversion {
    pub candidates: Vec<InversionResult>,
    /// Two or more candidates disagree on ε by more than [`AMBIGUITY_GAP`].
    pub ambiguous: bool,
}

impl WrappedInversion {
    pub fn best(&self) -> &InversionResult {
        &self.candidates[0]
    }
}

pub const AMBIGUITY_GAP: f64 = 0.5;
pub const WRAPPED_CONSISTENCY_TOL: f64 = 1e-9;
pub const MAX_SEARCH_EPSILON: f64 = 45.0;

/// Baselines `d1, d2, d3` of the regular tetrahedron, array frame, metres.
pub fn tetra_vertices(cfg: &RfConfig) -> [Vector3<f64>; 3] {
    let d0 = cfg.d0;
    let s3 = 3f64.sqrt();
    let z = -(6f64.sqrt()) / 3.0 * d0;
    [
        Vector3::new(s3 / 3.0 * d0, 0.0, z),
        Vector3::new(-s3 / 6.0 * d0, -0.5 * d0, z),
        Vector3::new(-s3 / 6.0 * d0, 0.5 * d0, z),
    ]
}

/// Baseline matrix with rows `d_k`.
fn baseline_matrix(cfg: &RfConfig) -> Matrix3<f64> {
    let [d1, d2, d3] = tetra_vertices(cfg);
    Matrix3::from_rows(&[d1.transpose(), d2.transpose(), d3.transpose()])
}

/// Unwrapped phase shifts for a world-frame transmit direction and array orientation.
pub fn forward_phases(
    epsilon: f64,
    r_tx_world: &TxDirection,
    orient: &Orientation,
    cfg: &RfConfig,
) -> PhaseTriple {
    let scale = cfg.wavenumber() * epsilon.sqrt();
    let phi = tetra_vertices(cfg).map(|d| scale * orient.to_world(&d).dot(r_tx_world.vector()));
    PhaseTriple::unwrapped(phi)
}

/// Reduces `x` into (−π, π]. Returns the wrapped value and `k` with `x = w + 2πk`.
pub fn wrap_phase(x: f64) -> (f64, i64) {
    let k = (x / TAU).round();
    let mut w = x - TAU * k;
    let mut k = k as i64;
    if w <= -PI {
        w += TAU;
        k -= 1;
    } else if w > PI {
        w -= TAU;
        k += 1;
    }
    (w, k)
}

pub fn wrap_phases(p: &PhaseTriple) -> PhaseTriple {
    PhaseTriple {
        phi: p.phi.map(|x| wrap_phase(x).0),
        wrapped: true,
    }
}

fn solve_direction(phi: [f64; 3], cfg: &RfConfig) -> Result<Vector3<f64>> {
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain(format!("non-finite phases {phi:?}")));
    }
    cfg.validate()?;
    let d = baseline_matrix(cfg);
    let inv = d
        .try_inverse()
        .ok_or_else(|| Error::Domain("baseline matrix is singular".into()))?;
    Ok(inv * (Vector3::from(phi) / cfg.wavenumber()))
}

/// Closed-form inversion of unwrapped phases to (ε, array-frame direction).
pub fn invert_phases(p: &PhaseTriple, cfg: &RfConfig) -> Result<InversionResult> {
    if p.wrapped {
        return Err(Error::Domain(
            "invert_phases expects unwrapped phases; use invert_wrapped".into(),
        ));
    }
    let u = solve_direction(p.phi, cfg)?;
    let norm = u.norm();
    let epsilon = norm * norm;
    if norm < 1.0 {
        return Err(Error::EpsilonOutOfRange { epsilon });
    }
    Ok(InversionResult {
        epsilon,
        r_tx: TxDirection(u / norm),
        residual: 0.0,
        unwrap_ints: [0; 3],
    })
}

/// Resolves the 2π ambiguity of wrapped phases by integer search under an ε prior.
pub fn invert_wrapped(
    p: &PhaseTriple,
    cfg: &RfConfig,
    eps_range: (f64, f64),
) -> Result<WrappedInversion> {
    let (eps_min, eps_max) = eps_range;
    if !(eps_min >= 1.0 && eps_max <= MAX_SEARCH_EPSILON && eps_min < eps_max) {
        return Err(Error::Config(format!(
            "ε search range [{eps_min}, {eps_max}] must satisfy 1 <= min < max <= {MAX_SEARCH_EPSILON}"
        )));
    }
    cfg.validate()?;
    let observed = wrap_phases(p).phi;
    let k_max = (cfg.f_c * eps_max.sqrt() * cfg.d0 / SPEED_OF_LIGHT).ceil() as i64 + 1;
    let d = baseline_matrix(cfg);
    let k0 = cfg.wavenumber();

    let mut candidates = Vec::new();
    for k1 in -k_max..=k_max {
        for k2 in -k_max..=k_max {
            for k3 in -k_max..=k_max {
                let ks = [k1, k2, k3];
                let phi = [0, 1, 2].map(|i| observed[i] + TAU * ks[i] as f64);
                let u = solve_direction(phi, cfg)?;
                let norm = u.norm();
                let epsilon = norm * norm;
                if epsilon < eps_min || epsilon > eps_max {
                    continue;
                }
                let resim = d * u * k0;
                let residual = (0..3)
                    .map(|i| wrap_phase(resim[i] - observed[i]).0.powi(2))
                    .sum::<f64>()
                    .sqrt();
                if residual > WRAPPED_CONSISTENCY_TOL {
                    continue;
                }
                candidates.push(InversionResult {
                    epsilon,
                    r_tx: TxDirection(u / norm),
                    residual,
                    unwrap_ints: ks,
                });
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoCandidate {
            min: eps_min,
            max: eps_max,
        });
    }
    let mid = 0.5 * (eps_min + eps_max);
    candidates.sort_by(|a, b| {
        (a.epsilon - mid)
            .abs()
            .total_cmp(&(b.epsilon - mid).abs())
            .then(a.unwrap_ints.cmp(&b.unwrap_ints))
    });
    let (lo, hi) = candidates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.epsilon), hi.max(c.epsilon))
        });
    Ok(WrappedInversion {
        ambiguous: hi - lo > AMBIGUITY_GAP,
        candidates,
    })
}

/// Phase shift of the dual-antenna baseline rotated by `gamma` from the
/// transmit angle `beta`.
pub fn dual_phase(epsilon: f64, beta: f64, gamma: f64, cfg: &RfConfig) -> f64 {
    cfg.wavenumber() * epsilon.sqrt() * cfg.d0 * (beta - gamma).cos()
}

/// Permittivity recovered from a dual-antenna phase assuming perfect alignment.
pub fn dual_epsilon_estimate(phase: f64, cfg: &RfConfig) -> f64 {
    let root = phase / (cfg.wavenumber() * cfg.d0);
    root * root
}

/// Ratio `ε_measured / ε_true` of the dual-antenna array under rotation `gamma`.
pub fn dual_epsilon_error_ratio(gamma: f64) -> f64 {
    gamma.cos().powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const VERTICAL_PHASE: f64 = -8.2674;

    fn all_pairs(cfg: &RfConfig) -> Vec<f64> {
        let [a, b, c] = tetra_vertices(cfg);
        let o = Vector3::zeros();
        let pts = [o, a, b, c];
        let mut out = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                out.push((pts[i] - pts[j]).norm());
            }
        }
        out
    }

    #[test]
    fn vertices_form_regular_tetrahedron() {
        let cfg = RfConfig::default();
        let [d1, d2, _] = tetra_vertices(&cfg);
        assert_abs_diff_eq!(d1.x, 0.0762102, epsilon = 1e-7);
        assert_eq!(d1.y, 0.0);
        assert_abs_diff_eq!(d1.z, -0.1077776, epsilon = 1e-7);
        assert_abs_diff_eq!((d1 - d2).norm(), 0.132, epsilon = 1e-12);
        for d0 in [0.01, 0.132, 1.0, 7.5] {
            let cfg = RfConfig { d0, ..cfg };
            for dist in all_pairs(&cfg) {
                assert!((dist - d0).abs() < 1e-12 * d0.max(1.0), "{dist} vs {d0}");
            }
        }
    }

    #[test]
    fn vertical_forward_phases() {
        let cfg = RfConfig::default();
        let p = forward_phases(16.0, &TxDirection::up(), &Orientation::identity(), &cfg);
        assert!(!p.wrapped);
        for phi in p.phi {
            assert_abs_diff_eq!(phi, VERTICAL_PHASE, epsilon = 1e-4);
        }
        let flip = Orientation::from_axis_angle(Vector3::x(), PI).unwrap();
        let q = forward_phases(16.0, &TxDirection::up(), &flip, &cfg);
        for phi in q.phi {
            assert_abs_diff_eq!(phi, -VERTICAL_PHASE, epsilon = 1e-4);
        }
        let tiny = RfConfig { d0: 1e-12, ..cfg };
        let z = forward_phases(1.0, &TxDirection::new(Vector3::new(1.0, 2.0, 3.0)).unwrap(), &Orientation::identity(), &tiny);
        assert!(z.phi.iter().all(|p| p.abs() < 1e-9));
    }

    #[test]
    fn wrap_examples() {
        let (w, k) = wrap_phase(VERTICAL_PHASE);
        assert_abs_diff_eq!(w, -1.9842, epsilon = 1e-4);
        assert_eq!(k, -1);
        let p = PhaseTriple::unwrapped([0.1, -0.1, PI]);
        assert_eq!(wrap_phases(&p).phi, [0.1, -0.1, PI]);
        let p = PhaseTriple::unwrapped([TAU; 3]);
        assert_eq!(wrap_phases(&p).phi, [0.0; 3]);
        assert_eq!(wrap_phase(-PI).0, PI);
    }

    #[test]
    fn invert_vertical() {
        let cfg = RfConfig::default();
        let p = forward_phases(16.0, &TxDirection::up(), &Orientation::identity(), &cfg);
        let r = invert_phases(&p, &cfg).unwrap();
        assert_abs_diff_eq!(r.epsilon, 16.0, epsilon = 1e-9);
        assert!(r.r_tx.angle_to(&TxDirection::up()) < 1e-9);
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn invert_rejects_zero_and_bad_input() {
        let cfg = RfConfig::default();
        assert!(matches!(
            invert_phases(&PhaseTriple::unwrapped([0.0; 3]), &cfg),
            Err(Error::EpsilonOutOfRange { .. })
        ));
        assert!(matches!(
            invert_phases(&PhaseTriple::unwrapped([f64::NAN, 0.0, 0.0]), &cfg),
            Err(Error::Domain(_))
        ));
        let w = PhaseTriple::wrapped([0.1, 0.2, 0.3]).unwrap();
        assert!(invert_phases(&w, &cfg).is_err());
    }

    #[test]
    fn wrapped_search_contains_truth() {
        let cfg = RfConfig::default();
        let p = wrap_phases(&forward_phases(16.0, &TxDirection::up(), &Orientation::identity(), &cfg));
        let res = invert_wrapped(&p, &cfg, (3.0, 40.0)).unwrap();
        assert!(res.candidates.iter().any(|c| (c.epsilon - 16.0).abs() < 1e-9));
        let truth = res.candidates.iter().find(|c| (c.epsilon - 16.0).abs() < 1e-9).unwrap();
        assert_eq!(truth.unwrap_ints, [-1, -1, -1]);
        for w in res.candidates.windows(2) {
            assert!((w[0].epsilon - 21.5).abs() <= (w[1].epsilon - 21.5).abs());
        }
    }

    #[test]
    fn wrapped_zero_phases_hit_the_cycle_lattice() {
        let cfg = RfConfig::default();
        let p = PhaseTriple::wrapped([0.0; 3]).unwrap();
        // u = 0 is excluded by the range, but whole-cycle lattice points are not
        let res = invert_wrapped(&p, &cfg, (3.0, 40.0)).unwrap();
        assert!(res.ambiguous);
        assert!(res.candidates.iter().all(|c| c.unwrap_ints != [0, 0, 0]));
        assert!(res.candidates.iter().any(|c| (c.epsilon - 9.242).abs() < 1e-3));
        assert!(matches!(
            invert_wrapped(&p, &cfg, (3.0, 9.0)),
            Err(Error::NoCandidate { .. })
        ));
    }

    #[test]
    fn wrapped_small_projection_case_is_ambiguous_but_complete() {
        let cfg = RfConfig::default();
        // direction of least total projection: smallest singular vector of D
        let svd = baseline_matrix(&cfg).svd(true, true);
        let (imin, _) = svd.singular_values.argmin();
        let r = TxDirection::new(svd.v_t.unwrap().row(imin).transpose()).unwrap();
        let p = wrap_phases(&forward_phases(4.0, &r, &Orientation::identity(), &cfg));
        let res = invert_wrapped(&p, &cfg, (3.0, 40.0)).unwrap();
        let hit = res.candidates.iter().find(|c| (c.epsilon - 4.0).abs() < 1e-9).unwrap();
        assert_eq!(hit.unwrap_ints, [0, 0, 0]);
        assert!(res.ambiguous);
    }

    #[test]
    fn wrapped_range_is_validated() {
        let cfg = RfConfig::default();
        let p = PhaseTriple::wrapped([0.1; 3]).unwrap();
        assert!(matches!(invert_wrapped(&p, &cfg, (0.5, 40.0)), Err(Error::Config(_))));
        assert!(matches!(invert_wrapped(&p, &cfg, (3.0, 60.0)), Err(Error::Config(_))));
    }

    #[test]
    fn wrapped_range_without_solution() {
        let cfg = RfConfig::default();
        let p = wrap_phases(&forward_phases(16.0, &TxDirection::up(), &Orientation::identity(), &cfg));
        let res = invert_wrapped(&p, &cfg, (15.9, 16.1)).unwrap();
        assert_eq!(res.candidates.len(), 1);
        assert!(!res.ambiguous);
        assert!(matches!(
            invert_wrapped(&p, &cfg, (16.01, 16.02)),
            Err(Error::NoCandidate { .. })
        ));
    }

    #[test]
    fn dual_antenna_law() {
        let cfg = RfConfig::default();
        assert_abs_diff_eq!(dual_phase(16.0, 0.0, 0.0, &cfg), 10.1254, epsilon = 1e-4);
        assert_abs_diff_eq!(dual_phase(16.0, 0.3, 0.3 + PI / 2.0, &cfg), 0.0, epsilon = 1e-12);
        assert_eq!(dual_epsilon_error_ratio(0.0), 1.0);
        assert_abs_diff_eq!(dual_epsilon_error_ratio(PI / 6.0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(dual_epsilon_error_ratio(PI / 2.0), 0.0, epsilon = 1e-15);
        for deg in [0.0f64, 15.0, 30.0, 45.0, 60.0, 90.0] {
            let g = deg.to_radians();
            let est = dual_epsilon_estimate(dual_phase(23.0, 0.0, g, &cfg), &cfg);
            assert!((est / 23.0 - g.cos().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_orientation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = Orientation::random(&mut rng).matrix();
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        }
    }

    fn unit_vector() -> impl Strategy<Value = TxDirection> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| TxDirection::new(Vector3::new(x, y, z)).unwrap())
    }

    proptest! {
        #[test]
        fn orientation_invariant_round_trip(eps in 3.0..40.0f64, r in unit_vector(), seed in any::<u64>()) {
            let cfg = RfConfig::default();
            let orient = Orientation::random(&mut ChaCha8Rng::seed_from_u64(seed));
            let p = forward_phases(eps, &r, &orient, &cfg);
            let inv = invert_phases(&p, &cfg).unwrap();
            prop_assert!((inv.epsilon - eps).abs() / eps < 1e-9);
            let r_array = TxDirection::new(orient.to_array_frame(r.vector())).unwrap();
            prop_assert!(inv.r_tx.angle_to(&r_array) < 1e-8);
            let world = TxDirection::new(orient.to_world(inv.r_tx.vector())).unwrap();
            prop_assert!(world.angle_to(&r) < 1e-8);
        }

        #[test]
        fn wrap_is_idempotent(a in -100.0..100.0f64, b in -100.0..100.0f64, c in -100.0..100.0f64) {
            let once = wrap_phases(&PhaseTriple::unwrapped([a, b, c]));
            prop_assert!(once.phi.iter().all(|p| *p > -PI && *p <= PI));
            let twice = wrap_phases(&once);
            prop_assert_eq!(once, twice);
            for (x, w) in [a, b, c].iter().zip(once.phi) {
                let (_, k) = wrap_phase(*x);
                prop_assert!((x - (w + TAU * k as f64)).abs() < 1e-12);
            }
        }
    }
}
