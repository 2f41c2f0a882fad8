//! Tracker catalog: the three smoother configurations used in the
//! benchmark and the constant-velocity / coordinated-turn system matrices
//! the ground-truth generators share.
//!
//! * CCV - conditional model, constant velocity, `A = I`, `n = 100`;
//! * FCV - factorized model, constant velocity, `M = I`, `n = 100`;
//! * FCT - factorized model, coordinated turn with the extent rotating by
//!   `T omega` per step and deterministic extent evolution (`n` infinite).
//!
//! The state vector is ordered positions-first: `[px, py, vx, vy]` (plus a
//! trailing turn rate for the coordinated turn). The conditional model's
//! Kronecker convention relies on this ordering: `F ⊗ I_2` acts on
//! `[px, py, vx, vy]^T` with `F` operating on the (position, velocity)
//! blocks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conditional::{ConditionalMeasurementModel, ConditionalTransitionModel};
use crate::error::{Error, Result};
use crate::factorized::{
    ExtentMap, FactorizedMeasurementModel, FactorizedTransitionModel, MatrixMap, MotionMap,
};
use crate::Dof;

/// Switch point for the small-angle limits of `sin(T w)/w` and
/// `(1 - cos(T w))/w`.
const SMALL_TURN: f64 = 1e-8;

/// Extent evolution dof shared by the constant-velocity trackers.
pub const CV_EXTENT_DOF: f64 = 100.0;

/// Tracker configurations available to the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrackerKind {
    Ccv,
    Fcv,
    Fct,
}

impl TrackerKind {
    pub const ALL: [TrackerKind; 3] = [TrackerKind::Ccv, TrackerKind::Fcv, TrackerKind::Fct];

    pub fn name(self) -> &'static str {
        match self {
            TrackerKind::Ccv => "ccv",
            TrackerKind::Fcv => "fcv",
            TrackerKind::Fct => "fct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ccv" => Ok(TrackerKind::Ccv),
            "fcv" => Ok(TrackerKind::Fcv),
            "fct" => Ok(TrackerKind::Fct),
            other => Err(Error::Config(format!(
                "unknown tracker '{other}' (expected ccv, fcv or fct)"
            ))),
        }
    }

    /// Kinematic state length of the tracker.
    pub fn state_len(self) -> usize {
        match self {
            TrackerKind::Ccv | TrackerKind::Fcv => 4,
            TrackerKind::Fct => 5,
        }
    }
}

impl std::fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

// ---------------------------------------------------------------------------
// Constant velocity pieces
// ---------------------------------------------------------------------------

/// `[[1, T], [0, 1]]` acting on one (position, velocity) pair.
pub fn cv_transition_factor(t: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0])
}

/// `sigma_a^2 [[T^4/4, T^3/2], [T^3/2, T^2]]`.
pub fn cv_noise_factor(t: f64, sigma_a: f64) -> DMatrix<f64> {
    let q = sigma_a * sigma_a;
    DMatrix::from_row_slice(
        2,
        2,
        &[
            q * t.powi(4) / 4.0,
            q * t.powi(3) / 2.0,
            q * t.powi(3) / 2.0,
            q * t * t,
        ],
    )
}

/// Block constant-velocity transition on `[px, py, vx, vy]`.
pub fn cv_transition_matrix(t: f64) -> DMatrix<f64> {
    cv_transition_factor(t).kronecker(&DMatrix::identity(2, 2))
}

/// Block constant-velocity process noise on `[px, py, vx, vy]`.
pub fn cv_noise_matrix(t: f64, sigma_a: f64) -> DMatrix<f64> {
    cv_noise_factor(t, sigma_a).kronecker(&DMatrix::identity(2, 2))
}

/// Conditional constant-velocity tracker (CCV).
pub fn ccv_model(
    t: f64,
    sigma_a: f64,
) -> Result<(ConditionalTransitionModel, ConditionalMeasurementModel)> {
    if t <= 0.0 {
        return Err(Error::InvalidParameter("sampling period must be positive".into()));
    }
    let transition = ConditionalTransitionModel::new(
        cv_transition_factor(t),
        cv_noise_factor(t, sigma_a),
        Dof::Finite(CV_EXTENT_DOF),
        DMatrix::identity(2, 2),
    )?;
    let measurement = ConditionalMeasurementModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))?;
    Ok((transition, measurement))
}

/// Factorized constant-velocity tracker (FCV).
pub fn fcv_model(
    t: f64,
    sigma_a: f64,
) -> Result<(FactorizedTransitionModel, FactorizedMeasurementModel)> {
    if t <= 0.0 {
        return Err(Error::InvalidParameter("sampling period must be positive".into()));
    }
    let transition = FactorizedTransitionModel::linear(
        cv_transition_matrix(t),
        cv_noise_matrix(t, sigma_a),
        Dof::Finite(CV_EXTENT_DOF),
        ExtentMap::Constant(DMatrix::identity(2, 2)),
    )?;
    let mut h = DMatrix::zeros(2, 4);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let measurement = FactorizedMeasurementModel::new(h, 1.0, DMatrix::zeros(2, 2))?;
    Ok((transition, measurement))
}

// ---------------------------------------------------------------------------
// Coordinated turn pieces
// ---------------------------------------------------------------------------

/// `sin(T w)/w` and `(1 - cos(T w))/w` with their analytic `w -> 0` limits.
fn ct_ratios(t: f64, omega: f64) -> (f64, f64) {
    if (t * omega).abs() < SMALL_TURN {
        (t, 0.0)
    } else {
        let u = t * omega;
        (u.sin() / omega, (1.0 - u.cos()) / omega)
    }
}

/// Derivatives of the ratios with respect to the turn rate.
fn ct_ratio_derivatives(t: f64, omega: f64) -> (f64, f64) {
    if (t * omega).abs() < SMALL_TURN {
        (0.0, t * t / 2.0)
    } else {
        let u = t * omega;
        let da = (t * omega * u.cos() - u.sin()) / (omega * omega);
        let db = (t * omega * u.sin() - (1.0 - u.cos())) / (omega * omega);
        (da, db)
    }
}

/// Coordinated-turn transition matrix on `[px, py, vx, vy, w]` for a frozen
/// turn rate.
pub fn ct_transition_matrix(t: f64, omega: f64) -> DMatrix<f64> {
    let (a, b) = ct_ratios(t, omega);
    let (s, c) = (t * omega).sin_cos();
    DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.0, a, -b, 0.0, //
            0.0, 1.0, b, a, 0.0, //
            0.0, 0.0, c, -s, 0.0, //
            0.0, 0.0, s, c, 0.0, //
            0.0, 0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// `G diag(sigma_a^2, sigma_a^2, sigma_w^2) G^T` with the standard
/// acceleration/turn-rate input matrix.
pub fn ct_noise_matrix(t: f64, sigma_a: f64, sigma_omega: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(5, 3);
    g[(0, 0)] = t * t / 2.0;
    g[(1, 1)] = t * t / 2.0;
    g[(2, 0)] = t;
    g[(3, 1)] = t;
    g[(4, 2)] = 1.0;
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![
        sigma_a * sigma_a,
        sigma_a * sigma_a,
        sigma_omega * sigma_omega,
    ]));
    &g * diag * g.transpose()
}

/// Analytic Jacobian of the coordinated-turn map, including the turn-rate
/// column; matches central finite differences to 1e-6.
pub fn ct_jacobian(x: &DVector<f64>, t: f64) -> DMatrix<f64> {
    let omega = x[4];
    let (vx, vy) = (x[2], x[3]);
    let mut jac = ct_transition_matrix(t, omega);
    let (da, db) = ct_ratio_derivatives(t, omega);
    let (s, c) = (t * omega).sin_cos();
    jac[(0, 4)] = da * vx - db * vy;
    jac[(1, 4)] = db * vx + da * vy;
    jac[(2, 4)] = -t * s * vx - t * c * vy;
    jac[(3, 4)] = t * c * vx - t * s * vy;
    jac
}

/// Coordinated-turn motion map `f(x) = A(omega) x`.
#[derive(Debug, Clone, Copy)]
pub struct CoordinatedTurnMotion {
    pub sampling_period: f64,
}

impl MotionMap for CoordinatedTurnMotion {
    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        ct_transition_matrix(self.sampling_period, x[4]) * x
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        ct_jacobian(x, self.sampling_period)
    }
}

/// Planar rotation by `T omega`, where `omega` is one state component.
///
/// `M^-1 = M^T`, `dM/dw = T [[-sin, -cos], [cos, -sin]]`,
/// `d2M/dw2 = T^2 [[-cos, sin], [-sin, -cos]]` (arguments `T omega`).
#[derive(Debug, Clone, Copy)]
pub struct RotationExtentMap {
    sampling_period: f64,
    turn_rate_index: usize,
}

impl RotationExtentMap {
    pub fn new(sampling_period: f64, turn_rate_index: usize) -> Self {
        Self {
            sampling_period,
            turn_rate_index,
        }
    }
}

impl MatrixMap for RotationExtentMap {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = (self.sampling_period * x[self.turn_rate_index]).sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    fn d1(&self, x: &DVector<f64>, i: usize) -> DMatrix<f64> {
        if i != self.turn_rate_index {
            return DMatrix::zeros(2, 2);
        }
        let t = self.sampling_period;
        let (s, c) = (t * x[self.turn_rate_index]).sin_cos();
        DMatrix::from_row_slice(2, 2, &[-t * s, -t * c, t * c, -t * s])
    }

    fn d2(&self, x: &DVector<f64>, i: usize, j: usize) -> DMatrix<f64> {
        if i != self.turn_rate_index || j != self.turn_rate_index {
            return DMatrix::zeros(2, 2);
        }
        let t = self.sampling_period;
        let (s, c) = (t * x[self.turn_rate_index]).sin_cos();
        DMatrix::from_row_slice(2, 2, &[-t * t * c, t * t * s, -t * t * s, -t * t * c])
    }

    fn depends_on(&self, i: usize) -> bool {
        i == self.turn_rate_index
    }
}

/// Factorized coordinated-turn tracker (FCT).
pub fn fct_model(
    t: f64,
    sigma_a: f64,
    sigma_omega: f64,
) -> Result<(FactorizedTransitionModel, FactorizedMeasurementModel)> {
    if t <= 0.0 {
        return Err(Error::InvalidParameter("sampling period must be positive".into()));
    }
    let transition = FactorizedTransitionModel::new(
        Arc::new(CoordinatedTurnMotion { sampling_period: t }),
        ct_noise_matrix(t, sigma_a, sigma_omega),
        Dof::Infinite,
        ExtentMap::StateDependent(Arc::new(RotationExtentMap::new(t, 4))),
    )?;
    let mut h = DMatrix::zeros(2, 5);
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    let measurement = FactorizedMeasurementModel::new(h, 1.0, DMatrix::zeros(2, 2))?;
    Ok((transition, measurement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional;
    use crate::factorized;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ccv_matrices_match_direct_substitution() {
        let (transition, measurement) = ccv_model(1.0, 1.0).unwrap();
        assert_eq!(
            transition.motion,
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])
        );
        assert_eq!(
            transition.process_noise,
            dmatrix![0.25, 0.5; 0.5, 1.0]
        );
        assert_eq!(measurement.row, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(transition.extent_dof, Dof::Finite(100.0));
        // Zero sampling period degenerates to the identity for the bare factor.
        assert_eq!(cv_transition_factor(0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn fcv_matrices_match_direct_substitution() {
        let (transition, _measurement) = fcv_model(1.0, 1.0).unwrap();
        let jac = transition.motion.jacobian(&DVector::zeros(4));
        // Linear map: the Jacobian is the block matrix itself.
        assert_eq!(jac, cv_transition_matrix(1.0));
        assert_eq!(transition.process_noise[(0, 0)], 0.25);
        assert_eq!(transition.process_noise[(0, 2)], 0.5);
    }

    #[test]
    fn ct_zero_turn_rate_reduces_to_cv() {
        let f = ct_transition_matrix(1.0, 0.0);
        let cv = cv_transition_matrix(1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((f[(i, j)] - cv[(i, j)]).abs() < 1e-12);
            }
        }
        assert_eq!(f.row(4).clone_owned(), DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn rotation_map_quarter_turn_and_group_properties() {
        let map = RotationExtentMap::new(1.0, 4);
        let x = dvector![0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let m = map.value(&x);
        assert!((m.clone() - dmatrix![0.0, -1.0; 1.0, 0.0]).amax() < 1e-12);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let omega = rng.sample::<f64, _>(StandardNormal) * 2.0;
            let xo = dvector![0.0, 0.0, 0.0, 0.0, omega];
            let m = map.value(&xo);
            assert!(((&m * m.transpose()) - DMatrix::identity(2, 2)).amax() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        let map = RotationExtentMap::new(1.3, 4);
        let step = 1e-5;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..20 {
            let omega = rng.sample::<f64, _>(StandardNormal);
            let at = |w: f64| map.value(&dvector![0.0, 0.0, 0.0, 0.0, w]);
            let x = dvector![0.0, 0.0, 0.0, 0.0, omega];
            let fd1 = (at(omega + step) - at(omega - step)) / (2.0 * step);
            assert!((map.d1(&x, 4) - fd1).amax() < 1e-6);
            let fd2 = (at(omega + step) - 2.0 * at(omega) + at(omega - step)) / (step * step);
            assert!((map.d2(&x, 4, 4) - fd2).amax() < 1e-5);
        }
        // dM/dw at zero turn rate.
        let x0 = dvector![0.0, 0.0, 0.0, 0.0, 0.0];
        let t = 1.3;
        assert!((map.d1(&x0, 4) - dmatrix![0.0, -t; t, 0.0]).amax() < 1e-12);
        assert!(map.d1(&x0, 2).amax() == 0.0);
    }

    #[test]
    fn ct_jacobian_matches_finite_differences() {
        let t = 0.7;
        let step = 1e-5;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..30 {
            let x = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
            let jac = ct_jacobian(&x, t);
            let f = |x: &DVector<f64>| ct_transition_matrix(t, x[4]) * x;
            for col in 0..5 {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[col] += step;
                lo[col] -= step;
                let fd = (f(&hi) - f(&lo)) / (2.0 * step);
                for row in 0..5 {
                    assert!(
                        (jac[(row, col)] - fd[row]).abs() < 1e-6,
                        "({row},{col}): {} vs {}",
                        jac[(row, col)],
                        fd[row]
                    );
                }
            }
            assert_eq!(jac[(4, 0)], 0.0);
            assert_eq!(jac[(4, 4)], 1.0);
        }
    }

    #[test]
    fn ct_jacobian_zero_turn_rate_upper_block_is_cv() {
        let x = dvector![1.0, 2.0, 3.0, 4.0, 0.0];
        let jac = ct_jacobian(&x, 1.0);
        let cv = cv_transition_matrix(1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert!((jac[(i, j)] - cv[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fct_uses_deterministic_extent_evolution() {
        let (transition, measurement) = fct_model(1.0, 1.0, std::f64::consts::PI / 180.0).unwrap();
        assert_eq!(transition.extent_dof, Dof::Infinite);
        assert_eq!(measurement.matrix.nrows(), 2);
        assert_eq!(measurement.matrix.ncols(), 5);
        assert_eq!(transition.process_noise[(4, 4)], (std::f64::consts::PI / 180.0).powi(2));
    }

    #[test]
    fn ccv_and_fcv_posteriors_coincide_on_matched_priors() {
        // When the conditional implied covariance P (x) E[X] equals the
        // factorized P, both posterior means agree for the same measurement
        // set.
        let (ccv_t, ccv_h) = ccv_model(1.0, 1.0).unwrap();
        let (_fcv_t, fcv_h) = fcv_model(1.0, 1.0).unwrap();
        let _ = ccv_t;
        let v = 10.0;
        let big_v = dmatrix![8.0, 2.0; 2.0, 6.0];
        let expected_extent = &big_v / (v - 6.0);
        let p_factor = dmatrix![2.0, 0.4; 0.4, 1.0];

        let cond = conditional::ConditionalGiwState::new(
            dvector![1.0, 2.0, 0.5, -0.25],
            p_factor.clone(),
            v,
            big_v.clone(),
            2,
        )
        .unwrap();
        let fact = factorized::FactorizedGiwState::new(
            dvector![1.0, 2.0, 0.5, -0.25],
            p_factor.kronecker(&expected_extent),
            v,
            big_v,
            2,
        )
        .unwrap();

        let z = vec![dvector![1.5, 2.5], dvector![0.5, 1.5], dvector![1.2, 2.2]];
        let cond_post = conditional::update(&cond, &z, &ccv_h).unwrap();
        let fact_post = factorized::update(&fact, &z, &fcv_h).unwrap();
        assert!((cond_post.mean() - fact_post.mean()).amax() < 1e-8);
    }
}
