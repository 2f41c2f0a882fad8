//! Prediction, measurement update, and backward smoothing for the
//! factorized Gaussian inverse-Wishart state density, including the
//! third-order Taylor approximation of the extent-map expectations.
//!
//! The state density is `N(x; m, P) IW(X; v, V)` with fully decoupled
//! kinematics and extent. The transition moves the kinematics through a
//! differentiable map `f` with noise `Q`, and the extent through
//! `W(X'; n, M(x) X M(x)^T / n)` where `M` may depend on the state (a
//! rotation tied to the turn rate, for instance). Because `M` enters the
//! extent recursions inside expectations over the kinematic density, the
//! prediction needs `C1 = E[(M V M^T)^-1]` and `C2 = E[M V M^T]`, and the
//! smoothing needs `C3 = E[(M^-1 W M^-T)^-1]` and `C4 = E[M^-1 W M^-T]`;
//! all four are approximated by a Taylor expansion around the kinematic
//! mean.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::conditional::DOF_GUARD_EPS;
pub use crate::conditional::{ExtentSmoothing, SmoothingDiagnostics};
use crate::distributions::Gaussian;
use crate::error::{Error, Result};
use crate::linalg;
use crate::Dof;

/// Threshold below which `||C1 C2 - I||` (or `||C3 C4 - I||`) routes the
/// general branch to the constant-transform branch; the trace expression for
/// the effective dof has a removable singularity there.
pub const CONSTANT_MAP_TOLERANCE: f64 = 1e-9;

/// Relative eigenvalue floor applied to the smoothing scale gap
/// `W = V_{k+1|K} - V_{k+1|k}` before it enters the general branch.
pub const SCALE_GAP_FLOOR: f64 = 1e-9;

/// Relative trace threshold under which the extent increment is skipped
/// entirely.
pub const SCALE_GAP_SKIP: f64 = 1e-12;

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Factorized Gaussian inverse-Wishart state.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedGiwState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    extent_dof: f64,
    extent_scale: DMatrix<f64>,
    dim: usize,
}

impl FactorizedGiwState {
    pub fn new(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        extent_dof: f64,
        extent_scale: DMatrix<f64>,
        dim: usize,
    ) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariance {}x{} does not match state of length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let cov = linalg::symmetrize(&cov);
        let ev = linalg::sym_eigenvalues(&cov);
        if ev[0] < -linalg::SPD_TOLERANCE * ev[ev.len() - 1].abs().max(1.0) {
            return Err(Error::NotPositiveDefinite("kinematic covariance".into()));
        }
        let extent_scale = linalg::checked_spd(&extent_scale, dim, "extent scale")?;
        if !extent_dof.is_finite() || extent_dof <= 2.0 * dim as f64 {
            return Err(Error::DegenerateDof(format!(
                "extent dof must exceed 2d = {}, got {extent_dof}",
                2 * dim
            )));
        }
        Ok(Self {
            mean,
            cov,
            extent_dof,
            extent_scale,
            dim,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn extent_dof(&self) -> f64 {
        self.extent_dof
    }

    pub fn extent_scale(&self) -> &DMatrix<f64> {
        &self.extent_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kinematics(&self) -> Result<Gaussian> {
        Gaussian::new(self.mean.clone(), self.cov.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite())
            && self.cov.iter().all(|x| x.is_finite())
            && self.extent_dof.is_finite()
            && self.extent_scale.iter().all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Model traits
// ---------------------------------------------------------------------------

/// Differentiable motion map `f` with its Jacobian.
pub trait MotionMap: Send + Sync {
    fn propagate(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Linear motion `f(x) = F x`.
#[derive(Debug, Clone)]
pub struct LinearMotion(pub DMatrix<f64>);

impl MotionMap for LinearMotion {
    fn propagate(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// State-dependent extent transform `M(x)` with first and second
/// derivatives with respect to the state components.
pub trait MatrixMap: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `dM/dx[i]`.
    fn d1(&self, x: &DVector<f64>, i: usize) -> DMatrix<f64>;
    /// `d^2 M / dx[i] dx[j]`.
    fn d2(&self, x: &DVector<f64>, i: usize, j: usize) -> DMatrix<f64>;
    /// Whether `M` depends on state component `i` at all; lets the Taylor
    /// sum skip identically-zero derivative terms.
    fn depends_on(&self, i: usize) -> bool {
        let _ = i;
        true
    }
}

/// Extent transform: either a constant invertible matrix or a state map.
#[derive(Clone)]
pub enum ExtentMap {
    Constant(DMatrix<f64>),
    StateDependent(Arc<dyn MatrixMap>),
}

impl std::fmt::Debug for ExtentMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtentMap::Constant(a) => write!(f, "ExtentMap::Constant({a:?})"),
            ExtentMap::StateDependent(_) => write!(f, "ExtentMap::StateDependent(..)"),
        }
    }
}

/// Gaussian-Wishart transition for the factorized model.
#[derive(Debug, Clone)]
pub struct FactorizedTransitionModel {
    pub motion: Arc<dyn MotionMap>,
    /// Process noise `Q`, `n_x x n_x` positive semidefinite.
    pub process_noise: DMatrix<f64>,
    /// Extent evolution dof `n`.
    pub extent_dof: Dof,
    pub extent_map: ExtentMap,
}

impl std::fmt::Debug for dyn MotionMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MotionMap")
    }
}

impl FactorizedTransitionModel {
    pub fn linear(
        motion: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        extent_dof: Dof,
        extent_map: ExtentMap,
    ) -> Result<Self> {
        Self::new(
            Arc::new(LinearMotion(motion)),
            process_noise,
            extent_dof,
            extent_map,
        )
    }

    pub fn new(
        motion: Arc<dyn MotionMap>,
        process_noise: DMatrix<f64>,
        extent_dof: Dof,
        extent_map: ExtentMap,
    ) -> Result<Self> {
        if process_noise.nrows() != process_noise.ncols() {
            return Err(Error::DimensionMismatch(
                "process noise must be square".into(),
            ));
        }
        let noise_ev = linalg::sym_eigenvalues(&process_noise);
        if noise_ev[0] < -linalg::SPD_TOLERANCE * noise_ev[noise_ev.len() - 1].abs().max(1.0) {
            return Err(Error::NotPositiveDefinite("process noise".into()));
        }
        if let ExtentMap::Constant(a) = &extent_map {
            if a.clone().try_inverse().is_none() {
                return Err(Error::Singular("constant extent transform".into()));
            }
        }
        if let Dof::Finite(n) = extent_dof {
            if !n.is_finite() || n <= 0.0 {
                return Err(Error::DegenerateDof(format!(
                    "extent evolution dof must be positive, got {n}"
                )));
            }
        }
        Ok(Self {
            motion,
            process_noise: linalg::symmetrize(&process_noise),
            extent_dof,
            extent_map,
        })
    }
}

/// Linear measurement model `z = H x + noise`, with the measurement spread
/// `rho X + R` tied to the extent.
#[derive(Debug, Clone)]
pub struct FactorizedMeasurementModel {
    /// `H`, `d x n_x`.
    pub matrix: DMatrix<f64>,
    /// Extent scaling factor `rho > 0`.
    pub extent_scaling: f64,
    /// Sensor noise covariance `R`, `d x d` positive semidefinite.
    pub noise: DMatrix<f64>,
}

impl FactorizedMeasurementModel {
    pub fn new(matrix: DMatrix<f64>, extent_scaling: f64, noise: DMatrix<f64>) -> Result<Self> {
        if extent_scaling <= 0.0 {
            return Err(Error::InvalidParameter(
                "extent scaling factor must be positive".into(),
            ));
        }
        let d = matrix.nrows();
        if noise.nrows() != d || noise.ncols() != d {
            return Err(Error::DimensionMismatch(
                "measurement noise must match the measurement dimension".into(),
            ));
        }
        Ok(Self {
            matrix,
            extent_scaling,
            noise: linalg::symmetrize(&noise),
        })
    }
}

// ---------------------------------------------------------------------------
// Taylor expectation
// ---------------------------------------------------------------------------

/// Which expectation to approximate.
///
/// `C1`/`C2` take the state's own scale `V`; `C3`/`C4` take a caller-provided
/// gap matrix `W`. Each comes in the form the recursion consumes:
/// `C1 = E[(M V M^T)^-1]`, `C2 = E[M V M^T]`,
/// `C3 = E[(M^-1 W M^-T)^-1]`, `C4 = E[M^-1 W M^-T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationTarget {
    C1,
    C2,
    C3,
    C4,
}

/// Algebraically `C3` also equals `E[M^T W^-1 M]` and `C4` equals
/// `E[(M^T W^-1 M)^-1]`; the two readings differ once the Taylor truncation
/// is applied. The inverse-map forms are the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingExpectationForm {
    #[default]
    InverseMap,
    TransposeWeighted,
}

/// The factor `B(x)` entering `B J B^T`: the map itself, its inverse, or its
/// transpose, with derivatives propagated accordingly.
#[derive(Clone, Copy)]
enum Factor {
    Map,
    InverseMap,
    TransposeMap,
}

struct FactorAt {
    value: DMatrix<f64>,
    d1: Vec<Option<DMatrix<f64>>>,
    d2: std::collections::HashMap<(usize, usize), DMatrix<f64>>,
}

fn factor_at(map: &dyn MatrixMap, x: &DVector<f64>, which: Factor) -> Result<FactorAt> {
    let n = x.len();
    let m = map.value(x);
    let m_inv = match which {
        Factor::Map | Factor::TransposeMap => None,
        Factor::InverseMap => Some(
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("extent map at the expansion point".into()))?,
        ),
    };

    let mut d1: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(n);
    for i in 0..n {
        if !map.depends_on(i) {
            d1.push(None);
            continue;
        }
        let mi = map.d1(x, i);
        let bi = match which {
            Factor::Map => mi,
            Factor::TransposeMap => mi.transpose(),
            Factor::InverseMap => {
                let inv = m_inv.as_ref().expect("inverse present");
                -(inv * mi * inv)
            }
        };
        d1.push(Some(bi));
    }

    let mut d2 = std::collections::HashMap::new();
    for i in 0..n {
        if !map.depends_on(i) {
            continue;
        }
        for j in 0..n {
            if !map.depends_on(j) {
                continue;
            }
            let mij = map.d2(x, i, j);
            let bij = match which {
                Factor::Map => mij,
                Factor::TransposeMap => mij.transpose(),
                Factor::InverseMap => {
                    let inv = m_inv.as_ref().expect("inverse present");
                    let mi = map.d1(x, i);
                    let mj = map.d1(x, j);
                    inv * &mj * inv * &mi * inv + inv * &mi * inv * &mj * inv - inv * mij * inv
                }
            };
            d2.insert((i, j), bij);
        }
    }

    let value = match which {
        Factor::Map => m,
        Factor::TransposeMap => m.transpose(),
        Factor::InverseMap => m_inv.expect("inverse present"),
    };
    Ok(FactorAt { value, d1, d2 })
}

/// Second-order Taylor expectation of `G(x) = B(x) J B(x)^T` (optionally of
/// `G(x)^-1`) under `x ~ N(mean, cov)`:
/// `E[G] ≈ G(m) + (1/2) Σ_ij cov[i,j] d2G/dx[i]dx[j] |_m`,
/// with the product and inverse derivative identities
/// `dG = dB J B^T + B J dB^T` and
/// `d2(G^-1) = G^-1 dG_j G^-1 dG_i G^-1 - G^-1 d2G_ij G^-1
///           + G^-1 dG_i G^-1 dG_j G^-1`.
fn taylor_outer(
    factor: &FactorAt,
    inner: &DMatrix<f64>,
    mean_len: usize,
    cov: &DMatrix<f64>,
    invert: bool,
) -> Result<DMatrix<f64>> {
    let g0 = linalg::symmetrize(&(&factor.value * inner * factor.value.transpose()));
    let g0_inv = if invert {
        Some(linalg::spd_inverse(&g0)?)
    } else {
        None
    };
    let base = match &g0_inv {
        Some(inv) => inv.clone(),
        None => g0.clone(),
    };

    let mut correction = DMatrix::zeros(inner.nrows(), inner.ncols());
    let b0t = factor.value.transpose();
    let first = |i: usize| -> Option<DMatrix<f64>> {
        factor.d1[i]
            .as_ref()
            .map(|bi| bi * inner * &b0t + &factor.value * inner * bi.transpose())
    };

    for i in 0..mean_len {
        let gi = match first(i) {
            Some(g) => g,
            None => continue,
        };
        for j in 0..mean_len {
            let p = cov[(i, j)];
            if p == 0.0 {
                continue;
            }
            let gj = match first(j) {
                Some(g) => g,
                None => continue,
            };
            let bij = match factor.d2.get(&(i, j)) {
                Some(b) => b,
                None => continue,
            };
            let bi = factor.d1[i].as_ref().expect("active");
            let bj = factor.d1[j].as_ref().expect("active");
            let gij = bij * inner * &b0t
                + bj * inner * bi.transpose()
                + bi * inner * bj.transpose()
                + &factor.value * inner * bij.transpose();
            let hess = if let Some(g0_inv) = &g0_inv {
                g0_inv * &gj * g0_inv * &gi * g0_inv - g0_inv * &gij * g0_inv
                    + g0_inv * &gi * g0_inv * &gj * g0_inv
            } else {
                gij
            };
            correction += hess * (0.5 * p);
        }
    }
    Ok(linalg::symmetrize(&(base + correction)))
}

/// Taylor approximation of the extent-map expectations under
/// `x ~ N(mean, cov)`.
///
/// `inner` is the state's extent scale `V` for `C1`/`C2` and the smoothing
/// gap `W` for `C3`/`C4`. A constant extent map makes every derivative
/// vanish and the result exact.
pub fn taylor_expectation(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    inner: &DMatrix<f64>,
    model: &FactorizedTransitionModel,
    target: ExpectationTarget,
) -> Result<DMatrix<f64>> {
    taylor_expectation_with_form(
        mean,
        cov,
        inner,
        model,
        target,
        SmoothingExpectationForm::InverseMap,
    )
}

/// [`taylor_expectation`] with an explicit choice of the `C3`/`C4` reading.
pub fn taylor_expectation_with_form(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    inner: &DMatrix<f64>,
    model: &FactorizedTransitionModel,
    target: ExpectationTarget,
    form: SmoothingExpectationForm,
) -> Result<DMatrix<f64>> {
    let d = inner.nrows();
    let inner = linalg::checked_spd(inner, d, "expectation inner matrix")?;
    match &model.extent_map {
        ExtentMap::Constant(a) => {
            let a_inv = linalg::inverse(a)?;
            let g = match target {
                ExpectationTarget::C1 | ExpectationTarget::C2 => {
                    linalg::symmetrize(&(a * &inner * a.transpose()))
                }
                ExpectationTarget::C3 | ExpectationTarget::C4 => {
                    linalg::symmetrize(&(&a_inv * &inner * a_inv.transpose()))
                }
            };
            match target {
                ExpectationTarget::C2 | ExpectationTarget::C4 => Ok(g),
                ExpectationTarget::C1 | ExpectationTarget::C3 => linalg::spd_inverse(&g),
            }
        }
        ExtentMap::StateDependent(map) => {
            if map.dim() != d {
                return Err(Error::DimensionMismatch(
                    "extent map dimension does not match the inner matrix".into(),
                ));
            }
            let (factor_kind, inner_eff, invert) = match (target, form) {
                (ExpectationTarget::C1, _) => (Factor::Map, inner.clone(), true),
                (ExpectationTarget::C2, _) => (Factor::Map, inner.clone(), false),
                (ExpectationTarget::C3, SmoothingExpectationForm::InverseMap) => {
                    (Factor::InverseMap, inner.clone(), true)
                }
                (ExpectationTarget::C4, SmoothingExpectationForm::InverseMap) => {
                    (Factor::InverseMap, inner.clone(), false)
                }
                (ExpectationTarget::C3, SmoothingExpectationForm::TransposeWeighted) => {
                    (Factor::TransposeMap, linalg::spd_inverse(&inner)?, false)
                }
                (ExpectationTarget::C4, SmoothingExpectationForm::TransposeWeighted) => {
                    (Factor::TransposeMap, linalg::spd_inverse(&inner)?, true)
                }
            };
            let factor = factor_at(map.as_ref(), mean, factor_kind)?;
            taylor_outer(&factor, &inner_eff, mean.len(), cov, invert)
        }
    }
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

fn constant_branch_extent(
    v: f64,
    scale: &DMatrix<f64>,
    a: &DMatrix<f64>,
    extent_dof: Dof,
    d: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let transformed = linalg::symmetrize(&(a * scale * a.transpose()));
    match extent_dof {
        Dof::Infinite => Ok((v, transformed)),
        Dof::Finite(n) => {
            if n <= d + 1.0 {
                return Err(Error::DegenerateDof(format!(
                    "finite extent evolution dof must exceed d + 1 = {}, got {n}",
                    d + 1.0
                )));
            }
            let dof = d + 1.0 + (v - d - 1.0) / (1.0 + (v - 2.0 * d - 2.0) / n);
            let factor = 1.0 / (1.0 + (v - d - 1.0) / (n - d - 1.0));
            Ok((dof, transformed * factor))
        }
    }
}

/// Chapman-Kolmogorov prediction.
///
/// Kinematics: `m' = f(m)`, `P' = F̃ P F̃^T + Q` with `F̃` the Jacobian of `f`
/// at `m`. Extent with a constant transform `A`: the same dof/scale formulas
/// as the conditional model. Extent with a state-dependent map: the moments
/// `C1`, `C2` are taken under the filtered kinematic density, the effective
/// kinematic-induced dof is `s = (d+1)/d tr{C1 C2 (C1 C2 - I)^-1}`, and
/// `v' = d + 1 + η^-1 (v - d - 1)`,
/// `V' = η^-1 (1 - (d+1)/s)(1 - (d+1)/n) C2`,
/// `η = 1 + (v - 2d - 2)(1/s + 1/n - (d+1)/(ns))`;
/// all `1/n` terms vanish for infinite `n`. When `C1 C2` is numerically the
/// identity the map is effectively constant and the constant branch is used
/// with `A = M(m)`.
pub fn predict(
    state: &FactorizedGiwState,
    model: &FactorizedTransitionModel,
) -> Result<FactorizedGiwState> {
    let d = state.dim();
    let dd = d as f64;
    let mean = model.motion.propagate(state.mean());
    let jac = model.motion.jacobian(state.mean());
    if jac.nrows() != mean.len() || jac.ncols() != state.mean().len() {
        return Err(Error::DimensionMismatch("motion Jacobian shape".into()));
    }
    let cov = &jac * state.cov() * jac.transpose() + &model.process_noise;

    let v = state.extent_dof();
    let (dof, scale) = match &model.extent_map {
        ExtentMap::Constant(a) => {
            constant_branch_extent(v, state.extent_scale(), a, model.extent_dof, dd)?
        }
        ExtentMap::StateDependent(map) => {
            let c1 = taylor_expectation(
                state.mean(),
                state.cov(),
                state.extent_scale(),
                model,
                ExpectationTarget::C1,
            )?;
            let c2 = taylor_expectation(
                state.mean(),
                state.cov(),
                state.extent_scale(),
                model,
                ExpectationTarget::C2,
            )?;
            let product = &c1 * &c2;
            let gap = &product - DMatrix::identity(d, d);
            if gap.amax() < CONSTANT_MAP_TOLERANCE {
                // Removable singularity: the map is constant to numerical
                // precision, use its value at the mean as the transform.
                let a = map.value(state.mean());
                constant_branch_extent(v, state.extent_scale(), &a, model.extent_dof, dd)?
            } else {
                let gap_inv = gap
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("C1 C2 - I in the predicted dof".into()))?;
                let s = (dd + 1.0) / dd * (&product * gap_inv).trace();
                let inv_n = model.extent_dof.recip();
                let eta = 1.0 + (v - 2.0 * dd - 2.0) * (1.0 / s + inv_n - (dd + 1.0) * inv_n / s);
                if !eta.is_finite() || eta <= 0.0 {
                    return Err(Error::DegenerateDof(format!(
                        "predicted extent dof factor is not positive (eta = {eta})"
                    )));
                }
                let dof = dd + 1.0 + (v - dd - 1.0) / eta;
                let scale = c2 * ((1.0 - (dd + 1.0) / s) * (1.0 - (dd + 1.0) * inv_n) / eta);
                (dof, scale)
            }
        }
    };

    FactorizedGiwState::new(mean, cov, dof, scale, d)
}

// ---------------------------------------------------------------------------
// Update
// ---------------------------------------------------------------------------

/// Bayes update with a set of `d`-dimensional detections.
///
/// With centroid `z̄`, scatter `Z`, `X̂ = V/(v - 2d - 2)` and
/// `Y = rho X̂ + R`:
/// `ε = z̄ - H m`, `S = H P H^T + Y/|Z|`, `K = P H^T S^-1`,
/// `m' = m + K ε`, `P' = P - K S K^T`, `v' = v + |Z|`,
/// `V' = V + X̂^(1/2) S^(-1/2) ε ε^T S^(-1/2) X̂^(1/2)
///         + X̂^(1/2) Y^(-1/2) Z Y^(-1/2) X̂^(1/2)`,
/// with symmetric positive definite square roots throughout.
pub fn update(
    state: &FactorizedGiwState,
    measurements: &[DVector<f64>],
    model: &FactorizedMeasurementModel,
) -> Result<FactorizedGiwState> {
    if measurements.is_empty() {
        return Err(Error::EmptyMeasurementSet);
    }
    let d = state.dim();
    let dd = d as f64;
    if model.matrix.nrows() != d || model.matrix.ncols() != state.mean().len() {
        return Err(Error::DimensionMismatch(format!(
            "measurement matrix {}x{}, expected {d}x{}",
            model.matrix.nrows(),
            model.matrix.ncols(),
            state.mean().len()
        )));
    }
    for z in measurements {
        if z.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "measurement of length {}, expected {d}",
                z.len()
            )));
        }
    }
    if state.extent_dof() <= 2.0 * dd + 2.0 {
        return Err(Error::DegenerateDof(format!(
            "update needs v > 2d + 2 = {} for the expected extent, got {}",
            2.0 * dd + 2.0,
            state.extent_dof()
        )));
    }

    let count = measurements.len() as f64;
    let centroid = measurements.iter().fold(DVector::zeros(d), |acc, z| acc + z) / count;
    let scatter = measurements.iter().fold(DMatrix::zeros(d, d), |acc, z| {
        let dz = z - &centroid;
        acc + &dz * dz.transpose()
    });

    let expected_extent = state.extent_scale() / (state.extent_dof() - 2.0 * dd - 2.0);
    let spread = &expected_extent * model.extent_scaling + &model.noise;

    let h = &model.matrix;
    let innovation = &centroid - h * state.mean();
    let innovation_cov = linalg::symmetrize(&(h * state.cov() * h.transpose() + &spread / count));
    let innovation_cov_inv = linalg::spd_inverse(&innovation_cov)?;
    let gain = state.cov() * h.transpose() * &innovation_cov_inv;

    let mean = state.mean() + &gain * &innovation;
    let cov = state.cov() - &gain * &innovation_cov * gain.transpose();

    let extent_root = linalg::spd_sqrt(&expected_extent);
    let innovation_whitener = linalg::spd_inv_sqrt(&innovation_cov)?;
    let spread_whitener = linalg::spd_inv_sqrt(&spread)?;
    let whitened_innovation = &extent_root * &innovation_whitener * &innovation;
    let innovation_term = &whitened_innovation * whitened_innovation.transpose();
    let scatter_term = &extent_root
        * &spread_whitener
        * scatter
        * spread_whitener.transpose()
        * extent_root.transpose();

    let dof = state.extent_dof() + count;
    let scale = state.extent_scale() + innovation_term + scatter_term;

    FactorizedGiwState::new(
        mean,
        linalg::symmetrize(&cov),
        dof,
        linalg::symmetrize(&scale),
        d,
    )
}

// ---------------------------------------------------------------------------
// Smoothing
// ---------------------------------------------------------------------------

/// Rauch-Tung-Striebel backward step on the kinematic factor alone:
/// `G = P_{k|k} F̃^T P_{k+1|k}^-1`,
/// `m_{k|K} = m_{k|k} + G (m_{k+1|K} - m_{k+1|k})`,
/// `P_{k|K} = P_{k|k} - G (P_{k+1|k} - P_{k+1|K}) G^T`.
/// The Jacobian is evaluated at the filtered mean.
pub fn kinematic_smooth_step(
    filtered: &FactorizedGiwState,
    predicted_next: &FactorizedGiwState,
    smoothed_next_kinematics: &Gaussian,
    model: &FactorizedTransitionModel,
) -> Result<Gaussian> {
    let jac = model.motion.jacobian(filtered.mean());
    let pred_cov_inv = predicted_next
        .cov()
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| predicted_next.cov().clone().try_inverse())
        .ok_or_else(|| Error::Singular("predicted kinematic covariance".into()))?;
    let gain = filtered.cov() * jac.transpose() * pred_cov_inv;
    let mean = filtered.mean() + &gain * (smoothed_next_kinematics.mean() - predicted_next.mean());
    let cov = filtered.cov()
        - &gain * (predicted_next.cov() - smoothed_next_kinematics.cov()) * gain.transpose();
    Gaussian::new(mean, linalg::symmetrize(&cov))
}

/// Floors the smoothing scale gap `W` onto the positive definite cone.
///
/// Eigenvalues below `SCALE_GAP_FLOOR * trace(reference)` are raised to that
/// floor. Returns `None` when the positive part of `W` is negligible
/// (`trace < SCALE_GAP_SKIP * trace(reference)`), in which case the extent
/// increment is skipped altogether.
fn floor_scale_gap(gap: &DMatrix<f64>, reference_trace: f64) -> Option<DMatrix<f64>> {
    let eig = linalg::symmetrize(gap).symmetric_eigen();
    let positive_trace: f64 = eig.eigenvalues.iter().map(|x| x.max(0.0)).sum();
    if positive_trace < SCALE_GAP_SKIP * reference_trace {
        return None;
    }
    let floor = SCALE_GAP_FLOOR * reference_trace;
    if eig.eigenvalues.iter().all(|&x| x >= floor) {
        return Some(linalg::symmetrize(gap));
    }
    let floored = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(floor)));
    Some(linalg::symmetrize(
        &(&eig.eigenvectors * floored * eig.eigenvectors.transpose()),
    ))
}

/// One backward smoothing step.
///
/// The kinematic part must already have been smoothed (see
/// [`kinematic_smooth_step`]) because the extent expectations `C3`/`C4` are
/// taken under the smoothed kinematic density of the same step. Extent with
/// a constant transform follows the conditional-model recursion; a
/// state-dependent map uses, with `W = V_{k+1|K} - V_{k+1|k}`,
/// `w = v_{k+1|K} - v_{k+1|k}`, `η1 = 1 + (w - 3(d+1))/n`,
/// `g = η1^-1 (w - 2(d+1)^2/n)`,
/// `h = (d+1)/d tr{C3 C4 (C3 C4 - I)^-1}`,
/// `η2 = 1 + (g - 3d - 3)/(h + d + 1)`, `η3 = 1 + (g - d - 1)/(h - d - 1)`:
/// `v_{k|K} = v_{k|k} + η2^-1 (g - 2(d+1)^2/(h + d + 1))`,
/// `V_{k|K} = V_{k|k} + η3^-1 C4`.
pub fn smooth_step(
    filtered: &FactorizedGiwState,
    predicted_next: &FactorizedGiwState,
    smoothed_next: &FactorizedGiwState,
    model: &FactorizedTransitionModel,
    smoothed_kinematics: &Gaussian,
) -> Result<(FactorizedGiwState, ExtentSmoothing)> {
    smooth_step_with_form(
        filtered,
        predicted_next,
        smoothed_next,
        model,
        smoothed_kinematics,
        SmoothingExpectationForm::InverseMap,
    )
}

/// [`smooth_step`] with an explicit choice of the `C3`/`C4` reading.
pub fn smooth_step_with_form(
    filtered: &FactorizedGiwState,
    predicted_next: &FactorizedGiwState,
    smoothed_next: &FactorizedGiwState,
    model: &FactorizedTransitionModel,
    smoothed_kinematics: &Gaussian,
    form: SmoothingExpectationForm,
) -> Result<(FactorizedGiwState, ExtentSmoothing)> {
    let d = filtered.dim();
    let dd = d as f64;
    if predicted_next.dim() != d || smoothed_next.dim() != d {
        return Err(Error::DimensionMismatch(
            "smoothing inputs must share one extent dimension".into(),
        ));
    }
    if smoothed_kinematics.dim() != filtered.mean().len() {
        return Err(Error::DimensionMismatch(
            "smoothed kinematics do not match the state".into(),
        ));
    }

    let w = smoothed_next.extent_dof() - predicted_next.extent_dof();
    let gap = smoothed_next.extent_scale() - predicted_next.extent_scale();
    // Zero incoming gain: the exact smoothed extent is the filtered one (the
    // approximation chain would leak dof through its finite-n correction).
    let zero_gain = w.abs() <= 1e-12 * predicted_next.extent_dof().max(1.0)
        && gap.amax() <= 1e-12 * predicted_next.extent_scale().trace();

    let mut outcome = ExtentSmoothing::Applied;
    let (dof, scale) = 'extent: {
        let fallback = (filtered.extent_dof(), filtered.extent_scale().clone());
        if zero_gain {
            outcome = ExtentSmoothing::SkippedDegenerateGain;
            break 'extent fallback;
        }
        match &model.extent_map {
            ExtentMap::Constant(a) => {
                let eta = match model.extent_dof {
                    Dof::Infinite => 1.0,
                    Dof::Finite(n) => 1.0 + (w - 3.0 * (dd + 1.0)) / n,
                };
                if !eta.is_finite() || eta <= 0.0 {
                    outcome = ExtentSmoothing::FellBackToFiltered;
                    break 'extent fallback;
                }
                let correction = 2.0 * (dd + 1.0) * (dd + 1.0) * model.extent_dof.recip();
                let a_inv = linalg::inverse(a)?;
                let dof = filtered.extent_dof() + (w - correction) / eta;
                let scale = linalg::symmetrize(
                    &(filtered.extent_scale() + (&a_inv * &gap * a_inv.transpose()) / eta),
                );
                if dof > 2.0 * dd + DOF_GUARD_EPS && linalg::is_positive_definite(&scale) {
                    (dof, scale)
                } else {
                    outcome = ExtentSmoothing::FellBackToFiltered;
                    fallback
                }
            }
            ExtentMap::StateDependent(map) => {
                let reference_trace = predicted_next.extent_scale().trace();
                let floored = match floor_scale_gap(&gap, reference_trace) {
                    Some(g) => g,
                    None => {
                        outcome = ExtentSmoothing::SkippedDegenerateGain;
                        break 'extent fallback;
                    }
                };
                let c3 = taylor_expectation_with_form(
                    smoothed_kinematics.mean(),
                    smoothed_kinematics.cov(),
                    &floored,
                    model,
                    ExpectationTarget::C3,
                    form,
                )?;
                let c4 = taylor_expectation_with_form(
                    smoothed_kinematics.mean(),
                    smoothed_kinematics.cov(),
                    &floored,
                    model,
                    ExpectationTarget::C4,
                    form,
                )?;

                let inv_n = model.extent_dof.recip();
                let eta1 = 1.0 + (w - 3.0 * (dd + 1.0)) * inv_n;
                if !eta1.is_finite() || eta1 <= 0.0 {
                    outcome = ExtentSmoothing::FellBackToFiltered;
                    break 'extent fallback;
                }
                let g = (w - 2.0 * (dd + 1.0) * (dd + 1.0) * inv_n) / eta1;

                let product = &c3 * &c4;
                let id_gap = &product - DMatrix::identity(d, d);
                if id_gap.amax() < CONSTANT_MAP_TOLERANCE {
                    // The map is effectively constant over the smoothed
                    // density; route to the constant branch with A = M(m).
                    let a = map.value(smoothed_kinematics.mean());
                    let a_inv = linalg::inverse(&a)?;
                    let dof = filtered.extent_dof() + g;
                    let scale = linalg::symmetrize(
                        &(filtered.extent_scale() + &a_inv * &gap * a_inv.transpose()),
                    );
                    if dof > 2.0 * dd + DOF_GUARD_EPS && linalg::is_positive_definite(&scale) {
                        (dof, scale)
                    } else {
                        outcome = ExtentSmoothing::FellBackToFiltered;
                        fallback
                    }
                } else {
                    let id_gap_inv = match id_gap.try_inverse() {
                        Some(m) => m,
                        None => {
                            outcome = ExtentSmoothing::FellBackToFiltered;
                            break 'extent fallback;
                        }
                    };
                    let h = (dd + 1.0) / dd * (&product * id_gap_inv).trace();
                    let eta2 = 1.0 + (g - 3.0 * dd - 3.0) / (h + dd + 1.0);
                    let eta3 = 1.0 + (g - dd - 1.0) / (h - dd - 1.0);
                    if !eta2.is_finite() || eta2 <= 0.0 || !eta3.is_finite() || eta3 <= 0.0 {
                        outcome = ExtentSmoothing::FellBackToFiltered;
                        break 'extent fallback;
                    }
                    let dof = filtered.extent_dof()
                        + (g - 2.0 * (dd + 1.0) * (dd + 1.0) / (h + dd + 1.0)) / eta2;
                    let scale = linalg::symmetrize(&(filtered.extent_scale() + &c4 / eta3));
                    if dof > 2.0 * dd + DOF_GUARD_EPS && linalg::is_positive_definite(&scale) {
                        (dof, scale)
                    } else {
                        outcome = ExtentSmoothing::FellBackToFiltered;
                        fallback
                    }
                }
            }
        }
    };

    let state = FactorizedGiwState::new(
        smoothed_kinematics.mean().clone(),
        smoothed_kinematics.cov().clone(),
        dof,
        scale,
        d,
    )?;
    Ok((state, outcome))
}

/// Full backward pass over aligned filtered/predicted sequences.
///
/// Within each step the kinematic marginal is smoothed first; the extent
/// update then takes its `C3`/`C4` expectations under that freshly smoothed
/// kinematic density.
pub fn smooth_trajectory(
    filtered: &[FactorizedGiwState],
    predicted: &[FactorizedGiwState],
    model: &FactorizedTransitionModel,
) -> Result<(Vec<FactorizedGiwState>, SmoothingDiagnostics)> {
    if filtered.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "filtered has {} steps, predicted {}",
            filtered.len(),
            predicted.len()
        )));
    }
    if filtered.is_empty() {
        return Err(Error::LengthMismatch("empty trajectory".into()));
    }
    let k_max = filtered.len() - 1;
    let mut smoothed = vec![filtered[k_max].clone()];
    let mut diagnostics = SmoothingDiagnostics::default();
    for k in (0..k_max).rev() {
        let next = smoothed.last().expect("nonempty").clone();
        let kin =
            kinematic_smooth_step(&filtered[k], &predicted[k + 1], &next.kinematics()?, model)?;
        let (state, outcome) = smooth_step(&filtered[k], &predicted[k + 1], &next, model, &kin)?;
        diagnostics.record(outcome);
        smoothed.push(state);
    }
    smoothed.reverse();
    Ok((smoothed, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RotationExtentMap;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    fn random_spd(d: usize, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() + eye(d) * 0.5
    }

    fn state4(
        m: DVector<f64>,
        p: DMatrix<f64>,
        v: f64,
        big_v: DMatrix<f64>,
    ) -> FactorizedGiwState {
        FactorizedGiwState::new(m, p, v, big_v, 2).unwrap()
    }

    fn identity_model(dof: Dof, n_x: usize) -> FactorizedTransitionModel {
        FactorizedTransitionModel::linear(
            eye(n_x),
            DMatrix::zeros(n_x, n_x),
            dof,
            ExtentMap::Constant(eye(2)),
        )
        .unwrap()
    }

    fn rotation_model(dof: Dof, n_x: usize, t: f64) -> FactorizedTransitionModel {
        FactorizedTransitionModel::linear(
            eye(n_x),
            DMatrix::zeros(n_x, n_x),
            dof,
            ExtentMap::StateDependent(Arc::new(RotationExtentMap::new(t, n_x - 1))),
        )
        .unwrap()
    }

    fn h2() -> FactorizedMeasurementModel {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        FactorizedMeasurementModel::new(h, 1.0, DMatrix::zeros(2, 2)).unwrap()
    }

    #[test]
    fn taylor_constant_map_is_exact() {
        let model = identity_model(Dof::Finite(100.0), 4);
        let v = dmatrix![4.0, 1.0; 1.0, 2.0];
        let c2 = taylor_expectation(
            &DVector::zeros(4),
            &eye(4),
            &v,
            &model,
            ExpectationTarget::C2,
        )
        .unwrap();
        assert!((c2.clone() - &v).amax() < 1e-14);
        let c1 = taylor_expectation(
            &DVector::zeros(4),
            &eye(4),
            &v,
            &model,
            ExpectationTarget::C1,
        )
        .unwrap();
        assert!(((c1 * v) - eye(2)).amax() < 1e-12);
    }

    #[test]
    fn taylor_zero_covariance_is_value_at_mean() {
        let t = 1.0;
        let model = rotation_model(Dof::Infinite, 5, t);
        let v = dmatrix![4.0, 0.0; 0.0, 1.0];
        let omega: f64 = 0.3;
        let mean = dvector![0.0, 0.0, 1.0, 0.0, omega];
        let c2 = taylor_expectation(
            &mean,
            &DMatrix::zeros(5, 5),
            &v,
            &model,
            ExpectationTarget::C2,
        )
        .unwrap();
        let (s, c) = (t * omega).sin_cos();
        let rot = dmatrix![c, -s; s, c];
        let expect = &rot * &v * rot.transpose();
        assert!((c2 - expect).amax() < 1e-14);
    }

    #[test]
    fn taylor_matches_monte_carlo_for_rotation() {
        // CT rotation, V = diag(4, 1), var(omega) = (1 deg)^2: each entry of
        // C2 within 0.5% of a sampling estimate.
        let t = 1.0;
        let model = rotation_model(Dof::Infinite, 5, t);
        let v = dmatrix![4.0, 0.0; 0.0, 1.0];
        let mean = dvector![0.0, 0.0, 1.0, 0.0, 0.1];
        let sigma = (1.0f64).to_radians();
        let mut cov = DMatrix::zeros(5, 5);
        cov[(4, 4)] = sigma * sigma;

        let c2 = taylor_expectation(&mean, &cov, &v, &model, ExpectationTarget::C2).unwrap();

        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 1_000_000usize;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let w: f64 = mean[4] + sigma * rng.sample::<f64, _>(StandardNormal);
            let (s, c) = (t * w).sin_cos();
            let rot = dmatrix![c, -s; s, c];
            acc += &rot * &v * rot.transpose();
        }
        let mc = acc / n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let rel = (c2[(i, j)] - mc[(i, j)]).abs() / mc[(i, j)].abs().max(1e-3);
                assert!(
                    rel < 0.005,
                    "entry ({i},{j}): taylor {} mc {}",
                    c2[(i, j)],
                    mc[(i, j)]
                );
            }
        }
    }

    #[test]
    fn predict_identity_limit() {
        let x = state4(dvector![1.0, 2.0, 3.0, 4.0], eye(4), 12.0, 2.0 * eye(2));
        let out = predict(&x, &identity_model(Dof::Infinite, 4)).unwrap();
        assert_eq!(out.mean(), x.mean());
        assert!((out.cov() - x.cov()).amax() < 1e-15);
        assert_eq!(out.extent_dof(), x.extent_dof());
        assert!((out.extent_scale() - x.extent_scale()).amax() < 1e-15);
    }

    #[test]
    fn predict_constant_branch_matches_conditional_arithmetic() {
        let x = state4(DVector::zeros(4), eye(4), 20.0, eye(2));
        let out = predict(&x, &identity_model(Dof::Finite(100.0), 4)).unwrap();
        assert!((out.extent_dof() - (3.0 + 1700.0 / 114.0)).abs() < 1e-12);
        assert!((out.extent_scale() - eye(2) * (97.0 / 114.0)).amax() < 1e-12);
    }

    #[test]
    fn predict_general_branch_agrees_with_constant_branch_for_near_constant_map() {
        // A rotation map over a kinematic density with tiny turn-rate
        // variance is constant up to O(var); the general branch must agree
        // with the constant branch evaluated at the mean rotation.
        let t = 1.0;
        let omega = 0.2f64;
        let mut cov = 0.5 * eye(5);
        cov[(4, 4)] = 1e-6 * 1e-6;
        let x = FactorizedGiwState::new(
            dvector![0.0, 0.0, 1.0, 0.0, omega],
            cov,
            20.0,
            dmatrix![4.0, 0.5; 0.5, 1.0],
            2,
        )
        .unwrap();
        let general = predict(&x, &rotation_model(Dof::Finite(100.0), 5, t)).unwrap();

        let (s, c) = (t * omega).sin_cos();
        let rot = dmatrix![c, -s; s, c];
        let constant = FactorizedTransitionModel::linear(
            eye(5),
            DMatrix::zeros(5, 5),
            Dof::Finite(100.0),
            ExtentMap::Constant(rot),
        )
        .unwrap();
        let reference = predict(&x, &constant).unwrap();
        assert!((general.extent_dof() - reference.extent_dof()).abs() < 1e-6);
        assert!((general.extent_scale() - reference.extent_scale()).amax() < 1e-6);
    }

    #[test]
    fn predict_general_branch_exactly_constant_map_routes_to_constant_branch() {
        let t = 1.0;
        let mut cov = 0.5 * eye(5);
        cov[(4, 4)] = 0.0; // no turn-rate uncertainty at all
        let x = FactorizedGiwState::new(
            dvector![0.0, 0.0, 1.0, 0.0, 0.2],
            cov,
            20.0,
            dmatrix![4.0, 0.5; 0.5, 1.0],
            2,
        )
        .unwrap();
        let general = predict(&x, &rotation_model(Dof::Finite(100.0), 5, t)).unwrap();
        let (s, c) = (t * 0.2f64).sin_cos();
        let rot = dmatrix![c, -s; s, c];
        let constant = FactorizedTransitionModel::linear(
            eye(5),
            DMatrix::zeros(5, 5),
            Dof::Finite(100.0),
            ExtentMap::Constant(rot),
        )
        .unwrap();
        let reference = predict(&x, &constant).unwrap();
        assert!((general.extent_dof() - reference.extent_dof()).abs() < 1e-8);
        assert!((general.extent_scale() - reference.extent_scale()).amax() < 1e-8);
    }

    #[test]
    fn update_zero_innovation() {
        let x = state4(dvector![1.0, 2.0, 0.0, 0.0], eye(4), 10.0, 4.0 * eye(2));
        let z = vec![dvector![1.0, 2.0]];
        let out = update(&x, &z, &h2()).unwrap();
        assert!((out.mean() - x.mean()).amax() < 1e-14);
        assert_eq!(out.extent_dof(), 11.0);
        assert!((out.extent_scale() - x.extent_scale()).amax() < 1e-14);
    }

    #[test]
    fn update_errors() {
        let x = state4(DVector::zeros(4), eye(4), 10.0, eye(2));
        assert!(matches!(
            update(&x, &[], &h2()),
            Err(Error::EmptyMeasurementSet)
        ));
        let tight = state4(DVector::zeros(4), eye(4), 5.5, eye(2));
        assert!(matches!(
            update(&tight, &[dvector![0.0, 0.0]], &h2()),
            Err(Error::DegenerateDof(_))
        ));
    }

    #[test]
    fn update_dof_bookkeeping_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..100 {
            let x = state4(
                DVector::from_fn(4, |_, _| rng.sample(StandardNormal)),
                random_spd(4, &mut rng),
                6.5 + rng.random::<f64>() * 20.0,
                random_spd(2, &mut rng),
            );
            let count = 1 + (rng.random::<f64>() * 12.0) as usize;
            let z: Vec<_> = (0..count)
                .map(|_| DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let out = update(&x, &z, &h2()).unwrap();
            assert_eq!(out.extent_dof(), x.extent_dof() + count as f64);
        }
    }

    #[test]
    fn update_zero_innovation_keeps_mean_fixed_with_scatter_only_increment() {
        // Several measurements whose centroid sits exactly at the predicted
        // position: the mean must not move yet the scatter still feeds V.
        let x = state4(dvector![1.0, 2.0, 0.0, 0.0], eye(4), 10.0, 4.0 * eye(2));
        let z = vec![dvector![2.0, 2.0], dvector![0.0, 2.0]];
        let out = update(&x, &z, &h2()).unwrap();
        assert!((out.mean() - x.mean()).amax() < 1e-12);
        assert!(out.extent_scale()[(0, 0)] > x.extent_scale()[(0, 0)]);
    }

    #[test]
    fn update_supports_scaled_spread_and_sensor_noise() {
        // rho scales the extent's contribution to the measurement spread and
        // R adds sensor noise; the bookkeeping and shapes stay intact.
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        let model = FactorizedMeasurementModel::new(h, 3.0, 0.3 * eye(2)).unwrap();
        let x = state4(dvector![1.0, 2.0, 0.0, 0.0], eye(4), 12.0, 4.0 * eye(2));
        let z = vec![dvector![1.4, 2.1], dvector![0.8, 1.7], dvector![1.1, 2.3]];
        let out = update(&x, &z, &model).unwrap();
        assert_eq!(out.extent_dof(), 15.0);
        assert!(out.is_finite());
        assert!(linalg::is_positive_definite(out.extent_scale()));
        // rho = 3 plus sensor noise inflates the innovation spread, so the
        // mean moves less than with the noiseless unit-rho model.
        let tight = FactorizedMeasurementModel::new(
            {
                let mut h = DMatrix::zeros(2, 4);
                h[(0, 0)] = 1.0;
                h[(1, 1)] = 1.0;
                h
            },
            1.0,
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let out_tight = update(&x, &z, &tight).unwrap();
        let centroid = dvector![(1.4 + 0.8 + 1.1) / 3.0, (2.1 + 1.7 + 2.3) / 3.0];
        let moved = (out.mean().rows(0, 2) - x.mean().rows(0, 2)).norm();
        let moved_tight = (out_tight.mean().rows(0, 2) - x.mean().rows(0, 2)).norm();
        let gap = (centroid - x.mean().rows(0, 2)).norm();
        assert!(moved < moved_tight && moved_tight < gap);
    }

    #[test]
    fn repeated_updates_recover_the_true_extent() {
        // Static object, measurements drawn from the true spread; the
        // expected extent converges toward truth.
        let mut rng = ChaCha12Rng::seed_from_u64(4242);
        let truth = dmatrix![4.0, 0.0; 0.0, 1.0];
        let truth_root = linalg::spd_sqrt(&truth);
        let model = identity_model(Dof::Finite(100.0), 4);
        let h = h2();
        let mut state = state4(DVector::zeros(4), 10.0 * eye(4), 10.0, 4.0 * eye(2));
        for _ in 0..100 {
            state = predict(&state, &model).unwrap();
            let z: Vec<_> = (0..10)
                .map(|_| {
                    &truth_root * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal))
                })
                .collect();
            state = update(&state, &z, &h).unwrap();
        }
        let estimate = state.extent_scale() / (state.extent_dof() - 6.0);
        assert!(
            (estimate.clone() - &truth).amax() < 0.6,
            "estimate {estimate}"
        );
        // Regression pin for the fixed seed.
        assert!((estimate[(0, 0)] - 3.507017532391146).abs() < 1e-9);
        assert!((estimate[(0, 1)] - -9.244867322017639e-3).abs() < 1e-9);
        assert!((estimate[(1, 1)] - 0.9948519571048373).abs() < 1e-9);
    }

    #[test]
    fn smooth_step_no_information_limit_constant_branch() {
        let filtered = state4(
            dvector![1.0, -1.0, 0.5, 0.25],
            random_spd(4, &mut ChaCha12Rng::seed_from_u64(31)),
            12.0,
            dmatrix![3.0, 0.5; 0.5, 2.0],
        );
        let model = FactorizedTransitionModel::linear(
            dmatrix![1.0, 0.0, 1.0, 0.0;
                     0.0, 1.0, 0.0, 1.0;
                     0.0, 0.0, 1.0, 0.0;
                     0.0, 0.0, 0.0, 1.0],
            0.1 * eye(4),
            Dof::Infinite,
            ExtentMap::Constant(eye(2)),
        )
        .unwrap();
        let predicted = predict(&filtered, &model).unwrap();
        let kin = kinematic_smooth_step(
            &filtered,
            &predicted,
            &predicted.kinematics().unwrap(),
            &model,
        )
        .unwrap();
        let (out, outcome) = smooth_step(&filtered, &predicted, &predicted, &model, &kin).unwrap();
        assert_eq!(outcome, ExtentSmoothing::SkippedDegenerateGain);
        assert!((out.mean() - filtered.mean()).amax() < 1e-9);
        assert!((out.cov() - filtered.cov()).amax() < 1e-9);
        assert!((out.extent_dof() - filtered.extent_dof()).abs() < 1e-9);
        assert!((out.extent_scale() - filtered.extent_scale()).amax() < 1e-9);
    }

    #[test]
    fn smooth_step_no_information_limit_general_branch() {
        // With smoothed == predicted the scale gap is exactly zero; the
        // general branch skips the extent increment and returns the filtered
        // state.
        let filtered = FactorizedGiwState::new(
            dvector![0.0, 0.0, 1.0, 0.0, 0.1],
            0.5 * eye(5),
            12.0,
            dmatrix![3.0, 0.5; 0.5, 2.0],
            2,
        )
        .unwrap();
        let model = rotation_model(Dof::Infinite, 5, 1.0);
        let predicted = predict(&filtered, &model).unwrap();
        let kin = kinematic_smooth_step(
            &filtered,
            &predicted,
            &predicted.kinematics().unwrap(),
            &model,
        )
        .unwrap();
        let (out, outcome) = smooth_step(&filtered, &predicted, &predicted, &model, &kin).unwrap();
        assert_eq!(outcome, ExtentSmoothing::SkippedDegenerateGain);
        assert!((out.mean() - filtered.mean()).amax() < 1e-9);
        assert!((out.cov() - filtered.cov()).amax() < 1e-9);
        assert!((out.extent_dof() - filtered.extent_dof()).abs() < 1e-9);
        assert!((out.extent_scale() - filtered.extent_scale()).amax() < 1e-9);
    }

    #[test]
    fn smooth_step_general_branch_frozen_arithmetic() {
        // Rotation map with mean turn rate zero and var(omega) = 0.01,
        // W = diag(1, 2), w = 6, n = infinite. Hand-computed through the
        // Taylor formulas:
        //   C4 = diag(101/100, 199/100), C3 = diag(199/200, 101/200),
        //   h = 20099/33, eta2 = 20099/20198, eta3 = 20099/20000,
        //   dof increment = 6 exactly,
        //   scale increment = diag(20200/20099, 39800/20099).
        let mut p = eye(5);
        p[(4, 4)] = 0.01;
        let filtered = FactorizedGiwState::new(
            dvector![1.0, 2.0, 3.0, 4.0, 0.0],
            p.clone(),
            20.0,
            dmatrix![5.0, 0.0; 0.0, 7.0],
            2,
        )
        .unwrap();
        let predicted_next = FactorizedGiwState::new(
            dvector![1.0, 2.0, 3.0, 4.0, 0.0],
            p.clone(),
            10.0,
            eye(2),
            2,
        )
        .unwrap();
        let smoothed_next = FactorizedGiwState::new(
            dvector![1.0, 2.0, 3.0, 4.0, 0.0],
            p.clone(),
            16.0,
            dmatrix![2.0, 0.0; 0.0, 3.0],
            2,
        )
        .unwrap();
        let model = rotation_model(Dof::Infinite, 5, 1.0);
        let kin = Gaussian::new(filtered.mean().clone(), p).unwrap();
        let (out, outcome) =
            smooth_step(&filtered, &predicted_next, &smoothed_next, &model, &kin).unwrap();
        assert_eq!(outcome, ExtentSmoothing::Applied);
        assert!(
            (out.extent_dof() - 26.0).abs() < 1e-10,
            "{}",
            out.extent_dof()
        );
        let expect = dmatrix![5.0 + 20200.0 / 20099.0, 0.0; 0.0, 7.0 + 39800.0 / 20099.0];
        assert!((out.extent_scale() - expect).amax() < 1e-10);
    }

    #[test]
    fn smooth_step_general_branch_with_identity_map_matches_constant_form() {
        // M identically I forced through the state-dependent path: C3 C4 = I
        // routes to the constant branch, so with n = infinite the increments
        // are w and the raw gap.
        struct IdentityMap;
        impl MatrixMap for IdentityMap {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::identity(2, 2)
            }
            fn d1(&self, _x: &DVector<f64>, _i: usize) -> DMatrix<f64> {
                DMatrix::zeros(2, 2)
            }
            fn d2(&self, _x: &DVector<f64>, _i: usize, _j: usize) -> DMatrix<f64> {
                DMatrix::zeros(2, 2)
            }
        }
        let model = FactorizedTransitionModel::linear(
            eye(4),
            DMatrix::zeros(4, 4),
            Dof::Infinite,
            ExtentMap::StateDependent(Arc::new(IdentityMap)),
        )
        .unwrap();
        let filtered = state4(
            DVector::zeros(4),
            eye(4),
            20.0,
            dmatrix![5.0, 0.0; 0.0, 7.0],
        );
        let predicted_next = state4(DVector::zeros(4), eye(4), 10.0, eye(2));
        let smoothed_next = state4(
            DVector::zeros(4),
            eye(4),
            16.0,
            dmatrix![2.0, 0.0; 0.0, 3.0],
        );
        let kin = Gaussian::new(DVector::zeros(4), eye(4)).unwrap();
        let (out, outcome) =
            smooth_step(&filtered, &predicted_next, &smoothed_next, &model, &kin).unwrap();
        assert_eq!(outcome, ExtentSmoothing::Applied);
        // g = w = 6 at infinite n, increment = diag(1, 2).
        assert!((out.extent_dof() - 26.0).abs() < 1e-12);
        let expect = dmatrix![6.0, 0.0; 0.0, 9.0];
        assert!((out.extent_scale() - expect).amax() < 1e-12);
    }

    #[test]
    fn kinematic_smoother_matches_reference_rts_on_linear_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..100 {
            let f = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.5;
            let q = random_spd(4, &mut rng);
            let model = FactorizedTransitionModel::linear(
                f.clone(),
                q.clone(),
                Dof::Finite(100.0),
                ExtentMap::Constant(eye(2)),
            )
            .unwrap();
            let filtered = state4(
                DVector::from_fn(4, |_, _| rng.sample(StandardNormal)),
                random_spd(4, &mut rng),
                12.0,
                eye(2),
            );
            let p_pred = &f * filtered.cov() * f.transpose() + &q;
            let shrink = 0.2 + 0.7 * rng.random::<f64>();
            let predicted_next = state4(
                DVector::from_fn(4, |_, _| rng.sample(StandardNormal)),
                p_pred.clone(),
                11.0,
                eye(2),
            );
            let smoothed_kin = Gaussian::new(
                DVector::from_fn(4, |_, _| rng.sample(StandardNormal)),
                &p_pred * shrink,
            )
            .unwrap();
            let out =
                kinematic_smooth_step(&filtered, &predicted_next, &smoothed_kin, &model).unwrap();

            let gain = filtered.cov() * f.transpose() * p_pred.clone().try_inverse().unwrap();
            let m_ref = filtered.mean() + &gain * (smoothed_kin.mean() - predicted_next.mean());
            let p_ref =
                filtered.cov() - &gain * (&p_pred - smoothed_kin.cov()) * gain.transpose();
            assert!((out.mean() - m_ref).amax() < 1e-9);
            assert!((out.cov() - linalg::symmetrize(&p_ref)).amax() < 1e-9);
        }
    }

    #[test]
    fn smooth_trajectory_boundaries_and_seed() {
        let model = identity_model(Dof::Finite(100.0), 4);
        let single = vec![state4(DVector::zeros(4), eye(4), 10.0, eye(2))];
        let (smoothed, _) = smooth_trajectory(&single, &single, &model).unwrap();
        assert_eq!(smoothed.len(), 1);
        assert_eq!(smoothed[0], single[0]);

        let longer = vec![
            state4(DVector::zeros(4), eye(4), 10.0, eye(2)),
            state4(DVector::zeros(4), eye(4), 10.0, eye(2)),
        ];
        assert!(matches!(
            smooth_trajectory(&single, &longer, &model),
            Err(Error::LengthMismatch(_))
        ));

        let (smoothed, _) = smooth_trajectory(&longer, &longer, &model).unwrap();
        assert_eq!(smoothed.last().unwrap(), longer.last().unwrap());
    }

    #[test]
    fn alternative_smoothing_expectation_form_agrees_to_round_off() {
        // C3/C4 admit two algebraically equal readings. Because the matrix
        // derivative identities are exact Hessians of the same function, the
        // two Taylor routes coincide up to round-off; the switch exists to
        // make that observable rather than assumed.
        let t = 1.0;
        let model = rotation_model(Dof::Infinite, 5, t);
        let w = dmatrix![2.0, 0.4; 0.4, 1.1];
        let mean = dvector![0.0, 0.0, 1.0, 0.0, 0.1];
        let mut cov = DMatrix::zeros(5, 5);
        cov[(4, 4)] = 0.01;
        for target in [ExpectationTarget::C3, ExpectationTarget::C4] {
            let primary = taylor_expectation_with_form(
                &mean,
                &cov,
                &w,
                &model,
                target,
                SmoothingExpectationForm::InverseMap,
            )
            .unwrap();
            let alternative = taylor_expectation_with_form(
                &mean,
                &cov,
                &w,
                &model,
                target,
                SmoothingExpectationForm::TransposeWeighted,
            )
            .unwrap();
            assert!(
                (primary - alternative).amax() < 1e-12,
                "forms diverged for {target:?}"
            );
        }
    }

    #[test]
    fn d1_d2_of_inverse_factor_match_finite_differences() {
        // The inverse-map derivative propagation must agree with central
        // finite differences of M^-1 itself.
        let map = RotationExtentMap::new(1.0, 4);
        let x = dvector![0.0, 0.0, 1.0, 0.0, 0.3];
        let factor = factor_at(&map, &x, Factor::InverseMap).unwrap();
        let step = 1e-5;
        let value_inv = |omega: f64| -> DMatrix<f64> {
            let mut xs = x.clone();
            xs[4] = omega;
            map.value(&xs).try_inverse().unwrap()
        };
        let fd1 = (value_inv(x[4] + step) - value_inv(x[4] - step)) / (2.0 * step);
        let d1 = factor.d1[4].as_ref().unwrap();
        assert!((d1 - &fd1).amax() < 1e-6);
        let fd2 = (value_inv(x[4] + step) - 2.0 * value_inv(x[4]) + value_inv(x[4] - step))
            / (step * step);
        let d2 = factor.d2.get(&(4, 4)).unwrap();
        assert!((d2 - &fd2).amax() < 1e-5);
    }
}
