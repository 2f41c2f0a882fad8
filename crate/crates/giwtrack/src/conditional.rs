//! Prediction, measurement update, and backward smoothing for the
//! conditional Gaussian inverse-Wishart state density.
//!
//! The state density is `N(x; m, P ⊗ X) IW(X; v, V)`: the kinematic
//! covariance couples to the extent matrix `X` through a Kronecker product,
//! so `P` is only the `s x s` factor with `s = n_x / d`. The transition is a
//! Gaussian-Wishart pair with motion matrix `F`, process noise `D`, extent
//! transform `A` and extent evolution dof `n`; the measurement model is a
//! `1 x s` row `H` with the extent itself acting as measurement spread.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::Dof;

/// Guard threshold for smoothed extent dof: below `2d + DOF_GUARD_EPS` the
/// smoothed inverse Wishart would be degenerate and the filtered extent is
/// kept instead.
pub const DOF_GUARD_EPS: f64 = 1e-6;

/// Conditional Gaussian inverse-Wishart state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGiwState {
    /// Kinematic mean, length `n_x = s * d`.
    mean: DVector<f64>,
    /// Kronecker covariance factor, `s x s`.
    cov_factor: DMatrix<f64>,
    /// Extent dof, `> 2d`.
    extent_dof: f64,
    /// Extent scale, `d x d` positive definite.
    extent_scale: DMatrix<f64>,
    /// Spatial dimension `d`.
    dim: usize,
}

impl ConditionalGiwState {
    pub fn new(
        mean: DVector<f64>,
        cov_factor: DMatrix<f64>,
        extent_dof: f64,
        extent_scale: DMatrix<f64>,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 || !mean.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "kinematic length {} is not a multiple of d = {dim}",
                mean.len()
            )));
        }
        let s = mean.len() / dim;
        if cov_factor.nrows() != s || cov_factor.ncols() != s {
            return Err(Error::DimensionMismatch(format!(
                "covariance factor {}x{}, expected {s}x{s}",
                cov_factor.nrows(),
                cov_factor.ncols()
            )));
        }
        let cov_factor = linalg::symmetrize(&cov_factor);
        let ev = linalg::sym_eigenvalues(&cov_factor);
        if ev[0] < -linalg::SPD_TOLERANCE * ev[ev.len() - 1].abs().max(1.0) {
            return Err(Error::NotPositiveDefinite("covariance factor".into()));
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
            cov_factor,
            extent_dof,
            extent_scale,
            dim,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.cov_factor
    }

    pub fn extent_dof(&self) -> f64 {
        self.extent_dof
    }

    pub fn extent_scale(&self) -> &DMatrix<f64> {
        &self.extent_scale
    }

    /// Spatial dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Derivative depth `s = n_x / d`.
    pub fn kinematic_order(&self) -> usize {
        self.mean.len() / self.dim
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite())
            && self.cov_factor.iter().all(|x| x.is_finite())
            && self.extent_dof.is_finite()
            && self.extent_scale.iter().all(|x| x.is_finite())
    }
}

/// Gaussian-Wishart transition: motion `F` and noise `D` act on the
/// Kronecker factor, the extent evolves through `W(X'; n, A X A^T / n)`.
#[derive(Debug, Clone)]
pub struct ConditionalTransitionModel {
    /// Motion matrix `F`, `s x s`.
    pub motion: DMatrix<f64>,
    /// Process noise factor `D`, `s x s` positive semidefinite.
    pub process_noise: DMatrix<f64>,
    /// Extent evolution dof `n`.
    pub extent_dof: Dof,
    /// Extent transform `A`, `d x d` invertible.
    pub extent_transform: DMatrix<f64>,
}

impl ConditionalTransitionModel {
    pub fn new(
        motion: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        extent_dof: Dof,
        extent_transform: DMatrix<f64>,
    ) -> Result<Self> {
        let s = motion.nrows();
        if motion.ncols() != s || process_noise.nrows() != s || process_noise.ncols() != s {
            return Err(Error::DimensionMismatch(
                "motion and process noise must be square of equal size".into(),
            ));
        }
        let noise_ev = linalg::sym_eigenvalues(&process_noise);
        if noise_ev[0] < -linalg::SPD_TOLERANCE * noise_ev[noise_ev.len() - 1].abs().max(1.0) {
            return Err(Error::NotPositiveDefinite("process noise".into()));
        }
        let d = extent_transform.nrows();
        if extent_transform.ncols() != d {
            return Err(Error::DimensionMismatch(
                "extent transform must be square".into(),
            ));
        }
        if extent_transform.clone().try_inverse().is_none() {
            return Err(Error::Singular("extent transform".into()));
        }
        if let Dof::Finite(n) = extent_dof {
            if !n.is_finite() || n < d as f64 {
                return Err(Error::DegenerateDof(format!(
                    "extent evolution dof must satisfy n >= d = {d}, got {n}"
                )));
            }
        }
        Ok(Self {
            motion,
            process_noise: linalg::symmetrize(&process_noise),
            extent_dof,
            extent_transform,
        })
    }
}

/// Scalar measurement row `H` (`1 x s`); the full matrix acting on the state
/// is `H ⊗ I_d`.
#[derive(Debug, Clone)]
pub struct ConditionalMeasurementModel {
    pub row: DMatrix<f64>,
}

impl ConditionalMeasurementModel {
    pub fn new(row: DMatrix<f64>) -> Result<Self> {
        if row.nrows() != 1 || row.amax() == 0.0 {
            return Err(Error::InvalidParameter(
                "measurement row must be a nonzero 1 x s matrix".into(),
            ));
        }
        Ok(Self { row })
    }
}

/// What happened to the extent part of a smoothing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtentSmoothing {
    /// The closed-form increment was applied.
    Applied,
    /// The increment was skipped because the incoming information gain was
    /// numerically vanishing.
    SkippedDegenerateGain,
    /// The increment would have produced a degenerate density; the filtered
    /// extent was kept.
    FellBackToFiltered,
}

/// Backward-pass bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmoothingDiagnostics {
    /// Steps where the extent update fell back to the filtered density.
    pub extent_fallbacks: usize,
    /// Steps where the extent update was skipped for a vanishing gain.
    pub extent_skips: usize,
}

impl SmoothingDiagnostics {
    pub fn record(&mut self, outcome: ExtentSmoothing) {
        match outcome {
            ExtentSmoothing::Applied => {}
            ExtentSmoothing::SkippedDegenerateGain => self.extent_skips += 1,
            ExtentSmoothing::FellBackToFiltered => self.extent_fallbacks += 1,
        }
    }
}

/// Which form of the extent smoothing recursion to evaluate.
///
/// The default anchors the increment at the one-step prediction
/// (`v_{k+1|K} - v_{k+1|k}` and `V_{k+1|K} - V_{k+1|k}`), which is what the
/// product/ratio identity chain produces. A circulating variant anchors two
/// of the terms at the filtered parameters (`v_{k|k}`, `V_{k|k}`) instead;
/// it is kept behind this switch for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtentSmoothingForm {
    #[default]
    Derived,
    FilteredAnchored,
}

/// `(G ⊗ I_d) v` without materializing the Kronecker product.
pub(crate) fn kron_identity_mul(g: &DMatrix<f64>, v: &DVector<f64>, d: usize) -> DVector<f64> {
    let s_in = g.ncols();
    let s_out = g.nrows();
    let mut out = DVector::zeros(s_out * d);
    for block_out in 0..s_out {
        for block_in in 0..s_in {
            let w = g[(block_out, block_in)];
            if w == 0.0 {
                continue;
            }
            for r in 0..d {
                out[block_out * d + r] += w * v[block_in * d + r];
            }
        }
    }
    out
}

/// Chapman-Kolmogorov prediction.
///
/// `m' = (F ⊗ I_d) m`, `P' = F P F^T + D`,
/// `v' = d + 1 + (1 + (v - 2d - 2)/n)^-1 (v - d - 1)`,
/// `V' = (1 + (v - d - 1)/(n - d - 1))^-1 A V A^T`;
/// with infinite `n` both extent factors collapse to one, leaving
/// `v' = v`, `V' = A V A^T`.
pub fn predict(
    state: &ConditionalGiwState,
    model: &ConditionalTransitionModel,
) -> Result<ConditionalGiwState> {
    let d = state.dim();
    let dd = d as f64;
    let s = state.kinematic_order();
    if model.motion.nrows() != s || model.extent_transform.nrows() != d {
        return Err(Error::DimensionMismatch(
            "transition model does not match the state".into(),
        ));
    }

    let mean = kron_identity_mul(&model.motion, &state.mean, d);
    let cov = &model.motion * &state.cov_factor * model.motion.transpose() + &model.process_noise;

    let v = state.extent_dof;
    let (dof, scale_factor) = match model.extent_dof {
        Dof::Infinite => (v, 1.0),
        Dof::Finite(n) => {
            if n <= dd + 1.0 {
                return Err(Error::DegenerateDof(format!(
                    "finite extent evolution dof must exceed d + 1 = {}, got {n}",
                    dd + 1.0
                )));
            }
            let dof = dd + 1.0 + (v - dd - 1.0) / (1.0 + (v - 2.0 * dd - 2.0) / n);
            let factor = 1.0 / (1.0 + (v - dd - 1.0) / (n - dd - 1.0));
            (dof, factor)
        }
    };
    let a = &model.extent_transform;
    let scale = linalg::symmetrize(&(a * &state.extent_scale * a.transpose())) * scale_factor;

    ConditionalGiwState::new(mean, cov, dof, scale, d)
}

/// Bayes update with a set of `d`-dimensional detections.
///
/// With `z̄` the centroid and `Z` the scatter about it:
/// `ε = z̄ - (H ⊗ I_d) m`, scalar `S = H P H^T + 1/|Z|`, gain `K = P H^T / S`,
/// `m' = m + (K ⊗ I_d) ε`, `P' = P - K S K^T`, `v' = v + |Z|`,
/// `V' = V + ε ε^T / S + Z`.
pub fn update(
    state: &ConditionalGiwState,
    measurements: &[DVector<f64>],
    model: &ConditionalMeasurementModel,
) -> Result<ConditionalGiwState> {
    if measurements.is_empty() {
        return Err(Error::EmptyMeasurementSet);
    }
    let d = state.dim();
    let s = state.kinematic_order();
    if model.row.ncols() != s {
        return Err(Error::DimensionMismatch(format!(
            "measurement row has {} columns, state order is {s}",
            model.row.ncols()
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

    let count = measurements.len() as f64;
    let centroid = measurements.iter().fold(DVector::zeros(d), |acc, z| acc + z) / count;
    let scatter = measurements.iter().fold(DMatrix::zeros(d, d), |acc, z| {
        let dz = z - &centroid;
        acc + &dz * dz.transpose()
    });

    let predicted_centroid = kron_identity_mul(&model.row, &state.mean, d);
    let innovation = &centroid - predicted_centroid;

    let h = &model.row;
    let s_scalar = (h * &state.cov_factor * h.transpose())[(0, 0)] + 1.0 / count;
    if s_scalar <= 0.0 {
        return Err(Error::NotPositiveDefinite("innovation variance".into()));
    }
    let gain = (&state.cov_factor * h.transpose()) / s_scalar; // s x 1

    let mean = &state.mean + kron_identity_mul(&gain, &innovation, d);
    let cov = &state.cov_factor - &gain * gain.transpose() * s_scalar;

    let dof = state.extent_dof + count;
    let innovation_outer = &innovation * innovation.transpose() / s_scalar;
    let scale = &state.extent_scale + innovation_outer + scatter;

    ConditionalGiwState::new(
        mean,
        linalg::symmetrize(&cov),
        dof,
        linalg::symmetrize(&scale),
        d,
    )
}

/// One backward smoothing step combining the filtered density at `k` with
/// the predicted and smoothed densities at `k + 1`.
///
/// Kinematics follow the Rauch-Tung-Striebel backward step on `(m, P)` with
/// gain `G = P_{k|k} F^T P_{k+1|k}^-1`; the extent increment is, with
/// `w = v_{k+1|K} - v_{k+1|k}` and `η = 1 + (w - 3(d+1))/n`,
/// `v_{k|K} = v_{k|k} + η^-1 (w - 2(d+1)^2/n)` and
/// `V_{k|K} = V_{k|k} + η^-1 A^-1 (V_{k+1|K} - V_{k+1|k}) A^-T`.
/// With infinite `n` the factors reduce to `η = 1` and the dof increment to
/// `w`. A degenerate result (dof at or below `2d`, or a non-PD scale) keeps
/// the filtered extent and reports [`ExtentSmoothing::FellBackToFiltered`].
pub fn smooth_step(
    filtered: &ConditionalGiwState,
    predicted_next: &ConditionalGiwState,
    smoothed_next: &ConditionalGiwState,
    model: &ConditionalTransitionModel,
) -> Result<(ConditionalGiwState, ExtentSmoothing)> {
    smooth_step_with_form(
        filtered,
        predicted_next,
        smoothed_next,
        model,
        ExtentSmoothingForm::Derived,
    )
}

/// [`smooth_step`] with an explicit choice of extent recursion form.
pub fn smooth_step_with_form(
    filtered: &ConditionalGiwState,
    predicted_next: &ConditionalGiwState,
    smoothed_next: &ConditionalGiwState,
    model: &ConditionalTransitionModel,
    form: ExtentSmoothingForm,
) -> Result<(ConditionalGiwState, ExtentSmoothing)> {
    let d = filtered.dim();
    let dd = d as f64;
    if predicted_next.dim() != d
        || smoothed_next.dim() != d
        || predicted_next.mean().len() != filtered.mean().len()
        || smoothed_next.mean().len() != filtered.mean().len()
    {
        return Err(Error::DimensionMismatch(
            "smoothing inputs must share one state space".into(),
        ));
    }

    // Kinematic RTS backward step on the Kronecker factor.
    let pred_cov_inv = predicted_next
        .cov_factor()
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| predicted_next.cov_factor().clone().try_inverse())
        .ok_or_else(|| Error::Singular("predicted covariance factor".into()))?;
    let gain = filtered.cov_factor() * model.motion.transpose() * pred_cov_inv;
    let mean_diff = smoothed_next.mean() - predicted_next.mean();
    let mean = filtered.mean() + kron_identity_mul(&gain, &mean_diff, d);
    let cov_gap = predicted_next.cov_factor() - smoothed_next.cov_factor();
    let cov = filtered.cov_factor() - &gain * cov_gap * gain.transpose();

    // Extent increment. When the smoothed and predicted inputs coincide the
    // exact smoothed extent is the filtered one; the approximation chain
    // would instead leak dof through its finite-n correction, so zero
    // incoming gain short-circuits to the filtered extent.
    let w = smoothed_next.extent_dof() - predicted_next.extent_dof();
    let incoming_gap = smoothed_next.extent_scale() - predicted_next.extent_scale();
    if w.abs() <= 1e-12 * predicted_next.extent_dof().max(1.0)
        && incoming_gap.amax() <= 1e-12 * predicted_next.extent_scale().trace()
    {
        let state = ConditionalGiwState::new(
            mean,
            linalg::symmetrize(&cov),
            filtered.extent_dof(),
            filtered.extent_scale().clone(),
            d,
        )?;
        return Ok((state, ExtentSmoothing::SkippedDegenerateGain));
    }
    let correction = 2.0 * (dd + 1.0) * (dd + 1.0) * model.extent_dof.recip();
    let (eta, dof_increment, scale_diff) = match form {
        ExtentSmoothingForm::Derived => {
            let eta = match model.extent_dof {
                Dof::Infinite => 1.0,
                Dof::Finite(n) => 1.0 + (w - 3.0 * (dd + 1.0)) / n,
            };
            (
                eta,
                w - correction,
                smoothed_next.extent_scale() - predicted_next.extent_scale(),
            )
        }
        ExtentSmoothingForm::FilteredAnchored => {
            let eta = match model.extent_dof {
                Dof::Infinite => 1.0,
                Dof::Finite(n) => {
                    1.0 + (smoothed_next.extent_dof() - filtered.extent_dof() - 3.0 * (dd + 1.0))
                        / n
                }
            };
            (
                eta,
                w - correction,
                smoothed_next.extent_scale() - filtered.extent_scale(),
            )
        }
    };

    let a_inv = model
        .extent_transform
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("extent transform".into()))?;

    let mut outcome = ExtentSmoothing::Applied;
    let (dof, scale) = if eta.is_finite() && eta > 0.0 {
        let dof = filtered.extent_dof() + dof_increment / eta;
        let scale = linalg::symmetrize(
            &(filtered.extent_scale() + (&a_inv * scale_diff * a_inv.transpose()) / eta),
        );
        if dof > 2.0 * dd + DOF_GUARD_EPS && linalg::is_positive_definite(&scale) {
            (dof, scale)
        } else {
            outcome = ExtentSmoothing::FellBackToFiltered;
            (filtered.extent_dof(), filtered.extent_scale().clone())
        }
    } else {
        outcome = ExtentSmoothing::FellBackToFiltered;
        (filtered.extent_dof(), filtered.extent_scale().clone())
    };

    let state = ConditionalGiwState::new(mean, linalg::symmetrize(&cov), dof, scale, d)?;
    Ok((state, outcome))
}

/// Full backward pass over aligned filtered/predicted sequences.
///
/// `filtered[k]` must be the posterior at step `k` and `predicted[k]` the
/// prior at step `k` (so `predicted[k + 1]` is the one-step prediction of
/// `filtered[k]`). The last element is the smoothing seed and is returned
/// unchanged.
pub fn smooth_trajectory(
    filtered: &[ConditionalGiwState],
    predicted: &[ConditionalGiwState],
    model: &ConditionalTransitionModel,
) -> Result<(Vec<ConditionalGiwState>, SmoothingDiagnostics)> {
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
        let (state, outcome) = smooth_step(
            &filtered[k],
            &predicted[k + 1],
            smoothed.last().expect("nonempty"),
            model,
        )?;
        diagnostics.record(outcome);
        smoothed.push(state);
    }
    smoothed.reverse();
    Ok((smoothed, diagnostics))
}
