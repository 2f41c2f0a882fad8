//! Point-estimate extraction and the Gaussian Wasserstein distance used to
//! score extended-object estimates, plus per-step median aggregation over
//! Monte Carlo runs.

use nalgebra::{DMatrix, DVector};

use crate::conditional::ConditionalGiwState;
use crate::error::{Error, Result};
use crate::factorized::FactorizedGiwState;
use crate::linalg;

/// Expected extended-object state `(m, V/(v - 2d - 2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedObjectEstimate {
    /// Kinematic mean; the first `d` components are the position.
    pub kinematics: DVector<f64>,
    /// Expected extent matrix, `d x d` positive definite.
    pub extent: DMatrix<f64>,
}

impl ExtendedObjectEstimate {
    pub fn position(&self) -> DVector<f64> {
        let d = self.extent.nrows();
        DVector::from_fn(d, |i, _| self.kinematics[i])
    }
}

fn expected_extent(dof: f64, scale: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let dd = d as f64;
    if dof <= 2.0 * dd + 2.0 {
        return Err(Error::DegenerateDof(format!(
            "expected extent needs v > 2d + 2 = {}, got {dof}",
            2.0 * dd + 2.0
        )));
    }
    Ok(scale / (dof - 2.0 * dd - 2.0))
}

/// Point estimate from a conditional state.
pub fn expected_state_conditional(state: &ConditionalGiwState) -> Result<ExtendedObjectEstimate> {
    Ok(ExtendedObjectEstimate {
        kinematics: state.mean().clone(),
        extent: expected_extent(state.extent_dof(), state.extent_scale(), state.dim())?,
    })
}

/// Point estimate from a factorized state.
pub fn expected_state_factorized(state: &FactorizedGiwState) -> Result<ExtendedObjectEstimate> {
    Ok(ExtendedObjectEstimate {
        kinematics: state.mean().clone(),
        extent: expected_extent(state.extent_dof(), state.extent_scale(), state.dim())?,
    })
}

/// Squared Gaussian Wasserstein distance between a truth pair
/// `(position, extent)` and an estimate:
/// `||p - p_hat||^2 + tr(X + X_hat - 2 (X^(1/2) X_hat X^(1/2))^(1/2))`.
///
/// Symmetric in its arguments, nonnegative, and zero exactly at equality.
pub fn gwd(
    position: &DVector<f64>,
    extent: &DMatrix<f64>,
    estimate_position: &DVector<f64>,
    estimate_extent: &DMatrix<f64>,
) -> Result<f64> {
    let d = extent.nrows();
    if position.len() != d || estimate_position.len() != d {
        return Err(Error::DimensionMismatch(
            "position length must match the extent dimension".into(),
        ));
    }
    let extent = linalg::checked_spd(extent, d, "truth extent")?;
    let estimate_extent = linalg::checked_spd(estimate_extent, d, "estimated extent")?;

    let diff = position - estimate_position;
    let root = linalg::spd_sqrt(&extent);
    let cross = linalg::spd_sqrt(&(&root * &estimate_extent * &root));
    let trace_term = extent.trace() + estimate_extent.trace() - 2.0 * cross.trace();
    // Round-off can leave a tiny negative residue when the extents agree.
    Ok(diff.norm_squared() + trace_term.max(0.0))
}

/// One scored estimate inside a Monte Carlo result table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwdSample {
    pub run: u32,
    pub tracker: crate::models::TrackerKind,
    pub step: usize,
    pub mode: EstimateMode,
    pub gwd: f64,
}

/// Which conditioning the estimate used: the one-step prediction, the
/// filtering posterior, or the full smoothing pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimateMode {
    Predict,
    Filter,
    Smooth,
}

impl EstimateMode {
    pub const ALL: [EstimateMode; 3] = [
        EstimateMode::Predict,
        EstimateMode::Filter,
        EstimateMode::Smooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimateMode::Predict => "predict",
            EstimateMode::Filter => "filter",
            EstimateMode::Smooth => "smooth",
        }
    }
}

impl std::fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// Median with the even-count convention of averaging the two central order
/// statistics.
pub fn median(values: &mut [f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("median of an empty set".into()));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Ok(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-(tracker, mode, step) median over runs.
///
/// The rows may arrive in any order; the output is sorted by tracker, step
/// and mode.
pub fn aggregate_median(
    samples: &[GwdSample],
) -> Result<Vec<(crate::models::TrackerKind, usize, EstimateMode, f64)>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot aggregate an empty result table".into(),
        ));
    }
    let mut buckets: std::collections::BTreeMap<
        (crate::models::TrackerKind, usize, EstimateMode),
        Vec<f64>,
    > = std::collections::BTreeMap::new();
    for s in samples {
        buckets
            .entry((s.tracker, s.step, s.mode))
            .or_default()
            .push(s.gwd);
    }
    buckets
        .into_iter()
        .map(|((tracker, step, mode), mut values)| {
            Ok((tracker, step, mode, median(&mut values)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TrackerKind;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn expected_state_examples() {
        let state = ConditionalGiwState::new(
            dvector![1.0, 2.0, 3.0, 4.0],
            eye(2),
            10.0,
            4.0 * eye(2),
            2,
        )
        .unwrap();
        let est = expected_state_conditional(&state).unwrap();
        assert!((est.extent.clone() - eye(2)).amax() < 1e-14);
        assert_eq!(est.position(), dvector![1.0, 2.0]);

        // Boundary dof is rejected.
        let boundary = ConditionalGiwState::new(
            dvector![0.0, 0.0, 0.0, 0.0],
            eye(2),
            6.0,
            eye(2),
            2,
        )
        .unwrap();
        assert!(matches!(
            expected_state_conditional(&boundary),
            Err(Error::DegenerateDof(_))
        ));

        // Homogeneity in the scale matrix.
        let scaled = ConditionalGiwState::new(
            dvector![0.0, 0.0, 0.0, 0.0],
            eye(2),
            10.0,
            12.0 * eye(2),
            2,
        )
        .unwrap();
        let est = expected_state_conditional(&scaled).unwrap();
        assert!((est.extent - 3.0 * eye(2)).amax() < 1e-14);
    }

    #[test]
    fn gwd_identities() {
        let p = dvector![1.0, -1.0];
        let x = dmatrix![2.0, 0.3; 0.3, 1.0];
        assert!(gwd(&p, &x, &p, &x).unwrap() < 1e-12);

        // Position-only term.
        let q = dvector![4.0, 3.0];
        let zero = dvector![0.0, 0.0];
        assert!((gwd(&zero, &x, &dvector![3.0, 4.0], &x).unwrap() - 25.0).abs() < 1e-12);
        let _ = q;

        // Commuting extents: tr(5 I - 2 * 2 I) = 2.
        assert!((gwd(&zero, &eye(2), &zero, &(4.0 * eye(2))).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gwd_symmetry_nonnegativity_and_zero_only_at_equality() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &g * g.transpose() + 0.3 * eye(2);
            let g2 = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &g2 * g2.transpose() + 0.3 * eye(2);
            let p = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let ab = gwd(&p, &x, &q, &y).unwrap();
            let ba = gwd(&q, &y, &p, &x).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-9, "asymmetry {}", (ab - ba).abs());
            if (p.clone() - &q).norm() > 1e-6 || (x.clone() - &y).amax() > 1e-6 {
                assert!(ab > 0.0);
            }
        }
    }

    #[test]
    fn gwd_commuting_extents_closed_form() {
        // For diagonal extents the trace term is tr((X^(1/2) - Y^(1/2))^2).
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..100 {
            let a1 = 0.2 + rng.random::<f64>() * 4.0;
            let a2 = 0.2 + rng.random::<f64>() * 4.0;
            let b1 = 0.2 + rng.random::<f64>() * 4.0;
            let b2 = 0.2 + rng.random::<f64>() * 4.0;
            let x = DMatrix::from_diagonal(&dvector![a1, a2]);
            let y = DMatrix::from_diagonal(&dvector![b1, b2]);
            let p = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let expect = (p.clone() - &q).norm_squared()
                + (a1.sqrt() - b1.sqrt()).powi(2)
                + (a2.sqrt() - b2.sqrt()).powi(2);
            let got = gwd(&p, &x, &q, &y).unwrap();
            assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        }
    }

    #[test]
    fn gwd_rejects_indefinite_extents() {
        let p = dvector![0.0, 0.0];
        let bad = dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(gwd(&p, &bad, &p, &eye(2)).is_err());
    }

    #[test]
    fn expected_state_invariant_under_moment_matched_round_trip() {
        use crate::distributions::{approx_iw_as_wishart, approx_wishart_as_iw, InverseWishart};
        let iw = InverseWishart::new(11.0, dmatrix![5.0, 1.0; 1.0, 4.0]).unwrap();
        let round = approx_wishart_as_iw(&approx_iw_as_wishart(&iw).unwrap()).unwrap();
        let before = iw.scale() / (iw.dof() - 6.0);
        let after = round.scale() / (round.dof() - 6.0);
        assert!((before - after).amax() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
            (0.3f64..3.0, -2.0f64..2.0, 0.3f64..3.0).prop_map(|(a, b, c)| {
                let l = DMatrix::from_row_slice(2, 2, &[a, 0.0, b, c]);
                &l * l.transpose()
            })
        }

        proptest! {
            #[test]
            fn gwd_is_a_symmetric_premetric(
                p in proptest::array::uniform2(-10.0f64..10.0),
                q in proptest::array::uniform2(-10.0f64..10.0),
                x in spd2(),
                y in spd2(),
            ) {
                let p = DVector::from_vec(p.to_vec());
                let q = DVector::from_vec(q.to_vec());
                let ab = gwd(&p, &x, &q, &y).unwrap();
                let ba = gwd(&q, &y, &p, &x).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
                prop_assert!(gwd(&p, &x, &p, &x).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [2.0]).unwrap(), 2.0);
        assert_eq!(median(&mut [1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(median(&mut [1.0, 2.0, 3.0, 10.0]).unwrap(), 2.5);
        assert!(median(&mut []).is_err());
    }

    #[test]
    fn aggregate_median_is_permutation_invariant() {
        let mk = |run: u32, step: usize, gwd: f64| GwdSample {
            run,
            tracker: TrackerKind::Ccv,
            step,
            mode: EstimateMode::Filter,
            gwd,
        };
        let mut rows = vec![mk(0, 0, 3.0), mk(1, 0, 1.0), mk(2, 0, 2.0), mk(0, 1, 5.0)];
        let forward = aggregate_median(&rows).unwrap();
        rows.reverse();
        let backward = aggregate_median(&rows).unwrap();
        assert_eq!(forward, backward);
        assert_eq!(forward[0], (TrackerKind::Ccv, 0, EstimateMode::Filter, 2.0));
        assert_eq!(forward[1], (TrackerKind::Ccv, 1, EstimateMode::Filter, 5.0));
        assert!(aggregate_median(&[]).is_err());

        // Single run: the curve is that run's values.
        let single = vec![mk(0, 0, 3.5)];
        assert_eq!(aggregate_median(&single).unwrap()[0].3, 3.5);
    }
}
