//! The extent-map expectations behind the factorized recursions: compare
//! the Taylor approximations of C1..C4 for the coordinated-turn rotation
//! against brute-force Monte Carlo sampling.
//!
//! Run with `cargo run --release --example taylor_expectation`.

use giwtrack::factorized::{
    taylor_expectation, ExpectationTarget, ExtentMap, FactorizedTransitionModel,
};
use giwtrack::models::RotationExtentMap;
use giwtrack::Dof;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

fn main() {
    let t = 1.0;
    let model = FactorizedTransitionModel::linear(
        DMatrix::identity(5, 5),
        DMatrix::zeros(5, 5),
        Dof::Infinite,
        ExtentMap::StateDependent(Arc::new(RotationExtentMap::new(t, 4))),
    )
    .unwrap();

    // Kinematic density: mean turn rate 0.1 rad/s with a 2 degree/s spread.
    let mean = DVector::from_vec(vec![0.0, 0.0, 10.0, 0.0, 0.1]);
    let sigma = (2.0f64).to_radians();
    let mut cov = DMatrix::zeros(5, 5);
    cov[(4, 4)] = sigma * sigma;

    let v = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
    let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.1]);

    let samples = 1_000_000;
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let mut acc = vec![DMatrix::<f64>::zeros(2, 2); 4];
    for _ in 0..samples {
        let omega = mean[4] + sigma * rng.sample::<f64, _>(StandardNormal);
        let (s, c) = (t * omega).sin_cos();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let mvm = &rot * &v * rot.transpose();
        acc[0] += mvm.clone().try_inverse().unwrap();
        acc[1] += mvm;
        let inv_w = rot.transpose() * &w * &rot;
        acc[2] += inv_w.clone().try_inverse().unwrap();
        acc[3] += inv_w;
    }

    let cases = [
        ("C1 = E[(M V M^T)^-1]", ExpectationTarget::C1, &v),
        ("C2 = E[M V M^T]", ExpectationTarget::C2, &v),
        ("C3 = E[(M^-1 W M^-T)^-1]", ExpectationTarget::C3, &w),
        ("C4 = E[M^-1 W M^-T]", ExpectationTarget::C4, &w),
    ];
    for (idx, (label, target, inner)) in cases.iter().enumerate() {
        let taylor = taylor_expectation(&mean, &cov, inner, &model, *target).unwrap();
        let mc = &acc[idx] / samples as f64;
        let gap = (taylor.clone() - &mc).amax();
        println!("{label}");
        println!("  taylor  [{:9.6} {:9.6}; {:9.6} {:9.6}]",
            taylor[(0, 0)], taylor[(0, 1)], taylor[(1, 0)], taylor[(1, 1)]);
        println!("  sampled [{:9.6} {:9.6}; {:9.6} {:9.6}]   max gap {gap:.2e}",
            mc[(0, 0)], mc[(0, 1)], mc[(1, 0)], mc[(1, 1)]);
    }
}
