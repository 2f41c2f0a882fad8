//! Extended object tracking with the Gaussian inverse-Wishart (GIW) random
//! matrix model.
//!
//! An extended object produces several measurements per scan, spread over its
//! body; its state is a kinematic vector paired with a symmetric positive
//! definite extent matrix whose level set is the object ellipse. This crate
//! implements Bayesian prediction, measurement update, and closed-form
//! Rauch-Tung-Striebel style smoothing for the two GIW state densities found
//! in the literature:
//!
//! * [`conditional`] - the kinematic covariance couples to the extent through
//!   a Kronecker product `P ⊗ X`,
//! * [`factorized`] - kinematics and extent are independent factors, which
//!   admits nonlinear motion models and state-dependent extent rotation.
//!
//! Supporting modules provide the matrix-variate density toolbox the
//! recursions are built from ([`distributions`]), the constant-velocity and
//! coordinated-turn tracker catalog ([`models`]), a deterministic Monte Carlo
//! simulation harness ([`sim`]), Gaussian Wasserstein distance scoring
//! ([`metrics`]), and a small command line front end ([`cli`], [`config`],
//! [`selftest`]).
//!
//! The `examples/` directory contains one runnable program per capability;
//! `cargo run --release -- simulate --config cv_highpd --out out` drives the
//! full benchmark.

pub mod cli;
pub mod conditional;
pub mod config;
pub mod distributions;
pub mod error;
pub mod factorized;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};

/// Degrees of freedom governing the Wishart extent transition.
///
/// The extent evolution noise is controlled by a scalar `n`; larger values
/// mean the extent changes less between scans, and the limit `n -> inf`
/// makes the extent evolution deterministic. All recursion factors involving
/// `1/n` take their analytic limits in the infinite case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dof {
    Finite(f64),
    Infinite,
}

impl Dof {
    /// `1/n`, zero in the infinite case.
    pub fn recip(self) -> f64 {
        match self {
            Dof::Finite(n) => 1.0 / n,
            Dof::Infinite => 0.0,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Dof::Finite(_))
    }
}

impl std::fmt::Display for Dof {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dof::Finite(n) => write!(f, "{n}"),
            Dof::Infinite => write!(f, "inf"),
        }
    }
}
