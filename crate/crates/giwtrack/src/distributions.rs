//! Matrix-variate densities and the identities the smoothing recursions rest
//! on.
//!
//! Four families are provided: Gaussian vectors, Wishart and inverse Wishart
//! matrices, and the generalized matrix-variate beta type II that appears
//! when a Wishart kernel is marginalised against an inverse Wishart (or vice
//! versa). The parametrizations follow Gupta & Nagar:
//!
//! * Wishart `W(X; w, W)` with `w >= d`:
//!   `log f = ((w-d-1)/2) log|X| - tr(W^-1 X)/2 - (wd/2) log 2
//!            - (w/2) log|W| - log Gamma_d(w/2)`,
//!   mean `wW`, inverse mean `W^-1/(w-d-1)`.
//! * Inverse Wishart `IW(X; v, V)` with `v > 2d`:
//!   `log f = ((v-d-1)/2) log|V| - (v/2) log|X| - tr(X^-1 V)/2
//!            - ((v-d-1)d/2) log 2 - log Gamma_d((v-d-1)/2)`,
//!   mean `V/(v-2d-2)`, inverse mean `(v-d-1) V^-1`.
//! * Generalized beta type II `GB2(X; a, b, Omega, Psi)` with
//!   `a, b > (d-1)/2` and `Omega - Psi` positive definite:
//!   for `Psi = 0`,
//!   `log f = b log|Omega| + (a-(d+1)/2) log|X| - (a+b) log|Omega + X|
//!            - log Beta_d(a, b)`,
//!   mean `2a Omega/(2b-d-1)`, inverse mean `2b Omega^-1/(2a-d-1)`.
//!
//! Under these conventions the product, ratio, kernel-swap and
//! marginalisation identities below hold exactly as written, which the unit
//! tests pin down through log-density proportionality and sampling oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg;

/// Multivariate log gamma, `log Gamma_d(a)` for `a > (d-1)/2`.
pub fn ln_mv_gamma(d: usize, a: f64) -> f64 {
    let dd = d as f64;
    dd * (dd - 1.0) / 4.0 * PI.ln()
        + (0..d).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

fn checked_support(x: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if x.nrows() != d || x.ncols() != d {
        return Err(Error::OutsideSupport(format!(
            "expected {d}x{d} symmetric positive definite argument, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if !linalg::is_positive_definite(x) {
        return Err(Error::OutsideSupport(
            "argument is not positive definite".into(),
        ));
    }
    Ok(linalg::symmetrize(x))
}

// ---------------------------------------------------------------------------
// Gaussian
// ---------------------------------------------------------------------------

/// Gaussian density over vectors with a possibly semidefinite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "covariance {}x{} does not match mean of length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let cov = linalg::symmetrize(&cov);
        let ev = linalg::sym_eigenvalues(&cov);
        let scale = ev[ev.len() - 1].abs().max(1.0);
        if ev[0] < -linalg::SPD_TOLERANCE * scale {
            return Err(Error::NotPositiveDefinite("Gaussian covariance".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density; the covariance must be strictly positive definite here.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::OutsideSupport(format!(
                "vector of length {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let chol = self
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Gaussian covariance".into()))?;
        let diff = x - &self.mean;
        let maha = diff.dot(&chol.solve(&diff));
        let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det + maha))
    }

    /// Draw one sample; a semidefinite covariance degenerates gracefully
    /// (zero covariance returns the mean exactly).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let root = linalg::spd_sqrt(&self.cov);
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        &self.mean + root * z
    }
}

// ---------------------------------------------------------------------------
// Wishart
// ---------------------------------------------------------------------------

/// Wishart density over symmetric positive definite matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Wishart {
    dof: f64,
    scale: DMatrix<f64>,
}

impl Wishart {
    pub fn new(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let d = scale.nrows();
        let scale = linalg::checked_spd(&scale, d, "Wishart scale")?;
        if !dof.is_finite() || dof < d as f64 {
            return Err(Error::DegenerateDof(format!(
                "Wishart requires dof >= d = {d}, got {dof}"
            )));
        }
        Ok(Self { dof, scale })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn log_pdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        let d = self.dim();
        let x = checked_support(x, d)?;
        let dd = d as f64;
        let w = self.dof;
        let scale_inv = linalg::spd_inverse(&self.scale)?;
        Ok(0.5 * (w - dd - 1.0) * linalg::spd_log_det(&x)?
            - 0.5 * (&scale_inv * &x).trace()
            - 0.5 * w * dd * 2.0f64.ln()
            - 0.5 * w * linalg::spd_log_det(&self.scale)?
            - ln_mv_gamma(d, w / 2.0))
    }

    /// `E[X] = wW`.
    pub fn mean(&self) -> DMatrix<f64> {
        self.dof * &self.scale
    }

    /// `E[X^-1] = W^-1 / (w - d - 1)`, requires `w > d + 1`.
    pub fn mean_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        if self.dof <= d + 1.0 {
            return Err(Error::DegenerateDof(format!(
                "E[X^-1] of a Wishart needs dof > d + 1 = {}, got {}",
                d + 1.0,
                self.dof
            )));
        }
        Ok(linalg::spd_inverse(&self.scale)? / (self.dof - d - 1.0))
    }

    /// `(E[X], E[X^-1])`.
    pub fn moments(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.mean(), self.mean_inverse()?))
    }

    /// Bartlett draw: lower-triangular factor with gamma-variate diagonal
    /// (supports non-integer dof) and standard normal strict lower part.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            let shape = 0.5 * (self.dof - i as f64);
            let g = Gamma::new(shape, 2.0).expect("validated dof");
            a[(i, i)] = g.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let l = match self.scale.clone().cholesky() {
            Some(chol) => chol.l(),
            None => linalg::spd_sqrt(&self.scale),
        };
        let la = l * a;
        &la * la.transpose()
    }
}

// ---------------------------------------------------------------------------
// Inverse Wishart
// ---------------------------------------------------------------------------

/// Inverse Wishart density over symmetric positive definite matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseWishart {
    dof: f64,
    scale: DMatrix<f64>,
}

impl InverseWishart {
    /// A normalizable density requires `v > 2d`.
    pub fn new(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let d = scale.nrows();
        let scale = linalg::checked_spd(&scale, d, "inverse Wishart scale")?;
        if !dof.is_finite() || dof <= 2.0 * d as f64 {
            return Err(Error::DegenerateDof(format!(
                "inverse Wishart requires dof > 2d = {}, got {dof}",
                2 * d
            )));
        }
        Ok(Self { dof, scale })
    }

    /// Parameter container for the kernel `|X|^(-v/2) etr(-X^-1 V / 2)`
    /// without requiring normalizability. The Wishart-to-inverse-Wishart
    /// kernel swap produces boundary dof as low as `d`; `log_pdf` still
    /// demands `v > 2d`, only [`InverseWishart::log_kernel`] is available
    /// below that.
    pub fn kernel(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let d = scale.nrows();
        let scale = linalg::checked_spd(&scale, d, "inverse Wishart scale")?;
        if !dof.is_finite() || dof <= 0.0 {
            return Err(Error::DegenerateDof(format!(
                "inverse Wishart kernel requires dof > 0, got {dof}"
            )));
        }
        Ok(Self { dof, scale })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn log_pdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        let d = self.dim();
        let dd = d as f64;
        if self.dof <= 2.0 * dd {
            return Err(Error::DegenerateDof(format!(
                "inverse Wishart log-pdf needs dof > 2d = {}, got {}",
                2 * d,
                self.dof
            )));
        }
        let x = checked_support(x, d)?;
        let v = self.dof;
        Ok(0.5 * (v - dd - 1.0) * linalg::spd_log_det(&self.scale)?
            - 0.5 * v * linalg::spd_log_det(&x)?
            - 0.5 * (linalg::spd_inverse(&x)? * &self.scale).trace()
            - 0.5 * (v - dd - 1.0) * dd * 2.0f64.ln()
            - ln_mv_gamma(d, (v - dd - 1.0) / 2.0))
    }

    /// Unnormalized log density, finite for any valid kernel parameters.
    pub fn log_kernel(&self, x: &DMatrix<f64>) -> Result<f64> {
        let x = checked_support(x, self.dim())?;
        Ok(-0.5 * self.dof * linalg::spd_log_det(&x)?
            - 0.5 * (linalg::spd_inverse(&x)? * &self.scale).trace())
    }

    /// `E[X] = V/(v - 2d - 2)`, requires `v > 2d + 2`.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        if self.dof <= 2.0 * d + 2.0 {
            return Err(Error::DegenerateDof(format!(
                "E[X] of an inverse Wishart needs dof > 2d + 2 = {}, got {}",
                2.0 * d + 2.0,
                self.dof
            )));
        }
        Ok(&self.scale / (self.dof - 2.0 * d - 2.0))
    }

    /// `E[X^-1] = (v - d - 1) V^-1`.
    pub fn mean_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        Ok(linalg::spd_inverse(&self.scale)? * (self.dof - d - 1.0))
    }

    pub fn moments(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.mean()?, self.mean_inverse()?))
    }

    /// Draw by inverting a Wishart draw: `X ~ IW(v, V)` iff
    /// `X^-1 ~ W(v - d - 1, V^-1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        if self.dof <= 2.0 * d {
            return Err(Error::DegenerateDof(format!(
                "sampling an inverse Wishart needs dof > 2d, got {}",
                self.dof
            )));
        }
        let w = Wishart::new(self.dof - d - 1.0, linalg::spd_inverse(&self.scale)?)?;
        let draw = w.sample(rng);
        linalg::spd_inverse(&draw)
    }
}

// ---------------------------------------------------------------------------
// Generalized matrix-variate beta type II
// ---------------------------------------------------------------------------

/// Generalized matrix-variate beta type II density.
///
/// Every use in this crate has `psi = 0`; the field is kept so the container
/// mirrors the full parametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct Gb2 {
    a: f64,
    b: f64,
    omega: DMatrix<f64>,
    psi: DMatrix<f64>,
}

impl Gb2 {
    pub fn new(a: f64, b: f64, omega: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        let d = omega.nrows();
        if psi.nrows() != d || psi.ncols() != d {
            return Err(Error::DimensionMismatch(
                "GB2 psi must match omega".into(),
            ));
        }
        let dd = d as f64;
        if !a.is_finite() || a <= (dd - 1.0) / 2.0 || !b.is_finite() || b <= (dd - 1.0) / 2.0 {
            return Err(Error::DegenerateDof(format!(
                "GB2 requires a, b > (d-1)/2 = {}, got a={a}, b={b}",
                (dd - 1.0) / 2.0
            )));
        }
        let diff = &omega - &psi;
        if !linalg::is_positive_definite(&diff) {
            return Err(Error::NotPositiveDefinite("GB2 omega - psi".into()));
        }
        Ok(Self {
            a,
            b,
            omega: linalg::symmetrize(&omega),
            psi: linalg::symmetrize(&psi),
        })
    }

    pub fn zero_psi(a: f64, b: f64, omega: DMatrix<f64>) -> Result<Self> {
        let d = omega.nrows();
        Self::new(a, b, omega, DMatrix::zeros(d, d))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn log_pdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        let d = self.dim();
        let dd = d as f64;
        let x = checked_support(x, d)?;
        let body = &x - &self.psi;
        if !linalg::is_positive_definite(&body) {
            return Err(Error::OutsideSupport("GB2 requires X - psi > 0".into()));
        }
        let omega = &self.omega - &self.psi;
        let ln_beta =
            ln_mv_gamma(d, self.a) + ln_mv_gamma(d, self.b) - ln_mv_gamma(d, self.a + self.b);
        Ok(self.b * linalg::spd_log_det(&omega)?
            + (self.a - (dd + 1.0) / 2.0) * linalg::spd_log_det(&body)?
            - (self.a + self.b) * linalg::spd_log_det(&(&omega + &body))?
            - ln_beta)
    }

    /// `E[X] = psi + 2a (Omega - psi) / (2b - d - 1)`, requires `b > (d+1)/2`.
    pub fn mean(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        if 2.0 * self.b <= d + 1.0 {
            return Err(Error::DegenerateDof(format!(
                "E[X] of a GB2 needs b > (d+1)/2 = {}, got {}",
                (d + 1.0) / 2.0,
                self.b
            )));
        }
        Ok(&self.psi + (&self.omega - &self.psi) * (2.0 * self.a / (2.0 * self.b - d - 1.0)))
    }

    /// `E[X^-1] = 2b Omega^-1 / (2a - d - 1)` for `psi = 0`,
    /// requires `a > (d+1)/2`.
    pub fn mean_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        if self.psi.amax() != 0.0 {
            return Err(Error::InvalidParameter(
                "GB2 inverse mean is implemented for psi = 0".into(),
            ));
        }
        if 2.0 * self.a <= d + 1.0 {
            return Err(Error::DegenerateDof(format!(
                "E[X^-1] of a GB2 needs a > (d+1)/2 = {}, got {}",
                (d + 1.0) / 2.0,
                self.a
            )));
        }
        Ok(linalg::spd_inverse(&self.omega)? * (2.0 * self.b / (2.0 * self.a - d - 1.0)))
    }

    pub fn moments(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.mean()?, self.mean_inverse()?))
    }

    /// Compositional draw through the Wishart/inverse-Wishart marginal
    /// construction: `V ~ IW(2b + d + 1, Omega - psi)`, then
    /// `X ~ psi + W(2a, V)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>> {
        let d = self.dim() as f64;
        let mixing = InverseWishart::kernel(2.0 * self.b + d + 1.0, &self.omega - &self.psi)?;
        let v = mixing.sample(rng)?;
        let body = Wishart::new(2.0 * self.a, v)?.sample(rng);
        Ok(&self.psi + body)
    }
}

// ---------------------------------------------------------------------------
// Products, ratios, kernel swap, marginalisation integrals
// ---------------------------------------------------------------------------

/// Product of two inverse Wishart densities:
/// `IW(X; a, A) IW(X; b, B) ∝ IW(X; a + b, A + B)`.
pub fn iw_product(p: &InverseWishart, q: &InverseWishart) -> Result<InverseWishart> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "inverse Wishart product: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    InverseWishart::new(p.dof() + q.dof(), p.scale() + q.scale())
}

/// Ratio of two inverse Wishart densities:
/// `IW(X; a, A) / IW(X; b, B) ∝ IW(X; a - b, A - B)`,
/// valid when `a - b > 2d` and `A - B` is positive definite.
pub fn iw_ratio(p: &InverseWishart, q: &InverseWishart) -> Result<InverseWishart> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "inverse Wishart ratio: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let scale = p.scale() - q.scale();
    if !linalg::is_positive_definite(&scale) {
        return Err(Error::IndefiniteScale(
            "inverse Wishart ratio scale A - B is not positive definite".into(),
        ));
    }
    let dof = p.dof() - q.dof();
    if dof <= 2.0 * p.dim() as f64 {
        return Err(Error::DegenerateDof(format!(
            "inverse Wishart ratio needs a - b > 2d = {}, got {dof}",
            2 * p.dim()
        )));
    }
    InverseWishart::new(dof, scale)
}

/// Kernel swap between the Wishart transition and the inverse Wishart state:
/// `W(Y; n, M X M^T / n)`, read as a function of `X`, is proportional to
/// `IW(X; n, n M^-1 Y M^-T)`.
///
/// The returned container may carry boundary dof (`d <= n <= 2d`) for which
/// only the kernel is defined, see [`InverseWishart::kernel`].
pub fn wishart_iw_kernel_swap(
    dof: f64,
    observed: &DMatrix<f64>,
    transform: &DMatrix<f64>,
) -> Result<InverseWishart> {
    let d = observed.nrows();
    let observed = linalg::checked_spd(observed, d, "kernel swap observed matrix")?;
    if transform.nrows() != d || transform.ncols() != d {
        return Err(Error::DimensionMismatch(
            "kernel swap transform must match the observed matrix".into(),
        ));
    }
    let m_inv = transform
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("kernel swap transform".into()))?;
    let scale = dof * &m_inv * observed * m_inv.transpose();
    InverseWishart::kernel(dof, linalg::symmetrize(&scale))
}

/// `∫ W(X; v, V) IW(V; w, W) dV = GB2(X; v/2, (w-d-1)/2, W, 0)`.
pub fn integrate_wishart_iw(v: f64, w: f64, scale: &DMatrix<f64>) -> Result<Gb2> {
    let d = scale.nrows() as f64;
    if v < d {
        return Err(Error::DegenerateDof(format!(
            "Wishart kernel dof must satisfy v >= d = {d}, got {v}"
        )));
    }
    if w <= 2.0 * d {
        return Err(Error::DegenerateDof(format!(
            "inverse Wishart mixing dof must satisfy w > 2d = {}, got {w}",
            2.0 * d
        )));
    }
    Gb2::zero_psi(v / 2.0, (w - d - 1.0) / 2.0, scale.clone())
}

/// `∫ IW(X; v, V) W(V; w, W) dV = GB2(X; w/2, (v-d-1)/2, W, 0)`.
pub fn integrate_iw_wishart(v: f64, w: f64, scale: &DMatrix<f64>) -> Result<Gb2> {
    let d = scale.nrows() as f64;
    if v <= 2.0 * d {
        return Err(Error::DegenerateDof(format!(
            "inverse Wishart kernel dof must satisfy v > 2d = {}, got {v}",
            2.0 * d
        )));
    }
    if w < d {
        return Err(Error::DegenerateDof(format!(
            "Wishart mixing dof must satisfy w >= d = {d}, got {w}"
        )));
    }
    Gb2::zero_psi(w / 2.0, (v - d - 1.0) / 2.0, scale.clone())
}

// ---------------------------------------------------------------------------
// Moment-matched conversions
// ---------------------------------------------------------------------------

/// Inverse Wishart to Wishart, matching `E[X]` and `E[X^-1]` exactly:
/// `w = v - d - 1`, `W = V / ((v - 2d - 2)(v - d - 1))`.
pub fn approx_iw_as_wishart(p: &InverseWishart) -> Result<Wishart> {
    let d = p.dim() as f64;
    let v = p.dof();
    if v <= 2.0 * d + 2.0 {
        return Err(Error::DegenerateDof(format!(
            "matching moments of an inverse Wishart needs v > 2d + 2 = {}, got {v}",
            2.0 * d + 2.0
        )));
    }
    Wishart::new(v - d - 1.0, p.scale() / ((v - 2.0 * d - 2.0) * (v - d - 1.0)))
}

/// Wishart to inverse Wishart, matching `E[X]` and `E[X^-1]` exactly:
/// `v = w + d + 1`, `V = W w (w - d - 1)`.
pub fn approx_wishart_as_iw(p: &Wishart) -> Result<InverseWishart> {
    let d = p.dim() as f64;
    let w = p.dof();
    if w <= d + 1.0 {
        return Err(Error::DegenerateDof(format!(
            "matching moments of a Wishart needs w > d + 1 = {}, got {w}",
            d + 1.0
        )));
    }
    InverseWishart::new(w + d + 1.0, p.scale() * (w * (w - d - 1.0)))
}

/// GB2 (with `psi = 0`) to Wishart by moment matching. Writing the GB2 as
/// `GB2(X; a/2, b/2, A, 0)`, the output is
/// `w = ab/(a + b - d - 1)`, `W = (a + b - d - 1) A / (b (b - d - 1))`.
pub fn approx_gb2_as_wishart(p: &Gb2) -> Result<Wishart> {
    let d = p.dim() as f64;
    let a = 2.0 * p.a();
    let b = 2.0 * p.b();
    if p.psi().amax() != 0.0 {
        return Err(Error::InvalidParameter(
            "GB2 moment matching is implemented for psi = 0".into(),
        ));
    }
    if b <= d + 1.0 {
        return Err(Error::DegenerateDof(format!(
            "GB2 to Wishart needs 2b > d + 1 = {}, got 2b = {b}",
            d + 1.0
        )));
    }
    if a + b <= d + 1.0 {
        return Err(Error::DegenerateDof(format!(
            "GB2 to Wishart needs 2a + 2b > d + 1 = {}, got {}",
            d + 1.0,
            a + b
        )));
    }
    Wishart::new(
        a * b / (a + b - d - 1.0),
        p.omega() * ((a + b - d - 1.0) / (b * (b - d - 1.0))),
    )
}

/// GB2 (with `psi = 0`) to inverse Wishart by moment matching. Writing the
/// GB2 as `GB2(X; a/2, b/2, A, 0)`, the output is
/// `v = ab/(a + b - d - 1) + d + 1`, `V = a (a - d - 1) A / (a + b - d - 1)`.
pub fn approx_gb2_as_iw(p: &Gb2) -> Result<InverseWishart> {
    let d = p.dim() as f64;
    let a = 2.0 * p.a();
    let b = 2.0 * p.b();
    if p.psi().amax() != 0.0 {
        return Err(Error::InvalidParameter(
            "GB2 moment matching is implemented for psi = 0".into(),
        ));
    }
    if a <= d + 1.0 {
        return Err(Error::DegenerateDof(format!(
            "GB2 to inverse Wishart needs 2a > d + 1 = {}, got 2a = {a}",
            d + 1.0
        )));
    }
    if a + b <= d + 1.0 {
        return Err(Error::DegenerateDof(format!(
            "GB2 to inverse Wishart needs 2a + 2b > d + 1 = {}, got {}",
            d + 1.0,
            a + b
        )));
    }
    InverseWishart::new(
        a * b / (a + b - d - 1.0) + d + 1.0,
        p.omega() * (a * (a - d - 1.0) / (a + b - d - 1.0)),
    )
}
