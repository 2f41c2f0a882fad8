//! Tour of the matrix-variate density toolbox: products and ratios of
//! inverse Wishart densities, the Wishart/inverse-Wishart kernel swap, the
//! marginalisation integrals, and the moment-matched conversions.
//!
//! Run with `cargo run --release --example distribution_identities`.

use giwtrack::distributions::{
    approx_gb2_as_iw, approx_iw_as_wishart, approx_wishart_as_iw, integrate_wishart_iw,
    iw_product, iw_ratio, wishart_iw_kernel_swap, InverseWishart, Wishart,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let eye = DMatrix::<f64>::identity(2, 2);

    // Product and ratio act on (dof, scale) by plain addition/subtraction.
    let p = InverseWishart::new(10.0, 2.0 * &eye).unwrap();
    let q = InverseWishart::new(8.0, eye.clone()).unwrap();
    let product = iw_product(&p, &q).unwrap();
    println!(
        "IW(10, 2I) * IW(8, I)  ->  IW({}, {:.1} I)",
        product.dof(),
        product.scale()[(0, 0)]
    );
    let ratio = iw_ratio(&product, &q).unwrap();
    println!(
        "IW(18, 3I) / IW(8, I)  ->  IW({}, {:.1} I)",
        ratio.dof(),
        ratio.scale()[(0, 0)]
    );

    // The proportionality constant of the product identity is flat in the
    // evaluation point.
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut constants = Vec::new();
    for _ in 0..5 {
        let x = random_spd(&mut rng);
        let c = p.log_pdf(&x).unwrap() + q.log_pdf(&x).unwrap() - product.log_pdf(&x).unwrap();
        constants.push(c);
    }
    println!("product log-constant across random points: {constants:.8?}");

    // Kernel swap: a Wishart in Y with scale M X M^T / n, read as a density
    // in X, is an inverse Wishart.
    let swapped = wishart_iw_kernel_swap(6.0, &(2.0 * &eye), &eye).unwrap();
    println!(
        "W(Y; 6, X/6) viewed in X  ->  IW({}, {:.0} I)",
        swapped.dof(),
        swapped.scale()[(0, 0)]
    );

    // Integrating a Wishart kernel against an inverse Wishart mixing density
    // produces a generalized beta type II; moment matching brings it back
    // into the inverse Wishart family.
    let gb2 = integrate_wishart_iw(6.0, 10.0, &eye).unwrap();
    println!(
        "int W(X; 6, V) IW(V; 10, I) dV  ->  GB2(a = {}, b = {})",
        gb2.a(),
        gb2.b()
    );
    let approx = approx_gb2_as_iw(&gb2).unwrap();
    println!(
        "  moment-matched back to IW({:.4}, {:.4} I); E[X] gap {:.2e}",
        approx.dof(),
        approx.scale()[(0, 0)],
        (gb2.mean().unwrap() - approx.mean().unwrap()).amax()
    );

    // The Wishart <-> inverse Wishart round trip is exact on parameters.
    let start = InverseWishart::new(11.5, random_spd(&mut rng)).unwrap();
    let there = approx_iw_as_wishart(&start).unwrap();
    let back = approx_wishart_as_iw(&there).unwrap();
    println!(
        "IW -> Wishart -> IW round trip: dof gap {:.2e}, scale gap {:.2e}",
        (back.dof() - start.dof()).abs(),
        (back.scale() - start.scale()).amax()
    );

    // Sampling sanity: the Wishart sample mean approaches w W.
    let w = Wishart::new(100.0, &eye / 100.0).unwrap();
    let n = 20_000;
    let mean = (0..n).fold(DMatrix::zeros(2, 2), |acc, _| acc + w.sample(&mut rng)) / n as f64;
    println!(
        "Wishart(100, I/100) sample mean over {n} draws:\n{mean:.4}"
    );
}

fn random_spd(rng: &mut ChaCha12Rng) -> DMatrix<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    &g * g.transpose() + DMatrix::identity(2, 2) * 0.5
}
