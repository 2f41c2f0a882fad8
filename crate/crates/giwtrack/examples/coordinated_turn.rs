//! A turning object tracked by the factorized coordinated-turn model: the
//! extent rotates with the estimated turn rate and the smoother sharpens
//! both the track and the turn-rate estimate.
//!
//! Run with `cargo run --release --example coordinated_turn`.

use giwtrack::config::ScenarioConfig;
use giwtrack::factorized::{self, FactorizedGiwState};
use giwtrack::metrics::{self, expected_state_factorized};
use giwtrack::models;
use giwtrack::sim;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut config = ScenarioConfig::preset("ct_highpd").unwrap();
    config.steps = 40;
    config.initial_turn_rate = 0.08;
    let mut rng = ChaCha12Rng::seed_from_u64(4);

    let truth = sim::generate_truth(&config, &mut rng);
    let detections = sim::simulate_detections(&truth, &config, &mut rng);

    let (transition, measurement) =
        models::fct_model(config.sampling_period, config.sigma_a, config.sigma_omega).unwrap();

    let truth0 = &truth.states[0].0;
    let sigmas = [10.0, 10.0, 5.0, 5.0, 0.1];
    let prior_mean = DVector::from_fn(5, |i, _| {
        truth0[i] + sigmas[i] * rng.sample::<f64, _>(StandardNormal)
    });
    let prior = FactorizedGiwState::new(
        prior_mean,
        DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0, 25.0, 25.0, 0.01])),
        10.0,
        16.0 * DMatrix::identity(2, 2),
        2,
    )
    .unwrap();

    let mut predicted = vec![prior];
    let mut filtered: Vec<FactorizedGiwState> = Vec::new();
    for (k, z) in detections.iter().enumerate() {
        if k > 0 {
            predicted.push(factorized::predict(filtered.last().unwrap(), &transition).unwrap());
        }
        let pred = predicted.last().unwrap().clone();
        let post = if z.is_empty() {
            pred.clone()
        } else {
            factorized::update(&pred, z, &measurement).unwrap()
        };
        filtered.push(post);
    }
    let (smoothed, _) = factorized::smooth_trajectory(&filtered, &predicted, &transition).unwrap();

    println!("k   true w   filt w   smooth w   gwd(filter)   gwd(smooth)");
    for k in 0..config.steps {
        let score = |state: &FactorizedGiwState| {
            let est = expected_state_factorized(state).unwrap();
            metrics::gwd(
                &truth.position(k),
                truth.extent(k),
                &est.position(),
                &est.extent,
            )
            .unwrap()
        };
        println!(
            "{k:2}  {:7.4}  {:7.4}   {:8.4}   {:11.4}   {:11.4}",
            truth.states[k].0[4],
            filtered[k].mean()[4],
            smoothed[k].mean()[4],
            score(&filtered[k]),
            score(&smoothed[k]),
        );
    }

    let rmse = |states: &[FactorizedGiwState]| {
        (states
            .iter()
            .enumerate()
            .map(|(k, s)| (s.mean()[4] - truth.states[k].0[4]).powi(2))
            .sum::<f64>()
            / config.steps as f64)
            .sqrt()
    };
    println!(
        "turn-rate rmse:  filtered {:.5}  smoothed {:.5}",
        rmse(&filtered),
        rmse(&smoothed)
    );
}
