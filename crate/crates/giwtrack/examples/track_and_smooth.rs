//! One constant-velocity scenario tracked by the conditional model: run the
//! forward filter, smooth backward, and print the per-step errors of the
//! predicted, filtered and smoothed estimates.
//!
//! Run with `cargo run --release --example track_and_smooth`.

use giwtrack::conditional::{self, ConditionalGiwState};
use giwtrack::config::ScenarioConfig;
use giwtrack::metrics::{self, expected_state_conditional};
use giwtrack::models;
use giwtrack::sim;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut config = ScenarioConfig::preset("cv_highpd").unwrap();
    config.steps = 30;
    let mut rng = ChaCha12Rng::seed_from_u64(42);

    let truth = sim::generate_truth(&config, &mut rng);
    let detections = sim::simulate_detections(&truth, &config, &mut rng);

    let (transition, measurement) = models::ccv_model(config.sampling_period, config.sigma_a).unwrap();

    // Loose prior around the corrupted true initial state.
    let truth0 = &truth.states[0].0;
    let prior_mean = DVector::from_fn(4, |i, _| {
        let sigma = if i < 2 { 10.0 } else { 5.0 };
        truth0[i] + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let prior = ConditionalGiwState::new(
        prior_mean,
        DMatrix::from_diagonal(&DVector::from_vec(vec![25.0, 6.25])),
        10.0,
        16.0 * DMatrix::identity(2, 2),
        2,
    )
    .unwrap();

    let mut predicted = vec![prior];
    let mut filtered: Vec<ConditionalGiwState> = Vec::new();
    for (k, z) in detections.iter().enumerate() {
        if k > 0 {
            predicted.push(conditional::predict(filtered.last().unwrap(), &transition).unwrap());
        }
        let pred = predicted.last().unwrap().clone();
        let post = if z.is_empty() {
            pred.clone() // missed detection: the prediction carries over
        } else {
            conditional::update(&pred, z, &measurement).unwrap()
        };
        filtered.push(post);
    }

    let (smoothed, diagnostics) =
        conditional::smooth_trajectory(&filtered, &predicted, &transition).unwrap();

    println!("k   |Z|   gwd(predict)   gwd(filter)   gwd(smooth)");
    let mut sums = [0.0f64; 3];
    for k in 0..config.steps {
        let score = |state: &ConditionalGiwState| {
            let est = expected_state_conditional(state).unwrap();
            metrics::gwd(
                &truth.position(k),
                truth.extent(k),
                &est.position(),
                &est.extent,
            )
            .unwrap()
        };
        let row = [score(&predicted[k]), score(&filtered[k]), score(&smoothed[k])];
        for (acc, x) in sums.iter_mut().zip(row) {
            *acc += x;
        }
        println!(
            "{k:2}  {:3}   {:12.4}   {:11.4}   {:11.4}",
            detections[k].len(),
            row[0],
            row[1],
            row[2]
        );
    }
    let n = config.steps as f64;
    println!(
        "mean over the track:  predict {:.3}  filter {:.3}  smooth {:.3}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n
    );
    println!(
        "extent smoothing fallbacks: {}, skips: {}",
        diagnostics.extent_fallbacks, diagnostics.extent_skips
    );
}
