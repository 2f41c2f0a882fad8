//! The comparative study in miniature: run the four stock scenarios and
//! print the median GWD of prediction, filtering and smoothing for each
//! tracker, averaged over the interior of the track.
//!
//! Run with `cargo run --release --example benchmark_study` (about two
//! seconds per scenario at 200 runs).

use giwtrack::config::ScenarioConfig;
use giwtrack::metrics::EstimateMode;
use giwtrack::models::TrackerKind;
use giwtrack::sim;

fn main() {
    let runs: u32 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);

    for preset in ScenarioConfig::preset_names() {
        let mut config = ScenarioConfig::preset(preset).unwrap();
        config.runs = runs;
        config.seed = 1;
        let table = sim::run_monte_carlo(&config).expect("run");
        let medians = table.medians().expect("medians");

        println!("== {preset} ({runs} runs, K = {}) ==", config.steps);
        println!("tracker   mode      mean median-GWD over steps 5..{}", config.steps - 5);
        for tracker in TrackerKind::ALL {
            for mode in EstimateMode::ALL {
                let values: Vec<f64> = medians
                    .iter()
                    .filter(|(t, k, m, _)| {
                        *t == tracker && *m == mode && (5..=config.steps - 5).contains(k)
                    })
                    .map(|(_, _, _, v)| *v)
                    .collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                println!("{tracker:8}  {mode:8}  {mean:10.4}");
            }
        }
        let flagged: u32 = table.divergences.values().sum();
        if flagged > 0 {
            println!("({flagged} runs excluded after divergence)");
        }
        println!();
    }
}
