//! Ground-truth generation, the detection process, and the Monte Carlo
//! experiment runner.
//!
//! Truth tracks start at the origin moving along +x and evolve under the
//! constant-velocity or coordinated-turn dynamics; the true extent ellipse
//! keeps its major axis aligned with the velocity vector. Each scan is a
//! Bernoulli detection trial; a detected scan yields a fixed number of
//! measurements drawn from a Gaussian centred at the true position with the
//! true extent as covariance.
//!
//! Reproducibility: every run uses an independent ChaCha stream derived
//! from the master seed (`seed_from_u64(seed)` plus `set_stream(run)`), and
//! draws happen in a fixed order (truth, detections, prior corruption), so
//! results are identical no matter how runs are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::BTreeMap;

use crate::conditional::{self, ConditionalGiwState};
use crate::config::{ScenarioConfig, TruthModel};
use crate::error::{Error, Result};
use crate::factorized::{self, FactorizedGiwState};
use crate::linalg;
use crate::metrics::{self, EstimateMode, GwdSample};
use crate::models::{self, TrackerKind};

/// Speed below which the extent keeps its previous orientation instead of
/// following the velocity heading.
const HEADING_SPEED_FLOOR: f64 = 1e-9;

/// True object trajectory: kinematic vector and extent matrix per scan.
#[derive(Debug, Clone)]
pub struct GroundTruthTrack {
    /// `(kinematics, extent)` per step; kinematics are `[px, py, vx, vy]`
    /// for CV truth and `[px, py, vx, vy, w]` for CT truth.
    pub states: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl GroundTruthTrack {
    pub fn position(&self, step: usize) -> DVector<f64> {
        let (x, _) = &self.states[step];
        DVector::from_vec(vec![x[0], x[1]])
    }

    pub fn extent(&self, step: usize) -> &DMatrix<f64> {
        &self.states[step].1
    }
}

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn aligned_extent(theta: f64, config: &ScenarioConfig) -> DMatrix<f64> {
    let r = rotation(theta);
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![
        config.extent_semiaxis_major * config.extent_semiaxis_major,
        config.extent_semiaxis_minor * config.extent_semiaxis_minor,
    ]));
    linalg::symmetrize(&(&r * diag * r.transpose()))
}

fn gaussian_noise<R: Rng + ?Sized>(cov_root: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(cov_root.ncols(), |_, _| rng.sample(StandardNormal));
    cov_root * z
}

/// Simulates one true track under the configured dynamics, with the extent
/// major axis following the velocity heading.
pub fn generate_truth<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> GroundTruthTrack {
    let t = config.sampling_period;
    let mut states = Vec::with_capacity(config.steps);
    let mut heading = 0.0f64;

    match config.truth_model {
        TruthModel::Cv => {
            let transition = models::cv_transition_matrix(t);
            let noise_root = linalg::spd_sqrt(&models::cv_noise_matrix(t, config.sigma_a));
            let mut x = DVector::from_vec(vec![0.0, 0.0, config.initial_speed, 0.0]);
            for _ in 0..config.steps {
                let speed = (x[2] * x[2] + x[3] * x[3]).sqrt();
                if speed > HEADING_SPEED_FLOOR {
                    heading = x[3].atan2(x[2]);
                }
                states.push((x.clone(), aligned_extent(heading, config)));
                x = &transition * &x + gaussian_noise(&noise_root, rng);
            }
        }
        TruthModel::Ct => {
            let noise_root = linalg::spd_sqrt(&models::ct_noise_matrix(
                t,
                config.sigma_a,
                config.sigma_omega,
            ));
            let mut x = DVector::from_vec(vec![
                0.0,
                0.0,
                config.initial_speed,
                0.0,
                config.initial_turn_rate,
            ]);
            for _ in 0..config.steps {
                let speed = (x[2] * x[2] + x[3] * x[3]).sqrt();
                if speed > HEADING_SPEED_FLOOR {
                    heading = x[3].atan2(x[2]);
                }
                states.push((x.clone(), aligned_extent(heading, config)));
                x = models::ct_transition_matrix(t, x[4]) * &x + gaussian_noise(&noise_root, rng);
            }
        }
    }
    GroundTruthTrack { states }
}

/// Simulates the detection process: a Bernoulli trial per scan, and on
/// success a fixed number of draws from `N(position, extent)`.
pub fn simulate_detections<R: Rng + ?Sized>(
    track: &GroundTruthTrack,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Vec<Vec<DVector<f64>>> {
    track
        .states
        .iter()
        .map(|(x, extent)| {
            if !rng.random_bool(config.detection_probability) {
                return Vec::new();
            }
            let position = DVector::from_vec(vec![x[0], x[1]]);
            let root = linalg::spd_sqrt(extent);
            (0..config.measurements_per_detection)
                .map(|_| &position + gaussian_noise(&root, rng))
                .collect()
        })
        .collect()
}

/// Result of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Scored estimates, sorted by (run, tracker, step, mode). Flagged
    /// (run, tracker) pairs contribute no rows.
    pub samples: Vec<GwdSample>,
    /// Runs excluded per tracker because the state left the valid domain.
    pub divergences: BTreeMap<TrackerKind, u32>,
    pub runs: u32,
    /// Smoothing bookkeeping accumulated over all runs.
    pub smoothing: BTreeMap<TrackerKind, conditional::SmoothingDiagnostics>,
}

impl ResultTable {
    /// `(tracker, step, mode) -> median GWD` rows.
    pub fn medians(&self) -> Result<Vec<(TrackerKind, usize, EstimateMode, f64)>> {
        metrics::aggregate_median(&self.samples)
    }
}

enum TrackerPipeline {
    Conditional {
        transition: conditional::ConditionalTransitionModel,
        measurement: conditional::ConditionalMeasurementModel,
        predicted: Vec<ConditionalGiwState>,
        filtered: Vec<ConditionalGiwState>,
    },
    Factorized {
        transition: factorized::FactorizedTransitionModel,
        measurement: factorized::FactorizedMeasurementModel,
        predicted: Vec<FactorizedGiwState>,
        filtered: Vec<FactorizedGiwState>,
    },
}

fn build_pipeline(
    kind: TrackerKind,
    config: &ScenarioConfig,
    prior_mean5: &DVector<f64>,
) -> Result<TrackerPipeline> {
    let t = config.sampling_period;
    let d = 2usize;
    let v0 = config.prior_extent_dof;
    let scale0 = (v0 - 2.0 * d as f64 - 2.0) * config.prior_extent_mean * DMatrix::identity(d, d);

    match kind {
        TrackerKind::Ccv => {
            let (transition, measurement) = models::ccv_model(t, config.sigma_a)?;
            // The implied kinematic covariance is P (x) X; dividing the
            // diagonal variances by the prior extent mean makes it match
            // the factorized prior.
            let p0 = DMatrix::from_diagonal(&DVector::from_vec(vec![
                config.prior_position_variance / config.prior_extent_mean,
                config.prior_velocity_variance / config.prior_extent_mean,
            ]));
            let mean = DVector::from_vec(vec![
                prior_mean5[0],
                prior_mean5[1],
                prior_mean5[2],
                prior_mean5[3],
            ]);
            let prior = ConditionalGiwState::new(mean, p0, v0, scale0, d)?;
            Ok(TrackerPipeline::Conditional {
                transition,
                measurement,
                predicted: vec![prior.clone()],
                filtered: Vec::new(),
            })
        }
        TrackerKind::Fcv | TrackerKind::Fct => {
            let (transition, measurement) = if kind == TrackerKind::Fcv {
                models::fcv_model(t, config.sigma_a)?
            } else {
                models::fct_model(t, config.sigma_a, config.sigma_omega)?
            };
            let mut variances = vec![
                config.prior_position_variance,
                config.prior_position_variance,
                config.prior_velocity_variance,
                config.prior_velocity_variance,
            ];
            let mut mean = vec![
                prior_mean5[0],
                prior_mean5[1],
                prior_mean5[2],
                prior_mean5[3],
            ];
            if kind == TrackerKind::Fct {
                variances.push(config.prior_turn_rate_variance);
                mean.push(prior_mean5[4]);
            }
            let p0 = DMatrix::from_diagonal(&DVector::from_vec(variances));
            let prior =
                FactorizedGiwState::new(DVector::from_vec(mean), p0, v0, scale0, d)?;
            Ok(TrackerPipeline::Factorized {
                transition,
                measurement,
                predicted: vec![prior.clone()],
                filtered: Vec::new(),
            })
        }
    }
}

struct StepEstimates {
    predict: metrics::ExtendedObjectEstimate,
    filter: metrics::ExtendedObjectEstimate,
}

impl TrackerPipeline {
    /// Advances one scan: predict (except at the first scan, where the
    /// prior is the prediction), then update; a missed detection keeps the
    /// predicted density as the posterior.
    fn step(&mut self, measurements: &[DVector<f64>]) -> Result<StepEstimates> {
        match self {
            TrackerPipeline::Conditional {
                transition,
                measurement,
                predicted,
                filtered,
            } => {
                if !filtered.is_empty() {
                    predicted.push(conditional::predict(
                        filtered.last().expect("nonempty"),
                        transition,
                    )?);
                }
                let pred = predicted.last().expect("prior present").clone();
                let post = if measurements.is_empty() {
                    pred.clone()
                } else {
                    conditional::update(&pred, measurements, measurement)?
                };
                if !post.is_finite() {
                    return Err(Error::InvalidParameter("non-finite state".into()));
                }
                let estimates = StepEstimates {
                    predict: metrics::expected_state_conditional(&pred)?,
                    filter: metrics::expected_state_conditional(&post)?,
                };
                filtered.push(post);
                Ok(estimates)
            }
            TrackerPipeline::Factorized {
                transition,
                measurement,
                predicted,
                filtered,
            } => {
                if !filtered.is_empty() {
                    predicted.push(factorized::predict(
                        filtered.last().expect("nonempty"),
                        transition,
                    )?);
                }
                let pred = predicted.last().expect("prior present").clone();
                let post = if measurements.is_empty() {
                    pred.clone()
                } else {
                    factorized::update(&pred, measurements, measurement)?
                };
                if !post.is_finite() {
                    return Err(Error::InvalidParameter("non-finite state".into()));
                }
                let estimates = StepEstimates {
                    predict: metrics::expected_state_factorized(&pred)?,
                    filter: metrics::expected_state_factorized(&post)?,
                };
                filtered.push(post);
                Ok(estimates)
            }
        }
    }

    fn smooth(
        &self,
    ) -> Result<(
        Vec<metrics::ExtendedObjectEstimate>,
        conditional::SmoothingDiagnostics,
    )> {
        match self {
            TrackerPipeline::Conditional {
                transition,
                predicted,
                filtered,
                ..
            } => {
                let (states, diag) =
                    conditional::smooth_trajectory(filtered, &predicted[..filtered.len()], transition)?;
                let estimates = states
                    .iter()
                    .map(metrics::expected_state_conditional)
                    .collect::<Result<Vec<_>>>()?;
                Ok((estimates, diag))
            }
            TrackerPipeline::Factorized {
                transition,
                predicted,
                filtered,
                ..
            } => {
                let (states, diag) =
                    factorized::smooth_trajectory(filtered, &predicted[..filtered.len()], transition)?;
                let estimates = states
                    .iter()
                    .map(metrics::expected_state_factorized)
                    .collect::<Result<Vec<_>>>()?;
                Ok((estimates, diag))
            }
        }
    }
}

struct RunOutput {
    samples: Vec<GwdSample>,
    diverged: Vec<TrackerKind>,
    smoothing: Vec<(TrackerKind, conditional::SmoothingDiagnostics)>,
}

fn single_run(config: &ScenarioConfig, run: u32) -> RunOutput {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(run as u64);

    // Fixed draw order: truth, detections, prior corruption.
    let truth = generate_truth(config, &mut rng);
    let detections = simulate_detections(&truth, config, &mut rng);
    let prior_sigmas = [
        config.prior_position_variance.sqrt(),
        config.prior_position_variance.sqrt(),
        config.prior_velocity_variance.sqrt(),
        config.prior_velocity_variance.sqrt(),
        config.prior_turn_rate_variance.sqrt(),
    ];
    let truth0 = &truth.states[0].0;
    let prior_mean5 = DVector::from_fn(5, |i, _| {
        let base = if i < truth0.len() { truth0[i] } else { 0.0 };
        base + prior_sigmas[i] * rng.sample::<f64, _>(StandardNormal)
    });

    let mut samples = Vec::new();
    let mut diverged = Vec::new();
    let mut smoothing = Vec::new();

    for &kind in &config.trackers {
        let run_tracker = (|| -> Result<Vec<GwdSample>> {
            let mut pipeline = build_pipeline(kind, config, &prior_mean5)?;
            let mut rows = Vec::with_capacity(config.steps * 3);
            for (step, z) in detections.iter().enumerate() {
                let est = pipeline.step(z)?;
                for (mode, e) in [
                    (EstimateMode::Predict, &est.predict),
                    (EstimateMode::Filter, &est.filter),
                ] {
                    rows.push(GwdSample {
                        run,
                        tracker: kind,
                        step,
                        mode,
                        gwd: metrics::gwd(
                            &truth.position(step),
                            truth.extent(step),
                            &e.position(),
                            &e.extent,
                        )?,
                    });
                }
            }
            let (smoothed, diag) = pipeline.smooth()?;
            for (step, e) in smoothed.iter().enumerate() {
                rows.push(GwdSample {
                    run,
                    tracker: kind,
                    step,
                    mode: EstimateMode::Smooth,
                    gwd: metrics::gwd(
                        &truth.position(step),
                        truth.extent(step),
                        &e.position(),
                        &e.extent,
                    )?,
                });
            }
            if rows.iter().any(|r| !r.gwd.is_finite()) {
                return Err(Error::InvalidParameter("non-finite score".into()));
            }
            smoothing.push((kind, diag));
            Ok(rows)
        })();
        match run_tracker {
            Ok(mut rows) => samples.append(&mut rows),
            Err(_) => diverged.push(kind),
        }
    }

    RunOutput {
        samples,
        diverged,
        smoothing,
    }
}

/// Runs the full Monte Carlo experiment, fanning runs out across threads.
///
/// Deterministic for a fixed config and seed: per-run RNG streams are
/// independent and the table is assembled in run order after collection.
pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<ResultTable> {
    config.validate()?;
    let outputs: Vec<RunOutput> = (0..config.runs)
        .into_par_iter()
        .map(|run| single_run(config, run))
        .collect();

    let mut samples = Vec::new();
    let mut divergences: BTreeMap<TrackerKind, u32> = BTreeMap::new();
    let mut smoothing: BTreeMap<TrackerKind, conditional::SmoothingDiagnostics> = BTreeMap::new();
    for kind in &config.trackers {
        divergences.insert(*kind, 0);
        smoothing.insert(*kind, conditional::SmoothingDiagnostics::default());
    }
    for out in outputs {
        samples.extend(out.samples);
        for kind in out.diverged {
            *divergences.entry(kind).or_insert(0) += 1;
        }
        for (kind, diag) in out.smoothing {
            let total = smoothing.entry(kind).or_default();
            total.extent_fallbacks += diag.extent_fallbacks;
            total.extent_skips += diag.extent_skips;
        }
    }
    let mode_rank = |m: EstimateMode| match m {
        EstimateMode::Predict => 0u8,
        EstimateMode::Filter => 1,
        EstimateMode::Smooth => 2,
    };
    samples.sort_by(|a, b| {
        (a.run, a.tracker, a.step, mode_rank(a.mode)).cmp(&(
            b.run,
            b.tracker,
            b.step,
            mode_rank(b.mode),
        ))
    });
    Ok(ResultTable {
        samples,
        divergences,
        runs: config.runs,
        smoothing,
    })
}
