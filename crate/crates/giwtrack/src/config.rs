//! Scenario configuration: the benchmark protocol knobs, a flat key-value
//! file format, and the named presets for the four stock scenarios
//! (CV/CT truth at detection probability 0.25 / 0.75).
//!
//! File format: one `key = value` pair per line, `#` starts a comment,
//! blank lines are ignored. Every key is optional and overrides the
//! defaults below; unknown keys are rejected with the offending line
//! number.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::TrackerKind;

/// Which dynamics generate the ground-truth tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthModel {
    Cv,
    Ct,
}

impl TruthModel {
    pub fn name(self) -> &'static str {
        match self {
            TruthModel::Cv => "cv",
            TruthModel::Ct => "ct",
        }
    }
}

impl std::fmt::Display for TruthModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full description of one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub truth_model: TruthModel,
    /// Sampling period `T` in seconds.
    pub sampling_period: f64,
    /// Number of scans `K`.
    pub steps: usize,
    /// Acceleration noise standard deviation.
    pub sigma_a: f64,
    /// Turn-rate noise standard deviation (CT truth only).
    pub sigma_omega: f64,
    /// Per-scan detection probability.
    pub detection_probability: f64,
    /// Number of detections per detected scan.
    pub measurements_per_detection: usize,
    /// Ellipse semi-axes of the true extent, major >= minor > 0.
    pub extent_semiaxis_major: f64,
    pub extent_semiaxis_minor: f64,
    /// Trackers to run.
    #[serde(serialize_with = "serialize_trackers")]
    pub trackers: Vec<TrackerKind>,
    /// Monte Carlo repetitions.
    pub runs: u32,
    /// Master seed; per-run streams are derived from it.
    pub seed: u64,
    /// Truth initialisation: speed along +x and (CT) initial turn rate.
    pub initial_speed: f64,
    pub initial_turn_rate: f64,
    /// Loose tracker prior: the prior mean is the true initial state
    /// corrupted by noise with these variances, which also form the prior
    /// covariance.
    pub prior_position_variance: f64,
    pub prior_velocity_variance: f64,
    pub prior_turn_rate_variance: f64,
    /// Prior extent density: dof and the scalar mean of the extent matrix
    /// (`V0 = (v0 - 2d - 2) * mean * I`).
    pub prior_extent_dof: f64,
    pub prior_extent_mean: f64,
}

fn serialize_trackers<S>(trackers: &[TrackerKind], s: S) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    s.collect_seq(trackers.iter().map(|t| t.name()))
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            truth_model: TruthModel::Cv,
            sampling_period: 1.0,
            steps: 50,
            sigma_a: 1.0,
            sigma_omega: std::f64::consts::PI / 180.0,
            detection_probability: 0.75,
            measurements_per_detection: 10,
            extent_semiaxis_major: 2.0,
            extent_semiaxis_minor: 1.0,
            trackers: TrackerKind::ALL.to_vec(),
            runs: 1000,
            seed: 1,
            initial_speed: 10.0,
            initial_turn_rate: 0.05,
            prior_position_variance: 100.0,
            prior_velocity_variance: 25.0,
            prior_turn_rate_variance: 0.01,
            prior_extent_dof: 10.0,
            prior_extent_mean: 4.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.sampling_period <= 0.0 {
            return err("sampling_period must be positive".into());
        }
        if self.steps < 2 {
            return err("steps must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.detection_probability) {
            return err("detection_probability must lie in [0, 1]".into());
        }
        if self.measurements_per_detection < 1 {
            return err("measurements_per_detection must be at least 1".into());
        }
        if !(self.extent_semiaxis_major >= self.extent_semiaxis_minor
            && self.extent_semiaxis_minor > 0.0)
        {
            return err("extent semi-axes must satisfy major >= minor > 0".into());
        }
        if self.trackers.is_empty() {
            return err("at least one tracker must be enabled".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for tracker in &self.trackers {
            if !seen.insert(tracker) {
                return err(format!("tracker '{tracker}' is listed more than once"));
            }
        }
        if self.runs < 1 {
            return err("runs must be at least 1".into());
        }
        if self.sigma_a < 0.0 || self.sigma_omega < 0.0 {
            return err("noise standard deviations must be nonnegative".into());
        }
        if self.prior_extent_dof <= 6.0 {
            return err("prior_extent_dof must exceed 2d + 2 = 6".into());
        }
        if self.prior_position_variance <= 0.0
            || self.prior_velocity_variance <= 0.0
            || self.prior_turn_rate_variance <= 0.0
            || self.prior_extent_mean <= 0.0
        {
            return err("prior variances and extent mean must be positive".into());
        }
        Ok(())
    }

    /// Known preset names.
    pub fn preset_names() -> &'static [&'static str] {
        &["cv_lowpd", "cv_highpd", "ct_lowpd", "ct_highpd"]
    }

    /// Stock scenario by name: CV or CT truth crossed with detection
    /// probability 0.25 (`lowpd`) or 0.75 (`highpd`); everything else at
    /// the defaults (T = 1 s, sigma_a = 1, sigma_omega = pi/180, 10
    /// measurements per detection).
    pub fn preset(name: &str) -> Result<Self> {
        let mut config = Self::default();
        match name {
            "cv_lowpd" => {
                config.truth_model = TruthModel::Cv;
                config.detection_probability = 0.25;
            }
            "cv_highpd" => {
                config.truth_model = TruthModel::Cv;
                config.detection_probability = 0.75;
            }
            "ct_lowpd" => {
                config.truth_model = TruthModel::Ct;
                config.detection_probability = 0.25;
            }
            "ct_highpd" => {
                config.truth_model = TruthModel::Ct;
                config.detection_probability = 0.75;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (available: {})",
                    Self::preset_names().join(", ")
                )))
            }
        }
        Ok(config)
    }

    /// Parses the flat key-value format, starting from the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected 'key = value', got '{raw}'"))
            })?;
            let key = key.trim();
            let value = value.trim();
            config.apply(key, value).map_err(|e| {
                Error::Config(format!("line {line_no}, field '{key}': {e}"))
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn float(value: &str) -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{value}' is not a number")))
        }
        fn int<T: std::str::FromStr>(value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("'{value}' is not a valid integer")))
        }
        match key {
            "truth_model" => {
                self.truth_model = match value.to_ascii_lowercase().as_str() {
                    "cv" => TruthModel::Cv,
                    "ct" => TruthModel::Ct,
                    other => {
                        return Err(Error::Config(format!(
                            "'{other}' is not a truth model (cv or ct)"
                        )))
                    }
                };
            }
            "sampling_period" => self.sampling_period = float(value)?,
            "steps" => self.steps = int(value)?,
            "sigma_a" => self.sigma_a = float(value)?,
            "sigma_omega" => self.sigma_omega = float(value)?,
            "detection_probability" => self.detection_probability = float(value)?,
            "measurements_per_detection" => self.measurements_per_detection = int(value)?,
            "extent_semiaxis_major" => self.extent_semiaxis_major = float(value)?,
            "extent_semiaxis_minor" => self.extent_semiaxis_minor = float(value)?,
            "trackers" => {
                self.trackers = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(TrackerKind::parse)
                    .collect::<Result<Vec<_>>>()?;
            }
            "runs" => self.runs = int(value)?,
            "seed" => self.seed = int(value)?,
            "initial_speed" => self.initial_speed = float(value)?,
            "initial_turn_rate" => self.initial_turn_rate = float(value)?,
            "prior_position_variance" => self.prior_position_variance = float(value)?,
            "prior_velocity_variance" => self.prior_velocity_variance = float(value)?,
            "prior_turn_rate_variance" => self.prior_turn_rate_variance = float(value)?,
            "prior_extent_dof" => self.prior_extent_dof = float(value)?,
            "prior_extent_mean" => self.prior_extent_mean = float(value)?,
            other => {
                return Err(Error::Config(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_cover_the_four_scenarios() {
        for name in ScenarioConfig::preset_names() {
            let c = ScenarioConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.measurements_per_detection, 10);
            assert_eq!(c.sampling_period, 1.0);
            assert_eq!(c.sigma_a, 1.0);
        }
        assert_eq!(
            ScenarioConfig::preset("cv_lowpd").unwrap().detection_probability,
            0.25
        );
        assert_eq!(
            ScenarioConfig::preset("ct_highpd").unwrap().truth_model,
            TruthModel::Ct
        );
        assert!(ScenarioConfig::preset("bogus").is_err());
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "\n# comment\ntruth_model = ct\nruns = 12 # trailing comment\nseed = 99\ntrackers = ccv,fct\n";
        let c = ScenarioConfig::parse_str(text).unwrap();
        assert_eq!(c.truth_model, TruthModel::Ct);
        assert_eq!(c.runs, 12);
        assert_eq!(c.seed, 99);
        assert_eq!(c.trackers, vec![TrackerKind::Ccv, TrackerKind::Fct]);
        assert_eq!(c.steps, 50);
    }

    #[test]
    fn reports_line_and_field_diagnostics() {
        let err = ScenarioConfig::parse_str("steps = fifty").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("steps"), "{msg}");

        let err = ScenarioConfig::parse_str("bogus_key = 3").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));

        let err = ScenarioConfig::parse_str("no equals sign here").unwrap_err();
        assert!(err.to_string().contains("key = value"));
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut c = ScenarioConfig::default();
        c.detection_probability = 1.5;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.extent_semiaxis_minor = 3.0; // larger than major
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.steps = 1;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.trackers.clear();
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.trackers = vec![TrackerKind::Ccv, TrackerKind::Ccv];
        assert!(c.validate().is_err());
    }
}
