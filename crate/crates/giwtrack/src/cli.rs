//! Command line front end: config ingestion, experiment execution, CSV and
//! manifest emission, and the self-test entry point.
//!
//! Outputs of a simulation run (all under the chosen output directory):
//!
//! * `gwd.csv` - `run,tracker,k,mode,gwd`, one row per scored estimate;
//! * `summary.csv` - `tracker,k,mode,median_gwd`, the per-step medians;
//! * `manifest.json` - config echo, seed, tool version, divergence and
//!   smoothing-fallback counters, row count, wall-clock duration.
//!
//! The CSV files are bit-reproducible for a fixed config and seed (floats
//! are written with 17 significant digits; rows are sorted before writing);
//! the manifest carries the wall clock and is not.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::metrics::GwdSample;
use crate::models::TrackerKind;
use crate::selftest::{self, SelftestLevel};
use crate::sim::{self, ResultTable};

/// Exit codes used by the binary.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const BAD_CONFIG: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

/// Fraction of diverged runs (for any tracker) above which a simulation is
/// reported as failed.
pub const DIVERGENCE_BUDGET: f64 = 0.10;

/// Command line overrides applied on top of the loaded config.
#[derive(Debug, Clone, Default)]
pub struct SimulateOverrides {
    pub runs: Option<u32>,
    pub seed: Option<u64>,
    pub trackers: Option<Vec<TrackerKind>>,
}

/// Loads a scenario config from a preset name or a key-value file path.
pub fn load_config(source: &str) -> Result<ScenarioConfig> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return ScenarioConfig::parse_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    }
    if ScenarioConfig::preset_names().contains(&source) {
        return ScenarioConfig::preset(source);
    }
    Err(Error::Config(format!(
        "'{source}' is neither a readable file nor a preset (presets: {})",
        ScenarioConfig::preset_names().join(", ")
    )))
}

/// 17-significant-digit float formatting; round-trips f64 exactly.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_gwd_csv(path: &Path, samples: &[GwdSample]) -> Result<()> {
    let mut out = String::with_capacity(samples.len() * 48 + 32);
    out.push_str("run,tracker,k,mode,gwd\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.run,
            s.tracker,
            s.step,
            s.mode,
            fmt_float(s.gwd)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_summary_csv(
    path: &Path,
    medians: &[(TrackerKind, usize, crate::metrics::EstimateMode, f64)],
) -> Result<()> {
    let mut out = String::with_capacity(medians.len() * 40 + 32);
    out.push_str("tracker,k,mode,median_gwd\n");
    for (tracker, step, mode, value) in medians {
        out.push_str(&format!(
            "{tracker},{step},{mode},{}\n",
            fmt_float(*value)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Everything a finished simulation reports back.
#[derive(Debug)]
pub struct SimulateReport {
    pub table: ResultTable,
    pub rows_written: usize,
    pub divergence_budget_exceeded: bool,
}

/// Runs the experiment described by `source` (preset name or config path)
/// and writes `gwd.csv`, `summary.csv` and `manifest.json` into `out_dir`.
pub fn simulate(
    source: &str,
    out_dir: &Path,
    overrides: &SimulateOverrides,
) -> Result<SimulateReport> {
    let started = Instant::now();
    let mut config = load_config(source)?;
    if let Some(runs) = overrides.runs {
        config.runs = runs;
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(trackers) = &overrides.trackers {
        config.trackers = trackers.clone();
    }
    config.validate()?;

    std::fs::create_dir_all(out_dir)?;
    let table = sim::run_monte_carlo(&config)?;
    let medians = table.medians()?;

    write_gwd_csv(&out_dir.join("gwd.csv"), &table.samples)?;
    write_summary_csv(&out_dir.join("summary.csv"), &medians)?;

    let worst_divergence = table
        .divergences
        .values()
        .map(|&n| n as f64 / config.runs as f64)
        .fold(0.0, f64::max);
    let divergence_budget_exceeded = worst_divergence > DIVERGENCE_BUDGET;

    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_source": source,
        "config": config,
        "seed": config.seed,
        "runs": config.runs,
        "rows_written": table.samples.len(),
        "divergences": table
            .divergences
            .iter()
            .map(|(k, v)| (k.name().to_string(), *v))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "smoothing_extent_fallbacks": table
            .smoothing
            .iter()
            .map(|(k, v)| (k.name().to_string(), v.extent_fallbacks))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "smoothing_extent_skips": table
            .smoothing
            .iter()
            .map(|(k, v)| (k.name().to_string(), v.extent_skips))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "divergence_budget_exceeded": divergence_budget_exceeded,
        "duration_seconds": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("serializable") + "\n",
    )?;

    Ok(SimulateReport {
        rows_written: table.samples.len(),
        table,
        divergence_budget_exceeded,
    })
}

/// CLI wrapper around [`simulate`]; prints diagnostics and maps the result
/// to an exit code.
pub fn cmd_simulate(source: &str, out_dir: &Path, overrides: &SimulateOverrides) -> i32 {
    match simulate(source, out_dir, overrides) {
        Ok(report) => {
            println!(
                "wrote {} rows to {} ({} runs, divergences: {})",
                report.rows_written,
                out_dir.display(),
                report.table.runs,
                report
                    .table
                    .divergences
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            if report.divergence_budget_exceeded {
                eprintln!(
                    "error: more than {:.0}% of runs diverged for at least one tracker",
                    DIVERGENCE_BUDGET * 100.0
                );
                exit_code::DIVERGENCE
            } else {
                exit_code::OK
            }
        }
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            exit_code::BAD_CONFIG
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code::FAILURE
        }
    }
}

/// Runs the self-test battery and prints one pass/fail line per check.
pub fn cmd_selftest(level: SelftestLevel) -> i32 {
    let outcomes = selftest::run(level);
    let mut all_passed = true;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for o in &outcomes {
        all_passed &= o.passed;
        let _ = writeln!(
            out,
            "[{}] {:<38} {:>7.2}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        );
    }
    let _ = writeln!(
        out,
        "{}/{} checks passed",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.len()
    );
    if all_passed {
        exit_code::OK
    } else {
        exit_code::FAILURE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EstimateMode;

    fn overrides(runs: u32, seed: u64) -> SimulateOverrides {
        SimulateOverrides {
            runs: Some(runs),
            seed: Some(seed),
            trackers: None,
        }
    }

    #[test]
    fn float_formatting_has_17_significant_digits() {
        let s = fmt_float(2.5);
        assert_eq!(s, "2.5000000000000000e0");
        let x = 0.1234567890123456789;
        assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn load_config_prefers_files_then_presets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.conf");
        std::fs::write(&path, "runs = 5\nseed = 3\n").unwrap();
        let c = load_config(path.to_str().unwrap()).unwrap();
        assert_eq!(c.runs, 5);

        let p = load_config("cv_lowpd").unwrap();
        assert_eq!(p.detection_probability, 0.25);

        assert!(matches!(load_config("no_such_thing"), Err(Error::Config(_))));
    }

    #[test]
    fn simulate_writes_reproducible_outputs() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut small = ScenarioConfig::default();
        small.steps = 10;
        let text = "steps = 10\nruns = 4\nseed = 7\n";
        let cfg_path = dir_a.path().join("cfg");
        std::fs::write(&cfg_path, text).unwrap();
        let src = cfg_path.to_str().unwrap();

        let report_a = simulate(src, dir_a.path(), &SimulateOverrides::default()).unwrap();
        let report_b = simulate(src, dir_b.path(), &SimulateOverrides::default()).unwrap();
        assert!(!report_a.divergence_budget_exceeded);
        assert_eq!(report_a.rows_written, report_b.rows_written);

        let gwd_a = std::fs::read(dir_a.path().join("gwd.csv")).unwrap();
        let gwd_b = std::fs::read(dir_b.path().join("gwd.csv")).unwrap();
        assert_eq!(gwd_a, gwd_b);
        let sum_a = std::fs::read(dir_a.path().join("summary.csv")).unwrap();
        let sum_b = std::fs::read(dir_b.path().join("summary.csv")).unwrap();
        assert_eq!(sum_a, sum_b);
        assert!(dir_a.path().join("manifest.json").is_file());
        let _ = small;
    }

    #[test]
    fn gwd_csv_row_count_matches_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        let report = simulate(
            "cv_highpd",
            dir.path(),
            &SimulateOverrides {
                runs: Some(2),
                seed: Some(11),
                trackers: Some(vec![TrackerKind::Ccv, TrackerKind::Fcv]),
            },
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("gwd.csv")).unwrap();
        let body_rows = text.lines().count() - 1;
        assert_eq!(body_rows, report.rows_written);
        let flagged: u32 = report.table.divergences.values().sum();
        assert_eq!(body_rows, 2 * 2 * 50 * 3 - flagged as usize * 50 * 3);
        assert!(text.starts_with("run,tracker,k,mode,gwd\n"));
    }

    #[test]
    fn summary_medians_match_independent_recomputation_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        simulate("cv_highpd", dir.path(), &overrides(3, 5)).unwrap();
        let gwd = std::fs::read_to_string(dir.path().join("gwd.csv")).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();

        // Recompute the medians straight from the per-run CSV.
        let mut buckets: std::collections::BTreeMap<(String, usize, String), Vec<f64>> =
            std::collections::BTreeMap::new();
        for line in gwd.lines().skip(1) {
            let parts: Vec<_> = line.split(',').collect();
            buckets
                .entry((
                    parts[1].to_string(),
                    parts[2].parse().unwrap(),
                    parts[3].to_string(),
                ))
                .or_default()
                .push(parts[4].parse().unwrap());
        }
        let mut expected = std::collections::BTreeMap::new();
        for (key, mut values) in buckets {
            values.sort_by(|a, b| a.total_cmp(b));
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
            expected.insert(key, median);
        }
        for line in summary.lines().skip(1) {
            let parts: Vec<_> = line.split(',').collect();
            let key = (
                parts[0].to_string(),
                parts[1].parse().unwrap(),
                parts[2].to_string(),
            );
            let got: f64 = parts[3].parse().unwrap();
            let want = expected.remove(&key).expect("summary key present in gwd.csv");
            assert_eq!(got, want, "median mismatch for {key:?}");
        }
        assert!(expected.is_empty(), "summary is missing keys: {expected:?}");
    }

    #[test]
    fn mode_ordering_holds_in_medians_of_a_small_run() {
        // A smoke test of the qualitative ordering; the acceptance suite
        // runs the full-scale version.
        let dir = tempfile::tempdir().unwrap();
        let report = simulate("cv_highpd", dir.path(), &overrides(40, 123)).unwrap();
        let medians = report.table.medians().unwrap();
        let fetch = |mode: EstimateMode, step: usize| -> f64 {
            medians
                .iter()
                .find(|(t, s, m, _)| *t == TrackerKind::Ccv && *s == step && *m == mode)
                .unwrap()
                .3
        };
        let mut smooth_not_worse = 0;
        let steps = 5..45;
        for k in steps.clone() {
            if fetch(EstimateMode::Smooth, k) <= fetch(EstimateMode::Filter, k) + 1e-12 {
                smooth_not_worse += 1;
            }
        }
        assert!(
            smooth_not_worse * 10 >= steps.len() * 8,
            "smoothing only improved {smooth_not_worse}/{} interior steps",
            steps.len()
        );
    }
}
